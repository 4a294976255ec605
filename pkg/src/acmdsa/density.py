"""Density filter, SIMP interpolation, scaled design variables, symmetry."""
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sp

from . import kernels
from .errors import ParameterError


@dataclass(frozen=True)
class MaterialModel:
    E0: float = 1.0
    E_min: float = 1e-4
    p: float = 3.0

    def __post_init__(self):
        if not self.E0 > self.E_min > 0:
            raise ParameterError("need E0 > E_min > 0")
        if self.p < 1:
            raise ParameterError("penalization exponent must be >= 1")


@dataclass(frozen=True)
class FilterMatrix:
    H: sp.csr_matrix
    R: float


def build_filter(mesh, R):
    """Row-normalized linear-hat filter over active elements, radius R."""
    if R <= 0:
        raise ParameterError("filter radius must be positive")
    I, J, W = kernels.filter_triplets(mesh.grid_index, float(R) / mesh.h)
    H = sp.csr_matrix((W, (I, J)), shape=(mesh.n, mesh.n))
    H.sum_duplicates()
    return FilterMatrix(H, float(R))


def simp_modulus(xbar, mat):
    return mat.E_min + np.power(xbar, mat.p) * (mat.E0 - mat.E_min)


def chain_gradient(filt, g_xbar):
    """Gradient w.r.t. raw densities from one w.r.t. filtered densities."""
    H = filt.H if isinstance(filt, FilterMatrix) else filt
    return H.T @ g_xbar


def scaled_upper_bounds(H, v, V0, Vf):
    if not 0.0 < Vf < 1.0:
        raise ParameterError(f"volume fraction must lie in (0, 1), got {Vf}")
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ParameterError("element volumes must be positive")
    H = H.H if isinstance(H, FilterMatrix) else H
    return (H.T @ v) / (V0 * Vf)


def scale_variables(x, H, v, V0, Vf):
    """Return ``(x_tilde, v_tilde)`` with ``x_tilde = v_tilde * x``."""
    vt = scaled_upper_bounds(H, v, V0, Vf)
    return vt * np.asarray(x, dtype=float), vt


def back_scale(x_tilde, v_tilde):
    return np.asarray(x_tilde) / v_tilde


def scale_gradient(G, v_tilde):
    G = np.asarray(G)
    return G / (v_tilde if G.ndim == 1 else v_tilde[:, None])


class SymmetryMap:
    """Involutive element permutation; mirror about the vertical axis by default."""

    def __init__(self, mirror):
        mirror = np.asarray(mirror, dtype=np.int64)
        if not np.array_equal(mirror[mirror], np.arange(mirror.size)):
            raise ParameterError("symmetry map is not an involution")
        self.mirror = mirror

    @classmethod
    def identity(cls, n):
        return cls(np.arange(n))

    @classmethod
    def vertical_axis(cls, mesh):
        r, c = mesh.elem_row, mesh.elem_col
        partner = mesh.grid_index[r, mesh.nx - 1 - c]
        if np.any(partner < 0):
            raise ParameterError("active mask is not mirror-symmetric about the vertical axis")
        return cls(partner)


def symmetrize(field, smap):
    field = np.asarray(field)
    return 0.5 * (field + field[smap.mirror])


@dataclass(frozen=True)
class RadiusSchedule:
    """Staircase from R_start to R_end in ``n_decrements`` equal steps.

    The first decrement happens ``interval`` steps after ``start``.
    """
    R_start: float
    R_end: float
    start: int
    interval: int
    n_decrements: int = 6

    @property
    def final_step(self):
        return self.start + self.n_decrements * self.interval

    def __call__(self, k):
        return radius_schedule(k, self)


def radius_schedule(k, sched):
    if k < sched.start or sched.n_decrements == 0 or sched.R_start == sched.R_end:
        return sched.R_start
    done = min((k - sched.start) // sched.interval, sched.n_decrements)
    if done >= sched.n_decrements:
        return sched.R_end
    step = (sched.R_start - sched.R_end) / sched.n_decrements
    return sched.R_start - done * step


def constant_radius(R):
    return RadiusSchedule(R, R, 0, 1, 0)
