"""Entropic mirror-descent step on {sum(x~) = 1, box bounds}.

The multiplicative candidate ``z(lambda) = x~ * exp(-eta * (G~ + lambda))``
is clamped to the move-limit box and ``lambda`` is found by bisection so
the clamped vector sums to one. Internally the bisection runs on the
log-shift ``t = -eta * lambda``.
"""
import logging
from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import kernels
from .density import back_scale
from .errors import ConstraintError, NumericalError, PreconditionError

log = logging.getLogger(__name__)

SUM_TOL = 1e-10
ZERO_FLOOR = 1e-12
MAX_DOUBLINGS = 200
MAX_BISECTIONS = 500


@dataclass
class ProxInput:
    x_tilde: np.ndarray
    G_tilde: np.ndarray
    eta: float
    move: float
    v_tilde: np.ndarray


@dataclass
class ProxOutput:
    x_tilde: np.ndarray
    lam: float
    iterations: int
    n_upper: int
    n_lower: int
    x: np.ndarray = None


def candidate(x_tilde, G_tilde, eta, lam, return_clipped=False):
    x_tilde = np.asarray(x_tilde, dtype=float)
    if np.any(x_tilde <= 0):
        raise PreconditionError("multiplicative candidate needs a strictly positive base point")
    arg = -eta * (np.asarray(G_tilde, dtype=float) + lam)
    clipped = int(np.count_nonzero(np.abs(arg) > kernels.EXP_CLIP))
    z = x_tilde * np.exp(np.clip(arg, -kernels.EXP_CLIP, kernels.EXP_CLIP))
    return (z, clipped) if return_clipped else z


def box_bounds(x_tilde, v_tilde, move):
    lo = np.maximum(x_tilde - v_tilde * move, 0.0)
    hi = np.minimum(x_tilde + v_tilde * move, v_tilde)
    return lo, hi


def clamp(z, x_tilde, v_tilde, move):
    lo, hi = box_bounds(x_tilde, v_tilde, move)
    return np.minimum(np.maximum(z, lo), hi)


def _exp(a, t):
    return np.exp(np.clip(a + t, -kernels.EXP_CLIP, kernels.EXP_CLIP))


def _polish(a, t, lo, hi):
    # With the active set fixed, the free components scale by one common
    # factor, which has a closed form. Keep it only if the set is unchanged.
    z = _exp(a, t)
    at_lo = z <= lo
    at_hi = z >= hi
    free = ~(at_lo | at_hi)
    if not free.any():
        return t
    rest = 1.0 - lo[at_lo].sum() - hi[at_hi].sum()
    if rest <= 0.0:
        return t
    t_star = np.log(rest) - logsumexp(a[free])
    z2 = _exp(a, t_star)
    if np.array_equal(z2 <= lo, at_lo) and np.array_equal(z2 >= hi, at_hi):
        return t_star
    return t


def _bracket(a, lo, hi):
    t0 = -logsumexp(a)
    width = 1.0
    t_lo, t_hi = t0 - width, t0 + width
    for _ in range(MAX_DOUBLINGS):
        s_lo = kernels.clamped_sum(a, t_lo, lo, hi)
        s_hi = kernels.clamped_sum(a, t_hi, lo, hi)
        if s_lo <= 1.0 <= s_hi:
            return t_lo, t_hi
        width *= 2.0
        if s_lo > 1.0:
            t_lo = t0 - width
        if s_hi < 1.0:
            t_hi = t0 + width
    raise NumericalError("could not bracket the volume multiplier")


def solve_multiplier(x_tilde, G_tilde, eta, v_tilde, move, tol=SUM_TOL):
    """Entropic prox step: returns the clamped minimizer and its multiplier."""
    x_tilde = np.asarray(x_tilde, dtype=float)
    G_tilde = np.asarray(G_tilde, dtype=float)
    v_tilde = np.asarray(v_tilde, dtype=float)
    if eta < 0:
        raise PreconditionError("step size must be non-negative")
    lo, hi = box_bounds(x_tilde, v_tilde, move)
    if lo.sum() > 1.0 + tol or hi.sum() < 1.0 - tol:
        raise ConstraintError(
            f"volume constraint not representable: sum(lower)={lo.sum():.12g}, sum(upper)={hi.sum():.12g}")
    if not np.all(np.isfinite(G_tilde)):
        raise NumericalError("non-finite gradient passed to the prox step")

    base = np.where(x_tilde > 0, x_tilde, ZERO_FLOOR * v_tilde)
    if eta == 0.0:
        x_new = np.minimum(np.maximum(base, lo), hi)
        return ProxOutput(x_new, 0.0, 0, 0, 0)

    if abs(hi.sum() - 1.0) <= tol:
        return ProxOutput(hi.copy(), float("inf"), 0, int(np.count_nonzero(hi > lo)), 0)
    if abs(lo.sum() - 1.0) <= tol:
        return ProxOutput(lo.copy(), float("-inf"), 0, 0, int(np.count_nonzero(hi > lo)))

    a = np.log(base) - eta * G_tilde
    t_lo, t_hi = _bracket(a, lo, hi)
    t, _, _, iters = kernels.bisect_shift(a, lo, hi, t_lo, t_hi, tol, MAX_BISECTIONS)
    t = _polish(a, t, lo, hi)
    z = _exp(a, t)
    x_new = np.minimum(np.maximum(z, lo), hi)
    err = abs(x_new.sum() - 1.0)
    if err > tol:
        raise NumericalError(f"bisection ended with |sum - 1| = {err:.3e}")
    lam = -t / eta
    if lam < 0:
        log.debug("volume multiplier %.3e < 0: constraint would be inactive", lam)
    return ProxOutput(x_new, float(lam), int(iters),
                      int(np.count_nonzero(z >= hi)), int(np.count_nonzero(z <= lo)))


def mdsa_step(inp):
    out = solve_multiplier(inp.x_tilde, inp.G_tilde, inp.eta, inp.v_tilde, inp.move)
    out.x = back_scale(out.x_tilde, inp.v_tilde)
    return out


def kl_project(x_tilde, v_tilde, tol=SUM_TOL):
    """Entropy projection of a positive vector onto {sum = 1, 0 <= x~ <= v~}."""
    x_tilde = np.asarray(x_tilde, dtype=float)
    base = np.where(x_tilde > 0, x_tilde, ZERO_FLOOR * v_tilde)
    lo = np.zeros_like(base)
    if v_tilde.sum() < 1.0 - tol:
        raise ConstraintError("upper bounds cannot hold unit volume")
    a = np.log(base)
    t_lo, t_hi = _bracket(a, lo, v_tilde)
    t, _, _, _ = kernels.bisect_shift(a, lo, v_tilde, t_lo, t_hi, tol, MAX_BISECTIONS)
    t = _polish(a, t, lo, v_tilde)
    return np.minimum(_exp(a, t), v_tilde)
