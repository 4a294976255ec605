"""Hot numeric kernels with a numba path and a pure-numpy path.

Every kernel exists twice, ``<name>_np`` and ``<name>_nb``; the unsuffixed
name is bound at import time according to :mod:`acmdsa._accel`. Both paths
return the same values up to floating-point summation order.
"""
import math

import numpy as np

from ._accel import USE_NUMBA, njit

EXP_CLIP = 700.0


# -- element strain energies ---------------------------------------------------

def element_energy_np(U, edofs, k0):
    """Per-element ``u_e^T k0 u_e`` for every column of ``U`` (ndof, m)."""
    Ue = U[edofs]  # (n, 8, m)
    return np.einsum("iam,ab,ibm->im", Ue, k0, Ue)


@njit
def element_energy_nb(U, edofs, k0):
    n = edofs.shape[0]
    m = U.shape[1]
    out = np.empty((n, m))
    ue = np.empty(8)
    for i in range(n):
        for s in range(m):
            for a in range(8):
                ue[a] = U[edofs[i, a], s]
            acc = 0.0
            for a in range(8):
                row = 0.0
                for b in range(8):
                    row += k0[a, b] * ue[b]
                acc += ue[a] * row
            out[i, s] = acc
    return out


# -- stiffness scatter into a fixed CSC pattern ------------------------------

def scatter_values_np(E, k0flat, ent_elem, ent_k, pos, nnz):
    return np.bincount(pos, weights=E[ent_elem] * k0flat[ent_k], minlength=nnz)


@njit
def scatter_values_nb(E, k0flat, ent_elem, ent_k, pos, nnz):
    data = np.zeros(nnz)
    for j in range(pos.shape[0]):
        data[pos[j]] += E[ent_elem[j]] * k0flat[ent_k[j]]
    return data


# -- hat-weight density filter on a structured grid --------------------------

def filter_triplets_np(grid_index, radius):
    """Row/col/weight triplets of the linear-hat filter, rows normalized.

    ``grid_index`` is (ny, nx) with the active element number or -1;
    ``radius`` is in element lengths.
    """
    ny, nx = grid_index.shape
    rows_g, cols_g = np.nonzero(grid_index >= 0)
    ids = grid_index[rows_g, cols_g]
    reach = int(math.ceil(radius))
    I, J, W = [], [], []
    for dr in range(-reach + 1, reach):
        for dc in range(-reach + 1, reach):
            d = math.sqrt(dr * dr + dc * dc)
            if d >= radius:
                continue
            r2 = rows_g + dr
            c2 = cols_g + dc
            ok = (r2 >= 0) & (r2 < ny) & (c2 >= 0) & (c2 < nx)
            nb = np.full(ids.shape, -1)
            nb[ok] = grid_index[r2[ok], c2[ok]]
            ok &= nb >= 0
            I.append(ids[ok])
            J.append(nb[ok])
            W.append(np.full(int(ok.sum()), radius - d))
    I = np.concatenate(I)
    J = np.concatenate(J)
    W = np.concatenate(W)
    rowsum = np.bincount(I, weights=W, minlength=ids.size)
    return I, J, W / rowsum[I]


@njit
def filter_triplets_nb(grid_index, radius):
    ny, nx = grid_index.shape
    reach = int(math.ceil(radius))
    n_active = 0
    for r in range(ny):
        for c in range(nx):
            if grid_index[r, c] >= 0:
                n_active += 1
    count = 0
    for r in range(ny):
        for c in range(nx):
            if grid_index[r, c] < 0:
                continue
            for dr in range(-reach + 1, reach):
                for dc in range(-reach + 1, reach):
                    r2 = r + dr
                    c2 = c + dc
                    if r2 < 0 or r2 >= ny or c2 < 0 or c2 >= nx:
                        continue
                    if grid_index[r2, c2] < 0:
                        continue
                    if math.sqrt(dr * dr + dc * dc) < radius:
                        count += 1
    I = np.empty(count, np.int64)
    J = np.empty(count, np.int64)
    W = np.empty(count)
    rowsum = np.zeros(n_active)
    k = 0
    for r in range(ny):
        for c in range(nx):
            i = grid_index[r, c]
            if i < 0:
                continue
            for dr in range(-reach + 1, reach):
                for dc in range(-reach + 1, reach):
                    r2 = r + dr
                    c2 = c + dc
                    if r2 < 0 or r2 >= ny or c2 < 0 or c2 >= nx:
                        continue
                    j = grid_index[r2, c2]
                    if j < 0:
                        continue
                    d = math.sqrt(dr * dr + dc * dc)
                    if d < radius:
                        I[k] = i
                        J[k] = j
                        W[k] = radius - d
                        rowsum[i] += radius - d
                        k += 1
    for q in range(count):
        W[q] /= rowsum[I[q]]
    return I, J, W


# -- clamped multiplicative candidate and its bisection ----------------------
#
# The candidate is parameterised by a log-shift t = -eta * lambda, so that
# z_i(t) = exp(a_i + t) with a_i = log(x_i) - eta * G_i.

def clamped_sum_np(a, t, lo, hi):
    z = np.exp(np.clip(a + t, -EXP_CLIP, EXP_CLIP))
    return np.minimum(np.maximum(z, lo), hi).sum()


@njit
def clamped_sum_nb(a, t, lo, hi):
    s = 0.0
    for i in range(a.shape[0]):
        e = a[i] + t
        if e > EXP_CLIP:
            e = EXP_CLIP
        elif e < -EXP_CLIP:
            e = -EXP_CLIP
        z = math.exp(e)
        if z < lo[i]:
            z = lo[i]
        if z > hi[i]:
            z = hi[i]
        s += z
    return s


def bisect_shift_np(a, lo, hi, t_lo, t_hi, tol, maxit):
    """Bisect ``t`` on [t_lo, t_hi] until the clamped sum is within tol of 1."""
    t = 0.5 * (t_lo + t_hi)
    it = 0
    while it < maxit:
        it += 1
        t = 0.5 * (t_lo + t_hi)
        s = clamped_sum_np(a, t, lo, hi)
        if abs(s - 1.0) <= tol:
            break
        if s > 1.0:
            t_hi = t
        else:
            t_lo = t
        if t_hi - t_lo <= 1e-15 * max(1.0, abs(t)):
            break
    return t, t_lo, t_hi, it


@njit
def bisect_shift_nb(a, lo, hi, t_lo, t_hi, tol, maxit):
    t = 0.5 * (t_lo + t_hi)
    it = 0
    while it < maxit:
        it += 1
        t = 0.5 * (t_lo + t_hi)
        s = clamped_sum_nb(a, t, lo, hi)
        if abs(s - 1.0) <= tol:
            break
        if s > 1.0:
            t_hi = t
        else:
            t_lo = t
        if t_hi - t_lo <= 1e-15 * max(1.0, abs(t)):
            break
    return t, t_lo, t_hi, it


# The bisection stays on numpy for both backends: its vectorized exp beats
# the scalar numba loop by about 3x (see benchmarks/bench_kernels.py).
clamped_sum = clamped_sum_np
bisect_shift = bisect_shift_np

if USE_NUMBA:
    element_energy = element_energy_nb
    scatter_values = scatter_values_nb
    filter_triplets = filter_triplets_nb
else:
    element_energy = element_energy_np
    scatter_values = scatter_values_np
    filter_triplets = filter_triplets_np
