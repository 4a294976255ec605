"""Independent reference implementations used by the tests.

Nothing here imports the package's numerical code; each routine rebuilds
its answer the slow, obvious way.
"""
import math
from functools import lru_cache

import numpy as np


@lru_cache(maxsize=None)
def symbolic_k0(nu_num=3, nu_den=10, h=1):
    """Exact bilinear-quad plane-stress stiffness by symbolic integration."""
    import sympy as sym

    xi, eta = sym.symbols("xi eta")
    nu = sym.Rational(nu_num, nu_den)
    D = sym.Matrix([[1, nu, 0], [nu, 1, 0], [0, 0, (1 - nu) / 2]]) / (1 - nu ** 2)
    # corners CCW from lower-left
    corners = [(-1, -1), (1, -1), (1, 1), (-1, 1)]
    N = [sym.Rational(1, 4) * (1 + a * xi) * (1 + b * eta) for a, b in corners]
    s = sym.Rational(2, 1) / h
    B = sym.zeros(3, 8)
    for i, Ni in enumerate(N):
        B[0, 2 * i] = sym.diff(Ni, xi) * s
        B[1, 2 * i + 1] = sym.diff(Ni, eta) * s
        B[2, 2 * i] = sym.diff(Ni, eta) * s
        B[2, 2 * i + 1] = sym.diff(Ni, xi) * s
    integrand = B.T * D * B * (sym.Rational(h, 2) ** 2)
    k = integrand.applyfunc(lambda e: sym.integrate(e, (xi, -1, 1), (eta, -1, 1)))
    return np.array(k.evalf(30).tolist(), dtype=float)


def top88_ke(nu=0.3):
    """Closed-form unit-modulus element matrix in the 88-line code's node order."""
    k = np.array([1 / 2 - nu / 6, 1 / 8 + nu / 8, -1 / 4 - nu / 12, -1 / 8 + 3 * nu / 8,
                  -1 / 4 + nu / 12, -1 / 8 - nu / 8, nu / 6, 1 / 8 - 3 * nu / 8])
    idx = [[0, 1, 2, 3, 4, 5, 6, 7], [1, 0, 7, 6, 5, 4, 3, 2], [2, 7, 0, 5, 6, 3, 4, 1],
           [3, 6, 5, 0, 7, 2, 1, 4], [4, 5, 6, 7, 0, 1, 2, 3], [5, 4, 3, 2, 1, 0, 7, 6],
           [6, 3, 4, 1, 2, 7, 0, 5], [7, 2, 1, 4, 3, 6, 5, 0]]
    return k[np.array(idx)] / (1 - nu ** 2)


def dense_assembly(nx, ny, E, k0, active=None):
    """Loop-over-elements dense global stiffness, node id r*(nx+1)+c."""
    ndof = 2 * (nx + 1) * (ny + 1)
    K = np.zeros((ndof, ndof))
    e = 0
    for r in range(ny):
        for c in range(nx):
            if active is not None and not active[r, c]:
                continue
            w = nx + 1
            nodes = [(r + 1) * w + c, (r + 1) * w + c + 1, r * w + c + 1, r * w + c]
            dofs = [d for nd in nodes for d in (2 * nd, 2 * nd + 1)]
            for a in range(8):
                for b in range(8):
                    K[dofs[a], dofs[b]] += E[e] * k0[a, b]
            e += 1
    return K


def dense_solve(K, f, fixed):
    free = np.setdiff1d(np.arange(K.shape[0]), fixed)
    # drop DOFs that no element touches
    free = free[np.abs(np.diag(K)[free]) > 0]
    u = np.zeros(K.shape[0])
    u[free] = np.linalg.solve(K[np.ix_(free, free)], f[free])
    return u


def dense_filter(nx, ny, R, h=1.0, active=None):
    """Hat-weight filter by brute force over all element pairs."""
    cells = [(r, c) for r in range(ny) for c in range(nx) if active is None or active[r, c]]
    n = len(cells)
    H = np.zeros((n, n))
    for i, (ri, ci) in enumerate(cells):
        for j, (rj, cj) in enumerate(cells):
            d = h * math.hypot(ri - rj, ci - cj)
            H[i, j] = max(0.0, R - d)
    return H / H.sum(axis=1, keepdims=True)


def grid_scan_prox(x_tilde, G_tilde, eta, v_tilde, move, n_grid=1_000_000):
    """Multiplier by scanning a dense lambda grid, then monotone interpolation.

    The clamped sum is non-increasing in lambda, so the crossing of 1 is
    located on the grid and refined by linear interpolation between the two
    bracketing grid points.
    """
    x = np.asarray(x_tilde, float)
    G = np.asarray(G_tilde, float)
    lo = np.maximum(x - v_tilde * move, 0.0)
    hi = np.minimum(x + v_tilde * move, v_tilde)

    def total(lam):
        z = x * np.exp(np.clip(-eta * (G + lam), -700, 700))
        return np.minimum(np.maximum(z, lo), hi).sum()

    # coarse doubling to find a finite window, then the dense grid
    a, b = -1.0, 1.0
    while total(a) < 1.0:
        a *= 2.0
    while total(b) > 1.0:
        b *= 2.0
    for _ in range(3):
        grid = np.linspace(a, b, n_grid // 3 + 1)
        z = x[None, :] * np.exp(np.clip(-eta * (G[None, :] + grid[:, None]), -700, 700))
        s = np.minimum(np.maximum(z, lo), hi).sum(axis=1)
        i = int(np.searchsorted(-s, -1.0))  # first index with s <= 1
        i = min(max(i, 1), grid.size - 1)
        a, b = grid[i - 1], grid[i]
    sa, sb = total(a), total(b)
    lam = a if sa == sb else a + (sa - 1.0) * (b - a) / (sa - sb)
    z = x * np.exp(-eta * (G + lam))
    return np.minimum(np.maximum(z, lo), hi), lam


def exponentiated_gradient(x_tilde, G_tilde, eta):
    """Unclamped entropic step: normalize x * exp(-eta * G)."""
    z = np.asarray(x_tilde) * np.exp(-eta * np.asarray(G_tilde))
    return z / z.sum()


def weighted_average(iterates):
    """sum_t t * x_{t+1} / sum_t t over t = 1..k, iterates = [x_2, ..., x_{k+1}]."""
    k = len(iterates)
    w = np.arange(1, k + 1, dtype=float)
    return (w[:, None] * np.asarray(iterates)).sum(axis=0) / w.sum()


def calibration_bounds(samples):
    """Sample bounds rebuilt with explicit loops."""
    N = len(samples)
    M2 = 0.0
    for g in samples:
        M2 += max(abs(v) for v in g) ** 2
    Q = [sum(g[i] for g in samples) / N for i in range(len(samples[0]))]
    S2 = 0.0
    for g in samples:
        S2 += max(abs(g[i] - Q[i]) for i in range(len(g))) ** 2
    return math.sqrt(M2 / N), math.sqrt(S2 / N)


def uniform_angle_mean(lo, hi, magnitude=1.0, n=200_001):
    """Mean force of a uniform direction by composite Simpson quadrature."""
    t = np.linspace(lo, hi, n)
    wts = np.ones(n)
    wts[1:-1:2] = 4.0
    wts[2:-1:2] = 2.0
    step = (hi - lo) / (n - 1)
    fx = (wts * np.cos(t)).sum() * step / 3 / (hi - lo)
    fy = (wts * np.sin(t)).sum() * step / 3 / (hi - lo)
    return magnitude * fx, magnitude * fy
