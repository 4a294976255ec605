"""Structured bilinear-quad plane-stress FEM.

Grid conventions: element ``(row, col)`` with row 0 at the top of the
domain, node ``(r, c)`` has id ``r * (nx + 1) + c`` and coordinates
``(c * h, (ny - r) * h)``. DOF ``2 * node`` is x, ``2 * node + 1`` is y.
Element nodes are ordered counter-clockwise from the lower-left corner.
"""
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import kernels
from .errors import AssemblyError, ParameterError, SolverError

GAUSS_2 = (-1.0 / np.sqrt(3.0), 1.0 / np.sqrt(3.0))
DIRECT_MAX_ELEMENTS = 40_000


class Mesh:
    """Rectangular grid of square elements with an optional active mask."""

    def __init__(self, nx, ny, element_size=1.0, active=None):
        if nx < 1 or ny < 1:
            raise ParameterError("mesh needs at least one element per axis")
        if element_size <= 0:
            raise ParameterError("element_size must be positive")
        self.nx = int(nx)
        self.ny = int(ny)
        self.h = float(element_size)
        if active is None:
            active = np.ones((self.ny, self.nx), dtype=bool)
        active = np.asarray(active, dtype=bool)
        if active.shape != (self.ny, self.nx):
            raise ParameterError(f"active mask shape {active.shape} != {(self.ny, self.nx)}")
        if not active.any():
            raise ParameterError("mesh has no active elements")
        self.active = active
        self.elem_row, self.elem_col = np.nonzero(active)
        self.n = self.elem_row.size
        self.grid_index = np.full((self.ny, self.nx), -1, dtype=np.int64)
        self.grid_index[self.elem_row, self.elem_col] = np.arange(self.n)
        self.n_nodes = (self.nx + 1) * (self.ny + 1)
        self.ndof = 2 * self.n_nodes

        r, c = self.elem_row, self.elem_col
        w = self.nx + 1
        nodes = np.stack([
            (r + 1) * w + c,
            (r + 1) * w + c + 1,
            r * w + c + 1,
            r * w + c,
        ], axis=1)
        self.elem_nodes = nodes
        self.edofs = np.empty((self.n, 8), dtype=np.int64)
        self.edofs[:, 0::2] = 2 * nodes
        self.edofs[:, 1::2] = 2 * nodes + 1

    @property
    def volumes(self):
        return np.full(self.n, self.h * self.h)

    @property
    def centers(self):
        x = (self.elem_col + 0.5) * self.h
        y = (self.ny - self.elem_row - 0.5) * self.h
        return np.stack([x, y], axis=1)

    def node_id(self, r, c):
        return r * (self.nx + 1) + c

    def node_xy(self, node):
        r, c = np.divmod(np.asarray(node), self.nx + 1)
        return np.stack([c * self.h, (self.ny - r) * self.h], axis=-1)

    def node_at(self, x, y):
        """Id of the grid node closest to physical point (x, y)."""
        c = int(round(x / self.h))
        r = self.ny - int(round(y / self.h))
        if not (0 <= c <= self.nx and 0 <= r <= self.ny):
            raise ParameterError(f"point ({x}, {y}) outside the mesh")
        return self.node_id(r, c)

    def used_dofs(self):
        return np.unique(self.edofs)

    def to_grid(self, values, fill=np.nan):
        """Scatter a per-active-element vector onto the (ny, nx) grid."""
        out = np.full((self.ny, self.nx), fill, dtype=float)
        out[self.elem_row, self.elem_col] = values
        return out


def _plane_stress_D(nu):
    return np.array([[1.0, nu, 0.0], [nu, 1.0, 0.0], [0.0, 0.0, 0.5 * (1.0 - nu)]]) / (1.0 - nu * nu)


def _B_matrix(xi, eta, h):
    # square element of side h: dx/dxi = h/2
    dN_dxi = 0.25 * np.array([-(1 - eta), (1 - eta), (1 + eta), -(1 + eta)])
    dN_deta = 0.25 * np.array([-(1 - xi), -(1 + xi), (1 + xi), (1 - xi)])
    dN_dx = dN_dxi * 2.0 / h
    dN_dy = dN_deta * 2.0 / h
    B = np.zeros((3, 8))
    B[0, 0::2] = dN_dx
    B[1, 1::2] = dN_dy
    B[2, 0::2] = dN_dy
    B[2, 1::2] = dN_dx
    return B


def element_stiffness(E_scale=1.0, nu=0.3, element_size=1.0):
    """8x8 bilinear-quad plane-stress stiffness, unit thickness, 2x2 Gauss."""
    if not 0.0 <= nu < 0.5:
        raise ParameterError(f"Poisson ratio must lie in [0, 0.5), got {nu}")
    if E_scale <= 0:
        raise ParameterError("E_scale must be positive")
    D = _plane_stress_D(nu)
    detJ = (element_size / 2.0) ** 2
    k = np.zeros((8, 8))
    for xi in GAUSS_2:
        for eta in GAUSS_2:
            B = _B_matrix(xi, eta, element_size)
            k += B.T @ D @ B * detJ
    k = 0.5 * (k + k.T)
    return E_scale * k


@dataclass
class BoundaryConditions:
    fixed_dofs: np.ndarray
    load_dofs: list = field(default_factory=list)

    def __post_init__(self):
        self.fixed_dofs = np.unique(np.asarray(self.fixed_dofs, dtype=np.int64))

    def validate(self, mesh):
        f = self.fixed_dofs
        if f.size and (f.min() < 0 or f.max() >= mesh.ndof):
            raise AssemblyError("fixed DOF index out of range")
        for d in self.load_dofs:
            if not 0 <= int(d) < mesh.ndof:
                raise AssemblyError(f"load DOF {d} out of range")
        # rigid-body modes restricted to the fixed set must have full rank
        nodes = f // 2
        xy = mesh.node_xy(nodes)
        R = np.zeros((f.size, 3))
        is_x = f % 2 == 0
        R[is_x, 0] = 1.0
        R[~is_x, 1] = 1.0
        R[is_x, 2] = -xy[is_x, 1]
        R[~is_x, 2] = xy[~is_x, 0]
        if f.size < 3 or np.linalg.matrix_rank(R) < 3:
            raise AssemblyError("supports do not remove all rigid-body modes")


def nested_dissection_nodes(nx, ny, leaf=16):
    """Geometric nested-dissection order of the (ny+1) x (nx+1) node grid."""
    order = []

    def rec(r0, r1, c0, c1):
        nr, nc = r1 - r0, c1 - c0
        if nr <= 0 or nc <= 0:
            return
        if nr * nc <= leaf:
            rr, cc = np.meshgrid(np.arange(r0, r1), np.arange(c0, c1), indexing="ij")
            order.append((rr * (nx + 1) + cc).ravel())
            return
        if nc >= nr:
            m = c0 + nc // 2
            rec(r0, r1, c0, m)
            rec(r0, r1, m + 1, c1)
            order.append(np.arange(r0, r1) * (nx + 1) + m)
        else:
            m = r0 + nr // 2
            rec(r0, m, c0, c1)
            rec(m + 1, r1, c0, c1)
            order.append(m * (nx + 1) + np.arange(c0, c1))

    rec(0, ny + 1, 0, nx + 1)
    return np.concatenate(order)


class LinearSystem:
    """Constrained stiffness on the free DOFs, with a cached factorization."""

    def __init__(self, K, model, E):
        self.K = K
        self.model = model
        self.E = E
        self._lu = None
        self._diag = None

    def factor(self):
        if self._lu is None:
            try:
                self._lu = spla.splu(self.K, permc_spec="NATURAL")
            except RuntimeError as exc:
                raise AssemblyError(f"constrained stiffness is singular: {exc}") from exc
        return self._lu

    def solve_free(self, b, tol=1e-8, method="direct", maxiter=None):
        b = np.asarray(b, dtype=float)
        if method == "direct":
            x = self.factor().solve(b)
        elif method == "cg":
            x = self._cg(b, tol, maxiter)
        else:
            raise ParameterError(f"unknown solver {method!r}")
        self._check_residual(b, x, tol)
        return x

    def _cg(self, b, tol, maxiter):
        if self._diag is None:
            self._diag = self.K.diagonal()
        M = sp.diags(1.0 / self._diag)
        maxiter = maxiter or 10 * self.K.shape[0]
        cols = b.reshape(b.shape[0], -1)
        out = np.empty_like(cols)
        for j in range(cols.shape[1]):
            if not np.any(cols[:, j]):
                out[:, j] = 0.0
                continue
            x, info = spla.cg(self.K, cols[:, j], rtol=tol, atol=0.0, maxiter=maxiter, M=M)
            if info != 0:
                res = np.linalg.norm(self.K @ x - cols[:, j]) / np.linalg.norm(cols[:, j])
                raise SolverError(f"CG did not converge in {maxiter} iterations (residual {res:.3e})", res)
            out[:, j] = x
        return out.reshape(b.shape)

    def _check_residual(self, b, x, tol):
        r = self.K @ x - b
        bn = np.linalg.norm(b, axis=0)
        rn = np.linalg.norm(r, axis=0)
        rel = np.where(bn > 0, rn / np.where(bn > 0, bn, 1.0), rn)
        worst = float(np.max(rel))
        if not np.isfinite(worst) or worst > max(tol, 1e-12) * 1.0001:
            raise SolverError(f"relative residual {worst:.3e} exceeds tolerance {tol:.1e}", worst)


class FEModel:
    """Mesh + supports + element matrix with a precomputed sparsity pattern.

    ``assemble`` only scatters values into the pattern, so it can be called
    once per design at low cost.
    """

    def __init__(self, mesh, bc, nu=0.3):
        bc.validate(mesh)
        self.mesh = mesh
        self.bc = bc
        self.nu = nu
        self.k0 = element_stiffness(1.0, nu, mesh.h)
        self._k0flat = self.k0.ravel()

        used = mesh.used_dofs()
        is_free = np.zeros(mesh.ndof, dtype=bool)
        is_free[used] = True
        is_free[bc.fixed_dofs] = False
        # number the free DOFs in nested-dissection order to limit fill-in
        nodes = nested_dissection_nodes(mesh.nx, mesh.ny)
        ordered = np.stack([2 * nodes, 2 * nodes + 1], axis=1).ravel()
        ordered = ordered[is_free[ordered]]
        self.free = ordered
        self.nfree = ordered.size
        self.fmap = np.full(mesh.ndof, -1, dtype=np.int64)
        self.fmap[ordered] = np.arange(self.nfree)

        loc = self.fmap[mesh.edofs]  # (n, 8)
        rows = np.repeat(loc, 8, axis=1)  # a-index varies slowest
        cols = np.tile(loc, (1, 8))
        keep = (rows >= 0) & (cols >= 0)
        elem = np.broadcast_to(np.arange(mesh.n)[:, None], rows.shape)
        kidx = np.broadcast_to(np.arange(64)[None, :], rows.shape)
        rows, cols = rows[keep], cols[keep]
        self._ent_elem = np.ascontiguousarray(elem[keep])
        self._ent_k = np.ascontiguousarray(kidx[keep])
        key = cols * self.nfree + rows
        uniq, pos = np.unique(key, return_inverse=True)
        self._pos = pos.astype(np.int64)
        self._indices = (uniq % self.nfree).astype(np.int32)
        col_of = uniq // self.nfree
        self._indptr = np.concatenate([[0], np.cumsum(np.bincount(col_of, minlength=self.nfree))]).astype(np.int32)
        self._nnz = uniq.size

    @property
    def n(self):
        return self.mesh.n

    def assemble(self, E):
        E = np.asarray(E, dtype=float)
        if E.shape != (self.mesh.n,):
            raise AssemblyError(f"modulus vector has shape {E.shape}, expected ({self.mesh.n},)")
        if np.any(~np.isfinite(E)) or np.any(E <= 0):
            raise AssemblyError("element moduli must be finite and positive")
        data = kernels.scatter_values(E, self._k0flat, self._ent_elem, self._ent_k, self._pos, self._nnz)
        K = sp.csc_matrix((data, self._indices, self._indptr), shape=(self.nfree, self.nfree))
        K.has_sorted_indices = True
        return LinearSystem(K, self, E)

    def full_matrix(self, E):
        """Unconstrained global stiffness over all DOFs (reference/testing use)."""
        m = self.mesh
        rows = np.repeat(m.edofs, 8, axis=1).ravel()
        cols = np.tile(m.edofs, (1, 8)).ravel()
        vals = (np.asarray(E)[:, None] * self._k0flat[None, :]).ravel()
        return sp.csr_matrix((vals, (rows, cols)), shape=(m.ndof, m.ndof))

    def solve(self, system, F, tol=1e-8, method="auto", prescribed=None):
        """Full-length displacements for load(s) ``F`` of shape (ndof,) or (ndof, m).

        ``prescribed`` optionally gives a full-length vector whose entries on
        the fixed DOFs are imposed displacements.
        """
        F = np.asarray(F, dtype=float)
        if F.shape[0] != self.mesh.ndof:
            raise ParameterError(f"load has {F.shape[0]} rows, expected {self.mesh.ndof}")
        if not np.all(np.isfinite(F)):
            raise ParameterError("load vector is not finite")
        if method == "auto":
            method = "direct" if self.mesh.n <= DIRECT_MAX_ELEMENTS else "cg"
        rhs = F
        if prescribed is not None:
            uc = np.zeros(self.mesh.ndof)
            uc[self.bc.fixed_dofs] = np.asarray(prescribed)[self.bc.fixed_dofs]
            corr = self.full_matrix(system.E) @ uc
            rhs = F - (corr if F.ndim == 1 else corr[:, None])
        b = rhs[self.free]
        U = np.zeros(F.shape)
        if np.any(b):
            U[self.free] = system.solve_free(b, tol=tol, method=method)
        if prescribed is not None:
            if F.ndim == 1:
                U[self.bc.fixed_dofs] = uc[self.bc.fixed_dofs]
            else:
                U[self.bc.fixed_dofs] = uc[self.bc.fixed_dofs, None]
        return U

    def element_energies(self, U):
        """``u_e^T k0 u_e`` for each element and each column of U."""
        U2 = np.ascontiguousarray(U.reshape(U.shape[0], -1))
        return kernels.element_energy(U2, self.mesh.edofs, self.k0)

    def strains_at_center(self, U):
        B = _B_matrix(0.0, 0.0, self.mesh.h)
        return U[self.mesh.edofs] @ B.T


def assemble(model, E):
    return model.assemble(E)


def solve(model, system, f, tol=1e-8, method="auto"):
    return model.solve(system, f, tol=tol, method=method)


def compliance(f, u):
    """``f^T u``, column-wise for 2-D inputs."""
    return np.sum(np.asarray(f) * np.asarray(u), axis=0)


def compliance_sensitivity(model, U, xbar, material):
    """dC/dxbar for the modified SIMP law; shape (n,) or (n, m) following U."""
    energy = model.element_energies(U)
    dE = material.p * np.power(xbar, material.p - 1) * (material.E0 - material.E_min)
    g = -dE[:, None] * energy
    return g[:, 0] if np.asarray(U).ndim == 1 else g
