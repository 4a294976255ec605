import json
import os
import subprocess
import sys

import numpy as np
import pytest
import scipy.sparse as sp

from acmdsa import _accel, kernels
from acmdsa.fem import BoundaryConditions, FEModel, Mesh
from acmdsa.problems import double_hook_mask

needs_numba = pytest.mark.skipif(not _accel.NUMBA_AVAILABLE, reason="numba not installed")


def column_model(n=6):
    mesh = Mesh(n, n)
    bottom = [mesh.node_id(n, c) for c in range(n + 1)]
    return FEModel(mesh, BoundaryConditions([d for nd in bottom for d in (2 * nd, 2 * nd + 1)]))


@needs_numba
def test_element_energy_paths_agree():
    model = column_model()
    U = np.random.default_rng(0).normal(size=(model.mesh.ndof, 3))
    a = kernels.element_energy_np(U, model.mesh.edofs, model.k0)
    b = kernels.element_energy_nb(U, model.mesh.edofs, model.k0)
    assert np.max(np.abs(a - b)) <= 1e-13 * np.max(np.abs(a))


@needs_numba
def test_scatter_paths_agree():
    model = column_model()
    E = np.random.default_rng(1).uniform(1e-4, 1, model.mesh.n)
    args = (E, model._k0flat, model._ent_elem, model._ent_k, model._pos, model._nnz)
    assert np.max(np.abs(kernels.scatter_values_np(*args) - kernels.scatter_values_nb(*args))) < 1e-14


@needs_numba
@pytest.mark.parametrize("radius", [0.9, 1.5, 2.3, 4.0])
def test_filter_triplet_paths_agree(radius):
    nx, ny, mask = double_hook_mask(6)
    mesh = Mesh(nx, ny, 1 / 6, active=mask)
    mats = []
    for fn in (kernels.filter_triplets_np, kernels.filter_triplets_nb):
        I, J, W = fn(mesh.grid_index, radius)
        mats.append(sp.csr_matrix((W, (I, J)), shape=(mesh.n, mesh.n)))
    assert abs(mats[0] - mats[1]).max() < 1e-15


@needs_numba
def test_prox_bisection_paths_agree():
    rng = np.random.default_rng(2)
    for _ in range(50):
        n = 40
        a = rng.normal(-np.log(n), 1.0, n)
        lo = np.full(n, 0.2 / n)
        hi = np.full(n, 3.0 / n)
        assert kernels.clamped_sum_np(a, 0.3, lo, hi) == pytest.approx(
            kernels.clamped_sum_nb(a, 0.3, lo, hi), rel=1e-14)
        ra = kernels.bisect_shift_np(a, lo, hi, -50.0, 50.0, 1e-12, 200)
        rb = kernels.bisect_shift_nb(a, lo, hi, -50.0, 50.0, 1e-12, 200)
        assert abs(ra[0] - rb[0]) < 1e-10


def test_exponent_clipping_keeps_sum_finite():
    a = np.array([800.0, -800.0])
    s = kernels.clamped_sum_np(a, 0.0, np.zeros(2), np.full(2, np.inf))
    assert np.isfinite(s)


SCRIPT = """
import json, numpy as np
from acmdsa import _accel
from acmdsa.driver import ACMDSAConfig, run_acmdsa
from acmdsa.density import RadiusSchedule
from acmdsa.problems import simple_column, with_options
from acmdsa.stochastic import RtoWeights
p = with_options(simple_column(10, 10), schedule=RadiusSchedule(1.5, 1.5, 1, 1, 0))
cfg = ACMDSAConfig(theta=6e4, N_max=6, N_min=6, N_rst=3, delta_rst=3, m_eval=50)
rec = run_acmdsa(p, RtoWeights.for_model(0.618, p.loads), cfg, seed=3)
print(json.dumps({"backend": _accel.backend_name(), "x": rec.x.tolist(), "J": rec.J_hat}))
"""


def run_with_env(disable):
    env = dict(os.environ, ACMDSA_DISABLE_NUMBA="1" if disable else "0")
    out = subprocess.run([sys.executable, "-c", SCRIPT], env=env, capture_output=True, text=True, check=True)
    return json.loads(out.stdout.strip().splitlines()[-1])


@needs_numba
def test_env_flag_selects_numpy_and_results_match():
    fast, slow = run_with_env(False), run_with_env(True)
    assert fast["backend"] == "numba" and slow["backend"] == "numpy"
    assert np.max(np.abs(np.array(fast["x"]) - np.array(slow["x"]))) < 1e-8
    assert fast["J"] == pytest.approx(slow["J"], rel=1e-8)
