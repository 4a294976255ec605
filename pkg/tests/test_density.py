import numpy as np
import pytest
import scipy.sparse as sp

from acmdsa.density import (MaterialModel, RadiusSchedule, SymmetryMap, back_scale, build_filter,
                            chain_gradient, radius_schedule, scale_gradient, scale_variables,
                            scaled_upper_bounds, simp_modulus, symmetrize)
from acmdsa.errors import ParameterError
from acmdsa.fem import Mesh
from acmdsa.problems import double_hook_mask

from oracles import dense_filter

EX1_SCHEDULE = RadiusSchedule(3.0, 1.2, 300, 30)


@pytest.mark.parametrize("R", [0.5, 1.0])
def test_small_radius_is_identity(R):
    mesh = Mesh(4, 3)
    H = build_filter(mesh, R).H
    assert abs(H - sp.identity(mesh.n)).max() == 0


def test_filter_rows_sum_to_one():
    mesh = Mesh(7, 5, 0.5)
    H = build_filter(mesh, 1.3).H
    assert np.allclose(np.asarray(H.sum(axis=1)).ravel(), 1.0, atol=1e-14)


def test_filter_center_row_hand_weights():
    # 3x3 mesh, R = 1.5: center sees itself (1.5), 4 edge neighbors (0.5),
    # corners at sqrt(2) > 1.5? no: 1.5 - 1.414 = 0.0858
    mesh = Mesh(3, 3)
    H = build_filter(mesh, 1.5).H.toarray()
    w_self, w_edge, w_corner = 1.5, 0.5, 1.5 - np.sqrt(2.0)
    total = w_self + 4 * w_edge + 4 * w_corner
    center = mesh.grid_index[1, 1]
    expected = np.empty(9)
    for i, (r, c) in enumerate(zip(mesh.elem_row, mesh.elem_col)):
        d = abs(r - 1) + abs(c - 1)
        expected[i] = (w_self, w_edge, w_corner)[d] if d < 2 or (r != 1 and c != 1) else 0.0
    assert np.max(np.abs(H[center] - expected / total)) < 1e-12


def test_filter_matches_brute_force_with_mask():
    nx, ny, mask = double_hook_mask(4)
    mesh = Mesh(nx, ny, 0.25, active=mask)
    H = build_filter(mesh, 0.6).H.toarray()
    assert np.max(np.abs(H - dense_filter(nx, ny, 0.6, 0.25, mask))) < 1e-12


def test_filter_rejects_nonpositive_radius():
    with pytest.raises(ParameterError):
        build_filter(Mesh(2, 2), 0.0)


def test_simp_modulus_values():
    mat = MaterialModel()
    E = simp_modulus(np.array([1.0, 0.0, 0.5]), mat)
    assert E[0] == 1.0
    assert E[1] == 1e-4
    assert E[2] == pytest.approx(1e-4 + 0.125 * (1 - 1e-4), abs=1e-16)


def test_material_validation():
    with pytest.raises(ParameterError):
        MaterialModel(E0=1.0, E_min=0.0)
    with pytest.raises(ParameterError):
        MaterialModel(p=0.5)


def test_chain_gradient_matches_dense_transpose():
    mesh = Mesh(3, 3)
    filt = build_filter(mesh, 1.5)
    g = np.random.default_rng(0).normal(size=mesh.n)
    assert np.max(np.abs(chain_gradient(filt, g) - filt.H.toarray().T @ g)) < 1e-12
    assert not np.any(chain_gradient(filt, np.zeros(mesh.n)))
    ident = build_filter(mesh, 1.0)
    assert np.array_equal(chain_gradient(ident, g), g)


def test_uniform_start_sums_to_one():
    mesh = Mesh(5, 4)
    H = sp.identity(mesh.n, format="csr")
    xt, vt = scale_variables(np.full(mesh.n, 0.3), H, np.ones(mesh.n), mesh.n, 0.3)
    assert xt.sum() == pytest.approx(1.0, abs=1e-15)
    xt0, _ = scale_variables(np.zeros(mesh.n), H, np.ones(mesh.n), mesh.n, 0.3)
    assert not np.any(xt0)


def test_scale_round_trip():
    mesh = Mesh(6, 4)
    filt = build_filter(mesh, 2.0)
    x = np.random.default_rng(1).uniform(0, 1, mesh.n)
    xt, vt = scale_variables(x, filt.H, mesh.volumes, mesh.volumes.sum(), 0.4)
    assert np.max(np.abs(back_scale(xt, vt) - x)) < 1e-14


def test_scaled_bounds_sum_on_hook_mask():
    nx, ny, mask = double_hook_mask(8)
    mesh = Mesh(nx, ny, 1 / 8, active=mask)
    filt = build_filter(mesh, 0.3)
    vt = scaled_upper_bounds(filt.H, mesh.volumes, mesh.volumes.sum(), 0.3)
    assert vt.sum() == pytest.approx(1 / 0.3, abs=1e-12)


@pytest.mark.parametrize("Vf", [0.0, 1.0, -0.2])
def test_scaled_bounds_reject_bad_fraction(Vf):
    with pytest.raises(ParameterError):
        scaled_upper_bounds(sp.identity(3), np.ones(3), 3.0, Vf)


def test_filter_conserves_volume():
    mesh = Mesh(9, 7)
    filt = build_filter(mesh, 2.5)
    v = mesh.volumes
    x = np.random.default_rng(2).uniform(0, 1, mesh.n)
    assert v @ (filt.H @ x) == pytest.approx((filt.H.T @ v) @ x, abs=1e-10)


def test_scale_gradient_componentwise():
    rng = np.random.default_rng(3)
    G, vt = rng.normal(size=10), rng.uniform(0.5, 2, 10)
    Gt = scale_gradient(G, vt)
    assert np.max(np.abs(Gt * vt - G)) < 1e-14
    assert np.array_equal(scale_gradient(G, np.ones(10)), G)
    G2 = rng.normal(size=(10, 3))
    assert np.allclose(scale_gradient(G2, vt)[:, 1], G2[:, 1] / vt)


def test_symmetrize_examples():
    smap = SymmetryMap.vertical_axis(Mesh(2, 1))
    assert np.array_equal(symmetrize(np.array([2.0, 4.0]), smap), [3.0, 3.0])
    mesh = Mesh(5, 3)
    smap = SymmetryMap.vertical_axis(mesh)
    f = np.random.default_rng(4).normal(size=mesh.n)
    s = symmetrize(f, smap)
    assert np.array_equal(symmetrize(s, smap), s)
    assert np.array_equal(s, s[smap.mirror])


def test_symmetry_map_must_be_involution():
    with pytest.raises(ParameterError):
        SymmetryMap(np.array([1, 2, 0]))


def test_asymmetric_mask_rejected():
    active = np.ones((2, 3), dtype=bool)
    active[0, 0] = False
    with pytest.raises(ParameterError):
        SymmetryMap.vertical_axis(Mesh(3, 2, active=active))


def test_symmetrize_commutes_with_filter():
    nx, ny, mask = double_hook_mask(6)
    mesh = Mesh(nx, ny, 1 / 6, active=mask)
    filt = build_filter(mesh, 0.4)
    smap = SymmetryMap.vertical_axis(mesh)
    x = np.random.default_rng(5).uniform(size=mesh.n)
    a = symmetrize(filt.H @ x, smap)
    b = filt.H @ symmetrize(x, smap)
    assert np.max(np.abs(a - b)) < 1e-12


def test_radius_schedule_example_one():
    assert radius_schedule(1, EX1_SCHEDULE) == 3.0
    assert radius_schedule(299, EX1_SCHEDULE) == 3.0
    assert radius_schedule(300, EX1_SCHEDULE) == 3.0
    assert radius_schedule(330, EX1_SCHEDULE) == pytest.approx(2.7, abs=1e-14)
    assert radius_schedule(EX1_SCHEDULE.final_step, EX1_SCHEDULE) == 1.2
    assert radius_schedule(10_000, EX1_SCHEDULE) == 1.2
    steps = [radius_schedule(k, EX1_SCHEDULE) for k in range(1, 600)]
    assert all(a >= b for a, b in zip(steps, steps[1:]))
    assert len(set(steps)) == 7
