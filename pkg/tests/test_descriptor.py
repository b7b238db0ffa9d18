import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lagdeploy.assimilation import backward_sample, filter, smoother
from lagdeploy.descriptor import CostMap, grid_centers, grid_points, ld_expected, ld_single
from lagdeploy.errors import InvalidArgumentError
from lagdeploy.flow import (
    FlowParams,
    FlowRealization,
    ModeSet,
    equilibrium_distribution,
    sample_equilibrium,
    simulate_flow,
)
from lagdeploy.rng import generator
from lagdeploy.tracers import advect, torus_delta, uniform_initial_positions


def _frozen(ms, c, t0=0.0, t1=1.0, dt=1e-3):
    n = int(round((t1 - t0) / dt))
    return FlowRealization(t0 + dt * np.arange(n + 1), np.tile(c, (n + 1, 1)), ms)


def test_grid_layout():
    c = grid_centers(4)
    assert np.allclose(c, -np.pi + np.pi / 4 * np.array([1, 3, 5, 7]))
    pts = grid_points(4)
    assert np.allclose(pts[1], [c[0], c[1]])  # row-major (i, j), x = c[i], y = c[j]


def test_shear_field_constant_speed_oracle():
    # u = (0, v(x)): each probe keeps its x and moves at constant speed |v(x)|
    ms = ModeSet.from_representatives([(1, 0)])
    p = FlowParams.uniform(ms)
    c = np.array([0.3 + 0.4j])
    fl = _frozen(ms, c, 0.0, 2.0)
    m = ld_single(fl, p, grid=8, t_star=1.0, tau1=0.5, tau2=0.7)
    speed = np.abs(2 * np.imag(c[0] * np.exp(1j * grid_centers(8))))
    assert np.allclose(m.values, speed[:, None] * 1.2 * np.ones((1, 8)), rtol=1e-10)


def test_zero_field():
    ms = ModeSet.from_representatives([(1, 0)])
    fl = _frozen(ms, np.zeros(1, complex))
    m = ld_single(fl, FlowParams.uniform(ms), grid=6, t_star=0.0, tau1=0.0, tau2=1.0)
    assert np.array_equal(m.values, np.zeros((6, 6)))


def test_arc_length_matches_probe_path_length(params):
    # speed quadrature vs sum of |dx| along the noiseless forward probe path
    fl = simulate_flow(params, sample_equilibrium(params, generator(0, "a")), (0, 1.0), seed=0)
    m = ld_single(fl, params, grid=4, t_star=0.0, tau1=0.0, tau2=1.0)
    path = advect(fl, params, grid_points(4), (0.0, 1.0), noise_on=False).positions
    length = np.linalg.norm(torus_delta(path[1:], path[:-1]), axis=-1).sum(axis=0)
    vmax = 4.0
    assert np.abs(m.values.ravel() - length).max() < 2 * 1e-3 * vmax


def test_backward_part_matches_backward_probe(params):
    fl = simulate_flow(params, sample_equilibrium(params, generator(1, "a")), (0, 1.0), seed=1)
    m = ld_single(fl, params, grid=4, t_star=1.0, tau1=0.6, tau2=0.0)
    path = advect(fl, params, grid_points(4), (1.0, 0.4), noise_on=False).positions
    length = np.linalg.norm(torus_delta(path[1:], path[:-1]), axis=-1).sum(axis=0)
    assert np.allclose(m.values.ravel(), length, rtol=1e-8)


def test_window_errors():
    ms = ModeSet.from_representatives([(1, 0)])
    fl = _frozen(ms, np.zeros(1, complex))
    p = FlowParams.uniform(ms)
    with pytest.raises(InvalidArgumentError):
        ld_single(fl, p, 4, t_star=0.5, tau1=0.6, tau2=0.1)
    with pytest.raises(InvalidArgumentError):
        ld_single(fl, p, 4, t_star=0.5, tau1=0.0, tau2=0.0)
    with pytest.raises(InvalidArgumentError):
        ld_expected([], p)


@settings(max_examples=10)
@given(st.integers(0, 7), st.integers(0, 7), st.integers(0, 2**20))
def test_translation_equivariance(a, b, seed):
    # shifting the flow by a lattice vector s multiplies c_k by exp(-i k.s)
    ms = ModeSet.from_representatives([(1, 0), (0, 1), (1, 1), (2, -1)])
    p = FlowParams.uniform(ms)
    c = sample_equilibrium(p, np.random.default_rng(seed))
    M = 8
    s = 2 * np.pi / M * np.array([a, b])
    shifted = c * np.exp(-1j * ms.representatives @ s)
    m0 = ld_single(_frozen(ms, c, 0, 0.3), p, M, 0.0, 0.0, 0.3).values
    m1 = ld_single(_frozen(ms, shifted, 0, 0.3), p, M, 0.0, 0.0, 0.3).values
    assert np.allclose(np.roll(m0, (a, b), axis=(0, 1)), m1, rtol=1e-9, atol=1e-12)


def test_expected_single_equals_normalized_single(params):
    fl = simulate_flow(params, sample_equilibrium(params, generator(2, "a")), (0, 0.5), seed=2)
    one = ld_single(fl, params, 8, 0.2, 0.1, 0.3)
    ex = ld_expected([fl], params, 8, 0.2, 0.1, 0.3)
    assert np.allclose(ex.values, one.normalize().values)
    assert ex.normalized and ex.values.max() == pytest.approx(1.0)
    assert ex.provenance["realizations"] == 1


def test_expected_duplicate_idempotent(params):
    fl = simulate_flow(params, sample_equilibrium(params, generator(2, "a")), (0, 0.5), seed=2)
    a = ld_expected([fl], params, 8, 0.2, 0.1, 0.3)
    b = ld_expected([fl, fl, fl], params, 8, 0.2, 0.1, 0.3)
    assert np.allclose(a.values, b.values, rtol=1e-12)


def test_expected_chunking_invariant(params):
    flows = [simulate_flow(params, np.zeros(24), (0, 0.3), seed=s) for s in range(5)]
    a = ld_expected(flows, params, 6, 0.0, 0.0, 0.3, chunk=2)
    b = ld_expected(flows, params, 6, 0.0, 0.0, 0.3, chunk=10)
    assert np.allclose(a.values, b.values, rtol=1e-12)


def test_monte_carlo_convergence_rate(small_params):
    # error of the 20- and 200-sample means against a 2000-sample reference scales as 1/sqrt(n)
    p = small_params
    init = sample_equilibrium(p, generator(0, "a"))
    fl = simulate_flow(p, init, (0, 0.4), seed=0)
    obs = advect(fl, p, uniform_initial_positions(1, 0), (0, 0.4), seed=0)
    f = filter(obs, p, equilibrium_distribution(p))
    s = smoother(obs, p, f)
    samples = backward_sample(s, f, p, 2420, seed=5)
    M = 6
    kw = dict(grid=M, t_star=0.2, tau1=0.2, tau2=0.2)
    members = ld_expected(samples, p, keep_members=True, **kw).members
    ref = members[420:].mean(axis=0)
    err20 = np.mean([np.sqrt(np.mean((members[i : i + 20].mean(axis=0) - ref) ** 2)) for i in range(0, 400, 20)])
    err200 = np.sqrt(np.mean((members[200:400].mean(axis=0) - ref) ** 2))
    err200 = np.mean([err200, np.sqrt(np.mean((members[:200].mean(axis=0) - ref) ** 2))])
    ratio = err20 / err200
    assert np.sqrt(10) / 2 < ratio < np.sqrt(10) * 2


def test_normalization_preserves_argmax(rng):
    v = rng.random((8, 8))
    m = CostMap(v * 3.7)
    assert np.argmax(m.normalize().values) == np.argmax(v)
    assert m.normalize().values.max() == pytest.approx(1.0)


def test_normalization_respects_mask(rng):
    v = rng.random((4, 4))
    mask = np.zeros((4, 4), bool)
    mask.flat[np.argmax(v)] = True
    n = CostMap(v, mask).normalize()
    assert n.values[~mask].max() == pytest.approx(1.0)


def test_costmap_csv_roundtrip(rng, tmp_path):
    m = CostMap(rng.random((5, 5)), rng.random((5, 5)) > 0.7, True, {"kind": "surrogate"})
    m.write(tmp_path / "m.csv", tmp_path / "m.json")
    back = CostMap.from_csv(tmp_path / "m.csv", tmp_path / "m.json")
    assert np.array_equal(back.values, m.values) and np.array_equal(back.mask, m.mask)
    assert back.normalized and back.provenance == {"kind": "surrogate"}


def test_costmap_requires_square():
    with pytest.raises(InvalidArgumentError):
        CostMap(np.zeros((3, 4)))
