import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from lagdeploy.errors import InconsistentStateError, InvalidArgumentError
from lagdeploy.flow import (
    FlowParams,
    FlowRealization,
    ModeSet,
    build_mode_set,
    default_eigenvectors,
    equilibrium_distribution,
    equilibrium_moments,
    ou_paths,
    rep_velocity,
    sample_equilibrium,
    simulate_flow,
    simulate_flows,
    velocity_at,
)
from lagdeploy.rng import generator


def test_mode_set_counts(mode_set):
    assert mode_set.n_modes == 48
    assert mode_set.n_pairs == 24
    assert mode_set.dim == 48
    assert not ((mode_set.modes == 0).all(axis=1)).any()
    assert np.abs(mode_set.modes).max() == 3


def test_mode_set_pairs_are_conjugate(mode_set):
    reps = mode_set.representatives
    for m, k in enumerate(mode_set.modes):
        r = reps[mode_set.mode_rep[m]]
        assert tuple(k) == (tuple(-r) if mode_set.mode_conj[m] else tuple(r))


@pytest.mark.parametrize("kmax", [0, -1, 1.5])
def test_bad_kmax(kmax):
    with pytest.raises(InvalidArgumentError):
        build_mode_set(kmax)


def test_non_canonical_representative():
    with pytest.raises(InvalidArgumentError):
        ModeSet.from_representatives([(-1, 0)])


@given(st.integers(0, 2**31))
def test_expand_reduce_roundtrip(seed):
    ms = build_mode_set(2)
    r = np.random.default_rng(seed)
    c = r.normal(size=ms.n_pairs) + 1j * r.normal(size=ms.n_pairs)
    full = ms.expand(c)
    assert np.array_equal(ms.reduce(full), c)


def test_reduce_rejects_asymmetry(mode_set):
    full = mode_set.expand(np.ones(mode_set.n_pairs, complex))
    full[0] += 0.1j * (1 if mode_set.mode_conj[0] else -1) + 0.3
    with pytest.raises(InconsistentStateError):
        mode_set.reduce(full)


def test_eigenvectors_incompressible_unit(mode_set):
    r = default_eigenvectors(mode_set)
    k = mode_set.representatives
    assert np.abs((k * r).sum(axis=1)).max() < 1e-15
    assert np.allclose(np.linalg.norm(r, axis=1), 1.0)


def test_params_validate_eigenvectors(mode_set):
    bad = default_eigenvectors(mode_set)
    bad[0] = np.array([1.0, 1.0]) / np.sqrt(2)  # unit length but not orthogonal to k
    with pytest.raises(InvalidArgumentError):
        FlowParams(mode_set, 0.5, 0.0, 0.0, 0.5, eigenvectors=bad)
    bad[0] = 2 * default_eigenvectors(mode_set)[0]
    with pytest.raises(InvalidArgumentError):
        FlowParams(mode_set, 0.5, 0.0, 0.0, 0.5, eigenvectors=bad)


def test_params_negative_noise(mode_set):
    with pytest.raises(InvalidArgumentError):
        FlowParams.uniform(mode_set, sigma=-0.1)


def test_params_dict_roundtrip(params):
    back = FlowParams.from_dict(params.to_dict())
    for name in ("d", "omega", "f", "sigma"):
        assert np.array_equal(getattr(back, name), getattr(params, name))
    assert back.sigma_x == params.sigma_x


def test_params_dict_roundtrip_custom_modes(small_params):
    back = FlowParams.from_dict(small_params.to_dict())
    assert np.array_equal(back.mode_set.representatives, small_params.mode_set.representatives)


def test_per_mode_conjugate_relations(mode_set):
    p = FlowParams.uniform(mode_set, omega=0.3, f=0.2 + 0.1j)
    om = p.per_mode("omega")
    f = p.per_mode("f")
    for m, conj in enumerate(mode_set.mode_conj):
        assert om[m] == (-0.3 if conj else 0.3)
        assert f[m] == (np.conj(0.2 + 0.1j) if conj else 0.2 + 0.1j)


@given(st.integers(0, 2**31))
def test_velocity_real_and_matches_rep_velocity(seed):
    ms = build_mode_set(3)
    p = FlowParams.uniform(ms)
    r = np.random.default_rng(seed)
    c = sample_equilibrium(p, r)
    x = r.uniform(-np.pi, np.pi, size=(7, 2))
    full = velocity_at(ms.expand(c), p.eigenvectors, x, ms)
    fast = rep_velocity(c, p.eigenvectors, ms.representatives, x)
    assert np.allclose(full, fast, atol=1e-12)


def test_velocity_rejects_asymmetric_coefficients(mode_set, params):
    full = mode_set.expand(np.ones(mode_set.n_pairs, complex))
    full[mode_set.mode_conj.argmax()] *= 2
    with pytest.raises(InconsistentStateError):
        velocity_at(full, params.eigenvectors, np.zeros((1, 2)), mode_set)


def test_velocity_divergence_free_spectrally(params, rng):
    # div u = sum_k i (k . r_k) c_k e^{ikx} and k . r_k = 0 termwise
    k = params.mode_set.representatives
    assert np.abs((k * params.eigenvectors).sum(axis=1)).max() == 0.0


def test_velocity_single_mode_closed_form():
    ms = ModeSet.from_representatives([(1, 0)])
    p = FlowParams.uniform(ms)
    c = np.array([0.3 - 0.2j])
    x = np.array([[0.7, -1.1]])
    # r = i (0, 1): u = 2 Re(c e^{ix} i) in y, zero in x
    expect = 2 * np.real(c[0] * np.exp(1j * 0.7) * 1j)
    u = velocity_at(ms.expand(c), p.eigenvectors, x, ms)
    assert np.allclose(u, [[0.0, expect]])


def test_equilibrium_moments_default_values(params):
    mean, var = equilibrium_moments(params)
    assert np.allclose(mean, 0)
    assert np.allclose(var, 0.25)


def test_equilibrium_requires_damping(mode_set):
    with pytest.raises(InvalidArgumentError):
        equilibrium_moments(FlowParams.uniform(mode_set, d=0.0))


def test_equilibrium_distribution_cov(params):
    eq = equilibrium_distribution(params)
    assert np.allclose(np.diag(eq.cov[0]), 0.125)
    assert eq.kind == "equilibrium"


def test_ou_paths_match_exact_recursion(small_params):
    # the lfilter recursion equals the explicit Euler-Maruyama loop with the same noise
    r1, r2 = np.random.default_rng(5), np.random.default_rng(5)
    init = np.array([[0.1 + 0.2j, -0.3j, 0.5]])
    dt, n = 1e-2, 50
    p = small_params.with_(f=np.array([0.1, 0.2j, 0.0]), omega=np.array([0.5, -1.0, 0.0]))
    out = ou_paths(p, init, n, dt, r1)[:, 0]
    xi = r2.standard_normal((n, 1, 3, 2))[:, 0]
    c = init[0].copy()
    for i in range(n):
        noise = (xi[i, :, 0] + 1j * xi[i, :, 1]) * p.sigma * np.sqrt(dt / 2)
        c = c + ((-p.d + 1j * p.omega) * c + p.f) * dt + noise
        assert np.allclose(out[i + 1], c, atol=1e-12)


def test_ou_mean_decay_oracle(small_params):
    # many paths: sample mean follows the discrete mean recursion (1 - d dt)^n c0
    p = small_params
    init = np.tile(np.array([1.0 + 0.5j, -1.0, 0.5j]), (4000, 1))
    dt, n = 1e-2, 100
    out = ou_paths(p, init, n, dt, generator(1, "test"))
    expect = (1 - 0.5 * dt) ** n * init[0]
    se = np.sqrt(0.25 * (1 - (1 - 0.5 * dt) ** (2 * n)) / 4000)
    assert np.all(np.abs(out[-1].mean(axis=0) - expect) < 4 * se)


def test_simulate_flow_deterministic(params):
    init = sample_equilibrium(params, generator(0, "x"))
    a = simulate_flow(params, init, (0, 0.1), seed=3)
    b = simulate_flow(params, init, (0, 0.1), seed=3)
    c = simulate_flow(params, init, (0, 0.1), seed=4)
    assert np.array_equal(a.coeffs, b.coeffs)
    assert not np.array_equal(a.coeffs, c.coeffs)
    assert a.coeffs.shape == (101, 24)


def test_simulate_flow_accepts_full_vector(params):
    init = sample_equilibrium(params, generator(0, "x"))
    a = simulate_flow(params, init, (0, 0.01), seed=3)
    b = simulate_flow(params, params.mode_set.expand(init), (0, 0.01), seed=3)
    assert np.array_equal(a.coeffs, b.coeffs)


def test_simulate_flow_bad_span(params):
    with pytest.raises(InvalidArgumentError):
        simulate_flow(params, np.zeros(24), (0, 0.0105), dt=1e-3)


def test_simulate_flows_batch(params):
    inits = sample_equilibrium(params, generator(0, "x"), size=3)
    flows = simulate_flows(params, inits, (1.0, 1.1), seed=2)
    assert len(flows) == 3
    assert np.allclose(flows[0].times[[0, -1]], [1.0, 1.1])
    assert np.array_equal(flows[1].coeffs[0], inits[1])


def test_realization_window_and_index(params):
    fl = simulate_flow(params, np.zeros(24), (0, 0.1), seed=1)
    w = fl.window(0.02, 0.05)
    assert len(w.times) == 31
    assert fl.index(0.05) == 50
    with pytest.raises(InvalidArgumentError):
        fl.index(0.0505)


def test_realization_csv_roundtrip(params, tmp_path):
    fl = simulate_flow(params, np.zeros(24), (0, 0.005), seed=1)
    fl.to_csv(tmp_path / "flow.csv")
    back = FlowRealization.from_csv(tmp_path / "flow.csv", params.mode_set)
    assert np.array_equal(back.coeffs, fl.coeffs)
    assert np.array_equal(back.times, fl.times)


def test_realization_shape_check(mode_set):
    with pytest.raises(InvalidArgumentError):
        FlowRealization([0.0, 1.0], np.zeros((2, 3)), mode_set)
