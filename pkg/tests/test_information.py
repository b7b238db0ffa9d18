import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import integrate, stats

from lagdeploy.assimilation import filter, filter_batch
from lagdeploy.errors import InvalidArgumentError
from lagdeploy.flow import equilibrium_distribution, sample_equilibrium, simulate_flow
from lagdeploy.information import (
    GainAccumulator,
    InfoGain,
    ReferenceGaussian,
    causation_entropy_modified,
    causation_entropy_original,
    entropy_gaussian,
    expected_gain,
    gaussian_relative_entropy,
    time_averaged_gain,
)
from lagdeploy.rng import generator
from lagdeploy.state import GaussianPosterior
from lagdeploy.tracers import advect, uniform_initial_positions


def _spd(r, n):
    a = r.normal(size=(n, n))
    return a @ a.T + 0.2 * np.eye(n)


def test_identical_gaussians_zero():
    g = gaussian_relative_entropy([1.0, 2.0], np.diag([1.0, 3.0]), [1.0, 2.0], np.diag([1.0, 3.0]))
    assert g.total == pytest.approx(0, abs=1e-14)


def test_1d_closed_form_by_hand():
    # KL(N(0,1) || N(1,4)) = log 2 + (1 + 1)/8 - 1/2
    g = gaussian_relative_entropy([0.0], [[1.0]], [1.0], [[4.0]])
    assert g.total == pytest.approx(np.log(2) + 2 / 8 - 0.5, abs=1e-14)
    assert g.signal == pytest.approx(1 / 8)
    assert g.dispersion == pytest.approx(np.log(2) + 1 / 8 - 0.5)


def test_1d_matches_quadrature(rng):
    for _ in range(5):
        m1, m2 = rng.normal(size=2)
        s1, s2 = rng.uniform(0.3, 2, size=2)
        p, q = stats.norm(m1, s1), stats.norm(m2, s2)
        quad, _ = integrate.quad(lambda x: p.pdf(x) * (p.logpdf(x) - q.logpdf(x)), -np.inf, np.inf,
                                 epsabs=1e-12, epsrel=1e-12)
        assert gaussian_relative_entropy([m1], [[s1**2]], [m2], [[s2**2]]).total == pytest.approx(quad, abs=1e-8)


def test_matches_scipy_entropies(rng):
    # KL = cross entropy - entropy, with the cross entropy by Monte Carlo-free algebra
    n = 4
    P, Q = _spd(rng, n), _spd(rng, n)
    mp, mq = rng.normal(size=n), rng.normal(size=n)
    Qi = np.linalg.inv(Q)
    cross = 0.5 * (n * np.log(2 * np.pi) + np.linalg.slogdet(Q)[1] + np.trace(Qi @ P) + (mp - mq) @ Qi @ (mp - mq))
    h = stats.multivariate_normal(mp, P).entropy()
    assert gaussian_relative_entropy(mp, P, mq, Q).total == pytest.approx(cross - h, abs=1e-10)


@given(st.integers(0, 2**31), st.integers(1, 6))
def test_nonnegative(seed, n):
    r = np.random.default_rng(seed)
    g = gaussian_relative_entropy(r.normal(size=n), _spd(r, n), r.normal(size=n), _spd(r, n))
    assert g.total >= -1e-12
    assert g.signal >= 0
    assert g.dispersion >= -1e-12


@given(st.integers(0, 2**31))
def test_invariant_under_affine_change_of_variables(seed):
    r = np.random.default_rng(seed)
    n = 3
    P, Q = _spd(r, n), _spd(r, n)
    mp, mq = r.normal(size=n), r.normal(size=n)
    M = r.normal(size=(n, n)) + 3 * np.eye(n)
    b = r.normal(size=n)
    a = gaussian_relative_entropy(mp, P, mq, Q).total
    t = gaussian_relative_entropy(M @ mp + b, M @ P @ M.T, M @ mq + b, M @ Q @ M.T).total
    assert a == pytest.approx(t, rel=1e-7, abs=1e-9)


def test_singular_posterior_is_finite_and_large():
    g = gaussian_relative_entropy([0.0, 0.0], np.diag([1.0, 0.0]), [0.0, 0.0], np.eye(2))
    assert np.isfinite(g.total) and g.total > 5


def test_reference_must_be_pd():
    with pytest.raises(InvalidArgumentError):
        ReferenceGaussian([0.0, 0.0], np.diag([1.0, 0.0]))


def test_dimension_mismatch():
    with pytest.raises(InvalidArgumentError):
        gaussian_relative_entropy([0.0], [[1.0]], [0.0, 0.0], np.eye(2))


def test_batched_terms_match_single(rng):
    ref = ReferenceGaussian(rng.normal(size=3), _spd(rng, 3))
    means = rng.normal(size=(4, 3))
    covs = np.stack([_spd(rng, 3) for _ in range(4)])
    s, d = ref.terms(means, covs)
    for i in range(4):
        g = gaussian_relative_entropy(means[i], covs[i], ref.mean, ref.cov)
        assert s[i] + d[i] == pytest.approx(g.total, rel=1e-12)


def test_entropy_gaussian():
    assert entropy_gaussian([[1.0]]) == pytest.approx(0.5 * np.log(2 * np.pi * np.e))
    assert entropy_gaussian(np.zeros((2, 2))) == -np.inf


def test_causation_entropies(rng):
    C1 = _spd(rng, 3)
    C12 = np.linalg.inv(np.linalg.inv(C1) + np.eye(3))  # extra information shrinks covariance
    assert causation_entropy_original(C1, C12) > 0
    m = rng.normal(size=3)
    assert causation_entropy_modified(m, C12, m, C1).signal == pytest.approx(0)


def test_infogain_roundtrip():
    g = InfoGain(3.0, 1.0, 2.0, (4.0, 6.0), 5)
    assert InfoGain.from_dict(g.to_dict()) == g
    assert '"total": 3.0' in g.to_json()


def _posterior_series():
    times = np.linspace(0, 1, 11)
    means = np.zeros((11, 2))
    means[:, 0] = times  # signal 0.5 t^2 against N(0, I)
    covs = np.tile(np.eye(2), (11, 1, 1))
    return GaussianPosterior(times, means, covs)


def test_time_average_includes_both_endpoints():
    post = _posterior_series()
    eq = GaussianPosterior([0.0], np.zeros(2), np.eye(2))
    g = time_averaged_gain(post, eq, (0.2, 0.5))
    expect = np.mean([0.5 * t**2 for t in (0.2, 0.3, 0.4, 0.5)])
    assert g.total == pytest.approx(expect)
    assert g.dispersion == pytest.approx(0, abs=1e-14)
    assert g.time_window == (0.2, 0.5)


def test_time_average_window_outside():
    post = _posterior_series()
    eq = GaussianPosterior([0.0], np.zeros(2), np.eye(2))
    with pytest.raises(InvalidArgumentError):
        time_averaged_gain(post, eq, (0.5, 1.5))
    with pytest.raises(InvalidArgumentError):
        time_averaged_gain(post, eq, (0.5, 0.2))


def test_expected_gain_mean_and_window_check():
    a = InfoGain(3.0, 1.0, 2.0, (0, 1))
    b = InfoGain(5.0, 2.0, 3.0, (0, 1))
    e = expected_gain([a, b])
    assert (e.total, e.signal, e.dispersion, e.n_ensemble) == (4.0, 1.5, 2.5, 2)
    with pytest.raises(InvalidArgumentError):
        expected_gain([a, InfoGain(1.0, 0.5, 0.5, (0, 2))])
    with pytest.raises(InvalidArgumentError):
        expected_gain([])


def test_accumulator_matches_stored_filter(small_params):
    init = sample_equilibrium(small_params, generator(0, "i"))
    flow = simulate_flow(small_params, init, (0, 0.3), seed=0)
    obs = advect(flow, small_params, uniform_initial_positions(2, 0), (0, 0.3), seed=0)
    eq = equilibrium_distribution(small_params)
    full = filter(obs, small_params, eq)
    acc = GainAccumulator(eq, obs.times, (0.1, 0.3))
    filter_batch(obs.positions[None], obs.dt, 0.0, eq, small_params, callback=acc.update)
    g = acc.gains()[0]
    ref = time_averaged_gain(full, eq, (0.1, 0.3))
    assert g.total == pytest.approx(ref.total, rel=1e-10)
