"""Quick invariant and oracle checks runnable outside the test suite.

Each check returns ``(name, passed, detail)``; :func:`run_battery` runs them
all. The checks are small versions of the package's tests so they finish in
seconds.
"""

import numpy as np
from scipy import integrate, stats

from .assimilation import filter as run_filter
from .assimilation import smoother
from .deployment import apply_exclusion, random_plan, select_all_at_once
from .descriptor import CostMap, grid_points
from .flow import (
    FlowParams,
    ModeSet,
    build_mode_set,
    equilibrium_distribution,
    sample_equilibrium,
    simulate_flow,
    velocity_at,
)
from .information import gaussian_relative_entropy
from .rng import generator
from .tracers import advect, torus_distance, uniform_initial_positions


def check_kl_quadrature(seed=0):
    rng = generator(seed, "validate", "kl")
    worst = 0.0
    for _ in range(10):
        m1, m2 = rng.normal(size=2)
        s1, s2 = rng.uniform(0.3, 2.0, size=2)
        closed = gaussian_relative_entropy([m1], [[s1**2]], [m2], [[s2**2]]).total
        p, q = stats.norm(m1, s1), stats.norm(m2, s2)
        quad, _ = integrate.quad(lambda x: p.pdf(x) * (p.logpdf(x) - q.logpdf(x)), -np.inf, np.inf,
                                 epsabs=1e-12, epsrel=1e-12)
        worst = max(worst, abs(closed - quad))
    return "kl-quadrature", worst < 1e-6, f"max abs error {worst:.2e}"


def check_kl_nonnegative(seed=0):
    rng = generator(seed, "validate", "kl-nonneg")
    low = np.inf
    for _ in range(50):
        a = rng.normal(size=(4, 4))
        b = rng.normal(size=(4, 4))
        g = gaussian_relative_entropy(rng.normal(size=4), a @ a.T + 0.1 * np.eye(4),
                                      rng.normal(size=4), b @ b.T + 0.1 * np.eye(4))
        low = min(low, g.total)
    return "kl-nonnegative", low >= 0, f"min gain {low:.3g}"


def check_divergence_free(seed=0):
    ms = build_mode_set(3)
    params = FlowParams.uniform(ms)
    c = sample_equilibrium(params, generator(seed, "validate", "div"))
    full = ms.expand(c)
    x = uniform_initial_positions(20, generator(seed, "validate", "div-x"))
    h = 1e-5
    div = np.zeros(len(x))
    for axis in range(2):
        e = np.zeros(2)
        e[axis] = h
        up = velocity_at(full, params.eigenvectors, x + e, ms)[:, axis]
        dn = velocity_at(full, params.eigenvectors, x - e, ms)[:, axis]
        div += (up - dn) / (2 * h)
    worst = float(np.abs(div).max())
    return "divergence-free", worst < 1e-6, f"max |div u| {worst:.2e}"


def _small_system(seed):
    ms = ModeSet.from_representatives([(1, 0), (0, 1)])
    params = FlowParams.uniform(ms, d=0.5, sigma=0.5, sigma_x=0.1)
    init = sample_equilibrium(params, generator(seed, "validate", "init"))
    flow = simulate_flow(params, init, (0.0, 0.5), 1e-3, seed=seed)
    obs = advect(flow, params, uniform_initial_positions(2, seed), (0.0, 0.5), seed=seed)
    return params, flow, obs


def check_filter_psd(seed=0):
    params, _, obs = _small_system(seed)
    f = run_filter(obs, params, equilibrium_distribution(params))
    s = smoother(obs, params, f)
    ratio = min(f.min_eigenvalue_ratio(), s.min_eigenvalue_ratio())
    return "posterior-psd", ratio > -1e-10, f"min eigenvalue/trace {ratio:.2e}"


def check_smoother_endpoint(seed=0):
    params, _, obs = _small_system(seed)
    f = run_filter(obs, params, equilibrium_distribution(params))
    s = smoother(obs, params, f)
    same = np.array_equal(f.mean[-1], s.mean[-1]) and np.array_equal(f.cov[-1], s.cov[-1])
    return "smoother-endpoint", bool(same), "smoother equals filter at the final time"


def check_wrap_invariance(seed=0):
    params, flow, _ = _small_system(seed)
    x0 = uniform_initial_positions(5, seed)
    a = advect(flow, params, x0, (0.0, 0.5), seed=seed).positions
    b = advect(flow, params, x0 + 2 * np.pi * np.array([3, -2]), (0.0, 0.5), seed=seed).positions
    worst = float(torus_distance(a, b).max())
    return "wrap-invariance", worst < 1e-9, f"max torus distance {worst:.2e}"


def check_exclusion_enumeration():
    m = 32
    cmap = CostMap(np.ones((m, m)))
    center = np.array([-np.pi, -np.pi])
    masked = apply_exclusion(cmap, center[None], np.pi).mask.sum()
    pts = grid_points(m)
    d = np.linalg.norm(np.mod(pts - center + np.pi, 2 * np.pi) - np.pi, axis=1)
    expected = int((d < np.pi).sum())
    return "exclusion-enumeration", int(masked) == expected, f"masked {masked}, enumerated {expected}"


def check_plan_distances(seed=0):
    rng = generator(seed, "validate", "plans")
    existing = rng.uniform(-np.pi, np.pi, size=(10, 2))
    plan = random_plan(4, 1.5, existing, seed=seed, enforce_distance=True)
    cmap = CostMap(rng.random((32, 32)))
    plan2 = select_all_at_once(cmap, existing, 4, 1.5)
    bad = plan.violations(existing) + plan2.violations(existing)
    return "plan-distances", bad == 0, f"{bad} violations"


def check_seed_determinism(seed=0):
    params, flow, obs = _small_system(seed)
    _, flow2, obs2 = _small_system(seed)
    same = np.array_equal(flow.coeffs, flow2.coeffs) and np.array_equal(obs.positions, obs2.positions)
    return "seed-determinism", bool(same), "identical paths for identical seeds"


CHECKS = (
    check_kl_quadrature,
    check_kl_nonnegative,
    check_divergence_free,
    check_filter_psd,
    check_smoother_endpoint,
    check_wrap_invariance,
    check_exclusion_enumeration,
    check_plan_distances,
    check_seed_determinism,
)


def run_battery(seed=0):
    """Run every check; returns a list of ``(name, passed, detail)``."""
    out = []
    for check in CHECKS:
        try:
            out.append(check(seed) if check.__code__.co_argcount else check())
        except Exception as exc:  # a crashing check is a failed check
            out.append((check.__name__.removeprefix("check_"), False, f"raised {type(exc).__name__}: {exc}"))
    return out
