"""Independent reference computations used by the tests."""

import numpy as np

from lagdeploy.assimilation import observation_matrix
from lagdeploy.tracers import torus_delta


def _model(params, dt):
    p = params.mode_set.n_pairs
    d, w = np.diag(params.d), np.diag(params.omega)
    lam = np.block([[-d, -w], [w, -d]])
    phi = np.eye(2 * p) + dt * lam
    F = np.concatenate([params.f.real, params.f.imag]) * dt
    Q = np.diag(np.concatenate([params.sigma, params.sigma]) ** 2 / 2.0) * dt
    return phi, F, Q


def _obs(positions, params):
    A = np.stack([observation_matrix(x, params.mode_set, params.eigenvectors) for x in positions])
    dX = torus_delta(positions[1:], positions[:-1]).reshape(len(positions) - 1, -1)
    return A, dX


def dense_smoother(positions, dt, params, m0, P0):
    """Posterior of all states given all increments, by one dense precision solve."""
    phi, F, Q = _model(params, dt)
    A, dX = _obs(positions, params)
    n1, D = len(positions), len(m0)
    s2 = params.sigma_x**2
    J = np.zeros((n1 * D, n1 * D))
    h = np.zeros(n1 * D)
    P0i = np.linalg.inv(P0)
    J[:D, :D] += P0i
    h[:D] += P0i @ m0
    W = np.linalg.inv(Q)
    for n in range(n1 - 1):
        i, j = slice(n * D, (n + 1) * D), slice((n + 1) * D, (n + 2) * D)
        J[i, i] += phi.T @ W @ phi
        J[j, j] += W
        J[i, j] -= phi.T @ W
        J[j, i] -= W @ phi
        h[i] -= phi.T @ W @ F
        h[j] += W @ F
        J[i, i] += dt / s2 * A[n].T @ A[n]
        h[i] += A[n].T @ dX[n] / s2
    cov = np.linalg.inv(J)
    mean = cov @ h
    means = mean.reshape(n1, D)
    covs = np.stack([cov[n * D : (n + 1) * D, n * D : (n + 1) * D] for n in range(n1)])
    return means, covs


def particle_filter(positions, dt, params, m0, P0, n_particles, rng, checkpoints):
    """Bootstrap particle filter; returns mean, variance and ESS at ``checkpoints``."""
    phi, F, Q = _model(params, dt)
    A, dX = _obs(positions, params)
    s2 = params.sigma_x**2
    D = len(m0)
    U = m0 + rng.standard_normal((n_particles, D)) @ np.linalg.cholesky(P0).T
    logw = np.zeros(n_particles)
    sq = np.sqrt(np.diag(Q))
    out = {}
    for n in range(len(positions)):
        if n in checkpoints:
            w = np.exp(logw - logw.max())
            w /= w.sum()
            mean = w @ U
            var = w @ (U - mean) ** 2
            out[n] = (mean, var, 1.0 / (w**2).sum())
        if n == len(positions) - 1:
            break
        r = dX[n] - dt * U @ A[n].T
        logw = logw - (r**2).sum(axis=1) / (2 * s2 * dt)
        w = np.exp(logw - logw.max())
        w /= w.sum()
        if 1.0 / (w**2).sum() < n_particles / 2:
            # systematic resampling
            c = np.cumsum(w)
            c[-1] = 1.0
            u = (rng.random() + np.arange(n_particles)) / n_particles
            U = U[np.searchsorted(c, u)]
            logw = np.zeros(n_particles)
        U = U @ phi.T + F + sq * rng.standard_normal(U.shape)
    return out


def kalman_filter(positions, dt, params, m0, P0):
    """Plain-loop discrete Kalman filter of the discretized system (prior moments per time)."""
    phi, F, Q = _model(params, dt)
    A, dX = _obs(positions, params)
    s2 = params.sigma_x**2
    m, P = m0.copy(), P0.copy()
    means, covs = [m.copy()], [P.copy()]
    for n in range(len(positions) - 1):
        H = dt * A[n]
        S = H @ P @ H.T + s2 * dt * np.eye(len(H))
        K = P @ H.T @ np.linalg.inv(S)
        m = m + K @ (dX[n] - H @ m)
        P = P - K @ H @ P
        m = phi @ m + F
        P = phi @ P @ phi.T + Q
        means.append(m.copy())
        covs.append(P.copy())
    return np.array(means), np.array(covs)
