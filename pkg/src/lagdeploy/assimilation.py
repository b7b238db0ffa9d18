"""Conditional-Gaussian Lagrangian data assimilation over the augmented state.

The coupled system is

    dX = A(X) U dt + sigma_x dW_X,
    dU = (F + Lambda U) dt + Sigma dW_U,

with ``U`` the real-augmented spectral coefficients and ``A(X)`` the Fourier
observation matrix evaluated at the drifter positions. Given the drifter
paths, the posterior of ``U`` is Gaussian with closed-form moments.

Two time discretizations are provided:

``scheme="kalman"`` (default)
    Exact filter, Rauch-Tung-Striebel smoother and backward sampler of the
    Euler-Maruyama discretization of the coupled system. As ``dt -> 0`` these
    converge to the continuous filter/smoother/sampler equations.
``scheme="euler"``
    Forward Euler of the continuous filter moment equations, backward Euler
    of the smoother equations and of the backward sampling SDE.
"""

import numpy as np

from . import rng as _rng
from .errors import InvalidArgumentError, NumericalFailureError
from .flow import FlowRealization, phases
from .state import GaussianPosterior, condition_cov, deaugment, floor_psd, symmetrize
from .tracers import TrajectorySet, torus_delta

SCHEMES = ("kalman", "euler")
MIN_SIGMA_X = 1e-6


class LinearModel:
    """Real-augmented drift, forcing and noise of the OU coefficient model."""

    def __init__(self, params):
        ms = params.mode_set
        p = ms.n_pairs
        d, w = np.diag(params.d), np.diag(params.omega)
        self.params = params
        self.mode_set = ms
        self.dim = 2 * p
        self.Lambda = np.block([[-d, -w], [w, -d]])
        self.forcing = np.concatenate([params.f.real, params.f.imag])
        self.Q = np.diag(np.concatenate([params.sigma, params.sigma]) ** 2 / 2.0)
        self.sigma_x = params.sigma_x
        self.reps = ms.representatives
        self.r = params.eigenvectors

    def transition(self, dt):
        return np.eye(self.dim) + dt * self.Lambda

    def obs_matrix(self, positions):
        """Observation matrices for positions ``(..., L, 2)`` -> ``(..., 2L, 2P)``."""
        positions = np.asarray(positions, dtype=float)
        z = phases(positions, self.reps)[..., :, :, None] * self.r  # (..., L, P, 2)
        z = np.swapaxes(z, -1, -2)  # (..., L, 2, P)
        a = np.concatenate([2.0 * z.real, -2.0 * z.imag], axis=-1)
        return a.reshape(a.shape[:-3] + (-1, self.dim))


def observation_matrix(positions, mode_set, eigenvectors):
    """Matrix mapping the augmented state to stacked drifter velocities.

    Row block ``l`` gives ``u(x_l)``; conjugate partners are folded in, so for
    a representative coefficient ``a + ib`` the columns are ``2 Re(e^{ikx} r)``
    and ``-2 Im(e^{ikx} r)``.
    """
    positions = np.asarray(positions, dtype=float).reshape(-1, 2)
    dim = 2 * mode_set.n_pairs
    if len(positions) == 0:
        return np.zeros((0, dim))
    z = phases(positions, mode_set.representatives)[:, :, None] * np.asarray(eigenvectors)
    z = np.swapaxes(z, 1, 2)
    a = np.concatenate([2.0 * z.real, -2.0 * z.imag], axis=-1)
    return a.reshape(-1, dim)


def _check_psd(cov, what):
    cov = np.asarray(cov, dtype=float)
    if not np.all(np.isfinite(cov)):
        raise InvalidArgumentError(f"{what} covariance has non-finite entries")
    if np.abs(cov - np.swapaxes(cov, -1, -2)).max(initial=0.0) > 1e-10 * max(1.0, np.abs(cov).max()):
        raise InvalidArgumentError(f"{what} covariance is not symmetric")
    w = np.linalg.eigvalsh(symmetrize(cov))
    tr = np.trace(cov, axis1=-2, axis2=-1)
    if np.any(w[..., 0] < -1e-10 * np.maximum(tr, 1e-300)):
        raise InvalidArgumentError(f"{what} covariance is not positive semidefinite")


def _regularized_inverse_apply(R, rhs):
    """Solve ``R X = rhs`` for symmetric PSD ``R`` with eigenvalue floor 1e-10 * trace.

    Batched over leading axes. Rows where ``R`` is identically zero yield zero.
    """
    try:
        np.linalg.cholesky(R)
        return np.linalg.solve(R, rhs)
    except np.linalg.LinAlgError:
        pass
    tr = np.trace(R, axis1=-2, axis2=-1)
    if not np.all(np.isfinite(tr)) or np.any(tr < 0):
        raise NumericalFailureError("covariance is singular beyond regularization")
    w, v = np.linalg.eigh(symmetrize(R))
    floor = (1e-10 * tr)[..., None]
    safe = np.maximum(w, np.where(floor > 0, floor, 1.0))
    inv_w = np.where(floor > 0, 1.0 / safe, 0.0)
    return (v * inv_w[..., None, :]) @ (np.swapaxes(v, -1, -2) @ rhs)


def _run_filter(positions, dt, t0, mean0, cov0, model, scheme, callback):
    """Filter a batch of drifter paths ``(B, N+1, L, 2)``.

    ``callback(n, prior_mean, prior_cov, post_mean, post_cov)`` is called for
    every grid index ``n``; ``prior`` is conditioned on observations up to
    ``t_n`` and ``post`` additionally on the increment over ``[t_n, t_{n+1}]``
    (``None`` at the last index and for the Euler scheme).
    """
    if scheme not in SCHEMES:
        raise InvalidArgumentError(f"unknown scheme {scheme!r}; expected one of {SCHEMES}")
    if model.sigma_x < MIN_SIGMA_X:
        raise InvalidArgumentError(f"sigma_x below {MIN_SIGMA_X} makes the filter singular")
    b, n1, n_obs = positions.shape[0], positions.shape[1], positions.shape[2]
    dim = model.dim
    mu = np.broadcast_to(np.asarray(mean0, dtype=float), (b, dim)).copy()
    R = np.broadcast_to(np.asarray(cov0, dtype=float), (b, dim, dim)).copy()
    phi = model.transition(dt)
    phi_diag = np.diag(phi) if np.count_nonzero(phi - np.diag(np.diag(phi))) == 0 else None
    phi_outer = None if phi_diag is None else np.outer(phi_diag, phi_diag)
    qdt = model.Q * dt
    fdt = model.forcing * dt
    inv_s2 = 1.0 / model.sigma_x**2
    eye_obs = np.eye(2 * n_obs) * model.sigma_x**2
    block = max(1, min(256, 2**22 // max(1, b * 2 * n_obs * dim)))
    for n in range(n1):
        if n == n1 - 1:
            callback(n, mu, R, None, None)
            break
        if n_obs:
            j = n % block
            if j == 0:
                # observation matrices and increments for the next block of steps
                stop = min(n + block, n1 - 1)
                A_blk = model.obs_matrix(positions[:, n:stop])  # (B, blk, 2L, D)
                dX_blk = torus_delta(positions[:, n + 1 : stop + 1], positions[:, n:stop]).reshape(b, stop - n, -1)
            A = A_blk[:, j]
            innov = dX_blk[:, j] - dt * np.einsum("bod,bd->bo", A, mu)
        if scheme == "kalman":
            if n_obs:
                AR = A @ R
                S = eye_obs + dt * AR @ np.swapaxes(A, -1, -2)
                Kt = np.linalg.solve(S, AR)  # (B, 2L, D) = (R A^T S^-1)^T
                mu_a = mu + np.einsum("bod,bo->bd", Kt, innov)
                R_a = R - dt * np.swapaxes(AR, -1, -2) @ Kt
            else:
                mu_a, R_a = mu, R
            callback(n, mu, R, mu_a, R_a)
            if phi_diag is None:
                mu = mu_a @ phi.T + fdt
                R = condition_cov(phi @ R_a @ phi.T + qdt)
            else:
                mu = mu_a * phi_diag + fdt
                R = condition_cov(R_a * phi_outer + qdt)
        else:
            callback(n, mu, R, None, None)
            drift = mu @ model.Lambda.T + model.forcing
            dR = model.Lambda @ R + R @ model.Lambda.T + model.Q
            if n_obs:
                RAt = R @ np.swapaxes(A, -1, -2)
                mu = mu + dt * drift + inv_s2 * np.einsum("bdo,bo->bd", RAt, innov)
                dR = dR - inv_s2 * RAt @ np.swapaxes(RAt, -1, -2)
            else:
                mu = mu + dt * drift
            R = floor_psd(R + dt * dR)
        if not np.isfinite(R[..., 0, 0]).all() or not np.isfinite(mu).all():
            raise NumericalFailureError("filter produced non-finite moments", time=t0 + (n + 1) * dt)
    if not np.isfinite(R).all():
        raise NumericalFailureError("filter produced non-finite moments", time=t0 + (n1 - 1) * dt)


def filter(obs, params, init, scheme="kalman", keep="all"):
    """Filtering posterior ``p(U(t) | X(s <= t))`` on the observation grid.

    ``init`` is the Gaussian at the first observation time (its last stored
    time is used). ``keep="last"`` returns only the final time, which avoids
    storing the covariance path.
    """
    if keep not in ("all", "last"):
        raise InvalidArgumentError("keep must be 'all' or 'last'")
    model = LinearModel(params)
    mean0, cov0 = np.asarray(init.mean[-1]), np.asarray(init.cov[-1])
    if mean0.shape != (model.dim,):
        raise InvalidArgumentError(f"initial state dimension {mean0.shape} != {model.dim}")
    _check_psd(cov0, "initial")
    n1 = len(obs.times)
    store_all = keep == "all"
    shape_m = (n1 if store_all else 1, model.dim)
    means, covs = np.empty(shape_m), np.empty(shape_m + (model.dim,))
    a_means = np.full(shape_m, np.nan) if store_all and scheme == "kalman" else None
    a_covs = np.full(shape_m + (model.dim,), np.nan) if a_means is not None else None

    def store(n, mu, R, mu_a, R_a):
        i = n if store_all else 0
        if store_all or n == n1 - 1:
            means[i], covs[i] = mu[0], R[0]
        if a_means is not None and mu_a is not None:
            a_means[n], a_covs[n] = mu_a[0], R_a[0]

    _run_filter(obs.positions[None], obs.dt, obs.times[0], mean0, cov0, model, scheme, store)
    times = obs.times if store_all else obs.times[-1:]
    post = GaussianPosterior(times, means, covs, a_means, a_covs, kind="filter")
    post.scheme = scheme
    return post


def filter_batch(positions, dt, t0, init, params, scheme="kalman", callback=None):
    """Run independent filters for a stack of trajectory arrays ``(B, N+1, L, 2)``.

    Nothing is stored; ``callback`` receives ``(n, mean, cov)`` with batch
    leading axes at every grid index. Returns the final means and covariances.
    """
    model = LinearModel(params)
    final = {}

    def cb(n, mu, R, mu_a, R_a):
        if callback is not None:
            callback(n, mu, R)
        final["mean"], final["cov"] = mu, R

    _run_filter(np.asarray(positions, dtype=float), dt, t0, init.mean[-1], init.cov[-1], model, scheme, cb)
    return final["mean"], final["cov"]


def _scheme_of(post):
    return getattr(post, "scheme", "kalman" if post.analysis_cov is not None else "euler")


def smoother(obs, params, filter_out, scheme=None):
    """Smoothing posterior ``p(U(t) | X(s), s in [t0, T])`` by a backward sweep.

    Starts from the filter estimate at ``T``. ``obs`` is accepted for API
    symmetry; all observation information is already carried by the filter.
    """
    scheme = scheme or _scheme_of(filter_out)
    if len(filter_out) != len(obs.times):
        raise InvalidArgumentError("filter output does not cover the observation grid")
    model = LinearModel(params)
    dt = filter_out.dt
    n1 = len(filter_out)
    mu_s = np.empty_like(filter_out.mean)
    R_s = np.empty_like(filter_out.cov)
    mu_s[-1], R_s[-1] = filter_out.mean[-1], filter_out.cov[-1]
    phi = model.transition(dt)
    if scheme == "kalman":
        if filter_out.analysis_cov is None:
            raise InvalidArgumentError("kalman smoother needs a filter run with the kalman scheme")
        for n in range(n1 - 2, -1, -1):
            Ra = filter_out.analysis_cov[n]
            Gt = _regularized_inverse_apply(filter_out.cov[n + 1], phi @ Ra)  # G^T
            mu_s[n] = filter_out.analysis_mean[n] + (mu_s[n + 1] - filter_out.mean[n + 1]) @ Gt
            R_s[n] = condition_cov(Ra + Gt.T @ (R_s[n + 1] - filter_out.cov[n + 1]) @ Gt)
            if not np.all(np.isfinite(R_s[n])):
                raise NumericalFailureError("smoother diverged", time=filter_out.times[n])
    elif scheme == "euler":
        Q, Lam = model.Q, model.Lambda
        for n in range(n1 - 2, -1, -1):
            R = filter_out.cov[n + 1]
            QRinv = _regularized_inverse_apply(R, Q).T  # Q R^-1 (both symmetric)
            back_mu = -model.forcing - Lam @ mu_s[n + 1] + QRinv @ (filter_out.mean[n + 1] - mu_s[n + 1])
            B = Lam + QRinv
            back_R = -B @ R_s[n + 1] - R_s[n + 1] @ B.T + Q
            mu_s[n] = mu_s[n + 1] + dt * back_mu
            R_s[n] = floor_psd(R_s[n + 1] + dt * back_R)
            if not np.all(np.isfinite(R_s[n])):
                raise NumericalFailureError("smoother diverged", time=filter_out.times[n])
    else:
        raise InvalidArgumentError(f"unknown scheme {scheme!r}")
    post = GaussianPosterior(filter_out.times, mu_s, R_s, kind="smoother")
    post.scheme = scheme
    return post


def _psd_sqrt(cov):
    w, v = np.linalg.eigh(symmetrize(cov))
    return v * np.sqrt(np.maximum(w, 0.0))


def backward_sample(smoother_out, filter_out, params, n_samples, seed=0, scheme=None, terminal="sample"):
    """Draw posterior sample paths of the coefficients, sweeping backward in time.

    Each path starts at ``U(T) ~ N(mu_s(T), R_s(T))`` (or exactly at the
    smoother mean with ``terminal="mean"``) and keeps the temporal memory of
    the posterior rather than drawing each time independently.
    """
    scheme = scheme or _scheme_of(filter_out)
    if len(smoother_out) != len(filter_out) or np.abs(smoother_out.times - filter_out.times).max() > 1e-9:
        raise InvalidArgumentError("smoother and filter outputs must share a grid")
    model = LinearModel(params)
    rng = seed if isinstance(seed, np.random.Generator) else _rng.generator(seed, "backward-sample")
    n1, dim = smoother_out.mean.shape
    dt = filter_out.dt
    phi = model.transition(dt)
    U = np.empty((n1, n_samples, dim))
    xi = rng.standard_normal((n1, n_samples, dim))
    U[-1] = smoother_out.mean[-1]
    if terminal == "sample":
        U[-1] += xi[-1] @ _psd_sqrt(smoother_out.cov[-1]).T
    elif terminal != "mean":
        raise InvalidArgumentError("terminal must be 'sample' or 'mean'")
    if scheme == "kalman":
        if filter_out.analysis_cov is None:
            raise InvalidArgumentError("kalman sampler needs a filter run with the kalman scheme")
        for n in range(n1 - 2, -1, -1):
            Ra = filter_out.analysis_cov[n]
            Gt = _regularized_inverse_apply(filter_out.cov[n + 1], phi @ Ra)
            m = filter_out.analysis_mean[n] + (U[n + 1] - filter_out.mean[n + 1]) @ Gt
            C = Ra - Gt.T @ phi @ Ra
            U[n] = m + xi[n] @ _psd_sqrt(C).T
    elif scheme == "euler":
        Q, Lam = model.Q, model.Lambda
        sq = np.sqrt(np.diag(Q) * dt)
        mu_s = smoother_out.mean
        for n in range(n1 - 2, -1, -1):
            QRinv = _regularized_inverse_apply(filter_out.cov[n + 1], Q).T
            B = Lam + QRinv
            dev = U[n + 1] - mu_s[n + 1]
            U[n] = U[n + 1] + (mu_s[n] - mu_s[n + 1]) - dt * dev @ B.T + sq * xi[n]
    else:
        raise InvalidArgumentError(f"unknown scheme {scheme!r}")
    if not np.all(np.isfinite(U)):
        raise NumericalFailureError("backward sampler produced non-finite values")
    coeffs = deaugment(U)
    return [FlowRealization(smoother_out.times, coeffs[:, j], params.mode_set) for j in range(n_samples)]
