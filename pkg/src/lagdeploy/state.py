"""Real-augmented spectral state and Gaussian posterior containers.

The complex coefficients of the independent mode pairs are stacked as
``[Re c_0 .. Re c_{P-1}, Im c_0 .. Im c_{P-1}]`` so every covariance handled
by the assimilation and information code is a real symmetric matrix of size
``2P``.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError


def augment(coeffs):
    """Complex representative coefficients ``(..., P)`` -> real state ``(..., 2P)``."""
    coeffs = np.asarray(coeffs)
    return np.concatenate([coeffs.real, coeffs.imag], axis=-1).astype(float)


def deaugment(state):
    """Inverse of :func:`augment`."""
    state = np.asarray(state, dtype=float)
    if state.shape[-1] % 2:
        raise InvalidArgumentError("augmented state must have even length")
    p = state.shape[-1] // 2
    return state[..., :p] + 1j * state[..., p:]


def symmetrize(cov):
    return 0.5 * (cov + np.swapaxes(cov, -1, -2))


def floor_psd(cov, floor=0.0):
    """Symmetrize and clip eigenvalues below ``floor``; works on stacks."""
    cov = symmetrize(cov)
    w, v = np.linalg.eigh(cov)
    w = np.maximum(w, floor)
    return (v * w[..., None, :]) @ np.swapaxes(v, -1, -2)


def condition_cov(cov):
    """Symmetrize, and eigen-floor at zero only where the matrix is not PD.

    A successful Cholesky factorization certifies positive definiteness, in
    which case flooring at zero would be a no-op.
    """
    cov = symmetrize(cov)
    try:
        np.linalg.cholesky(cov)
        return cov
    except np.linalg.LinAlgError:
        return floor_psd(cov)


@dataclass(eq=False)
class GaussianPosterior:
    """Time-indexed Gaussian over the real-augmented state.

    ``mean`` has shape ``(n_times, dim)`` and ``cov`` ``(n_times, dim, dim)``.
    Filter outputs also keep the post-observation (analysis) moments used by
    the smoother and the backward sampler.
    """

    times: np.ndarray
    mean: np.ndarray
    cov: np.ndarray
    analysis_mean: np.ndarray = field(default=None, repr=False)
    analysis_cov: np.ndarray = field(default=None, repr=False)
    kind: str = "filter"

    def __post_init__(self):
        self.times = np.atleast_1d(np.asarray(self.times, dtype=float))
        self.mean = np.asarray(self.mean, dtype=float)
        self.cov = np.asarray(self.cov, dtype=float)
        if self.mean.ndim == 1:
            self.mean = self.mean[None]
        if self.cov.ndim == 2:
            self.cov = self.cov[None]
        n, dim = self.mean.shape
        if self.cov.shape != (n, dim, dim) or self.times.shape != (n,):
            raise InvalidArgumentError(
                f"inconsistent posterior shapes: times {self.times.shape}, "
                f"mean {self.mean.shape}, cov {self.cov.shape}"
            )

    @property
    def dim(self):
        return self.mean.shape[1]

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    def __len__(self):
        return len(self.times)

    def index(self, t):
        """Grid index of time ``t`` (nearest knot)."""
        i = int(np.argmin(np.abs(self.times - t)))
        if len(self.times) > 1 and abs(self.times[i] - t) > 1e-6 * max(self.dt, 1e-12):
            raise InvalidArgumentError(f"time {t} is not on the posterior grid")
        return i

    def at(self, t):
        """Single-time slice as a new posterior."""
        i = self.index(t)
        return GaussianPosterior(self.times[i : i + 1], self.mean[i : i + 1], self.cov[i : i + 1], kind=self.kind)

    def last(self):
        return GaussianPosterior(self.times[-1:], self.mean[-1:], self.cov[-1:], kind=self.kind)

    def window(self, a, b):
        i, j = self.index(a), self.index(b)
        return GaussianPosterior(
            self.times[i : j + 1],
            self.mean[i : j + 1],
            self.cov[i : j + 1],
            None if self.analysis_mean is None else self.analysis_mean[i : j + 1],
            None if self.analysis_cov is None else self.analysis_cov[i : j + 1],
            kind=self.kind,
        )

    def min_eigenvalue_ratio(self):
        """min eigenvalue / trace over all stored times (PSD diagnostic)."""
        w = np.linalg.eigvalsh(symmetrize(self.cov))
        tr = np.trace(self.cov, axis1=1, axis2=2)
        return float(np.min(w[:, 0] / np.maximum(tr, 1e-300)))
