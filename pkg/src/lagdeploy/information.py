"""Gaussian entropies and relative-entropy information gain.

The information gain of a posterior ``p = N(m, R)`` over the model
equilibrium ``q = N(m_q, R_q)`` splits into

    signal     = 1/2 (m - m_q)^T R_q^{-1} (m - m_q)
    dispersion = -1/2 log det(R R_q^{-1}) + 1/2 (tr(R R_q^{-1}) - dim)

in nats.
"""

import json
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidArgumentError
from .state import symmetrize


@dataclass(frozen=True)
class InfoGain:
    total: float
    signal: float
    dispersion: float
    time_window: tuple = None
    n_ensemble: int = 1

    def to_dict(self):
        out = asdict(self)
        out["time_window"] = None if self.time_window is None else [float(v) for v in self.time_window]
        return out

    @classmethod
    def from_dict(cls, data):
        win = data.get("time_window")
        return cls(
            float(data["total"]),
            float(data["signal"]),
            float(data["dispersion"]),
            None if win is None else tuple(win),
            int(data.get("n_ensemble", 1)),
        )

    def to_json(self):
        return json.dumps(self.to_dict())


class ReferenceGaussian:
    """Precomputed factorization of the reference (equilibrium) Gaussian."""

    def __init__(self, mean, cov):
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        if cov.shape != (len(mean), len(mean)):
            raise InvalidArgumentError("reference mean/cov dimensions disagree")
        try:
            chol = np.linalg.cholesky(symmetrize(cov))
        except np.linalg.LinAlgError:
            raise InvalidArgumentError("reference covariance must be positive definite") from None
        self.mean = mean
        self.cov = cov
        self.dim = len(mean)
        self.whiten = np.linalg.inv(chol)
        self.logdet = 2.0 * np.log(np.diag(chol)).sum()
        self.floor = 1e-12 * np.trace(cov)

    def terms(self, mean, cov):
        """Signal and dispersion for stacked posteriors ``(..., D)``, ``(..., D, D)``."""
        mean = np.asarray(mean, dtype=float)
        cov = np.asarray(cov, dtype=float)
        if mean.shape[-1] != self.dim or cov.shape[-2:] != (self.dim, self.dim):
            raise InvalidArgumentError(
                f"dimension mismatch: posterior {mean.shape[-1]}, reference {self.dim}"
            )
        delta = (mean - self.mean) @ self.whiten.T
        signal = 0.5 * np.einsum("...i,...i->...", delta, delta)
        cov = symmetrize(cov)
        white = self.whiten @ cov @ self.whiten.T
        trace = np.trace(white, axis1=-2, axis2=-1)
        try:
            chol = np.linalg.cholesky(white)
            logdet = 2.0 * np.log(np.diagonal(chol, axis1=-2, axis2=-1)).sum(axis=-1)
        except np.linalg.LinAlgError:
            # singular posterior: floor its eigenvalues in the original frame
            w = np.maximum(np.linalg.eigvalsh(cov), self.floor)
            logdet = np.log(w).sum(axis=-1) - self.logdet
        dispersion = -0.5 * logdet + 0.5 * (trace - self.dim)
        return signal, dispersion


def gaussian_relative_entropy(p_mean, p_cov, q_mean, q_cov):
    """Relative entropy of ``N(p_mean, p_cov)`` with respect to ``N(q_mean, q_cov)``."""
    p_mean = np.atleast_1d(np.asarray(p_mean, dtype=float))
    p_cov = np.atleast_2d(np.asarray(p_cov, dtype=float))
    ref = ReferenceGaussian(q_mean, q_cov)
    if p_mean.shape != (ref.dim,) or p_cov.shape != (ref.dim, ref.dim):
        raise InvalidArgumentError(f"dimension mismatch: posterior {p_mean.shape}, reference {ref.dim}")
    signal, dispersion = ref.terms(p_mean, p_cov)
    return InfoGain(float(signal + dispersion), float(signal), float(dispersion))


def entropy_gaussian(cov):
    """Differential entropy ``1/2 log det(2 pi e cov)``; ``-inf`` for singular ``cov``."""
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    sign, logdet = np.linalg.slogdet(2.0 * np.pi * np.e * symmetrize(cov))
    if sign <= 0:
        return -np.inf
    return 0.5 * logdet


def causation_entropy_original(cov_set1, cov_set12):
    """Entropy reduction ``H(u | x1) - H(u | x1, x2)`` for Gaussian posteriors."""
    return entropy_gaussian(cov_set1) - entropy_gaussian(cov_set12)


def causation_entropy_modified(mean12, cov12, mean1, cov1):
    """Relative entropy of the L1+L2 posterior with respect to the L1-only posterior."""
    return gaussian_relative_entropy(mean12, cov12, mean1, cov1)


def _window_indices(times, window):
    a, b = map(float, window)
    if b < a:
        raise InvalidArgumentError("time window is empty")
    dt = float(times[1] - times[0]) if len(times) > 1 else 1.0
    tol = 1e-6 * dt
    if a < times[0] - tol or b > times[-1] + tol:
        raise InvalidArgumentError(f"window {window} outside posterior span [{times[0]}, {times[-1]}]")
    idx = np.flatnonzero((times >= a - tol) & (times <= b + tol))
    if len(idx) == 0:
        raise InvalidArgumentError("time window contains no grid times")
    return idx


def time_averaged_gain(posterior, equilibrium, window):
    """Mean information gain over all grid times in ``[a, b]``, both ends included."""
    idx = _window_indices(posterior.times, window)
    ref = ReferenceGaussian(equilibrium.mean[-1], equilibrium.cov[-1])
    signal, dispersion = ref.terms(posterior.mean[idx], posterior.cov[idx])
    s, d = float(np.mean(signal)), float(np.mean(dispersion))
    return InfoGain(s + d, s, d, (float(window[0]), float(window[1])), 1)


def expected_gain(gains):
    """Component-wise ensemble mean of a list of gains."""
    gains = list(gains)
    if not gains:
        raise InvalidArgumentError("expected_gain needs at least one gain")
    windows = {g.time_window for g in gains}
    if len(windows) > 1:
        raise InvalidArgumentError("gains were computed over different windows")
    s = float(np.mean([g.signal for g in gains]))
    d = float(np.mean([g.dispersion for g in gains]))
    return InfoGain(s + d, s, d, gains[0].time_window, len(gains))


class GainAccumulator:
    """Running time average of the gain for a batch of filters.

    Pass ``accumulator.update`` as the ``callback`` of
    :func:`lagdeploy.assimilation.filter_batch`.
    """

    def __init__(self, equilibrium, times, window):
        self.ref = ReferenceGaussian(equilibrium.mean[-1], equilibrium.cov[-1])
        self.window = (float(window[0]), float(window[1]))
        self.indices = set(_window_indices(np.asarray(times), window).tolist())
        self.count = 0
        self.signal = 0.0
        self.dispersion = 0.0

    def update(self, n, mean, cov):
        if n in self.indices:
            s, d = self.ref.terms(mean, cov)
            self.signal = self.signal + s
            self.dispersion = self.dispersion + d
            self.count += 1

    def gains(self):
        s = np.atleast_1d(self.signal / self.count)
        d = np.atleast_1d(self.dispersion / self.count)
        return [InfoGain(float(a + b), float(a), float(b), self.window, 1) for a, b in zip(s, d)]
