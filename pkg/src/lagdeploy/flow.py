"""Spectral stochastic flow: Fourier velocity expansion with OU coefficients.

Velocity on the doubly periodic domain ``[-pi, pi)^2`` is

    u(x, t) = sum_k  c_k(t) exp(i k.x) r_k,

with ``c_{-k} = conj(c_k)`` and ``r_{-k} = conj(r_k)`` so that ``u`` is real.
Each independent pair follows a complex Ornstein-Uhlenbeck process

    dc_k = ((-d_k + i w_k) c_k + f_k) dt + sigma_k dW_k,

where ``W_k`` is complex with independent real and imaginary parts of
variance ``dt / 2`` each. Only one representative per conjugate pair is
stored; the partner is always reconstructed by conjugation.
"""

import csv
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import lfilter

from . import rng as _rng
from .errors import InconsistentStateError, InvalidArgumentError
from .state import GaussianPosterior, augment


def _is_representative(k1, k2):
    return k1 > 0 or (k1 == 0 and k2 > 0)


@dataclass(eq=False)
class ModeSet:
    """Wavenumber lattice split into conjugate pairs.

    ``representatives`` is a ``(P, 2)`` integer array holding one canonical
    wavenumber per pair (first nonzero component positive). ``modes`` lists
    all ``2P`` wavenumbers in lexicographic order.
    """

    representatives: np.ndarray
    kmax: int = None
    modes: np.ndarray = field(init=False, repr=False)
    mode_rep: np.ndarray = field(init=False, repr=False)
    mode_conj: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        reps = np.asarray(self.representatives, dtype=int).reshape(-1, 2)
        if len(reps) == 0:
            raise InvalidArgumentError("mode set must contain at least one pair")
        for k1, k2 in reps:
            if not _is_representative(k1, k2):
                raise InvalidArgumentError(f"({k1},{k2}) is not a canonical pair representative")
        if len({tuple(k) for k in reps}) != len(reps):
            raise InvalidArgumentError("duplicate representatives")
        self.representatives = reps
        full = np.concatenate([reps, -reps])
        order = np.lexsort((full[:, 1], full[:, 0]))
        self.modes = full[order]
        p = len(reps)
        self.mode_rep = order % p
        self.mode_conj = order >= p

    @classmethod
    def from_representatives(cls, reps):
        reps = sorted(tuple(int(v) for v in k) for k in reps)
        return cls(np.array(reps, dtype=int).reshape(-1, 2))

    @property
    def n_pairs(self):
        return len(self.representatives)

    @property
    def n_modes(self):
        return 2 * self.n_pairs

    @property
    def dim(self):
        """Real dimension of the augmented state."""
        return 2 * self.n_pairs

    @property
    def max_wavenumber(self):
        return int(np.abs(self.representatives).max())

    def mode_index(self, k):
        k = np.asarray(k, dtype=int)
        hit = np.flatnonzero((self.modes == k).all(axis=1))
        if len(hit) == 0:
            raise KeyError(tuple(k))
        return int(hit[0])

    def expand(self, rep_values, conjugate=True):
        """Per-representative values ``(..., P)`` -> per-mode values ``(..., 2P)``."""
        rep_values = np.asarray(rep_values)
        out = rep_values[..., self.mode_rep]
        if conjugate:
            out = np.where(self.mode_conj, np.conj(out), out)
        return out

    def reduce(self, mode_values, tol=1e-12):
        """Per-mode complex values -> representatives, checking conjugate symmetry."""
        mode_values = np.asarray(mode_values, dtype=complex)
        if mode_values.shape[-1] != self.n_modes:
            raise InvalidArgumentError(f"expected {self.n_modes} modes, got {mode_values.shape[-1]}")
        rep = np.empty(mode_values.shape[:-1] + (self.n_pairs,), dtype=complex)
        partner = np.empty_like(rep)
        rep[..., self.mode_rep[~self.mode_conj]] = mode_values[..., ~self.mode_conj]
        partner[..., self.mode_rep[self.mode_conj]] = mode_values[..., self.mode_conj]
        scale = max(1.0, float(np.abs(mode_values).max(initial=0.0)))
        if np.abs(partner - np.conj(rep)).max(initial=0.0) > tol * scale:
            raise InconsistentStateError("coefficients violate conjugate symmetry c_{-k} = conj(c_k)")
        return rep


def build_mode_set(kmax):
    """All wavenumbers with ``-kmax <= k1, k2 <= kmax`` except the origin."""
    if int(kmax) != kmax or kmax < 1:
        raise InvalidArgumentError(f"kmax must be a positive integer, got {kmax!r}")
    kmax = int(kmax)
    reps = [
        (k1, k2)
        for k1 in range(-kmax, kmax + 1)
        for k2 in range(-kmax, kmax + 1)
        if _is_representative(k1, k2)
    ]
    ms = ModeSet(np.array(reps, dtype=int), kmax=kmax)
    return ms


def default_eigenvectors(mode_set):
    """Unit incompressible eigenvectors ``r_k = i (-k2, k1) / |k|`` per representative."""
    k = mode_set.representatives.astype(float)
    norm = np.hypot(k[:, 0], k[:, 1])
    return 1j * np.stack([-k[:, 1], k[:, 0]], axis=1) / norm[:, None]


def _per_rep(value, p, dtype=float):
    arr = np.asarray(value, dtype=dtype)
    if arr.ndim == 0:
        arr = np.full(p, arr, dtype=dtype)
    if arr.shape != (p,):
        raise InvalidArgumentError(f"expected scalar or length-{p} parameter, got shape {arr.shape}")
    return arr.copy()


@dataclass(eq=False)
class FlowParams:
    """OU parameters per independent pair plus drifter noise and eigenvectors.

    Conjugate partners are implied: ``d_{-k}=d_k``, ``sigma_{-k}=sigma_k``,
    ``omega_{-k}=-omega_k``, ``f_{-k}=conj(f_k)``, ``r_{-k}=conj(r_k)``.
    """

    mode_set: ModeSet
    d: np.ndarray
    omega: np.ndarray
    f: np.ndarray
    sigma: np.ndarray
    sigma_x: float = 0.1
    eigenvectors: np.ndarray = None

    def __post_init__(self):
        p = self.mode_set.n_pairs
        self.d = _per_rep(self.d, p)
        self.omega = _per_rep(self.omega, p)
        self.f = _per_rep(self.f, p, complex)
        self.sigma = _per_rep(self.sigma, p)
        self.sigma_x = float(self.sigma_x)
        if np.any(self.sigma < 0) or self.sigma_x < 0:
            raise InvalidArgumentError("noise amplitudes must be nonnegative")
        if self.eigenvectors is None:
            self.eigenvectors = default_eigenvectors(self.mode_set)
        r = np.asarray(self.eigenvectors, dtype=complex)
        if r.shape != (p, 2):
            raise InvalidArgumentError(f"eigenvector table must have shape ({p}, 2)")
        k = self.mode_set.representatives
        if np.abs(np.einsum("pc,pc->p", k, r)).max() > 1e-12:
            raise InvalidArgumentError("eigenvectors must satisfy k . r_k = 0")
        if np.abs(np.linalg.norm(r, axis=1) - 1).max() > 1e-12:
            raise InvalidArgumentError("eigenvectors must have unit norm")
        self.eigenvectors = r

    @classmethod
    def uniform(cls, mode_set, d=0.5, omega=0.0, f=0.0, sigma=0.5, sigma_x=0.1):
        return cls(mode_set, d, omega, f, sigma, sigma_x)

    def per_mode(self, name):
        """Expand a parameter to all modes, applying the conjugate relations."""
        values = getattr(self, name)
        if name == "omega":
            return np.where(self.mode_set.mode_conj, -values[self.mode_set.mode_rep], values[self.mode_set.mode_rep])
        if name in ("f", "eigenvectors"):
            out = values[self.mode_set.mode_rep]
            conj = self.mode_set.mode_conj.reshape((-1,) + (1,) * (out.ndim - 1))
            return np.where(conj, np.conj(out), out)
        return values[self.mode_set.mode_rep]

    def with_(self, **changes):
        kw = dict(
            mode_set=self.mode_set, d=self.d, omega=self.omega, f=self.f,
            sigma=self.sigma, sigma_x=self.sigma_x, eigenvectors=self.eigenvectors,
        )
        kw.update(changes)
        return FlowParams(**kw)

    def to_dict(self):
        def compact(a):
            a = np.asarray(a)
            return float(a[0]) if np.all(a == a[0]) else [float(v) for v in a]

        out = {
            "kmax": self.mode_set.kmax,
            "d": compact(self.d),
            "omega": compact(self.omega),
            "f_re": compact(self.f.real),
            "f_im": compact(self.f.imag),
            "sigma": compact(self.sigma),
            "sigma_x": self.sigma_x,
        }
        if self.mode_set.kmax is None:
            out["representatives"] = self.mode_set.representatives.tolist()
        return out

    @classmethod
    def from_dict(cls, data):
        if data.get("representatives") is not None:
            ms = ModeSet.from_representatives(data["representatives"])
        else:
            ms = build_mode_set(data["kmax"])
        f = np.asarray(data.get("f_re", 0.0), dtype=float) + 1j * np.asarray(data.get("f_im", 0.0), dtype=float)
        return cls(
            ms,
            d=data.get("d", 0.5),
            omega=data.get("omega", 0.0),
            f=f,
            sigma=data.get("sigma", 0.5),
            sigma_x=data.get("sigma_x", 0.1),
        )


@dataclass(eq=False)
class FlowRealization:
    """One sample path of the representative coefficients on a uniform grid.

    ``coeffs`` has shape ``(n_times, P)``; the conjugate partners are implicit,
    so conjugate symmetry holds exactly by construction.
    """

    times: np.ndarray
    coeffs: np.ndarray
    mode_set: ModeSet

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.coeffs = np.asarray(self.coeffs, dtype=complex)
        if self.coeffs.shape != (len(self.times), self.mode_set.n_pairs):
            raise InvalidArgumentError("coeffs must have shape (n_times, n_pairs)")

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def span(self):
        return float(self.times[0]), float(self.times[-1])

    def full_coeffs(self):
        """All-mode coefficients ``(n_times, 2P)`` in ``mode_set.modes`` order."""
        return self.mode_set.expand(self.coeffs)

    def index(self, t):
        if len(self.times) == 1:
            return 0
        i = int(round((t - self.times[0]) / self.dt))
        if i < 0 or i >= len(self.times) or abs(self.times[i] - t) > 1e-6 * self.dt:
            raise InvalidArgumentError(f"time {t} is not a knot of the flow grid {self.span}")
        return i

    def window(self, a, b):
        i, j = self.index(a), self.index(b)
        return FlowRealization(self.times[i : j + 1], self.coeffs[i : j + 1], self.mode_set)

    def to_csv(self, path):
        modes = self.mode_set.modes
        full = self.full_coeffs()
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "mode", "k1", "k2", "re", "im"])
            for n, t in enumerate(self.times):
                for m, (k1, k2) in enumerate(modes):
                    c = full[n, m]
                    w.writerow([repr(float(t)), m, int(k1), int(k2), repr(float(c.real)), repr(float(c.imag))])

    @classmethod
    def from_csv(cls, path, mode_set=None):
        data = np.genfromtxt(path, delimiter=",", names=True)
        data = np.atleast_1d(data)
        times = np.unique(data["time"])
        ks = np.stack([data["k1"], data["k2"]], axis=1).astype(int)
        if mode_set is None:
            reps = {tuple(k) for k in ks if _is_representative(*k)}
            mode_set = ModeSet.from_representatives(reps)
            kmax = mode_set.max_wavenumber
            if mode_set.n_pairs == ((2 * kmax + 1) ** 2 - 1) // 2:
                mode_set = build_mode_set(kmax)
        full = np.zeros((len(times), mode_set.n_modes), dtype=complex)
        ti = np.searchsorted(times, data["time"])
        mi = np.array([mode_set.mode_index(k) for k in ks])
        full[ti, mi] = data["re"] + 1j * data["im"]
        return cls(times, mode_set.reduce(full), mode_set)


# --- velocity evaluation -----------------------------------------------------


def phases(x, reps):
    """``exp(i k.x)`` for positions ``(..., 2)`` and representatives ``(P, 2)`` -> ``(..., P)``.

    Uses integer powers of ``exp(i x)`` and ``exp(i y)`` rather than one
    complex exponential per mode.
    """
    x = np.asarray(x, dtype=float)
    kmax = int(np.abs(reps).max())
    ex = np.exp(1j * x[..., 0])
    ey = np.exp(1j * x[..., 1])
    powx = [np.ones_like(ex)]
    powy = [np.ones_like(ey)]
    for _ in range(kmax):
        powx.append(powx[-1] * ex)
        powy.append(powy[-1] * ey)
    # index m + kmax holds exp(i m x) for m in [-kmax, kmax]
    px = np.stack([np.conj(p) for p in powx[:0:-1]] + powx, axis=-1)
    py = np.stack([np.conj(p) for p in powy[:0:-1]] + powy, axis=-1)
    return px[..., reps[:, 0] + kmax] * py[..., reps[:, 1] + kmax]


def rep_velocity(rep_coeffs, eigenvectors, reps, x):
    """Velocity from representative coefficients (conjugate pairs folded in).

    ``rep_coeffs`` broadcasts against the leading axes of ``x``: e.g.
    coefficients ``(J, P)`` with positions ``(J, M, 2)`` need
    ``rep_coeffs[:, None, :]``. Returns real velocities ``(..., 2)``.
    """
    z = phases(x, reps) * rep_coeffs
    return 2.0 * (z @ eigenvectors).real


def velocity_at(coeffs, eigenvectors, x, mode_set):
    """Velocity at ``x`` from the full per-mode coefficient vector.

    The sum runs over every mode explicitly; the imaginary residual must be
    round-off small and is then dropped.
    """
    coeffs = np.asarray(coeffs, dtype=complex)
    mode_set.reduce(coeffs, tol=1e-10)
    r_full = mode_set.expand(np.asarray(eigenvectors).T).T
    x = np.asarray(x, dtype=float)
    e = np.exp(1j * (x @ mode_set.modes.T))
    u = (e * coeffs) @ r_full
    scale = max(1.0, float(np.abs(coeffs).sum()))
    if np.abs(u.imag).max(initial=0.0) > 1e-10 * scale:
        raise InconsistentStateError("velocity has a non-negligible imaginary part")
    return u.real


# --- OU dynamics ---------------------------------------------------------------


def _check_init(init, mode_set):
    init = np.asarray(init, dtype=complex)
    if init.shape[-1] == mode_set.n_modes:
        try:
            return mode_set.reduce(init)
        except InconsistentStateError as exc:
            raise InvalidArgumentError(str(exc)) from None
    if init.shape[-1] != mode_set.n_pairs:
        raise InvalidArgumentError(
            f"init must have {mode_set.n_pairs} representative or {mode_set.n_modes} mode entries"
        )
    return init


def _grid(t_span, dt):
    t0, t1 = map(float, t_span)
    if dt <= 0:
        raise InvalidArgumentError("dt must be positive")
    n = int(round((t1 - t0) / dt))
    if n < 0 or abs(t0 + n * dt - t1) > 1e-9 * max(1.0, abs(t1)):
        raise InvalidArgumentError(f"t_span {t_span} is not a whole number of steps of {dt}")
    return t0 + dt * np.arange(n + 1), n


def ou_paths(params, init, n_steps, dt, rng):
    """Euler-Maruyama paths for a batch of initial states.

    ``init`` has shape ``(J, P)``; returns ``(n_steps + 1, J, P)``. Noise for
    each pair is drawn as ``(n_steps, J, P, 2)`` standard normals scaled by
    ``sigma * sqrt(dt / 2)``.
    """
    init = np.atleast_2d(np.asarray(init, dtype=complex))
    j, p = init.shape
    drift = 1.0 + (-params.d + 1j * params.omega) * dt
    xi = rng.standard_normal((n_steps, j, p, 2))
    noise = (xi[..., 0] + 1j * xi[..., 1]) * (params.sigma * np.sqrt(dt / 2.0))
    drive = np.empty((n_steps + 1, j, p), dtype=complex)
    drive[0] = init
    drive[1:] = noise + params.f * dt
    out = np.empty_like(drive)
    for m in range(p):
        # u[n+1] = drift * u[n] + f dt + noise[n], as a first-order recursive filter
        out[:, :, m] = lfilter([1.0], [1.0, -drift[m]], drive[:, :, m], axis=0)
    return out


def simulate_flow(params, init, t_span, dt=1e-3, seed=0):
    """Simulate one realization of the coefficients on ``t_span``.

    ``init`` is either the ``P`` representative coefficients or the full
    per-mode vector (which must be conjugate symmetric).
    """
    init = _check_init(init, params.mode_set)
    times, n = _grid(t_span, dt)
    rng = seed if isinstance(seed, np.random.Generator) else _rng.generator(seed, "flow")
    path = ou_paths(params, init[None], n, dt, rng)[:, 0]
    return FlowRealization(times, path, params.mode_set)


def simulate_flows(params, inits, t_span, dt=1e-3, seed=0):
    """Batch of realizations sharing a grid; ``inits`` is ``(J, P)``."""
    inits = np.atleast_2d(np.asarray(inits, dtype=complex))
    times, n = _grid(t_span, dt)
    rng = seed if isinstance(seed, np.random.Generator) else _rng.generator(seed, "flows")
    paths = ou_paths(params, inits, n, dt, rng)
    return [FlowRealization(times, paths[:, i], params.mode_set) for i in range(len(inits))]


def equilibrium_moments(params):
    """Per-representative complex mean and complex variance of the stationary law."""
    if np.any(params.d <= 0):
        raise InvalidArgumentError("equilibrium requires d_k > 0 for all modes")
    mean = params.f / (params.d - 1j * params.omega)
    var = params.sigma**2 / (2.0 * params.d)
    return mean, var


def equilibrium_distribution(params, time=0.0):
    """Statistical steady state as a single-time Gaussian over the augmented state."""
    mean, var = equilibrium_moments(params)
    cov = np.diag(np.concatenate([var, var]) / 2.0)
    return GaussianPosterior([time], augment(mean), cov, kind="equilibrium")


def sample_equilibrium(params, rng, size=None):
    """Draw representative coefficients from the equilibrium distribution."""
    mean, var = equilibrium_moments(params)
    shape = (params.mode_set.n_pairs,) if size is None else (size, params.mode_set.n_pairs)
    xi = rng.standard_normal(shape + (2,))
    return mean + np.sqrt(var / 2.0) * (xi[..., 0] + 1j * xi[..., 1])
