"""Drifter trajectories driven by a flow realization on the periodic domain."""

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .errors import InvalidArgumentError
from .flow import rep_velocity

TWO_PI = 2.0 * np.pi
LABELS = ("existing", "new", "candidate", "probe")


def wrap(x):
    """Map coordinates onto the canonical interval ``[-pi, pi)``."""
    y = np.mod(np.asarray(x, dtype=float) + np.pi, TWO_PI)
    y = np.where(y >= TWO_PI, 0.0, y)
    return y - np.pi


def torus_delta(a, b):
    """Shortest signed displacement ``a - b`` on the torus, componentwise."""
    d = np.mod(np.asarray(a, dtype=float) - np.asarray(b, dtype=float) + np.pi, TWO_PI) - np.pi
    return d


def torus_distance(a, b):
    return np.linalg.norm(torus_delta(a, b), axis=-1)


@dataclass(eq=False)
class TrajectorySet:
    """Positions ``(n_times, L, 2)`` on a uniform time grid, with per-drifter labels."""

    times: np.ndarray
    positions: np.ndarray
    labels: list = field(default_factory=list)
    seed: object = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float)
        self.positions = np.asarray(self.positions, dtype=float).reshape(len(self.times), -1, 2)
        if not self.labels:
            self.labels = ["existing"] * self.n_drifters
        self.labels = list(self.labels)
        if len(self.labels) != self.n_drifters:
            raise InvalidArgumentError("one label per drifter required")
        bad = set(self.labels) - set(LABELS)
        if bad:
            raise InvalidArgumentError(f"unknown labels {sorted(bad)}")

    @property
    def n_drifters(self):
        return self.positions.shape[1]

    @property
    def dt(self):
        return float(self.times[1] - self.times[0]) if len(self.times) > 1 else 0.0

    @property
    def span(self):
        return float(self.times[0]), float(self.times[-1])

    def index(self, t):
        if len(self.times) == 1:
            return 0
        i = int(round((t - self.times[0]) / self.dt))
        if i < 0 or i >= len(self.times) or abs(self.times[i] - t) > 1e-6 * self.dt:
            raise InvalidArgumentError(f"time {t} is not on the trajectory grid {self.span}")
        return i

    def window(self, a, b):
        i, j = self.index(a), self.index(b)
        return TrajectorySet(self.times[i : j + 1], self.positions[i : j + 1], self.labels, self.seed)

    def at(self, t):
        return self.positions[self.index(t)]

    def join(self, other):
        """Concatenate drifters of two sets on the same grid."""
        if len(self.times) != len(other.times) or np.abs(self.times - other.times).max(initial=0) > 1e-9:
            raise InvalidArgumentError("trajectory sets live on different time grids")
        return TrajectorySet(
            self.times,
            np.concatenate([self.positions, other.positions], axis=1),
            self.labels + other.labels,
            self.seed,
        )

    def relabel(self, label):
        return TrajectorySet(self.times, self.positions, [label] * self.n_drifters, self.seed)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["time", "drifter", "label", "x", "y"])
            for n, t in enumerate(self.times):
                for l in range(self.n_drifters):
                    x, y = self.positions[n, l]
                    w.writerow([repr(float(t)), l, self.labels[l], repr(float(x)), repr(float(y))])

    def manifest(self):
        seed = self.seed
        if isinstance(seed, np.random.SeedSequence):
            seed = [int(v) for v in np.atleast_1d(seed.entropy)]
        return {
            "seed": seed,
            "dt": self.dt,
            "span": list(self.span),
            "n_drifters": self.n_drifters,
            "labels": self.labels,
        }

    def write(self, csv_path, manifest_path):
        self.to_csv(csv_path)
        with open(manifest_path, "w") as fh:
            json.dump(self.manifest(), fh, indent=2)

    @classmethod
    def from_csv(cls, path):
        times, rows = [], {}
        with open(path, newline="") as fh:
            for rec in csv.DictReader(fh):
                t = float(rec["time"])
                if not times or times[-1] != t:
                    times.append(t)
                rows.setdefault(int(rec["drifter"]), []).append((rec["label"], float(rec["x"]), float(rec["y"])))
        ids = sorted(rows)
        pos = np.array([[(x, y) for _, x, y in rows[i]] for i in ids]).transpose(1, 0, 2)
        labels = [rows[i][0][0] for i in ids]
        return cls(np.array(times), pos, labels)


def uniform_initial_positions(n, seed=0):
    """``n`` i.i.d. uniform positions on ``[-pi, pi)^2``."""
    if n < 0:
        raise InvalidArgumentError("drifter count must be nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) else _rng.generator(seed, "initial-positions")
    return rng.uniform(-np.pi, np.pi, size=(int(n), 2))


def _drifter_noise(seed, n_drifters, n_steps):
    """Independent standard-normal increments per drifter, ``(n_steps, L, 2)``."""
    out = np.empty((n_steps, n_drifters, 2))
    for l in range(n_drifters):
        out[:, l] = _rng.generator(seed, "drifter", l).standard_normal((n_steps, 2))
    return out


def advect(flow, params, starts, t_span, dt=None, seed=0, noise_on=True, label="existing"):
    """Euler-Maruyama drifter paths through ``flow`` over ``t_span = (t_from, t_to)``.

    ``t_to < t_from`` integrates backward in time with negated drift. The
    velocity between flow knots is held at the left knot of the interval.
    The result is always returned on an ascending time grid.
    """
    starts = wrap(np.asarray(starts, dtype=float).reshape(-1, 2))
    t_from, t_to = map(float, t_span)
    lo, hi = flow.span
    tol = 1e-9 * max(1.0, abs(hi))
    if min(t_from, t_to) < lo - tol or max(t_from, t_to) > hi + tol:
        raise InvalidArgumentError(f"t_span {t_span} outside flow span {flow.span}")
    fdt = flow.dt if len(flow.times) > 1 else (dt or 0.0)
    dt = fdt if dt is None else float(dt)
    if dt <= 0:
        raise InvalidArgumentError("dt must be positive")
    sub = fdt / dt
    if abs(sub - round(sub)) > 1e-9:
        raise InvalidArgumentError("tracer dt must divide the flow dt")
    sub = int(round(sub))
    n_steps = int(round(abs(t_to - t_from) / dt))
    if abs(n_steps * dt - abs(t_to - t_from)) > 1e-9 * max(1.0, abs(t_to)):
        raise InvalidArgumentError("t_span must be a whole number of steps")
    direction = 1 if t_to >= t_from else -1
    k0 = int(round((t_from - lo) / dt))
    n_drift = len(starts)
    noise = (
        params.sigma_x * np.sqrt(dt) * _drifter_noise(seed, n_drift, n_steps)
        if noise_on and params.sigma_x > 0 and n_drift
        else None
    )
    reps = flow.mode_set.representatives
    r = params.eigenvectors
    path = np.empty((n_steps + 1, n_drift, 2))
    path[0] = starts
    x = starts
    for n in range(n_steps):
        k = k0 + direction * n
        # left knot of the interval being traversed, in flow-grid units
        knot = (k if direction > 0 else k - 1) // sub
        u = rep_velocity(flow.coeffs[knot], r, reps, x)
        x = x + direction * dt * u
        if noise is not None:
            x = x + noise[n]
        x = wrap(x)
        path[n + 1] = x
    times = t_from + direction * dt * np.arange(n_steps + 1)
    if direction < 0:
        times, path = times[::-1], path[::-1]
    return TrajectorySet(times, path, [label] * n_drift, seed)
