"""Arc-length Lagrangian descriptor maps and their ensemble expectation."""

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .errors import InvalidArgumentError

DEFAULT_GRID = 32


def grid_centers(m):
    """Cell centers of an ``m x m`` lattice over ``[-pi, pi)``."""
    if m < 1:
        raise InvalidArgumentError("grid size must be positive")
    h = 2.0 * np.pi / m
    return -np.pi + h * (np.arange(m) + 0.5)


def grid_points(m):
    """All cell centers as ``(m*m, 2)``, row-major in ``(i, j)`` with ``x = c[i]``, ``y = c[j]``."""
    c = grid_centers(m)
    xx, yy = np.meshgrid(c, c, indexing="ij")
    return np.stack([xx.ravel(), yy.ravel()], axis=1)


@dataclass(eq=False)
class CostMap:
    """Scalar field on the cell centers of an ``M x M`` grid.

    ``values[i, j]`` sits at ``(c[i], c[j])``; the linear cell index is
    ``i * M + j``. ``mask`` marks excluded cells.
    """

    values: np.ndarray
    mask: np.ndarray = None
    normalized: bool = False
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        m = self.values.shape[0]
        if self.values.shape != (m, m):
            raise InvalidArgumentError("cost map must be square")
        self.mask = np.zeros((m, m), bool) if self.mask is None else np.asarray(self.mask, bool)

    @property
    def size(self):
        return self.values.shape[0]

    @property
    def centers(self):
        return grid_centers(self.size)

    @property
    def points(self):
        return grid_points(self.size)

    def normalize(self):
        """Scale so the maximum over unmasked cells is one."""
        free = self.values[~self.mask]
        top = free.max() if free.size else 0.0
        values = self.values / top if top > 0 else self.values.copy()
        return CostMap(values, self.mask.copy(), True, dict(self.provenance))

    def with_mask(self, mask):
        return CostMap(self.values, mask, self.normalized, dict(self.provenance))

    def to_csv(self, path):
        c = self.centers
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["i", "j", "x", "y", "value", "masked"])
            for i in range(self.size):
                for j in range(self.size):
                    w.writerow([i, j, repr(float(c[i])), repr(float(c[j])), repr(float(self.values[i, j])), int(self.mask[i, j])])

    def manifest(self):
        return {"size": self.size, "normalized": self.normalized, "provenance": self.provenance}

    def write(self, csv_path, manifest_path):
        self.to_csv(csv_path)
        with open(manifest_path, "w") as fh:
            json.dump(self.manifest(), fh, indent=2, default=float)

    @classmethod
    def from_csv(cls, path, manifest_path=None):
        data = np.atleast_1d(np.genfromtxt(path, delimiter=",", names=True))
        m = int(data["i"].max()) + 1
        values = np.zeros((m, m))
        mask = np.zeros((m, m), bool)
        i, j = data["i"].astype(int), data["j"].astype(int)
        values[i, j] = data["value"]
        mask[i, j] = data["masked"].astype(bool)
        meta = {}
        if manifest_path is not None:
            with open(manifest_path) as fh:
                meta = json.load(fh)
        return cls(values, mask, bool(meta.get("normalized", False)), meta.get("provenance", {}))


def _check_window(times, t_star, tau1, tau2):
    if tau1 < 0 or tau2 < 0 or (tau1 == 0 and tau2 == 0):
        raise InvalidArgumentError("tau1 and tau2 must be nonnegative and not both zero")
    lo, hi = float(times[0]), float(times[-1])
    tol = 1e-9 * max(1.0, abs(hi))
    if t_star - tau1 < lo - tol or t_star + tau2 > hi + tol:
        raise InvalidArgumentError(
            f"descriptor window [{t_star - tau1}, {t_star + tau2}] outside flow span [{lo}, {hi}]"
        )


@njit(cache=True, fastmath=True)
def _arc_kernel(w_re, w_im, k1, k2, kmax, starts, k_star, sub, n_fwd, n_bwd, dt):
    """Arc lengths for probes through ``J`` flows.

    ``w[j, knot, p, c] = c_p r_p[c]`` so that the velocity component is
    ``2 Re sum_p w[..., p, c] exp(i k_p . x)``. Probe positions enter only
    through ``exp(ix)`` and ``exp(iy)``, so those unit phasors are carried and
    advanced by the Euler displacement as a rotation (series to sixth order,
    exact to rounding for the step sizes used). Loops run over probes
    innermost so they vectorize.
    """
    n_flows = w_re.shape[0]
    n_pairs = w_re.shape[2]
    n_probes = starts.shape[0]
    out = np.zeros((n_flows, n_probes))
    pxr = np.empty((kmax + 1, n_probes))
    pxi = np.empty((kmax + 1, n_probes))
    pyr = np.empty((2 * kmax + 1, n_probes))
    pyi = np.empty((2 * kmax + 1, n_probes))
    exr = np.empty(n_probes)
    exi = np.empty(n_probes)
    eyr = np.empty(n_probes)
    eyi = np.empty(n_probes)
    u = np.empty(n_probes)
    v = np.empty(n_probes)
    for j in range(n_flows):
        for direction in (1, -1):
            n_steps = n_fwd if direction > 0 else n_bwd
            for g in range(n_probes):
                exr[g] = np.cos(starts[g, 0])
                exi[g] = np.sin(starts[g, 0])
                eyr[g] = np.cos(starts[g, 1])
                eyi[g] = np.sin(starts[g, 1])
            for n in range(n_steps):
                k = k_star + direction * n
                knot = (k if direction > 0 else k - 1) // sub
                for g in range(n_probes):
                    pxr[0, g] = 1.0
                    pxi[0, g] = 0.0
                    pyr[kmax, g] = 1.0
                    pyi[kmax, g] = 0.0
                for m in range(1, kmax + 1):
                    for g in range(n_probes):
                        ar = pxr[m - 1, g]
                        ai = pxi[m - 1, g]
                        pxr[m, g] = ar * exr[g] - ai * exi[g]
                        pxi[m, g] = ar * exi[g] + ai * exr[g]
                        br = pyr[kmax + m - 1, g]
                        bi = pyi[kmax + m - 1, g]
                        cr = br * eyr[g] - bi * eyi[g]
                        ci = br * eyi[g] + bi * eyr[g]
                        pyr[kmax + m, g] = cr
                        pyi[kmax + m, g] = ci
                        pyr[kmax - m, g] = cr
                        pyi[kmax - m, g] = -ci
                for g in range(n_probes):
                    u[g] = 0.0
                    v[g] = 0.0
                for p in range(n_pairs):
                    a = k1[p]
                    b = k2[p] + kmax
                    w0r = w_re[j, knot, p, 0]
                    w0i = w_im[j, knot, p, 0]
                    w1r = w_re[j, knot, p, 1]
                    w1i = w_im[j, knot, p, 1]
                    for g in range(n_probes):
                        phr = pxr[a, g] * pyr[b, g] - pxi[a, g] * pyi[b, g]
                        phi = pxr[a, g] * pyi[b, g] + pxi[a, g] * pyr[b, g]
                        u[g] += phr * w0r - phi * w0i
                        v[g] += phr * w1r - phi * w1i
                for g in range(n_probes):
                    uu = 2.0 * u[g]
                    vv = 2.0 * v[g]
                    out[j, g] += np.sqrt(uu * uu + vv * vv) * dt
                    th = direction * dt * uu
                    t2 = th * th
                    c = 1.0 - t2 * (0.5 - t2 * (1.0 / 24.0 - t2 / 720.0))
                    s = th * (1.0 - t2 * (1.0 / 6.0 - t2 / 120.0))
                    r = exr[g] * c - exi[g] * s
                    exi[g] = exr[g] * s + exi[g] * c
                    exr[g] = r
                    th = direction * dt * vv
                    t2 = th * th
                    c = 1.0 - t2 * (0.5 - t2 * (1.0 / 24.0 - t2 / 720.0))
                    s = th * (1.0 - t2 * (1.0 / 6.0 - t2 / 120.0))
                    r = eyr[g] * c - eyi[g] * s
                    eyi[g] = eyr[g] * s + eyi[g] * c
                    eyr[g] = r
    return out


def _arc_lengths(coeffs, times, eigenvectors, reps, starts, t_star, tau1, tau2, dt):
    """Arc length of noiseless probe paths through a batch of flows.

    ``coeffs`` is ``(J, n_times, P)`` on the shared grid ``times``; returns
    ``(J, n_probes)``. Velocity between knots is held at the left knot of the
    interval being traversed, as in :func:`lagdeploy.tracers.advect`.
    """
    fdt = float(times[1] - times[0])
    sub = fdt / dt
    if abs(sub - round(sub)) > 1e-9:
        raise InvalidArgumentError("descriptor dt must divide the flow dt")
    sub = int(round(sub))
    k_star = int(round((t_star - times[0]) / dt))
    weights = coeffs[..., None] * eigenvectors
    if reps[:, 0].min() < 0:
        raise InvalidArgumentError("representatives must have k1 >= 0")
    return _arc_kernel(
        np.ascontiguousarray(weights.real),
        np.ascontiguousarray(weights.imag),
        np.ascontiguousarray(reps[:, 0]),
        np.ascontiguousarray(reps[:, 1]),
        int(np.abs(reps).max()),
        np.ascontiguousarray(starts, dtype=float),
        k_star,
        sub,
        int(round(tau2 / dt)),
        int(round(tau1 / dt)),
        float(dt),
    )


def ld_single(flow, params, grid=DEFAULT_GRID, t_star=0.0, tau1=0.0, tau2=1.0, dt=None):
    """Unnormalized arc-length descriptor of one flow realization on an ``M x M`` grid."""
    _check_window(flow.times, t_star, tau1, tau2)
    dt = flow.dt if dt is None else float(dt)
    pts = grid_points(grid)
    arc = _arc_lengths(flow.coeffs[None], flow.times, params.eigenvectors, flow.mode_set.representatives,
                       pts, t_star, tau1, tau2, dt)
    prov = {"kind": "surrogate", "realizations": 1, "window": [t_star - tau1, t_star + tau2], "t_star": t_star}
    return CostMap(arc[0].reshape(grid, grid), provenance=prov)


def ld_expected(flows, params, grid=DEFAULT_GRID, t_star=0.0, tau1=0.0, tau2=1.0, dt=None, chunk=10,
                keep_members=False):
    """Expected descriptor over realizations, normalized to a maximum of one.

    With ``keep_members`` the unnormalized per-realization maps are attached
    as ``members`` on the returned map.
    """
    flows = list(flows)
    if not flows:
        raise InvalidArgumentError("ld_expected needs at least one realization")
    times = flows[0].times
    for f in flows[1:]:
        if f.coeffs.shape != flows[0].coeffs.shape or np.abs(f.times - times).max() > 1e-9:
            raise InvalidArgumentError("realizations must share a time grid")
    _check_window(times, t_star, tau1, tau2)
    dt = flows[0].dt if dt is None else float(dt)
    pts = grid_points(grid)
    i0 = int(round((t_star - tau1 - times[0]) / flows[0].dt))
    i1 = int(round((t_star + tau2 - times[0]) / flows[0].dt))
    sub_times = times[i0 : i1 + 1]
    arcs = []
    for s in range(0, len(flows), chunk):
        coeffs = np.stack([f.coeffs[i0 : i1 + 1] for f in flows[s : s + chunk]])
        arcs.append(_arc_lengths(coeffs, sub_times, params.eigenvectors, flows[0].mode_set.representatives,
                                 pts, t_star, tau1, tau2, dt))
    arcs = np.concatenate(arcs)
    prov = {"kind": "surrogate", "realizations": len(flows), "window": [t_star - tau1, t_star + tau2],
            "t_star": t_star}
    out = CostMap(arcs.mean(axis=0).reshape(grid, grid), provenance=prov).normalize()
    if keep_members:
        out.members = arcs.reshape(len(flows), grid, grid)
    return out
