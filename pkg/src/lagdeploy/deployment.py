"""Drifter placement from cost maps, greedy search on exact gains and random baselines."""

import json
from dataclasses import dataclass, field

import numpy as np

from . import rng as _rng
from .descriptor import CostMap, grid_points
from .errors import InfeasiblePlacementError, InvalidArgumentError, SearchFailureError
from .tracers import torus_distance

STRATEGIES = (
    "surrogate_all_at_once",
    "surrogate_sequential",
    "brute_force_greedy",
    "random",
    "random_with_distance",
)
MAX_ATTEMPTS = 100_000
RESTART_AFTER = 2_000


@dataclass(eq=False)
class DeploymentPlan:
    """Positions of the new drifters at the deployment instant."""

    new_positions: np.ndarray
    strategy: str
    min_distance: float = 0.0
    source_map: dict = field(default_factory=dict)
    seed: object = None
    cells: list = None

    def __post_init__(self):
        self.new_positions = np.asarray(self.new_positions, dtype=float).reshape(-1, 2)
        if self.strategy not in STRATEGIES:
            raise InvalidArgumentError(f"unknown strategy {self.strategy!r}")

    @property
    def n_new(self):
        return len(self.new_positions)

    def violations(self, existing):
        """Count of distance constraints broken against ``existing`` and among the new positions."""
        return _violations(self.new_positions, _as_points(existing), self.min_distance)

    def to_dict(self):
        return {
            "strategy": self.strategy,
            "positions": self.new_positions.tolist(),
            "min_distance": float(self.min_distance),
            "seed": self.seed,
            "cells": self.cells,
            "provenance": self.source_map,
        }

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data):
        return cls(
            np.array(data["positions"], dtype=float).reshape(-1, 2),
            data["strategy"],
            float(data.get("min_distance", 0.0)),
            data.get("provenance", {}),
            data.get("seed"),
            data.get("cells"),
        )


def _as_points(points):
    if points is None:
        return np.zeros((0, 2))
    return np.asarray(points, dtype=float).reshape(-1, 2)


def _violations(new, existing, min_distance):
    if min_distance <= 0 or len(new) == 0:
        return 0
    count = 0
    if len(existing):
        count += int((torus_distance(new[:, None], existing[None]) < min_distance).sum())
    if len(new) > 1:
        d = torus_distance(new[:, None], new[None])
        count += int((d[np.triu_indices(len(new), 1)] < min_distance).sum())
    return count


def apply_exclusion(cost_map, centers, min_distance):
    """Mask every cell closer than ``min_distance`` (torus metric) to any center."""
    if min_distance < 0:
        raise InvalidArgumentError("min_distance must be nonnegative")
    centers = _as_points(centers)
    mask = cost_map.mask.copy()
    if min_distance > 0 and len(centers):
        d = torus_distance(cost_map.points[:, None], centers[None])
        mask |= (d < min_distance).any(axis=1).reshape(mask.shape)
    return cost_map.with_mask(mask)


def _argmax_cell(cost_map):
    """Unmasked argmax; ties go to the lowest row-major index."""
    values = np.where(cost_map.mask, -np.inf, cost_map.values).ravel()
    if not np.isfinite(values).any():
        return None
    return int(np.argmax(values))  # first occurrence


def select_all_at_once(cost_map, existing, n_new, min_distance):
    """Greedy masked argmax picks on a single fixed map."""
    if n_new < 1:
        raise InvalidArgumentError("n_new must be at least 1")
    current = apply_exclusion(cost_map, existing, min_distance)
    pts = cost_map.points
    picks = []
    for _ in range(n_new):
        cell = _argmax_cell(current)
        if cell is None:
            raise InfeasiblePlacementError(f"only {len(picks)} of {n_new} drifters could be placed", placed=len(picks))
        picks.append(cell)
        mask = current.mask.copy()
        mask.flat[cell] = True
        current = apply_exclusion(current.with_mask(mask), pts[cell], min_distance)
    return DeploymentPlan(pts[picks], "surrogate_all_at_once", min_distance, dict(cost_map.provenance), cells=picks)


def select_sequential(map_builder, existing, n_new, min_distance):
    """One drifter per round; the map is rebuilt from all current drifters each round.

    ``map_builder(placed)`` receives the ``(k, 2)`` positions placed so far
    and returns a :class:`CostMap`.
    """
    if n_new < 1:
        raise InvalidArgumentError("n_new must be at least 1")
    existing = _as_points(existing)
    placed, cells, provenance = np.zeros((0, 2)), [], []
    for _ in range(n_new):
        cost_map = map_builder(placed.copy())
        pts = cost_map.points
        current = apply_exclusion(cost_map, np.concatenate([existing, placed]), min_distance)
        cell = _argmax_cell(current)
        if cell is None:
            raise InfeasiblePlacementError(
                f"only {len(cells)} of {n_new} drifters could be placed", placed=len(cells)
            )
        cells.append(cell)
        provenance.append(dict(cost_map.provenance))
        placed = np.concatenate([placed, pts[cell][None]])
    return DeploymentPlan(placed, "surrogate_sequential", min_distance, {"rounds": provenance}, cells=cells)


def brute_force_greedy(eval_gain, grid_size, existing, n_new, min_distance=0.0):
    """Greedy search on the exact gain over grid cell centers.

    ``eval_gain(placed)`` receives the ``(k, 2)`` new positions (previous picks
    followed by the trial cell) and returns a scalar. A raising or non-finite
    evaluation marks the cell failed. Returns ``(plan, maps)`` with one map of
    exact gains per round; failed and excluded cells are masked.
    """
    if n_new < 1:
        raise InvalidArgumentError("n_new must be at least 1")
    existing = _as_points(existing)
    pts = grid_points(grid_size)
    placed, cells, maps, failures = np.zeros((0, 2)), [], [], []
    for rnd in range(n_new):
        excl = apply_exclusion(CostMap(np.zeros((grid_size, grid_size))), np.concatenate([existing, placed]),
                               min_distance).mask.ravel()
        excl[cells] = True
        values = np.zeros(len(pts))
        failed = np.zeros(len(pts), bool)
        for c in np.flatnonzero(~excl):
            try:
                v = float(eval_gain(np.concatenate([placed, pts[c][None]])))
            except (ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
                failures.append({"round": rnd, "cell": int(c), "error": str(exc)})
                failed[c] = True
                continue
            if not np.isfinite(v):
                failures.append({"round": rnd, "cell": int(c), "error": "non-finite gain"})
                failed[c] = True
                continue
            values[c] = v
        if (excl | failed).all():
            if failed.any():
                raise SearchFailureError(f"every candidate evaluation failed in round {rnd}")
            raise InfeasiblePlacementError(
                f"only {len(cells)} of {n_new} drifters could be placed", placed=len(cells)
            )
        gain_map = CostMap(values.reshape(grid_size, grid_size), (excl | failed).reshape(grid_size, grid_size),
                           provenance={"kind": "exact", "round": rnd})
        cell = _argmax_cell(gain_map)
        maps.append(gain_map)
        cells.append(cell)
        placed = np.concatenate([placed, pts[cell][None]])
    plan = DeploymentPlan(placed, "brute_force_greedy", min_distance, {"kind": "exact", "failures": failures},
                          cells=cells)
    return plan, maps


def random_plan(n_new, min_distance, existing, seed=0, enforce_distance=True):
    """Uniform random positions, optionally rejection-sampled to respect the distance criterion."""
    if n_new < 0:
        raise InvalidArgumentError("n_new must be nonnegative")
    rng = seed if isinstance(seed, np.random.Generator) else _rng.generator(seed, "random-plan")
    existing = _as_points(existing)
    strategy = "random_with_distance" if enforce_distance else "random"
    if not enforce_distance:
        pos = rng.uniform(-np.pi, np.pi, size=(int(n_new), 2))
        return DeploymentPlan(pos, strategy, 0.0, {"kind": "random"}, _seed_repr(seed))
    placed = np.zeros((0, 2))
    attempts = since_last = 0
    # sequential rejection: draw each drifter until it clears all current drifters;
    # a drifter that keeps failing means earlier picks boxed it in, so start over
    while len(placed) < n_new:
        if attempts >= MAX_ATTEMPTS:
            raise InfeasiblePlacementError(
                f"random placement gave up after {MAX_ATTEMPTS} attempts", placed=len(placed)
            )
        attempts += 1
        since_last += 1
        x = rng.uniform(-np.pi, np.pi, size=2)
        others = np.concatenate([existing, placed])
        if len(others) == 0 or torus_distance(x[None], others).min() >= min_distance:
            placed = np.concatenate([placed, x[None]])
            since_last = 0
        elif since_last >= RESTART_AFTER and len(placed):
            placed = np.zeros((0, 2))
            since_last = 0
    return DeploymentPlan(placed, strategy, min_distance, {"kind": "random", "attempts": attempts},
                          _seed_repr(seed))


def _seed_repr(seed):
    if isinstance(seed, (int, np.integer)):
        return int(seed)
    if isinstance(seed, np.random.SeedSequence):
        return [int(v) for v in np.atleast_1d(seed.entropy)]
    return None
