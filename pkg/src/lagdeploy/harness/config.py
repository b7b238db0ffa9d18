"""Experiment configuration with JSON round-trip and scenario defaults."""

import json
import os
from dataclasses import asdict, dataclass, field, fields

from ..errors import InvalidArgumentError
from ..flow import FlowParams

SCENARIOS = ("reanalysis", "realtime")
PROPOSED = ("surrogate_all_at_once", "surrogate_sequential", "brute_force_greedy")
BASELINES = ("random_with_distance", "random")
OUTPUT_ENV = "LAGDEPLOY_OUTPUT_DIR"


def _default_flow():
    return {"kmax": 3, "d": 0.5, "omega": 0.0, "f_re": 0.0, "f_im": 0.0, "sigma": 0.5, "sigma_x": 0.1}


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce a batch of experiments.

    ``t_star`` is the deployment time in reanalysis mode and ``T`` the
    forecast start in real-time mode. ``tau`` is the window half-width
    (reanalysis) or forecast horizon (real-time).

    ``on_infeasible="record"`` keeps an experiment going when a strategy
    cannot place all drifters under the distance criterion: the strategy is
    marked infeasible in the report (and loses every comparison when scored)
    and random trials that cannot be placed are dropped and counted.
    """

    scenario: str = "reanalysis"
    flow: dict = field(default_factory=_default_flow)
    n_existing: int = 10
    n_new: int = 4
    t_star: float = 5.0
    T: float = 2.0
    tau: float = 1.0
    dt: float = 1e-3
    grid_size: int = 32
    ensemble_size: int = 20
    n_experiments: int = 10
    n_random_trials: int = 30
    n_random_single: int = 50
    min_distance: float = 1.5
    seed: int = 0
    output_dir: str = "runs"
    strategies: list = field(default_factory=lambda: ["surrogate_all_at_once"])
    random_baselines: list = field(default_factory=lambda: list(BASELINES))
    brute_force_grid: int = 10
    brute_force_rounds: int = None
    brute_force_min_distance: float = None
    scheme: str = "kalman"
    on_infeasible: str = "raise"
    threads: int = 1

    def __post_init__(self):
        self.validate()

    @classmethod
    def reanalysis(cls, **kw):
        """Defaults of the reanalysis experiment (t*=5, tau=1, min distance 1.5)."""
        base = dict(scenario="reanalysis", t_star=5.0, tau=1.0, min_distance=1.5,
                    strategies=["surrogate_all_at_once", "surrogate_sequential"])
        base["flow"] = {**_default_flow(), **kw.pop("flow", {})}
        base.update(kw)
        return cls(**base)

    @classmethod
    def realtime(cls, **kw):
        """Defaults of the real-time experiment (sigma=0.125, T=2, tau=0.5, min distance 1)."""
        flow = _default_flow()
        flow["sigma"] = 0.125
        base = dict(scenario="realtime", flow=flow, T=2.0, tau=0.5, min_distance=1.0,
                    strategies=["surrogate_all_at_once"])
        base["flow"] = {**flow, **kw.pop("flow", {})}
        base.update(kw)
        return cls(**base)

    @property
    def t_deploy(self):
        return self.t_star if self.scenario == "reanalysis" else self.T

    @property
    def window(self):
        if self.scenario == "reanalysis":
            return (self.t_star - self.tau, self.t_star + self.tau)
        return (self.T, self.T + self.tau)

    @property
    def brute_force_distance(self):
        """Distance criterion of the brute-force search; falls back to ``min_distance``."""
        if self.brute_force_min_distance is None:
            return self.min_distance
        return self.brute_force_min_distance

    def flow_params(self):
        return FlowParams.from_dict(self.flow)

    def validate(self):
        if self.scenario not in SCENARIOS:
            raise InvalidArgumentError(f"scenario must be one of {SCENARIOS}")
        for name in ("n_existing", "grid_size", "ensemble_size", "n_experiments", "brute_force_grid", "threads"):
            if int(getattr(self, name)) < 1:
                raise InvalidArgumentError(f"{name} must be positive")
        for name in ("n_new", "n_random_trials", "n_random_single"):
            if int(getattr(self, name)) < 0:
                raise InvalidArgumentError(f"{name} must be nonnegative")
        if self.tau <= 0 or self.dt <= 0:
            raise InvalidArgumentError("tau and dt must be positive")
        if self.min_distance < 0 or (self.brute_force_min_distance or 0) < 0:
            raise InvalidArgumentError("min_distance must be nonnegative")
        if self.scenario == "reanalysis" and self.t_star - self.tau < 0:
            raise InvalidArgumentError("reanalysis window starts before t=0")
        if self.scenario == "realtime" and self.T <= 0:
            raise InvalidArgumentError("T must be positive")
        if self.on_infeasible not in ("raise", "record"):
            raise InvalidArgumentError("on_infeasible must be 'raise' or 'record'")
        bad = [s for s in self.strategies if s not in PROPOSED]
        if bad:
            raise InvalidArgumentError(f"unknown strategies {bad}")
        if self.scenario == "realtime" and "surrogate_sequential" in self.strategies:
            raise InvalidArgumentError("the sequential strategy is only available in reanalysis")
        bad = [s for s in self.random_baselines if s not in BASELINES]
        if bad:
            raise InvalidArgumentError(f"unknown random baselines {bad}")
        for name in ("t_star", "T", "tau"):
            steps = getattr(self, name) / self.dt
            if abs(steps - round(steps)) > 1e-6:
                raise InvalidArgumentError(f"{name} must be a whole number of dt steps")
        self.flow_params()  # raises on malformed flow parameters

    def resolved_output_dir(self, override=None):
        """``override`` (CLI) wins, then the environment variable, then the config value."""
        return override or os.environ.get(OUTPUT_ENV) or self.output_dir

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidArgumentError(f"unknown config keys {sorted(unknown)}")
        scenario = data.get("scenario", "reanalysis")
        if scenario == "realtime":
            return cls.realtime(**data)
        if scenario == "reanalysis":
            return cls.reanalysis(**data)
        raise InvalidArgumentError(f"scenario must be one of {SCENARIOS}")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            try:
                data = json.load(fh)
            except json.JSONDecodeError as exc:
                raise InvalidArgumentError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(data, dict):
            raise InvalidArgumentError("config must be a JSON object")
        return cls.from_dict(data)
