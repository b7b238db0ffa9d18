"""End-to-end reanalysis and real-time deployment experiments (twin setting)."""

import json
import time
from contextlib import contextmanager

import numpy as np

from .. import rng as _rng
from ..assimilation import filter as run_filter
from ..assimilation import filter_batch, smoother, backward_sample
from ..deployment import DeploymentPlan, brute_force_greedy, random_plan, select_all_at_once, select_sequential
from ..descriptor import ld_expected
from ..errors import InfeasiblePlacementError, LagDeployError, StageError
from ..flow import equilibrium_distribution, sample_equilibrium, simulate_flow, simulate_flows
from ..information import GainAccumulator, ReferenceGaussian, expected_gain, time_averaged_gain
from ..state import deaugment
from ..tracers import TrajectorySet, advect, uniform_initial_positions
from .config import ExperimentConfig

PSD_TOL = 1e-10
KL_TOL = 1e-9


class StageClock:
    """Accumulates wall time per named stage and tags failures with the stage name."""

    def __init__(self):
        self.seconds = {}
        self.calls = {}

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        try:
            yield
        except StageError:
            raise
        except (LagDeployError, ArithmeticError, ValueError, np.linalg.LinAlgError) as exc:
            raise StageError(name, exc) from exc
        finally:
            self.seconds[name] = self.seconds.get(name, 0.0) + time.perf_counter() - t0
            self.calls[name] = self.calls.get(name, 0) + 1

    def to_dict(self):
        return {k: {"seconds": self.seconds[k], "calls": self.calls[k]} for k in sorted(self.seconds)}


class InvariantLog:
    """Counts checks and violations of the runtime invariants."""

    def __init__(self):
        self.counts = {"psd_checks": 0, "psd_violations": 0, "kl_checks": 0, "kl_violations": 0,
                       "distance_checks": 0, "distance_violations": 0}

    def psd(self, cov):
        cov = np.asarray(cov)
        cov = cov.reshape((-1,) + cov.shape[-2:])
        self.counts["psd_checks"] += len(cov)
        tr = np.trace(cov, axis1=-2, axis2=-1)
        jitter = (PSD_TOL * np.maximum(tr, 1e-300))[:, None, None] * np.eye(cov.shape[-1])
        try:
            np.linalg.cholesky(0.5 * (cov + np.swapaxes(cov, -1, -2)) + jitter)
        except np.linalg.LinAlgError:
            w = np.linalg.eigvalsh(0.5 * (cov + np.swapaxes(cov, -1, -2)))
            self.counts["psd_violations"] += int((w[:, 0] < -PSD_TOL * np.maximum(tr, 1e-300)).sum())

    def gain(self, g):
        self.counts["kl_checks"] += 1
        if not g.total >= -KL_TOL:
            self.counts["kl_violations"] += 1

    def plan(self, plan, existing):
        if plan.strategy == "random":
            return
        self.counts["distance_checks"] += 1
        self.counts["distance_violations"] += plan.violations(existing)

    @property
    def violations(self):
        return sum(v for k, v in self.counts.items() if k.endswith("violations"))

    def to_dict(self):
        return dict(self.counts)


class ExperimentReport:
    """Results of one experiment.

    ``data`` is deterministic given the configuration and seed; wall times
    live in ``timing`` and are written to a separate file so the report
    itself is byte-reproducible.
    """

    def __init__(self, data, timing=None):
        self.data = data
        self.timing = timing or {}
        self.artifacts = {}

    @property
    def scenario(self):
        return self.data["scenario"]

    def gain(self, name, evaluation="ensemble"):
        """Total gain of a proposed strategy (``evaluation="single"`` for the held-out realization).

        A strategy recorded as infeasible scores ``-inf``.
        """
        entry = self.data["strategies"][name]
        if entry.get("infeasible"):
            return float("-inf")
        key = "single" if evaluation == "single" else "gain"
        return entry[key]["total"]

    def random_gains(self, kind, evaluation="ensemble"):
        entry = self.data["random"][kind]
        key = "single" if evaluation == "single" else "gains"
        return [g["total"] for g in entry[key]]

    def to_json(self):
        return json.dumps(self.data, indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, data, timing=None):
        return cls(data, timing)


def _gain_dict(g):
    return g.to_dict()


def _bidirectional(flow, params, starts, t_star, tau, seed, label="new"):
    """Drifters released at ``t_star`` and integrated backward and forward over ``tau``."""
    back = advect(flow, params, starts, (t_star, t_star - tau), seed=_rng.seed_sequence(seed, "backward"), label=label)
    fwd = advect(flow, params, starts, (t_star, t_star + tau), seed=_rng.seed_sequence(seed, "forward"), label=label)
    pos = np.concatenate([back.positions[:-1], fwd.positions])
    times = np.concatenate([back.times[:-1], fwd.times])
    return TrajectorySet(times, pos, [label] * len(starts))


class _Base:
    def __init__(self, cfg, seed, clock=None, log=None):
        self.cfg = cfg
        self.params = cfg.flow_params()
        self.ledger = _rng.SeedLedger(seed)
        self.clock = clock or StageClock()
        self.log = log or InvariantLog()
        self.equilibrium = equilibrium_distribution(self.params)
        self.ref = ReferenceGaussian(self.equilibrium.mean[-1], self.equilibrium.cov[-1])

    def _truth(self, t_end):
        cfg = self.cfg
        with self.clock.stage("truth"):
            init = sample_equilibrium(self.params, self.ledger.generator("truth", "init"))
            self.flow = simulate_flow(self.params, init, (0.0, t_end), cfg.dt, seed=self.ledger.generator("truth", "flow"))
            starts = uniform_initial_positions(cfg.n_existing, self.ledger.generator("existing", "init"))
            self.existing = advect(self.flow, self.params, starts, (0.0, t_end), seed=self.ledger.seed("existing", "noise"))

    def _prior(self, t_end):
        """L1-only filter from equilibrium up to ``t_end``; only the final Gaussian is kept."""
        with self.clock.stage("prior_filter"):
            obs = self.existing.window(0.0, t_end)
            post = run_filter(obs, self.params, self.equilibrium, self.cfg.scheme, keep="last")
            self.log.psd(post.cov)
            self.prior = post.last()

    def _random_plans(self, kind, count, existing, stream=None):
        """Random plans; with the ``record`` policy unplaceable trials are dropped.

        Returns ``(plans, n_infeasible)``. Trial ``i`` always draws from stream
        ``i`` so dropping one does not shift the others.
        """
        plans, failed = [], 0
        for i in range(count):
            try:
                plan = random_plan(self.cfg.n_new, self.cfg.min_distance, existing,
                                   seed=self.ledger.generator("random", stream or kind, i),
                                   enforce_distance=kind == "random_with_distance")
            except InfeasiblePlacementError:
                if self.cfg.on_infeasible != "record":
                    raise
                failed += 1
                continue
            self.log.plan(plan, existing)
            plans.append(plan)
        return plans, failed

    def _place(self, select):
        """Run a placement; ``None`` plus an infeasibility record under the ``record`` policy."""
        try:
            return select(), None
        except InfeasiblePlacementError as exc:
            if self.cfg.on_infeasible != "record":
                raise
            return None, {"infeasible": True, "placed": exc.placed, "error": str(exc)}


class Reanalysis(_Base):
    """Deployment at ``t*`` judged by the smoother over ``[t* - tau, t* + tau]``."""

    def __init__(self, cfg, seed, clock=None, log=None):
        super().__init__(cfg, seed, clock, log)
        a, b = cfg.window
        self._truth(b)
        self._prior(a)
        self.obs = self.existing.window(a, b)
        self.existing_now = self.existing.at(cfg.t_star)
        self._map = None
        self.map_seconds = []
        self.brute_force_seconds = []

    def new_trajectories(self, positions):
        # common random numbers: drifter l of every plan sees the same noise stream
        return _bidirectional(self.flow, self.params, positions, self.cfg.t_star, self.cfg.tau,
                              self.ledger.seed("new-drifters"))

    def posterior(self, positions=None):
        obs = self.obs
        if positions is not None and len(positions):
            obs = obs.join(self.new_trajectories(positions))
        f = run_filter(obs, self.params, self.prior, self.cfg.scheme)
        s = smoother(obs, self.params, f)
        self.log.psd(f.cov)
        self.log.psd(s.cov)
        return f, s

    def gain(self, positions=None):
        with self.clock.stage("gain"):
            _, s = self.posterior(positions)
            g = time_averaged_gain(s, self.equilibrium, self.cfg.window)
        self.log.gain(g)
        return g

    def surrogate_map(self, positions=None, stream="initial"):
        """Expected descriptor over posterior samples; wall times land in ``map_seconds``."""
        cfg = self.cfg
        t0 = time.perf_counter()
        with self.clock.stage("posterior"):
            f, s = self.posterior(positions)
        t1 = time.perf_counter()
        with self.clock.stage("sampling"):
            samples = backward_sample(s, f, self.params, cfg.ensemble_size,
                                      seed=self.ledger.generator("posterior-sample", stream))
        t2 = time.perf_counter()
        with self.clock.stage("ld_map"):
            cost = ld_expected(samples, self.params, cfg.grid_size, cfg.t_star, cfg.tau, cfg.tau, cfg.dt)
        t3 = time.perf_counter()
        self.map_seconds.append({"posterior": t1 - t0, "sampling": t2 - t1, "ld_map": t3 - t2})
        return cost

    def initial_map(self):
        if self._map is None:
            self._map = self.surrogate_map()
        return self._map

    def run(self):
        cfg = self.cfg
        out = {"strategies": {}, "random": {}}
        out["baseline"] = _gain_dict(self.gain())
        if cfg.n_new == 0:
            return out
        for name in cfg.strategies:
            with self.clock.stage(name):
                if name == "surrogate_all_at_once":
                    plan, failure = self._place(lambda: select_all_at_once(
                        self.initial_map(), self.existing_now, cfg.n_new, cfg.min_distance))
                elif name == "surrogate_sequential":
                    def builder(placed):
                        if len(placed) == 0:
                            return self.initial_map()
                        return self.surrogate_map(placed, stream=f"sequential-{len(placed)}")

                    plan, failure = self._place(lambda: select_sequential(
                        builder, self.existing_now, cfg.n_new, cfg.min_distance))
                else:
                    plan, failure = self._place(lambda: self.brute_force(cfg.brute_force_rounds or cfg.n_new)[0])
            if failure:
                out["strategies"][name] = failure
                continue
            self.log.plan(plan, self.existing_now)
            out["strategies"][name] = {"plan": plan.to_dict(), "gain": _gain_dict(self.gain(plan.new_positions))}
        for kind in cfg.random_baselines:
            with self.clock.stage(kind):
                plans, failed = self._random_plans(kind, cfg.n_random_trials, self.existing_now)
                gains = [self.gain(p.new_positions) for p in plans]
            out["random"][kind] = {"gains": [_gain_dict(g) for g in gains],
                                   "positions": [p.new_positions.tolist() for p in plans]}
            if failed:
                out["random"][kind]["infeasible_trials"] = failed
        return out

    def brute_force(self, rounds):
        """Greedy search on the exact smoother gain over the brute-force grid."""
        cfg = self.cfg
        maps = []
        placed = np.zeros((0, 2))
        # one greedy round per call so each round's wall time is recorded
        for _ in range(rounds):
            t0 = time.perf_counter()
            step, step_maps = brute_force_greedy(
                lambda trial: self.gain(np.concatenate([placed, trial])).total,
                cfg.brute_force_grid, np.concatenate([self.existing_now, placed]), 1, cfg.brute_force_distance)
            self.brute_force_seconds.append(time.perf_counter() - t0)
            placed = np.concatenate([placed, step.new_positions])
            maps.extend(step_maps)
        plan = DeploymentPlan(placed, "brute_force_greedy", cfg.brute_force_distance, {"kind": "exact", "rounds": rounds})
        return plan, maps


def _artifacts(exp, result, a, b, new_traj):
    out = {}
    if exp._map is not None:
        out["cost_map"] = exp._map
    traj = exp.existing.window(a, b)
    for name, entry in result.get("strategies", {}).items():
        if "plan" not in entry:
            continue
        pos = np.asarray(entry["plan"]["positions"], dtype=float).reshape(-1, 2)
        if len(pos):
            traj = traj.join(new_traj(pos).relabel("new"))
        break
    out["trajectories"] = traj
    return out


class Realtime(_Base):
    """Deployment at ``T`` judged by the filter over the forecast window ``[T, T + tau]``."""

    def __init__(self, cfg, seed, clock=None, log=None):
        super().__init__(cfg, seed, clock, log)
        a, b = cfg.window
        self._truth(b)
        self._prior(a)
        self.existing_now = self.existing.at(cfg.T)
        self._map = None
        self.map_seconds = []
        self.brute_force_seconds = []
        self._forecast()

    def _forecast(self):
        cfg = self.cfg
        a, b = cfg.window
        with self.clock.stage("forecast"):
            rng = self.ledger.generator("forecast", "init")
            chol = np.linalg.cholesky(self.prior.cov[-1] + 1e-14 * np.eye(self.prior.dim))
            draws = self.prior.mean[-1] + rng.standard_normal((cfg.ensemble_size, self.prior.dim)) @ chol.T
            self.flows = simulate_flows(self.params, deaugment(draws), (a, b), cfg.dt,
                                        seed=self.ledger.generator("forecast", "flows"))
            self.existing_members = np.stack([
                advect(fl, self.params, self.existing_now, (a, b), seed=self.ledger.seed("forecast", "existing", j)).positions
                for j, fl in enumerate(self.flows)
            ])
            self.existing_truth = self.existing.window(a, b).positions

    def surrogate_map(self):
        cfg = self.cfg
        t0 = time.perf_counter()
        with self.clock.stage("ld_map"):
            cost = ld_expected(self.flows, self.params, cfg.grid_size, cfg.T, 0.0, cfg.tau, cfg.dt)
        self.map_seconds.append({"ld_map": time.perf_counter() - t0})
        return cost

    def _filter_gains(self, stacks):
        """Time-averaged filter gains for a stack of trajectory arrays ``(B, N+1, L, 2)``."""
        a, b = self.cfg.window
        times = a + self.cfg.dt * np.arange(stacks.shape[1])
        acc = GainAccumulator(self.equilibrium, times, (a, b))

        def cb(n, mean, cov):
            acc.update(n, mean, cov)
            self.log.psd(cov)

        filter_batch(stacks, self.cfg.dt, a, self.prior, self.params, self.cfg.scheme, cb)
        gains = acc.gains()
        for g in gains:
            self.log.gain(g)
        return gains

    def _new_members(self, positions, stream):
        a, b = self.cfg.window
        return np.stack([
            advect(fl, self.params, positions, (a, b), seed=self.ledger.seed("new-drifters", stream, j)).positions
            for j, fl in enumerate(self.flows)
        ])

    def ensemble_gains(self, plans):
        """Per-realization gains for each plan; filters of several plans are batched together."""
        with self.clock.stage("ensemble_gain"):
            J = self.cfg.ensemble_size
            stacks = []
            for positions in plans:
                obs = self.existing_members
                if positions is not None and len(positions):
                    obs = np.concatenate([obs, self._new_members(positions, "ensemble")], axis=2)
                stacks.append(obs)
            out = []
            per = max(1, 120 // J)
            for s in range(0, len(stacks), per):
                chunk = stacks[s : s + per]
                if len({c.shape for c in chunk}) == 1:
                    gains = self._filter_gains(np.concatenate(chunk))
                    out.extend(gains[i * J : (i + 1) * J] for i in range(len(chunk)))
                else:
                    out.extend(self._filter_gains(c) for c in chunk)
            return out

    def single_gains(self, plans):
        """Gains on the held-out truth continuation over ``[T, T + tau]``."""
        with self.clock.stage("single_gain"):
            a, b = self.cfg.window
            stacks = []
            for positions in plans:
                obs = self.existing_truth
                if positions is not None and len(positions):
                    new = advect(self.flow, self.params, positions, (a, b), seed=self.ledger.seed("new-drifters", "single"))
                    obs = np.concatenate([obs, new.positions], axis=1)
                stacks.append(obs)
            if len({s.shape for s in stacks}) == 1:
                return self._filter_gains(np.stack(stacks))
            return [self._filter_gains(s[None])[0] for s in stacks]

    def run(self):
        cfg = self.cfg
        out = {"strategies": {}, "random": {}}
        base = self.ensemble_gains([None])[0]
        out["baseline"] = {"gain": _gain_dict(expected_gain(base)),
                           "single": _gain_dict(self.single_gains([None])[0])}
        if cfg.n_new == 0:
            return out
        with self.clock.stage("surrogate_map"):
            cost = self.surrogate_map()
        self._map = cost
        for name in cfg.strategies:
            with self.clock.stage(name):
                if name == "surrogate_all_at_once":
                    plan, failure = self._place(lambda: select_all_at_once(
                        cost, self.existing_now, cfg.n_new, cfg.min_distance))
                else:
                    plan, failure = self._place(lambda: self.brute_force(cfg.brute_force_rounds or cfg.n_new))
            if failure:
                out["strategies"][name] = failure
                continue
            self.log.plan(plan, self.existing_now)
            per = self.ensemble_gains([plan.new_positions])[0]
            out["strategies"][name] = {
                "plan": plan.to_dict(),
                "gain": _gain_dict(expected_gain(per)),
                "per_realization": [_gain_dict(g) for g in per],
                "single": _gain_dict(self.single_gains([plan.new_positions])[0]),
            }
        for kind in cfg.random_baselines:
            with self.clock.stage(kind):
                plans, failed = self._random_plans(kind, cfg.n_random_trials, self.existing_now)
                ens = self.ensemble_gains([p.new_positions for p in plans]) if plans else []
                single_plans, failed_single = self._random_plans(kind, cfg.n_random_single, self.existing_now,
                                                                 stream=kind + "-single")
                single = self.single_gains([p.new_positions for p in single_plans]) if single_plans else []
            out["random"][kind] = {
                "gains": [_gain_dict(expected_gain(g)) for g in ens],
                "single": [_gain_dict(g) for g in single],
                "positions": [p.new_positions.tolist() for p in plans],
            }
            if failed or failed_single:
                out["random"][kind]["infeasible_trials"] = failed + failed_single
        return out

    def brute_force(self, rounds):
        """Greedy search on the ensemble-expected filter gain."""
        cfg = self.cfg
        placed = np.zeros((0, 2))
        for _ in range(rounds):
            t0 = time.perf_counter()
            step, _ = brute_force_greedy(
                lambda trial: expected_gain(self.ensemble_gains([np.concatenate([placed, trial])])[0]).total,
                cfg.brute_force_grid, np.concatenate([self.existing_now, placed]), 1, cfg.brute_force_distance)
            self.brute_force_seconds.append(time.perf_counter() - t0)
            placed = np.concatenate([placed, step.new_positions])
        return DeploymentPlan(placed, "brute_force_greedy", cfg.brute_force_distance, {"kind": "exact", "rounds": rounds})


def experiment_seed(master_seed, index):
    """Independent integer seed of experiment ``index`` under ``master_seed``."""
    return int(_rng.seed_sequence(int(master_seed), "experiment", int(index)).generate_state(1)[0])


def run_experiment(cfg, index=0):
    """Run experiment ``index`` of ``cfg`` and return its report."""
    seed = experiment_seed(cfg.seed, index)
    clock, log = StageClock(), InvariantLog()
    runner = Reanalysis if cfg.scenario == "reanalysis" else Realtime
    exp = runner(cfg, seed, clock, log)
    result = exp.run()
    data = {
        "scenario": cfg.scenario,
        "experiment": int(index),
        "seed": seed,
        "config": cfg.to_dict(),
        "window": list(cfg.window),
        "existing_at_deployment": exp.existing_now.tolist(),
        **result,
        "invariants": log.to_dict(),
        "seed_ledger": exp.ledger.to_dict(),
    }
    timing = {
        "stages": clock.to_dict(),
        "surrogate_maps": exp.map_seconds,
        "brute_force_rounds": exp.brute_force_seconds,
    }
    report = ExperimentReport(data, timing)
    a, b = cfg.window
    if cfg.scenario == "reanalysis":
        report.artifacts = _artifacts(exp, result, a, b, exp.new_trajectories)
    else:
        report.artifacts = _artifacts(exp, result, a, b, lambda pos: advect(
            exp.flow, exp.params, pos, (a, b), seed=exp.ledger.seed("new-drifters", "single")))
    return report


def run_reanalysis(cfg, index=0):
    if cfg.scenario != "reanalysis":
        raise StageError("config", ValueError("run_reanalysis needs scenario 'reanalysis'"))
    return run_experiment(cfg, index)


def run_realtime(cfg, index=0):
    if cfg.scenario != "realtime":
        raise StageError("config", ValueError("run_realtime needs scenario 'realtime'"))
    return run_experiment(cfg, index)


def _run_detached(args):
    cfg_dict, index = args
    rep = run_experiment(ExperimentConfig.from_dict(cfg_dict), index)
    return rep.data, rep.timing


def run_batch(cfg, threads=None, on_report=None):
    """All ``cfg.n_experiments`` experiments, optionally on a process pool.

    Reports come back in experiment order whatever the pool schedule.
    """
    threads = threads or cfg.threads
    indices = range(cfg.n_experiments)
    reports = []
    if threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            for data, timing in pool.map(_run_detached, [(cfg.to_dict(), i) for i in indices]):
                reports.append(ExperimentReport(data, timing))
                if on_report:
                    on_report(reports[-1])
    else:
        for i in indices:
            rep = run_experiment(cfg, i)
            reports.append(rep)
            if on_report:
                on_report(rep)
    return reports
