"""Command line entry point: ``lagdeploy {run,map,score,validate}``.

Exit codes: 0 success, 1 usage or input error, 2 numerical failure.
"""

import argparse
import json
import os
import sys

from .errors import LagDeployError, NumericalFailureError, StageError
from .harness import ExperimentConfig, load_reports, run_batch, skill_score, write_report, write_skill_csv, write_summary
from .harness.experiments import Reanalysis, Realtime, StageClock, experiment_seed
from .harness.scoring import DEFAULT_PERCENTILES, available_comparisons

EXIT_OK, EXIT_USAGE, EXIT_NUMERICAL = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def _percentiles(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad percentile list {text!r}") from None


def build_parser():
    p = _Parser(prog="lagdeploy", description="Drifter deployment experiments.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    run = sub.add_parser("run", help="execute a config file")
    run.add_argument("--config", required=True)
    run.add_argument("--out", default=None)
    run.add_argument("--seed", type=int, default=None)
    run.add_argument("--threads", type=int, default=None)
    run.add_argument("--percentiles", type=_percentiles, default=list(DEFAULT_PERCENTILES))

    mp = sub.add_parser("map", help="emit the surrogate cost map of one experiment")
    mp.add_argument("--config", required=True)
    mp.add_argument("--out", default=None)
    mp.add_argument("--seed", type=int, default=None)
    mp.add_argument("--experiment", type=int, default=0)

    sc = sub.add_parser("score", help="aggregate reports into skill tables")
    sc.add_argument("--in", dest="input", required=True)
    sc.add_argument("--out", default=None)
    sc.add_argument("--percentiles", type=_percentiles, default=list(DEFAULT_PERCENTILES))

    va = sub.add_parser("validate", help="run the invariant and oracle battery")
    va.add_argument("--seed", type=int, default=0)
    return p


def _load_config(args):
    if not os.path.exists(args.config):
        raise UsageError(f"config file not found: {args.config}")
    cfg = ExperimentConfig.load(args.config)
    if args.seed is not None:
        cfg.seed = args.seed
    if getattr(args, "threads", None):
        cfg.threads = args.threads
    cfg.validate()
    return cfg


def _score_tables(reports, out_dir, percentiles, stream):
    written = []
    for proposed, baseline, evaluation in available_comparisons(reports):
        table = skill_score(reports, percentiles, proposed, baseline, evaluation)
        path = os.path.join(out_dir, f"skill_{proposed}_vs_{baseline}_{evaluation}.csv")
        write_skill_csv(table, path)
        written.append(path)
        print(f"{proposed} vs {baseline} ({evaluation}): beats mean in {table['wins_over_mean']}"
              f"/{table['n_experiments']}", file=stream)
    return written


def cmd_run(args, stream):
    cfg = _load_config(args)
    out = cfg.resolved_output_dir(args.out)
    os.makedirs(out, exist_ok=True)
    reports = run_batch(cfg, on_report=lambda r: write_report(r, out))
    summary = write_summary(reports, out, cfg)
    if cfg.n_new > 0:
        _score_tables(reports, out, args.percentiles, stream)
    print(f"wrote {len(reports)} experiment bundles to {out}", file=stream)
    return EXIT_OK if summary["invariant_violations"] == 0 else EXIT_NUMERICAL


def cmd_map(args, stream):
    cfg = _load_config(args)
    out = cfg.resolved_output_dir(args.out)
    os.makedirs(out, exist_ok=True)
    seed = experiment_seed(cfg.seed, args.experiment)
    clock = StageClock()
    if cfg.scenario == "reanalysis":
        cost = Reanalysis(cfg, seed, clock).initial_map()
    else:
        cost = Realtime(cfg, seed, clock).surrogate_map()
    cost.write(os.path.join(out, "cost_map.csv"), os.path.join(out, "cost_map.json"))
    with open(os.path.join(out, "cost_map_timing.json"), "w") as fh:
        json.dump(clock.to_dict(), fh, indent=2)
    print(f"wrote {os.path.join(out, 'cost_map.csv')}", file=stream)
    return EXIT_OK


def cmd_score(args, stream):
    if not os.path.isdir(args.input):
        raise UsageError(f"input directory not found: {args.input}")
    reports = load_reports(args.input)
    out = args.out or args.input
    os.makedirs(out, exist_ok=True)
    written = _score_tables(reports, out, args.percentiles, stream)
    if not written:
        raise UsageError("reports contain no proposed-versus-random comparisons")
    return EXIT_OK


def cmd_validate(args, stream):
    from .validation import run_battery

    results = run_battery(args.seed)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}", file=stream)
    return EXIT_OK if all(ok for _, ok, _ in results) else EXIT_NUMERICAL


COMMANDS = {"run": cmd_run, "map": cmd_map, "score": cmd_score, "validate": cmd_validate}


def _is_numerical(exc):
    if isinstance(exc, StageError):
        return _is_numerical(exc.cause)
    return isinstance(exc, (NumericalFailureError, ArithmeticError))


def main(argv=None, stream=None):
    stream = stream or sys.stdout
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS[args.command](args, stream)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except (LagDeployError, ArithmeticError, ValueError, OSError) as exc:
        print(f"lagdeploy: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL if _is_numerical(exc) else EXIT_USAGE


def entry():
    sys.exit(main())


if __name__ == "__main__":
    entry()
