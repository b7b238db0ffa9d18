"""Report bundles on disk: JSON reports, timing ledgers and CSV artifacts."""

import glob
import json
import os

from ..errors import InvalidArgumentError
from .experiments import ExperimentReport


def experiment_dir(root, index):
    return os.path.join(root, f"experiment_{index:03d}")


def write_report(report, root):
    """Write one experiment's bundle under ``root`` and return its directory."""
    path = experiment_dir(root, report.data["experiment"])
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "report.json"), "w") as fh:
        fh.write(report.to_json())
    with open(os.path.join(path, "timing.json"), "w") as fh:
        json.dump(report.timing, fh, indent=2, sort_keys=True)
    cost = report.artifacts.get("cost_map")
    if cost is not None:
        cost.write(os.path.join(path, "cost_map.csv"), os.path.join(path, "cost_map.json"))
    traj = report.artifacts.get("trajectories")
    if traj is not None:
        traj.write(os.path.join(path, "trajectories.csv"), os.path.join(path, "trajectories.json"))
    return path


def write_summary(reports, root, config):
    os.makedirs(root, exist_ok=True)
    with open(os.path.join(root, "config.json"), "w") as fh:
        fh.write(config.to_json())
    summary = {
        "n_experiments": len(reports),
        "invariant_violations": sum(
            v for r in reports for k, v in r.data["invariants"].items() if k.endswith("violations")
        ),
        "experiments": [r.data["experiment"] for r in reports],
    }
    with open(os.path.join(root, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    return summary


def load_reports(root):
    """Reports of every experiment bundle under ``root`` (a single bundle directory also works)."""
    paths = sorted(glob.glob(os.path.join(root, "experiment_*", "report.json")))
    if not paths and os.path.exists(os.path.join(root, "report.json")):
        paths = [os.path.join(root, "report.json")]
    if not paths:
        raise InvalidArgumentError(f"no reports found under {root}")
    reports = []
    for p in paths:
        with open(p) as fh:
            data = json.load(fh)
        timing = {}
        tpath = os.path.join(os.path.dirname(p), "timing.json")
        if os.path.exists(tpath):
            with open(tpath) as fh:
                timing = json.load(fh)
        reports.append(ExperimentReport(data, timing))
    return reports
