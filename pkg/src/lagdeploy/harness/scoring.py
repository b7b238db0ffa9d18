"""Skill scores of a proposed strategy against random placements."""

import csv

import numpy as np

from ..errors import InvalidArgumentError

DEFAULT_PERCENTILES = (5, 25, 50, 75, 95)


def _pairs(reports, proposed, baseline, evaluation):
    out = []
    for rep in reports:
        data = rep.data if hasattr(rep, "data") else rep
        try:
            entry = data["strategies"][proposed]
            trials = data["random"][baseline]
        except KeyError:
            raise InvalidArgumentError(
                f"experiment {data.get('experiment')} lacks '{proposed}' or '{baseline}' results"
            ) from None
        key = "single" if evaluation == "single" else "gain"
        if key not in entry and not entry.get("infeasible"):
            raise InvalidArgumentError(f"no '{evaluation}' evaluation in the report")
        gains = [g["total"] for g in trials.get("single" if evaluation == "single" else "gains", [])]
        if len(gains) < 2:
            raise InvalidArgumentError("skill scores need at least two random trials per experiment")
        # a strategy that could not place its drifters loses every comparison
        proposed_gain = -np.inf if entry.get("infeasible") else entry[key]["total"]
        out.append((proposed_gain, np.asarray(gains, dtype=float)))
    if not out:
        raise InvalidArgumentError("no reports to score")
    return out


def skill_score(reports, percentiles=DEFAULT_PERCENTILES, proposed="surrogate_all_at_once",
                baseline="random_with_distance", evaluation="ensemble"):
    """Fraction of experiments whose proposed gain exceeds each percentile of its random gains.

    Percentiles use linear interpolation. The returned table also holds the
    fraction beating the random mean.
    """
    pairs = _pairs(reports, proposed, baseline, evaluation)
    percentiles = [float(q) for q in percentiles]
    if any(q < 0 or q > 100 for q in percentiles):
        raise InvalidArgumentError("percentiles must lie in [0, 100]")
    rows = []
    for q in percentiles:
        wins = [g > np.percentile(r, q, method="linear") for g, r in pairs]
        rows.append({"percentile": q, "fraction": float(np.mean(wins))})
    return {
        "proposed": proposed,
        "baseline": baseline,
        "evaluation": evaluation,
        "n_experiments": len(pairs),
        "rows": rows,
        "beats_mean": float(np.mean([g > r.mean() for g, r in pairs])),
        "wins_over_mean": int(sum(g > r.mean() for g, r in pairs)),
    }


def win_fraction(reports, proposed, baseline, evaluation="ensemble"):
    """Fraction of trials, pooled over experiments, with a gain below the proposed one."""
    pairs = _pairs(reports, proposed, baseline, evaluation)
    return float(np.mean(np.concatenate([r < g for g, r in pairs])))


def write_skill_csv(table, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["proposed", "baseline", "evaluation", "percentile", "fraction"])
        for row in table["rows"]:
            w.writerow([table["proposed"], table["baseline"], table["evaluation"], row["percentile"], row["fraction"]])
        w.writerow([table["proposed"], table["baseline"], table["evaluation"], "mean", table["beats_mean"]])


def available_comparisons(reports):
    """All (proposed, baseline, evaluation) triples present in the first report."""
    out = []
    first = reports[0].data if hasattr(reports[0], "data") else reports[0]
    for name, entry in sorted(first.get("strategies", {}).items()):
        for kind in sorted(first.get("random", {})):
            for evaluation in ("ensemble", "single"):
                key, trials = ("gain", "gains") if evaluation == "ensemble" else ("single", "single")
                if (key in entry or entry.get("infeasible")) and trials in first["random"][kind]:
                    out.append((name, kind, evaluation))
    return out
