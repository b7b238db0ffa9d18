"""Experiment orchestration: configuration, scenarios, scoring and persistence."""

from .config import ExperimentConfig
from .experiments import (
    ExperimentReport,
    InvariantLog,
    Reanalysis,
    Realtime,
    StageClock,
    experiment_seed,
    run_batch,
    run_experiment,
    run_realtime,
    run_reanalysis,
)
from .io import load_reports, write_report, write_summary
from .scoring import skill_score, win_fraction, write_skill_csv

__all__ = [
    "ExperimentConfig",
    "ExperimentReport",
    "InvariantLog",
    "Reanalysis",
    "Realtime",
    "StageClock",
    "experiment_seed",
    "load_reports",
    "run_batch",
    "run_experiment",
    "run_realtime",
    "run_reanalysis",
    "skill_score",
    "win_fraction",
    "write_report",
    "write_skill_csv",
    "write_summary",
]
