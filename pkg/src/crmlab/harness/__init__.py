"""Experiment orchestration: oracle evaluation, paired tests, sweeps and plot data."""
from .experiment import (
    ALL_METHODS,
    AggregateRow,
    CellSeeds,
    ExperimentResult,
    ExperimentSpec,
    LoggingPolicy,
    ScoreRow,
    aggregate_scores,
    cell_data,
    cell_environment,
    cell_seeds,
    derive_seed,
    evaluate_policy,
    preset,
    read_scores,
    run_cell,
    run_experiment,
)
from .plots import PartialDataWarning, emit_plot_data
from .stats import PairedTTestReport, paired_t_test, regularized_incomplete_beta, student_t_two_sided_p

__all__ = [
    "ALL_METHODS",
    "AggregateRow",
    "CellSeeds",
    "ExperimentResult",
    "ExperimentSpec",
    "LoggingPolicy",
    "PairedTTestReport",
    "PartialDataWarning",
    "ScoreRow",
    "aggregate_scores",
    "cell_data",
    "cell_environment",
    "cell_seeds",
    "derive_seed",
    "emit_plot_data",
    "evaluate_policy",
    "paired_t_test",
    "preset",
    "read_scores",
    "regularized_incomplete_beta",
    "run_cell",
    "run_experiment",
    "student_t_two_sided_p",
]
