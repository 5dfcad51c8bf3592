"""Experiment runners and the command-line interface."""

from .experiment import (
    METHODS, SWEEP_AXES, EvalReport, ExperimentConfig, RnnSettings, TraceSource,
    load_intervals, plan_runs, run_monte_carlo, run_single, sweep, write_sweep_table,
)
from .tasks import (
    BurstExperiment, ClassificationExperiment, classification_dataset,
    run_burst_experiment, run_classification_experiment, shuffled_label_control,
)

__all__ = [
    "METHODS", "SWEEP_AXES", "EvalReport", "ExperimentConfig", "RnnSettings", "TraceSource",
    "load_intervals", "plan_runs", "run_monte_carlo", "run_single", "sweep",
    "write_sweep_table", "BurstExperiment", "ClassificationExperiment",
    "classification_dataset", "run_burst_experiment", "run_classification_experiment",
    "shuffled_label_control",
]
