"""Experiment orchestration: configs, pipeline, reports, data files, figures."""

from .config import ConfigError, ExperimentConfig
from .pipeline import (CombinatorialBudgetError, ResourceGuardError, run_experiment,
                       search_aggregates, sweep, tune)
from .report import ExperimentReport, emit_report

__all__ = ["ConfigError", "ExperimentConfig", "CombinatorialBudgetError", "ResourceGuardError",
           "run_experiment", "search_aggregates", "sweep", "tune", "ExperimentReport", "emit_report"]
