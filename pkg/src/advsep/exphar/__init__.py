"""Experiment harness: configs, pipelines, reports, ingestion and the CLI."""

from .config import CRITERIA_DEFAULTS, DEFAULT_THEORY_GRID, KINDS, ExperimentConfig
from .experiments import run_experiment
from .ingest import ingest_noise_csv
from .report import ExperimentReport, emit_report, load_report, read_flat_csv

__all__ = [
    "CRITERIA_DEFAULTS",
    "DEFAULT_THEORY_GRID",
    "KINDS",
    "ExperimentConfig",
    "ExperimentReport",
    "emit_report",
    "ingest_noise_csv",
    "load_report",
    "read_flat_csv",
    "run_experiment",
]
