"""Experiment orchestration: config, training loop, sweeps, plots, CLI."""

from .config import BufferConfig, ExperimentConfig, config_from_dict, load_config
from .plots import emit_plots
from .runner import (Agent, NumericFailure, RunArtifacts, Trainer, load_agents, run_experiment,
                     trainer_from_checkpoint)
from .sweeps import SweepTable, run_ablations, run_tau_sweep

__all__ = ["Agent", "BufferConfig", "ExperimentConfig", "NumericFailure", "RunArtifacts", "SweepTable",
           "Trainer", "config_from_dict", "emit_plots", "load_agents", "load_config", "run_ablations",
           "run_experiment", "run_tau_sweep", "trainer_from_checkpoint"]
