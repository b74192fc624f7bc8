"""Deterministic simulator of personalized federated learning with attentive graph hypernetworks."""

from .config import ExperimentConfig, load_config
from .orchestrator import run_ablation_suite, run_experiment, run_pq_sweep

__version__ = "0.1.0"

__all__ = ["ExperimentConfig", "load_config", "run_experiment", "run_ablation_suite", "run_pq_sweep"]
