"""Causal discrete-choice modeling toolkit.

Learn a DAG from discrete data (:mod:`.discovery`), fit residual-logit
structural mechanisms along it (:mod:`.scm`) and answer intervention
queries through flow-VAE abduction (:mod:`.counterfactual`).
"""
from .data import Dataset, GeneratorConfig, VariableSpec, default_generator, load_csv, simulate, split
from .graph import CausalDag, Knowledge, d_separated, mechanism_sequence
from .scm import FitConfig, Mechanism, Scm, fit, predict_sequential

__version__ = "0.1.0"

__all__ = [
    "CausalDag",
    "Dataset",
    "FitConfig",
    "GeneratorConfig",
    "Knowledge",
    "Mechanism",
    "Scm",
    "VariableSpec",
    "d_separated",
    "default_generator",
    "fit",
    "load_csv",
    "mechanism_sequence",
    "predict_sequential",
    "simulate",
    "split",
]
