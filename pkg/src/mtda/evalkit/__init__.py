"""Accuracy, baselines, disentanglement probes, feature export and ablations."""

from .metrics import RunReport, eval_accuracy, evaluate_domains, predict_labels

__all__ = ["RunReport", "eval_accuracy", "evaluate_domains", "predict_labels"]
