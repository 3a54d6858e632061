"""Classification accuracy and the run report."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from ..data import DomainDataset
from ..nets import ModelParams, numpy_forward


def predict_labels(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """argmax C(E_s(x)); ties go to the lowest class index."""
    probs = numpy_forward(params.theta_c, numpy_forward(params.theta_s, x))
    return np.argmax(probs, axis=1)


def eval_accuracy(params: ModelParams, dataset: DomainDataset) -> float:
    labels = dataset.eval_labels()
    if len(dataset) == 0:
        return 0.0
    return float(np.mean(predict_labels(params, dataset.inputs) == labels))


def evaluate_domains(params: ModelParams, datasets: Sequence[DomainDataset]) -> dict[int, float]:
    return {d.domain_id: eval_accuracy(params, d) for d in datasets if d.has_labels}


@dataclass
class RunReport:
    mode: str
    seed: int = 0
    config_digest: str = ""
    source_domain: int = 0
    accuracies: dict[int, float] = field(default_factory=dict)
    records: list[dict] = field(default_factory=list)
    loss_summary: dict[str, dict[str, float]] = field(default_factory=dict)
    probe: Optional[dict[str, float]] = None

    @property
    def mean_target_accuracy(self) -> float:
        vals = [a for d, a in self.accuracies.items() if d != self.source_domain]
        return float(np.mean(vals)) if vals else float("nan")

    @property
    def source_accuracy(self) -> float:
        return self.accuracies.get(self.source_domain, float("nan"))

    def add_record(self, step: int, accuracies: dict[int, float], losses: dict[str, float]) -> None:
        self.accuracies = dict(accuracies)
        self.records.append({
            "step": step,
            "mode": self.mode,
            "accuracy": {str(k): v for k, v in sorted(accuracies.items())},
            "mean_target_accuracy": self.mean_target_accuracy,
            "losses": dict(losses),
        })

    def summarize_trace(self, trace: Sequence[tuple[float, ...]], names: Sequence[str]) -> None:
        if not trace:
            return
        arr = np.asarray(trace)
        tail = arr[-max(1, len(arr) // 10):]
        self.loss_summary = {
            n: {"first": float(arr[0, i]), "last": float(arr[-1, i]), "tail_mean": float(tail[:, i].mean())}
            for i, n in enumerate(names)
        }

    def to_dict(self) -> dict:
        return {
            "mode": self.mode,
            "seed": self.seed,
            "config_digest": self.config_digest,
            "source_domain": self.source_domain,
            "accuracy": {str(k): v for k, v in sorted(self.accuracies.items())},
            "mean_target_accuracy": self.mean_target_accuracy,
            "loss_summary": self.loss_summary,
            "probe": self.probe,
        }

    def log_lines(self) -> list[str]:
        """One JSON record per evaluation, then the summary record."""
        lines = [json.dumps(r, sort_keys=True) for r in self.records]
        lines.append(json.dumps({"summary": self.to_dict()}, sort_keys=True))
        return lines
