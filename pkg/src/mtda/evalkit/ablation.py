"""Run the full model, its ablations and the baselines on one dataset and tabulate them."""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

from ..data import DomainDataset
from .baselines import baseline_1nn
from .metrics import RunReport

ABLATION_MODES = ("full", "woR", "woE", "woD", "woP", "source_only", "1nn", "combined", "pairwise")


def merge_pairwise(reports: Sequence[RunReport], source_domain: int) -> RunReport:
    """One report per target → a single report keeping each run's own target."""
    merged = RunReport(mode="pairwise", seed=reports[0].seed if reports else 0,
                       config_digest=",".join(r.config_digest for r in reports),
                       source_domain=source_domain)
    acc = {}
    for r in reports:
        for d, a in r.accuracies.items():
            if d != source_domain:
                acc[d] = a
    src = [r.accuracies[source_domain] for r in reports if source_domain in r.accuracies]
    if src:
        acc[source_domain] = sum(src) / len(src)
    merged.add_record(0, acc, {})
    return merged


def run_mode(datasets: Sequence[DomainDataset], base_config, mode: str) -> RunReport:
    from ..trainer import mode_expand, train_loop

    if mode == "1nn":
        return baseline_1nn(datasets)
    configs = mode_expand(replace(base_config, mode=mode, target=None), datasets)
    reports = [train_loop(datasets, c)[1] for c in configs]
    if mode == "pairwise":
        return merge_pairwise(reports, reports[0].source_domain)
    return reports[0]


def ablation_suite(datasets: Sequence[DomainDataset], base_config,
                   modes: Sequence[str] = ABLATION_MODES) -> dict[str, RunReport]:
    """Every requested mode on the same data and seed."""
    return {m: run_mode(datasets, base_config, m) for m in modes}


def format_table(reports: dict[str, RunReport]) -> str:
    """Plain-text table: one row per mode, one column per labelled domain."""
    domains = sorted({d for r in reports.values() for d in r.accuracies})
    header = ["mode"] + [f"dom{d}" for d in domains] + ["mean_target"]
    rows = [header]
    for mode, r in reports.items():
        cells = [f"{r.accuracies[d]:.4f}" if d in r.accuracies else "-" for d in domains]
        rows.append([mode, *cells, f"{r.mean_target_accuracy:.4f}"])
    widths = [max(len(row[i]) for row in rows) for i in range(len(header))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows) + "\n"
