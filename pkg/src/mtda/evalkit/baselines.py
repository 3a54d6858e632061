"""Baselines without adaptation: source-only training and 1-nearest-neighbour."""

from __future__ import annotations

from dataclasses import replace
from typing import Sequence

import numpy as np

from ..data import DomainDataset
from ..ndgrad import ContractError
from .metrics import RunReport


def baseline_source_only(datasets: Sequence[DomainDataset], config) -> RunReport:
    """Train C(E_s(x)) on source labels alone, evaluate on every domain."""
    from ..trainer import train_loop

    _, report = train_loop(datasets, replace(config, mode="source_only"))
    return report


def nearest_source_labels(source_x: np.ndarray, source_y: np.ndarray, x: np.ndarray,
                          chunk: int = 512) -> np.ndarray:
    """Label of the nearest source row (Euclidean); ties go to the lowest index."""
    out = np.empty(x.shape[0], dtype=np.int64)
    sq_src = (source_x ** 2).sum(axis=1)
    for start in range(0, x.shape[0], chunk):
        block = x[start:start + chunk]
        d2 = sq_src[None, :] - 2.0 * block @ source_x.T + (block ** 2).sum(axis=1)[:, None]
        # Re-rank the near-tied candidates with exact differences so ties are exact.
        best = d2.min(axis=1, keepdims=True)
        for i, row in enumerate(d2):
            cand = np.flatnonzero(row <= best[i, 0] + 1e-9)
            exact = ((source_x[cand] - block[i]) ** 2).sum(axis=1)
            out[start + i] = source_y[cand[np.argmin(exact)]]
    return out


def baseline_1nn(datasets: Sequence[DomainDataset]) -> RunReport:
    sources = [d for d in datasets if d.is_source]
    if len(sources) != 1 or len(sources[0]) == 0:
        raise ContractError("1-NN needs exactly one non-empty labelled source domain")
    src = sources[0]
    report = RunReport(mode="1nn", source_domain=src.domain_id)
    acc = {}
    for d in datasets:
        if not d.has_labels:
            continue
        pred = nearest_source_labels(src.inputs, src.train_labels(), d.inputs)
        acc[d.domain_id] = float(np.mean(pred == d.eval_labels()))
    report.add_record(0, acc, {})
    return report
