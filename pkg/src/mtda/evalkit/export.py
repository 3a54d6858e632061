"""CSV export of shared/private features with a deterministic 2-D PCA projection."""

from __future__ import annotations

import csv
import io
from typing import Sequence

import numpy as np

from ..data import DomainDataset
from ..nets import ModelParams, numpy_forward


def pca_components(z: np.ndarray, k: int = 2) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-``k`` principal axes of ``z`` (rows are samples).

    Returns (mean, components [k×d], eigenvalues [k]). Each axis is signed
    so its largest-magnitude entry is positive (first such entry on ties).
    """
    mean = z.mean(axis=0)
    zc = z - mean
    cov = zc.T @ zc / max(1, z.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:k]
    comps = evecs[:, order].T.copy()
    for c in comps:
        if c[np.argmax(np.abs(c))] < 0:
            c *= -1.0
    return mean, comps, evals[order]


def pca_project(z: np.ndarray, k: int = 2) -> np.ndarray:
    mean, comps, _ = pca_components(z, k)
    return (z - mean) @ comps.T


def feature_rows(params: ModelParams, datasets: Sequence[DomainDataset]) -> list[list]:
    x = np.concatenate([d.inputs for d in datasets])
    dom = np.concatenate([np.full(len(d), d.domain_id) for d in datasets])
    lab = np.concatenate([d.eval_labels() if d.has_labels else np.full(len(d), -1) for d in datasets])
    z_s = numpy_forward(params.theta_s, x)
    z_p = numpy_forward(params.theta_p, x)
    width = max(z_s.shape[1], z_p.shape[1])

    def pad(z):
        return np.pad(z, ((0, 0), (0, width - z.shape[1])), constant_values=np.nan)

    pooled = np.concatenate([pad(z_s), pad(z_p)])
    proj = pca_project(np.nan_to_num(pooled, nan=0.0))
    rows = []
    n = x.shape[0]
    for kind, z, offset in (("shared", z_s, 0), ("private", z_p, n)):
        for i in range(n):
            coords = [repr(float(v)) for v in z[i]] + [""] * (width - z.shape[1])
            rows.append([int(dom[i]), int(lab[i]), kind, *coords,
                         repr(float(proj[offset + i, 0])), repr(float(proj[offset + i, 1]))])
    return rows


def features_csv(params: ModelParams, datasets: Sequence[DomainDataset]) -> str:
    rows = feature_rows(params, datasets)
    width = len(rows[0]) - 5 if rows else 0
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["domain_id", "label", "kind", *[f"f{i}" for i in range(width)], "pc1", "pc2"])
    w.writerows(rows)
    return buf.getvalue()


def export_features(params: ModelParams, datasets: Sequence[DomainDataset], path: str) -> None:
    """Write one row per (sample, feature kind). Raises OSError if unwritable."""
    text = features_csv(params, datasets)
    with open(path, "w", newline="") as fh:
        fh.write(text)
