"""Linear domain probes on frozen shared and private features."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .. import ndgrad as ng
from ..data import DomainDataset, onehot
from ..losses import log_probs
from ..nets import ModelParams, numpy_forward
from ..optim import AdamState, adam_step


def features(params: ModelParams, datasets: Sequence[DomainDataset]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stacked (z_s, z_p, domain index) over all datasets, in list order."""
    x = np.concatenate([d.inputs for d in datasets])
    dom = np.concatenate([np.full(len(d), i) for i, d in enumerate(datasets)])
    return numpy_forward(params.theta_s, x), numpy_forward(params.theta_p, x), dom


def split_indices(labels: np.ndarray, rng: np.random.Generator, held_out: float = 0.5):
    """Stratified train / held-out split."""
    train, test = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        k = int(round(len(idx) * (1.0 - held_out)))
        train.append(idx[:k])
        test.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(test))


def fit_softmax_probe(z: np.ndarray, labels: np.ndarray, num_classes: int, seed: int,
                      steps: int = 400, eta: float = 0.05) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Multinomial logistic regression on standardized features.

    Returns (weights, bias, mean, std) so that predictions are
    ``argmax(((z - mean) / std) @ weights + bias)``.
    """
    mean = z.mean(axis=0)
    std = z.std(axis=0)
    std[std < 1e-12] = 1.0
    zs = ng.Tensor((z - mean) / std)
    y = onehot(labels, num_classes)
    rng = np.random.default_rng(seed)
    w = ng.Tensor(0.01 * rng.standard_normal((z.shape[1], num_classes)), requires_grad=True)
    b = ng.Tensor(np.zeros(num_classes), requires_grad=True)
    state = AdamState.for_params([w, b], beta1=0.9, beta2=0.999)
    n = z.shape[0]
    for _ in range(steps):
        w.grad = b.grad = None
        logp = log_probs(ng.add_rowvec(ng.matmul(zs, w), b))
        loss = ng.scale(ng.total(ng.mul(ng.Tensor(y), logp)), -1.0 / n)
        ng.backward(loss)
        adam_step([w, b], state, eta)
    return w.data.copy(), b.data.copy(), mean, std


def probe_accuracy(z: np.ndarray, labels: np.ndarray, num_classes: int, seed: int) -> float:
    rng = np.random.default_rng(seed)
    train, test = split_indices(labels, rng)
    w, b, mean, std = fit_softmax_probe(z[train], labels[train], num_classes, seed)
    pred = np.argmax(((z[test] - mean) / std) @ w + b, axis=1)
    return float(np.mean(pred == labels[test]))


def probe_disentanglement(params: ModelParams, datasets: Sequence[DomainDataset], seed: int = 0,
                          shuffle_labels: bool = False) -> tuple[float, float]:
    """Held-out accuracy of a domain probe on z_s and on z_p.

    Only domain membership is used as the probe target; class labels are
    never read. ``shuffle_labels`` permutes the domain labels (a sanity
    control that should land near chance).
    """
    z_s, z_p, dom = features(params, datasets)
    if shuffle_labels:
        dom = np.random.default_rng([seed, 7]).permutation(dom)
    m = len(datasets)
    return probe_accuracy(z_s, dom, m, seed), probe_accuracy(z_p, dom, m, seed)
