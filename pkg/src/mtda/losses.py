"""Training losses for the five parameter groups, plus entropy helpers.

Each ``loss_*`` function returns a scalar :class:`~mtda.ndgrad.Tensor`.
Gradients flow to whatever parameters in ``params`` carry
``requires_grad``; callers pick the group being updated with
:meth:`ModelParams.trainable_only`.

Batch layout: the first ``n_s`` rows are labelled source samples, the
remaining rows are unlabelled target samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import ndgrad as ng
from .nets import ModelParams, decode, domain_logits, encode_private, encode_shared, label_logits
from .ndgrad import ContractError, LOG_FLOOR, Tensor

LOG_FLOOR_VALUE = math.log(LOG_FLOOR)
ADVERSARIAL_FORMS = ("confusion", "sign_flip")


@dataclass(frozen=True)
class HyperParams:
    lambda_r: float = 1.0
    lambda_c: float = 0.01
    lambda_d: float = 0.20
    eta: float = 2e-4

    def __post_init__(self):
        for name in ("lambda_r", "lambda_c", "lambda_d"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")
        if self.eta < 0:
            raise ValueError("eta must be non-negative")


@dataclass(frozen=True)
class Batch:
    x: np.ndarray
    d_lab: np.ndarray
    n_s: int
    y: Optional[np.ndarray] = None

    def __post_init__(self):
        n = self.x.shape[0]
        if self.d_lab.shape[0] != n:
            raise ContractError(f"d_lab has {self.d_lab.shape[0]} rows, x has {n}")
        if not 0 <= self.n_s <= n:
            raise ContractError(f"n_s = {self.n_s} outside [0, {n}]")
        if self.n_s and (self.y is None or self.y.shape[0] != self.n_s):
            raise ContractError("y must hold one one-hot row per source sample")

    @property
    def n(self) -> int:
        return self.x.shape[0]

    @property
    def num_domains(self) -> int:
        return self.d_lab.shape[1]


def _require_rows(batch: Batch) -> None:
    if batch.n == 0:
        raise ContractError("empty batch")


def _require_source(batch: Batch) -> None:
    _require_rows(batch)
    if batch.n_s == 0:
        raise ContractError("label classifier needs at least one labelled source row")


def log_probs(logits: Tensor) -> Tensor:
    """ln softmax(logits), floored at ln(1e-12)."""
    return ng.clamp_min(ng.log_softmax(logits), LOG_FLOOR_VALUE)


def _weighted_log_sum(onehot: np.ndarray, logp: Tensor) -> Tensor:
    """sum_i onehot_i . logp_i"""
    return ng.total(ng.mul(Tensor(onehot), logp))


def _check_probabilities(p: Tensor) -> None:
    if p.data.ndim != 2 or p.shape[0] == 0:
        raise ContractError(f"expected a non-empty n×K probability matrix, got {p.shape}")
    if np.any(np.abs(p.data.sum(axis=1) - 1.0) > 1e-6) or np.any(p.data < 0):
        raise ContractError("rows are not probability vectors")


def entropy_term(p) -> Tensor:
    """Mean per-row entropy, in [0, ln K]."""
    p = ng.as_tensor(p)
    _check_probabilities(p)
    n_t = p.shape[0]
    return ng.scale(ng.total(ng.mul(p, ng.log(p))), -1.0 / n_t)


def balance_term(p) -> Tensor:
    """(1/n) sum_i p_i . ln(mean_j p_j), which equals minus the entropy of
    the mean prediction; in [-ln K, 0]."""
    p = ng.as_tensor(p)
    _check_probabilities(p)
    n_t = p.shape[0]
    log_mean = ng.repeat_rows(ng.log(ng.mean_rows(p)), n_t)
    return ng.scale(ng.total(ng.mul(p, log_mean)), 1.0 / n_t)


def _target_terms(params: ModelParams, x_target: np.ndarray) -> Tensor:
    p = ng.softmax(label_logits(params, encode_shared(params, x_target)))
    return ng.add(entropy_term(p), balance_term(p))


def _features(params: ModelParams, x: np.ndarray, private: bool) -> tuple[Tensor, Tensor]:
    z_s = encode_shared(params, x)
    if private:
        z_p = encode_private(params, x)
    else:
        z_p = Tensor(np.zeros((x.shape[0], params.d_p)))
    return z_s, z_p


def reconstruction(params: ModelParams, batch: Batch, hp: HyperParams, private: bool = True) -> Tensor:
    """(lambda_r / n) sum_i |x_i - F(E_s(x_i), E_p(x_i))|_1"""
    _require_rows(batch)
    z_s, z_p = _features(params, batch.x, private)
    x_hat = decode(params, z_s, z_p)
    return ng.scale(ng.l1_distance(Tensor(batch.x), x_hat), hp.lambda_r)


loss_decoder = reconstruction


def loss_domain_classifier(params: ModelParams, batch: Batch, hp: HyperParams,
                           private: bool = True) -> Tensor:
    _require_rows(batch)
    c = -hp.lambda_d / batch.n
    z_s = encode_shared(params, batch.x)
    out = ng.scale(_weighted_log_sum(batch.d_lab, log_probs(domain_logits(params, z_s))), c)
    if private:
        z_p = encode_private(params, batch.x)
        private_part = _weighted_log_sum(batch.d_lab, log_probs(domain_logits(params, z_p)))
        out = ng.add(out, ng.scale(private_part, c))
    return out


def _source_nll(params: ModelParams, batch: Batch) -> Tensor:
    """-sum_{i < n_s} y_i . ln C(E_s(x_i))"""
    x_src = batch.x[: batch.n_s]
    logp = log_probs(label_logits(params, encode_shared(params, x_src)))
    return ng.neg(_weighted_log_sum(batch.y, logp))


def loss_label_classifier(params: ModelParams, batch: Batch, hp: HyperParams,
                          target_terms: bool = True) -> Tensor:
    _require_source(batch)
    out = ng.scale(_source_nll(params, batch), 1.0 / batch.n)
    if target_terms and batch.n > batch.n_s and hp.lambda_c > 0:
        out = ng.add(out, ng.scale(_target_terms(params, batch.x[batch.n_s:]), hp.lambda_c))
    return out


def loss_private_encoder(params: ModelParams, batch: Batch, hp: HyperParams) -> Tensor:
    _require_rows(batch)
    z_p = encode_private(params, batch.x)
    rec = reconstruction(params, batch, hp)
    dom = _weighted_log_sum(batch.d_lab, log_probs(domain_logits(params, z_p)))
    return ng.add(rec, ng.scale(dom, -hp.lambda_d / batch.n))


def adversarial_term(params: ModelParams, batch: Batch, hp: HyperParams,
                     form: str = "confusion") -> Tensor:
    """Domain term acting on the shared features in the shared-encoder loss.

    ``confusion``: cross-entropy of D(E_s(x)) against the uniform domain
    distribution, scaled by lambda_d / n. Minimum lambda_d * ln M.
    ``sign_flip``: +lambda_d / n * sum_i d_i . ln D(E_s(x_i)); unbounded below.
    """
    z_s = encode_shared(params, batch.x)
    logp = log_probs(domain_logits(params, z_s))
    if form == "confusion":
        m = batch.num_domains
        return ng.scale(ng.total(logp), -hp.lambda_d / (batch.n * m))
    if form == "sign_flip":
        return ng.scale(_weighted_log_sum(batch.d_lab, logp), hp.lambda_d / batch.n)
    raise ValueError(f"unknown adversarial form {form!r}; expected one of {ADVERSARIAL_FORMS}")


def loss_shared_encoder(params: ModelParams, batch: Batch, hp: HyperParams,
                        target_terms: bool = True, private: bool = True,
                        adversarial: str = "confusion") -> Tensor:
    _require_source(batch)
    out = reconstruction(params, batch, hp, private=private)
    out = ng.add(out, ng.scale(_source_nll(params, batch), hp.lambda_c / batch.n))
    out = ng.add(out, adversarial_term(params, batch, hp, adversarial))
    if target_terms and batch.n > batch.n_s and hp.lambda_c > 0:
        out = ng.add(out, ng.scale(_target_terms(params, batch.x[batch.n_s:]), hp.lambda_c))
    return out


def source_cross_entropy(params: ModelParams, batch: Batch) -> Tensor:
    """Mean source-row negative log-likelihood (the source-only objective)."""
    _require_source(batch)
    return ng.scale(_source_nll(params, batch), 1.0 / batch.n_s)


# ---------------------------------------------------------------------------
# Discrete mutual information and its variational lower bound


def mi_lower_bound_gap(joint, q) -> tuple[float, float]:
    """Exact I(x; z) and the bound H(x) + E_p[ln q(x|z)] for finite alphabets.

    ``joint[i, j] = p(x=i, z=j)``; ``q[i, j] = q(x=i | z=j)`` (columns are
    distributions). Cells with p(x, z) = 0 contribute nothing.
    """
    p = np.asarray(joint, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if p.ndim != 2 or q.shape != p.shape:
        raise ContractError(f"joint {p.shape} and q {q.shape} must be equal-shape matrices")
    if np.any(p < 0) or abs(p.sum() - 1.0) > 1e-9:
        raise ContractError("joint must be non-negative and sum to 1")
    if np.any(q < 0) or np.any(np.abs(q.sum(axis=0) - 1.0) > 1e-9):
        raise ContractError("every column of q must be a distribution over x")

    px = p.sum(axis=1)
    pz = p.sum(axis=0)
    nz = p > 0
    ratio = p[nz] / np.outer(px, pz)[nz]
    exact = float(np.sum(p[nz] * np.log(ratio)))
    h_x = float(-np.sum(px[px > 0] * np.log(px[px > 0])))
    with np.errstate(divide="ignore"):
        bound = h_x + float(np.sum(p[nz] * np.log(q[nz])))
    return exact, bound
