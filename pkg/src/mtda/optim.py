"""Plain gradient descent and Adam over a list of parameter tensors."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .ndgrad import ContractError, Tensor


def _grads(params: Sequence[Tensor]) -> list[np.ndarray]:
    out = []
    for i, p in enumerate(params):
        if p.grad is None:
            raise ContractError(f"parameter {i} (shape {p.shape}) has no gradient")
        out.append(p.grad)
    return out


def sgd_step(params: Sequence[Tensor], eta: float) -> None:
    """p <- p - eta * p.grad, in place."""
    for p, g in zip(params, _grads(params)):
        p.data -= eta * g


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    t: int = 0
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params: Sequence[Tensor], beta1: float = 0.5, beta2: float = 0.999,
                   eps: float = 1e-8) -> "AdamState":
        return cls([np.zeros_like(p.data) for p in params], [np.zeros_like(p.data) for p in params],
                   0, beta1, beta2, eps)


def adam_step(params: Sequence[Tensor], state: AdamState, eta: float) -> None:
    grads = _grads(params)
    if len(state.m) != len(params) or any(m.shape != p.shape for m, p in zip(state.m, params)):
        raise ContractError("Adam state does not match the parameter shapes")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p.data -= eta * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass
class SgdState:
    """Placeholder so both optimizers share the per-group state slot."""

    t: int = 0


def make_state(kind: str, params: Sequence[Tensor], beta1: float = 0.5, beta2: float = 0.999,
               eps: float = 1e-8):
    if kind == "adam":
        return AdamState.for_params(params, beta1, beta2, eps)
    if kind == "sgd":
        return SgdState()
    raise ValueError(f"unknown optimizer {kind!r}")


def step(kind: str, params: Sequence[Tensor], state, eta: float) -> None:
    if kind == "adam":
        adam_step(params, state, eta)
    else:
        sgd_step(params, eta)
        state.t += 1
