"""Alternating five-way training loop, run modes, and checkpoints.

One training step updates, in order, the shared encoder (theta_s), the
private encoder (theta_p), the label classifier (theta_c), the decoder (phi)
and the domain classifier (psi). Each sub-update runs its own forward pass
on the same batch and only touches its own parameter group.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import losses, optim
from .data import DomainDataset, batch_iter, source_batches
from .evalkit.metrics import RunReport, evaluate_domains
from .losses import Batch, HyperParams
from .ndgrad import backward, zero_grads
from .nets import GROUPS, Architecture, ConfigError, Mlp, ModelParams, NetConfig, init_params

log = logging.getLogger(__name__)

MODES = ("full", "pairwise", "combined", "woR", "woE", "woD", "woP", "source_only")
TRACE_FIELDS = ("L_S", "L_P", "L_C", "L_D", "L_F")


class DivergenceError(RuntimeError):
    """A sub-loss went non-finite."""

    def __init__(self, loss_name: str, step: int, value: float):
        super().__init__(f"{loss_name} became {value} at step {step}")
        self.loss_name, self.step, self.value = loss_name, step, value


class CheckpointError(ValueError):
    """Checkpoint file is unreadable or inconsistent."""


@dataclass(frozen=True)
class TrainConfig:
    hp: HyperParams = HyperParams()
    optimizer: str = "adam"
    beta1: float = 0.5
    beta2: float = 0.999
    eps: float = 1e-8
    steps: int = 3000
    batch_size_per_domain: int = 16
    mode: str = "full"
    adversarial_form: str = "confusion"
    seed: int = 0
    checkpoint_every: int = 0
    eval_every: int = 0
    arch: Architecture = Architecture()
    # pairwise runs: the one target domain (by domain_id) paired with the source
    target: Optional[int] = None

    def __post_init__(self):
        if self.mode not in MODES:
            raise ConfigError(f"unknown mode {self.mode!r}; expected one of {MODES}")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")
        if self.adversarial_form not in losses.ADVERSARIAL_FORMS:
            raise ConfigError(f"unknown adversarial form {self.adversarial_form!r}")
        if self.steps < 0 or self.batch_size_per_domain < 1:
            raise ConfigError("steps must be >= 0 and batch_size_per_domain >= 1")

    def effective_hp(self) -> HyperParams:
        if self.mode == "woR":
            return replace(self.hp, lambda_r=0.0)
        if self.mode == "woD":
            return replace(self.hp, lambda_d=0.0)
        return self.hp

    @property
    def target_terms(self) -> bool:
        return self.mode != "woE"

    @property
    def private(self) -> bool:
        return self.mode != "woP"

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, default=str)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


@dataclass
class TrainState:
    params: ModelParams
    opt_states: dict
    step: int = 0
    loss_trace: list[tuple[float, ...]] = field(default_factory=list)


def new_state(params: ModelParams, config: TrainConfig) -> TrainState:
    states = {g: optim.make_state(config.optimizer, params.group_tensors(g),
                                  config.beta1, config.beta2, config.eps) for g in GROUPS}
    return TrainState(params, states)


def _update(state: TrainState, groups: Sequence[str], loss_fn, name: str, config: TrainConfig) -> float:
    tensors = [t for g in groups for t in state.params.group_tensors(g)]
    zero_grads(tensors)
    loss = loss_fn(state.params.trainable_only(*groups))
    value = loss.item()
    if not math.isfinite(value):
        raise DivergenceError(name, state.step + 1, value)
    backward(loss)
    for t in tensors:
        if t.grad is None:
            t.grad = np.zeros_like(t.data)
    for g in groups:
        optim.step(config.optimizer, state.params.group_tensors(g), state.opt_states[g],
                   config.effective_hp().eta)
    return value


def train_step(state: TrainState, batch: Batch, config: TrainConfig) -> TrainState:
    """One round of the five alternating sub-updates (mutates ``state``)."""
    hp = config.effective_hp()
    if config.mode == "source_only":
        ce = _update(state, ("theta_s", "theta_c"),
                     lambda p: losses.source_cross_entropy(p, batch), "L_C", config)
        state.step += 1
        state.loss_trace.append((0.0, 0.0, ce, 0.0, 0.0))
        return state

    tt, priv = config.target_terms, config.private
    l_s = _update(state, ("theta_s",), lambda p: losses.loss_shared_encoder(
        p, batch, hp, target_terms=tt, private=priv, adversarial=config.adversarial_form), "L_S", config)
    l_p = 0.0
    if priv:
        l_p = _update(state, ("theta_p",), lambda p: losses.loss_private_encoder(p, batch, hp), "L_P", config)
    l_c = _update(state, ("theta_c",), lambda p: losses.loss_label_classifier(
        p, batch, hp, target_terms=tt), "L_C", config)
    l_f = _update(state, ("phi",), lambda p: losses.loss_decoder(p, batch, hp, private=priv), "L_F", config)
    l_d = _update(state, ("psi",), lambda p: losses.loss_domain_classifier(
        p, batch, hp, private=priv), "L_D", config)
    state.step += 1
    state.loss_trace.append((l_s, l_p, l_c, l_d, l_f))
    return state


# ---------------------------------------------------------------------------
# Run modes


@dataclass(frozen=True)
class RunDomains:
    """Datasets taking part in one run and the domain-label column of each."""

    datasets: tuple[DomainDataset, ...]
    labels: tuple[int, ...]
    width: int

    @property
    def source(self) -> DomainDataset:
        return next(d for d in self.datasets if d.is_source)


def resolve_domains(datasets: Sequence[DomainDataset], config: TrainConfig) -> RunDomains:
    if not datasets:
        raise ConfigError("empty dataset list")
    sources = [d for d in datasets if d.is_source]
    if len(sources) != 1:
        raise ConfigError(f"need exactly one source dataset, got {len(sources)}")
    src = sources[0]
    targets = [d for d in datasets if not d.is_source]
    if config.mode == "source_only":
        return RunDomains((src, *targets), (0,) * (1 + len(targets)), 1)
    if config.mode == "pairwise":
        chosen = [d for d in targets if d.domain_id == config.target]
        if len(chosen) != 1:
            raise ConfigError(f"pairwise mode needs one target domain, got target={config.target}")
        return RunDomains((src, chosen[0]), (0, 1), 2)
    if config.mode == "combined":
        return RunDomains((src, *targets), (0,) + (1,) * len(targets), 2)
    return RunDomains((src, *targets), tuple(range(1 + len(targets))), 1 + len(targets))


def mode_expand(base_config: TrainConfig, datasets: Sequence[DomainDataset]) -> list[TrainConfig]:
    """full -> [full]; combined -> [combined]; pairwise -> one config per target."""
    targets = [d.domain_id for d in datasets if not d.is_source]
    if base_config.mode == "pairwise":
        return [replace(base_config, target=t) for t in targets]
    if base_config.mode == "combined" and len(targets) == 1:
        log.warning("combined mode with a single target is the same as full; running full")
        return [replace(base_config, mode="full")]
    return [base_config]


def make_batches(run: RunDomains, config: TrainConfig):
    seed = int(np.random.SeedSequence([config.seed, 1]).generate_state(1)[0])
    if config.mode == "source_only":
        return source_batches(run.source, config.batch_size_per_domain, seed)
    return batch_iter(run.datasets, config.batch_size_per_domain, seed,
                      domain_labels=run.labels, num_domain_labels=run.width)


def build_params(run: RunDomains, config: TrainConfig) -> ModelParams:
    src = run.source
    configs = config.arch.net_configs(src.d_x, src.num_classes, max(run.width, 2))
    return init_params(configs, config.seed)


def train_loop(datasets: Sequence[DomainDataset], config: TrainConfig,
               checkpoint_dir: Optional[str] = None) -> tuple[TrainState, RunReport]:
    """Run ``config.steps`` steps, evaluating every ``eval_every`` steps and at the end."""
    run = resolve_domains(datasets, config)
    state = new_state(build_params(run, config), config)
    report = RunReport(mode=config.mode, seed=config.seed, config_digest=config.digest(),
                       source_domain=run.source.domain_id)

    def record():
        last = dict(zip(TRACE_FIELDS, state.loss_trace[-1])) if state.loss_trace else {}
        report.add_record(state.step, evaluate_domains(state.params, run.datasets), last)

    record()
    batches = make_batches(run, config)
    for _ in range(config.steps):
        train_step(state, next(batches), config)
        if config.eval_every and state.step % config.eval_every == 0:
            record()
        if checkpoint_dir and config.checkpoint_every and state.step % config.checkpoint_every == 0:
            save_checkpoint(state, os.path.join(checkpoint_dir, f"checkpoint_{state.step:06d}.json"))
    if report.records[-1]["step"] != state.step:
        record()
    report.summarize_trace(state.loss_trace, TRACE_FIELDS)
    return state, report


# ---------------------------------------------------------------------------
# Checkpoints


def _mlp_to_dict(net: Mlp) -> dict:
    return {
        "config": {"layer_widths": list(net.config.layer_widths),
                   "output_activation": net.config.output_activation,
                   "hidden_activation": net.config.hidden_activation,
                   "seed": net.config.seed},
        "tensors": [{"name": n, "shape": list(t.shape), "values": t.values.tolist()}
                    for n, t in net.named_tensors()],
    }


def _mlp_from_dict(d: dict) -> Mlp:
    from .ndgrad import Tensor

    cfg = NetConfig(tuple(d["config"]["layer_widths"]), d["config"]["output_activation"],
                    d["config"]["hidden_activation"], int(d["config"]["seed"]))
    tensors = []
    for entry in d["tensors"]:
        arr = np.asarray(entry["values"], dtype=np.float64).reshape(entry["shape"])
        tensors.append(Tensor(arr, requires_grad=True))
    n_layers = len(cfg.layer_widths) - 1
    if len(tensors) != 2 * n_layers:
        raise CheckpointError(f"expected {2 * n_layers} tensors, found {len(tensors)}")
    weights, biases = tensors[0::2], tensors[1::2]
    for i, (a, b) in enumerate(zip(cfg.layer_widths[:-1], cfg.layer_widths[1:])):
        if weights[i].shape != (a, b) or biases[i].shape != (b,):
            raise CheckpointError(f"layer {i} tensors do not match widths {cfg.layer_widths}")
    return Mlp(cfg, weights, biases)


def _opt_to_dict(s) -> dict:
    if isinstance(s, optim.AdamState):
        return {"kind": "adam", "t": s.t, "beta1": s.beta1, "beta2": s.beta2, "eps": s.eps,
                "m": [{"shape": list(a.shape), "values": a.reshape(-1).tolist()} for a in s.m],
                "v": [{"shape": list(a.shape), "values": a.reshape(-1).tolist()} for a in s.v]}
    return {"kind": "sgd", "t": s.t}


def _opt_from_dict(d: dict):
    if d["kind"] == "adam":
        def arrays(key):
            return [np.asarray(e["values"], dtype=np.float64).reshape(e["shape"]) for e in d[key]]
        return optim.AdamState(arrays("m"), arrays("v"), int(d["t"]), float(d["beta1"]),
                               float(d["beta2"]), float(d["eps"]))
    if d["kind"] == "sgd":
        return optim.SgdState(int(d["t"]))
    raise CheckpointError(f"unknown optimizer state kind {d['kind']!r}")


def checkpoint_bytes(state: TrainState) -> bytes:
    doc = {
        "format": "mtda-checkpoint",
        "version": 1,
        "step": state.step,
        "params": {g: _mlp_to_dict(state.params.group(g)) for g in GROUPS},
        "optimizer": {g: _opt_to_dict(state.opt_states[g]) for g in GROUPS},
        "loss_trace": [list(r) for r in state.loss_trace],
    }
    return (json.dumps(doc, indent=1) + "\n").encode()


def save_checkpoint(state: TrainState, path: str) -> None:
    with open(path, "wb") as fh:
        fh.write(checkpoint_bytes(state))


def load_checkpoint(path: str) -> TrainState:
    """Inverse of :func:`save_checkpoint`; float values round-trip exactly."""
    try:
        with open(path, "rb") as fh:
            doc = json.loads(fh.read().decode())
        if doc.get("format") != "mtda-checkpoint":
            raise CheckpointError(f"{path} is not a checkpoint")
        params = ModelParams(**{g: _mlp_from_dict(doc["params"][g]) for g in GROUPS})
        opt = {g: _opt_from_dict(doc["optimizer"][g]) for g in GROUPS}
        trace = [tuple(float(v) for v in r) for r in doc["loss_trace"]]
        state = TrainState(params, opt, int(doc["step"]), trace)
    except CheckpointError:
        raise
    except (OSError, UnicodeDecodeError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"cannot load checkpoint {path}: {exc}") from exc
    if len(state.loss_trace) != state.step:
        raise CheckpointError(f"{path}: trace length {len(state.loss_trace)} != step {state.step}")
    return state
