"""The five networks: shared encoder, private encoder, decoder, domain and label classifiers.

All five are fully-connected stacks (ReLU hidden layers). The encoders have
linear outputs, the decoder ends in tanh, and both classifiers end in a
softmax. The domain classifier's parameters are shared between shared and
private features, so ``d_s`` must equal ``d_p`` whenever both are fed to it.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterator

import numpy as np

from . import ndgrad as ng
from .ndgrad import DimensionError, Tensor

GROUPS = ("theta_s", "theta_p", "theta_c", "phi", "psi")
OUTPUT_ACTIVATIONS = ("linear", "tanh", "softmax")


class ConfigError(ValueError):
    """Inconsistent network or run configuration."""


@dataclass(frozen=True)
class NetConfig:
    layer_widths: tuple[int, ...]
    output_activation: str = "linear"
    hidden_activation: str = "relu"
    seed: int = 0

    def __post_init__(self):
        widths = tuple(int(w) for w in self.layer_widths)
        object.__setattr__(self, "layer_widths", widths)
        if len(widths) < 2:
            raise ConfigError(f"need at least an input and an output width, got {widths}")
        if any(w <= 0 for w in widths):
            raise ConfigError(f"layer widths must be positive, got {widths}")
        if self.hidden_activation != "relu":
            raise ConfigError(f"unsupported hidden activation {self.hidden_activation!r}")
        if self.output_activation not in OUTPUT_ACTIVATIONS:
            raise ConfigError(f"unsupported output activation {self.output_activation!r}")

    @property
    def n_in(self) -> int:
        return self.layer_widths[0]

    @property
    def n_out(self) -> int:
        return self.layer_widths[-1]


@dataclass
class Mlp:
    """Weights ``W[i]`` (fan_in × fan_out) and biases ``b[i]`` of one network."""

    config: NetConfig
    weights: list[Tensor]
    biases: list[Tensor]

    def tensors(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out

    def named_tensors(self) -> Iterator[tuple[str, Tensor]]:
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            yield f"W{i}", w
            yield f"b{i}", b

    def frozen(self) -> "Mlp":
        return Mlp(self.config, [w.detach() for w in self.weights], [b.detach() for b in self.biases])

    def pre_activation(self, x: Tensor) -> Tensor:
        """Forward pass up to (not including) the output activation."""
        if x.data.ndim != 2 or x.shape[1] != self.config.n_in:
            raise DimensionError(f"network expects n×{self.config.n_in} input, got {x.shape}")
        h = x
        last = len(self.weights) - 1
        for i, (w, b) in enumerate(zip(self.weights, self.biases)):
            h = ng.add_rowvec(ng.matmul(h, w), b)
            if i < last:
                h = ng.relu(h)
        return h

    def __call__(self, x: Tensor) -> Tensor:
        h = self.pre_activation(x)
        act = self.config.output_activation
        if act == "tanh":
            return ng.tanh(h)
        if act == "softmax":
            return ng.softmax(h)
        return h


def init_mlp(config: NetConfig, rng: np.random.Generator) -> Mlp:
    """Fan-in scaled uniform weights (variance 2/fan_in), zero biases."""
    weights, biases = [], []
    widths = config.layer_widths
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = np.sqrt(6.0 / fan_in)
        weights.append(Tensor(rng.uniform(-bound, bound, size=(fan_in, fan_out)), requires_grad=True))
        biases.append(Tensor(np.zeros(fan_out), requires_grad=True))
    return Mlp(config, weights, biases)


@dataclass
class ModelParams:
    """theta_s: shared encoder, theta_p: private encoder, theta_c: label
    classifier, phi: decoder, psi: domain classifier."""

    theta_s: Mlp
    theta_p: Mlp
    theta_c: Mlp
    phi: Mlp
    psi: Mlp

    def group(self, name: str) -> Mlp:
        if name not in GROUPS:
            raise KeyError(name)
        return getattr(self, name)

    def group_tensors(self, name: str) -> list[Tensor]:
        return self.group(name).tensors()

    def all_tensors(self) -> list[Tensor]:
        return [t for g in GROUPS for t in self.group_tensors(g)]

    def trainable_only(self, *names: str) -> "ModelParams":
        """View where only the named groups carry gradient; the rest are constants.

        Buffers are shared with ``self``, so in-place updates through the
        returned view's trainable tensors land in ``self``.
        """
        parts = {g: (self.group(g) if g in names else self.group(g).frozen()) for g in GROUPS}
        return ModelParams(**parts)

    @property
    def d_s(self) -> int:
        return self.theta_s.config.n_out

    @property
    def d_p(self) -> int:
        return self.theta_p.config.n_out

    def snapshot(self) -> dict[str, list[np.ndarray]]:
        return {g: [t.data.copy() for t in self.group_tensors(g)] for g in GROUPS}


@dataclass(frozen=True)
class Architecture:
    """Hidden widths per network plus the latent sizes; input/output widths
    come from the data (d_x, K, M)."""

    d_s: int = 16
    d_p: int = 16
    encoder_hidden: tuple[int, ...] = (64, 64)
    decoder_hidden: tuple[int, ...] = (32,)
    # empty: D is a single softmax layer on the features
    domain_hidden: tuple[int, ...] = ()
    classifier_hidden: tuple[int, ...] = ()

    def net_configs(self, d_x: int, num_classes: int, num_domains: int, seed: int = 0) -> dict[str, NetConfig]:
        return {
            "theta_s": NetConfig((d_x, *self.encoder_hidden, self.d_s), "linear", seed=seed),
            "theta_p": NetConfig((d_x, *self.encoder_hidden, self.d_p), "linear", seed=seed),
            "theta_c": NetConfig((self.d_s, *self.classifier_hidden, num_classes), "softmax", seed=seed),
            "phi": NetConfig((self.d_s + self.d_p, *self.decoder_hidden, d_x), "tanh", seed=seed),
            "psi": NetConfig((self.d_s, *self.domain_hidden, num_domains), "softmax", seed=seed),
        }


def check_configs(configs: dict[str, NetConfig]) -> None:
    missing = [g for g in GROUPS if g not in configs]
    if missing:
        raise ConfigError(f"missing network configs: {missing}")
    es, ep, c, f, d = (configs[g] for g in GROUPS)
    pairs = [
        ("theta_s.in", es.n_in, "theta_p.in", ep.n_in),
        ("phi.in", f.n_in, "theta_s.out + theta_p.out", es.n_out + ep.n_out),
        ("phi.out", f.n_out, "theta_s.in", es.n_in),
        ("theta_c.in", c.n_in, "theta_s.out", es.n_out),
        ("psi.in", d.n_in, "theta_s.out", es.n_out),
        ("psi.in", d.n_in, "theta_p.out", ep.n_out),
    ]
    for left, lv, right, rv in pairs:
        if lv != rv:
            raise ConfigError(f"{left} = {lv} does not match {right} = {rv}")
    expected = {"theta_s": "linear", "theta_p": "linear", "theta_c": "softmax",
                "phi": "tanh", "psi": "softmax"}
    for g, act in expected.items():
        if configs[g].output_activation != act:
            raise ConfigError(f"{g} must use a {act} output, got {configs[g].output_activation}")


def init_params(configs: dict[str, NetConfig], seed: int) -> ModelParams:
    """Deterministic in ``seed``; each network draws from its own stream."""
    check_configs(configs)
    nets = {}
    for idx, g in enumerate(GROUPS):
        rng = np.random.default_rng([seed, configs[g].seed, idx])
        nets[g] = init_mlp(configs[g], rng)
    return ModelParams(**nets)


def as_input(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def encode_shared(params: ModelParams, x) -> Tensor:
    return params.theta_s(as_input(x))


def encode_private(params: ModelParams, x) -> Tensor:
    return params.theta_p(as_input(x))


def decode(params: ModelParams, z_s: Tensor, z_p: Tensor) -> Tensor:
    if z_s.shape[0] != z_p.shape[0]:
        raise DimensionError(f"decode: z_s has {z_s.shape[0]} rows, z_p has {z_p.shape[0]}")
    return params.phi(ng.concat_cols(z_s, z_p))


def domain_logits(params: ModelParams, z: Tensor) -> Tensor:
    return params.psi.pre_activation(z)


def classify_domain(params: ModelParams, z: Tensor) -> Tensor:
    return params.psi(z)


def label_logits(params: ModelParams, z_s: Tensor) -> Tensor:
    return params.theta_c.pre_activation(z_s)


def classify_label(params: ModelParams, z_s: Tensor) -> Tensor:
    return params.theta_c(z_s)


def parameter_count(configs: dict[str, NetConfig]) -> int:
    n = 0
    for cfg in configs.values():
        w = cfg.layer_widths
        n += sum(a * b + b for a, b in zip(w[:-1], w[1:]))
    return n


def numpy_forward(net: Mlp, x: np.ndarray) -> np.ndarray:
    """Tape-free forward for evaluation."""
    h = np.asarray(x, dtype=np.float64)
    last = len(net.weights) - 1
    for i, (w, b) in enumerate(zip(net.weights, net.biases)):
        h = h @ w.data + b.data
        if i < last:
            h = np.maximum(h, 0.0)
    act = net.config.output_activation
    if act == "tanh":
        return np.tanh(h)
    if act == "softmax":
        z = np.exp(h - h.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)
    return h
