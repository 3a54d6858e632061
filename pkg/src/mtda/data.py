"""Domain datasets: rotated Gaussian blobs, IDX digit files, and mini-batching."""

from __future__ import annotations

import math
import os
import struct
import warnings
from dataclasses import dataclass
from typing import BinaryIO, Iterator, Optional, Sequence, Union

import numpy as np

from .losses import Batch
from .ndgrad import ContractError
from .nets import ConfigError

IMAGE_MAGIC = 0x00000803
LABEL_MAGIC = 0x00000801


class FormatError(ValueError):
    """Malformed IDX stream."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True, eq=False)
class DomainDataset:
    """Inputs of one domain, scaled into [-1, 1].

    Class labels are kept for every domain but only the source exposes them
    to training (:meth:`train_labels`). Target labels are reachable only
    through :meth:`eval_labels`.
    """

    domain_id: int
    inputs: np.ndarray
    num_classes: int
    is_source: bool = False
    _labels: Optional[np.ndarray] = None

    def __post_init__(self):
        x = np.ascontiguousarray(self.inputs, dtype=np.float64)
        x.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        if self._labels is not None:
            lab = np.asarray(self._labels, dtype=np.int64).copy()
            lab.setflags(write=False)
            if lab.shape != (x.shape[0],):
                raise ContractError(f"{lab.shape[0]} labels for {x.shape[0]} inputs")
            if lab.size and (lab.min() < 0 or lab.max() >= self.num_classes):
                raise ContractError(f"labels outside [0, {self.num_classes})")
            object.__setattr__(self, "_labels", lab)
        if self.is_source and self._labels is None:
            raise ContractError("the source domain needs labels")

    def __len__(self) -> int:
        return self.inputs.shape[0]

    @property
    def d_x(self) -> int:
        return self.inputs.shape[1]

    @property
    def has_labels(self) -> bool:
        return self._labels is not None

    def train_labels(self) -> np.ndarray:
        if not self.is_source:
            raise PermissionError(f"domain {self.domain_id} is a target; its labels are evaluation-only")
        return self._labels

    def eval_labels(self) -> np.ndarray:
        if self._labels is None:
            raise ContractError(f"domain {self.domain_id} has no ground-truth labels")
        return self._labels

    def relabelled(self, domain_id: int, is_source: Optional[bool] = None) -> "DomainDataset":
        return DomainDataset(domain_id, self.inputs, self.num_classes,
                             self.is_source if is_source is None else is_source, self._labels)


# ---------------------------------------------------------------------------
# Synthetic rotated blobs


DEFAULT_MEANS = ((1.0, 0.0), (-0.35, 0.75), (-0.55, -0.55))


@dataclass(frozen=True)
class SyntheticSpec:
    M: int = 3
    K: int = 3
    n_per_domain: int = 600
    base_means: tuple[tuple[float, float], ...] = DEFAULT_MEANS
    rotation_per_domain: float = 25.0
    noise_sigma: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.M < 2 or self.K < 2:
            raise ConfigError(f"need M >= 2 and K >= 2, got M={self.M}, K={self.K}")
        if self.noise_sigma <= 0:
            raise ConfigError("noise_sigma must be positive")
        if len(self.base_means) != self.K:
            raise ConfigError(f"{len(self.base_means)} base means for K={self.K} classes")
        if self.n_per_domain < 1:
            raise ConfigError("n_per_domain must be positive")


def rotation(degrees: float) -> np.ndarray:
    a = math.radians(degrees)
    return np.array([[math.cos(a), -math.sin(a)], [math.sin(a), math.cos(a)]])


def gen_synthetic_domains(spec: SyntheticSpec) -> list[DomainDataset]:
    """Domain j draws class k around base_means[k] rotated by j * rotation.

    Classes are balanced (remainder rows go to the lowest class ids). The
    pooled inputs are divided by their largest absolute coordinate so they
    span [-1, 1] while the origin, and so the rotation, stays put. Domain 0
    is the source.
    """
    means = np.asarray(spec.base_means, dtype=np.float64)
    for a in range(spec.K):
        for b in range(a + 1, spec.K):
            if np.linalg.norm(means[a] - means[b]) < 3 * spec.noise_sigma:
                warnings.warn(f"class means {a} and {b} lie within 3 sigma of each other", stacklevel=2)

    rng = np.random.default_rng(spec.seed)
    raw, labels = [], []
    for j in range(spec.M):
        lab = np.arange(spec.n_per_domain) % spec.K
        lab = rng.permutation(lab)
        centres = means[lab] @ rotation(j * spec.rotation_per_domain).T
        raw.append(centres + spec.noise_sigma * rng.standard_normal((spec.n_per_domain, 2)))
        labels.append(lab)
    scale = max(np.abs(x).max() for x in raw)
    return [DomainDataset(j, raw[j] / scale, spec.K, j == 0, labels[j]) for j in range(spec.M)]


# ---------------------------------------------------------------------------
# IDX files


Source = Union[bytes, bytearray, str, os.PathLike, BinaryIO]


def _read_all(src: Source) -> bytes:
    if isinstance(src, (bytes, bytearray)):
        return bytes(src)
    if isinstance(src, (str, os.PathLike)):
        with open(src, "rb") as fh:
            return fh.read()
    return src.read()


def _header(buf: bytes, magic: int, ndim: int, what: str) -> tuple[int, ...]:
    need = 4 * (1 + ndim)
    if len(buf) < need:
        raise FormatError(f"{what} header truncated: need {need} bytes, have {len(buf)}", len(buf))
    got = struct.unpack_from(">I", buf, 0)[0]
    if got != magic:
        raise FormatError(f"{what} magic is 0x{got:08x}, expected 0x{magic:08x}", 0)
    return struct.unpack_from(f">{ndim}I", buf, 4)


def block_average(images: np.ndarray, size: int) -> np.ndarray:
    """Downsample n×H×W images to n×size×size by averaging (possibly uneven) blocks."""
    n, h, w = images.shape
    if size > min(h, w) or size < 1:
        raise ConfigError(f"cannot block-average {h}x{w} images to {size}x{size}")
    re = np.linspace(0, h, size + 1).round().astype(int)
    ce = np.linspace(0, w, size + 1).round().astype(int)
    out = np.empty((n, size, size))
    for i in range(size):
        for j in range(size):
            out[:, i, j] = images[:, re[i]:re[i + 1], ce[j]:ce[j + 1]].mean(axis=(1, 2))
    return out


def load_idx(images: Source, labels: Source, domain_id: int = 0, is_source: bool = True,
             num_classes: int = 10, downsample: Optional[int] = None) -> DomainDataset:
    """Parse an IDX image/label pair; pixels p map to 2p/255 - 1."""
    ibuf, lbuf = _read_all(images), _read_all(labels)
    count, rows, cols = _header(ibuf, IMAGE_MAGIC, 3, "image stream")
    (lcount,) = _header(lbuf, LABEL_MAGIC, 1, "label stream")
    if count != lcount:
        raise FormatError(f"image stream holds {count} items, label stream {lcount}", 4)
    pix_end = 16 + count * rows * cols
    if len(ibuf) < pix_end:
        raise FormatError(f"image stream truncated: expected {pix_end} bytes", len(ibuf))
    if len(lbuf) < 8 + lcount:
        raise FormatError(f"label stream truncated: expected {8 + lcount} bytes", len(lbuf))

    pixels = np.frombuffer(ibuf, dtype=np.uint8, count=count * rows * cols, offset=16)
    pixels = pixels.reshape(count, rows, cols).astype(np.float64)
    if downsample is not None:
        pixels = block_average(pixels, downsample)
    # (2p - 255) / 255 is one rounding of an exact integer ratio, so it is the
    # correctly rounded value of 2p/255 - 1 for every byte.
    x = (2.0 * pixels.reshape(count, -1) - 255.0) / 255.0
    y = np.frombuffer(lbuf, dtype=np.uint8, count=lcount, offset=8).astype(np.int64)
    if y.size and y.max() >= num_classes:
        bad = int(np.argmax(y >= num_classes))
        raise FormatError(f"label {y[bad]} not below {num_classes}", 8 + bad)
    return DomainDataset(domain_id, x, num_classes, is_source, y)


def write_idx(images: np.ndarray, labels: np.ndarray) -> tuple[bytes, bytes]:
    """Encode uint8 images (n×H×W) and labels (n) as IDX byte strings."""
    images = np.asarray(images, dtype=np.uint8)
    labels = np.asarray(labels, dtype=np.uint8)
    n, h, w = images.shape
    ib = struct.pack(">IIII", IMAGE_MAGIC, n, h, w) + images.tobytes()
    lb = struct.pack(">II", LABEL_MAGIC, labels.shape[0]) + labels.tobytes()
    return ib, lb


# ---------------------------------------------------------------------------
# Batching


def onehot(indices, width: int) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.int64).reshape(-1)
    if idx.size and (idx.min() < 0 or idx.max() >= width):
        raise ContractError(f"index outside [0, {width})")
    out = np.zeros((idx.size, width))
    out[np.arange(idx.size), idx] = 1.0
    return out


class _EpochStream:
    """Endless row indices: a fresh permutation per epoch, consumed in order."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n, self.rng = n, rng
        self.perm = rng.permutation(n)
        self.pos = 0

    def take(self, b: int) -> np.ndarray:
        out = []
        while b > 0:
            if self.pos == self.n:
                self.perm = self.rng.permutation(self.n)
                self.pos = 0
            k = min(b, self.n - self.pos)
            out.append(self.perm[self.pos:self.pos + k])
            self.pos += k
            b -= k
        return np.concatenate(out)


def batch_iter(datasets: Sequence[DomainDataset], batch_size_per_domain: int, seed: int,
               domain_labels: Optional[Sequence[int]] = None,
               num_domain_labels: Optional[int] = None) -> Iterator[Batch]:
    """Yield batches with ``batch_size_per_domain`` rows from every domain.

    The source dataset's rows come first and carry one-hot labels. The
    one-hot domain label of dataset ``i`` is column ``domain_labels[i]``
    (default: its ``domain_id``) of a ``num_domain_labels``-wide row.
    """
    if not datasets:
        raise ConfigError("no datasets")
    sources = [d for d in datasets if d.is_source]
    if len(sources) != 1:
        raise ConfigError(f"expected exactly one source dataset, got {len(sources)}")
    ids = [d.domain_id for d in datasets]
    if len(set(ids)) != len(ids) or min(ids) < 0:
        raise ConfigError(f"domain ids must be distinct and non-negative, got {ids}")
    order = sorted(range(len(datasets)), key=lambda i: not datasets[i].is_source)
    for d in datasets:
        if len(d) == 0:
            raise ConfigError(f"domain {d.domain_id} is empty")
        if batch_size_per_domain > len(d):
            raise ConfigError(f"batch size {batch_size_per_domain} exceeds the {len(d)} rows "
                              f"of domain {d.domain_id}")
    if domain_labels is None:
        domain_labels = [d.domain_id for d in datasets]
    width = num_domain_labels if num_domain_labels is not None else max(domain_labels) + 1

    b = batch_size_per_domain
    src = datasets[order[0]]
    # Each domain's row order depends only on (seed, domain_id), so a domain is
    # sampled identically whichever other domains share the run.
    streams = [_EpochStream(len(datasets[i]), np.random.default_rng([seed, datasets[i].domain_id]))
               for i in order]
    dom_rows = onehot(np.repeat([domain_labels[i] for i in order], b), width)
    src_labels = src.train_labels()
    while True:
        idx = [s.take(b) for s in streams]
        x = np.concatenate([datasets[i].inputs[r] for i, r in zip(order, idx)])
        y = onehot(src_labels[idx[0]], src.num_classes)
        yield Batch(x=x, d_lab=dom_rows, n_s=b, y=y)


def source_batches(source: DomainDataset, batch_size: int, seed: int) -> Iterator[Batch]:
    """Source-only batches (single-column domain label)."""
    return batch_iter([source], batch_size, seed, domain_labels=[0], num_domain_labels=1)
