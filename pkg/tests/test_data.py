import io
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mtda.data import (DomainDataset, FormatError, SyntheticSpec, batch_iter, block_average,
                       gen_synthetic_domains, load_idx, onehot, rotation, source_batches, write_idx)
from mtda.nets import ConfigError

# 2x2 image: 0 and 255 hit the ends of [-1, 1]; 51 and 204 are 1/5 and 4/5 of the range.
CRAFTED_PIXELS = bytes([0, 255, 51, 204])
CRAFTED_EXPECTED = [-1.0, 1.0, -0.6, 0.6]


def crafted_streams():
    images = struct.pack(">IIII", 0x803, 1, 2, 2) + CRAFTED_PIXELS
    labels = struct.pack(">II", 0x801, 1) + bytes([7])
    return images, labels


def test_every_byte_maps_to_its_correctly_rounded_value():
    from fractions import Fraction

    ds = load_idx(*write_idx(np.arange(256, dtype=np.uint8).reshape(1, 16, 16), [0]))
    for p, v in enumerate(ds.inputs[0]):
        assert v == float(Fraction(2 * p, 255) - 1)


def test_crafted_idx_maps_to_hand_values():
    images, labels = crafted_streams()
    ds = load_idx(images, labels)
    assert ds.inputs.tolist() == [CRAFTED_EXPECTED]
    assert ds.train_labels().tolist() == [7]


def test_idx_from_file_object_and_path(tmp_path):
    images, labels = crafted_streams()
    ds = load_idx(io.BytesIO(images), io.BytesIO(labels))
    (tmp_path / "i.idx").write_bytes(images)
    (tmp_path / "l.idx").write_bytes(labels)
    assert np.array_equal(load_idx(tmp_path / "i.idx", tmp_path / "l.idx").inputs, ds.inputs)


def test_idx_bad_magic():
    images, labels = crafted_streams()
    with pytest.raises(FormatError, match="magic") as info:
        load_idx(b"\x00\x00\x08\x04" + images[4:], labels)
    assert info.value.offset == 0
    with pytest.raises(FormatError, match="magic"):
        load_idx(images, b"\x00\x00\x08\x03" + labels[4:])


def test_idx_truncated():
    images, labels = crafted_streams()
    with pytest.raises(FormatError, match="truncated"):
        load_idx(images[:-1], labels)
    with pytest.raises(FormatError, match="truncated"):
        load_idx(images[:10], labels)
    with pytest.raises(FormatError, match="truncated"):
        load_idx(images, labels[:-1])


def test_idx_count_mismatch():
    images, _ = crafted_streams()
    labels = struct.pack(">II", 0x801, 2) + bytes([1, 2])
    with pytest.raises(FormatError, match="holds"):
        load_idx(images, labels)


def test_idx_label_out_of_range():
    images, _ = crafted_streams()
    labels = struct.pack(">II", 0x801, 1) + bytes([12])
    with pytest.raises(FormatError):
        load_idx(images, labels, num_classes=10)


@settings(max_examples=40, deadline=None)
@given(arrays(np.uint8, st.tuples(st.integers(1, 4), st.integers(1, 5), st.integers(1, 5))))
def test_idx_write_load_round_trip(images):
    labels = np.arange(images.shape[0]) % 10
    ds = load_idx(*write_idx(images, labels))
    assert np.allclose(ds.inputs, 2.0 * images.reshape(images.shape[0], -1) / 255.0 - 1.0, rtol=0, atol=1e-15)
    assert np.array_equal(ds.train_labels(), labels)
    assert ds.inputs.min() >= -1 and ds.inputs.max() <= 1


def test_block_average():
    img = np.arange(16, dtype=float).reshape(1, 4, 4)
    assert block_average(img, 2)[0].tolist() == [[2.5, 4.5], [10.5, 12.5]]
    assert block_average(np.ones((2, 5, 5)), 3).tolist() == np.ones((2, 3, 3)).tolist()
    with pytest.raises(ConfigError):
        block_average(img, 5)


def test_target_labels_are_not_trainable():
    ds = DomainDataset(1, np.zeros((2, 2)), 3, False, np.array([0, 1]))
    with pytest.raises(PermissionError):
        ds.train_labels()
    assert ds.eval_labels().tolist() == [0, 1]
    with pytest.raises(ValueError):
        ds.inputs[0, 0] = 1.0


def test_synthetic_domains_shape_balance_and_range():
    ds = gen_synthetic_domains(SyntheticSpec(n_per_domain=100, seed=3))
    assert [d.domain_id for d in ds] == [0, 1, 2]
    assert [d.is_source for d in ds] == [True, False, False]
    pooled = np.concatenate([d.inputs for d in ds])
    assert np.abs(pooled).max() == 1.0
    for d in ds:
        assert np.bincount(d.eval_labels(), minlength=3).tolist() == [34, 33, 33]


def test_synthetic_rotation_relates_class_means():
    spec = SyntheticSpec(n_per_domain=3000, noise_sigma=0.05, seed=0)
    ds = gen_synthetic_domains(spec)
    mean = lambda d, k: d.inputs[d.eval_labels() == k].mean(axis=0)
    for j, d in enumerate(ds):
        for k in range(3):
            rotated = rotation(j * spec.rotation_per_domain) @ mean(ds[0], k)
            assert np.linalg.norm(mean(d, k) - rotated) < 0.01


def test_synthetic_is_deterministic():
    a = gen_synthetic_domains(SyntheticSpec(seed=9))
    b = gen_synthetic_domains(SyntheticSpec(seed=9))
    assert all(np.array_equal(x.inputs, y.inputs) for x, y in zip(a, b))


def test_synthetic_spec_validation():
    with pytest.raises(ConfigError):
        SyntheticSpec(M=1)
    with pytest.raises(ConfigError):
        SyntheticSpec(K=2)  # three default means
    with pytest.raises(ConfigError):
        SyntheticSpec(noise_sigma=0.0)


def test_close_class_means_warn():
    with pytest.warns(UserWarning):
        gen_synthetic_domains(SyntheticSpec(noise_sigma=0.5, n_per_domain=10))


def test_onehot():
    assert onehot([2, 0], 3).tolist() == [[0, 0, 1], [1, 0, 0]]
    with pytest.raises(ValueError):
        onehot([3], 3)


def test_batch_layout():
    ds = gen_synthetic_domains(SyntheticSpec(n_per_domain=30))
    batch = next(batch_iter(ds[::-1], 4, seed=0))  # source is found wherever it sits
    assert batch.n == 12 and batch.n_s == 4
    assert batch.d_lab.argmax(axis=1).tolist() == [0] * 4 + [2] * 4 + [1] * 4
    assert batch.y.shape == (4, 3)
    src_rows = {tuple(r) for r in ds[0].inputs}
    assert all(tuple(r) in src_rows for r in batch.x[:4])


def test_batches_cover_each_epoch_and_are_deterministic():
    ds = gen_synthetic_domains(SyntheticSpec(n_per_domain=12))
    it = batch_iter(ds, 4, seed=5)
    seen = np.concatenate([next(it).x[:4] for _ in range(3)])
    assert len({tuple(r) for r in seen}) == 12
    a = [next(batch_iter(ds, 4, seed=5)).x for _ in range(2)]
    assert np.array_equal(a[0], a[1])
    assert not np.array_equal(a[0], next(batch_iter(ds, 4, seed=6)).x)


def test_batch_size_and_source_checks():
    ds = gen_synthetic_domains(SyntheticSpec(n_per_domain=6))
    with pytest.raises(ConfigError):
        next(batch_iter(ds, 7, seed=0))
    with pytest.raises(ConfigError):
        next(batch_iter(ds[1:], 2, seed=0))


def test_source_batches():
    ds = gen_synthetic_domains(SyntheticSpec(n_per_domain=6))
    batch = next(source_batches(ds[0], 3, seed=0))
    assert batch.n == batch.n_s == 3 and batch.d_lab.shape == (3, 1)
