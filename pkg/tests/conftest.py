import os
import sys

import numpy as np
import pytest

sys.path.insert(0, os.path.dirname(__file__))

from mtda.data import onehot
from mtda.losses import Batch
from mtda.nets import Architecture, init_params


def tiny_params(seed=0, d_x=3, num_classes=3, num_domains=3, d_s=2, d_p=2, hidden=(4,)):
    arch = Architecture(d_s=d_s, d_p=d_p, encoder_hidden=hidden, decoder_hidden=hidden,
                        domain_hidden=hidden, classifier_hidden=())
    params = init_params(arch.net_configs(d_x, num_classes, num_domains), seed)
    # Non-zero biases keep hidden units off the relu kink (fresh biases are all zero,
    # so a row with every hidden unit dead would otherwise sit exactly on it).
    rng = np.random.default_rng([seed, 99])
    for t in params.all_tensors():
        if t.data.ndim == 1:
            t.data[...] = rng.uniform(-0.5, 0.5, size=t.shape)
    return params


def tiny_batch(rng, per_domain=2, d_x=3, num_classes=3, num_domains=3):
    """Source rows first, then per_domain rows of every target domain."""
    n = per_domain * num_domains
    x = rng.uniform(-1, 1, size=(n, d_x))
    dom = np.repeat(np.arange(num_domains), per_domain)
    y = onehot(rng.integers(0, num_classes, per_domain), num_classes)
    return Batch(x, onehot(dom, num_domains), per_domain, y)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def record_criterion(number, passed, detail):
    line = f"criterion {number:>2}: {'PASS' if passed else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
