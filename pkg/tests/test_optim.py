import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mtda import ndgrad as ng
from mtda import optim
from mtda.ndgrad import ContractError, Tensor


def adam_reference(p0, grads, eta, b1=0.5, b2=0.999, eps=1e-8):
    """Scalar loop over one coordinate's gradient history."""
    p, m, v = p0, 0.0, 0.0
    for t, g in enumerate(grads, start=1):
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        p -= eta * (m / (1 - b1 ** t)) / (math.sqrt(v / (1 - b2 ** t)) + eps)
    return p


def test_adam_matches_scalar_reference():
    rng = np.random.default_rng(0)
    p = Tensor(rng.normal(size=(2, 3)), requires_grad=True)
    start = p.data.copy()
    history = rng.normal(size=(5, 2, 3))
    state = optim.AdamState.for_params([p])
    for g in history:
        p.grad = g
        optim.adam_step([p], state, 2e-4)
    for idx in np.ndindex(2, 3):
        ref = adam_reference(start[idx], history[:, idx[0], idx[1]], 2e-4)
        assert abs(p.data[idx] - ref) < 1e-15
    assert state.t == 5


@settings(max_examples=100, deadline=None)
@given(st.floats(1e-3, 1e3) | st.floats(-1e3, -1e-3))
def test_first_adam_step_is_eta_sized(g):
    p = Tensor(np.array([0.0]), requires_grad=True)
    p.grad = np.array([g])
    optim.adam_step([p], optim.AdamState.for_params([p]), 0.1)
    assert abs(abs(p.data[0]) - 0.1) < 1e-6
    assert np.sign(p.data[0]) == -np.sign(g)


def test_sgd_step():
    p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    p.grad = np.array([0.5, 0.25])
    optim.sgd_step([p], 0.1)
    assert np.allclose(p.data, [0.95, -2.025], atol=0, rtol=1e-15)


def test_missing_grad_is_a_contract_error():
    p = Tensor(np.zeros(2), requires_grad=True)
    with pytest.raises(ContractError):
        optim.sgd_step([p], 0.1)
    with pytest.raises(ContractError):
        optim.adam_step([p], optim.AdamState.for_params([p]), 0.1)


def test_adam_state_shape_mismatch():
    p = Tensor(np.zeros(2), requires_grad=True)
    p.grad = np.zeros(2)
    state = optim.AdamState.for_params([Tensor(np.zeros(3))])
    with pytest.raises(ContractError):
        optim.adam_step([p], state, 0.1)


@pytest.mark.parametrize("kind,eta", [("adam", 0.05), ("sgd", 0.1)])
def test_minimises_a_quadratic(kind, eta):
    target = np.array([1.5, -0.5, 2.0])
    p = Tensor(np.zeros(3), requires_grad=True)
    state = optim.make_state(kind, [p], beta1=0.9)
    for _ in range(2000):
        p.grad = None
        diff = ng.sub(p, Tensor(target))
        ng.backward(ng.total(ng.mul(diff, diff)))
        optim.step(kind, [p], state, eta)
    assert np.allclose(p.data, target, atol=1e-3)


def test_unknown_optimizer():
    with pytest.raises(ValueError):
        optim.make_state("rmsprop", [])
