import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from moescope.errors import ConfigError, ContractError, DegenerateInputError
from moescope.objectives import (LossConfig, importance, importance_loss, loss_log_line, nt_xent, positive_index,
                                 total_loss)

from oracles import check_grads


def nt_xent_reference(V, tau):
    U = V / np.linalg.norm(V, axis=1, keepdims=True)
    S = U @ U.T / tau
    n = len(V)
    total = 0.0
    for a in range(n):
        p = a ^ 1
        denom = sum(math.exp(S[a, b]) for b in range(n) if b != a)
        total -= math.log(math.exp(S[a, p]) / denom)
    return total / n


def test_identical_embeddings_give_ln3():
    V = np.tile([[0.3, -1.2, 2.0]], (4, 1))
    for tau in (0.1, 0.5, 2.0):
        assert abs(nt_xent(V, tau).item() - math.log(3)) <= 1e-9


def test_aligned_orthogonal_case():
    V = np.array([[1.0, 0, 0, 0], [1.0, 0, 0, 0], [0, 1.0, 0, 0], [0, 1.0, 0, 0]])
    expected = -math.log(math.e**2 / (math.e**2 + 2))
    assert abs(nt_xent(V, 0.5).item() - expected) <= 1e-9


def test_matches_loop_reference(rng):
    for _ in range(10):
        V = rng.normal(size=(8, 5))
        assert nt_xent(V, 0.5).item() == pytest.approx(nt_xent_reference(V, 0.5), abs=1e-12)


def test_rotation_invariance(rng):
    V = rng.normal(size=(6, 4))
    Q, _ = np.linalg.qr(rng.normal(size=(4, 4)))
    assert nt_xent(V @ Q, 0.5).item() == pytest.approx(nt_xent(V, 0.5).item(), abs=1e-12)


def test_perturbing_aligned_positive_increases_loss(rng):
    # random negatives in the first 4 coordinates, positives exactly aligned;
    # probe directions live in the remaining coordinates, orthogonal to every row
    for _ in range(20):
        base = rng.normal(size=(3, 4))
        V = np.zeros((6, 8))
        V[:, :4] = np.repeat(base, 2, axis=0) * rng.uniform(0.5, 2, size=(6, 1))
        ref = nt_xent(V, 0.5).item()
        for row in range(6):
            W = V.copy()
            W[row, 4:] = 1e-3 * rng.normal(size=4)
            assert nt_xent(W, 0.5).item() > ref


def test_nt_xent_errors():
    with pytest.raises(ContractError):
        nt_xent(np.ones((2, 3)))
    with pytest.raises(ContractError, match="zero-norm"):
        nt_xent(np.array([[1.0, 0], [0, 0], [0, 1.0], [1.0, 1.0]]))


def test_positive_index():
    np.testing.assert_array_equal(positive_index(6), [1, 0, 3, 2, 5, 4])


def test_importance_examples():
    assert abs(importance_loss(np.array([2.0, 0, 0, 0]), 0.1).item() - 0.3) <= 1e-12
    assert importance_loss(np.full(4, 2.5), 0.1).item() == 0.0
    with pytest.raises(DegenerateInputError):
        importance_loss(np.zeros(4))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0.0, 10.0), min_size=2, max_size=16).filter(lambda v: sum(v) > 1e-3),
       st.floats(1e-3, 1e3))
def test_importance_scale_invariance(I, c):
    I = np.array(I)
    a = importance_loss(I).item()
    b = importance_loss(c * I).item()
    assert b == pytest.approx(a, rel=1e-9, abs=1e-12)
    assert (a == 0) == bool(np.all(I == I[0])) or a < 1e-15


def test_importance_accumulator_sums_to_batch(rng):
    g = rng.random((7, 4))
    g /= g.sum(axis=1, keepdims=True)
    I = importance(g).data
    assert (I >= 0).all() and abs(I.sum() - 7) <= 1e-9


def test_total_loss_composition(rng):
    V = rng.normal(size=(6, 4))
    I = np.array([1.0, 2.0, 3.0])
    total, parts = total_loss(V, I, LossConfig(0.5, 0.0))
    assert total.item() == parts["nt_xent"].item()
    total, parts = total_loss(V, np.full(3, 2.0))
    assert total.item() == parts["nt_xent"].item()
    total, parts = total_loss(V, I)
    assert abs(total.item() - parts["nt_xent"].item() - parts["importance"].item()) <= 1e-12
    line = loss_log_line(3, 17, parts, total)
    assert line.startswith("3,17,") and len(line.split(",")) == 5


def test_loss_config_validation():
    with pytest.raises(ConfigError):
        LossConfig(temperature=0)
    with pytest.raises(ConfigError):
        LossConfig(w_importance=-0.1)


def test_loss_gradients(rng):
    for _ in range(20):
        V = rng.normal(size=(6, 3))
        assert check_grads(lambda t: nt_xent(t, 0.5), [V]) < 1e-4
        I = rng.uniform(0.1, 3.0, size=4)
        assert check_grads(lambda t: importance_loss(t, 0.1), [I]) < 1e-4
