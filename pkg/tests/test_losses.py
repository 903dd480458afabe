import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshqa.autodiff import Tensor, default_dtype
from meshqa.losses import mae_loss, rank_loss, total_loss
from meshqa.verify import loss_fixture_checks


def arr(*values):
    return Tensor(np.array(values, float), requires_grad=True)


def value(t):
    return float(np.asarray(t.data).reshape(()))


@pytest.fixture(autouse=True)
def float64():
    with default_dtype(np.float64):
        yield


def test_mae_fixtures():
    assert value(mae_loss(arr(0.3, 0.6), [0.3, 0.6])) == 0.0
    assert value(mae_loss(arr(0.5, 0.5), [0.8, 0.2])) == pytest.approx(0.3, abs=1e-12)
    assert value(mae_loss(arr(0.1), [0.9])) == pytest.approx(0.8, abs=1e-12)


def test_rank_fixtures():
    assert value(rank_loss(arr(0.9, 0.1), [0.9, 0.1])) == 0.0
    # both ordered pairs cost 0.8 + 0.5
    assert value(rank_loss(arr(0.2, 0.7), [0.9, 0.1])) == pytest.approx(1.3, abs=1e-12)


def test_constant_prediction_costs_mean_pairwise_gap():
    t = np.array([0.9, 0.4, 0.1, 0.65])
    gaps = [abs(a - b) for i, a in enumerate(t) for j, b in enumerate(t) if i != j]
    assert value(rank_loss(arr(0.5, 0.5, 0.5, 0.5), t)) == pytest.approx(np.mean(gaps), abs=1e-12)


def test_total_loss_weighting():
    q, mae, rank = total_loss(arr(0.2, 0.7), [0.9, 0.1], lam=2.0)
    assert value(mae) == pytest.approx(0.65, abs=1e-12)
    assert value(q) == pytest.approx(3.25, abs=1e-12)
    q0, mae0, _ = total_loss(arr(0.5, 0.5), [0.8, 0.2], lam=0.0)
    assert value(q0) == value(mae0)


def test_builtin_fixture_suite_passes():
    assert all(c.passed for c in loss_fixture_checks())


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=2, max_size=9), st.randoms())
def test_rank_loss_permutation_invariant(rows, rnd):
    q, t = np.array(rows).T
    perm = list(range(len(rows)))
    rnd.shuffle(perm)
    a = value(rank_loss(Tensor(q), t))
    b = value(rank_loss(Tensor(q[perm]), t[perm]))
    assert a == pytest.approx(b, abs=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=2, max_size=9, unique=True), st.floats(1.0, 4.0), st.floats(-1, 1))
def test_rank_loss_zero_when_gaps_exceed_margins(t, stretch, shift):
    t = np.array(t)
    assert value(rank_loss(Tensor(stretch * t + shift), t)) <= 1e-12


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.floats(-2, 2), st.floats(0, 1)), min_size=2, max_size=8))
def test_losses_non_negative(rows):
    q, t = np.array(rows).T
    total, mae, rank = total_loss(Tensor(q), t, 0.7)
    assert value(mae) >= 0 and value(rank) >= 0
    assert value(total) == pytest.approx(value(mae) + 0.7 * value(rank), abs=1e-12)


def test_tied_pair_has_zero_subgradient():
    q = arr(0.4, 0.4)
    rank_loss(q, [0.5, 0.5]).backward()
    np.testing.assert_array_equal(q.grad, [0.0, 0.0])


def test_rank_gradient_pushes_inverted_pair_apart():
    q = arr(0.2, 0.7)
    rank_loss(q, [0.9, 0.1]).backward()
    assert q.grad[0] < 0 < q.grad[1]


def test_error_cases():
    with pytest.raises(ValueError, match="at least 2"):
        rank_loss(arr(0.5), [0.5])
    with pytest.raises(ValueError, match="mismatch"):
        mae_loss(arr(0.5, 0.2), [0.5])
    with pytest.raises(ValueError, match="mismatch"):
        rank_loss(arr(0.5, 0.2, 0.1), [0.5, 0.1])
