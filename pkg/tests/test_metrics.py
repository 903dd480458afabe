from types import SimpleNamespace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from meshqa.metrics import PSNR_SENTINEL, fit_logistic, logistic4, plcc, psnr_baseline, srcc
from meshqa.verify import pearson_oracle, rank_oracle, srcc_oracle


def test_srcc_perfect_and_inverted():
    x = [0.1, 0.5, 0.3, 0.9]
    assert srcc(x, [1, 3, 2, 4]) == pytest.approx(1.0, abs=1e-15)
    assert srcc(x, [4, 2, 3, 1]) == pytest.approx(-1.0, abs=1e-15)


def test_rank_oracle_averages_ties():
    np.testing.assert_array_equal(rank_oracle([3, 1, 3, 2]), [3.5, 1, 3.5, 2])


@pytest.mark.parametrize("seed", range(10))
def test_srcc_matches_oracle(seed):
    rng = np.random.default_rng(seed)
    pred, mos = rng.uniform(size=10), rng.uniform(size=10)
    if seed % 2:
        pred = np.round(pred, 1)  # force ties
    assert abs(srcc(pred, mos) - srcc_oracle(pred, mos)) <= 1e-12


@settings(max_examples=50, deadline=None)
@given(st.lists(st.tuples(st.integers(-50, 50), st.integers(0, 20)), min_size=3, max_size=20))
def test_srcc_invariant_under_monotone_map(rows):
    # grid values keep the maps strictly monotone in floating point
    pred, mos = np.array(rows, float).T / np.array([[10.0], [20.0]])
    if np.ptp(pred) == 0 or np.ptp(mos) == 0:
        return
    base = srcc(pred, mos)
    assert srcc(np.exp(pred), mos) == pytest.approx(base, abs=1e-12)
    assert srcc(3 * pred - 1, mos ** 3) == pytest.approx(base, abs=1e-12)
    assert -1 - 1e-12 <= base <= 1 + 1e-12


def test_srcc_needs_three_items():
    with pytest.raises(ValueError):
        srcc([0.1, 0.2], [0.3, 0.4])
    with pytest.raises(ValueError):
        srcc([0.1, 0.2, 0.3], [0.3, 0.4])


def test_plcc_recovers_logistic_relation():
    rng = np.random.default_rng(0)
    pred = rng.uniform(-3, 3, size=40)
    mos = logistic4(pred, 0.9, 0.1, 0.2, 0.8)
    value, b = plcc(pred, mos, return_params=True)
    assert value > 0.9999
    np.testing.assert_allclose(logistic4(pred, *b), mos, atol=1e-4)


def test_plcc_matches_independent_pearson():
    rng = np.random.default_rng(1)
    pred = rng.uniform(size=25)
    mos = np.clip(pred + rng.normal(0, 0.1, size=25), 0, 1)
    b = fit_logistic(pred, mos)
    assert abs(plcc(pred, mos) - pearson_oracle(logistic4(pred, *b), mos)) <= 1e-12


def test_plcc_fit_handles_decreasing_relation():
    pred = np.linspace(0, 1, 12)
    assert plcc(pred, 1 - pred ** 2) > 0.99


def view(image, mask):
    return SimpleNamespace(image=np.asarray(image, float), mask=np.asarray(mask, bool))


def test_psnr_identical_is_sentinel():
    img = np.random.default_rng(0).uniform(size=(3, 8, 8))
    v = view(img, np.ones((8, 8)))
    assert psnr_baseline([v, v], [v, v]) == PSNR_SENTINEL


def test_psnr_black_vs_white_is_zero_db():
    m = np.ones((4, 4))
    assert psnr_baseline([view(np.zeros((3, 4, 4)), m)], [view(np.ones((3, 4, 4)), m)]) == pytest.approx(0.0)


def test_psnr_falls_with_noise():
    rng = np.random.default_rng(2)
    img = rng.uniform(size=(3, 16, 16))
    m = np.ones((16, 16))
    scores = [psnr_baseline([view(img, m)], [view(img + rng.normal(0, s, img.shape), m)]) for s in (0.01, 0.05, 0.2)]
    assert scores[0] > scores[1] > scores[2]


def test_psnr_ignores_background_and_empty_views():
    a = np.zeros((3, 4, 4))
    b = a.copy()
    b[:, 0, 0] = 1.0  # differs only outside the mask
    m = np.zeros((4, 4), bool)
    m[2:, 2:] = True
    empty = view(np.zeros((3, 4, 4)), np.zeros((4, 4)))
    assert psnr_baseline([view(a, m), empty], [view(b, m), empty]) == PSNR_SENTINEL


def test_psnr_errors():
    m = np.ones((4, 4))
    with pytest.raises(ValueError, match="shapes"):
        psnr_baseline([view(np.zeros((3, 4, 4)), m)], [view(np.zeros((3, 4, 5)), np.ones((4, 5)))])
    empty = view(np.zeros((3, 4, 4)), np.zeros((4, 4)))
    with pytest.raises(ValueError, match="covered"):
        psnr_baseline([empty], [empty])
