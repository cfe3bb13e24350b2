import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from baycount.gibbs import ChainConfig
from baycount.model import Hyperparameters
from baycount.selection import (ChainFailure, argmax_k, chain_seed, estimate_loglik,
                                report_from_chains, resolve_threads, run_grid,
                                second_difference, select_k)
from baycount.synthetic import generate_scenario1
from stats_helpers import mean_z

HP = Hyperparameters()
QUICK = ChainConfig(burn_in=20, total_iterations=60, store_draws=False, seed=3)


def test_estimate_constant_trace():
    assert estimate_loglik([-5.0, -5.0, -5.0]) == (-5.0, (-5.0, -5.0))


def test_estimate_normal_trace():
    x = np.random.default_rng(0).normal(-100, 1, size=1000)
    mean, (lo, hi) = estimate_loglik(x)
    assert abs(mean_z(x, -100)) < 3 and mean == pytest.approx(x.mean())
    assert lo < mean < hi
    assert hi - lo == pytest.approx(2 * 1.96, rel=0.15)


def test_estimate_rejects_empty():
    with pytest.raises(ValueError):
        estimate_loglik([])


def test_second_difference_examples():
    d2 = second_difference([-10, -5, -4, -3.8])
    assert d2 == pytest.approx([4.0, 0.8])
    assert argmax_k(range(2, 6), d2) == 3
    assert np.all(second_difference(3.0 * np.arange(7) - 2) == 0)


def test_second_difference_rejects_short():
    for bad in ([], [1.0], [1.0, 2.0], np.ones((3, 3))):
        with pytest.raises(ValueError):
            second_difference(bad)


def test_argmax_ties_go_to_smaller_k():
    assert argmax_k([2, 3, 4, 5, 6], [1.0, 2.0, 2.0]) == 4
    assert argmax_k([2, 3, 4, 5], [0.5, 0.5]) == 3


@settings(max_examples=100)
@given(st.lists(st.floats(-1e4, 1e4), min_size=3, max_size=12),
       st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
def test_second_difference_affine_invariance(L, a, b):
    L = np.array(L)
    k = np.arange(L.size)
    d0 = second_difference(L)
    d1 = second_difference(L + a + b * k)
    assert np.allclose(d0, d1, atol=1e-9 * (1 + np.abs(L).max() + abs(a) + abs(b) * L.size))


def test_report_from_chains_invariants():
    traces = {K: np.full(4, float(v)) for K, v in zip(range(2, 6), [-10, -5, -4, -3.8])}
    rep = report_from_chains(traces)
    assert rep.k_hat == 3 and rep.k_grid.tolist() == [2, 3, 4, 5]
    assert rep.delta2.size == rep.k_grid.size - 2
    rows = rep.rows()
    assert math.isnan(rows[0][4]) and math.isnan(rows[-1][4])
    assert rows[1][4] == pytest.approx(4.0)
    with pytest.raises(ValueError):
        report_from_chains({2: [1.0], 4: [1.0], 5: [1.0]})


def test_select_k_argument_errors():
    Y = np.ones((4, 3), dtype=int)
    for lo, hi in ((0, 4), (2, 3), (5, 2)):
        with pytest.raises(ValueError):
            select_k(Y, lo, hi, cfg=QUICK)


def test_resolve_threads(monkeypatch):
    monkeypatch.delenv("BAYCOUNT_THREADS", raising=False)
    assert resolve_threads(None) == 1
    monkeypatch.setenv("BAYCOUNT_THREADS", "3")
    assert resolve_threads(None) == 3
    assert resolve_threads(0) >= 1
    with pytest.raises(ValueError):
        resolve_threads(-1)


def test_chain_seeds_distinct():
    seeds = {chain_seed(7, K) for K in range(1, 50)}
    assert len(seeds) == 49
    assert all(0 <= s < 2 ** 63 for s in seeds)


def test_chain_failure_names_k():
    Y = np.ones((4, 3), dtype=int)
    # the chain at K=0 rejects its input; the grid must report which K broke
    with pytest.raises(ChainFailure, match="K=0") as info:
        run_grid(Y, [0, 1, 2], HP, QUICK)
    assert info.value.K == 0


def test_select_k_deterministic_across_threads():
    Y = generate_scenario1(30, 8, 2, 1).Y
    a = select_k(Y, 1, 4, cfg=QUICK, threads=1)
    b = select_k(Y, 1, 4, cfg=QUICK, threads=3)
    c = select_k(Y, 1, 4, cfg=QUICK, threads=1)
    for r in (b, c):
        assert np.array_equal(a.loglik_mean, r.loglik_mean)
        assert np.array_equal(a.loglik_ci, r.loglik_ci)
        assert a.k_hat == r.k_hat


def test_true_order_beats_underfit():
    truth = generate_scenario1(100, 20, 3, 0)
    chains = run_grid(truth.Y, [1, 3], HP, ChainConfig(burn_in=300, total_iterations=600,
                                                         store_draws=False, seed=2))
    assert estimate_loglik(chains[3])[0] > estimate_loglik(chains[1])[0]
