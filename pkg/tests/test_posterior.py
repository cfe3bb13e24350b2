import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from baycount.gibbs import ChainConfig, ChainOutput, RunningMoments, run_chain
from baycount.model import Hyperparameters, ModelState
from baycount.posterior import (cluster_table, dominant_subclone, gene_sd, log_scale_view,
                                rank_de_genes, summarize)
from baycount.synthetic import generate_scenario1, generate_scenario2


def draw(theta, phi=None):
    theta = np.asarray(theta, dtype=float)
    K, S = theta.shape
    phi = np.full((2, K), 0.5) if phi is None else np.asarray(phi, dtype=float)
    return ModelState(Phi=phi, Theta=theta, alpha=np.full(phi.shape[0], 1 / phi.shape[0]), lam=1.0,
                      zeta=np.ones(S), p=np.full(S, 0.5), r=np.ones(K), c=np.ones(S),
                      gamma0=1.0, c0=1.0)


def chain_of(states, store=True):
    mom = RunningMoments()
    for s in states:
        mom.push(s)
    n = len(states)
    return ChainOutput(K=states[0].K, config=ChainConfig(burn_in=0, total_iterations=n),
                       hyperparameters=Hyperparameters(), loglik_trace=np.zeros(n),
                       kept_iterations=np.arange(n), moments=mom,
                       draws=list(states) if store else None)


def test_identical_draws():
    s = draw([[0.3, 0.8], [0.7, 0.2]])
    out = summarize(chain_of([s, s]), reorder=False)
    assert np.array_equal(out.theta_mean, s.Theta)
    assert np.array_equal(out.theta_ci[0], out.theta_ci[1])
    assert out.draw_count == 2 and out.interval_method == "quantile"


def test_quantile_rule():
    xs = np.arange(1, 11) / 10
    # keep every draw strictly inside the simplex
    xs = np.minimum(xs, 1 - 1e-12)
    states = [draw([[x], [1 - x]]) for x in xs]
    out = summarize(chain_of(states), level=0.8, reorder=False)
    assert out.theta_ci[:, 0, 0] == pytest.approx([0.19, 0.91], abs=1e-11)


def test_summary_column_sums():
    truth = generate_scenario1(30, 6, 3, 1)
    ch = run_chain(truth.Y, 3, Hyperparameters(), ChainConfig(burn_in=10, total_iterations=60, seed=1))
    out = summarize(ch)
    assert np.allclose(out.phi_mean.sum(axis=0), 1, atol=1e-8)
    assert np.allclose(out.theta_mean.sum(axis=0), 1, atol=1e-8)
    assert np.all(out.theta_ci[0] <= out.theta_mean + 1e-15)
    assert np.all(out.theta_mean <= out.theta_ci[1] + 1e-15)
    # display order sorts factors by decreasing average proportion
    assert np.all(np.diff(out.theta_mean.mean(axis=1)) <= 0)
    lean = run_chain(truth.Y, 3, Hyperparameters(),
                     ChainConfig(burn_in=10, total_iterations=60, seed=1, store_draws=False))
    s2 = summarize(lean)
    assert s2.interval_method == "normal"
    assert np.allclose(s2.theta_mean, out.theta_mean, atol=1e-12)


def test_summarize_errors():
    s = draw([[0.5], [0.5]])
    with pytest.raises(ValueError):
        summarize(chain_of([s]))
    with pytest.raises(ValueError):
        summarize(chain_of([s, s]), level=1.0)


def test_monte_carlo_error_scaling():
    # sd of the posterior mean over replicate chains scales as n**-0.5
    rng = np.random.default_rng(0)
    R, n = 300, 8
    spread = {}
    for m in (n, 2 * n, 4 * n):
        means = []
        for _ in range(R):
            x = rng.beta(2, 3, size=m)
            means.append(summarize(chain_of([draw([[v], [1 - v]]) for v in x]),
                                   reorder=False).theta_mean[0, 0])
        spread[m] = np.std(means, ddof=1)
    rel = math.sqrt(1 / (R - 1))   # relative SE of each sd, two of them per ratio
    assert abs(spread[n] / spread[2 * n] - math.sqrt(2)) < 3 * math.sqrt(2) * rel * math.sqrt(2)
    assert abs(spread[n] / spread[4 * n] - 2) < 3 * 2 * rel * math.sqrt(2)


def test_dominant_subclone_examples():
    th = np.array([[0.7, 0.5, 0.1], [0.2, 0.5, 0.3], [0.1, 0.0, 0.6]])
    assert dominant_subclone(th).tolist() == [0, 0, 2]
    labels, prop = cluster_table(th)
    assert prop.tolist() == [0.7, 0.5, 0.6]
    with pytest.raises(ValueError):
        dominant_subclone(np.ones(3))


@settings(max_examples=50)
@given(st.integers(0, 2 ** 32 - 1), st.permutations(range(4)))
def test_dominant_subclone_symmetries(seed, perm):
    th = np.random.default_rng(seed).dirichlet(np.ones(4), size=9).T
    base = dominant_subclone(th)
    assert np.array_equal(dominant_subclone(np.exp(3 * th) + 7), base)
    inv = np.argsort(perm)
    assert np.array_equal(dominant_subclone(th[list(perm)]), inv[base])


def test_rank_de_genes_example():
    phi = np.array([[0.5, 0.5], [0.9, 0.1], [0.6, 0.4]])
    assert rank_de_genes(phi, top_n=3).tolist() == [1, 2, 0]
    assert rank_de_genes(phi, threshold=1e-9).tolist() == [1, 2]
    assert rank_de_genes(phi, threshold=0.0).tolist() == [1, 2, 0]
    assert gene_sd(phi) == pytest.approx([0.0, 0.8 / math.sqrt(2), 0.2 / math.sqrt(2)])


def test_rank_de_genes_errors():
    phi = np.full((3, 2), 0.5)
    for kw in (dict(top_n=4), dict(), dict(threshold=0.1, top_n=1)):
        with pytest.raises(ValueError):
            rank_de_genes(phi, **kw)
    with pytest.raises(ValueError):
        rank_de_genes(np.ones((3, 1)), top_n=1)


@settings(max_examples=50)
@given(st.integers(0, 2 ** 32 - 1), st.floats(-5, 5))
def test_rank_de_genes_shift_invariance(seed, c):
    rng = np.random.default_rng(seed)
    phi = rng.dirichlet(np.ones(12), size=3).T
    shifted = phi.copy()
    shifted[rng.integers(12)] += c
    assert np.array_equal(rank_de_genes(phi, top_n=12), rank_de_genes(shifted, top_n=12))


def test_prescreen_threshold_on_scenario2():
    # no set size to reproduce; the threshold must split the genes nontrivially
    kept = [rank_de_genes(generate_scenario2(1000, 40, 5, s).phi_normalized(), threshold=0.008).size
            for s in range(3)]
    assert all(0 < k < 1000 for k in kept)


def test_log_scale_view():
    out = log_scale_view([[1e-3, 0.0], [1.0, 0.5]])
    assert out[0, 0] == pytest.approx(-3) and out[0, 1] == -12 and out[1, 0] == 0
    assert log_scale_view([[0.0]], floor=1e-5)[0, 0] == pytest.approx(-5)
    x = np.array([[1e-9], [1e-6], [0.2]])
    assert np.all(np.diff(log_scale_view(x)[:, 0]) > 0)
    with pytest.raises(ValueError):
        log_scale_view([[-1.0]])
