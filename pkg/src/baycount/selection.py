"""Choosing the number of factors by the second difference of log-likelihood."""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

from .distributions import derive_key
from .gibbs import ChainConfig, ChainOutput, run_chain
from .model import Hyperparameters, _as_values


class ChainFailure(RuntimeError):
    """A chain on the K grid raised; ``K`` names the offending order."""

    def __init__(self, K: int, cause: BaseException):
        super().__init__(f"chain at K={K} failed: {cause!r}")
        self.K = K


@dataclass(frozen=True, eq=False)
class SelectionReport:
    """Per-K log-likelihood estimates and the selected order.

    ``delta2[m]`` belongs to ``k_grid[m + 1]``; the end points of the grid
    have no second difference.
    """

    k_grid: np.ndarray
    loglik_mean: np.ndarray
    loglik_ci: np.ndarray     # (n_K, 2)
    delta2: np.ndarray
    k_hat: int

    def rows(self):
        """``(K, mean, lo, hi, delta2)`` tuples; delta2 is NaN at the grid ends."""
        d2 = np.full(self.k_grid.size, np.nan)
        d2[1:-1] = self.delta2
        return [(int(k), float(m), float(lo), float(hi), float(d))
                for k, m, (lo, hi), d in zip(self.k_grid, self.loglik_mean, self.loglik_ci, d2)]


def estimate_loglik(chain) -> tuple[float, tuple[float, float]]:
    """Mean of the per-draw log-likelihoods and their 2.5%/97.5% quantiles.

    Accepts a ChainOutput or a bare trace.
    """
    trace = np.asarray(chain.loglik_trace if isinstance(chain, ChainOutput) else chain,
                       dtype=np.float64)
    if trace.size == 0:
        raise ValueError("log-likelihood trace is empty")
    lo, hi = np.quantile(trace, [0.025, 0.975])
    return float(trace.mean()), (float(lo), float(hi))


def second_difference(loglik) -> np.ndarray:
    """2 L(K) - L(K-1) - L(K+1) at every interior point of the grid."""
    L = np.asarray(loglik, dtype=np.float64)
    if L.ndim != 1 or L.size < 3:
        raise ValueError("need a log-likelihood sequence of length >= 3")
    return 2.0 * L[1:-1] - L[:-2] - L[2:]


def argmax_k(k_grid, delta2) -> int:
    """Interior K maximising delta2; the first (smallest) K wins ties."""
    return int(np.asarray(k_grid)[1 + int(np.argmax(delta2))])


def chain_seed(seed: int, K: int) -> int:
    """Seed of the chain at order K, derived from the master seed."""
    return int(derive_key(np.uint64(seed), np.uint64(K))) >> 1


def resolve_threads(threads: int | None) -> int:
    """Worker count; None reads BAYCOUNT_THREADS, 0 means every core."""
    if threads is None:
        env = os.environ.get("BAYCOUNT_THREADS")
        threads = int(env) if env else 1
    if threads < 0:
        raise ValueError("threads must be >= 0")
    return threads if threads > 0 else (os.cpu_count() or 1)


def run_grid(Y, k_grid, hp: Hyperparameters, cfg: ChainConfig, threads: int | None = 1,
             progress: bool = False) -> dict:
    """One chain per K, each on its own derived seed; returns {K: ChainOutput}."""
    vals = _as_values(Y)
    ks = [int(k) for k in k_grid]

    def job(K):
        try:
            return run_chain(vals, K, hp, replace(cfg, seed=chain_seed(cfg.seed, K)), progress=progress)
        except Exception as exc:
            raise ChainFailure(K, exc) from exc

    n = min(resolve_threads(threads), len(ks))
    if n <= 1:
        return {K: job(K) for K in ks}
    with ThreadPoolExecutor(max_workers=n) as pool:
        # largest K first keeps the pool busy to the end
        futures = {K: pool.submit(job, K) for K in sorted(ks, reverse=True)}
        return {K: futures[K].result() for K in ks}


def report_from_chains(chains: dict) -> SelectionReport:
    ks = np.array(sorted(chains), dtype=np.int64)
    if ks.size < 3 or np.any(np.diff(ks) != 1):
        raise ValueError("need at least 3 consecutive K values")
    est = [estimate_loglik(chains[int(k)]) for k in ks]
    mean = np.array([m for m, _ in est])
    ci = np.array([c for _, c in est])
    d2 = second_difference(mean)
    return SelectionReport(k_grid=ks, loglik_mean=mean, loglik_ci=ci, delta2=d2,
                           k_hat=argmax_k(ks, d2))


def select_k(Y, k_min: int = 2, k_max: int = 10, hp: Hyperparameters | None = None,
             cfg: ChainConfig | None = None, threads: int | None = 1,
             progress: bool = False) -> SelectionReport:
    """Run the K grid ``k_min..k_max`` and pick the K with the largest
    second difference of the estimated log-likelihood.

    Each K gets its own chain seed derived from ``cfg.seed``, so the report
    does not depend on ``threads``.
    """
    if k_min < 1 or k_max < k_min + 2:
        raise ValueError("need 1 <= k_min and k_min + 2 <= k_max")
    hp = hp if hp is not None else Hyperparameters()
    cfg = cfg if cfg is not None else ChainConfig(store_draws=False)
    chains = run_grid(Y, range(k_min, k_max + 1), hp, cfg, threads=threads, progress=progress)
    return report_from_chains(chains)
