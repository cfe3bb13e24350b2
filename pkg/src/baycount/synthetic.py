"""Simulated count matrices with known truth, and recovery scoring."""
from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from . import distributions as dist
from .distributions import RngStream
from .model import CountMatrix

RATIO_LOW = 100.0
RATIO_HIGH = 1e6


@dataclass(frozen=True, eq=False)
class SyntheticTruth:
    """Simulated data and the parameters that generated it.

    ``Phi_true`` holds simplex columns for scenario I and the unnormalised
    loadings W for scenario II; ``zeta_true`` is None for scenario II.
    """

    Y: CountMatrix
    Phi_true: np.ndarray
    Theta_true: np.ndarray
    alpha_true: np.ndarray
    lambda_true: float
    zeta_true: np.ndarray | None
    p_true: np.ndarray
    scenario: str
    seed: int

    @property
    def K0(self) -> int:
        return self.Phi_true.shape[1]

    @property
    def W_true(self) -> np.ndarray:
        return self.Phi_true

    def phi_normalized(self) -> np.ndarray:
        return normalize_columns(self.Phi_true)[0]


def _draw_p(S, rng):
    # uniform variance-to-mean ratio p/(1-p) on [100, 1e6]
    u = rng.random(S)
    ratio = RATIO_LOW + (RATIO_HIGH - RATIO_LOW) * u
    return ratio / (1.0 + ratio)


def _check_sizes(G, S, K0):
    if min(G, S, K0) < 1:
        raise ValueError("G, S and K0 must all be >= 1")


def _nb_matrix(shapes, p, rng):
    G, S = shapes.shape
    Y = np.empty((G, S), dtype=np.int64)
    st = rng.state
    for j in range(S):
        dist._fill_nb_column(st, shapes[:, j], float(p[j]), Y[:, j])
    return Y


def generate_scenario1(G: int, S: int, K0: int, seed: int) -> SyntheticTruth:
    """Data drawn from the model itself."""
    _check_sizes(G, S, K0)
    rng = RngStream(seed, 1)
    phi = dist.sample_dirichlet(np.full(G, 0.05), rng, size=K0).T.copy()
    theta = dist.sample_dirichlet(np.full(K0, 0.5), rng, size=S).T.copy()
    zeta = dist.sample_gamma(0.5 * K0, 1.0, rng, size=S)
    lam = 1.0
    alpha = dist.sample_dirichlet(np.full(G, 0.5), rng)
    p = _draw_p(S, rng)
    shapes = lam * alpha[:, None] + (phi @ theta) * zeta[None, :]
    Y = _nb_matrix(shapes, p, rng)
    return SyntheticTruth(CountMatrix.from_array(Y), phi, theta, alpha, lam, zeta, p, "I", seed)


def generate_scenario2(G: int, S: int, K0: int, seed: int) -> SyntheticTruth:
    """Data from an unnormalised gamma-loading model outside the fitted family."""
    _check_sizes(G, S, K0)
    rng = RngStream(seed, 2)
    W = dist.sample_gamma(0.05, 10.0, rng, size=G * K0).reshape(G, K0)
    theta = dist.sample_dirichlet(np.full(K0, 0.5), rng, size=S).T.copy()
    lam = 1.0
    alpha = dist.sample_dirichlet(np.full(G, 0.5), rng)
    p = _draw_p(S, rng)
    shapes = lam * alpha[:, None] + W @ theta
    Y = _nb_matrix(shapes, p, rng)
    return SyntheticTruth(CountMatrix.from_array(Y), W, theta, alpha, lam, None, p, "II", seed)


def normalize_columns(W):
    """Divide each column by its sum; returns ``(normalized, column_sums)``."""
    W = np.asarray(W, dtype=np.float64)
    if np.any(W < 0):
        raise ValueError("matrix must be nonnegative")
    sums = W.sum(axis=0)
    if np.any(sums <= 0):
        bad = int(np.flatnonzero(sums <= 0)[0])
        raise ValueError(f"column {bad} sums to zero")
    return W / sums, sums


def _corr_matrix(est, truth):
    """Pearson correlations corr[a, b] between est column a and truth column b;
    zero-variance columns correlate 0 with everything."""
    e = est - est.mean(axis=0)
    t = truth - truth.mean(axis=0)
    en = np.sqrt((e * e).sum(axis=0))
    tn = np.sqrt((t * t).sum(axis=0))
    num = e.T @ t
    den = np.outer(en, tn)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(den > 0, num / np.where(den > 0, den, 1.0), 0.0)
    return out


def align_factors(estimate, truth) -> np.ndarray:
    """Permutation ``perm`` maximising sum_k corr(estimate[:, perm[k]], truth[:, k]).

    Exhaustive for K <= 8, greedy on the correlation matrix otherwise.
    """
    est = np.asarray(estimate, dtype=np.float64)
    tru = np.asarray(truth, dtype=np.float64)
    if est.shape != tru.shape:
        raise ValueError(f"shape mismatch {est.shape} vs {tru.shape}")
    K = est.shape[1]
    corr = _corr_matrix(est, tru)
    if K <= 8:
        best, best_score = None, -np.inf
        for perm in itertools.permutations(range(K)):
            score = sum(corr[perm[k], k] for k in range(K))
            if score > best_score + 1e-15:
                best, best_score = perm, score
        return np.array(best, dtype=np.int64)
    perm = np.full(K, -1, dtype=np.int64)
    c = corr.copy()
    for _ in range(K):
        a, b = np.unravel_index(np.argmax(c), c.shape)
        perm[b] = a
        c[a, :] = -np.inf
        c[:, b] = -np.inf
    return perm


def recovery_metrics(truth: SyntheticTruth, phi_hat, theta_hat, theta_ci=None) -> dict:
    """Score estimates against the simulation truth after factor alignment.

    ``theta_ci`` is an array of shape (2, K, S) holding lower and upper bounds.
    """
    phi_hat = np.asarray(phi_hat, dtype=np.float64)
    theta_hat = np.asarray(theta_hat, dtype=np.float64)
    phi_true = truth.phi_normalized()
    if phi_hat.shape != phi_true.shape or theta_hat.shape != truth.Theta_true.shape:
        raise ValueError("estimate dimensions do not match the truth")
    perm = align_factors(phi_hat, phi_true)
    phi_a = phi_hat[:, perm]
    theta_a = theta_hat[perm, :]
    corr = np.diag(_corr_matrix(phi_a, phi_true)).copy()
    out = {
        "permutation": perm,
        "phi_correlation": corr,
        "theta_mae": float(np.mean(np.abs(theta_a - truth.Theta_true))),
    }
    if theta_ci is not None:
        ci = np.asarray(theta_ci, dtype=np.float64)[:, perm, :]
        inside = (ci[0] <= truth.Theta_true) & (truth.Theta_true <= ci[1])
        out["theta_coverage"] = float(inside.mean())
    return out
