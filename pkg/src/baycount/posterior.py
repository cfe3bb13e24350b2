"""Posterior summaries and the downstream tables built from them."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .gibbs import ChainOutput


@dataclass(frozen=True, eq=False)
class PosteriorSummary:
    """Posterior means and equal-tailed intervals for one chain.

    Factors are reported in display order (decreasing mean proportion across
    samples); ``factor_order[m]`` is the chain's label of displayed factor m.
    ``interval_method`` is ``"quantile"`` for stored draws and ``"normal"``
    when only streaming moments were kept.
    """

    phi_mean: np.ndarray
    theta_mean: np.ndarray
    theta_ci: np.ndarray          # (2, K, S): lower, upper
    phi_ci: np.ndarray            # (2, G, K)
    lambda_mean: float
    zeta_mean: np.ndarray
    p_mean: np.ndarray
    r_mean: np.ndarray
    draw_count: int
    level: float
    factor_order: np.ndarray
    interval_method: str

    @property
    def K(self) -> int:
        return self.phi_mean.shape[1]


def _display_order(theta_mean):
    # stable: ties keep chain order
    return np.argsort(-theta_mean.mean(axis=1), kind="stable")


def summarize(chain: ChainOutput, level: float = 0.95, reorder: bool = True) -> PosteriorSummary:
    """Entrywise posterior means and central ``level`` credible intervals.

    Intervals use linearly interpolated empirical quantiles of the stored
    draws. Chains run without stored draws fall back to mean +/- z * sd.
    """
    if not 0.0 < level < 1.0:
        raise ValueError("level must lie in (0, 1)")
    if chain.n_kept < 1:
        raise ValueError("chain has no kept draws")
    lo_q, hi_q = (1.0 - level) / 2.0, 1.0 - (1.0 - level) / 2.0
    if chain.draws is not None:
        if chain.n_kept < 2:
            raise ValueError("need at least 2 kept draws")
        phi = np.stack([d.Phi for d in chain.draws])
        theta = np.stack([d.Theta for d in chain.draws])
        phi_mean = phi.mean(axis=0)
        theta_mean = theta.mean(axis=0)
        phi_ci = np.quantile(phi, [lo_q, hi_q], axis=0)
        theta_ci = np.quantile(theta, [lo_q, hi_q], axis=0)
        lam = float(np.mean([d.lam for d in chain.draws]))
        zeta = np.mean([d.zeta for d in chain.draws], axis=0)
        p = np.mean([d.p for d in chain.draws], axis=0)
        r = np.mean([d.r for d in chain.draws], axis=0)
        method = "quantile"
    else:
        z = float(norm.ppf(hi_q))
        mom = chain.moments
        phi_mean = mom.mean["Phi"]
        theta_mean = mom.mean["Theta"]
        sd_phi = np.sqrt(mom.variance("Phi"))
        sd_theta = np.sqrt(mom.variance("Theta"))
        phi_ci = np.stack([np.clip(phi_mean - z * sd_phi, 0, 1), np.clip(phi_mean + z * sd_phi, 0, 1)])
        theta_ci = np.stack([np.clip(theta_mean - z * sd_theta, 0, 1),
                             np.clip(theta_mean + z * sd_theta, 0, 1)])
        lam = float(mom.mean["lam"])
        zeta, p, r = mom.mean["zeta"], mom.mean["p"], mom.mean["r"]
        method = "normal"
    K = phi_mean.shape[1]
    order = _display_order(theta_mean) if reorder else np.arange(K)
    return PosteriorSummary(
        phi_mean=phi_mean[:, order], theta_mean=theta_mean[order, :],
        theta_ci=theta_ci[:, order, :], phi_ci=phi_ci[:, :, order],
        lambda_mean=lam, zeta_mean=np.asarray(zeta), p_mean=np.asarray(p),
        r_mean=np.asarray(r)[order], draw_count=chain.n_kept, level=level,
        factor_order=order, interval_method=method)


def dominant_subclone(theta_mean) -> np.ndarray:
    """Per-sample index of the largest proportion (0-based; first on ties)."""
    th = np.asarray(theta_mean)
    if th.ndim != 2:
        raise ValueError("theta_mean must be K x S")
    return np.argmax(th, axis=0)


def cluster_table(theta_mean):
    """Dominant factor and its proportion for every sample."""
    labels = dominant_subclone(theta_mean)
    th = np.asarray(theta_mean)
    return labels, th[labels, np.arange(th.shape[1])]


def gene_sd(phi_mean) -> np.ndarray:
    """Across-factor sample standard deviation of each gene's expression."""
    return np.std(np.asarray(phi_mean, dtype=np.float64), axis=1, ddof=1)


def rank_de_genes(phi_mean, threshold: float | None = None, top_n: int | None = None) -> np.ndarray:
    """Gene indices ordered by decreasing across-factor standard deviation.

    Exactly one of ``threshold`` (keep sd >= threshold) or ``top_n`` (keep the
    n most variable genes) must be given.
    """
    phi = np.asarray(phi_mean, dtype=np.float64)
    if phi.ndim != 2 or phi.shape[1] < 2:
        raise ValueError("need a G x K matrix with K >= 2")
    if (threshold is None) == (top_n is None):
        raise ValueError("give exactly one of threshold or top_n")
    sd = gene_sd(phi)
    order = np.lexsort((np.arange(sd.size), -sd))
    if top_n is not None:
        if top_n < 0 or top_n > phi.shape[0]:
            raise ValueError(f"top_n must be between 0 and G={phi.shape[0]}")
        return order[:top_n]
    return order[sd[order] >= threshold]


def log_scale_view(phi_mean, floor: float = 1e-12) -> np.ndarray:
    phi = np.asarray(phi_mean, dtype=np.float64)
    if np.any(phi < 0):
        raise ValueError("entries must be nonnegative")
    return np.log10(np.maximum(phi, floor))
