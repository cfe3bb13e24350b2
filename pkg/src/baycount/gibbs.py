"""Compound-Poisson blocked Gibbs sampler.

One sweep draws, for every cell, the CRT table count of y_ij at the full
shape s_ij and splits it over the gene effect and the K factors in proportion
to their shares of s_ij. Per-factor latent counts x_ijk are never sampled.

Sweep order:

1. allocate tables                       (CRT + multinomial split per cell)
2. Phi | tables                          (Dirichlet per factor)
3. alpha, lambda | gene-effect tables    (Dirichlet, gamma)
4. r, gamma0 | factor-sample tables      (theta and zeta integrated out)
5. Theta | r, tables                     (Dirichlet per sample)
6. zeta | r, tables                      (gamma per sample)
7. c, c0, p

Step 4 integrates theta_kj * zeta_j ~ Gamma(r_k, 1/c_j) out of the
factor-sample table counts, which then follow NB(r_k, q_j / (c_j + q_j)) with
q_j = -log(1 - p_j); two further CRT levels make r and gamma0 conjugate. Because
theta and zeta are integrated out there, they are redrawn immediately after
(steps 5-6) so the partially collapsed sweep keeps the joint posterior
invariant.

Randomness is keyed, never sequential: every cell, sample and factor reads
its own substream of the per-iteration key, and factors are visited in a
fixed ``factor_order``. Permuting the state together with ``factor_order``
therefore permutes the trajectory exactly.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import distributions as dist
from .distributions import SHAPE_FLOOR, RngStream, derive_key
from .model import (AugmentedStats, CountMatrix, Hyperparameters, ModelState,
                    _as_values, _log_factorial_sum, _loglik_kernel)

logger = logging.getLogger(__name__)

P_MIN = 1e-12
P_MAX = 1.0 - 1e-12
INIT_STREAM = 0xB1A5_0001_0000_0000

# substream tags inside one sweep
_T_ALLOC, _T_PHI, _T_ALPHA, _T_RG, _T_THETA, _T_ZETA, _T_CP = 1, 2, 3, 4, 5, 6, 7
_T_TOP = 1 << 40

# hyperparameter vector layout, see Hyperparameters.as_array
_ETA, _DELTA, _A0, _B0, _E0, _F0, _G0, _H0, _U0, _V0 = range(10)


# ----------------------------------------------------------------------------
# kernels
# ----------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _allocate(Y, phi, theta, zeta, alpha, lam, order, key, A, B, L0):
    G, K = phi.shape
    S = Y.shape[1]
    A[:, :] = 0
    B[:, :] = 0
    L0[:] = 0
    st = np.zeros(2, dtype=np.uint64)
    w = np.empty(K + 1)
    part = np.empty(K + 1, dtype=np.int64)
    for j in range(S):
        for i in range(G):
            y = Y[i, j]
            if y == 0:
                continue
            w[0] = lam * alpha[i]
            fac = 0.0
            for m in range(K):
                k = order[m]
                w[m + 1] = phi[i, k] * theta[k, j] * zeta[j]
                fac += w[m + 1]
            s = w[0] + fac
            if s < SHAPE_FLOOR:
                s = SHAPE_FLOOR
            st[0] = dist.derive_key2(key, i, j)
            st[1] = 0
            ell = dist.crt(st, y, s)
            if w[0] + fac <= 0.0:
                # every component underflowed; keep the tables on the gene effect
                L0[i] += ell
                continue
            dist.multinomial_into(st, ell, w, part)
            L0[i] += part[0]
            for m in range(K):
                k = order[m]
                A[i, k] += part[m + 1]
                B[k, j] += part[m + 1]


@njit(cache=True, nogil=True)
def _update_phi(A, eta, order, key, phi):
    G, K = A.shape
    st = np.zeros(2, dtype=np.uint64)
    st[0] = key
    conc = np.empty(G)
    col = np.empty(G)
    for m in range(K):
        k = order[m]
        for i in range(G):
            conc[i] = eta + A[i, k]
        dist.dirichlet_into(st, conc, col)
        for i in range(G):
            phi[i, k] = col[i]


@njit(cache=True, nogil=True)
def _update_theta(B, r, order, key, theta):
    K, S = B.shape
    st = np.zeros(2, dtype=np.uint64)
    conc = np.empty(K)
    col = np.empty(K)
    for j in range(S):
        st[0] = derive_key(key, j)
        st[1] = 0
        for m in range(K):
            conc[m] = r[order[m]] + B[order[m], j]
        dist.dirichlet_into(st, conc, col)
        for m in range(K):
            theta[order[m], j] = col[m]


@njit(cache=True, nogil=True)
def _update_zeta(B, r, c, p, order, key, zeta):
    K, S = B.shape
    st = np.zeros(2, dtype=np.uint64)
    rsum = 0.0
    for m in range(K):
        rsum += r[order[m]]
    for j in range(S):
        st[0] = derive_key(key, j)
        st[1] = 0
        tables = 0
        for k in range(K):
            tables += B[k, j]
        rate = c[j] - math.log1p(-p[j])
        zeta[j] = dist.gamma_rate(st, rsum + tables, rate)


@njit(cache=True, nogil=True)
def _update_alpha_lambda(L0, delta, u0, v0, p, key, alpha):
    G = L0.shape[0]
    st = np.zeros(2, dtype=np.uint64)
    st[0] = key
    conc = np.empty(G)
    total = 0
    for i in range(G):
        conc[i] = delta + L0[i]
        total += L0[i]
    dist.dirichlet_into(st, conc, alpha)
    qsum = 0.0
    for j in range(p.shape[0]):
        qsum -= math.log1p(-p[j])
    return dist.gamma_rate(st, u0 + total, v0 + qsum)


@njit(cache=True, nogil=True)
def _update_r_gamma0(B, r, c, p, gamma0, c0, g0, h0, order, key, L2, L3):
    K, S = B.shape
    st = np.zeros(2, dtype=np.uint64)
    # -log(1 - ptilde_j) with ptilde_j = q_j / (c_j + q_j)
    Q = 0.0
    for j in range(S):
        q = -math.log1p(-p[j])
        Q += math.log1p(q / c[j])
    for j in range(S):
        st[0] = derive_key(key, j)
        st[1] = 0
        for m in range(K):
            k = order[m]
            L2[k, j] = dist.crt(st, B[k, j], r[k])
    st[0] = derive_key(key, _T_TOP)
    st[1] = 0
    shape0 = gamma0 / K
    l3 = 0
    for m in range(K):
        k = order[m]
        row = 0
        for j in range(S):
            row += L2[k, j]
        L3[k] = dist.crt(st, row, shape0)
        l3 += L3[k]
    gamma0 = dist.gamma_rate(st, g0 + l3, h0 + math.log1p(Q / c0))
    shape0 = gamma0 / K
    for m in range(K):
        k = order[m]
        row = 0
        for j in range(S):
            row += L2[k, j]
        r[k] = dist.gamma_rate(st, shape0 + row, c0 + Q)
    return gamma0


@njit(cache=True, nogil=True)
def _update_c_p(ysum, r, zeta, lam, gamma0, e0, f0, a0, b0, order, key, c, p):
    S = ysum.shape[0]
    K = r.shape[0]
    st = np.zeros(2, dtype=np.uint64)
    rsum = 0.0
    for m in range(K):
        rsum += r[order[m]]
    for j in range(S):
        st[0] = derive_key(key, j)
        st[1] = 0
        c[j] = dist.gamma_rate(st, e0 + rsum, f0 + zeta[j])
        pj = dist.beta(st, a0 + ysum[j], b0 + lam + zeta[j])
        p[j] = min(max(pj, P_MIN), P_MAX)
    st[0] = derive_key(key, _T_TOP)
    st[1] = 0
    return dist.gamma_rate(st, e0 + gamma0, f0 + rsum)


@njit(cache=True, nogil=True)
def _sweep(Y, ysum, phi, theta, alpha, zeta, p, r, c, scal, hp, order, key,
           A, B, L0, L2, L3):
    """One full sweep, in place. ``scal`` holds (lam, gamma0, c0)."""
    lam = scal[0]
    gamma0 = scal[1]
    c0 = scal[2]
    _allocate(Y, phi, theta, zeta, alpha, lam, order, derive_key(key, _T_ALLOC), A, B, L0)
    _update_phi(A, hp[_ETA], order, derive_key(key, _T_PHI), phi)
    lam = _update_alpha_lambda(L0, hp[_DELTA], hp[_U0], hp[_V0], p,
                               derive_key(key, _T_ALPHA), alpha)
    gamma0 = _update_r_gamma0(B, r, c, p, gamma0, c0, hp[_G0], hp[_H0], order,
                              derive_key(key, _T_RG), L2, L3)
    _update_theta(B, r, order, derive_key(key, _T_THETA), theta)
    _update_zeta(B, r, c, p, order, derive_key(key, _T_ZETA), zeta)
    c0 = _update_c_p(ysum, r, zeta, lam, gamma0, hp[_E0], hp[_F0], hp[_A0], hp[_B0],
                     order, derive_key(key, _T_CP), c, p)
    scal[0] = lam
    scal[1] = gamma0
    scal[2] = c0


@njit(cache=True, nogil=True)
def _draw_counts(phi, theta, zeta, alpha, lam, p, order, key, out):
    G, K = phi.shape
    S = theta.shape[1]
    st = np.zeros(2, dtype=np.uint64)
    for j in range(S):
        st[0] = derive_key(key, j)
        st[1] = 0
        for i in range(G):
            fac = 0.0
            for m in range(K):
                k = order[m]
                fac += phi[i, k] * theta[k, j] * zeta[j]
            s = lam * alpha[i] + fac
            if s < SHAPE_FLOOR:
                s = SHAPE_FLOOR
            out[i, j] = dist.negative_binomial(st, s, p[j])


# ----------------------------------------------------------------------------
# working state
# ----------------------------------------------------------------------------

class _Work:
    """Mutable arrays backing a chain; converted to ModelState on demand."""

    def __init__(self, state: ModelState):
        self.phi = np.array(state.Phi, dtype=np.float64)
        self.theta = np.array(state.Theta, dtype=np.float64)
        self.alpha = np.array(state.alpha, dtype=np.float64)
        self.zeta = np.array(state.zeta, dtype=np.float64)
        self.p = np.array(state.p, dtype=np.float64)
        self.r = np.array(state.r, dtype=np.float64)
        self.c = np.array(state.c, dtype=np.float64)
        self.scal = np.array([state.lam, state.gamma0, state.c0], dtype=np.float64)
        G, K, S = state.G, state.K, state.S
        self.A = np.zeros((G, K), dtype=np.int64)
        self.B = np.zeros((K, S), dtype=np.int64)
        self.L0 = np.zeros(G, dtype=np.int64)
        self.L2 = np.zeros((K, S), dtype=np.int64)
        self.L3 = np.zeros(K, dtype=np.int64)

    def sweep(self, Y, ysum, hp_arr, order, key):
        _sweep(Y, ysum, self.phi, self.theta, self.alpha, self.zeta, self.p, self.r,
               self.c, self.scal, hp_arr, order, key, self.A, self.B, self.L0,
               self.L2, self.L3)

    def loglik_unnormalised(self, Y, order):
        return _loglik_kernel(Y, self.phi, self.theta, self.zeta, self.alpha,
                              self.scal[0], self.p, order)

    def state(self, validate=True) -> ModelState:
        return ModelState(Phi=self.phi, Theta=self.theta, alpha=self.alpha,
                          lam=self.scal[0], zeta=self.zeta, p=self.p, r=self.r,
                          c=self.c, gamma0=self.scal[1], c0=self.scal[2],
                          validate=validate)

    def stats(self) -> AugmentedStats:
        return AugmentedStats(self.A, self.B, self.L0, self.L2, self.L3)


def _subkey(rng, tag):
    return np.uint64(derive_key(rng.spawn_key(), tag))


def _order(K, factor_order):
    if factor_order is None:
        return np.arange(K, dtype=np.int64)
    order = np.asarray(factor_order, dtype=np.int64)
    if sorted(order.tolist()) != list(range(K)):
        raise ValueError("factor_order must be a permutation of range(K)")
    return order


def _check_dims(vals, state):
    if vals.shape != (state.G, state.S):
        raise ValueError(f"counts have shape {vals.shape}, state expects {(state.G, state.S)}")


# ----------------------------------------------------------------------------
# individual updates
# ----------------------------------------------------------------------------

def allocate_tables(Y, state: ModelState, rng: RngStream, factor_order=None) -> AugmentedStats:
    """Draw the CRT table count of every cell and split it over components.

    The returned stats carry zero second- and third-level tables; those are
    produced by :func:`update_r_gamma0`.
    """
    vals = _as_values(Y)
    _check_dims(vals, state)
    G, K, S = state.G, state.K, state.S
    A = np.zeros((G, K), dtype=np.int64)
    B = np.zeros((K, S), dtype=np.int64)
    L0 = np.zeros(G, dtype=np.int64)
    _allocate(vals, np.ascontiguousarray(state.Phi), np.ascontiguousarray(state.Theta),
              state.zeta, state.alpha, state.lam, _order(K, factor_order),
              _subkey(rng, _T_ALLOC), A, B, L0)
    return AugmentedStats(A, B, L0, np.zeros((K, S)), np.zeros(K))


def update_phi(stats: AugmentedStats, eta: float, rng: RngStream) -> np.ndarray:
    """Phi column k ~ Dirichlet(eta + tables of factor k per gene)."""
    A = stats.ell_gene_factor
    phi = np.empty(A.shape)
    _update_phi(A, float(eta), np.arange(A.shape[1]), _subkey(rng, _T_PHI), phi)
    return phi


def update_theta(stats: AugmentedStats, r, rng: RngStream) -> np.ndarray:
    """Theta column j ~ Dirichlet(r + tables of sample j per factor)."""
    B = stats.ell_factor_sample
    theta = np.empty(B.shape)
    _update_theta(B, np.asarray(r, dtype=np.float64), np.arange(B.shape[0]),
                  _subkey(rng, _T_THETA), theta)
    return theta


def update_zeta(stats: AugmentedStats, state: ModelState, rng: RngStream) -> np.ndarray:
    """zeta_j ~ Gamma(sum(r) + tables of sample j, rate c_j - log(1 - p_j))."""
    zeta = np.empty(state.S)
    _update_zeta(stats.ell_factor_sample, state.r, state.c, state.p, np.arange(state.K),
                 _subkey(rng, _T_ZETA), zeta)
    return zeta


def update_alpha_lambda(stats: AugmentedStats, state: ModelState, hp: Hyperparameters,
                        rng: RngStream):
    """Gene-effect weights and scale from the gene-effect tables.

    alpha ~ Dirichlet(delta + tables per gene);
    lambda ~ Gamma(u0 + all gene-effect tables, rate v0 - sum_j log(1 - p_j)).
    """
    alpha = np.empty(state.G)
    lam = _update_alpha_lambda(stats.ell_gene_effect, hp.delta, hp.u0, hp.v0, state.p,
                               _subkey(rng, _T_ALPHA), alpha)
    return alpha, float(lam)


def update_r_gamma0(stats: AugmentedStats, state: ModelState, hp: Hyperparameters,
                    rng: RngStream):
    """Factor weights r and their total-mass parameter gamma0.

    Returns ``(r, gamma0, second_level, third_level)``. The draw integrates
    theta and zeta out, so callers running a sweep by hand must redraw Theta
    and zeta afterwards.
    """
    K, S = state.K, state.S
    r = np.array(state.r, dtype=np.float64)
    L2 = np.zeros((K, S), dtype=np.int64)
    L3 = np.zeros(K, dtype=np.int64)
    gamma0 = _update_r_gamma0(stats.ell_factor_sample, r, state.c, state.p, state.gamma0,
                              state.c0, hp.g0, hp.h0, np.arange(K),
                              _subkey(rng, _T_RG), L2, L3)
    return r, float(gamma0), L2, L3


def update_c_p(stats: AugmentedStats, state: ModelState, hp: Hyperparameters, Y,
               rng: RngStream):
    """Conjugate draws of c_j, c0 and p_j; returns ``(c, c0, p)``.

    ``stats`` is accepted for signature symmetry; these conditionals depend
    on the data only through the column totals.
    """
    vals = _as_values(Y)
    c = np.empty(state.S)
    p = np.empty(state.S)
    c0 = _update_c_p(vals.sum(axis=0).astype(np.float64), state.r, state.zeta, state.lam,
                     state.gamma0, hp.e0, hp.f0, hp.a0, hp.b0, np.arange(state.K),
                     _subkey(rng, _T_CP), c, p)
    return c, float(c0), p


def gibbs_sweep(Y, state: ModelState, hp: Hyperparameters, rng: RngStream,
                factor_order=None) -> ModelState:
    """Run one full sweep and return the new state."""
    vals = _as_values(Y)
    _check_dims(vals, state)
    work = _Work(state)
    work.sweep(vals, vals.sum(axis=0).astype(np.float64), hp.as_array(),
               _order(state.K, factor_order), rng.spawn_key())
    return work.state()


# ----------------------------------------------------------------------------
# priors and initialisation
# ----------------------------------------------------------------------------

def sample_prior(G: int, S: int, K: int, hp: Hyperparameters, rng: RngStream) -> ModelState:
    """Draw every parameter from the full prior hierarchy."""
    gamma0 = dist.sample_gamma(hp.g0, 1.0 / hp.h0, rng)
    c0 = dist.sample_gamma(hp.e0, 1.0 / hp.f0, rng)
    c = dist.sample_gamma(hp.e0, 1.0 / hp.f0, rng, size=S)
    lam = dist.sample_gamma(hp.u0, 1.0 / hp.v0, rng)
    return _fill_from_hyper(G, S, K, hp, rng, gamma0, c0, c, lam)


def initial_state(G: int, S: int, K: int, hp: Hyperparameters, rng: RngStream) -> ModelState:
    """Chain starting point: top-level scalars at their prior means, the rest
    drawn from the prior given them."""
    gamma0 = hp.g0 / hp.h0
    c0 = hp.e0 / hp.f0
    c = np.full(S, hp.e0 / hp.f0)
    lam = hp.u0 / hp.v0
    return _fill_from_hyper(G, S, K, hp, rng, gamma0, c0, c, lam)


def _fill_from_hyper(G, S, K, hp, rng, gamma0, c0, c, lam):
    r = dist.sample_gamma(gamma0 / K, 1.0 / c0, rng, size=K)
    phi = dist.sample_dirichlet(np.full(G, hp.eta), rng, size=K).T.copy()
    theta = dist.sample_dirichlet(r, rng, size=S).T.copy()
    zeta = np.array([dist.sample_gamma(r.sum(), 1.0 / cj, rng) for cj in c])
    alpha = dist.sample_dirichlet(np.full(G, hp.delta), rng)
    p = np.clip(dist.sample_beta(hp.a0, hp.b0, rng, size=S), P_MIN, P_MAX)
    return ModelState(Phi=phi, Theta=theta, alpha=alpha, lam=lam, zeta=zeta, p=p, r=r,
                      c=np.asarray(c, dtype=np.float64), gamma0=gamma0, c0=c0)


def nmf_refine(Y, state: ModelState, iterations: int = 200) -> ModelState:
    """Move Phi and Theta of ``state`` towards a KL non-negative factorisation
    of Y, starting from the state's own Phi and Theta.

    Multiplicative updates are deterministic, so the result depends only on
    the starting draw. Used as the default chain start: prior draws of Phi
    often leave a factor stranded in a poor mode for the whole burn-in.
    """
    vals = _as_values(Y).astype(np.float64)
    _check_dims(vals, state)
    G = vals.shape[0]
    W = np.array(state.Phi) + 1e-3 / G
    H = np.array(state.Theta) * vals.sum(axis=0) + 1e-3
    for _ in range(iterations):
        H *= (W.T @ (vals / np.maximum(W @ H, 1e-300))) / np.maximum(W.sum(axis=0), 1e-300)[:, None]
        W *= ((vals / np.maximum(W @ H, 1e-300)) @ H.T) / np.maximum(H.sum(axis=1), 1e-300)[None, :]
    # floors keep all-zero samples and dead factors well defined
    W = np.maximum(W, 1e-300)
    H = np.maximum(H, 1e-300)
    scale = W.sum(axis=0)
    W /= scale
    H *= scale[:, None]
    H /= np.maximum(H.sum(axis=0), 1e-300)
    # empty samples carry no information: keep their drawn proportions
    empty = vals.sum(axis=0) == 0
    H[:, empty] = state.Theta[:, empty]
    return state.replace(Phi=W, Theta=H)


def sample_counts(state: ModelState, rng: RngStream) -> np.ndarray:
    """Draw a count matrix from the model at ``state``."""
    out = np.empty((state.G, state.S), dtype=np.int64)
    _draw_counts(np.ascontiguousarray(state.Phi), np.ascontiguousarray(state.Theta),
                 state.zeta, state.alpha, state.lam, state.p, np.arange(state.K),
                 rng.spawn_key(), out)
    return out


# ----------------------------------------------------------------------------
# chains
# ----------------------------------------------------------------------------

@dataclass(frozen=True)
class ChainConfig:
    burn_in: int = 1000
    total_iterations: int = 2000
    thin: int = 1
    seed: int = 0
    store_draws: bool = True
    init: str = "nmf"

    def __post_init__(self):
        if not 0 <= self.burn_in < self.total_iterations:
            raise ValueError("need 0 <= burn_in < total_iterations")
        if self.thin < 1:
            raise ValueError("thin must be >= 1")
        if self.init not in ("nmf", "prior"):
            raise ValueError("init must be 'nmf' or 'prior'")

    @property
    def n_kept(self) -> int:
        return len(range(self.burn_in, self.total_iterations, self.thin))


_MOMENT_FIELDS = ("Phi", "Theta", "alpha", "lam", "zeta", "p", "r", "c", "gamma0", "c0")


class RunningMoments:
    """Welford accumulators for every ModelState field."""

    def __init__(self):
        self.n = 0
        self.mean = {}
        self.m2 = {}

    def push(self, state: ModelState) -> None:
        self.n += 1
        for name in _MOMENT_FIELDS:
            x = np.asarray(getattr(state, name), dtype=np.float64)
            if self.n == 1:
                self.mean[name] = x.copy()
                self.m2[name] = np.zeros_like(x)
                continue
            delta = x - self.mean[name]
            self.mean[name] = self.mean[name] + delta / self.n
            self.m2[name] = self.m2[name] + delta * (x - self.mean[name])

    def variance(self, name: str) -> np.ndarray:
        if self.n < 2:
            return np.zeros_like(self.mean[name])
        return self.m2[name] / (self.n - 1)


@dataclass
class ChainOutput:
    K: int
    config: ChainConfig
    hyperparameters: Hyperparameters
    loglik_trace: np.ndarray
    kept_iterations: np.ndarray
    moments: RunningMoments
    draws: list | None = None
    timing: np.ndarray = field(default_factory=lambda: np.zeros(0))
    final_state: ModelState | None = None

    def __post_init__(self):
        if self.draws is not None and len(self.draws) != len(self.loglik_trace):
            raise ValueError("draws and loglik trace disagree in length")

    @property
    def n_kept(self) -> int:
        return len(self.loglik_trace)

    def trace(self, name: str, index=()) -> np.ndarray:
        """Per-draw values of one parameter entry; needs stored draws."""
        if self.draws is None:
            raise ValueError("chain was run without stored draws")
        return np.array([np.asarray(getattr(d, name))[index] for d in self.draws])


def run_chain(Y, K: int, hp: Hyperparameters, cfg: ChainConfig,
              init: ModelState | None = None, progress: bool = False) -> ChainOutput:
    """Run ``cfg.total_iterations`` sweeps at fixed K and keep the
    post-burn-in, thinned draws with their log-likelihoods."""
    if K < 1:
        raise ValueError("K must be >= 1")
    vals = _as_values(Y)
    G, S = vals.shape
    if init is not None and (init.G, init.K, init.S) != (G, K, S):
        raise ValueError("initial state does not match data dimensions and K")
    order = np.arange(K, dtype=np.int64)
    ysum = vals.sum(axis=0).astype(np.float64)
    hp_arr = hp.as_array()
    const = _log_factorial_sum(vals)
    timing = np.empty(cfg.total_iterations)
    if init is None:
        init = initial_state(G, S, K, hp, RngStream(cfg.seed, INIT_STREAM))
        if cfg.init == "nmf":
            init = nmf_refine(vals, init)
    work = _Work(init)
    moments = RunningMoments()
    draws = [] if cfg.store_draws else None
    trace, kept = [], []
    for t in range(cfg.total_iterations):
        t0 = time.perf_counter()
        work.sweep(vals, ysum, hp_arr, order, RngStream(cfg.seed, t).spawn_key())
        timing[t] = time.perf_counter() - t0
        if t >= cfg.burn_in and (t - cfg.burn_in) % cfg.thin == 0:
            state = work.state(validate=False)
            trace.append(work.loglik_unnormalised(vals, order) - const)
            kept.append(t)
            moments.push(state)
            if draws is not None:
                draws.append(state)
        if progress and (t + 1) % 100 == 0:
            logger.info("K=%d iteration %d/%d", K, t + 1, cfg.total_iterations)
    return ChainOutput(K=K, config=cfg, hyperparameters=hp, loglik_trace=np.array(trace),
                       kept_iterations=np.array(kept, dtype=np.int64), moments=moments,
                       draws=draws, timing=timing, final_state=work.state())


def autocorrelation(trace, max_lag: int) -> np.ndarray:
    """Sample autocorrelation at lags 0..max_lag (biased estimator)."""
    x = np.asarray(trace, dtype=np.float64)
    n = x.size
    if max_lag < 0 or n <= max_lag:
        raise ValueError("trace must be longer than max_lag")
    d = x - x.mean()
    denom = float(np.dot(d, d))
    out = np.zeros(max_lag + 1)
    out[0] = 1.0
    if denom == 0.0:
        return out
    for lag in range(1, max_lag + 1):
        out[lag] = float(np.dot(d[:n - lag], d[lag:])) / denom
    return out
