"""Domain types and closed-form model quantities.

The count model is

    y_ij ~ NB(lam * alpha_i + sum_k phi_ik * theta_kj * zeta_j, p_j)

with NB(r, p) having mean r p / (1 - p). Gamma laws are written with a shape
and a scale (mean = shape * scale) unless a function says otherwise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields, replace
from typing import Sequence

import numpy as np
from numba import njit

from .distributions import SHAPE_FLOOR

SIMPLEX_TOL = 1e-10


def _frozen(a, dtype):
    arr = np.array(a, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class CountMatrix:
    """A G x S matrix of read counts with gene (row) and sample (column) ids."""

    values: np.ndarray
    gene_ids: tuple
    sample_ids: tuple

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValueError(f"count matrix must be 2-d and non-empty, got shape {v.shape}")
        if v.dtype.kind == "f":
            if not np.all(np.isfinite(v)) or np.any(v != np.floor(v)):
                raise ValueError("counts must be integral")
        elif v.dtype.kind not in "iu":
            raise ValueError(f"counts must be integers, got dtype {v.dtype}")
        if np.any(v < 0):
            raise ValueError("counts must be nonnegative")
        object.__setattr__(self, "values", _frozen(v, np.int64))
        G, S = v.shape
        gids = tuple(str(g) for g in self.gene_ids)
        sids = tuple(str(s) for s in self.sample_ids)
        if len(gids) != G or len(sids) != S:
            raise ValueError("identifier lengths do not match the matrix shape")
        for name, ids in (("gene", gids), ("sample", sids)):
            if len(set(ids)) != len(ids):
                dup = next(x for x in ids if ids.count(x) > 1)
                raise ValueError(f"duplicate {name} id {dup!r}")
        object.__setattr__(self, "gene_ids", gids)
        object.__setattr__(self, "sample_ids", sids)

    @classmethod
    def from_array(cls, values, gene_ids=None, sample_ids=None) -> "CountMatrix":
        v = np.asarray(values)
        G, S = v.shape
        if gene_ids is None:
            gene_ids = [f"gene{i + 1}" for i in range(G)]
        if sample_ids is None:
            sample_ids = [f"sample{j + 1}" for j in range(S)]
        return cls(v, tuple(gene_ids), tuple(sample_ids))

    @property
    def shape(self):
        return self.values.shape

    @property
    def n_genes(self) -> int:
        return self.values.shape[0]

    @property
    def n_samples(self) -> int:
        return self.values.shape[1]

    def __eq__(self, other):
        if not isinstance(other, CountMatrix):
            return NotImplemented
        return (self.gene_ids == other.gene_ids and self.sample_ids == other.sample_ids
                and np.array_equal(self.values, other.values))


@dataclass(frozen=True)
class Hyperparameters:
    """Prior settings. Defaults are the simulation-study values; ``delta`` has
    no published value and mirrors ``eta``."""

    eta: float = 0.1
    delta: float = 0.1
    a0: float = 0.01
    b0: float = 0.01
    e0: float = 1.0
    f0: float = 1.0
    g0: float = 1.0
    h0: float = 1.0
    u0: float = 100.0
    v0: float = 100.0

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (isinstance(v, (int, float)) and math.isfinite(v) and v > 0):
                raise ValueError(f"hyperparameter {f.name} must be positive, got {v!r}")
            object.__setattr__(self, f.name, float(v))

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


_STATE_ARRAYS = ("Phi", "Theta", "alpha", "zeta", "p", "r", "c")


@dataclass(frozen=True, eq=False)
class ModelState:
    """One complete parameter set for a fixed number of factors K.

    ``Phi`` is G x K with simplex columns, ``Theta`` K x S with simplex
    columns, ``alpha`` a simplex over genes. ``lam`` is the scale of the gene
    effect (lambda).
    """

    Phi: np.ndarray
    Theta: np.ndarray
    alpha: np.ndarray
    lam: float
    zeta: np.ndarray
    p: np.ndarray
    r: np.ndarray
    c: np.ndarray
    gamma0: float
    c0: float
    validate: bool = field(default=True, repr=False, compare=False)

    def __post_init__(self):
        for name in _STATE_ARRAYS:
            object.__setattr__(self, name, _frozen(getattr(self, name), np.float64))
        object.__setattr__(self, "lam", float(self.lam))
        object.__setattr__(self, "gamma0", float(self.gamma0))
        object.__setattr__(self, "c0", float(self.c0))
        if self.validate:
            self.check()

    @property
    def K(self) -> int:
        return self.Phi.shape[1]

    @property
    def G(self) -> int:
        return self.Phi.shape[0]

    @property
    def S(self) -> int:
        return self.Theta.shape[1]

    def check(self, tol: float = SIMPLEX_TOL) -> None:
        G, K = self.Phi.shape
        if self.Theta.shape[0] != K:
            raise ValueError("Phi and Theta disagree on K")
        S = self.Theta.shape[1]
        shapes = {"alpha": (G,), "zeta": (S,), "p": (S,), "r": (K,), "c": (S,)}
        for name, shp in shapes.items():
            if getattr(self, name).shape != shp:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shp}")
        for name, arr, axis in (("Phi", self.Phi, 0), ("Theta", self.Theta, 0),
                                ("alpha", self.alpha, 0)):
            if np.any(arr < 0) or not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has negative or non-finite entries")
            if np.max(np.abs(arr.sum(axis=axis) - 1.0)) > tol:
                raise ValueError(f"{name} is off the simplex")
        if np.any(self.p <= 0) or np.any(self.p >= 1):
            raise ValueError("p must lie strictly inside (0, 1)")
        for name in ("zeta", "r", "c"):
            if np.any(getattr(self, name) <= 0):
                raise ValueError(f"{name} must be strictly positive")
        for name in ("lam", "gamma0", "c0"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be strictly positive")

    def replace(self, **changes) -> "ModelState":
        return replace(self, **changes)

    def permute_factors(self, perm: Sequence[int]) -> "ModelState":
        """Relabel factors so that new factor m is old factor ``perm[m]``."""
        perm = np.asarray(perm)
        return replace(self, Phi=self.Phi[:, perm], Theta=self.Theta[perm, :], r=self.r[perm])

    def shapes(self) -> np.ndarray:
        """Per-cell NB shapes lam * alpha_i + sum_k phi_ik theta_kj zeta_j."""
        return _shapes(self.Phi, self.Theta, self.zeta, self.alpha, self.lam,
                       np.arange(self.K))


@dataclass(frozen=True, eq=False)
class AugmentedStats:
    """Marginals of the latent table counts from one allocation pass."""

    ell_gene_factor: np.ndarray      # G x K, tables per gene and factor
    ell_factor_sample: np.ndarray    # K x S, tables per factor and sample
    ell_gene_effect: np.ndarray      # G, gene-effect tables per gene
    ell_second_level: np.ndarray     # K x S, CRT tables of ell_factor_sample
    ell_third_level: np.ndarray      # K, CRT tables of the second level row sums

    def __post_init__(self):
        for f in fields(self):
            arr = np.asarray(getattr(self, f.name))
            if np.any(arr < 0):
                raise ValueError(f"{f.name} has negative entries")
            object.__setattr__(self, f.name, _frozen(arr, np.int64))

    @property
    def ell_gene_effect_total(self) -> int:
        return int(self.ell_gene_effect.sum())

    @classmethod
    def zeros(cls, G: int, K: int, S: int) -> "AugmentedStats":
        return cls(np.zeros((G, K)), np.zeros((K, S)), np.zeros(G),
                   np.zeros((K, S)), np.zeros(K))

    def check(self) -> None:
        if np.any(self.ell_second_level > self.ell_factor_sample):
            raise ValueError("second-level tables exceed their customers")
        if np.any(self.ell_third_level > self.ell_second_level.sum(axis=1)):
            raise ValueError("third-level tables exceed their customers")


# ----------------------------------------------------------------------------
# formulas
# ----------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _shapes(phi, theta, zeta, alpha, lam, order):
    G, K = phi.shape
    S = theta.shape[1]
    out = np.empty((G, S))
    for j in range(S):
        for i in range(G):
            fac = 0.0
            for m in range(K):
                k = order[m]
                fac += phi[i, k] * theta[k, j] * zeta[j]
            out[i, j] = lam * alpha[i] + fac
    return out


@njit(cache=True, nogil=True)
def _loglik_kernel(Y, phi, theta, zeta, alpha, lam, p, order):
    """Sum over cells of the NB log mass without the -log(y!) constant."""
    G, K = phi.shape
    S = Y.shape[1]
    total = 0.0
    for j in range(S):
        lp = math.log(p[j])
        l1p = math.log1p(-p[j])
        col = 0.0
        for i in range(G):
            fac = 0.0
            for m in range(K):
                k = order[m]
                fac += phi[i, k] * theta[k, j] * zeta[j]
            s = lam * alpha[i] + fac
            if s < SHAPE_FLOOR:
                s = SHAPE_FLOOR
            y = Y[i, j]
            if y == 0:
                col += s * l1p
            else:
                col += math.lgamma(y + s) - math.lgamma(s) + s * l1p + y * lp
        total += col
    return total


@njit(cache=True, nogil=True)
def _log_factorial_sum(Y):
    tot = 0.0
    for j in range(Y.shape[1]):
        col = 0.0
        for i in range(Y.shape[0]):
            if Y[i, j] > 1:
                col += math.lgamma(Y[i, j] + 1.0)
        tot += col
    return tot


def nb_log_pmf(y, r, p) -> float:
    """Log mass of NB(r, p) at y: lgamma(y+r) - lgamma(r) - log y! + r log(1-p) + y log p."""
    if not (r > 0):
        raise ValueError(f"shape r must be positive, got {r!r}")
    if not (0 < p < 1):
        raise ValueError(f"p must lie in (0, 1), got {p!r}")
    if y < 0 or int(y) != y:
        raise ValueError(f"y must be a nonnegative integer, got {y!r}")
    y = int(y)
    out = r * math.log1p(-p)
    if y > 0:
        out += math.lgamma(y + r) - math.lgamma(r) - math.lgamma(y + 1.0) + y * math.log(p)
    return out


def model_mean(state: ModelState, i: int, j: int) -> float:
    """Expected count of gene i in sample j."""
    s = state.lam * state.alpha[i] + float(np.dot(state.Phi[i, :], state.Theta[:, j])) * state.zeta[j]
    return s * state.p[j] / (1.0 - state.p[j])


def aggregate_shapes(state: ModelState) -> np.ndarray:
    """Column totals of the per-cell shapes; equal to lam + zeta_j."""
    return state.shapes().sum(axis=0)


def _as_values(Y) -> np.ndarray:
    return Y.values if isinstance(Y, CountMatrix) else np.asarray(Y, dtype=np.int64)


def full_log_likelihood(Y, state: ModelState) -> float:
    """Log-likelihood of the whole count matrix under ``state``."""
    vals = _as_values(Y)
    if vals.shape != (state.G, state.S):
        raise ValueError(f"counts have shape {vals.shape}, state expects {(state.G, state.S)}")
    ll = _loglik_kernel(vals, state.Phi, state.Theta, state.zeta, state.alpha,
                        state.lam, state.p, np.arange(state.K))
    return ll - _log_factorial_sum(vals)
