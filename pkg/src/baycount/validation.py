"""Statistical checks used by the test and acceptance suites.

* two-sample chi-square on discrete samples with sparse-bin pooling
* batch-means standard errors for autocorrelated traces
* the joint-distribution ("getting it right") test for the Gibbs sweep
* augmentation identities and a Monte Carlo moment suite for the samplers
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from . import distributions as dist
from .distributions import RngStream
from .gibbs import _Work, allocate_tables, sample_counts, sample_prior
from .model import Hyperparameters, ModelState


# Priors for the joint-distribution test. Proper and moderately informative so
# every monitored moment is finite (zeta has a finite variance only for
# e0 > 2) and the test data stay small enough to sweep quickly.
JOINT_TEST_HYPERPARAMETERS = Hyperparameters(eta=0.5, delta=0.5, a0=2.0, b0=3.0, e0=10.0, f0=10.0,
                                             g0=5.0, h0=5.0, u0=5.0, v0=5.0)


def two_sample_chisq(a, b, min_expected: float = 5.0):
    """Chi-square homogeneity test of two discrete samples.

    ``a`` and ``b`` are arrays of outcomes; rows of 2-d arrays are treated as
    joint outcomes. Outcomes whose expected count falls below
    ``min_expected`` in either sample are pooled into one bin (dropped if the
    pooled bin is itself too small). Returns ``(statistic, dof, pvalue)``.
    """
    a = np.asarray(a)
    b = np.asarray(b)
    if a.ndim == 1:
        a = a[:, None]
        b = b[:, None]
    keys, inv = np.unique(np.concatenate([a, b]), axis=0, return_inverse=True)
    inv = inv.ravel()
    na, nb = len(a), len(b)
    ca = np.bincount(inv[:na], minlength=len(keys)).astype(float)
    cb = np.bincount(inv[na:], minlength=len(keys)).astype(float)
    tot = ca + cb
    ea = tot * na / (na + nb)
    eb = tot * nb / (na + nb)
    small = (ea < min_expected) | (eb < min_expected)
    table = [np.column_stack([ca[~small], cb[~small]])]
    pooled = np.array([[ca[small].sum(), cb[small].sum()]])
    pooled_tot = pooled.sum()
    if pooled_tot * min(na, nb) / (na + nb) >= min_expected:
        table.append(pooled)
    table = np.vstack(table)
    if table.shape[0] < 2:
        return 0.0, 0, 1.0
    stat, pval, dof, _ = stats.chi2_contingency(table.T, correction=False)
    return float(stat), int(dof), float(pval)


def batch_means_se(x, n_batches: int = 50) -> float:
    """Standard error of the mean of an autocorrelated series."""
    x = np.asarray(x, dtype=np.float64)
    n = (x.size // n_batches) * n_batches
    if n < n_batches * 2:
        raise ValueError("series too short for batch means")
    means = x[:n].reshape(n_batches, -1).mean(axis=1)
    return float(means.std(ddof=1) / np.sqrt(n_batches))


def _monitored(state: ModelState) -> dict:
    return _monitor_fields(state.lam, state.gamma0, state.c0, state.p, state.zeta, state.r,
                           state.c, state.Theta, state.Phi, state.alpha)


def _monitored_work(work: _Work) -> dict:
    return _monitor_fields(work.scal[0], work.scal[1], work.scal[2], work.p, work.zeta, work.r,
                           work.c, work.theta, work.phi, work.alpha)


def _monitor_fields(lam, gamma0, c0, p, zeta, r, c, theta, phi, alpha) -> dict:
    out = {"lambda": lam, "gamma0": gamma0, "c0": c0, "alpha[0]": alpha[0]}
    for j in range(p.shape[0]):
        out[f"p[{j}]"] = p[j]
        out[f"zeta[{j}]"] = zeta[j]
        out[f"c[{j}]"] = c[j]
        out[f"theta[0,{j}]"] = theta[0, j]
    for k in range(r.shape[0]):
        out[f"r[{k}]"] = r[k]
        out[f"phi[0,{k}]"] = phi[0, k]
    return out


@dataclass
class JointTestResult:
    names: list
    z_first: np.ndarray
    z_second: np.ndarray
    rounds: int

    @property
    def max_abs_z(self) -> float:
        return float(max(np.max(np.abs(self.z_first)), np.max(np.abs(self.z_second))))

    def table(self) -> str:
        lines = [f"{'quantity':<14}{'z(mean)':>10}{'z(2nd)':>10}"]
        for n, a, b in zip(self.names, self.z_first, self.z_second):
            lines.append(f"{n:<14}{a:>10.2f}{b:>10.2f}")
        return "\n".join(lines)


def joint_distribution_test(G: int = 5, S: int = 3, K: int = 2,
                            hp: Hyperparameters | None = None, rounds: int = 10_000,
                            seed: int = 0, sweeps_per_round: int = 1) -> JointTestResult:
    """Compare prior draws with a data-redrawing Gibbs chain.

    The marginal-conditional simulator draws parameters from the prior,
    independently each round. The successive-conditional simulator starts
    from a prior draw and alternates data redraws with Gibbs sweeps; if every
    conditional update is right, its parameter marginals are the prior too.
    Moments are compared with z-scores, using batch means for the chain.
    """
    hp = hp if hp is not None else JOINT_TEST_HYPERPARAMETERS
    rng = RngStream(seed, 0)
    marg = []
    for _ in range(rounds):
        marg.append(_monitored(sample_prior(G, S, K, hp, rng)))

    state = sample_prior(G, S, K, hp, RngStream(seed, 1))
    work = _Work(state)
    hp_arr = hp.as_array()
    order = np.arange(K, dtype=np.int64)
    data_rng = RngStream(seed, 2)
    succ = []
    for t in range(rounds):
        Y = sample_counts(work.state(validate=False), data_rng)
        ysum = Y.sum(axis=0).astype(np.float64)
        for s in range(sweeps_per_round):
            work.sweep(Y, ysum, hp_arr, order, RngStream(seed + 1, t * sweeps_per_round + s).spawn_key())
        succ.append(_monitored_work(work))

    names = list(marg[0])
    zf, zs = [], []
    for n in names:
        a = np.array([m[n] for m in marg])
        b = np.array([m[n] for m in succ])
        for power, sink in ((1, zf), (2, zs)):
            xa, xb = a ** power, b ** power
            se_a = xa.std(ddof=1) / np.sqrt(xa.size)
            se_b = batch_means_se(xb)
            sink.append((xa.mean() - xb.mean()) / np.sqrt(se_a ** 2 + se_b ** 2))
    return JointTestResult(names, np.array(zf), np.array(zs), rounds)


# ----------------------------------------------------------------------------
# augmentation identities
# ----------------------------------------------------------------------------

def compound_pair_paths(r: float, p: float, n: int, seed: int = 0):
    """Two routes to the pair (tables, count).

    Returns ``(via_poisson, via_nb)``, each an (n, 2) array of ``(l, x)``:
    l ~ Pois(-r log(1-p)), x ~ SumLog(l, p) on the first route;
    x ~ NB(r, p), l ~ CRT(x, r) on the second.
    """
    a = RngStream(seed, 11)
    b = RngStream(seed, 12)
    ell = dist.sample_poisson(-r * np.log1p(-p), a, size=n)
    x = np.array([dist.sample_sumlog(int(k), p, a) for k in ell], dtype=np.int64)
    x2 = dist.sample_negative_binomial(r, p, b, size=n)
    ell2 = np.array([dist.sample_crt(int(k), r, b) for k in x2], dtype=np.int64)
    return np.column_stack([ell, x]), np.column_stack([ell2, x2])


def crt_bernoulli_oracle(x, w, rng: np.random.Generator):
    """Vectorised CRT(x, w) by the literal Bernoulli sum; x is an integer array."""
    x = np.asarray(x)
    out = np.zeros(x.shape, dtype=np.int64)
    for t in range(int(x.max(initial=0))):
        out += (rng.random(x.shape) < w / (w + t)) & (t < x)
    return out


def unblocked_allocation(y: int, weights, n: int, seed: int = 0) -> np.ndarray:
    """Per-component table counts by the unblocked route, with numpy's RNG.

    The latent counts (z, x_1..x_K) given their total y are
    Dirichlet-multinomial with the component shapes; each is then seated
    with its own CRT. Returns (n, K+1) counts, gene effect first.
    """
    w = np.asarray(weights, dtype=np.float64)
    rng = np.random.default_rng(seed)
    g = rng.dirichlet(w, size=n)
    counts = np.array([rng.multinomial(y, gi) for gi in g])
    return np.column_stack([crt_bernoulli_oracle(counts[:, k], w[k], rng) for k in range(w.size)])


def blocked_allocation(y: int, weights, n: int, seed: int = 0) -> np.ndarray:
    """Per-component table counts from :func:`allocate_tables`.

    n copies of one cell are laid out as n genes of a single-sample matrix
    with identical shapes, so one call yields n independent draws.
    """
    w = np.asarray(weights, dtype=np.float64)
    K = w.size - 1
    tot = w[1:].sum()
    state = ModelState(Phi=np.full((n, K), 1.0 / n), Theta=(w[1:] / tot)[:, None],
                       alpha=np.full(n, 1.0 / n), lam=w[0] * n, zeta=np.array([tot * n]),
                       p=np.array([0.5]), r=np.ones(K), c=np.ones(1), gamma0=1.0, c0=1.0,
                       validate=False)
    Y = np.full((n, 1), y, dtype=np.int64)
    stats = allocate_tables(Y, state, RngStream(seed, 21))
    return np.column_stack([stats.ell_gene_effect, stats.ell_gene_factor])


# ----------------------------------------------------------------------------
# moment suite
# ----------------------------------------------------------------------------

def _z_mean(x, mu):
    x = np.asarray(x, dtype=np.float64)
    return float((x.mean() - mu) / (x.std(ddof=1) / np.sqrt(x.size)))


def _z_var(x, var):
    x = np.asarray(x, dtype=np.float64)
    d = x - x.mean()
    v = d.var(ddof=1)
    return float((v - var) / np.sqrt((np.mean(d ** 4) - v ** 2) / x.size))


def _log_moments(p):
    lg = np.log1p(-p)
    mean = -p / ((1 - p) * lg)
    var = -p * (p + lg) / ((1 - p) ** 2 * lg ** 2)
    return mean, var


def moment_suite(n: int = 1_000_000, seed: int = 0) -> list:
    """Monte Carlo mean and variance z-scores of every sampler against its
    closed-form moments. Returns ``[(label, z), ...]``."""
    out = []

    def check(label, x, mean, var):
        out.append((f"{label} mean", _z_mean(x, mean)))
        out.append((f"{label} var", _z_var(x, var)))

    rng = RngStream(seed, 31)
    for a, b in ((1.0, 2.0), (0.05, 10.0), (100.0, 1.0), (2.5, 0.4)):
        check(f"gamma({a},{b})", dist.sample_gamma(a, b, rng, size=n), a * b, a * b * b)
    for conc in ((0.1, 0.2, 0.7), (5.0, 5.0)):
        c = np.array(conc)
        c0 = c.sum()
        draws = dist.sample_dirichlet(c, rng, size=n)
        for i in range(c.size):
            check(f"dirichlet{conc}[{i}]", draws[:, i], c[i] / c0,
                  c[i] * (c0 - c[i]) / (c0 ** 2 * (c0 + 1)))
    for x, r in ((5, 2.0), (1000, 3.5), (200_000, 0.3)):
        q = r / (r + np.arange(x))
        check(f"crt({x},{r})", dist.sample_crt(x, r, rng, size=n), q.sum(), (q * (1 - q)).sum())
    for p in (0.5, 0.9):
        m, v = _log_moments(p)
        check(f"logarithmic({p})", dist.sample_logarithmic(p, rng, size=n), m, v)
    m, v = _log_moments(0.3)
    check("sumlog(4,0.3)", dist.sample_sumlog(4, 0.3, rng, size=n), 4 * m, 4 * v)
    w = np.array([1.0, 2.0, 3.0])
    draws = dist.sample_multinomial(6, w, rng, size=n)
    pw = w / w.sum()
    for i in range(3):
        check(f"multinomial(6,(1,2,3))[{i}]", draws[:, i], 6 * pw[i], 6 * pw[i] * (1 - pw[i]))
    for r, p in ((2.0, 0.5), (1.0, 0.3), (0.5, 0.99)):
        check(f"nb({r},{p})", dist.sample_negative_binomial(r, p, rng, size=n),
              r * p / (1 - p), r * p / (1 - p) ** 2)
    for lam in (3.3, 1000.0):
        check(f"poisson({lam})", dist.sample_poisson(lam, rng, size=n), lam, lam)
    for a, b in ((2.0, 3.0), (0.01, 2.01)):
        check(f"beta({a},{b})", dist.sample_beta(a, b, rng, size=n), a / (a + b),
              a * b / ((a + b) ** 2 * (a + b + 1)))
    return out
