"""Counter-based random streams and exact samplers for the augmentation laws.

Every sampler is a numba kernel operating on a two-word stream state
``st = [key, counter]``. A 64-bit output is a keyed hash of the counter, so a
stream is fully determined by its key and the number of words consumed; no
state is shared between streams and draws never depend on thread scheduling.

The public functions wrap the kernels for use from Python and accept an
optional ``size`` for vectorised Monte Carlo checks.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

SHAPE_FLOOR = 1e-300
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_TWO53 = 1.0 / 9007199254740992.0
_TWO_PI = 2.0 * math.pi


# ----------------------------------------------------------------------------
# stream primitives
# ----------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def mix64(z):
    """SplitMix64 finalizer; a bijection on 64-bit words."""
    z = np.uint64(z)
    z = (z ^ (z >> _S30)) * _M1
    z = (z ^ (z >> _S27)) * _M2
    return z ^ (z >> _S31)


@njit(cache=True, nogil=True)
def derive_key(key, tag):
    """Child key for substream ``tag`` of ``key``."""
    return mix64(np.uint64(key) ^ mix64(np.uint64(tag) + _GOLDEN))


@njit(cache=True, nogil=True)
def derive_key2(key, a, b):
    return derive_key(derive_key(key, a), b)


@njit(cache=True, nogil=True)
def next_u64(st):
    c = st[1]
    st[1] = c + np.uint64(1)
    return mix64(st[0] ^ mix64(c * _GOLDEN + _M2))


@njit(cache=True, nogil=True)
def uniform(st):
    """Uniform double on the open interval (0, 1)."""
    return (np.float64(next_u64(st) >> _S11) + 0.5) * _TWO53


@njit(cache=True, nogil=True)
def std_normal(st):
    u1 = uniform(st)
    u2 = uniform(st)
    return math.sqrt(-2.0 * math.log(u1)) * math.cos(_TWO_PI * u2)


# ----------------------------------------------------------------------------
# continuous laws
# ----------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _mt_gamma(st, a):
    # Marsaglia-Tsang squeeze, valid for a >= 1
    d = a - 1.0 / 3.0
    c = 1.0 / math.sqrt(9.0 * d)
    while True:
        x = std_normal(st)
        v = 1.0 + c * x
        if v <= 0.0:
            continue
        v = v * v * v
        u = uniform(st)
        x2 = x * x
        if u < 1.0 - 0.0331 * x2 * x2:
            return d * v
        if math.log(u) < 0.5 * x2 + d * (1.0 - v + math.log(v)):
            return d * v


@njit(cache=True, nogil=True)
def log_std_gamma(st, a):
    """Log of a Gamma(a, 1) draw.

    Shapes below one use ``G(a) = G(a + 1) * U**(1/a)`` evaluated in log space,
    so tiny shapes never collapse to an exact zero before normalisation.
    """
    if a >= 1.0:
        return math.log(_mt_gamma(st, a))
    return math.log(_mt_gamma(st, a + 1.0)) + math.log(uniform(st)) / a


@njit(cache=True, nogil=True)
def std_gamma(st, a):
    if a >= 1.0:
        g = _mt_gamma(st, a)
    else:
        g = math.exp(log_std_gamma(st, a))
    return max(g, SHAPE_FLOOR)


@njit(cache=True, nogil=True)
def gamma_rate(st, shape, rate):
    return max(std_gamma(st, shape) / rate, SHAPE_FLOOR)


@njit(cache=True, nogil=True)
def beta(st, a, b):
    la = log_std_gamma(st, a)
    lb = log_std_gamma(st, b)
    return 1.0 / (1.0 + math.exp(lb - la))


@njit(cache=True, nogil=True)
def dirichlet_into(st, conc, out):
    """Fill ``out`` with a Dirichlet(conc) draw, normalising in log space."""
    d = conc.shape[0]
    mx = -np.inf
    for k in range(d):
        out[k] = log_std_gamma(st, conc[k])
        if out[k] > mx:
            mx = out[k]
    tot = 0.0
    for k in range(d):
        out[k] = math.exp(out[k] - mx)
        tot += out[k]
    for k in range(d):
        out[k] /= tot


# ----------------------------------------------------------------------------
# discrete laws
# ----------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def poisson(st, lam):
    if lam <= 0.0:
        return 0
    if lam < 10.0:
        # sequential inversion
        u = uniform(st)
        pk = math.exp(-lam)
        cdf = pk
        k = 0
        while u > cdf:
            k += 1
            pk *= lam / k
            cdf += pk
            if pk < 1e-300 and k > lam:
                break
        return k
    # transformed rejection with squeeze (Hormann's PTRS)
    slam = math.sqrt(lam)
    loglam = math.log(lam)
    b = 0.931 + 2.53 * slam
    a = -0.059 + 0.02483 * b
    invalpha = 1.1239 + 1.1328 / (b - 3.4)
    vr = 0.9277 - 3.6224 / (b - 2.0)
    while True:
        u = uniform(st) - 0.5
        v = uniform(st)
        us = 0.5 - abs(u)
        k = np.floor((2.0 * a / us + b) * u + lam + 0.43)
        if us >= 0.07 and v <= vr:
            return np.int64(k)
        if k < 0.0 or (us < 0.013 and v > us):
            continue
        if (math.log(v) + math.log(invalpha) - math.log(a / (us * us) + b)
                <= -lam + k * loglam - math.lgamma(k + 1.0)):
            return np.int64(k)


@njit(cache=True, nogil=True)
def binomial(st, n, p):
    """Exact Binomial(n, p) by recursive order-statistic splitting.

    The median order statistic of n uniforms is Beta distributed; comparing it
    with p settles a block of trials at once, leaving a smaller binomial on a
    rescaled probability.
    """
    if n <= 0 or p <= 0.0:
        return 0
    if p >= 1.0:
        return n
    k = 0
    while n > 16:
        i = n // 2 + 1
        b = beta(st, float(i), float(n + 1 - i))
        if b <= p:
            k += i
            n -= i
            p = (p - b) / (1.0 - b)
        else:
            n = i - 1
            p = p / b
        if p <= 0.0:
            return k
        if p >= 1.0:
            return k + n
    for _ in range(n):
        if uniform(st) < p:
            k += 1
    return k


@njit(cache=True, nogil=True)
def crt(st, x, r):
    """Chinese restaurant table count: sum of Bernoulli(r / (r + t - 1)), t = 1..x.

    Exact for every x. Trials are processed in doubling blocks; inside a block
    whose success probabilities are all below 1/4 the next candidate success
    is found with a geometric skip at the block's largest probability and then
    thinned to the true one, so the cost is O(r log x) rather than O(x).
    """
    if x <= 0:
        return 0
    ell = 1
    t = 1
    while t < x:
        a = t + 1
        hi = min(x, 2 * a)
        top = r + a - 1.0
        q = r / top
        if q >= 0.25:
            for s in range(a, hi + 1):
                if uniform(st) * (r + s - 1.0) < r:
                    ell += 1
        else:
            log1mq = math.log1p(-q)
            pos = a - 1
            while True:
                jump = np.floor(math.log(uniform(st)) / log1mq)
                if jump >= hi - pos:
                    break
                pos += np.int64(jump) + 1
                if uniform(st) * (r + pos - 1.0) < top:
                    ell += 1
        t = hi
    return ell


@njit(cache=True, nogil=True)
def logarithmic(st, p, log1mp):
    """Logarithmic-series draw on {1, 2, ...} (Kemp's accelerated inversion)."""
    while True:
        v = uniform(st)
        if v >= p:
            return 1
        u = uniform(st)
        q = -math.expm1(log1mp * u)
        if v <= q * q:
            res = np.floor(1.0 + math.log(v) / math.log(q))
            if res < 1.0:
                continue
            return np.int64(res)
        if v >= q:
            return 1
        return 2


@njit(cache=True, nogil=True)
def sumlog(st, ell, p, log1mp):
    tot = 0
    for _ in range(ell):
        tot += logarithmic(st, p, log1mp)
    return tot


@njit(cache=True, nogil=True)
def multinomial_into(st, n, weights, out):
    """Split n items over categories by sequential conditional binomials."""
    d = weights.shape[0]
    suffix = np.empty(d + 1)
    suffix[d] = 0.0
    for m in range(d - 1, -1, -1):
        suffix[m] = suffix[m + 1] + weights[m]
    for m in range(d):
        out[m] = 0
    for m in range(d):
        if n == 0:
            break
        if m == d - 1 or suffix[m + 1] <= 0.0:
            out[m] = n
            n = 0
            break
        part = binomial(st, n, min(weights[m] / suffix[m], 1.0))
        out[m] = part
        n -= part


@njit(cache=True, nogil=True)
def negative_binomial(st, r, p):
    lam = std_gamma(st, r) * (p / (1.0 - p))
    return poisson(st, lam)


# ----------------------------------------------------------------------------
# vectorised loops used by the Python wrappers
# ----------------------------------------------------------------------------

@njit(cache=True, nogil=True)
def _fill_gamma(st, shape, scale, out):
    for t in range(out.shape[0]):
        out[t] = max(std_gamma(st, shape) * scale, SHAPE_FLOOR)


@njit(cache=True, nogil=True)
def _fill_dirichlet(st, conc, out):
    for t in range(out.shape[0]):
        dirichlet_into(st, conc, out[t])


@njit(cache=True, nogil=True)
def _fill_crt(st, x, r, out):
    for t in range(out.shape[0]):
        out[t] = crt(st, x, r)


@njit(cache=True, nogil=True)
def _fill_logarithmic(st, p, out):
    l1 = math.log1p(-p)
    for t in range(out.shape[0]):
        out[t] = logarithmic(st, p, l1)


@njit(cache=True, nogil=True)
def _fill_sumlog(st, ell, p, out):
    l1 = math.log1p(-p)
    for t in range(out.shape[0]):
        out[t] = sumlog(st, ell, p, l1)


@njit(cache=True, nogil=True)
def _fill_multinomial(st, n, weights, out):
    for t in range(out.shape[0]):
        multinomial_into(st, n, weights, out[t])


@njit(cache=True, nogil=True)
def _fill_negative_binomial(st, r, p, out):
    for t in range(out.shape[0]):
        out[t] = negative_binomial(st, r, p)


@njit(cache=True, nogil=True)
def _fill_nb_column(st, shapes, p, out):
    for t in range(out.shape[0]):
        out[t] = negative_binomial(st, max(shapes[t], SHAPE_FLOOR), p)


@njit(cache=True, nogil=True)
def _fill_poisson(st, lam, out):
    for t in range(out.shape[0]):
        out[t] = poisson(st, lam)


@njit(cache=True, nogil=True)
def _fill_beta(st, a, b, out):
    for t in range(out.shape[0]):
        out[t] = beta(st, a, b)


@njit(cache=True, nogil=True)
def _fill_uniform(st, out):
    for t in range(out.shape[0]):
        out[t] = uniform(st)


# ----------------------------------------------------------------------------
# Python surface
# ----------------------------------------------------------------------------

class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Draws are a pure function of the seed, the stream id and the number of
    words consumed so far, so two streams built from the same pair replay
    identical sequences on every platform.
    """

    def __init__(self, seed: int, stream_id: int = 0):
        self.seed = int(seed)
        self.stream_id = int(stream_id)
        key = derive_key(np.uint64(self.seed & 0xFFFFFFFFFFFFFFFF),
                         np.uint64(self.stream_id & 0xFFFFFFFFFFFFFFFF))
        self.state = np.array([key, 0], dtype=np.uint64)

    def __repr__(self):
        return (f"RngStream(seed={self.seed}, stream_id={self.stream_id}, "
                f"counter={int(self.state[1])})")

    @property
    def counter(self) -> int:
        return int(self.state[1])

    def spawn_key(self) -> np.uint64:
        """Consume one word and return it as the key of a fresh substream."""
        return np.uint64(next_u64(self.state))

    def spawn(self) -> "RngStream":
        child = RngStream.__new__(RngStream)
        child.seed = self.seed
        child.stream_id = self.stream_id
        child.state = np.array([self.spawn_key(), 0], dtype=np.uint64)
        return child

    def random(self, size=None):
        if size is None:
            return uniform(self.state)
        out = np.empty(int(np.prod(size)))
        _fill_uniform(self.state, out)
        return out.reshape(size)


def _check_prob(p, name="p"):
    if not 0.0 < p < 1.0:
        raise ValueError(f"{name} must lie in (0, 1), got {p!r}")


def _check_positive(x, name):
    if not x > 0.0:
        raise ValueError(f"{name} must be positive, got {x!r}")


def sample_gamma(shape, scale, rng: RngStream, size=None):
    """Gamma draw with mean ``shape * scale``; never returns less than 1e-300."""
    _check_positive(shape, "shape")
    _check_positive(scale, "scale")
    if size is None:
        return max(std_gamma(rng.state, float(shape)) * scale, SHAPE_FLOOR)
    out = np.empty(int(size))
    _fill_gamma(rng.state, float(shape), float(scale), out)
    return out


def sample_dirichlet(concentration, rng: RngStream, size=None):
    conc = np.asarray(concentration, dtype=np.float64)
    if conc.ndim != 1 or conc.size == 0:
        raise ValueError("concentration must be a non-empty vector")
    if not np.all(conc > 0):
        raise ValueError("Dirichlet concentrations must be positive")
    if size is None:
        out = np.empty(conc.size)
        dirichlet_into(rng.state, conc, out)
        return out
    out = np.empty((int(size), conc.size))
    _fill_dirichlet(rng.state, conc, out)
    return out


def sample_crt(x, r, rng: RngStream, size=None):
    """Number of occupied tables after seating x customers with concentration r."""
    _check_positive(r, "r")
    if x < 0:
        raise ValueError(f"x must be nonnegative, got {x!r}")
    if size is None:
        return int(crt(rng.state, np.int64(x), float(r)))
    out = np.empty(int(size), dtype=np.int64)
    _fill_crt(rng.state, np.int64(x), float(r), out)
    return out


def sample_logarithmic(p, rng: RngStream, size=None):
    _check_prob(p)
    if size is None:
        return int(logarithmic(rng.state, float(p), math.log1p(-p)))
    out = np.empty(int(size), dtype=np.int64)
    _fill_logarithmic(rng.state, float(p), out)
    return out


def sample_sumlog(ell, p, rng: RngStream, size=None):
    _check_prob(p)
    if ell < 0:
        raise ValueError(f"ell must be nonnegative, got {ell!r}")
    if size is None:
        return int(sumlog(rng.state, np.int64(ell), float(p), math.log1p(-p)))
    out = np.empty(int(size), dtype=np.int64)
    _fill_sumlog(rng.state, np.int64(ell), float(p), out)
    return out


def sample_multinomial(n, weights, rng: RngStream, size=None):
    w = np.asarray(weights, dtype=np.float64)
    if n < 0:
        raise ValueError(f"n must be nonnegative, got {n!r}")
    if w.ndim != 1 or w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise ValueError("weights must be a finite nonnegative vector")
    if n > 0 and not w.sum() > 0:
        raise ValueError("weights are all zero")
    if size is None:
        out = np.empty(w.size, dtype=np.int64)
        multinomial_into(rng.state, np.int64(n), w, out)
        return out
    out = np.empty((int(size), w.size), dtype=np.int64)
    _fill_multinomial(rng.state, np.int64(n), w, out)
    return out


def sample_negative_binomial(r, p, rng: RngStream, size=None):
    """NB(r, p) with mean r p / (1 - p), drawn as a gamma-Poisson mixture."""
    _check_positive(r, "r")
    _check_prob(p)
    if size is None:
        return int(negative_binomial(rng.state, float(r), float(p)))
    out = np.empty(int(size), dtype=np.int64)
    _fill_negative_binomial(rng.state, float(r), float(p), out)
    return out


def sample_poisson(lam, rng: RngStream, size=None):
    if lam < 0:
        raise ValueError(f"lam must be nonnegative, got {lam!r}")
    if size is None:
        return int(poisson(rng.state, float(lam)))
    out = np.empty(int(size), dtype=np.int64)
    _fill_poisson(rng.state, float(lam), out)
    return out


def sample_beta(a, b, rng: RngStream, size=None):
    _check_positive(a, "a")
    _check_positive(b, "b")
    if size is None:
        return beta(rng.state, float(a), float(b))
    out = np.empty(int(size))
    _fill_beta(rng.state, float(a), float(b), out)
    return out
