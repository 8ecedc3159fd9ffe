"""Achievable information rates and soft demapping for Gaussian channel laws.

Noise convention: ``sigma2_z`` is the noise variance per complex dimension,
so each real coordinate carries variance ``sigma2_z / 2``. The SNR of a
constellation is ``E[||X||^2] / (N/2 * sigma2_z)``.
"""
from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from scipy.linalg import eigh_tridiagonal

from .constellation import sign_symmetry

__all__ = [
    "GaussianLaw",
    "QuadratureRule",
    "GmiEstimate",
    "hermite_rule",
    "law_from_snr",
    "snr_db_from_law",
    "gmi_gh",
    "gmi_gh_value_and_grad",
    "gmi_mc",
    "mi_mc",
    "gmi_from_samples",
    "mi_from_samples",
    "maxlog_llr",
    "maxlog_llr_full",
    "hard_decide",
]

LOG2 = np.log(2.0)
MC_BATCHES = 20


@dataclass(frozen=True)
class GaussianLaw:
    """Circularly symmetric Gaussian channel law with variance ``sigma2_z``
    per complex dimension."""

    sigma2_z: float

    def __post_init__(self):
        if not np.isfinite(self.sigma2_z) or self.sigma2_z <= 0:
            raise ValueError(f"sigma2_z must be positive, got {self.sigma2_z!r}")


def law_from_snr(c, snr_db):
    """Gaussian law giving ``snr_db`` for constellation ``c``."""
    snr = 10.0 ** (np.asarray(snr_db, dtype=float) / 10.0)
    return GaussianLaw(float(c.energy / (c.N / 2 * snr)))


def snr_db_from_law(c, law):
    return float(10 * np.log10(c.energy / (c.N / 2 * law.sigma2_z)))


@dataclass(frozen=True)
class QuadratureRule:
    """One-dimensional Gauss-Hermite rule for the weight ``exp(-x**2)``."""

    nodes: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.nodes, dtype=float)
        w = np.asarray(self.weights, dtype=float)
        if x.shape != w.shape or x.ndim != 1:
            raise ValueError("nodes and weights must be 1D arrays of equal length")
        if abs(w.sum() - np.sqrt(np.pi)) > 1e-10:
            raise ValueError("weights must sum to sqrt(pi)")
        if not np.allclose(np.sort(x), -np.sort(x)[::-1], atol=1e-12):
            raise ValueError("nodes must be symmetric about 0")
        object.__setattr__(self, "nodes", x)
        object.__setattr__(self, "weights", w)

    @property
    def J(self):
        return self.nodes.size

    def product(self, N, prune=0.0):
        """Tensor-product nodes ``(L, N)`` and weights ``(L,)`` in ``N`` dims.

        Nodes whose product weight is below ``prune * max_weight`` are
        dropped; ``prune=0`` keeps the full ``J**N`` grid.
        """
        key = (self.nodes.tobytes(), self.weights.tobytes(), int(N), float(prune))
        if key not in _PRODUCTS:
            idx = np.array(list(itertools.product(range(self.J), repeat=N)), dtype=np.int64)
            xi = self.nodes[idx]
            w = np.prod(self.weights[idx], axis=1)
            if prune > 0:
                keep = w > prune * w.max()
                xi, w = xi[keep], w[keep]
            xi = np.ascontiguousarray(xi)
            xi.setflags(write=False)
            w.setflags(write=False)
            _PRODUCTS[key] = (xi, w)
        return _PRODUCTS[key]


_PRODUCTS = {}


_RULES = {}


def hermite_rule(J=10):
    """Gauss-Hermite nodes and weights via the Golub-Welsch eigenproblem."""
    if not isinstance(J, (int, np.integer)) or J < 1 or J > 100:
        raise ValueError(f"unsupported quadrature order J={J!r}")
    if J not in _RULES:
        off = np.sqrt(np.arange(1, J) / 2.0)
        x, v = eigh_tridiagonal(np.zeros(J), off)
        w = np.sqrt(np.pi) * v[0, :] ** 2
        # Symmetrize to remove eigen-solver asymmetry at rounding level.
        x = 0.5 * (x - x[::-1])
        w = 0.5 * (w + w[::-1])
        w *= np.sqrt(np.pi) / w.sum()
        _RULES[J] = QuadratureRule(x, w)
    return _RULES[J]


@dataclass(frozen=True)
class GmiEstimate:
    """A rate estimate in bit per N-dimensional symbol."""

    value: float
    method: str
    n: int
    std_error: float | None = None

    def __float__(self):
        return float(self.value)


def _orbit_representatives(c):
    """Indices and multiplicities of one point per sign-symmetry orbit."""
    key = "gh_orbits"
    if key not in c._cache:
        group = sign_symmetry(c)
        seen = np.zeros(c.M, dtype=bool)
        reps, mult = [], []
        for i in range(c.M):
            if seen[i]:
                continue
            orbit = {int(perm[i]) for _, perm in group}
            for j in orbit:
                seen[j] = True
            reps.append(i)
            mult.append(len(orbit))
        c._cache[key] = (np.array(reps), np.array(mult, dtype=float))
    return c._cache[key]


def _gh_point(i, points, labels, sigma, xi, W, want_grad):
    """Quadrature sum and gradient contributions for transmitted point ``i``.

    Returns ``(t, gi, gp, ds)``: ``t`` is the weighted sum over nodes of
    ``sum_k ln(S_all / S_k)``, ``gi`` its derivative w.r.t. point ``i``,
    ``gp`` w.r.t. every point as the "other" end of a difference, and ``ds``
    the derivative w.r.t. ``sigma``.
    """
    s2 = sigma * sigma
    m = labels.shape[1]
    d = points[i] - points
    dd = np.einsum("ij,ij->i", d, d)
    a = xi @ d.T
    a *= -2.0 / sigma
    a -= dd / s2
    a -= a.max(axis=1, keepdims=True)
    e = np.exp(a, out=a)
    s_all = e.sum(axis=1)
    same = (labels == labels[i]).astype(float)
    s_k = e @ same
    f = m * np.log(s_all) - np.log(s_k).sum(axis=1)
    t = float(W @ f)
    if not want_grad:
        return t, None, None, None
    C = e
    C *= m / s_all[:, None] - (1.0 / s_k) @ same.T
    C *= W[:, None]
    cbar = C.sum(axis=0)
    cx = C.T @ xi
    k = -2.0 / s2
    gi = k * (cbar @ d)
    gp = -k * (cbar[:, None] * d + sigma * cx)
    ds = 2.0 * (cbar @ dd) / (s2 * sigma) + 2.0 * np.einsum("ij,ij->", cx, d) / s2
    return t, gi, gp, ds


def gmi_gh_value_and_grad(points, labels, sigma2_z, rule=None, reps=None, mult=None,
                          want_grad=True, prune=0.0, n_jobs=1):
    """Gauss-Hermite GMI and its analytic derivatives.

    Parameters
    ----------
    points : (M, N) array
    labels : (M, m) array of bits
    sigma2_z : float
        Noise variance per complex dimension.
    reps, mult : arrays, optional
        Transmitted points to evaluate and their multiplicities. Defaults to
        all points with multiplicity 1. Passing orbit representatives of a
        symmetric constellation gives the exact value, and a gradient that is
        exact along symmetry-preserving directions.

    Returns
    -------
    gmi : float
    grad : (M, N) array or None
        ``dGMI/dpoints``.
    dsigma2 : float or None
        ``dGMI/dsigma2_z``.
    """
    points = np.ascontiguousarray(points, dtype=float)
    labels = np.asarray(labels)
    M, N = points.shape
    m = labels.shape[1]
    rule = hermite_rule(10) if rule is None else rule
    xi, W = rule.product(N, prune)
    if reps is None:
        reps = np.arange(M)
        mult = np.ones(M)
    sigma = float(np.sqrt(sigma2_z))

    def work(i):
        return _gh_point(i, points, labels, sigma, xi, W, want_grad)

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            parts = list(ex.map(work, reps))
    else:
        parts = [work(i) for i in reps]

    norm = 1.0 / (M * np.pi ** (N / 2) * LOG2)
    # Fixed-order reduction keeps results independent of n_jobs.
    total = 0.0
    for w, (t, _, _, _) in zip(mult, parts):
        total += w * t
    gmi = m - norm * total
    if not want_grad:
        return gmi, None, None
    grad = np.zeros_like(points)
    dsig = 0.0
    for i, w, (_, gi, gp, ds) in zip(reps, mult, parts):
        grad[i] += w * gi
        grad += w * gp
        dsig += w * ds
    grad *= -norm
    # d/dsigma2 = d/dsigma / (2 sigma)
    dsigma2 = -norm * dsig / (2.0 * sigma)
    return gmi, grad, dsigma2


def gmi_gh(c, law, rule=None, J=10, use_symmetry=True, prune=0.0, n_jobs=1):
    """GMI of ``c`` under ``law`` by ``N``-fold Gauss-Hermite quadrature.

    When the labeled constellation is invariant under coordinate sign flips
    (e.g. orthant-symmetric or Gray PM-QAM formats), only one transmitted
    point per orbit is integrated.
    """
    if c.N % 2:
        raise ValueError("Gauss-Hermite GMI needs an even number of real dimensions")
    if rule is None:
        if J < 6:
            raise ValueError(f"J={J} is too small (need J >= 6)")
        rule = hermite_rule(J)
    elif rule.J < 6:
        raise ValueError(f"J={rule.J} is too small (need J >= 6)")
    reps = mult = None
    if use_symmetry:
        reps, mult = _orbit_representatives(c)
    val, _, _ = gmi_gh_value_and_grad(
        c.points, c.labels, law.sigma2_z, rule, reps, mult, want_grad=False,
        prune=prune, n_jobs=n_jobs,
    )
    return GmiEstimate(float(np.clip(val, 0.0, c.m)), "gauss-hermite", rule.J)


# --- Monte-Carlo -------------------------------------------------------------

def _metric_tables(points, labels, sigma2):
    """Chunk-independent factors of the per-sample metric."""
    # Bias as an extra row so one matmul against [y, 1] gives the exponents.
    wb = np.vstack([2.0 * points.T, -np.sum(points**2, axis=1)]) / sigma2
    # Last column sums all points, the others the points with bit k set.
    lab1 = np.hstack([labels.astype(float), np.ones((len(points), 1))])
    return wb, lab1, labels.astype(bool)


def _log_metrics(tables, idx, y, sigma2, symbolwise):
    """Per-sample ``sum_k log2(S_all/S_k)`` (or ``log2(S_all/q_tx)``).

    Exponents are ``(||y||^2 - ||y - s||^2) / sigma2``; the common factor
    ``exp(-||y||^2/sigma2)`` cancels in every ratio and is only applied
    (as a row-wise maximum shift) when needed to avoid overflow.
    """
    wb, lab1, bits = tables
    ya = np.empty((len(y), y.shape[1] + 1))
    ya[:, :-1] = y
    ya[:, -1] = 1.0
    a = ya @ wb
    yy = np.einsum("ij,ij->i", y, y) / sigma2
    if yy.max() > 600.0:
        a -= a.max(axis=1, keepdims=True)
    if symbolwise:
        a_tx = a[np.arange(len(idx)), idx].copy()
    e = np.exp(a, out=a)
    if symbolwise:
        return (np.log(e.sum(axis=1)) - a_tx) / LOG2
    sums = e @ lab1
    s_all = sums[:, -1]
    s1 = sums[:, :-1]
    s_k = np.where(bits[idx], s1, s_all[:, None] - s1)
    return (s1.shape[1] * np.log(s_all) - np.sum(np.log(s_k), axis=1)) / LOG2


def _metric_terms(c, idx, y, sigma2, symbolwise, use_product=True, chunk=None):
    if use_product and c.is_product:
        out = np.zeros(len(idx))
        rest = idx
        col = 0
        sizes = [f.M for f in c.factors]
        # Product index is row-major over the factors.
        strides = np.cumprod([1] + sizes[::-1])[::-1][1:]
        for f, stride in zip(c.factors, strides):
            fi = (rest // stride) % f.M
            out += _metric_terms(f, fi, y[:, col:col + f.N], sigma2, symbolwise, True, chunk)
            col += f.N
        return out
    return _chunked_terms(c.points, c.labels, idx, y, sigma2, symbolwise, chunk)


def _chunked_terms(points, labels, idx, y, sigma2, symbolwise, chunk=None):
    if chunk is None:
        # ~1 MB working set per chunk.
        chunk = max(1024, (1 << 17) // len(points))
    tables = _metric_tables(points, labels, sigma2)
    out = np.empty(len(idx))
    for s in range(0, len(idx), chunk):
        out[s:s + chunk] = _log_metrics(tables, idx[s:s + chunk], y[s:s + chunk], sigma2,
                                        symbolwise)
    return out


def _batch_estimate(c, terms_fn, n_samples, seed, base, n_jobs=1):
    """Split into ``MC_BATCHES`` independently seeded batches."""
    if n_samples < 10_000:
        raise ValueError("Monte-Carlo estimates need at least 1e4 samples")
    seqs = np.random.SeedSequence(seed).spawn(MC_BATCHES)
    sizes = np.full(MC_BATCHES, n_samples // MC_BATCHES)
    sizes[: n_samples % MC_BATCHES] += 1

    def work(args):
        ss, n = args
        return float(np.mean(terms_fn(np.random.default_rng(ss), int(n))))

    if n_jobs and n_jobs > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as ex:
            means = np.array(list(ex.map(work, zip(seqs, sizes))))
    else:
        means = np.array([work(a) for a in zip(seqs, sizes)])
    val = base - float(np.sum(means * sizes) / n_samples)
    se = float(np.std(means, ddof=1) / np.sqrt(MC_BATCHES))
    return val, se


def _sample(c, law, rng, n):
    idx = rng.integers(0, c.M, size=n)
    y = c.points[idx] + rng.standard_normal((n, c.N)) * np.sqrt(law.sigma2_z / 2)
    return idx, y


def gmi_mc(c, law, n_samples=1_000_000, seed=0, n_jobs=1, use_product=True):
    """Monte-Carlo GMI with a standard error from 20 batches."""

    def terms(rng, n):
        idx, y = _sample(c, law, rng, n)
        return _metric_terms(c, idx, y, law.sigma2_z, False, use_product)

    val, se = _batch_estimate(c, terms, n_samples, seed, c.m, n_jobs)
    return GmiEstimate(float(np.clip(val, 0.0, c.m)), "monte-carlo", n_samples, se)


def mi_mc(c, law, n_samples=1_000_000, seed=0, n_jobs=1, use_product=True):
    """Monte-Carlo symbol-wise mutual information, as a :class:`GmiEstimate`."""

    def terms(rng, n):
        idx, y = _sample(c, law, rng, n)
        return _metric_terms(c, idx, y, law.sigma2_z, True, use_product)

    val, se = _batch_estimate(c, terms, n_samples, seed, np.log2(c.M), n_jobs)
    return GmiEstimate(float(np.clip(val, 0.0, c.m)), "monte-carlo-mi", n_samples, se)


def gmi_from_samples(c, tx_idx, y, law):
    """GMI estimate from transmitted indices and received vectors."""
    tx_idx = np.asarray(tx_idx)
    y = np.asarray(y, dtype=float).reshape(len(tx_idx), c.N)
    t = _metric_terms(c, tx_idx, y, law.sigma2_z, False)
    return float(c.m - np.mean(t))


def mi_from_samples(c, tx_idx, y, law):
    tx_idx = np.asarray(tx_idx)
    y = np.asarray(y, dtype=float).reshape(len(tx_idx), c.N)
    t = _metric_terms(c, tx_idx, y, law.sigma2_z, True)
    return float(np.log2(c.M) - np.mean(t))


# --- Demapping ---------------------------------------------------------------

def _sqdist(y, points):
    return np.sum((y[:, None, :] - points[None, :, :]) ** 2, axis=2)


def _separable(c):
    """Per-dimension level/bit tables when every label bit depends on a
    single coordinate of a full grid, else ``None``."""
    key = "separable"
    if key in c._cache:
        return c._cache[key]
    result = None
    levels = [np.unique(c.points[:, d]) for d in range(c.N)]
    if np.prod([lv.size for lv in levels]) == c.M:
        owner = []
        tables = []
        for k in range(c.m):
            found = None
            for d in range(c.N):
                lv, inv = np.unique(c.points[:, d], return_inverse=True)
                tab = np.full(lv.size, -1)
                ok = True
                for li, b in zip(inv, c.labels[:, k]):
                    if tab[li] == -1:
                        tab[li] = b
                    elif tab[li] != b:
                        ok = False
                        break
                if ok:
                    found = (d, lv, tab)
                    break
            if found is None:
                break
            owner.append(found)
        else:
            tables = owner
            result = tables
    c._cache[key] = result
    return result


def maxlog_llr_full(c, y, law):
    """Max-log LLRs by exhaustive search over all ``M`` points."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    scale = c.N / law.sigma2_z
    out = np.empty((y.shape[0], c.m))
    for s in range(0, y.shape[0], 4096):
        D = _sqdist(y[s:s + 4096], c.points)
        for k in range(c.m):
            b = c.labels[:, k].astype(bool)
            out[s:s + 4096, k] = scale * (D[:, ~b].min(axis=1) - D[:, b].min(axis=1))
    return out


def _maxlog_separable(c, y, law, tables):
    scale = c.N / law.sigma2_z
    out = np.empty((y.shape[0], c.m))
    for k, (d, lv, tab) in enumerate(tables):
        dist = (y[:, d:d + 1] - lv[None, :]) ** 2
        out[:, k] = scale * (dist[:, tab == 0].min(axis=1) - dist[:, tab == 1].min(axis=1))
    return out


def maxlog_llr(c, y, law):
    """Max-log LLRs ``(N/sigma2_z) * (min_{b=0} d^2 - min_{b=1} d^2)``.

    Positive values favour bit 1. ``y`` may be one vector or an ``(n, N)``
    array; the output has a matching leading shape. Grid constellations whose
    bits each depend on one coordinate (Gray square QAM and its products)
    use the equivalent per-dimension computation.
    """
    y_arr = np.asarray(y, dtype=float)
    single = y_arr.ndim == 1
    y2 = np.atleast_2d(y_arr)
    if y2.shape[1] != c.N:
        raise ValueError(f"received vectors must have {c.N} coordinates")
    tables = _separable(c)
    if tables is not None:
        out = _maxlog_separable(c, y2, law, tables)
    else:
        out = maxlog_llr_full(c, y2, law)
    return out[0] if single else out


def hard_decide(c, y):
    """Index of the nearest point; ties go to the lowest index."""
    y_arr = np.asarray(y, dtype=float)
    single = y_arr.ndim == 1
    y2 = np.atleast_2d(y_arr)
    out = np.empty(y2.shape[0], dtype=np.int64)
    for s in range(0, y2.shape[0], 4096):
        out[s:s + 4096] = np.argmin(_sqdist(y2[s:s + 4096], c.points), axis=1)
    return int(out[0]) if single else out
