"""Gradient-based geometric shaping of labeled constellations.

Coordinates are optimized by Adam ascent on the Gauss-Hermite GMI, with the
mean symbol energy projected back to its target after every step. Labels are
never changed: they come from the initial constellation (or, in
orthant-symmetric mode, from its first-orthant labels plus sign bits).

Two objectives are supported:

``awgn-gmi``
    GMI at a fixed SNR.
``nli-gmi``
    GMI at the optimum effective SNR of a fiber link whose nonlinear
    interference coefficient is predicted from the constellation moments (see
    :mod:`mdshaping.nli`).
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._io import write_csv
from .airs import gmi_gh, gmi_gh_value_and_grad, hermite_rule, law_from_snr
from .constellation import (
    DEFAULT_POWER_PER_2D,
    LabeledConstellation,
    _sign_patterns,
    expand_orthant,
    first_orthant,
    metrics,
)

__all__ = [
    "ShapingProblem",
    "OptimizerConfig",
    "OptimizationTrace",
    "optimize",
    "gradient",
    "objective",
    "required_snr",
    "bisect_snr",
    "write_trace_csv",
    "OS_EPS",
]

OBJECTIVES = ("awgn-gmi", "nli-gmi")
CONSTRAINTS = ("none", "orthant-symmetry")
#: Lower bound on first-orthant coordinates.
OS_EPS = 1e-6


@dataclass(frozen=True)
class ShapingProblem:
    """What to maximize and under which constraint.

    Parameters
    ----------
    N, m : int
        Real dimensions and bits per symbol.
    objective : {"awgn-gmi", "nli-gmi"}
    snr_db : float, optional
        Operating SNR for ``awgn-gmi``.
    constraint : {"none", "orthant-symmetry"}
    power : float, optional
        Mean symbol energy; defaults to 1 per complex dimension.
    sigma2_ase : float, optional
        ASE variance (W) for ``nli-gmi``.
    surrogate : EtaSurrogate, optional
        Calibrated NLI-coefficient model for ``nli-gmi``.
    link : FiberLink, optional
        When given, the surrogate must have been calibrated on this link.
    """

    N: int
    m: int
    objective: str = "awgn-gmi"
    snr_db: float | None = None
    constraint: str = "none"
    power: float | None = None
    sigma2_ase: float | None = None
    surrogate: object = None
    link: object = None

    def __post_init__(self):
        if self.objective not in OBJECTIVES:
            raise ValueError(f"objective must be one of {OBJECTIVES}, got {self.objective!r}")
        if self.constraint not in CONSTRAINTS:
            raise ValueError(f"constraint must be one of {CONSTRAINTS}, got {self.constraint!r}")
        if self.N < 1 or self.m < 1:
            raise ValueError("N and m must be positive")
        if self.power is None:
            object.__setattr__(self, "power", DEFAULT_POWER_PER_2D * self.N / 2)
        if not self.power > 0:
            raise ValueError("power must be positive")
        if self.objective == "awgn-gmi":
            if self.snr_db is None or not np.isfinite(self.snr_db):
                raise ValueError("awgn-gmi needs a finite snr_db")
        else:
            if self.surrogate is None or self.sigma2_ase is None:
                raise ValueError("nli-gmi needs sigma2_ase and a calibrated surrogate")
            if not self.sigma2_ase > 0:
                raise ValueError("sigma2_ase must be positive")
            if self.link is not None:
                self.surrogate.check_link(self.link)
        if self.constraint == "orthant-symmetry" and self.m < self.N:
            raise ValueError("orthant symmetry needs m >= N")

    @property
    def sigma2_z(self):
        """Noise variance per complex dimension for ``awgn-gmi``."""
        snr = 10.0 ** (self.snr_db / 10.0)
        return self.power / (self.N / 2 * snr)


@dataclass(frozen=True)
class OptimizerConfig:
    """Adam settings, restarts and stopping rule.

    ``patience`` iterations without a best-objective improvement of at least
    ``tol`` bit end a restart. Restart 0 starts from the given initial
    constellation; the others add Gaussian jitter with standard deviation
    ``jitter`` times the coordinate RMS.
    """

    learning_rate: float = 0.01
    max_iter: int = 2000
    restarts: int = 5
    seed: int = 0
    tol: float = 1e-4
    patience: int = 50
    gradient: str = "analytic"
    h: float = 1e-4
    jitter: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    J: int = 10
    prune: float = 0.0
    n_jobs: int = 1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be positive")
        if self.max_iter < 1 or self.restarts < 1 or self.patience < 1:
            raise ValueError("max_iter, restarts and patience must be >= 1")
        if self.gradient not in ("analytic", "central-difference"):
            raise ValueError("gradient must be 'analytic' or 'central-difference'")
        if self.gradient == "central-difference" and not self.h > 0:
            raise ValueError("finite-difference step h must be positive")
        if self.tol < 0 or self.jitter < 0:
            raise ValueError("tol and jitter must be non-negative")


TRACE_COLUMNS = (
    "iteration",
    "objective_bit",
    "best_objective_bit",
    "effective_snr_db",
    "papr_db",
    "phi2_mean",
    "phi4",
    "psi",
    "eta_hat_per_w2",
)


@dataclass
class OptimizationTrace:
    """Per-iteration record of the winning restart.

    ``rows`` holds one tuple per iteration in :data:`TRACE_COLUMNS` order;
    ``restarts`` summarizes every restart (best objective, iterations, status).
    """

    rows: list = field(default_factory=list)
    restarts: list = field(default_factory=list)
    best_restart: int = 0

    columns = TRACE_COLUMNS

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        j = TRACE_COLUMNS.index(name)
        return np.array([r[j] for r in self.rows], dtype=float)

    @property
    def objective(self):
        return self.column("objective_bit")

    @property
    def best_objective(self):
        return self.column("best_objective_bit")


def write_trace_csv(trace, path):
    """Write ``trace`` as CSV with a header row (atomic replace)."""
    write_csv(path, TRACE_COLUMNS, [[r[0]] + [float(v) for v in r[1:]] for r in trace.rows])


# --- Parametrizations --------------------------------------------------------

class _Free:
    """All coordinates free; the objective sees ``theta`` scaled to power."""

    def __init__(self, c, power):
        self.labels = c.labels
        self.power = power
        self.reps = None
        self.mult = None
        self.factors = ()

    def expand(self, theta):
        return theta

    def pullback(self, G):
        return G

    def initial(self, c):
        return np.array(c.points, dtype=float)

    def clamp(self, theta):
        return theta

    def constellation(self, theta, name):
        return LabeledConstellation(theta, self.labels, power=self.power, name=name)


class _Orthant:
    """First-orthant coordinates free; full constellation re-expanded."""

    def __init__(self, c, power):
        s1 = first_orthant(c) if isinstance(c, LabeledConstellation) else c
        self.N = s1.N
        self.K = s1.K
        ref = expand_orthant(s1)
        self.labels = ref.labels
        self.signs = 1.0 - 2.0 * _sign_patterns(self.N)
        self.power = power
        self.s1_labels = s1.labels
        # Every sign orbit has exactly 2**N members: evaluate one per orbit.
        self.reps = np.arange(self.K)
        self.mult = np.full(self.K, float(2**self.N))

    def expand(self, theta):
        return (self.signs[:, None, :] * theta[None, :, :]).reshape(-1, self.N)

    def pullback(self, G):
        G = G.reshape(2**self.N, self.K, self.N)
        return np.einsum("pn,pkn->kn", self.signs, G)

    def initial(self, c):
        s1 = first_orthant(c) if isinstance(c, LabeledConstellation) else c
        return np.array(s1.points, dtype=float)

    def clamp(self, theta):
        return np.maximum(np.abs(theta), OS_EPS)

    def constellation(self, theta, name):
        pts = self.expand(theta)
        return LabeledConstellation(pts, self.labels, power=self.power, name=name)


def _param(problem, init):
    if problem.constraint == "orthant-symmetry":
        return _Orthant(init, problem.power)
    if not isinstance(init, LabeledConstellation):
        raise TypeError("init must be a LabeledConstellation")
    return _Free(init, problem.power)


def _scale(theta, power, K_total):
    """Factor bringing the expanded constellation to mean energy ``power``."""
    return math.sqrt(power * K_total / float(np.sum(theta * theta)))


# --- Objective ---------------------------------------------------------------

def _raw_objective(problem, points, labels, reps, mult, want_grad, rule, prune):
    """Objective at already-normalized ``points`` and its point gradient."""
    info = {}
    if problem.objective == "awgn-gmi":
        val, G, _ = gmi_gh_value_and_grad(
            points, labels, problem.sigma2_z, rule, reps, mult, want_grad, prune
        )
        info["effective_snr_db"] = problem.snr_db
    else:
        from .nli import nli_value_and_grad

        val, G, info = nli_value_and_grad(
            points, labels, problem.sigma2_ase, problem.surrogate, rule, reps, mult,
            want_grad, prune,
        )
    return val, G, info


class _Evaluator:
    """Objective of the power-normalized parametrization and its gradient."""

    def __init__(self, problem, par, cfg):
        self.problem = problem
        self.par = par
        self.cfg = cfg
        self.rule = hermite_rule(cfg.J)

    def _normalized(self, theta):
        r = _scale(theta, self.problem.power, theta.shape[0])
        return r, self.par.expand(theta * r)

    def value(self, theta):
        _, pts = self._normalized(theta)
        v, _, info = _raw_objective(self.problem, pts, self.par.labels, self.par.reps,
                                    self.par.mult, False, self.rule, self.cfg.prune)
        return v, info

    def value_and_grad(self, theta):
        if self.cfg.gradient == "central-difference":
            v, info = self.value(theta)
            return v, self.fd_grad(theta), info
        r, pts = self._normalized(theta)
        v, G, info = _raw_objective(self.problem, pts, self.par.labels, self.par.reps,
                                    self.par.mult, True, self.rule, self.cfg.prune)
        g = self.par.pullback(G)
        # Chain rule through theta -> r(theta) * theta.
        g = r * (g - (np.sum(g * theta) / np.sum(theta * theta)) * theta)
        return v, g, info

    def fd_grad(self, theta):
        h = self.cfg.h
        g = np.zeros_like(theta)
        for idx in np.ndindex(theta.shape):
            tp = theta.copy()
            tp[idx] += h
            tm = theta.copy()
            tm[idx] -= h
            g[idx] = (self.value(tp)[0] - self.value(tm)[0]) / (2 * h)
        return g


def objective(problem, c, J=10, prune=0.0):
    """Objective value of constellation ``c`` (renormalized to the problem power)."""
    par = _param(problem, c)
    ev = _Evaluator(problem, par, OptimizerConfig(J=J, prune=prune))
    return float(ev.value(par.initial(c))[0])


def gradient(problem, c, method="analytic", h=1e-4, J=10):
    """Gradient of the power-normalized objective at ``c``.

    Parameters
    ----------
    problem : ShapingProblem
    c : LabeledConstellation
    method : {"analytic", "central-difference"}
        Closed-form differentiation of the quadrature sum, or central
        differences with step ``h`` on every free coordinate.

    Returns
    -------
    ndarray
        ``(M, N)`` for unconstrained problems, ``(M / 2**N, N)`` (first-orthant
        coordinates) under orthant symmetry. The gradient has no component
        along the global scaling direction.
    """
    par = _param(problem, c)
    cfg = OptimizerConfig(gradient=method, h=h, J=J)
    theta = par.initial(c)
    theta *= _scale(theta, problem.power, theta.shape[0])
    _, g, _ = _Evaluator(problem, par, cfg).value_and_grad(theta)
    if not np.all(np.isfinite(g)):
        raise FloatingPointError("non-finite gradient")
    return g


# --- Optimization -------------------------------------------------------------

def _snapshot(c, info):
    mt = metrics(c)
    return (
        info.get("effective_snr_db", float("nan")),
        10 * math.log10(mt.papr),
        mt.phi2_mean,
        mt.phi4,
        mt.psi,
        info.get("eta_hat", float("nan")),
    )


def _run_restart(ev, theta0, cfg, name):
    par = ev.par
    power = ev.problem.power
    theta = par.clamp(theta0.copy())
    theta *= _scale(theta, power, theta.shape[0])
    theta = par.clamp(theta)
    m1 = np.zeros_like(theta)
    m2 = np.zeros_like(theta)
    rows = []
    best = -np.inf
    best_theta = theta.copy()
    last_gain_it = 0
    ref = -np.inf
    status = "max-iter"
    for it in range(cfg.max_iter):
        try:
            v, g, info = ev.value_and_grad(theta)
        except (FloatingPointError, ValueError) as exc:
            status = f"failed: {exc}"
            break
        if not (np.isfinite(v) and np.all(np.isfinite(g))):
            status = "failed: non-finite objective or gradient"
            break
        if v > best:
            best = v
            best_theta = theta.copy()
        if best >= ref + cfg.tol:
            ref = best
            last_gain_it = it
        c = par.constellation(theta, name)
        rows.append((it, v, best) + _snapshot(c, info))
        if it - last_gain_it >= cfg.patience:
            status = "converged"
            break
        if it == cfg.max_iter - 1:
            break
        t = it + 1
        m1 = cfg.beta1 * m1 + (1 - cfg.beta1) * g
        m2 = cfg.beta2 * m2 + (1 - cfg.beta2) * g * g
        mh = m1 / (1 - cfg.beta1**t)
        vh = m2 / (1 - cfg.beta2**t)
        theta = theta + cfg.learning_rate * mh / (np.sqrt(vh) + cfg.eps)
        theta *= _scale(theta, power, theta.shape[0])
        theta = par.clamp(theta)
    return best, best_theta, rows, status


def optimize(problem, init, cfg=None, name=None):
    """Maximize the problem objective starting from ``init``.

    Parameters
    ----------
    problem : ShapingProblem
    init : LabeledConstellation or FirstOrthantSet
        Initial constellation. Its labels are kept. Under orthant symmetry a
        constellation must be in expanded orthant-symmetric form.
    cfg : OptimizerConfig, optional
    name : str, optional
        Name of the returned constellation.

    Returns
    -------
    best : LabeledConstellation
        Best iterate over all restarts, normalized to ``problem.power``.
    trace : OptimizationTrace
        Iteration history of the winning restart.
    """
    cfg = cfg or OptimizerConfig()
    if init.N != problem.N:
        raise ValueError(f"init has N={init.N}, problem has N={problem.N}")
    m_init = init.m if isinstance(init, LabeledConstellation) else init.labels.shape[1] + init.N
    if m_init != problem.m:
        raise ValueError(f"init has m={m_init}, problem has m={problem.m}")
    par = _param(problem, init)
    ev = _Evaluator(problem, par, cfg)
    theta0 = par.initial(init)
    rms = float(np.sqrt(np.mean(theta0**2)))
    seqs = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
    starts = [theta0]
    for r in range(1, cfg.restarts):
        rng = np.random.default_rng(seqs[r])
        starts.append(theta0 + cfg.jitter * rms * rng.standard_normal(theta0.shape))
    name = name or (f"OS{2**problem.m}" if problem.constraint == "orthant-symmetry"
                    else f"GS{2**problem.m}")

    def work(th):
        return _run_restart(ev, th, cfg, name)

    if cfg.n_jobs > 1 and cfg.restarts > 1:
        with ThreadPoolExecutor(max_workers=cfg.n_jobs) as ex:
            results = list(ex.map(work, starts))
    else:
        results = [work(th) for th in starts]

    trace = OptimizationTrace()
    best_r = None
    for r, (best, _, rows, status) in enumerate(results):
        trace.restarts.append({"restart": r, "best_objective": best,
                               "iterations": len(rows), "status": status})
        if np.isfinite(best) and (best_r is None or best > results[best_r][0]):
            best_r = r
    if best_r is None:
        raise RuntimeError("every restart failed: "
                           + "; ".join(x["status"] for x in trace.restarts))
    trace.best_restart = best_r
    trace.rows = results[best_r][2]
    theta = results[best_r][1]
    return par.constellation(theta, name), trace


# --- Required SNR ---------------------------------------------------------------

def bisect_snr(rate_fn, target, bracket=(-10.0, 40.0), tol=0.01):
    """Smallest SNR (dB) at which the nondecreasing ``rate_fn`` reaches ``target``.

    Bisection stops when the bracket is narrower than ``tol`` dB and returns
    its upper end, so ``rate_fn(result) >= target``.
    """
    lo, hi = map(float, bracket)
    if not lo < hi:
        raise ValueError("bracket must satisfy lo < hi")
    if rate_fn(hi) < target:
        raise ValueError(f"target {target} not reached at {hi} dB")
    if rate_fn(lo) >= target:
        raise ValueError(f"target {target} already reached at {lo} dB")
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if rate_fn(mid) >= target:
            hi = mid
        else:
            lo = mid
    return hi


def required_snr(c, target_gmi, bracket=(-10.0, 40.0), tol=0.01, J=10):
    """Minimum SNR in dB for which the Gauss-Hermite GMI of ``c`` reaches ``target_gmi``."""
    if not target_gmi < c.m:
        raise ValueError("target GMI must be below m")
    rule = hermite_rule(J)
    return bisect_snr(lambda s: gmi_gh(c, law_from_snr(c, s), rule).value,
                      target_gmi, bracket, tol)
