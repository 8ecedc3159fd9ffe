"""Modulation-dependent nonlinear interference (NLI).

The effective SNR at launch power ``P`` (W, both polarizations) is

    Gamma = P / (sigma2_ase + eta * P**3),

where ``sigma2_ase`` is the accumulated ASE variance referenced to the symbol
rate and ``eta`` the NLI power coefficient of the link and modulation format.
Its maximum over ``P`` has a closed form, so a format can be scored at its own
optimum launch power without a power parameter.

``eta`` is measured from split-step power sweeps (:func:`fit_eta`) and
predicted for new formats by :class:`EtaSurrogate`, an affine model in the
kurtosis features ``Phi4 - 1`` and ``mean(Phi2) - 1``.
"""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from ._io import atomic_write_text, format_key_values, read_key_values
from ._validation import check_1d, check_constellations
from .airs import _orbit_representatives, gmi_gh_value_and_grad, hermite_rule

__all__ = [
    "NliState",
    "effective_snr",
    "optimal_launch_power",
    "gamma_opt",
    "EtaFit",
    "fit_eta",
    "EtaFitter",
    "nli_from_results",
    "surrogate_features",
    "EtaSurrogate",
    "StaleCalibrationError",
    "measure_eta",
    "calibrate_surrogate",
    "ase_sigma2",
    "nli_objective",
    "nli_value_and_grad",
]

_KOPT = 2.0 / (3.0 * 2.0 ** (1.0 / 3.0))


@dataclass(frozen=True)
class NliState:
    """ASE variance, per-polarization NLI coefficients and launch power.

    ``sigma2_ase`` and ``power`` are in W; ``eta_x`` and ``eta_y`` in 1/W^2.
    """

    sigma2_ase: float
    eta_x: float
    eta_y: float
    power: float

    def __post_init__(self):
        if not self.sigma2_ase > 0:
            raise ValueError("sigma2_ase must be positive")
        if not self.eta_x + self.eta_y >= 0:
            raise ValueError("eta_x + eta_y must be non-negative")
        if not self.power >= 0:
            raise ValueError("power must be non-negative")

    @property
    def eta(self):
        return self.eta_x + self.eta_y

    @property
    def sigma2_nli(self):
        return self.eta * self.power**3

    @property
    def p_opt(self):
        return optimal_launch_power(self.sigma2_ase, self.eta)

    @property
    def gamma_opt(self):
        return gamma_opt(self.sigma2_ase, self.eta)


def effective_snr(state):
    """Linear effective SNR ``P / (sigma2_ase + eta P^3)``."""
    return state.power / (state.sigma2_ase + state.eta * state.power**3)


def _check_opt_args(sigma2_ase, eta_total):
    if not sigma2_ase > 0:
        raise ValueError("sigma2_ase must be positive")
    if not eta_total > 0:
        raise ValueError("eta_total must be positive (no finite optimum otherwise)")


def optimal_launch_power(sigma2_ase, eta_total):
    """Launch power maximizing the effective SNR, ``(sigma2_ase / (2 eta))**(1/3)``."""
    _check_opt_args(sigma2_ase, eta_total)
    return (sigma2_ase / (2.0 * eta_total)) ** (1.0 / 3.0)


def gamma_opt(sigma2_ase, eta_total):
    """Effective SNR at the optimal launch power (linear)."""
    _check_opt_args(sigma2_ase, eta_total)
    return _KOPT / (sigma2_ase ** (2.0 / 3.0) * eta_total ** (1.0 / 3.0))


# --- Fitting eta ---------------------------------------------------------------

@dataclass(frozen=True)
class EtaFit:
    """Result of a cubic-law fit. ``n_floored`` counts non-positive samples
    that were dropped (NLI variance floored at zero)."""

    eta: float
    r2: float
    n_floored: int = 0


def fit_eta(powers_w, sigma2_nli):
    """Fit ``sigma2_nli = eta * P**3`` by least squares in the log domain.

    Parameters
    ----------
    powers_w : array_like
        Launch powers in W; at least 3 points spanning at least 6 dB.
    sigma2_nli : array_like
        Measured NLI variances in W.

    Returns
    -------
    EtaFit
        ``r2`` is the coefficient of determination of ``log sigma2_nli``.
    """
    P = check_1d(powers_w, "powers_w")
    s = check_1d(sigma2_nli, "sigma2_nli")
    if P.shape != s.shape:
        raise ValueError("powers_w and sigma2_nli must have the same length")
    if np.any(P <= 0):
        raise ValueError("powers must be positive")
    bad = ~(s > 0)
    if bad.any():
        warnings.warn(f"{int(bad.sum())} non-positive NLI variance(s) floored at 0 and "
                      "left out of the fit", RuntimeWarning, stacklevel=2)
        P, s = P[~bad], s[~bad]
    if P.size < 3:
        raise ValueError("need at least 3 sweep points with positive NLI variance")
    if 10 * np.log10(P.max() / P.min()) < 6.0 - 1e-9:
        raise ValueError("sweep must span at least 6 dB of launch power")
    ly = np.log(s)
    resid0 = ly - 3.0 * np.log(P)
    log_eta = float(np.mean(resid0))
    res = resid0 - log_eta
    ss_tot = float(np.sum((ly - ly.mean()) ** 2))
    r2 = 1.0 - float(np.sum(res**2)) / ss_tot if ss_tot > 0 else 1.0
    return EtaFit(math.exp(log_eta), r2, int(bad.sum()))


def nli_from_results(results, sigma2_ase=0.0):
    """Launch powers (W) and NLI variances (W) from simulation results.

    The total noise variance ``P / Gamma`` minus the calibrated ASE share.
    """
    P = np.array([1e-3 * 10 ** (r.launch_power_dbm / 10) for r in results])
    G = np.array([r.effective_snr for r in results])
    return P, P / G - sigma2_ase


class EtaFitter(RegressorMixin, BaseEstimator):
    """Cubic NLI law as an estimator: ``fit(P, sigma2_nli)``, ``predict(P)``."""

    def fit(self, X, y):
        P = np.asarray(X, dtype=float).reshape(len(X), -1)[:, 0]
        fit = fit_eta(P, y)
        self.eta_ = fit.eta
        self.r2_ = fit.r2
        self.n_floored_ = fit.n_floored
        return self

    def predict(self, X):
        check_is_fitted(self, "eta_")
        P = np.asarray(X, dtype=float).reshape(len(X), -1)[:, 0]
        return self.eta_ * P**3


# --- Surrogate ------------------------------------------------------------------

class StaleCalibrationError(ValueError):
    """The surrogate was calibrated on a different link."""


def _phi_terms(points):
    """``Phi4``, mean ``Phi2`` and their gradients w.r.t. ``points``."""
    x = np.asarray(points, dtype=float)
    M, N = x.shape
    r2 = np.sum(x * x, axis=1)
    S2, S4 = r2.sum(), (r2 * r2).sum()
    phi4 = M * S4 / S2**2
    dphi4 = M * (4.0 * r2[:, None] * x / S2**2 - 4.0 * S4 * x / S2**3)
    nc = N // 2
    phi2 = 0.0
    dphi2 = np.zeros_like(x)
    for j in range(nc):
        xj = x[:, 2 * j:2 * j + 2]
        p = np.sum(xj * xj, axis=1)
        T2, T4 = p.sum(), (p * p).sum()
        phi2 += M * T4 / T2**2 / nc
        dphi2[:, 2 * j:2 * j + 2] = M * (4.0 * p[:, None] * xj / T2**2
                                         - 4.0 * T4 * xj / T2**3) / nc
    return phi4, phi2, dphi4, dphi2


def surrogate_features(c):
    """``(Phi4 - 1, mean(Phi2) - 1)`` of a constellation or a point array."""
    pts = c.points if hasattr(c, "points") else c
    phi4, phi2, _, _ = _phi_terms(pts)
    return np.array([phi4 - 1.0, phi2 - 1.0])


def _design(X):
    return np.column_stack([np.ones(len(X)), X])


class EtaSurrogate(BaseEstimator):
    """Affine NLI-coefficient model ``eta = c0 + c1 (Phi4 - 1) + c2 (mean Phi2 - 1)``.

    Parameters
    ----------
    link_fingerprint : str, optional
        Fingerprint of the link the calibration data came from. Used by
        :meth:`check_link`.

    Attributes
    ----------
    coef_ : ndarray of shape (3,)
        ``(c0, c1, c2)`` in 1/W^2.
    residuals_ : ndarray
        Relative fit residuals ``(eta_hat - eta) / eta`` per calibration format.
    """

    def __init__(self, link_fingerprint=None):
        self.link_fingerprint = link_fingerprint

    def _features(self, X):
        if hasattr(X, "__len__") and len(X) and hasattr(X[0], "points"):
            return np.array([surrogate_features(c) for c in check_constellations(X)])
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != 2:
            raise ValueError("features must have shape (n, 2)")
        return X

    def fit(self, X, y):
        """Least-squares calibration on constellations (or feature rows) ``X``
        and measured coefficients ``y``."""
        F = self._features(X)
        y = check_1d(y, "y")
        if len(y) != len(F):
            raise ValueError("X and y must have the same length")
        A = _design(F)
        if np.linalg.matrix_rank(A, tol=1e-9) < 3:
            raise ValueError("rank-deficient design: need formats with independent "
                             "(Phi4, Phi2) features")
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        if not coef[0] > 0:
            raise ValueError(f"calibration gave a non-positive floor c0={coef[0]:.4g}")
        self.coef_ = coef
        self.residuals_ = (A @ coef - y) / y
        self.n_formats_ = len(y)
        return self

    def predict(self, X):
        check_is_fitted(self, "coef_")
        return _design(self._features(X)) @ self.coef_

    def eta_and_grad(self, points):
        """Predicted ``eta`` and its gradient w.r.t. the constellation points."""
        check_is_fitted(self, "coef_")
        phi4, phi2, d4, d2 = _phi_terms(points)
        c0, c1, c2 = self.coef_
        return c0 + c1 * (phi4 - 1) + c2 * (phi2 - 1), c1 * d4 + c2 * d2

    def check_link(self, link):
        """Raise :class:`StaleCalibrationError` unless calibrated on ``link``."""
        fp = link if isinstance(link, str) else link.fingerprint()
        if self.link_fingerprint is None or self.link_fingerprint != fp:
            raise StaleCalibrationError(
                f"surrogate calibrated for link {self.link_fingerprint}, used with {fp}; "
                "recalibrate"
            )

    def save(self, path, extra=()):
        """Write coefficients, link fingerprint and residuals as ``key = value``."""
        check_is_fitted(self, "coef_")
        items = [("c0", float(self.coef_[0])), ("c1", float(self.coef_[1])),
                 ("c2", float(self.coef_[2])),
                 ("link_fingerprint", self.link_fingerprint or "none"),
                 ("n_formats", self.n_formats_)]
        items += [(f"residual_{i}", float(r)) for i, r in enumerate(self.residuals_)]
        items += list(extra)
        atomic_write_text(path, format_key_values(items, ["eta surrogate (1/W^2)"]))

    @classmethod
    def load(cls, path):
        kv = read_key_values(path)
        try:
            coef = np.array([float(kv["c0"]), float(kv["c1"]), float(kv["c2"])])
        except KeyError as exc:
            raise ValueError(f"{path}: missing key {exc}") from None
        fp = kv.get("link_fingerprint", "none")
        s = cls(None if fp == "none" else fp)
        if not coef[0] > 0:
            raise ValueError(f"{path}: c0 must be positive")
        s.coef_ = coef
        n = int(kv.get("n_formats", 0))
        s.n_formats_ = n
        s.residuals_ = np.array([float(kv[f"residual_{i}"]) for i in range(n)
                                 if f"residual_{i}" in kv])
        s.metadata_ = {k: v for k, v in kv.items()
                       if k not in ("c0", "c1", "c2", "link_fingerprint", "n_formats")
                       and not k.startswith("residual_")}
        return s


def ase_sigma2(link, tx):
    """Accumulated ASE variance (W, both polarizations) referenced to the symbol rate."""
    from .fibersim import ase_variance

    return 2.0 * link.n_spans * ase_variance(link, tx.symbol_rate)


def measure_eta(c, link, tx, powers_dbm, n_jobs=1, steps_per_span=None):
    """Fit ``eta`` for format ``c`` from an ASE-free split-step power sweep."""
    from .fibersim import power_sweep

    quiet = replace(link, amplifier="ideal" if link.amplifier != "none" else "none")
    res = power_sweep(c, quiet, tx, powers_dbm, n_jobs=n_jobs, steps_per_span=steps_per_span)
    P, s = nli_from_results(res)
    return fit_eta(P, s)


def calibrate_surrogate(formats, link, tx, powers_dbm=(-2, 1, 4, 7, 10), n_jobs=1,
                        steps_per_span=None):
    """Measure ``eta`` of each format on ``link`` and fit an :class:`EtaSurrogate`.

    Returns
    -------
    surrogate : EtaSurrogate
    fits : list of EtaFit
        Per-format cubic fits, in input order.
    """
    formats = check_constellations(formats)
    if len(formats) < 4:
        raise ValueError("calibration needs at least 4 formats")
    feats = np.array([surrogate_features(c) for c in formats])
    if np.linalg.matrix_rank(_design(feats), tol=1e-9) < 3:
        raise ValueError("rank-deficient calibration set: the (Phi4, Phi2) features of the "
                         "formats must not be collinear")
    fits = [measure_eta(c, link, tx, powers_dbm, n_jobs, steps_per_span) for c in formats]
    sur = EtaSurrogate(link.fingerprint()).fit(feats, np.array([f.eta for f in fits]))
    sur.metadata_ = {"formats": ",".join(c.name or "?" for c in formats),
                     "powers_dbm": ",".join(str(p) for p in powers_dbm)}
    return sur, fits


# --- NLI-aware objective -----------------------------------------------------------

def nli_value_and_grad(points, labels, sigma2_ase, surrogate, rule=None, reps=None,
                       mult=None, want_grad=True, prune=0.0):
    """GMI at the predicted optimum effective SNR, and its gradient.

    The noise variance per complex dimension is ``E||X||^2 / (N/2 Gamma_opt)``
    with ``Gamma_opt`` from ``sigma2_ase`` and the surrogate's ``eta`` of
    ``points``; the gradient includes the dependence of ``eta`` (and of the
    mean energy) on the points.
    """
    points = np.asarray(points, dtype=float)
    M, N = points.shape
    eta, deta = surrogate.eta_and_grad(points)
    if not eta > 0:
        raise ValueError(f"surrogate predicts non-positive eta ({eta:.4g})")
    G = gamma_opt(sigma2_ase, eta)
    E = float(np.mean(np.sum(points**2, axis=1)))
    s2 = E / (N / 2 * G)
    val, Gd, ds2 = gmi_gh_value_and_grad(points, labels, s2, rule or hermite_rule(10),
                                         reps, mult, want_grad, prune)
    info = {"effective_snr_db": 10 * math.log10(G), "eta_hat": eta}
    if not want_grad:
        return val, None, info
    # s2 = E / (N/2) * Gamma^-1 and Gamma ~ eta^(-1/3).
    grad = Gd + ds2 * (s2 / (3.0 * eta) * deta + s2 / E * (2.0 * points / M))
    return val, grad, info


def nli_objective(c, sigma2_ase, surrogate, J=10):
    """GMI (bit/symbol) of ``c`` at its predicted optimal effective SNR."""
    reps, mult = _orbit_representatives(c)
    val, _, _ = nli_value_and_grad(c.points, c.labels, sigma2_ase, surrogate,
                                   hermite_rule(J), reps, mult, want_grad=False)
    return float(val)
