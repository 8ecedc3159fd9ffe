"""scikit-learn style wrappers around the functional core.

``GeometricShaper`` fits a constellation; ``MaxLogDemapper`` turns received
vectors into LLRs (``transform``) or hard decisions (``predict``). The NLI
estimators live in :mod:`mdshaping.nli` (``EtaFitter``, ``EtaSurrogate``).
"""
from __future__ import annotations

from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_constellation, check_positive, check_received
from .airs import GaussianLaw, _separable, hard_decide, maxlog_llr
from .optimizer import OptimizerConfig, ShapingProblem, objective, optimize

__all__ = ["GeometricShaper", "MaxLogDemapper"]


class GeometricShaper(BaseEstimator):
    """Gradient-based geometric shaping as an estimator.

    ``fit(init)`` optimizes the coordinates of the initial labeled
    constellation ``init``; the result is in ``constellation_`` and the
    iteration history in ``trace_``.

    Parameters
    ----------
    objective : {"awgn-gmi", "nli-gmi"}
    snr_db : float, optional
        Operating SNR for ``awgn-gmi``.
    constraint : {"none", "orthant-symmetry"}
    power : float, optional
        Mean symbol energy (default 1 per complex dimension).
    sigma2_ase : float, optional
    surrogate : EtaSurrogate, optional
        Required for ``nli-gmi``.
    learning_rate, max_iter, restarts, seed, tol, patience, gradient, n_jobs
        See :class:`~mdshaping.optimizer.OptimizerConfig`.
    """

    def __init__(self, objective="awgn-gmi", snr_db=None, constraint="none", power=None,
                 sigma2_ase=None, surrogate=None, learning_rate=0.01, max_iter=2000,
                 restarts=5, seed=0, tol=1e-4, patience=50, gradient="analytic", n_jobs=1):
        self.objective = objective
        self.snr_db = snr_db
        self.constraint = constraint
        self.power = power
        self.sigma2_ase = sigma2_ase
        self.surrogate = surrogate
        self.learning_rate = learning_rate
        self.max_iter = max_iter
        self.restarts = restarts
        self.seed = seed
        self.tol = tol
        self.patience = patience
        self.gradient = gradient
        self.n_jobs = n_jobs

    def _problem(self, c):
        return ShapingProblem(
            N=c.N, m=c.m, objective=self.objective, snr_db=self.snr_db,
            constraint=self.constraint, power=self.power, sigma2_ase=self.sigma2_ase,
            surrogate=self.surrogate,
        )

    def fit(self, X, y=None):
        c = check_constellation(X, name="init")
        cfg = OptimizerConfig(
            learning_rate=self.learning_rate, max_iter=self.max_iter,
            restarts=self.restarts, seed=self.seed, tol=self.tol,
            patience=self.patience, gradient=self.gradient, n_jobs=self.n_jobs,
        )
        self.problem_ = self._problem(c)
        self.constellation_, self.trace_ = optimize(self.problem_, c, cfg)
        self.objective_ = float(self.trace_.best_objective[-1])
        return self

    def score(self, X, y=None):
        """Objective value of constellation ``X`` (bit per symbol)."""
        c = check_constellation(X)
        return objective(self._problem(c), c)


class MaxLogDemapper(TransformerMixin, BaseEstimator):
    """Max-log soft demapper for a labeled constellation.

    Parameters
    ----------
    constellation : LabeledConstellation
    sigma2_z : float
        Noise variance per complex dimension.
    """

    def __init__(self, constellation=None, sigma2_z=1.0):
        self.constellation = constellation
        self.sigma2_z = sigma2_z

    def fit(self, X=None, y=None):
        self.constellation_ = check_constellation(self.constellation)
        self.law_ = GaussianLaw(check_positive(self.sigma2_z, "sigma2_z"))
        self.separable_ = _separable(self.constellation_) is not None
        self.n_features_in_ = self.constellation_.N
        return self

    def transform(self, X):
        """LLRs of shape ``(n, m)``; positive values favour bit 1."""
        check_is_fitted(self, "law_")
        return maxlog_llr(self.constellation_, check_received(X, self.n_features_in_), self.law_)

    def predict(self, X):
        """Index of the nearest constellation point for each row."""
        check_is_fitted(self, "law_")
        return hard_decide(self.constellation_, check_received(X, self.n_features_in_))

    def predict_bits(self, X):
        """Labels of the nearest points, shape ``(n, m)``."""
        return self.constellation_.labels[self.predict(X)]
