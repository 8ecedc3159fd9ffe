from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mdshaping.constellation import (
    cartesian_product,
    expand_orthant,
    make_prs64,
    make_qam,
    make_sp_qam,
    random_first_orthant,
)
from mdshaping.fibersim import FiberLink, TxConfig
from mdshaping.nli import (
    EtaFitter,
    EtaSurrogate,
    NliState,
    StaleCalibrationError,
    calibrate_surrogate,
    effective_snr,
    fit_eta,
    gamma_opt,
    measure_eta,
    nli_objective,
    nli_value_and_grad,
    optimal_launch_power,
    surrogate_features,
)
from mdshaping.optimizer import OptimizerConfig, ShapingProblem, gradient, optimize

PMQPSK = cartesian_product(make_qam(2), make_qam(2))
PM16 = cartesian_product(make_qam(4), make_qam(4))


def test_effective_snr_examples():
    assert effective_snr(NliState(2.0, 0.0, 0.0, 3.0)) == pytest.approx(1.5)
    assert effective_snr(NliState(2.0, 0.5, 0.5, 1.0)) == pytest.approx(1 / 3)
    assert effective_snr(NliState(2.0, 0.5, 0.5, 1e4)) < 1e-7
    assert optimal_launch_power(2.0, 1.0) == pytest.approx(1.0)
    assert gamma_opt(2.0, 1.0) == pytest.approx(1 / 3)
    with pytest.raises(ValueError):
        gamma_opt(2.0, 0.0)
    with pytest.raises(ValueError):
        NliState(0.0, 1.0, 1.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(1e-9, 1e3), st.floats(1e-6, 1e6))
def test_optimum_is_maximum(s2, eta):
    st_ = NliState(s2, eta / 2, eta / 2, optimal_launch_power(s2, eta))
    g = effective_snr(st_)
    assert g == pytest.approx(gamma_opt(s2, eta), rel=1e-12)
    for f in (0.9, 1.1):
        assert effective_snr(replace(st_, power=st_.power * f)) < g


def test_fit_eta_exact_and_estimator():
    P = np.array([1e-3, 2e-3, 4e-3, 8e-3])
    fit = fit_eta(P, 0.5 * P**3)
    assert fit.eta == pytest.approx(0.5, rel=1e-12) and fit.r2 == pytest.approx(1.0)
    est = EtaFitter().fit(P[:, None], 0.5 * P**3)
    np.testing.assert_allclose(est.predict(P[:, None]), 0.5 * P**3)
    assert est.score(P[:, None], 0.5 * P**3) == pytest.approx(1.0)


def test_fit_eta_rejects_bad_sweeps():
    P = np.array([1e-3, 1.2e-3, 1.5e-3])
    with pytest.raises(ValueError, match="6 dB"):
        fit_eta(P, P**3)
    P = np.array([1e-3, 4e-3, 8e-3, 16e-3])
    with pytest.warns(RuntimeWarning):
        fit = fit_eta(P, np.r_[-1e-12, P[1:] ** 3])
    assert fit.n_floored == 1


def test_features():
    np.testing.assert_allclose(surrogate_features(PMQPSK), [0, 0], atol=1e-12)
    np.testing.assert_allclose(surrogate_features(PM16), [0.16, 0.32], atol=1e-12)
    f = surrogate_features(make_prs64())
    assert f[0] == pytest.approx(0.0, abs=1e-12) and f[1] > 0


def _surrogate(fp="x"):
    X = np.array([[0.0, 0.0], [0.16, 0.32], [0.0, 0.25], [0.2, 0.3]])
    y = 30 + 40 * X[:, 0] + 20 * X[:, 1]
    return EtaSurrogate(fp).fit(X, y)


def test_surrogate_fit_predict_roundtrip(tmp_path):
    s = _surrogate()
    np.testing.assert_allclose(s.coef_, [30, 40, 20], rtol=1e-10)
    assert s.predict([PMQPSK])[0] == pytest.approx(s.coef_[0])
    p = tmp_path / "s.txt"
    s.save(p)
    s2 = EtaSurrogate.load(p)
    np.testing.assert_array_equal(s2.coef_, s.coef_)
    assert s2.link_fingerprint == "x" and s2.residuals_.size == 4


def test_surrogate_rank_deficient():
    with pytest.raises(ValueError, match="rank"):
        EtaSurrogate().fit([PMQPSK, PM16, cartesian_product(make_qam(6), make_qam(6)),
                            make_sp_qam(7)], [37, 66, 75, 65])


def test_stale_calibration():
    link = FiberLink(span_length_km=234)
    s = _surrogate(link.fingerprint())
    s.check_link(link)
    with pytest.raises(StaleCalibrationError):
        s.check_link(replace(link, span_length_km=80))
    with pytest.raises(StaleCalibrationError):
        ShapingProblem(4, 7, objective="nli-gmi", sigma2_ase=1e-5, surrogate=s,
                       link=replace(link, n_spans=2))


def test_nli_gradient_matches_central_difference():
    c = expand_orthant(random_first_orthant(6, 4, 1))
    p = ShapingProblem(4, 6, objective="nli-gmi", sigma2_ase=3e-5, surrogate=_surrogate(),
                       constraint="orthant-symmetry")
    ga = gradient(p, c)
    gf = gradient(p, c, "central-difference")
    assert np.linalg.norm(ga - gf) <= 1e-4 * np.linalg.norm(ga)


def test_nli_objective_prefers_low_kurtosis_at_equal_awgn_rate():
    s = _surrogate()
    v, _, info = nli_value_and_grad(PMQPSK.points, PMQPSK.labels, 3e-5, s, want_grad=False)
    assert info["eta_hat"] == pytest.approx(30.0)
    assert nli_objective(PMQPSK, 3e-5, s) == pytest.approx(v)


def test_nli_optimizer_runs():
    p = ShapingProblem(4, 6, objective="nli-gmi", sigma2_ase=3e-5, surrogate=_surrogate(),
                       constraint="orthant-symmetry")
    c0 = expand_orthant(random_first_orthant(6, 4, 0))
    c, tr = optimize(p, c0, OptimizerConfig(max_iter=20, restarts=1))
    assert np.all(np.isfinite(tr.column("eta_hat_per_w2")))
    assert tr.best_objective[-1] >= tr.objective[0]


def test_measured_eta_ordering_short_link():
    link = FiberLink(span_length_km=80, steps_per_span=50)
    tx = TxConfig(n_symbols=2**12)
    a = measure_eta(PMQPSK, link, tx, [4, 8, 12])
    b = measure_eta(PM16, link, tx, [4, 8, 12])
    assert a.eta < b.eta and a.r2 > 0.98


def test_calibration_rejects_collinear_formats_before_simulating():
    pm64 = cartesian_product(make_qam(6), make_qam(6))
    with pytest.raises(ValueError, match="rank-deficient"):
        calibrate_surrogate([PMQPSK, PM16, pm64, make_sp_qam(7)], FiberLink(), TxConfig())
