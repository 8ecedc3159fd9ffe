import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from mdshaping.airs import GaussianLaw, maxlog_llr
from mdshaping.constellation import cartesian_product, make_qam
from mdshaping.estimators import GeometricShaper, MaxLogDemapper


def test_geometric_shaper():
    est = GeometricShaper(snr_db=3.0, max_iter=40, restarts=1)
    assert clone(est).get_params()["snr_db"] == 3.0
    est.fit(make_qam(2))
    assert est.constellation_.M == 4
    assert est.objective_ >= est.score(make_qam(2)) - 1e-12


def test_demapper():
    c = cartesian_product(make_qam(4), make_qam(2))
    dem = MaxLogDemapper(c, 0.1)
    with pytest.raises(NotFittedError):
        dem.transform(np.zeros((1, 4)))
    dem.fit()
    y = c.points[[3, 37, 60]] + 0.01
    np.testing.assert_array_equal(dem.predict(y), [3, 37, 60])
    np.testing.assert_array_equal(dem.predict_bits(y), c.labels[[3, 37, 60]])
    np.testing.assert_allclose(dem.transform(y), maxlog_llr(c, y, GaussianLaw(0.1)))
    # LLR signs give the transmitted bits
    np.testing.assert_array_equal(dem.transform(y) > 0, c.labels[[3, 37, 60]].astype(bool))
    with pytest.raises(ValueError):
        dem.transform(np.zeros((2, 3)))
