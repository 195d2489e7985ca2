import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clup.numerics import (ConvergenceError, OptimizerSettings, erf, erfc, erfinv, find_root, maximize_nd,
                           minimize_scalar, norm_cdf, norm_sf)


@given(st.floats(-3, 3))
def test_erfinv_inverts_erf(x):
    assert abs(erfinv(erf(x)) - x) <= 1e-9


@pytest.mark.parametrize("p", [1.0, -1.0, 1.5, float("nan")])
def test_erfinv_rejects_outside_open_interval(p):
    with pytest.raises(ValueError):
        erfinv(p)


def test_erf_values():
    assert erf(0.0) == 0.0
    assert abs(erf(1.0) - 0.8427007929497149) < 1e-15
    assert abs(erfc(3.0) - 2.209049699858544e-05) < 1e-18


@given(st.floats(-30, 30))
def test_normal_tails_are_complementary(x):
    assert abs(norm_cdf(x) + norm_sf(x) - 1) < 1e-15


def test_minimize_scalar_quadratic():
    x, v = minimize_scalar(lambda t: (t - 0.3) ** 2 + 1, (-1, 2))
    assert abs(x - 0.3) < 1e-8
    assert abs(v - 1) < 1e-14


def test_find_root_needs_sign_change():
    assert abs(find_root(lambda t: t ** 3 - 2, (0, 2)) - 2 ** (1 / 3)) < 1e-12
    with pytest.raises(ValueError):
        find_root(lambda t: t * t + 1, (-1, 1))


def test_find_root_reports_exhausted_budget():
    with pytest.raises(ConvergenceError):
        find_root(lambda t: math.tan(t) - 1e3, (0, 1.5707), OptimizerSettings(max_evals=2))


def test_maximize_nd_concave():
    x, v = maximize_nd(lambda z: -(z[0] - 1) ** 2 - 2 * (z[1] + 0.5) ** 2, [0.0, 0.0])
    np.testing.assert_allclose(x, [1, -0.5], atol=1e-5)
    assert v > -1e-10


def test_settings_validation():
    with pytest.raises(ValueError):
        OptimizerSettings(tolerance=0)
    with pytest.raises(ValueError):
        OptimizerSettings(max_evals=0)
