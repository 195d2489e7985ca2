import math

import numpy as np
import pytest
from scipy import special

from clup.rdt_clup import RdtParams
from clup.rdt_ml import (LIFTED_ML_REFERENCE, c1_cap, ml_critical_snrs, ml_minimize, nu_hat_ml, xi_rd_ml,
                         xi_rd_ml_nu, xi_rd_ml_slope)

P12 = RdtParams.from_snr_db(0.8, 12)


def test_nu_hat_inverse_relation():
    assert nu_hat_ml(0.0) == 0.0
    for c1 in np.linspace(-0.999, 0.999, 41):
        assert abs(math.erf(-nu_hat_ml(c1) / math.sqrt(2)) - c1) < 1e-10
    assert nu_hat_ml(0.99698) == pytest.approx(math.sqrt(2) * special.erfinv(-0.99698), rel=1e-14)
    with pytest.raises(ValueError):
        nu_hat_ml(1.0)


def test_xi_at_zero_overlap():
    want = math.sqrt(0.8) * math.sqrt(2 + P12.sigma ** 2) - math.sqrt(2 / math.pi)
    # the nu-maximized form is sqrt(alpha) sqrt(2 - 2 c1 + s^2) - sqrt(2/pi) exp(-erfinv(c1)^2)
    assert xi_rd_ml(P12, 0.0) == pytest.approx(want, abs=1e-15)
    with pytest.raises(ValueError):
        xi_rd_ml(P12, 1.0)


def test_nu_maximization_closes_the_form():
    for c1 in (0.1, 0.6, 0.95):
        nu = nu_hat_ml(c1)
        eps = 1e-5
        d = (xi_rd_ml_nu(P12, c1, nu + eps) - xi_rd_ml_nu(P12, c1, nu - eps)) / (2 * eps)
        assert abs(-c1 - math.erf(nu / math.sqrt(2))) < 1e-12
        assert abs(d) < 1e-8
        assert xi_rd_ml_nu(P12, c1, nu) == pytest.approx(xi_rd_ml(P12, c1), abs=1e-13)


def test_slope_matches_finite_difference():
    for c1 in (0.2, 0.8, 0.99):
        eps = 1e-6
        fd = (xi_rd_ml(P12, c1 + eps) - xi_rd_ml(P12, c1 - eps)) / (2 * eps)
        assert xi_rd_ml_slope(P12, c1) == pytest.approx(fd, abs=1e-6)


def test_ml_minimum_12db():
    assert abs(ml_minimize(P12).xi_global - 0.22457) < 1e-3


def test_ml_10db():
    sol = ml_minimize(RdtParams.from_snr_db(0.8, 10))
    assert abs(sol.xi_global - 0.28092) < 1e-3
    assert abs(sol.perr / 4.77e-3 - 1) < 0.02


def test_two_minima_at_onset():
    sol = ml_minimize(RdtParams.from_snr_db(0.8, 10.7105))
    assert len(sol.local_minima) == 2
    (c_lo, x_lo, p_lo), (c_hi, x_hi, p_hi) = sorted(sol.local_minima)
    assert abs(c_hi - 0.99698) < 1e-3 and abs(p_hi - 0.00151) < 5e-4
    assert abs(c_lo - 0.82366) < 1e-3 and abs(p_lo - 0.08817) < 5e-4
    assert sol.c1_global == c_hi


def test_single_minimum_at_13db():
    sol = ml_minimize(RdtParams.from_snr_db(0.8, 13))
    assert len(sol.local_minima) == 1
    assert abs(sol.perr / 3.30e-5 - 1) < 0.02


def test_solution_invariants():
    for db in (8, 10, 10.5, 12, 15):
        sol = ml_minimize(RdtParams.from_snr_db(0.8, db))
        assert -1 < sol.c1_global < 1
        assert sol.perr == pytest.approx((1 - sol.c1_global) / 2)
        assert all(x >= sol.xi_global for _, x, _ in sol.local_minima)
        for c, _, _ in sol.local_minima:
            h = 1e-4 * (1 - c)
            second = xi_rd_ml(sol_params := RdtParams.from_snr_db(0.8, db), c + h) \
                - 2 * xi_rd_ml(sol_params, c) + xi_rd_ml(sol_params, c - h)
            assert second >= 1e-10 * h * h or second > 0


def test_scan_is_continuous():
    params = RdtParams.from_snr_db(0.8, 11)
    c1 = np.linspace(0, c1_cap(params), 20001)
    vals = xi_rd_ml(params, c1)
    assert np.all(np.isfinite(vals))
    assert np.abs(np.diff(vals)).max() < 1e-3


def test_perr_decreases_above_11db():
    perrs = [ml_minimize(RdtParams.from_snr_db(0.8, db)).perr for db in np.arange(11, 16, 0.5)]
    assert all(b <= a for a, b in zip(perrs, perrs[1:]))


def test_cap_widens_at_high_snr():
    assert c1_cap(RdtParams.from_snr_db(0.8, 14)) == 1 - 1e-9
    assert c1_cap(RdtParams.from_snr_db(0.8, 15)) == 1 - 1e-12


def test_critical_snrs():
    crit = ml_critical_snrs(0.8)
    assert abs(crit.multi_onset_db - 10.7105) <= 0.02
    assert abs(crit.discontinuity_db - 9.989) <= 0.02


def test_perr_jumps_across_discontinuity():
    below = ml_minimize(RdtParams.from_snr_db(0.8, 9.95)).perr
    above = ml_minimize(RdtParams.from_snr_db(0.8, 10.05)).perr
    assert below > 10 * above


def test_lifted_reference_table_is_static():
    assert LIFTED_ML_REFERENCE[11.0] == (2.5162e-01, 9.72e-04)
    assert sorted(LIFTED_ML_REFERENCE) == [8.0, 9.0, 10.0, 11.0, 12.0, 13.0]
