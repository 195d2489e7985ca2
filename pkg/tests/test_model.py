import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from clup.model import (ProblemInstance, generate_instance, make_instance, overlap_stats, rows_for, sign_round,
                        sigma_to_snr_db, snr_db_to_sigma)


@pytest.mark.parametrize("db,sigma", [(0, 1.0), (10, 0.316227766), (13, 0.223872114)])
def test_snr_conversion(db, sigma):
    assert abs(snr_db_to_sigma(db) - sigma) < 1e-9


@given(st.floats(-40, 40))
def test_snr_round_trip(db):
    assert abs(sigma_to_snr_db(snr_db_to_sigma(db)) - db) < 1e-9


def test_rows_round_half_up():
    assert rows_for(400, 0.8) == 320
    assert rows_for(5, 0.5) == 3
    assert rows_for(4, 0.8) == 3


def test_noiseless_instance():
    inst = generate_instance(4, 0.8, 0.0, seed=3)
    assert (inst.m, inst.n) == (3, 4)
    assert np.array_equal(inst.y, inst.A @ inst.x_sol)
    assert inst.residual(inst.x_sol) == 0.0
    assert np.all(np.abs(inst.x_sol) == 0.5)


def test_instance_is_deterministic_and_frozen():
    a = generate_instance(50, 0.8, 0.3, seed=11)
    b = generate_instance(50, 0.8, 0.3, seed=11)
    c = generate_instance(50, 0.8, 0.3, seed=12)
    assert np.array_equal(a.A, b.A) and np.array_equal(a.v, b.v) and np.array_equal(a.x_sol, b.x_sol)
    assert not np.array_equal(a.A, c.A)
    with pytest.raises(ValueError):
        a.A[0, 0] = 1.0


def test_record_replays_instance():
    a = generate_instance(20, 0.8, 0.1, seed=5)
    b = ProblemInstance.from_record(a.to_record())
    assert np.array_equal(a.y, b.y)


def test_invalid_dimensions():
    with pytest.raises(ValueError):
        generate_instance(1, 0.2, 0.0, seed=0)
    with pytest.raises(ValueError):
        generate_instance(0, 0.8, 0.0, seed=0)


def test_gaussian_entries():
    inst = generate_instance(1250, 0.8, 1.0, seed=0)  # 10^6 entries
    assert abs(inst.A.mean()) < 0.01 and abs(inst.A.var() - 1) < 0.01
    assert abs(np.linalg.norm(inst.x_sol) - 1) < 1e-14


def test_overlap_stats_examples():
    inst = generate_instance(10, 0.8, 0.1, seed=1)
    s = overlap_stats(inst.x_sol, inst)
    assert (s.c2, s.c1, s.ber) == pytest.approx((1, 1, 0))
    s = overlap_stats(-inst.x_sol, inst)
    assert (s.c2, s.c1, s.ber) == pytest.approx((1, -1, 1))
    s = overlap_stats(0.5 * inst.x_sol, inst)
    assert (s.c2, s.c1, s.ber) == pytest.approx((0.25, 0.5, 0))
    assert overlap_stats(np.zeros(10), inst).ber == 1.0


@given(st.lists(st.floats(-1, 1), min_size=3, max_size=3))
def test_overlap_cauchy_schwarz(x):
    inst = generate_instance(3, 1.0, 0.0, seed=2)
    s = overlap_stats(np.array(x), inst)
    assert s.c1 ** 2 <= s.c2 + 1e-12 and 0 <= s.ber <= 1


def test_sign_round_maps_zero_up():
    out = sign_round(np.array([0.0, -1e-300, 2.0, -3.0]))
    np.testing.assert_array_equal(out, np.array([1, -1, 1, -1]) / 2)


def test_make_instance_checks_shapes():
    with pytest.raises(ValueError):
        make_instance(np.ones((2, 3)), np.ones(2), np.ones(2))
