import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from openarc import specfun
from openarc.specfun import (bessel_j, bessel_y, gauss_legendre_16, interp_matrix,
                             y_log_split)


def test_rule_weights_sum_to_two():
    assert abs(gauss_legendre_16().weights.sum() - 2.0) <= 1e-15


def test_rule_low_and_top_degree():
    r = gauss_legendre_16()
    assert abs(np.sum(r.weights * r.nodes**2) - 2 / 3) <= 1e-15
    assert abs(np.sum(r.weights * r.nodes**31)) <= 1e-15


@pytest.mark.parametrize("m", range(32))
def test_rule_exact_up_to_degree_31(m):
    r = gauss_legendre_16()
    exact = 0.0 if m % 2 else 2.0 / (m + 1)
    assert abs(np.sum(r.weights * r.nodes**m) - exact) <= 1e-14


def test_bessel_reference_values():
    assert bessel_j(0, 0.0) == 1.0
    assert abs(bessel_j(0, 1.0) - 0.7651976865579666) <= 1e-15
    assert abs(bessel_y(0, 1.0) - 0.0882569642156769) <= 1e-15


def test_bessel_y_domain():
    with pytest.raises(ValueError):
        bessel_y(0, 0.0)
    with pytest.raises(ValueError):
        bessel_y(1, -1.0)


@pytest.mark.parametrize("x", [1e-3, 0.05, 0.125, 0.13, 1.0, 7.3, 12.0, 24.9, 25.1, 80.0, 1e3, 1e4])
@pytest.mark.parametrize("order", [0, 1])
def test_bessel_against_mpmath(order, x):
    mp.mp.dps = 30
    j = float(mp.besselj(order, x))
    y = float(mp.bessely(order, x))
    assert abs(bessel_j(order, x) - j) <= 1e-14 * max(abs(j), 1e-3)
    assert abs(bessel_y(order, x) - y) <= 1e-14 * max(abs(y), 1e-3)


def test_wronskian():
    x = np.geomspace(1e-3, 100, 2000)
    w = bessel_j(0, x) * bessel_y(1, x) - bessel_j(1, x) * bessel_y(0, x)
    ref = -2 / (np.pi * x)
    assert np.max(np.abs(w / ref - 1)) <= 1e-12


def test_log_split_example():
    x = 0.37
    smooth, coef = y_log_split(0, x)
    recon = smooth + (2 / np.pi) * np.log(x / 2) * bessel_j(0, x)
    assert abs(recon - bessel_y(0, x)) <= 1e-14
    assert abs(y_log_split(0, 1.0)[1] - 2 / np.pi * 0.7651976865579666) <= 1e-15


def test_log_split_limit_at_zero():
    assert abs(specfun.y0_smooth_at_zero() - 2 * np.euler_gamma / np.pi) <= 1e-15
    smooth, _ = y_log_split(0, 1e-9)
    assert abs(smooth - 0.3674669052) <= 1e-9


def test_log_split_recombination_bulk(rng):
    x = rng.uniform(0, 4, 10_000) + 1e-12
    for order in (0, 1):
        smooth, coef = y_log_split(order, x)
        recon = smooth + coef * np.log(x / 2)
        y = bessel_y(order, x)
        # relative to the summands: Y_n itself has zeros in (0, 4]
        scale = np.abs(smooth) + np.abs(coef * np.log(x / 2))
        assert np.max(np.abs(recon - y) / scale) <= 1e-13


def test_log_split_seam_agrees():
    # both sides of the series / subtraction seam
    lo, hi = np.nextafter(0.125, 0), np.nextafter(0.125, 1)
    for order in (0, 1):
        a = y_log_split(order, lo)[0]
        b = y_log_split(order, hi)[0]
        assert abs(a - b) <= 1e-13 * max(1.0, abs(a))


@settings(max_examples=50, deadline=None)
@given(st.floats(1e-6, 4.0))
def test_y1_regular_part_recombines(x):
    # Y1 = (2/pi) log(x/2) J1 - 2/(pi x) + regular
    y1 = bessel_y(1, x)
    recon = specfun.y1_regular_part(x) + (2 / np.pi) * np.log(x / 2) * bessel_j(1, x) - 2 / (np.pi * x)
    assert abs(recon - y1) <= 1e-12 * max(1.0, abs(y1))


def test_interp_identity_and_rows():
    t = gauss_legendre_16().nodes
    assert np.max(np.abs(interp_matrix(t, t) - np.eye(16))) <= 1e-14
    dst = np.linspace(-1, 1, 37)
    M = interp_matrix(t, dst)
    assert np.max(np.abs(M.sum(axis=1) - 1)) <= 1e-13
    assert np.max(np.abs(M @ t**5 - dst**5)) <= 1e-13


@settings(max_examples=25, deadline=None)
@given(st.lists(st.floats(-1, 1), min_size=16, max_size=16))
def test_interp_reproduces_degree_15(coefs):
    t = gauss_legendre_16().nodes
    dst = np.linspace(-1, 1, 11)
    p = np.polynomial.Polynomial(coefs)
    assert np.max(np.abs(interp_matrix(t, dst) @ p(t) - p(dst))) <= 1e-12 * max(1.0, np.sum(np.abs(coefs)))


def test_interp_duplicate_nodes():
    t = gauss_legendre_16().nodes.copy()
    t[3] = t[2]
    with pytest.raises(ValueError):
        interp_matrix(t, [0.0])
