import math

import numpy as np
import pytest

from cvcluster.errors import AboveThreshold, Degenerate, InvalidParameter, NumericalAccuracy
from cvcluster.physics import (
    EXPERIMENT_DB, KIND_SOURCES, FilterChain, OpoParams, SpectrumGrid, WavePacket,
    analytic_correlation, bracketing_check, correlation_coefficient, effective_squeezing_db,
    effective_squeezing_r, fringe_period, mode_function, mode_spectrum, nullifier_variance_model,
    nullifier_variance_simple, power_spectrum, squeezing_spectrum, to_db,
)

WP = WavePacket()
OPO = OpoParams()
TAU1 = 40e-9
TAU2 = 5 * TAU1


def test_spectrum_unpumped_is_vacuum():
    w = np.linspace(-1e9, 1e9, 101)
    for branch in (1, -1):
        assert np.allclose(squeezing_spectrum(OpoParams(xi=0.0), w, branch), 0.5)


def test_spectrum_dc_value():
    lossless = OpoParams(L=0.0)
    assert squeezing_spectrum(lossless, 0.0, -1) == pytest.approx(0.5 * (1 - 2.6 / 1.65 ** 2))
    assert squeezing_spectrum(lossless, 0.0, -1) == pytest.approx(0.02250, abs=5e-6)


def test_spectrum_uncertainty_product():
    w = np.linspace(-5e9, 5e9, 2001)
    pure = OpoParams(L=0.0)
    prod = squeezing_spectrum(pure, w, 1) * squeezing_spectrum(pure, w, -1)
    assert np.allclose(prod, 0.25, atol=1e-14)
    prod = squeezing_spectrum(OPO, w, 1) * squeezing_spectrum(OPO, w, -1)
    assert np.all(prod > 0.25)


def test_opo_parameter_errors():
    with pytest.raises(AboveThreshold):
        OpoParams(xi=1.0)
    with pytest.raises(InvalidParameter):
        OpoParams(T=0.0)
    with pytest.raises(InvalidParameter):
        squeezing_spectrum(OPO, 0.0, 0)


def test_mode_function_normalised_and_compact():
    t = np.linspace(-WP.dt, 2 * WP.dt, 600001)
    f = mode_function(WP, 0, t)
    assert np.trapezoid(f ** 2, t) == pytest.approx(1.0, abs=1e-6)
    eps = 1e-12
    assert mode_function(WP, 0, WP.dt + eps) == 0.0
    assert mode_function(WP, 0, -eps) == 0.0
    assert mode_function(WP, 3, 3 * WP.dt + WP.dt / 2) != 0.0


def test_degenerate_width():
    with pytest.raises(InvalidParameter):
        WavePacket(dt=0.0)


def test_parseval():
    spec = mode_spectrum(WP)
    assert spec.parseval == pytest.approx(1.0, abs=1e-6)


def test_coarse_grid_flagged():
    coarse = SpectrumGrid(points=2 ** 10, dt_fraction=1 / 8)
    with pytest.raises(NumericalAccuracy):
        nullifier_variance_model(OPO, WP, 0.75, 0.0, ("x", 1), grid=coarse)


@pytest.mark.parametrize("eta, reported", [(0.75, -4.96), (0.80, -5.62)])
def test_model_predictions(eta, reported):
    for kind in KIND_SOURCES:
        db = to_db(nullifier_variance_model(OPO, WP, eta, 0.0, kind))
        assert abs(db - reported) <= 0.2


def test_zero_mismatch_reduction():
    for eta in (0.3, 0.75, 1.0):
        simple = nullifier_variance_simple(OPO, WP, eta)
        for kind in KIND_SOURCES:
            assert nullifier_variance_model(OPO, WP, eta, 0.0, kind) == pytest.approx(simple, abs=1e-10)


@pytest.mark.parametrize("dtau2", [0.0, 1e-9, 7e-9])
def test_vacuum_throughput(dtau2):
    vac = OpoParams(xi=0.0)
    for kind in KIND_SOURCES:
        assert nullifier_variance_model(vac, WP, 1.0, dtau2, kind) == pytest.approx(2.0, abs=1e-12)


def test_monotone_in_eta_and_mismatch():
    etas = np.linspace(0.5, 1.0, 6)
    vals = [nullifier_variance_model(OPO, WP, e, 0.0, ("x", 1)) for e in etas]
    assert np.all(np.diff(vals) <= 0)
    for sign in (1, -1):
        d = [nullifier_variance_model(OPO, WP, 0.75, sign * x, ("p", 2)) for x in (0, 2e-10, 5e-10, 1e-9)]
        assert np.all(np.diff(d) >= 0)


def test_effective_r():
    assert effective_squeezing_r(OpoParams(xi=0.0), WP, 1.0) == pytest.approx(0.0, abs=1e-12)
    r = effective_squeezing_r(OPO, WP, 0.75)
    # the scalar r reproduces the model variance through 2 exp(-2r)
    assert 2 * math.exp(-2 * r) == pytest.approx(nullifier_variance_simple(OPO, WP, 0.75), rel=1e-12)
    assert r == pytest.approx(-math.log(10 ** -0.496) / 2, abs=0.03)
    assert effective_squeezing_db(OPO, WP, 0.75) == pytest.approx(-4.927, abs=1e-3)
    rs = [effective_squeezing_r(OpoParams(xi=x), WP, 1.0) for x in (0.1, 0.3, 0.5, 0.7)]
    assert np.all(np.diff(rs) > 0)


def test_bracketing_report():
    lo = to_db(nullifier_variance_model(OPO, WP, 0.80, 0.0, ("x", 1)))
    hi = to_db(nullifier_variance_model(OPO, WP, 0.75, 0.0, ("x", 1)))
    check = bracketing_check(EXPERIMENT_DB, lo, hi)
    # -4.82 and -4.81 sit just outside the model interval but within the tolerance
    assert check.inside == [False, True, False, True]
    assert check.ok


def test_swap_symmetry():
    w = np.linspace(0, 2 * math.pi * 1e8, 4001)
    for det, partner in (("A", "B"), ("C", "D")):
        xa = power_spectrum(det, "x", OPO, 0.75, TAU1, TAU2, w)
        pb = power_spectrum(partner, "p", OPO, 0.75, TAU1, TAU2, w)
        assert np.max(np.abs(xa - pb)) < 1e-12


def test_power_spectrum_limits():
    w = np.linspace(0, 2 * math.pi * 1e8, 501)
    for det in "ABCD":
        for q in "xp":
            assert np.allclose(power_spectrum(det, q, OPO, 0.0, TAU1, TAU2, w), 0.5, atol=0)
            assert np.allclose(power_spectrum(det, q, OpoParams(xi=0.0), 1.0, TAU1, TAU2, w), 0.5)
            assert np.all(power_spectrum(det, q, OPO, 0.75, TAU1, TAU2, w) >= 0)


def test_fringe_periods():
    f = np.linspace(0, 1e8, 20001)
    step = f[1] - f[0]
    w = 2 * math.pi * f
    a = power_spectrum("A", "x", OPO, 0.75, TAU1, TAU2, w)
    b = power_spectrum("B", "x", OPO, 0.75, TAU1, TAU2, w)
    c = power_spectrum("C", "x", OPO, 0.75, TAU1, TAU2, w)
    d = power_spectrum("D", "x", OPO, 0.75, TAU1, TAU2, w)
    assert abs(fringe_period(f, a, b) - 1 / TAU1) <= step
    assert abs(fringe_period(f, c, d) - 1 / TAU2) <= step


def test_correlation_unfiltered_and_filtered():
    assert analytic_correlation(WP, 0) == 1.0
    assert abs(analytic_correlation(WP, 1)) < 1e-12
    c1 = analytic_correlation(WP, 1, FilterChain())
    assert 1e-3 < abs(c1) < 0.3


def test_correlation_from_samples():
    rng = np.random.default_rng(5)
    q = rng.normal(size=(20000, 6))
    assert correlation_coefficient(q, 0) == 1.0
    assert abs(correlation_coefficient(q, 1)) < 4 / math.sqrt(20000 * 5)
    with pytest.raises(Degenerate):
        correlation_coefficient(np.ones((10, 4)), 1)
    with pytest.raises(InvalidParameter):
        correlation_coefficient(q[:, :1], 0)
