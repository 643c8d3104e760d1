import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgmix import clt
from kgmix.covariance import evolve_covariance, limit_covariance, quadratic_form_eval
from kgmix.random_fields import SaturatingMap, counterexample_measure, gaussian_measure, mapped_measure
from kgmix.spectral_core import (
    FieldPair,
    WindowViolation,
    bump_test_function,
    dispersion,
    evolve,
    make_lattice,
    pairing,
)

LAT = make_lattice(1, 256, 200.0)
M = 1.0


@pytest.fixture(scope="module")
def gauss():
    return gaussian_measure(LAT, M, 0.75, 0.75, 2.0)


@pytest.fixture(scope="module")
def psi():
    return bump_test_function(LAT, 3.0, 1.0, 0.5)


@pytest.fixture(scope="module")
def batch(gauss):
    return clt.SampleBatch(gauss, 2000, 17, times=(0.0, 30.0, 60.0))


# ----------------------------------------------------------------- batch

def test_batch_guards(gauss, psi):
    with pytest.raises(clt.InsufficientSamples):
        clt.SampleBatch(gauss, 1, 0)
    small = clt.SampleBatch(gauss, 500, 0)
    with pytest.raises(clt.InsufficientSamples):
        clt.empirical_char_functional(small, psi, M, 1.0)
    with pytest.raises(clt.InsufficientSamples):
        clt.gaussianity_diagnostics(small, psi, M, 1.0)
    with pytest.raises(clt.InsufficientSamples):
        clt.empirical_covariance(clt.SampleBatch(gauss, 50, 0), M, 0.0, [0])


def test_adjoint_and_direct_pairings_agree(gauss, psi):
    b = clt.SampleBatch(gauss, 40, 5)
    t = 23.0
    via_adjoint = b.pairings(psi, M, t)
    fields = b.chunk(range(40))
    for s in range(40):
        y = FieldPair(LAT, fields[s, 0], fields[s, 1])
        assert via_adjoint[s] == pytest.approx(pairing(evolve(y, M, t), psi), abs=1e-10)


def test_worker_count_does_not_change_results(gauss, psi):
    a = clt.SampleBatch(gauss, 300, 9, chunk_size=64).pairings(psi, M, 5.0)
    b = clt.SampleBatch(gauss, 300, 9, chunk_size=64, workers=3).pairings(psi, M, 5.0)
    assert np.array_equal(a, b)


def test_pairings_many_matches_single(gauss, psi):
    b = clt.SampleBatch(gauss, 100, 2)
    many = b.pairings_many(psi, M, [1.0, 7.0])
    fresh = clt.SampleBatch(gauss, 100, 2)
    assert np.array_equal(many[:, 1], fresh.pairings(psi, M, 7.0))


# ------------------------------------------------------------ statistics

def test_jackknife_of_mean_equals_standard_error():
    x = np.random.default_rng(0).standard_normal(1000)
    est, se = clt.jackknife(np.mean, x, blocks=1000)
    assert est == pytest.approx(x.mean())
    assert se == pytest.approx(x.std(ddof=1) / math.sqrt(1000), rel=1e-10)


def test_char_functional_of_zero_is_one(batch):
    zero = FieldPair(LAT, np.zeros(LAT.shape), np.zeros(LAT.shape))
    est = clt.empirical_char_functional(batch, zero, M, 30.0)
    assert est.value == 1.0 and est.stderr == 0.0


def test_char_functional_bounds_and_conjugation(batch, psi):
    est = clt.empirical_char_functional(batch, psi, M, 30.0)
    neg = clt.empirical_char_functional(batch, psi.scaled(-1.0), M, 30.0)
    assert abs(est.value) <= 1.0
    assert neg.value == np.conj(est.value)


@pytest.mark.parametrize("t", [0.0, 60.0])
def test_char_functional_gaussian_identity(batch, gauss, psi, t):
    q = evolve_covariance(gauss.spectral, dispersion(LAT, M), t)
    target = math.exp(-0.5 * quadratic_form_eval(q, psi))
    est = clt.empirical_char_functional(batch, psi, M, t)
    assert est.within(target, 4.0)


def test_variance_identity(batch, gauss, psi):
    for t in (0.0, 30.0, 60.0):
        q = evolve_covariance(gauss.spectral, dispersion(LAT, M), t)
        d = clt.gaussianity_diagnostics(batch, psi, M, t)
        assert abs(d.variance - quadratic_form_eval(q, psi)) <= 4 * d.variance_se
        assert d.gaussian_within(4.0)


def test_mapped_measure_is_non_gaussian_at_time_zero():
    lat = make_lattice(1, 256, 200.0)
    base = gaussian_measure(lat, M, 1.0, 1.0, 8.0)
    mapped = mapped_measure(base, SaturatingMap(3.0), SaturatingMap(3.0))
    narrow = bump_test_function(lat, 1.0, 1.0, 0.0)
    b = clt.SampleBatch(mapped, 2000, 4)
    d = clt.gaussianity_diagnostics(b, narrow, M, 0.0)
    assert abs(d.excess_kurtosis) > 4 * d.excess_kurtosis_se


def test_trend_decreasing():
    assert clt.trend_decreasing([0.5, 0.2, 0.1], [0.01, 0.01, 0.01])
    assert clt.trend_decreasing([0.1, 0.11], [0.01, 0.01])
    assert not clt.trend_decreasing([0.1, 0.3], [0.01, 0.01])


# ------------------------------------------------------------ covariance

def test_empirical_covariance_of_zero_measure_is_zero():
    zero = gaussian_measure(LAT, M, 0.0, 0.0, 2.0)
    est = clt.empirical_covariance(clt.SampleBatch(zero, 100, 0), M, 3.0, [0, 1, 2])
    assert np.all(est.mean == 0) and np.all(est.stderr == 0)


@pytest.mark.parametrize("t", [0.0, 60.0])
def test_empirical_covariance_matches_engine(batch, gauss, t):
    lags = [0, 1, 3, -3, 5]
    est = clt.empirical_covariance(batch, M, t, lags)
    q = np.real(evolve_covariance(gauss.spectral, dispersion(LAT, M), t).real_space())
    exact = clt.exact_lag_covariance(q, est.lags)
    assert np.all(est.z_scores(exact) < 4.5)


def test_empirical_covariance_symmetric_under_lag_negation(batch):
    est = clt.empirical_covariance(batch, M, 30.0, [4, -4])
    diff = np.abs(est.mean[0, 0, 0] - est.mean[1, 0, 0])
    assert diff < 4 * math.hypot(est.stderr[0, 0, 0], est.stderr[1, 0, 0])


# ---------------------------------------------------------- room-corridor

@given(st.floats(1.0, 10.0), st.floats(0.1, 5.0))
def test_layout_partition_of_unity(d, rho):
    layout = clt.RoomCorridorLayout(d, rho)
    _, room, corr = layout.indicators(LAT)
    assert np.array_equal(room.sum(axis=1) + corr.sum(axis=1), np.ones(LAT.points_per_axis))


def test_layout_validation():
    with pytest.raises(ValueError):
        clt.RoomCorridorLayout(0.5, 1.0)
    with pytest.raises(ValueError):
        clt.RoomCorridorLayout(2.0, 0.0)
    with pytest.raises(ValueError):
        clt.RoomCorridorLayout(150.0, 100.0).indicators(LAT)


def test_default_layout():
    lay = clt.default_layout(100.0)
    assert lay.room_width == pytest.approx(100 / math.log(100))
    assert lay.corridor_width == pytest.approx(100**0.75)


def test_room_corridor_decomposition(gauss):
    lat = make_lattice(1, 1024, 300.0)
    meas = gaussian_measure(lat, M, 0.75, 0.75, 2.0)
    psi = bump_test_function(lat, 10.0, 1.0, 0.5)
    b = clt.SampleBatch(meas, 300, 8)
    out = clt.room_corridor_decompose(b, psi, M, 40.0, clt.RoomCorridorLayout(6.0, 2.0))
    assert out.max_residual <= 1e-10
    floor = 1e-10 * out.total_var
    assert np.all(out.room_var[out.outside_cone[:, 0]] <= floor)
    assert np.all(out.exact_room_var[out.outside_cone[:, 0]] <= floor)
    assert out.outside_cone[:, 0].any() and not out.outside_cone[:, 0].all()
    live = out.room_se > 0
    assert np.all(np.abs(out.room_var - out.exact_room_var)[live] <= 5 * out.room_se[live])
    assert np.sum(out.exact_room_var) + np.sum(out.exact_corridor_var) > 0
    with pytest.raises(WindowViolation):
        clt.room_corridor_decompose(b, psi, M, 145.0, clt.RoomCorridorLayout(6.0, 2.0))


# ------------------------------------------------------------------ decay

def test_decay_probe_one_dimension():
    lat = make_lattice(1, 2048, 600.0)
    psi = bump_test_function(lat, 10.0, 1.0, 0.5)
    rec = clt.decay_probe(psi, M, [20, 40, 80, 160, 280])
    assert -0.65 <= rec.slope <= -0.35
    assert np.max(rec.leakage) < 1e-8
    with pytest.raises(WindowViolation):
        clt.decay_probe(psi, M, [295.0])


def test_loglog_slope_of_power_law():
    t = np.array([1.0, 2.0, 4.0, 8.0])
    assert clt.loglog_slope(t, 3 * t**-0.7) == pytest.approx(-0.7)


# --------------------------------------------------------- counterexample

def test_counterexample_closed_form_and_periodicity():
    lat = make_lattice(1, 64, 32.0)
    psi = bump_test_function(lat, 4.0, 1.0, 0.7)
    m = 1.3
    period = 2 * math.pi / m
    times = np.linspace(0, 6 * period, 97)
    rep = clt.counterexample_demo(lat, m, psi, times, 1000, seed=2)
    assert rep.max_closed_form_error <= 1e-10
    shifted = clt.counterexample_closed_form(psi, m, times + period)
    assert np.max(np.abs(shifted - rep.closed_form)) <= 1e-10
    assert rep.amplitude_last >= 0.9 * rep.amplitude_first > 0
    assert np.all(np.abs(rep.mc - rep.exact) <= 4 * rep.mc_se + 1e-12)


def test_counterexample_batch_draws_constants():
    lat = make_lattice(1, 16, 8.0)
    b = clt.SampleBatch(counterexample_measure(lat, 1.0), 20, 0)
    f = b.chunk(range(20))
    assert set(np.unique(f[:, 0])) <= {-1.0, 1.0} and np.all(f[:, 1] == 0)
