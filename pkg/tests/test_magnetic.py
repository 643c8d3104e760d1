import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from kgmix import magnetic as M
from kgmix.clt import InsufficientSamples
from kgmix.random_fields import gaussian_measure
from kgmix.spectral_core import (
    FieldPair,
    WindowViolation,
    bump_test_function,
    evolve,
    h_seminorm,
    make_lattice,
    pairing,
    spectral_gradient,
)

LAT = make_lattice(2, 64, 40.0)
MASS = 1.0


@pytest.fixture(scope="module")
def pot():
    return M.build_potential(LAT, 4.0, 0.8)


@pytest.fixture(scope="module")
def psi():
    return bump_test_function(LAT, 4.0, 1.0, 0.5)


def random_complex(lat, seed):
    rng = np.random.default_rng(seed)
    return rng.standard_normal(lat.shape) + 1j * rng.standard_normal(lat.shape)


# ------------------------------------------------------------- potential

def test_zero_amplitude_is_free():
    p = M.build_potential(LAT, 4.0, 0.0)
    assert p.is_free and not np.any(p.A1) and not np.any(p.A2)
    u = random_complex(LAT, 0)
    assert not np.any(M.perturbation(p, u))


def test_potential_support_and_curl(pot):
    outside = LAT.radius >= 4.0
    assert np.max(np.abs(pot.A1[outside])) < 1e-12 and np.max(np.abs(pot.A2[outside])) < 1e-12
    assert LAT.sum(np.abs(pot.curl_exact())) > 0


def _curl_error(n):
    p = M.build_potential(make_lattice(2, n, 40.0), 8.0, 1.0)
    return np.max(np.abs(p.curl() - p.curl_exact())) / np.max(np.abs(p.curl_exact()))


def test_spectral_curl_converges_to_closed_form():
    coarse, fine = _curl_error(128), _curl_error(256)
    assert fine < coarse / 10 and fine < 1e-3


def test_potential_guards():
    with pytest.raises(ValueError):
        M.build_potential(LAT, 10.0, 1.0)
    with pytest.raises(ValueError):
        M.build_potential(LAT, 2.0, -1.0)
    with pytest.raises(ValueError):
        M.build_potential(make_lattice(1, 64, 40.0), 2.0, 1.0)


# ------------------------------------------------------------- operator

@given(st.integers(0, 2**31))
def test_perturbation_is_self_adjoint(seed):
    p = M.build_potential(LAT, 4.0, 0.8)
    u, w = random_complex(LAT, seed), random_complex(LAT, seed + 1)
    lhs = np.vdot(w, M.perturbation(p, u))
    rhs = np.vdot(M.perturbation(p, w), u)
    assert abs(lhs - rhs) < 1e-10 * (abs(lhs) + 1)


def _expansion_error(n):
    lat = make_lattice(2, n, 40.0)
    p = M.build_potential(lat, 8.0, 0.8)
    u = bump_test_function(lat, 10.0).psi0.astype(complex)
    grads = spectral_gradient(lat, u)
    div_a = np.real(spectral_gradient(lat, p.A1)[0] + spectral_gradient(lat, p.A2)[1])
    expanded = -2j * (p.A1 * grads[0] + p.A2 * grads[1]) - 1j * div_a * u - (p.A1**2 + p.A2**2) * u
    return np.max(np.abs(M.perturbation(p, u) - expanded))


def test_perturbation_matches_expanded_form():
    # the symmetric and expanded forms differ only by aliasing, which vanishes under refinement
    coarse, fine = _expansion_error(128), _expansion_error(256)
    assert fine < coarse / 10 and fine < 1e-5


def test_covariant_energy_free_case_is_mode_energy():
    from kgmix.spectral_core import mode_energy

    y = FieldPair(LAT, random_complex(LAT, 3), random_complex(LAT, 4))
    free = M.build_potential(LAT, 4.0, 0.0)
    assert M.covariant_energy(y, free, MASS) == pytest.approx(mode_energy(y, MASS) / LAT.volume, rel=1e-12)


# ------------------------------------------------------------ integrator

def test_free_case_reproduces_exact_propagator(psi):
    free = M.build_potential(LAT, 4.0, 0.0)
    st0 = M.MagneticState.from_pair(psi.as_pair())
    out = M.magnetic_evolve(st0, free, MASS, 10.0)
    ref = evolve(psi.as_pair(), MASS, 10.0)
    scale = np.max(np.abs(ref.u))
    assert np.max(np.abs(out.pair.u - ref.u)) / scale < 1e-8
    assert out.steps == math.ceil(10.0 / (0.2 * LAT.spacing) - 1e-9)


def test_energy_drift_and_reversibility(pot, psi):
    st0 = M.MagneticState.from_pair(psi.as_pair())
    e0 = M.covariant_energy(st0.pair, pot, MASS)
    out = M.magnetic_evolve(st0, pot, MASS, 12.0)
    assert abs(M.covariant_energy(out.pair, pot, MASS) - e0) / e0 < 1e-6
    back = M.magnetic_evolve(out, pot, MASS, 0.0)
    assert np.max(np.abs(back.pair.u - psi.psi0)) < 1e-6


def test_duality_for_magnetic_group(pot, psi):
    rng = np.random.default_rng(1)
    y = FieldPair(LAT, rng.standard_normal(LAT.shape), rng.standard_normal(LAT.shape))
    t = 6.0
    fwd = M.magnetic_evolve(M.MagneticState.from_pair(y), pot, MASS, t).pair
    adj = M.magnetic_adjoint_evolve(psi, pot, MASS, t)
    assert pairing(fwd, psi) == pytest.approx(pairing(y, adj), rel=1e-8, abs=1e-10)


def test_finite_propagation_speed():
    lat = make_lattice(2, 128, 60.0)
    pot = M.build_potential(lat, 5.0, 0.8)
    data = bump_test_function(lat, 12.0, 1.0, 0.5)
    t = 10.0
    out = M.magnetic_evolve(M.MagneticState.from_pair(data.as_pair()), pot, MASS, t, reach=12.0)
    dens = np.abs(out.pair.u) ** 2 + np.abs(out.pair.v) ** 2
    outside = lat.radius > t + 12.0 + 2 * lat.spacing
    assert dens[outside].sum() / dens.sum() < 1e-8


def test_stability_and_window_guards(pot, psi):
    st0 = M.MagneticState.from_pair(psi.as_pair())
    with pytest.raises(M.StabilityViolation):
        M.magnetic_evolve(st0, pot, MASS, 1.0, dt=LAT.spacing)
    with pytest.raises(WindowViolation):
        M.magnetic_evolve(st0, pot, MASS, 15.0, reach=4.0)


# ------------------------------------------------------------- decay/cook

def test_epsilon_rate():
    assert M.epsilon_rate(0.0) == pytest.approx(1 / math.log(2) ** 2)
    assert M.epsilon_rate(5.0) / M.epsilon_rate(40.0) == pytest.approx(41 / 6 * (math.log(42) / math.log(7)) ** 2)


def test_local_decay_probe_free_case_empties_the_ball(psi):
    free = M.build_potential(LAT, 4.0, 0.0)
    rec = M.local_decay_probe(psi, free, MASS, [2.0, 6.0, 11.0])
    assert np.all(np.diff(rec.local_norm) < 0) and rec.local_norm[-1] < 0.7 * rec.local_norm[0]
    assert np.allclose(rec.ratio, rec.local_norm / M.epsilon_rate(rec.times))


def test_cook_free_case_is_identity(psi):
    free = M.build_potential(LAT, 4.0, 0.0)
    W, rec = M.cook_wave_operator(psi, free, MASS, 8.0, residual_times=(4.0,))
    assert np.array_equal(W.u, psi.psi0) and np.array_equal(W.v, psi.psi1)
    assert np.all(rec.increment_norm == 0) and np.all(rec.residual == 0)


def test_cook_residual_vanishes_at_horizon(pot, psi):
    W, rec = M.cook_wave_operator(psi, pot, MASS, 10.0, dt_quad=0.25, residual_times=(2.0, 10.0))
    assert rec.residual[1] < 0.05 * rec.residual[0]
    assert h_seminorm(FieldPair(LAT, W.u - psi.psi0, W.v - psi.psi1)) > 0
    with pytest.raises(WindowViolation):
        M.cook_wave_operator(psi, pot, MASS, 14.0)


def test_theorem_a_requires_samples(pot, psi):
    meas = gaussian_measure(LAT, MASS, 1.0, 1.0, 2.0)
    with pytest.raises(InsufficientSamples):
        M.theorem_a_experiment(meas, pot, MASS, psi, 2.0, 10)
