"""Klein-Gordon dynamics with a compactly supported magnetic potential (2D).

    u_tt = sum_j (D_j - i A_j)^2 u - m^2 u

The right side is split into the free part Lap u - m^2 u and the
first-order perturbation

    L u = -i sum_j [D_j(A_j u) + A_j D_j u] - sum_j A_j^2 u,

which is written in symmetric form so the spatially discrete operator stays
self-adjoint and the gauge-covariant energy is conserved by the
semi-discrete system.  Time stepping is an integrating-factor (Lawson)
fourth-order Runge-Kutta scheme: the free part is propagated exactly and RK4
only sees L.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.fft as sfft

from .covariance import limit_covariance, quadratic_form_eval
from .random_fields import MeasureSpec
from .spectral_core import (
    FieldPair,
    LatticeSpec,
    TestFunction,
    _components,
    adjoint_evolve,
    dispersion,
    propagator,
    h_seminorm,
    spectral_gradient,
)

STABILITY_FACTOR = 0.5   # largest admissible dt / dx
DEFAULT_STEP_FACTOR = 0.2


class StabilityViolation(ValueError):
    pass


@dataclass(frozen=True)
class MagneticPotential:
    """A = (-x2 a(|x|), x1 a(|x|)) with a smooth bump a supported in |x| < R0."""

    lattice: LatticeSpec
    A1: np.ndarray = field(repr=False)
    A2: np.ndarray = field(repr=False)
    support_radius: float
    amplitude: float

    @property
    def components(self):
        return (self.A1, self.A2)

    @property
    def is_free(self) -> bool:
        return self.amplitude == 0

    def curl(self) -> np.ndarray:
        """d1 A2 - d2 A1 by spectral differentiation."""
        g2 = spectral_gradient(self.lattice, self.A2)
        g1 = spectral_gradient(self.lattice, self.A1)
        return np.real(g2[0] - g1[1])

    def curl_exact(self) -> np.ndarray:
        """2 a + rho a'(rho) from the closed-form profile."""
        rho = self.lattice.radius
        a, da = _bump_and_derivative(rho, self.support_radius, self.amplitude)
        return 2 * a + rho * da

    def to_dict(self) -> dict:
        return {"support_radius": self.support_radius, "amplitude": self.amplitude}


def _bump_and_derivative(rho, R0, amplitude):
    x2 = (np.asarray(rho, dtype=float) / R0) ** 2
    inside = x2 < 1
    gap = np.where(inside, 1.0 - x2, 1.0)
    a = np.where(inside, amplitude * np.exp(-1.0 / gap), 0.0)
    # d/drho exp(-1/(1 - rho^2/R0^2)) = -2 rho / (R0^2 (1 - x2)^2) * exp(...)
    da = np.where(inside, -2.0 * np.asarray(rho) / (R0 * R0 * gap * gap) * a, 0.0)
    return a, da


def build_potential(lattice: LatticeSpec, R0: float, amplitude: float) -> MagneticPotential:
    if lattice.dim != 2:
        raise ValueError("the magnetic solver is two-dimensional")
    if not 0 < R0 < lattice.box_length / 4:
        raise ValueError(f"R0 must lie in (0, L/4), got {R0}")
    if amplitude < 0:
        raise ValueError("amplitude must be non-negative")
    x1, x2 = lattice.coordinates
    a, _ = _bump_and_derivative(lattice.radius, R0, amplitude)
    A1 = -x2 * a + np.zeros(lattice.shape)
    A2 = x1 * a + np.zeros(lattice.shape)
    return MagneticPotential(lattice, A1, A2, float(R0), float(amplitude))


def perturbation(potential: MagneticPotential, u: np.ndarray) -> np.ndarray:
    """L u for the (possibly batched) complex array u."""
    lat = potential.lattice
    axes = lat.axes
    ks = lat.wavevectors
    uh = sfft.fftn(u, axes=axes)
    out = np.zeros(np.shape(u), dtype=complex)
    sq = np.zeros(lat.shape)
    for A, k in zip(potential.components, ks):
        du = sfft.ifftn(1j * k * uh, axes=axes)
        dAu = sfft.ifftn(1j * k * sfft.fftn(A * u, axes=axes), axes=axes)
        out += -1j * (dAu + A * du)
        sq = sq + A * A
    return out - sq * u


def covariant_energy(pair: FieldPair, potential: MagneticPotential, m: float) -> float:
    """int (|v|^2 + sum_j |(D_j - i A_j) u|^2 + m^2 |u|^2) dx."""
    lat = pair.lattice
    dens = np.abs(pair.v) ** 2 + m * m * np.abs(pair.u) ** 2
    for A, g in zip(potential.components, spectral_gradient(lat, pair.u)):
        dens = dens + np.abs(g - 1j * A * pair.u) ** 2
    return float(lat.sum(dens))


@dataclass
class MagneticState:
    pair: FieldPair
    time: float = 0.0
    step_size: float | None = None
    steps: int = 0

    @classmethod
    def from_pair(cls, pair) -> "MagneticState":
        lat, u, v = _components(pair)
        return cls(FieldPair(lat, np.asarray(u, dtype=complex), np.asarray(v, dtype=complex)))


class _FreeFlow:
    """Exact free propagation by fixed steps, with the trig tables cached."""

    def __init__(self, lattice: LatticeSpec, m: float, h: float):
        self.lattice = lattice
        disp = dispersion(lattice, m)
        self.props = {key: propagator(disp, key * h) for key in (0.5, 1.0)}

    def __call__(self, u, v, frac):
        p = self.props[frac]
        axes = self.lattice.axes
        uh = sfft.fftn(u, axes=axes)
        vh = sfft.fftn(v, axes=axes)
        return (sfft.ifftn(p.cos * uh + p.sin_over_omega * vh, axes=axes),
                sfft.ifftn(-p.omega_sin * uh + p.cos * vh, axes=axes))

    def velocity_only(self, v, frac):
        """Propagate (0, v): saves the transform of the zero slot."""
        p = self.props[frac]
        axes = self.lattice.axes
        vh = sfft.fftn(v, axes=axes)
        return sfft.ifftn(p.sin_over_omega * vh, axes=axes), sfft.ifftn(p.cos * vh, axes=axes)


def _lawson_step(potential, flow: _FreeFlow, u, v, h):
    L = lambda w: perturbation(potential, w)  # noqa: E731
    # stage vectors N(y) = (0, L y_u); only the second slot is nonzero
    k1 = L(u)
    a_u, _ = flow(u, v + 0.5 * h * k1, 0.5)
    k2 = L(a_u)
    e_u, _ = flow(u, v, 0.5)
    k3 = L(e_u)
    f_u, f_v = flow(u, v, 1.0)
    g_u, _ = flow.velocity_only(k3, 0.5)
    k4 = L(f_u + h * g_u)
    s1_u, s1_v = flow.velocity_only(k1, 1.0)
    s23_u, s23_v = flow.velocity_only(k2 + k3, 0.5)
    new_u = f_u + h / 6 * (s1_u + 2 * s23_u)
    new_v = f_v + h / 6 * (s1_v + 2 * s23_v + k4)
    return new_u, new_v


def check_step(lattice: LatticeSpec, dt: float):
    if not 0 < dt <= STABILITY_FACTOR * lattice.spacing:
        raise StabilityViolation(
            f"dt = {dt:.4g} exceeds the stability bound {STABILITY_FACTOR} dx = {STABILITY_FACTOR * lattice.spacing:.4g}"
        )


def magnetic_evolve(state: MagneticState, potential: MagneticPotential, m: float, t_target: float,
                    dt: float | None = None, reach: float | None = None) -> MagneticState:
    """Integrate from state.time to t_target (either direction).

    ``reach`` is the support radius of the initial data at time zero; when
    given, the window t + reach + R0 < L/2 is enforced.
    """
    lat = potential.lattice
    if state.pair.lattice != lat:
        raise ValueError("state and potential live on different lattices")
    if reach is not None:
        lat.check_window(abs(t_target) + reach + potential.support_radius, "t + support radius + R0")
    dt = DEFAULT_STEP_FACTOR * lat.spacing if dt is None else float(dt)
    check_step(lat, dt)
    span = t_target - state.time
    if span == 0:
        return state
    nsteps = max(1, math.ceil(abs(span) / dt - 1e-9))
    h = span / nsteps
    u = np.asarray(state.pair.u, dtype=complex)
    v = np.asarray(state.pair.v, dtype=complex)
    flow = _FreeFlow(lat, m, h)
    for _ in range(nsteps):
        u, v = _lawson_step(potential, flow, u, v, h)
    return MagneticState(FieldPair(lat, u, v), float(t_target), abs(h), state.steps + nsteps)


def magnetic_adjoint_evolve(psi, potential: MagneticPotential, m: float, t: float,
                            dt: float | None = None) -> FieldPair:
    """U'(t) Psi: swap components, evolve with the same equation, swap back."""
    lat, p0, p1 = _components(psi)
    reach = getattr(psi, "support_radius", None)
    st = MagneticState.from_pair(FieldPair(lat, p1, p0))
    out = magnetic_evolve(st, potential, m, t, dt, reach)
    return out.pair.swapped()


def adjoint_trajectory(psi, potential: MagneticPotential, m: float, times, dt: float | None = None):
    """U'(t) Psi at increasing times, integrating once along the way."""
    lat, p0, p1 = _components(psi)
    reach = getattr(psi, "support_radius", None)
    state = MagneticState.from_pair(FieldPair(lat, p1, p0))
    out = []
    for t in times:
        state = magnetic_evolve(state, potential, m, float(t), dt, reach)
        out.append(state.pair.swapped())
    return out, state.steps


# ---------------------------------------------------------------- decay

def epsilon_rate(t):
    """(t + 1)^-1 ln^-2 (t + 2), the two-dimensional local decay rate."""
    t = np.asarray(t, dtype=float)
    return 1.0 / ((t + 1.0) * np.log(t + 2.0) ** 2)


def moving_average(values, width: int = 5) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    if len(values) < width:
        return values.copy()
    return np.convolve(values, np.ones(width) / width, mode="valid")


@dataclass
class LocalDecayRecord:
    times: np.ndarray
    local_norm: np.ndarray
    epsilon: np.ndarray
    ratio: np.ndarray
    steps: int

    def smoothed_monotone(self, width: int = 5) -> bool:
        avg = moving_average(self.local_norm, width)
        return bool(np.all(np.diff(avg) <= 0))

    def ratio_spread(self, tail_from: float = 0.0) -> float:
        sel = self.times >= tail_from
        r = self.ratio[sel]
        return float(r.max() / r.min())


def local_decay_probe(psi: TestFunction, potential: MagneticPotential, m: float, t_list,
                      R0: float | None = None, dt: float | None = None) -> LocalDecayRecord:
    """H-seminorm of U'(t) Psi over |x| <= R0 along t_list, and its ratio to epsilon(t)."""
    R0 = potential.support_radius if R0 is None else R0
    times = np.asarray(sorted(float(t) for t in t_list))
    potential.lattice.check_window(times[-1] + psi.support_radius + potential.support_radius,
                                   "max(t) + support radius + R0")
    states, steps = adjoint_trajectory(psi, potential, m, times, dt)
    norms = np.asarray([h_seminorm(s, R0) for s in states])
    eps = epsilon_rate(times)
    return LocalDecayRecord(times, norms, eps, norms / eps, steps)


# ------------------------------------------------------------ wave operator

@dataclass
class CookRecord:
    times: np.ndarray
    increment_norm: np.ndarray      # H-norm of the integrand at each node
    residual_times: np.ndarray = field(default_factory=lambda: np.zeros(0))
    residual: np.ndarray = field(default_factory=lambda: np.zeros(0))
    steps: int = 0

    def increment_at(self, t: float) -> float:
        return float(np.interp(t, self.times, self.increment_norm))

    def decay_factor(self, t_early: float, t_late: float) -> float:
        return self.increment_at(t_early) / self.increment_at(t_late)


def cook_wave_operator(psi: TestFunction, potential: MagneticPotential, m: float, T_max: float,
                       dt_quad: float = 0.5, residual_times=(), dt: float | None = None):
    """W Psi = Psi + int_0^T_max U0'(-t) (L psi(t), 0) dt with U'(t) Psi = (psi_dot, psi).

    Trapezoidal rule on a uniform grid of spacing dt_quad.  Returns
    (W Psi as a complex FieldPair, CookRecord).  ``residual_times`` requests
    || U'(T) Psi - U0'(T) W Psi ||_H at those T <= T_max.
    """
    lat = potential.lattice
    lat.check_window(T_max + psi.support_radius + potential.support_radius, "T_max + support radius + R0")
    n = max(1, math.ceil(T_max / dt_quad - 1e-9))
    times = np.linspace(0.0, T_max, n + 1)
    base = FieldPair(lat, np.asarray(psi.psi0, dtype=complex), np.asarray(psi.psi1, dtype=complex))
    if potential.is_free:
        rec = CookRecord(times, np.zeros_like(times))
        rec.residual_times = np.asarray(residual_times, dtype=float)
        rec.residual = np.zeros(len(rec.residual_times))
        return base, rec
    want = sorted(set(float(t) for t in residual_times))
    if want and want[-1] > T_max:
        raise ValueError("residual times must not exceed T_max")
    grid = sorted(set(times.tolist()) | set(want))
    states, steps = adjoint_trajectory(psi, potential, m, grid, dt)
    total_u = np.zeros(lat.shape, dtype=complex)
    total_v = np.zeros(lat.shape, dtype=complex)
    norms = []
    node_index = {t: i for i, t in enumerate(grid)}
    step = T_max / n
    for k, t in enumerate(times):
        st = states[node_index[float(t)]]
        integrand = adjoint_evolve(FieldPair(lat, perturbation(potential, st.v), np.zeros(lat.shape, complex)), m, -t)
        norms.append(h_seminorm(integrand))
        w = 0.5 * step if k in (0, n) else step
        total_u += w * integrand.u
        total_v += w * integrand.v
    W = FieldPair(lat, base.u + total_u, base.v + total_v)
    rec = CookRecord(times, np.asarray(norms), steps=steps)
    if want:
        res = []
        for T in want:
            free = adjoint_evolve(W, m, T)
            diff = FieldPair(lat, states[node_index[T]].u - free.u, states[node_index[T]].v - free.v)
            res.append(h_seminorm(diff))
        rec.residual_times = np.asarray(want)
        rec.residual = np.asarray(res)
    return W, rec


# ------------------------------------------------- equilibration, magnetic

@dataclass
class TheoremAReport:
    t: float
    estimate: complex
    stderr: float
    prediction: float
    quadratic_form: float
    count: int

    @property
    def deviation(self) -> float:
        return abs(self.estimate - self.prediction)

    def within(self, sigmas: float = 4.0) -> bool:
        return self.deviation <= sigmas * self.stderr


def theorem_a_experiment(measure: MeasureSpec, potential: MagneticPotential, m: float, psi: TestFunction,
                         t: float, count: int, seed: int = 0, T_max: float | None = None,
                         dt_quad: float = 0.5, workers: int = 1, W=None) -> TheoremAReport:
    """MC estimate of E exp(i <U(t) Y0, Psi>) vs exp(-Q_inf(W Psi, W Psi)/2)."""
    from .clt import SampleBatch, characteristic_from_pairings

    if count < 1000:
        from .clt import InsufficientSamples

        raise InsufficientSamples("the equilibration check needs at least 1000 samples")
    if W is None:
        T_max = t if T_max is None else T_max
        W, _ = cook_wave_operator(psi, potential, m, T_max, dt_quad)
    qinf = limit_covariance(measure.spectral, dispersion(measure.lattice, m))
    Q = quadratic_form_eval(qinf, W)
    phi = magnetic_adjoint_evolve(psi, potential, m, t)
    batch = SampleBatch(measure, count, seed, workers=workers)
    x = batch.pair_with([phi])[:, 0]
    est = characteristic_from_pairings(x)
    return TheoremAReport(float(t), est.value, est.stderr, math.exp(-0.5 * Q), Q, count)
