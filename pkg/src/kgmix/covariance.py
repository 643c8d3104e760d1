"""Exact covariance dynamics in Fourier space.

All routines act mode by mode on the 2x2 spectral matrices; nothing here
is stochastic.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .random_fields import MeasureSpec, SpectralCovariance, family_temperature, g2_functional, scaled_family
from .spectral_core import Dispersion, LatticeSpec, LatticeMismatch, _components, bracket, dispersion, propagator


@dataclass(frozen=True)
class GibbsSpec:
    temperature: float
    mass: float

    def __post_init__(self):
        if not (self.temperature > 0 and self.mass > 0):
            raise ValueError("temperature and mass must be positive")


def evolve_covariance(q: SpectralCovariance, disp: Dispersion, t: float) -> SpectralCovariance:
    """q_t(k) = G_t(k) q_0(k) G_t(k)^T."""
    g = propagator(disp, t).matrix()
    out = np.einsum("...ij,...jk,...lk->...il", g, q.entries, g)
    return SpectralCovariance(q.lattice, out, "evolved" if q.kind != "gibbs" else "gibbs")


def limit_covariance(q: SpectralCovariance, disp: Dispersion) -> SpectralCovariance:
    """Time average of the propagated covariance.

    q_inf^{00} = (q^{00} + q^{11}/w^2)/2,  q_inf^{11} = (q^{11} + w^2 q^{00})/2,
    q_inf^{01} = -q_inf^{10} = (q^{01} - q^{10})/2.
    """
    w2 = disp.omega**2
    e = q.entries
    out = np.empty_like(e)
    out[..., 0, 0] = 0.5 * (e[..., 0, 0] + e[..., 1, 1] / w2)
    out[..., 1, 1] = 0.5 * (e[..., 1, 1] + w2 * e[..., 0, 0])
    out[..., 0, 1] = 0.5 * (e[..., 0, 1] - e[..., 1, 0])
    out[..., 1, 0] = -out[..., 0, 1]
    return SpectralCovariance(q.lattice, out, "gibbs" if q.kind == "gibbs" else "limit")


def gibbs_covariance(spec: GibbsSpec, lattice: LatticeSpec) -> SpectralCovariance:
    """q^{00} = T/(|k|^2 + m^2), q^{11} = T, zero off-diagonal."""
    e = np.zeros(lattice.shape + (2, 2))
    e[..., 0, 0] = spec.temperature / (lattice.k_squared + spec.mass**2)
    e[..., 1, 1] = spec.temperature
    return SpectralCovariance(lattice, e, "gibbs")


def quadratic_form_eval(q: SpectralCovariance, psi) -> float:
    """L^-n sum_k conj(Psi_hat(k))^T q_hat(k) Psi_hat(k).

    Covariances describe real fields; a complex test function enters through
    its real part, which is what a real field pairs against.
    """
    lat, p0, p1 = _components(psi)
    if lat != q.lattice:
        raise LatticeMismatch("test function and covariance live on different lattices")
    h0 = lat.fft(np.real(p0))
    h1 = lat.fft(np.real(p1))
    e = q.entries
    val = (np.conj(h0) * (e[..., 0, 0] * h0 + e[..., 0, 1] * h1)
           + np.conj(h1) * (e[..., 1, 0] * h0 + e[..., 1, 1] * h1))
    return float(np.real(np.sum(val))) / lat.volume


def weight_constant(lattice: LatticeSpec, alpha: float) -> float:
    """C(alpha) = sum_x <x>^(2 alpha) dx^n."""
    return float(lattice.sum(bracket(lattice.radius**2) ** (2 * alpha)))


def expected_sobolev_norm(q: SpectralCovariance, s: float, alpha: float) -> float:
    """E |||Y|||^2 = C(alpha) L^-n sum_k (<k>^2s q^{11} + <k>^(2(1+s)) q^{00})."""
    lat = q.lattice
    kb = bracket(lat.k_squared)
    spectral_sum = np.sum(kb ** (2 * s) * np.real(q[1, 1]) + kb ** (2 * (1 + s)) * np.real(q[0, 0]))
    return weight_constant(lat, alpha) * float(spectral_sum) / lat.volume


def band_distance(actual: np.ndarray, target: np.ndarray, lattice: LatticeSpec, k_max: float,
                  s: float | None = None) -> float:
    """Relative <k>^(2s)-weighted L1 distance over the band |k| <= k_max.

    The weight <k>^(2s) with s < -n/2 matches the Sobolev spaces on which the
    Gaussian measures converge; default s = -(n + 1)/2.
    """
    if s is None:
        s = -0.5 * (lattice.dim + 1)
    band = lattice.k_squared <= k_max**2
    wgt = bracket(lattice.k_squared) ** (2 * s)
    num = np.sum((wgt * np.abs(actual - target))[band])
    den = np.sum((wgt * np.abs(target))[band])
    return float(num / den)


@dataclass
class GibbsLimitRow:
    r: float
    distance_velocity: float
    distance_position: float
    g2: float


@dataclass
class GibbsLimitReport:
    temperature: float
    k_max: float
    rows: list = field(default_factory=list)

    def distances_monotone(self, slack: float = 0.05) -> bool:
        ok = True
        for prev, cur in zip(self.rows, self.rows[1:]):
            ok &= cur.distance_velocity <= prev.distance_velocity * (1 + slack)
            ok &= cur.distance_position <= prev.distance_position * (1 + slack)
        return bool(ok)

    def g2_relative_error(self) -> float:
        return abs(self.rows[-1].g2 - self.temperature) / self.temperature


def gibbs_limit_experiment(base: MeasureSpec, r_list, temperature: float | None = None,
                           k_max: float | None = None) -> GibbsLimitReport:
    """Distances of q_inf,r to the Gibbs covariance along decreasing r."""
    r_list = [float(r) for r in r_list]
    if any(b >= a for a, b in zip(r_list, r_list[1:])):
        raise ValueError("r_list must be strictly decreasing")
    lat = base.lattice
    T = family_temperature(base) if temperature is None else float(temperature)
    if k_max is None:
        k_max = 0.5 * math.pi / lat.spacing
    disp = dispersion(lat, base.mass)
    w2 = disp.omega**2
    report = GibbsLimitReport(T, k_max)
    for r in r_list:
        fam = scaled_family(base, r)
        qinf = limit_covariance(fam.spectral, disp)
        report.rows.append(GibbsLimitRow(
            r,
            band_distance(np.real(qinf[1, 1]), np.full(lat.shape, T), lat, k_max),
            band_distance(np.real(qinf[0, 0]), T / w2, lat, k_max),
            g2_functional(fam),
        ))
    return report
