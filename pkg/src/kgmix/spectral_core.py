"""Constant-coefficient Klein-Gordon dynamics on a periodic lattice.

Fields are stored with the origin at index 0 along every axis; physical
coordinates are the centered representatives in [-L/2, L/2).  Transforms
use the fixed convention

    forward:  w_hat(k) = dx**n * sum_x w(x) exp(-i k.x)
    inverse:  w(x)     = L**-n * sum_k w_hat(k) exp(+i k.x)

so that lattice sums approximate the continuum integrals.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.fft as sfft

from .bessel import j1


class LatticeMismatch(ValueError):
    pass


class WindowViolation(ValueError):
    """A cone/support statement was requested outside the torus window."""


@dataclass(frozen=True)
class LatticeSpec:
    dim: int
    points_per_axis: int
    box_length: float

    def __post_init__(self):
        if self.dim not in (1, 2, 3):
            raise ValueError(f"dim must be 1, 2 or 3, got {self.dim}")
        n = self.points_per_axis
        if n % 2 or n < 8:
            raise ValueError(f"points_per_axis must be even and >= 8, got {n}")
        if not self.box_length > 0:
            raise ValueError(f"box_length must be positive, got {self.box_length}")

    @property
    def spacing(self) -> float:
        return self.box_length / self.points_per_axis

    @property
    def shape(self) -> tuple:
        return (self.points_per_axis,) * self.dim

    @property
    def size(self) -> int:
        return self.points_per_axis**self.dim

    @property
    def axes(self) -> tuple:
        return tuple(range(-self.dim, 0))

    @property
    def cell_volume(self) -> float:
        return self.spacing**self.dim

    @property
    def volume(self) -> float:
        return self.box_length**self.dim

    @cached_property
    def axis_wavenumbers(self) -> np.ndarray:
        """k_j = 2 pi m / L in FFT order, m in {-N/2, ..., N/2 - 1}."""
        n = self.points_per_axis
        return 2 * np.pi * np.fft.fftfreq(n, d=1.0 / n) / self.box_length

    @cached_property
    def axis_coordinates(self) -> np.ndarray:
        """Centered coordinates, index 0 is the origin."""
        n = self.points_per_axis
        idx = np.arange(n)
        return np.where(idx < n // 2, idx, idx - n) * self.spacing

    @cached_property
    def wavevectors(self) -> tuple:
        return tuple(np.meshgrid(*([self.axis_wavenumbers] * self.dim), indexing="ij", sparse=True))

    @cached_property
    def coordinates(self) -> tuple:
        return tuple(np.meshgrid(*([self.axis_coordinates] * self.dim), indexing="ij", sparse=True))

    @cached_property
    def k_squared(self) -> np.ndarray:
        return sum(kj**2 for kj in self.wavevectors) + np.zeros(self.shape)

    @cached_property
    def radius(self) -> np.ndarray:
        """|x| measured in the centered fundamental domain."""
        return np.sqrt(sum(xj**2 for xj in self.coordinates) + np.zeros(self.shape))

    def ball(self, radius: float) -> np.ndarray:
        return self.radius < radius

    def fft(self, values):
        return sfft.fftn(values, axes=self.axes) * self.cell_volume

    def ifft(self, values):
        return sfft.ifftn(values, axes=self.axes) / self.cell_volume

    def sum(self, values):
        """Lattice quadrature of ``values`` over the spatial axes."""
        return np.sum(values, axis=self.axes) * self.cell_volume

    def check_window(self, reach: float, what: str = "reach"):
        if not reach < self.box_length / 2:
            raise WindowViolation(
                f"{what} = {reach:.6g} must stay below L/2 = {self.box_length / 2:.6g}"
            )


def make_lattice(dim: int, points_per_axis: int, box_length: float) -> LatticeSpec:
    return LatticeSpec(int(dim), int(points_per_axis), float(box_length))


def _same_lattice(a: LatticeSpec, b: LatticeSpec):
    if a != b:
        raise LatticeMismatch(f"lattice mismatch: {a} vs {b}")


@dataclass(frozen=True)
class FieldPair:
    """State Y = (u, v): position component and velocity component."""

    lattice: LatticeSpec
    u: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        for name in ("u", "v"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != self.lattice.shape:
                raise LatticeMismatch(f"{name} has shape {arr.shape}, lattice is {self.lattice.shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            object.__setattr__(self, name, arr)

    @property
    def scalar_kind(self) -> str:
        return "complex" if np.iscomplexobj(self.u) or np.iscomplexobj(self.v) else "real"

    @classmethod
    def zeros(cls, lattice: LatticeSpec, dtype=float) -> "FieldPair":
        return cls(lattice, np.zeros(lattice.shape, dtype), np.zeros(lattice.shape, dtype))

    def swapped(self) -> "FieldPair":
        return FieldPair(self.lattice, self.v, self.u)

    def to_complex(self) -> "FieldPair":
        return FieldPair(self.lattice, self.u.astype(complex), self.v.astype(complex))

    def norm(self) -> float:
        return math.sqrt(self.lattice.sum(np.abs(self.u) ** 2 + np.abs(self.v) ** 2))


@dataclass(frozen=True)
class TestFunction:
    """Compactly supported pair (psi0, psi1) paired against states."""

    __test__ = False  # not a pytest class

    lattice: LatticeSpec
    psi0: np.ndarray
    psi1: np.ndarray
    support_radius: float

    def __post_init__(self):
        lat = self.lattice
        if not self.support_radius < lat.box_length / 2:
            raise WindowViolation("support_radius must be below L/2")
        outside = ~lat.ball(self.support_radius)
        for name in ("psi0", "psi1"):
            arr = np.asarray(getattr(self, name))
            if arr.shape != lat.shape:
                raise LatticeMismatch(f"{name} has shape {arr.shape}, lattice is {lat.shape}")
            if np.any(arr[outside] != 0):
                raise ValueError(f"{name} does not vanish outside the support ball")
            object.__setattr__(self, name, arr)

    @property
    def u(self):
        return self.psi0

    @property
    def v(self):
        return self.psi1

    def as_pair(self) -> FieldPair:
        return FieldPair(self.lattice, self.psi0, self.psi1)

    def scaled(self, factor: float) -> "TestFunction":
        return TestFunction(self.lattice, factor * self.psi0, factor * self.psi1, self.support_radius)


def smooth_bump(r, radius):
    """exp(1 - 1/(1 - (r/R)^2)) inside the ball, exactly zero outside; peak 1."""
    rho2 = (np.asarray(r, dtype=float) / radius) ** 2
    out = np.zeros_like(rho2)
    inside = rho2 < 1
    out[inside] = np.exp(1.0 - 1.0 / (1.0 - rho2[inside]))
    return out


def bump_test_function(lattice: LatticeSpec, radius: float, amp0: float = 1.0, amp1: float = 0.0,
                       shift: float = 0.0) -> TestFunction:
    """Smooth bump test function centered at the origin.

    ``shift`` displaces the first component's profile along the last axis
    (kept inside the same support ball) so that psi0 and psi1 differ.
    """
    lat = lattice
    base = smooth_bump(lat.radius, radius)
    psi1 = amp1 * base
    if shift:
        if abs(shift) >= radius:
            raise ValueError("shift must be smaller than the radius")
        coords = list(lat.coordinates)
        coords[-1] = coords[-1] - shift
        rs = np.sqrt(sum(c**2 for c in coords) + np.zeros(lat.shape))
        psi0 = amp0 * smooth_bump(rs, radius - abs(shift))
    else:
        psi0 = amp0 * base
    return TestFunction(lat, psi0, psi1, radius)


def _components(obj):
    if isinstance(obj, TestFunction):
        return obj.lattice, obj.psi0, obj.psi1
    return obj.lattice, obj.u, obj.v


def pairing(y, psi) -> float:
    """<Y, Psi> = Re sum_x (u conj(psi0) + v conj(psi1)) dx^n."""
    lat_y, u, v = _components(y)
    lat_p, p0, p1 = _components(psi)
    _same_lattice(lat_y, lat_p)
    return float(np.real(lat_y.sum(u * np.conj(p0) + v * np.conj(p1))))


@dataclass(frozen=True)
class Dispersion:
    mass: float
    omega: np.ndarray = field(repr=False)


def dispersion(lattice: LatticeSpec, m: float) -> Dispersion:
    if not m > 0:
        raise ValueError(f"mass must be positive, got {m}")
    return Dispersion(float(m), np.sqrt(lattice.k_squared + m * m))


@dataclass(frozen=True)
class PropagatorField:
    """Per-mode 2x2 matrix [[cos wt, sin wt / w], [-w sin wt, cos wt]]."""

    time: float
    cos: np.ndarray = field(repr=False)
    sin_over_omega: np.ndarray = field(repr=False)
    omega_sin: np.ndarray = field(repr=False)

    def matrix(self) -> np.ndarray:
        out = np.empty(self.cos.shape + (2, 2))
        out[..., 0, 0] = self.cos
        out[..., 0, 1] = self.sin_over_omega
        out[..., 1, 0] = -self.omega_sin
        out[..., 1, 1] = self.cos
        return out

    def det(self) -> np.ndarray:
        return self.cos**2 + self.sin_over_omega * self.omega_sin


def propagator(disp: Dispersion, t: float) -> PropagatorField:
    if not np.isfinite(t):
        raise ValueError("time must be finite")
    w = disp.omega
    s = np.sin(w * t)
    return PropagatorField(float(t), np.cos(w * t), s / w, w * s)


def _apply(prop: PropagatorField, uh, vh, transpose=False):
    if transpose:
        return prop.cos * uh - prop.omega_sin * vh, prop.sin_over_omega * uh + prop.cos * vh
    return prop.cos * uh + prop.sin_over_omega * vh, -prop.omega_sin * uh + prop.cos * vh


def _back_to_space(lattice, arr, real, reference_norm):
    out = lattice.ifft(arr)
    if real:
        resid = np.max(np.abs(out.imag)) if out.size else 0.0
        if resid > 1e-10 * max(reference_norm, 1e-300):
            raise FloatingPointError(f"imaginary residue {resid:.3g} on a real evolution")
        return out.real
    return out


def evolve_arrays(lattice: LatticeSpec, u, v, m: float, t: float, transpose=False):
    """Evolve stacked arrays (leading batch axes allowed) by the exact propagator."""
    prop = propagator(dispersion(lattice, m), t)
    real = not (np.iscomplexobj(u) or np.iscomplexobj(v))
    uh, vh = _apply(prop, lattice.fft(u), lattice.fft(v), transpose)
    scale = float(np.max(np.abs(u), initial=0.0) + np.max(np.abs(v), initial=0.0))
    return (_back_to_space(lattice, uh, real, scale),
            _back_to_space(lattice, vh, real, scale))


def evolve(y: FieldPair, m: float, t: float) -> FieldPair:
    """Y(t) = G_t Y(0) mode by mode."""
    u, v = evolve_arrays(y.lattice, y.u, y.v, m, t)
    return FieldPair(y.lattice, u, v)


def adjoint_evolve(psi, m: float, t: float) -> FieldPair:
    """Phi(., t) = (phi_dot, phi) with phi the free solution started from (psi1, psi0).

    Returned as a FieldPair whose ``u`` slot holds Phi^0 and ``v`` holds Phi^1,
    so that pairing(Y, adjoint_evolve(Psi, m, t)) == pairing(evolve(Y, m, t), Psi).
    """
    lat, p0, p1 = _components(psi)
    u, v = evolve_arrays(lat, p0, p1, m, t, transpose=True)
    return FieldPair(lat, u, v)


def mode_energy(y: FieldPair, m: float) -> float:
    """sum_k (|v_hat|^2 + w^2 |u_hat|^2), the conserved quadratic energy."""
    lat = y.lattice
    w2 = lat.k_squared + m * m
    return float(np.sum(np.abs(lat.fft(y.v)) ** 2 + w2 * np.abs(lat.fft(y.u)) ** 2))


def spectral_gradient(lattice: LatticeSpec, values) -> list:
    """Spectral partial derivatives; complex output keeps the Nyquist term."""
    vh = sfft.fftn(values, axes=lattice.axes)
    return [sfft.ifftn(1j * kj * vh, axes=lattice.axes) for kj in lattice.wavevectors]


def local_energy(y: FieldPair, m: float, radius: float) -> float:
    """Lattice quadrature of |v|^2 + |grad u|^2 + m^2 |u|^2 over the ball |x| < R."""
    lat = y.lattice
    if not 0 < radius <= lat.box_length / 2:
        raise ValueError(f"radius must lie in (0, L/2], got {radius}")
    dens = np.abs(y.v) ** 2 + m * m * np.abs(y.u) ** 2
    for g in spectral_gradient(lat, y.u):
        dens = dens + np.abs(g) ** 2
    return float(lat.sum(np.where(lat.ball(radius), dens, 0.0)))


def h_seminorm(psi, radius: float | None = None) -> float:
    """sqrt of int (|Psi0|^2 + |Psi1|^2 + |grad Psi1|^2) over |x| <= R (whole box if None)."""
    lat, p0, p1 = _components(psi)
    dens = np.abs(p0) ** 2 + np.abs(p1) ** 2
    for g in spectral_gradient(lat, p1):
        dens = dens + np.abs(g) ** 2
    if radius is not None:
        dens = np.where(lat.radius <= radius, dens, 0.0)
    return math.sqrt(lat.sum(dens))


def bracket(values):
    """<z> = sqrt(1 + |z|^2)."""
    return np.sqrt(1.0 + values)


def weighted_sobolev_norm(lattice: LatticeSpec, values, s: float, alpha: float) -> float:
    """|| <x>^alpha Lambda^s w ||_L2 with Lambda^s the Fourier multiplier <k>^s."""
    lat = lattice
    w = np.asarray(values)
    if w.shape != lat.shape:
        raise LatticeMismatch("field shape does not match lattice")
    if s:
        w = lat.ifft(bracket(lat.k_squared) ** s * lat.fft(w))
    if alpha:
        w = bracket(lat.radius**2) ** alpha * w
    return math.sqrt(lat.sum(np.abs(w) ** 2))


def pair_sobolev_norm(y: FieldPair, s: float, alpha: float) -> float:
    """|||Y|||_{s,alpha} = ||u||_{1+s,alpha} + ||v||_{s,alpha}."""
    return (weighted_sobolev_norm(y.lattice, y.u, 1 + s, alpha)
            + weighted_sobolev_norm(y.lattice, y.v, s, alpha))


def fundamental_solution_3d(x_radius, t: float, m: float):
    """Regular part of the retarded 3D Klein-Gordon kernel.

    -(m / 4 pi) J1(m s) / s with s = sqrt(t^2 - |x|^2) for |x| < t, zero
    otherwise.  The delta layer on the sphere |x| = t is not included.
    """
    if not t > 0:
        raise ValueError("t must be positive")
    r = np.asarray(x_radius, dtype=float)
    s2 = t * t - r * r
    inside = s2 > 0
    s = np.sqrt(np.where(inside, s2, 1.0))
    ms = m * s
    # J1(ms)/s -> m/2 as s -> 0
    ratio = np.where(ms > 1e-8, j1(ms) / s, 0.5 * m)
    out = np.where(inside, -(m / (4 * np.pi)) * ratio, 0.0)
    return out if out.ndim else float(out)
