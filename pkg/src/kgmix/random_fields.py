"""Initial measures: spectral covariances, samplers and the counterexample ensemble.

The product family used throughout has spectral density

    q0_hat^{ii}(k) = D_i * prod_l f(k_l),   f(z) = ((1 - cos(a z)) / z^2)^2,  a = r0 / sqrt(n),

whose inverse transform is exact in closed form: (1 - cos(a z))/z^2 is the
transform of half the triangle (a - |z|)_+, so f is the transform of a
quarter of the triangle's autocorrelation, a^3/4 times the cardinal cubic
B-spline at z/a.  Sampling that real-space profile on the lattice and
transforming gives a spectral matrix that is PSD by construction (it is the
aliased sum of a nonnegative function) and a covariance with exact compact
support |z_l| < 2a per axis.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
import scipy.fft as sfft

from .spectral_core import FieldPair, LatticeSpec, dispersion

PSD_TOLERANCE = 1e-10

KINDS = ("initial", "evolved", "limit", "gibbs")


class NotPSDError(ValueError):
    pass


def spectral_profile(z, r0: float, n: int):
    """f(z) = ((1 - cos(r0 z / sqrt n)) / z^2)^2 with f(0) = r0^4 / (4 n^2)."""
    a = r0 / math.sqrt(n)
    z = np.asarray(z, dtype=float)
    small = np.abs(a * z) < 1e-4
    zs = np.where(small, 1.0, z)
    # 1 - cos x = 2 sin^2(x/2) avoids cancellation at moderate x
    g = 2.0 * np.sin(0.5 * a * zs) ** 2 / zs**2
    # Taylor: (1 - cos az)/z^2 = a^2/2 - a^4 z^2/24 + ...
    g = np.where(small, 0.5 * a * a - a**4 * z * z / 24.0, g)
    return g * g


def cubic_bspline(x):
    """Cardinal cubic B-spline on [-2, 2] with unit integral."""
    ax = np.abs(np.asarray(x, dtype=float))
    inner = 2.0 / 3.0 - ax**2 + 0.5 * ax**3
    outer = (2.0 - ax) ** 3 / 6.0
    return np.where(ax < 1, inner, np.where(ax < 2, outer, 0.0))


def correlation_profile(z, r0: float, n: int):
    """Inverse transform of ``spectral_profile``: (a^3/4) B3(z/a)."""
    a = r0 / math.sqrt(n)
    return 0.25 * a**3 * cubic_bspline(np.asarray(z, dtype=float) / a)


@dataclass(frozen=True)
class SpectralCovariance:
    """Per-wavenumber 2x2 matrix q_hat^{ij}(k), entries stored as shape + (2, 2)."""

    lattice: LatticeSpec
    entries: np.ndarray = field(repr=False)
    kind: str = "initial"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown kind {self.kind!r}")
        if self.entries.shape != self.lattice.shape + (2, 2):
            raise ValueError("entries must have shape lattice.shape + (2, 2)")
        if not np.all(np.isfinite(self.entries)):
            raise ValueError("non-finite spectral entries")

    def __getitem__(self, ij):
        return self.entries[(...,) + tuple(ij)]

    def real_space(self) -> np.ndarray:
        """Lattice covariance q^{ij}(z), z in centered lattice order (origin at index 0)."""
        lat = self.lattice
        q = sfft.ifftn(self.entries, axes=tuple(range(lat.dim))) / lat.cell_volume
        return q.real if np.allclose(q.imag, 0, atol=1e-14 * max(np.max(np.abs(q)), 1e-300)) else q

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(0.5 * (self.entries + np.conj(np.swapaxes(self.entries, -1, -2))))

    def check_psd(self, tol: float = PSD_TOLERANCE):
        lam = self.eigenvalues()
        scale = max(float(np.max(np.abs(lam))), 1e-300)
        herm = np.max(np.abs(self.entries - np.conj(np.swapaxes(self.entries, -1, -2))))
        if herm > 1e-10 * scale:
            raise NotPSDError(f"spectral matrix not Hermitian (defect {herm:.3g})")
        worst = float(np.min(lam))
        if worst < -tol * scale:
            raise NotPSDError(f"spectral matrix has eigenvalue {worst:.3g} (scale {scale:.3g})")
        return worst

    def total_mass(self) -> float:
        return float(np.sum(np.linalg.norm(self.entries, axis=(-2, -1))))

    def with_kind(self, kind: str) -> "SpectralCovariance":
        return SpectralCovariance(self.lattice, self.entries, kind)


def _lattice_spectrum_from_profile(lattice: LatticeSpec, diag_profiles) -> np.ndarray:
    lat = lattice
    entries = np.zeros(lat.shape + (2, 2))
    for i, prof in enumerate(diag_profiles):
        if prof is None:
            continue
        entries[..., i, i] = np.real(lat.fft(prof))
    return entries


def _product_profile(lattice: LatticeSpec, r0: float, scale: float = 1.0):
    """prod_l correlation_profile(z_l / scale) on the lattice."""
    out = np.ones(lattice.shape)
    for xj in lattice.coordinates:
        out = out * correlation_profile(xj / scale, r0, lattice.dim)
    return out


def support_per_axis(r0: float, n: int) -> float:
    """Per-axis correlation support 2 r0 / sqrt(n)."""
    return 2.0 * r0 / math.sqrt(n)


def build_spectral_density(lattice: LatticeSpec, D0: float, D1: float, r0: float,
                           scale: float = 1.0) -> SpectralCovariance:
    """Diagonal product density q_hat^{ii} = D_i prod f(k_l) on the lattice.

    ``scale`` applies the correlation-radius scaling q_r^{ij}(z) =
    r^{2-n-i-j} q^{ij}(z/r); scale=1 is the plain density.
    """
    if D0 < 0 or D1 < 0:
        raise ValueError("D0 and D1 must be nonnegative")
    if not r0 > 0:
        raise ValueError("r0 must be positive")
    reach = support_per_axis(r0, lattice.dim) * scale
    if not reach < lattice.box_length / 2:
        raise ValueError(f"correlation support {reach:.4g} does not fit inside L/2")
    n = lattice.dim
    base = _product_profile(lattice, r0, scale)
    profiles = [D0 * scale ** (2 - n) * base, D1 * scale ** (-n) * base]
    return SpectralCovariance(lattice, _lattice_spectrum_from_profile(lattice, profiles), "initial")


@dataclass(frozen=True)
class MixingProfile:
    """Finite-range bound phi(r) <= bound for r < effective_range, zero beyond."""

    support_radius: float
    effective_range: float
    bound: float = 1.0

    def __post_init__(self):
        if self.support_radius < 0 or self.effective_range < 0 or self.bound < 0:
            raise ValueError("mixing profile parameters must be nonnegative")

    def phi(self, r):
        return np.where(np.asarray(r) < self.effective_range, self.bound, 0.0)


def mixing_condition_check(profile: MixingProfile, n: int,
                           phi: Optional[Callable] = None) -> float:
    """int_0^inf r^(n-1) phi(r)^(1/2) dr.

    Closed form bound^(1/2) R^n / n for the finite-range indicator bound; an
    explicit ``phi`` is integrated numerically over [0, R].
    """
    R = profile.effective_range
    if phi is None:
        return math.sqrt(profile.bound) * R**n / n
    from scipy.integrate import quad

    return quad(lambda r: r ** (n - 1) * math.sqrt(max(float(phi(r)), 0.0)), 0.0, R, limit=200)[0]


@dataclass(frozen=True)
class MeasureSpec:
    spectral: SpectralCovariance
    mixing: MixingProfile
    mass: float
    kind: str = "gaussian"
    pointwise_maps: Optional[tuple] = None
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("gaussian", "mapped", "counterexample"):
            raise ValueError(f"unknown measure kind {self.kind!r}")
        if self.kind == "mapped" and self.pointwise_maps is None:
            raise ValueError("mapped measure needs pointwise maps")

    @property
    def lattice(self) -> LatticeSpec:
        return self.spectral.lattice

    def mean_energy_density(self) -> float:
        """e0 = q^{11}(0) - Lap q^{00}(0) + m^2 q^{00}(0) from the Gaussian spectral matrix."""
        lat = self.lattice
        w2 = dispersion(lat, self.mass).omega ** 2
        return float(np.real(np.sum(self.spectral[1, 1] + w2 * self.spectral[0, 0]))) / lat.volume

    def to_dict(self) -> dict:
        return {"kind": self.kind, "mass": self.mass, **self.params}


def gaussian_measure(lattice: LatticeSpec, m: float, D0: float, D1: float, r0: float,
                     scale: float = 1.0) -> MeasureSpec:
    spec = build_spectral_density(lattice, D0, D1, r0, scale)
    reach = support_per_axis(r0, lattice.dim) * scale
    mixing = MixingProfile(support_radius=r0 * scale, effective_range=reach)
    params = {"D0": D0, "D1": D1, "r0": r0, "scale": scale}
    return MeasureSpec(spec, mixing, float(m), "gaussian", None, params)


def unit_variance_amplitude(r0: float, n: int) -> float:
    """D making the pointwise variance q^{ii}(0) of the product family equal to one."""
    return 1.0 / float(correlation_profile(0.0, r0, n)) ** n


# ---------------------------------------------------------------- samplers

def _spectral_sqrt(spectral: SpectralCovariance) -> np.ndarray:
    """Per-mode PSD square root of the circulant symbol q_hat / dx^n."""
    lat = spectral.lattice
    lam = spectral.entries / lat.cell_volume
    lam = 0.5 * (lam + np.conj(np.swapaxes(lam, -1, -2)))
    w, vec = np.linalg.eigh(lam)
    scale = max(float(np.max(np.abs(w))), 1e-300)
    if np.min(w) < -PSD_TOLERANCE * scale:
        raise NotPSDError(f"spectral matrix has eigenvalue {np.min(w):.3g}")
    w = np.clip(w, 0.0, None)
    root = np.einsum("...ij,...j,...kj->...ik", vec, np.sqrt(w), np.conj(vec))
    if np.allclose(root.imag, 0.0, atol=1e-15 * math.sqrt(scale)):
        root = root.real
    return root


def _is_diagonal(spectral: SpectralCovariance) -> bool:
    return not (np.any(spectral.entries[..., 0, 1]) or np.any(spectral.entries[..., 1, 0]))


def sample_rng(seed: int, sample_index: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(int(seed), spawn_key=(int(sample_index),))))


class GaussianSampler:
    """Draws real Gaussian fields whose lattice covariance is spectral.real_space()."""

    def __init__(self, spectral: SpectralCovariance):
        spectral.check_psd()
        self.spectral = spectral
        self.lattice = spectral.lattice
        lat = self.lattice
        if _is_diagonal(spectral):
            lam = np.real(np.stack([spectral[0, 0], spectral[1, 1]])) / lat.cell_volume
            self._diag = np.sqrt(np.clip(lam, 0.0, None))
            self._root = None
        else:
            self._diag = None
            self._root = _spectral_sqrt(spectral)

    def white(self, seed: int, indices) -> np.ndarray:
        lat = self.lattice
        out = np.empty((len(indices), 2) + lat.shape)
        for row, idx in enumerate(indices):
            out[row] = sample_rng(seed, idx).standard_normal((2,) + lat.shape)
        return out

    def color(self, noise: np.ndarray) -> np.ndarray:
        lat = self.lattice
        axes = tuple(range(-lat.dim, 0))
        xi = sfft.fftn(noise, axes=axes)
        if self._diag is not None:
            xi = xi * self._diag
        else:
            xi = _mode_matvec(self._root, xi)
        return sfft.ifftn(xi, axes=axes).real

    def draw(self, seed: int, indices) -> np.ndarray:
        """Fields of shape (len(indices), 2, *lattice.shape)."""
        return self.color(self.white(seed, indices))


def _mode_matvec(root: np.ndarray, xi: np.ndarray) -> np.ndarray:
    # root: shape + (2, 2); xi: (batch, 2) + shape
    out = np.empty_like(xi)
    out[:, 0] = root[..., 0, 0] * xi[:, 0] + root[..., 0, 1] * xi[:, 1]
    out[:, 1] = root[..., 1, 0] * xi[:, 0] + root[..., 1, 1] * xi[:, 1]
    return out


def sample_gaussian(measure: MeasureSpec, seed: int, sample_index: int) -> FieldPair:
    if measure.kind == "counterexample":
        raise ValueError("counterexample measures are not spectral; use counterexample_ensemble")
    fields = GaussianSampler(measure.spectral).draw(seed, [sample_index])[0]
    return FieldPair(measure.lattice, fields[0], fields[1])


def apply_pointwise_map(y: FieldPair, f0: Callable, f1: Callable) -> FieldPair:
    return FieldPair(y.lattice, f0(y.u), f1(y.v))


class SaturatingMap:
    """Odd C^1 map x -> tanh(gain x) with bounded derivative ``gain``."""

    def __init__(self, gain: float = 1.0):
        self.gain = float(gain)

    def __call__(self, x):
        return np.tanh(self.gain * x)

    def __repr__(self):
        return f"SaturatingMap(gain={self.gain})"


def mapped_measure(base: MeasureSpec, f0: Callable, f1: Callable, quadrature_points: int = 201) -> MeasureSpec:
    """Distribution of (f0(u), f1(v)) for (u, v) ~ base; spectral entry is the mapped covariance."""
    if base.kind != "gaussian":
        raise ValueError("mapped measures are built on a Gaussian base")
    spec = mapped_covariance(base.spectral, f0, f1, quadrature_points)
    params = dict(base.params)
    params["maps"] = [repr(f0), repr(f1)]
    return MeasureSpec(spec, base.mixing, base.mass, "mapped", (f0, f1), params)


def mapped_covariance(spectral: SpectralCovariance, f0: Callable, f1: Callable,
                      quadrature_points: int = 201) -> SpectralCovariance:
    """Covariance of (f0(Y^0), f1(Y^1)) for a real stationary Gaussian Y.

    E f_i(X) f_j(Z) with (X, Z) jointly normal is evaluated by a tensor
    trapezoid rule on [-10, 10]^2 against the standard normal weight, at
    every lattice lag with nonzero correlation.  For maps analytic in a strip
    around the real axis (tanh included) the rule converges geometrically in
    the node count and is at machine precision with 201 nodes per axis.
    Odd maps of independent variables have zero covariance, so lags with
    zero Gaussian correlation stay zero.
    """
    lat = spectral.lattice
    q = np.real(spectral.real_space())
    nodes = np.linspace(-10.0, 10.0, quadrature_points)
    weights = np.exp(-0.5 * nodes**2)
    weights = weights / weights.sum()
    maps = (f0, f1)
    out = np.zeros_like(q)
    for i in range(2):
        for j in range(2):
            si = math.sqrt(max(q[(0,) * lat.dim + (i, i)], 0.0))
            sj = math.sqrt(max(q[(0,) * lat.dim + (j, j)], 0.0))
            cij = q[..., i, j]
            if si == 0 or sj == 0:
                continue
            rho = np.clip(cij / (si * sj), -1.0, 1.0)
            mask = np.abs(rho) > 1e-15
            r = rho[mask][:, None, None]
            a = nodes[None, :, None]
            b = nodes[None, None, :]
            x = si * a
            z = sj * (r * a + np.sqrt(1 - r * r) * b)
            vals = maps[i](x) * maps[j](z)
            out[..., i, j][mask] = np.einsum("pab,a,b->p", vals, weights, weights)
    entries = np.real(lat.fft(np.moveaxis(out, (-2, -1), (0, 1))))
    entries = np.moveaxis(entries, (0, 1), (-2, -1))
    return SpectralCovariance(lat, np.ascontiguousarray(entries), "initial")


def _map_fields(measure: MeasureSpec, fields: np.ndarray) -> np.ndarray:
    if measure.kind != "mapped":
        return fields
    f0, f1 = measure.pointwise_maps
    out = np.empty_like(fields)
    out[:, 0] = f0(fields[:, 0])
    out[:, 1] = f1(fields[:, 1])
    return out


def draw_initial(measure: MeasureSpec, seed: int, indices, sampler: GaussianSampler | None = None) -> np.ndarray:
    """Initial states for any measure kind, shape (len(indices), 2, *shape)."""
    if measure.kind == "counterexample":
        lat = measure.lattice
        out = np.empty((len(indices), 2) + lat.shape)
        for row, idx in enumerate(indices):
            y = counterexample_ensemble(lat, seed, idx)
            out[row, 0], out[row, 1] = y.u, y.v
        return out
    if sampler is None:
        sampler = GaussianSampler(_base_spectral(measure))
    return _map_fields(measure, sampler.draw(seed, indices))


def _base_spectral(measure: MeasureSpec) -> SpectralCovariance:
    """Spectral matrix of the Gaussian field that is drawn before any pointwise map."""
    if measure.kind == "mapped":
        p = measure.params
        return build_spectral_density(measure.lattice, p["D0"], p["D1"], p["r0"], p.get("scale", 1.0))
    return measure.spectral


def make_sampler(measure: MeasureSpec) -> GaussianSampler | None:
    if measure.kind == "counterexample":
        return None
    return GaussianSampler(_base_spectral(measure))


def sample_measure(measure: MeasureSpec, seed: int, sample_index: int) -> FieldPair:
    fields = draw_initial(measure, seed, [sample_index], make_sampler(measure))[0]
    return FieldPair(measure.lattice, fields[0], fields[1])


# ---------------------------------------------------------- scaling family

def scaled_family(base: MeasureSpec, r: float) -> MeasureSpec:
    """Measure with correlation radius scaled by r: q_r^{ij}(z) = r^{2-n-i-j} q^{ij}(z/r).

    Evaluated exactly from the closed-form profile rather than by
    interpolating the base spectrum.  ``params['temperature']`` records the
    target T = (1/2) int q0^{11}(z) dz of the family.
    """
    if not 0 < r <= 1:
        raise ValueError("r must lie in (0, 1]")
    if base.kind != "gaussian" or "r0" not in base.params:
        raise ValueError("scaled_family needs a Gaussian product-family base")
    lat = base.lattice
    p = base.params
    scale = p.get("scale", 1.0) * r
    reach = support_per_axis(p["r0"], lat.dim) * scale
    if reach < 4 * lat.spacing:
        raise ValueError(
            f"scaled correlation support {reach:.4g} is below lattice resolution (4 dx = {4 * lat.spacing:.4g})"
        )
    out = gaussian_measure(lat, base.mass, p["D0"], p["D1"], p["r0"], scale)
    out.params["temperature"] = family_temperature(base)
    return out


def family_temperature(base: MeasureSpec) -> float:
    """T = (1/2) int q0^{11}(z) dz for the real scalar field (lattice quadrature)."""
    q = np.real(base.spectral.real_space())
    return 0.5 * base.lattice.sum(q[..., 1, 1])


def g2_functional(measure: MeasureSpec) -> float:
    """(1/2) int (q^{11} - Lap q^{00} + m^2 q^{00}) dz by lattice quadrature."""
    lat = measure.lattice
    q = np.real(measure.spectral.real_space())
    q00 = q[..., 0, 0]
    lap = np.real(lat.ifft(-lat.k_squared * lat.fft(q00)))
    return 0.5 * lat.sum(q[..., 1, 1] - lap + measure.mass**2 * q00)


# ------------------------------------------------------------ counterexample

def counterexample_ensemble(lattice: LatticeSpec, seed: int, sample_index: int) -> FieldPair:
    """u0 = +-1 everywhere with probability 1/2 each, v0 = 0."""
    sign = 1.0 if sample_rng(seed, sample_index).random() < 0.5 else -1.0
    return FieldPair(lattice, np.full(lattice.shape, sign), np.zeros(lattice.shape))


def counterexample_measure(lattice: LatticeSpec, m: float) -> MeasureSpec:
    # Spectral slot holds nothing meaningful: the ensemble is neither mixing
    # nor absolutely continuous and bypasses the spectral sampler.
    spec = SpectralCovariance(lattice, np.zeros(lattice.shape + (2, 2)), "initial")
    mix = MixingProfile(support_radius=math.inf, effective_range=math.inf)
    return MeasureSpec(spec, mix, float(m), "counterexample", None, {})


def with_params(measure: MeasureSpec, **extra) -> MeasureSpec:
    return replace(measure, params={**measure.params, **extra})
