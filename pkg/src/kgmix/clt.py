"""Monte Carlo checks of the field central limit theorem.

Random pairings <Y(t), Psi> are computed through the adjoint route
<Y0, Phi(., t)> with Phi = adjoint_evolve(Psi, t): one deterministic
evolution of the test function replaces one evolution per sample.
"""
from __future__ import annotations

import hashlib
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .covariance import quadratic_form_eval
from .random_fields import MeasureSpec, counterexample_measure, draw_initial, make_sampler
from .spectral_core import (
    FieldPair,
    LatticeSpec,
    TestFunction,
    _components,
    adjoint_evolve,
    evolve,
    evolve_arrays,
    pairing,
)


class InsufficientSamples(ValueError):
    pass


def _digest(*arrays) -> str:
    h = hashlib.sha1()
    for a in arrays:
        a = np.ascontiguousarray(a)
        h.update(str(a.dtype).encode())
        h.update(a.tobytes())
    return h.hexdigest()


# grid points held per chunk; bounds peak memory on large two-dimensional lattices
CHUNK_POINTS = 2**23


class SampleBatch:
    """``count`` initial states of ``measure`` keyed by (seed, sample_index).

    Chunks are generated independently and reduced in index order, so any
    worker count gives the same numbers.
    """

    def __init__(self, measure: MeasureSpec, count: int, seed: int, times=(), chunk_size: int = 250,
                 workers: int = 1):
        if count < 2:
            raise InsufficientSamples("a sample batch needs at least two samples")
        self.measure = measure
        self.count = int(count)
        self.seed = int(seed)
        self.times = tuple(times)
        self.chunk_size = max(1, min(int(chunk_size), CHUNK_POINTS // measure.lattice.size))
        self.workers = max(1, int(workers))
        self._sampler = make_sampler(measure)
        self._cache = {}

    @property
    def lattice(self) -> LatticeSpec:
        return self.measure.lattice

    def _ranges(self):
        return [range(s, min(s + self.chunk_size, self.count)) for s in range(0, self.count, self.chunk_size)]

    def chunk(self, indices) -> np.ndarray:
        return draw_initial(self.measure, self.seed, indices, self._sampler)

    def map_chunks(self, fn):
        """Apply fn(indices, fields) to every chunk; results in chunk order."""
        work = lambda idx: fn(idx, self.chunk(idx))  # noqa: E731
        ranges = self._ranges()
        if self.workers == 1:
            return [work(r) for r in ranges]
        with ThreadPoolExecutor(self.workers) as pool:
            return list(pool.map(work, ranges))

    def pair_with(self, phis) -> np.ndarray:
        """Matrix of <Y0_s, Phi_p>, shape (count, len(phis)).  Real fields pair with Re Phi."""
        lat = self.lattice
        mat = np.stack([np.concatenate([np.real(p0).ravel(), np.real(p1).ravel()])
                        for _, p0, p1 in map(_components, phis)], axis=1)

        def work(idx, fields):
            return fields.reshape(len(idx), -1) @ mat * lat.cell_volume

        return np.concatenate(self.map_chunks(work), axis=0)

    def pairings(self, psi, m: float, t: float) -> np.ndarray:
        """<Y(t), Psi> for every sample through the adjoint route."""
        lat, p0, p1 = _components(psi)
        key = ("free", float(m), float(t), _digest(p0, p1))
        if key not in self._cache:
            if float(t) in map(float, self.times):
                # fill every observation time in a single pass over the samples
                self.pairings_many(psi, m, self.times)
            else:
                self._cache[key] = self.pair_with([adjoint_evolve(psi, m, t)])[:, 0]
        return self._cache[key]

    def pairings_many(self, psi, m: float, times) -> np.ndarray:
        """Pairings at several times in one pass over the samples, shape (count, len(times))."""
        lat, p0, p1 = _components(psi)
        missing = [t for t in times if ("free", float(m), float(t), _digest(p0, p1)) not in self._cache]
        if missing:
            vals = self.pair_with([adjoint_evolve(psi, m, t) for t in missing])
            for j, t in enumerate(missing):
                self._cache[("free", float(m), float(t), _digest(p0, p1))] = vals[:, j]
        return np.stack([self.pairings(psi, m, t) for t in times], axis=1)

    def cached(self, key, compute):
        if key not in self._cache:
            self._cache[key] = compute()
        return self._cache[key]


# ------------------------------------------------------------- statistics

def jackknife(stat, data: np.ndarray, blocks: int = 200):
    """Block jackknife estimate and standard error of ``stat`` over axis 0."""
    data = np.asarray(data)
    n = len(data)
    g = min(blocks, n)
    edges = np.linspace(0, n, g + 1).astype(int)
    full = stat(data)
    keep = np.ones(n, dtype=bool)
    reps = []
    for a, b in zip(edges[:-1], edges[1:]):
        keep[a:b] = False
        reps.append(stat(data[keep]))
        keep[a:b] = True
    reps = np.asarray(reps)
    se = np.sqrt((g - 1) / g * np.sum(np.abs(reps - reps.mean(axis=0)) ** 2, axis=0))
    return full, se


def _skewness(x):
    c = x - x.mean()
    return np.mean(c**3) / np.mean(c**2) ** 1.5


def _excess_kurtosis(x):
    c = x - x.mean()
    return np.mean(c**4) / np.mean(c**2) ** 2 - 3.0


@dataclass
class CharFunctionalEstimate:
    value: complex
    stderr_re: float
    stderr_im: float
    count: int

    @property
    def stderr(self) -> float:
        return math.hypot(self.stderr_re, self.stderr_im)

    def deviation(self, target: complex) -> float:
        return abs(self.value - target)

    def within(self, target: complex, sigmas: float = 4.0) -> bool:
        return self.deviation(target) <= sigmas * self.stderr


def characteristic_from_pairings(x: np.ndarray) -> CharFunctionalEstimate:
    z = np.exp(1j * np.asarray(x))
    val, _ = jackknife(np.mean, z)
    _, se_re = jackknife(np.mean, z.real)
    _, se_im = jackknife(np.mean, z.imag)
    return CharFunctionalEstimate(complex(val), float(se_re), float(se_im), len(z))


def empirical_char_functional(batch: SampleBatch, psi, m: float, t: float) -> CharFunctionalEstimate:
    """Sample mean of exp(i <Y(t), Psi>) with jackknife error bars."""
    lat, p0, p1 = _components(psi)
    if not (np.any(p0) or np.any(p1)):
        return CharFunctionalEstimate(1.0 + 0j, 0.0, 0.0, batch.count)
    if batch.count < 1000:
        raise InsufficientSamples("characteristic functional estimates need at least 1000 samples")
    return characteristic_from_pairings(batch.pairings(psi, m, t))


@dataclass
class GaussianityDiagnostics:
    count: int
    mean: float
    mean_se: float
    variance: float
    variance_se: float
    skewness: float
    skewness_se: float
    excess_kurtosis: float
    excess_kurtosis_se: float

    def gaussian_within(self, sigmas: float = 4.0) -> bool:
        return (abs(self.skewness) <= sigmas * self.skewness_se
                and abs(self.excess_kurtosis) <= sigmas * self.excess_kurtosis_se)


def diagnostics_from_pairings(x: np.ndarray) -> GaussianityDiagnostics:
    x = np.asarray(x, dtype=float)
    n = len(x)
    var, var_se = jackknife(lambda a: np.var(a, ddof=1), x)
    sk, sk_se = jackknife(_skewness, x)
    ku, ku_se = jackknife(_excess_kurtosis, x)
    return GaussianityDiagnostics(n, float(x.mean()), float(x.std(ddof=1) / math.sqrt(n)),
                                  float(var), float(var_se), float(sk), float(sk_se), float(ku), float(ku_se))


def gaussianity_diagnostics(batch: SampleBatch, psi, m: float, t: float) -> GaussianityDiagnostics:
    if batch.count < 1000:
        raise InsufficientSamples("diagnostics need at least 1000 samples")
    return diagnostics_from_pairings(batch.pairings(psi, m, t))


def trend_decreasing(values, errors, sigmas: float = 2.0) -> bool:
    """Non-increasing along the sequence up to ``sigmas`` combined error bars."""
    v = list(values)
    e = list(errors)
    return all(b <= a + sigmas * math.hypot(ea, eb) for a, b, ea, eb in zip(v, v[1:], e, e[1:]))


# ------------------------------------------------------------- covariance

@dataclass
class CovarianceEstimate:
    lags: np.ndarray          # integer lattice offsets, shape (L, dim)
    physical_lags: np.ndarray
    mean: np.ndarray          # (L, 2, 2)
    stderr: np.ndarray        # (L, 2, 2)
    count: int

    def z_scores(self, exact: np.ndarray) -> np.ndarray:
        se = np.where(self.stderr > 0, self.stderr, np.inf)
        z = np.abs(self.mean - exact) / se
        return np.where((self.stderr == 0) & (np.abs(self.mean - exact) > 1e-12), np.inf, z)


def _normalize_lags(lattice: LatticeSpec, lag_list) -> np.ndarray:
    lags = np.atleast_2d(np.asarray(lag_list, dtype=int))
    if lags.shape[1] != lattice.dim:
        lags = lags.reshape(-1, lattice.dim)
    return lags


def empirical_covariance(batch: SampleBatch, m: float, t: float, lag_list) -> CovarianceEstimate:
    """Estimates of q_t^{ij}(z) = E Y^i(x+z, t) Y^j(x, t), averaged over x within each sample."""
    if batch.count < 100:
        raise InsufficientSamples("empirical covariance needs at least 100 samples")
    lat = batch.lattice
    lags = _normalize_lags(lat, lag_list)
    axes = tuple(range(-lat.dim, 0))

    def work(idx, fields):
        u, v = fields[:, 0], fields[:, 1]
        if t != 0:
            u, v = evolve_arrays(lat, u, v, m, t)
        comps = (u, v)
        out = np.empty((len(idx), len(lags), 2, 2))
        for li, lag in enumerate(lags):
            for i in range(2):
                shifted = np.roll(comps[i], tuple(-int(s) for s in lag), axis=axes)
                for j in range(2):
                    out[:, li, i, j] = np.mean(shifted * comps[j], axis=axes)
        return out

    per_sample = np.concatenate(batch.map_chunks(work), axis=0)
    n = len(per_sample)
    return CovarianceEstimate(lags, lags * lat.spacing, per_sample.mean(axis=0),
                              per_sample.std(axis=0, ddof=1) / math.sqrt(n), n)


def exact_lag_covariance(q_real_space: np.ndarray, lags: np.ndarray) -> np.ndarray:
    """Pick q^{ij}(z) at integer lattice lags from a real-space covariance array."""
    n = q_real_space.shape[0]
    return np.stack([q_real_space[tuple(int(s) % n for s in lag)] for lag in lags])


# ---------------------------------------------------------- room/corridor

@dataclass(frozen=True)
class RoomCorridorLayout:
    """Slabs along the last axis: rooms [jh, jh + d), corridors [jh + d, (j+1)h)."""

    room_width: float
    corridor_width: float

    def __post_init__(self):
        if not self.room_width >= 1:
            raise ValueError("room width must be at least 1")
        if not self.corridor_width > 0:
            raise ValueError("corridor width must be positive")

    @property
    def period(self) -> float:
        return self.room_width + self.corridor_width

    def index_range(self, lattice: LatticeSpec) -> np.ndarray:
        half = lattice.box_length / 2
        h = self.period
        return np.arange(math.floor(-half / h), math.floor(half / h) + 1)

    def indicators(self, lattice: LatticeSpec):
        """(j, room, corridor) with room/corridor indicator matrices of shape (N, J)."""
        if self.period > lattice.box_length:
            raise ValueError("layout period exceeds the box")
        s = lattice.axis_coordinates
        j = self.index_range(lattice)
        a = j * self.period
        room = (s[:, None] >= a[None, :]) & (s[:, None] < a[None, :] + self.room_width)
        corr = (s[:, None] >= a[None, :] + self.room_width) & (s[:, None] < a[None, :] + self.period)
        return j, room.astype(float), corr.astype(float)


def default_layout(t: float, delta: float = 0.25) -> RoomCorridorLayout:
    """rho_t = t^(1 - delta), d_t = t / ln t (at least 1)."""
    d = max(1.0, t / math.log(t)) if t > math.e else 1.0
    return RoomCorridorLayout(d, t ** (1 - delta))


@dataclass
class RoomCorridorResult:
    t: float
    layout: RoomCorridorLayout
    j: np.ndarray
    room_var: np.ndarray
    room_se: np.ndarray
    corridor_var: np.ndarray
    corridor_se: np.ndarray
    outside_cone: np.ndarray     # (J, 2) flags for (room, corridor)
    max_residual: float
    total_var: float
    exact_room_var: np.ndarray | None = None
    exact_corridor_var: np.ndarray | None = None

    def max_room_var(self) -> float:
        return float(np.max(self.room_var))


def room_corridor_decompose(batch: SampleBatch, psi: TestFunction, m: float, t: float,
                            layout: RoomCorridorLayout, exact: bool = True) -> RoomCorridorResult:
    """Split <Y(t), Psi> into slab contributions r_t^j, c_t^j and estimate their variances."""
    lat = batch.lattice
    lat.check_window(t + psi.support_radius, "t + support radius")
    j, room, corr = layout.indicators(lat)
    phi = adjoint_evolve(psi, m, t)
    other = tuple(range(-lat.dim, -1))

    def work(idx, fields):
        dens = fields[:, 0] * phi.u + fields[:, 1] * phi.v
        prof = (np.sum(dens, axis=other) if other else dens) * lat.cell_volume
        r = prof @ room
        c = prof @ corr
        u, v = evolve_arrays(lat, fields[:, 0], fields[:, 1], m, t)
        direct = np.sum(u * psi.psi0 + v * psi.psi1, axis=tuple(range(-lat.dim, 0))) * lat.cell_volume
        resid = np.abs(r.sum(axis=1) + c.sum(axis=1) - direct)
        return r, c, resid, direct

    parts = batch.map_chunks(work)
    r = np.concatenate([p[0] for p in parts])
    c = np.concatenate([p[1] for p in parts])
    resid = np.concatenate([p[2] for p in parts])
    direct = np.concatenate([p[3] for p in parts])
    n = len(r)
    reach = t + psi.support_radius
    a = j * layout.period
    b_room = a + layout.room_width
    b_corr = a + layout.period
    outside = np.stack([(b_room <= -reach) | (a > reach), (b_corr <= -reach) | (b_room > reach)], axis=1)
    result = RoomCorridorResult(
        t, layout, j,
        np.mean(r**2, axis=0), np.std(r**2, axis=0, ddof=1) / math.sqrt(n),
        np.mean(c**2, axis=0), np.std(c**2, axis=0, ddof=1) / math.sqrt(n),
        outside, float(np.max(resid)), float(np.mean(direct**2)),
    )
    if exact and batch.measure.kind != "counterexample":
        q = batch.measure.spectral
        shape = (1,) * (lat.dim - 1) + (lat.points_per_axis,)
        ev_r, ev_c = [], []
        for col in range(len(j)):
            for ind, dest in ((room[:, col], ev_r), (corr[:, col], ev_c)):
                w = ind.reshape(shape)
                dest.append(quadratic_form_eval(q, FieldPair(lat, phi.u * w, phi.v * w)))
        result.exact_room_var = np.asarray(ev_r)
        result.exact_corridor_var = np.asarray(ev_c)
    return result


# ------------------------------------------------------------------ decay

@dataclass
class DecayRecord:
    times: np.ndarray
    sup_velocity: np.ndarray     # sup |Phi^0|
    sup_position: np.ndarray     # sup |Phi^1|
    sup_norm: np.ndarray         # sup sqrt(|Phi^0|^2 + |Phi^1|^2)
    leakage: np.ndarray          # mass fraction outside |x| <= t + r + 2 dx
    slope: float
    slope_velocity: float
    slope_position: float


def loglog_slope(times, values) -> float:
    return float(np.polyfit(np.log(times), np.log(values), 1)[0])


def decay_probe(psi: TestFunction, m: float, t_list) -> DecayRecord:
    """sup_x |Phi(x, t)| along t_list and the fitted log-log slope."""
    lat = psi.lattice
    times = np.asarray(sorted(float(t) for t in t_list))
    lat.check_window(times[-1] + psi.support_radius, "max(t) + support radius")
    s0, s1, sn, leak = [], [], [], []
    for t in times:
        phi = adjoint_evolve(psi, m, t)
        a0, a1 = np.abs(phi.u), np.abs(phi.v)
        s0.append(a0.max())
        s1.append(a1.max())
        dens = a0**2 + a1**2
        sn.append(math.sqrt(dens.max()))
        outside = lat.radius > t + psi.support_radius + 2 * lat.spacing
        leak.append(dens[outside].sum() / dens.sum())
    s0, s1, sn = map(np.asarray, (s0, s1, sn))
    return DecayRecord(times, s0, s1, sn, np.asarray(leak),
                       loglog_slope(times, sn), loglog_slope(times, s0), loglog_slope(times, s1))


# --------------------------------------------------------- counterexample

@dataclass
class CounterexampleReport:
    times: np.ndarray
    exact: np.ndarray            # two-atom expectation through the dynamics
    closed_form: np.ndarray
    mc: np.ndarray               # complex MC estimates
    mc_se: np.ndarray
    period: float
    amplitude_first: float
    amplitude_last: float

    @property
    def max_closed_form_error(self) -> float:
        return float(np.max(np.abs(self.exact - self.closed_form)))


def counterexample_closed_form(psi, m: float, t):
    """cos(A cos mt - m B sin mt) with A, B the lattice integrals of Psi^0, Psi^1."""
    lat, p0, p1 = _components(psi)
    A = float(np.real(lat.sum(p0)))
    B = float(np.real(lat.sum(p1)))
    t = np.asarray(t, dtype=float)
    return np.cos(A * np.cos(m * t) - m * B * np.sin(m * t))


def oscillation_amplitude(times, values, start, stop) -> float:
    sel = (times >= start - 1e-12) & (times <= stop + 1e-12)
    vals = np.real(values[sel])
    return float(vals.max() - vals.min()) if vals.size else 0.0


def counterexample_demo(lattice: LatticeSpec, m: float, psi, t_list, count: int, seed: int = 0,
                        workers: int = 1) -> CounterexampleReport:
    """Trace mu_t(Psi) for the +-1 ensemble: periodic in t, no equilibration."""
    times = np.asarray(sorted(float(t) for t in t_list))
    plus = FieldPair(lattice, np.ones(lattice.shape), np.zeros(lattice.shape))
    exact = []
    for t in times:
        x = pairing(evolve(plus, m, t), psi)
        exact.append(0.5 * (np.exp(1j * x) + np.exp(-1j * x)).real)
    exact = np.asarray(exact)
    batch = SampleBatch(counterexample_measure(lattice, m), count, seed, times, workers=workers)
    xs = batch.pairings_many(psi, m, times)
    mc = []
    se = []
    for col in range(len(times)):
        est = characteristic_from_pairings(xs[:, col])
        mc.append(est.value)
        se.append(est.stderr)
    period = 2 * math.pi / m
    return CounterexampleReport(
        times, exact, counterexample_closed_form(psi, m, times), np.asarray(mc), np.asarray(se), period,
        oscillation_amplitude(times, exact, times[0], times[0] + period),
        oscillation_amplitude(times, exact, times[-1] - period, times[-1]),
    )
