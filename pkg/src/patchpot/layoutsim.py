"""Monte Carlo micro-realizations of patch layouts on a periodic grid.

Generates voltage maps V(x) = sum_a v_a Theta_a(x) with independent
zero-mean patch voltages of variance v_rms^2, measures empirical
correlations, spectra, and the plate-plate pressure directly from sampled
maps, and compares against the analytic quasi-local closed forms.

Two layout engines:

* "voronoi" (default) -- a space-filling seeded tessellation: seed density
  tuned so mean cell area equals the mean circular-patch area
  (pi/4) E[ell^2]; cells of drawn target diameter ell_i are carved by
  size-weighted nearest-seed assignment and rounded by Lloyd relaxation.
  Realistic (cells tile the plane) but its same-cell statistics sit a few
  percent below the circular-patch overlap curve at intermediate
  separations: a tiling has more boundary than disjoint discs of equal
  area (isoperimetry), which is exactly the kind of model-vs-layout
  discrepancy this oracle exists to measure.
* "discs" -- the circular-patch statistical ensemble itself: independent
  discs with diameters drawn from the size law, centers uniform, voltages
  summing where discs overlap (per-disc variance scaled so the map
  variance is v_rms^2).  Its two-point statistics equal the analytic
  quasi-local forms exactly for a single patch size, so it validates the
  transform and pressure machinery without tessellation bias.

Maps are periodic; spectra are therefore exact discrete modes and no taper
window is applied.  Identical seeds give bit-identical maps, and ensembles
seed each realization as base_seed + index so serial and parallel
generation agree exactly.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import spatial

from .constants import EPSILON_0
from .patchmodels import SizeDistribution

__all__ = [
    "VoltageMap",
    "LayoutWarning",
    "InsufficientRealizations",
    "Estimate",
    "generate_layout",
    "generate_ensemble",
    "empirical_correlation",
    "empirical_spectrum",
    "empirical_pressure",
    "ensemble_pressure",
    "pressure_scatter",
    "save_voltage_map",
    "load_voltage_map",
]


class LayoutWarning(UserWarning):
    """Achieved layout statistics deviate from the requested size law."""


class InsufficientRealizations(ValueError):
    """Too few maps for the requested estimate."""


@dataclass(frozen=True)
class VoltageMap:
    """Square periodic voltage grid of N x N cells."""

    values: np.ndarray      # (N, N) volts
    pitch: float            # cell size, m
    seed: int
    v_rms: float            # nominal rms voltage the layout was built for

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape[0] != v.shape[1]:
            raise ValueError("values must be a square 2-D array")
        if v.shape[0] < 64:
            raise ValueError("grid must be at least 64 x 64")
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def extent(self) -> float:
        return self.n * self.pitch

    @property
    def sample_mean(self) -> float:
        return float(self.values.mean())

    @property
    def sample_variance(self) -> float:
        return float(np.mean(self.values ** 2))


@dataclass(frozen=True)
class Estimate:
    """Monte Carlo estimate with jackknife standard error.

    location  -- effective radius (or wavenumber) actually sampled: the
                 mean over the grid lags (modes) inside the selection bin.
    lag_values -- the exact lag radii (mode magnitudes) averaged over;
                 analytic references should be averaged over these same
                 points to avoid binning bias.
    """

    value: float
    stderr: float
    location: float
    lag_values: np.ndarray

    def z_score(self, reference: float) -> float:
        return (self.value - reference) / self.stderr if self.stderr > 0 else math.inf


# ---------------------------------------------------------------------------
# Layout generation
# ---------------------------------------------------------------------------

def _check_geometry(sizes: SizeDistribution, extent: float, pitch: float,
                    min_extent_factor: float) -> int:
    if not (pitch > 0.0 and extent > 0.0):
        raise ValueError("extent and pitch must be > 0")
    if pitch > sizes.l_min / 4.0:
        raise ValueError(
            f"pitch {pitch:g} m does not resolve the smallest patches; "
            f"need pitch <= l_min/4 = {sizes.l_min / 4.0:g} m")
    if extent < min_extent_factor * sizes.l_max:
        raise ValueError(
            f"extent {extent:g} m too small for ergodic sampling; need "
            f">= {min_extent_factor:g} * l_max = {min_extent_factor * sizes.l_max:g} m")
    n = int(round(extent / pitch))
    if n < 64:
        raise ValueError("extent/pitch must give a grid of at least 64 cells")
    return n


def _draw_voltages(rng: np.random.Generator, count: int, v_rms: float,
                   law: str) -> np.ndarray:
    if law == "uniform":
        return rng.uniform(-math.sqrt(3.0), math.sqrt(3.0), size=count) * v_rms
    if law == "gaussian":
        return rng.standard_normal(count) * v_rms
    raise ValueError("voltage_law must be 'uniform' or 'gaussian'")


def _wrap_delta(delta: np.ndarray, extent: float) -> np.ndarray:
    return (delta + 0.5 * extent) % extent - 0.5 * extent


def _assign_weighted(points: np.ndarray, seeds: np.ndarray, diam: np.ndarray,
                     extent: float) -> np.ndarray:
    """Label each grid point with the seed minimizing |x - p_i| / ell_i
    under periodic wrapping (multiplicatively weighted Voronoi)."""
    labels = np.empty(len(points), dtype=np.int32)
    inv2 = 1.0 / diam ** 2
    chunk = max(1, 4_000_000 // len(seeds))
    for i in range(0, len(points), chunk):
        p = points[i:i + chunk]
        dx = _wrap_delta(p[:, 0:1] - seeds[None, :, 0], extent)
        dy = _wrap_delta(p[:, 1:2] - seeds[None, :, 1], extent)
        labels[i:i + chunk] = np.argmin((dx * dx + dy * dy) * inv2[None, :], axis=1)
    return labels


def _assign(points: np.ndarray, seeds: np.ndarray, diam: np.ndarray,
            extent: float, uniform_size: bool) -> np.ndarray:
    if uniform_size:
        tree = spatial.cKDTree(seeds % extent, boxsize=extent)
        _, labels = tree.query(points % extent, k=1)
        return labels.astype(np.int32)
    return _assign_weighted(points, seeds, diam, extent)


def _lloyd_step(points: np.ndarray, labels: np.ndarray, seeds: np.ndarray,
                extent: float) -> np.ndarray:
    """Move each seed to the periodic centroid of its cell."""
    n_seeds = len(seeds)
    moved = seeds.copy()
    delta = _wrap_delta(points - seeds[labels], extent)
    sums = np.zeros((n_seeds, 2))
    np.add.at(sums, labels, delta)
    counts = np.bincount(labels, minlength=n_seeds).astype(float)
    occupied = counts > 0
    moved[occupied] = (seeds[occupied] + sums[occupied] / counts[occupied, None]) % extent
    return moved


def _voronoi_layout(sizes: SizeDistribution, v_rms: float, extent: float,
                    n: int, pitch: float, rng: np.random.Generator,
                    voltage_law: str, lloyd_iterations: int) -> np.ndarray:
    mean_sq = sizes.mean_sq_diameter
    n_cells = max(4, int(round(extent ** 2 / (0.25 * math.pi * mean_sq))))
    seeds = rng.uniform(0.0, extent, size=(n_cells, 2))
    diam = sizes.sample(rng, n_cells)
    uniform_size = sizes.law == "delta"

    axis = (np.arange(n) + 0.5) * pitch
    gx, gy = np.meshgrid(axis, axis, indexing="ij")
    points = np.column_stack([gx.ravel(), gy.ravel()])

    labels = _assign(points, seeds, diam, extent, uniform_size)
    for _ in range(lloyd_iterations):
        seeds = _lloyd_step(points, labels, seeds, extent)
        labels = _assign(points, seeds, diam, extent, uniform_size)

    counts = np.bincount(labels, minlength=n_cells).astype(float)
    areas = counts[counts > 0] * pitch ** 2
    achieved_mean_diam = float(np.mean(2.0 * np.sqrt(areas / math.pi)))
    target = sizes.mean_diameter
    if abs(achieved_mean_diam / target - 1.0) > 0.05:
        warnings.warn(
            f"voronoi layout reached mean cell diameter {achieved_mean_diam:.4g} m "
            f"vs target {target:.4g} m (moments beyond tessellation statistics)",
            LayoutWarning, stacklevel=3)

    voltages = _draw_voltages(rng, n_cells, v_rms, voltage_law)
    return voltages[labels].reshape(n, n)


_DISC_MEAN_COVER = 4.0  # mean number of discs covering a point


def _disc_layout(sizes: SizeDistribution, v_rms: float, extent: float,
                 n: int, pitch: float, rng: np.random.Generator,
                 voltage_law: str) -> np.ndarray:
    mean_area = 0.25 * math.pi * sizes.mean_sq_diameter
    n_discs = rng.poisson(_DISC_MEAN_COVER * extent ** 2 / mean_area)
    centers = rng.uniform(0.0, extent, size=(n_discs, 2))
    diam = sizes.sample(rng, n_discs)
    voltages = _draw_voltages(rng, n_discs, v_rms / math.sqrt(_DISC_MEAN_COVER),
                              voltage_law)
    values = np.zeros((n, n))
    axis = (np.arange(n) + 0.5) * pitch
    for (cx, cy), l, v in zip(centers, diam, voltages):
        radius = 0.5 * l
        span = int(radius / pitch) + 2
        i0 = int(cx / pitch)
        j0 = int(cy / pitch)
        ii = np.arange(i0 - span, i0 + span + 1)
        jj = np.arange(j0 - span, j0 + span + 1)
        dx = _wrap_delta(axis[ii % n] - cx, extent)
        dy = _wrap_delta(axis[jj % n] - cy, extent)
        mask = dx[:, None] ** 2 + dy[None, :] ** 2 <= radius * radius
        np.add.at(values, (np.repeat(ii % n, len(jj))[mask.ravel()],
                           np.tile(jj % n, len(ii))[mask.ravel()]), v)
    return values


def generate_layout(sizes: SizeDistribution, v_rms: float, extent: float,
                    pitch: float, seed: int, *,
                    voltage_law: str = "uniform",
                    engine: str = "voronoi",
                    lloyd_iterations: int = 4,
                    min_extent_factor: float = 20.0) -> VoltageMap:
    """Sample one patch-layout micro-realization on a periodic grid.

    Preconditions: extent >= min_extent_factor * l_max (ergodic sampling;
    lower the factor only for deliberate small-window studies), pitch <=
    l_min / 4, and a grid of at least 64 cells.  Deterministic for a fixed
    seed.  Patch voltages are independent and zero-mean with variance
    v_rms^2, drawn uniform on a symmetric interval by default or Gaussian
    with voltage_law="gaussian".
    """
    if v_rms < 0.0:
        raise ValueError("v_rms must be >= 0")
    n = _check_geometry(sizes, extent, pitch, min_extent_factor)
    rng = np.random.default_rng(seed)
    if engine == "voronoi":
        values = _voronoi_layout(sizes, v_rms, n * pitch, n, pitch, rng,
                                 voltage_law, lloyd_iterations)
    elif engine == "discs":
        values = _disc_layout(sizes, v_rms, n * pitch, n, pitch, rng, voltage_law)
    else:
        raise ValueError("engine must be 'voronoi' or 'discs'")
    return VoltageMap(values, pitch, seed, v_rms)


def generate_ensemble(sizes: SizeDistribution, v_rms: float, extent: float,
                      pitch: float, count: int, base_seed: int,
                      **kwargs) -> list[VoltageMap]:
    """Independent realizations seeded base_seed + index (index 0..count-1),
    so partial, parallel, and serial generation agree exactly."""
    return [generate_layout(sizes, v_rms, extent, pitch, base_seed + i, **kwargs)
            for i in range(count)]


# ---------------------------------------------------------------------------
# Empirical statistics
# ---------------------------------------------------------------------------

def _require_maps(maps, minimum: int = 100):
    if len(maps) < minimum:
        raise InsufficientRealizations(
            f"got {len(maps)} realizations; at least {minimum} are required "
            f"(generate {minimum - len(maps)} more)")
    first = maps[0]
    for m in maps:
        if m.n != first.n or m.pitch != first.pitch:
            raise ValueError("all maps must share grid geometry")


def _jackknife(per_map: np.ndarray) -> tuple[float, float]:
    n = len(per_map)
    mean = float(per_map.mean())
    if n < 2:
        return mean, math.inf
    loo = (per_map.sum() - per_map) / (n - 1)
    var = (n - 1) / n * float(np.sum((loo - loo.mean()) ** 2))
    return mean, math.sqrt(var)


def _lag_radius_grid(n: int, pitch: float) -> np.ndarray:
    idx = np.minimum(np.arange(n), n - np.arange(n)).astype(float)
    return np.hypot(idx[:, None], idx[None, :]) * pitch


def empirical_correlation(maps, r: float, *, bin_halfwidth: float | None = None,
                          min_maps: int = 100) -> Estimate:
    """Radially averaged two-point voltage product at separation r, with
    jackknife standard error over realizations.

    The estimate averages the circular (periodic) autocorrelation over all
    grid lags whose radius lies within bin_halfwidth (default pitch/2) of
    r; `Estimate.lag_values` lists those radii so analytic references can
    be averaged over the identical lag set.
    """
    _require_maps(maps, min_maps)
    m0 = maps[0]
    if not (0.0 <= r < m0.extent / 4.0):
        raise ValueError("need 0 <= r < extent/4")
    half = m0.pitch / 2.0 if bin_halfwidth is None else bin_halfwidth
    radii = _lag_radius_grid(m0.n, m0.pitch)
    mask = np.abs(radii - r) <= half if r > 0.0 else radii == 0.0
    if not np.any(mask):
        raise ValueError(f"no grid lags within {half:g} m of r={r:g} m")
    per_map = np.empty(len(maps))
    for i, m in enumerate(maps):
        f = np.fft.rfft2(m.values)
        acf = np.fft.irfft2(f.real ** 2 + f.imag ** 2, s=m.values.shape) / m.n ** 2
        per_map[i] = acf[mask].mean()
    value, stderr = _jackknife(per_map)
    lags = radii[mask]
    return Estimate(value, stderr, float(lags.mean()), np.sort(lags.ravel()))


def _mode_radius_grid(n: int, pitch: float) -> np.ndarray:
    k1 = 2.0 * math.pi * np.fft.fftfreq(n, d=pitch)
    return np.hypot(k1[:, None], k1[None, :])


def _periodogram(m: VoltageMap) -> np.ndarray:
    """Spectral density estimate per mode (V^2 m^2): |FFT|^2 pitch^4 / area."""
    f = np.fft.fft2(m.values)
    return (f.real ** 2 + f.imag ** 2) * m.pitch ** 4 / m.extent ** 2


def empirical_spectrum(maps, k: float, *, bin_halfwidth: float | None = None,
                       min_maps: int = 100) -> Estimate:
    """Radially averaged periodogram at wavenumber k with jackknife error.

    Maps are periodic, so modes are exact and no taper window is applied
    (rectangular window over the full torus).  Selection bin defaults to
    half the mode spacing pi/extent.
    """
    _require_maps(maps, min_maps)
    m0 = maps[0]
    if k < 0.0:
        raise ValueError("k must be >= 0")
    half = math.pi / m0.extent if bin_halfwidth is None else bin_halfwidth
    radii = _mode_radius_grid(m0.n, m0.pitch)
    mask = np.abs(radii - k) <= half if k > 0.0 else radii == 0.0
    if not np.any(mask):
        raise ValueError(f"no discrete modes within {half:g} of k={k:g}")
    per_map = np.empty(len(maps))
    for i, m in enumerate(maps):
        per_map[i] = _periodogram(m)[mask].mean()
    value, stderr = _jackknife(per_map)
    modes = radii[mask]
    return Estimate(value, stderr, float(modes.mean()), np.sort(modes.ravel()))


def empirical_pressure(map1: VoltageMap, map2: VoltageMap, d: float) -> float:
    """Plate-plate patch pressure (Pa) evaluated mode-by-mode from the two
    maps' discrete auto- and cross-spectra.

    The ensemble mean over independent map pairs converges to the analytic
    pressure integral for the underlying layout statistics.
    """
    if map1.n != map2.n or map1.pitch != map2.pitch:
        raise ValueError("maps must share grid geometry")
    if d <= 2.0 * map1.pitch:
        raise ValueError(
            f"d={d:g} m under-resolved by the grid; need d > 2*pitch = "
            f"{2.0 * map1.pitch:g} m")
    n, pitch, area = map1.n, map1.pitch, map1.extent ** 2
    f1 = np.fft.fft2(map1.values)
    f2 = np.fft.fft2(map2.values)
    norm = pitch ** 4 / area
    c11 = (f1.real ** 2 + f1.imag ** 2) * norm
    c22 = (f2.real ** 2 + f2.imag ** 2) * norm
    c12 = (f1 * np.conj(f2)).real * norm
    k = _mode_radius_grid(n, pitch)
    kd = np.clip(k * d, 0.0, 120.0)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        kernel = np.where(kd > 0.0, k ** 2 / np.sinh(kd) ** 2, 1.0 / d ** 2)
        cosh = np.cosh(kd)
    kernel = np.where(kd >= 120.0, 0.0, kernel)
    bracket = c11 + c22 - 2.0 * c12 * np.where(kd >= 120.0, 1.0, cosh)
    return float(EPSILON_0 / (2.0 * area) * np.sum(kernel * bracket))


def _pressure_kernel(n: int, pitch: float, d: float) -> tuple[np.ndarray, np.ndarray]:
    k = _mode_radius_grid(n, pitch)
    kd = np.clip(k * d, 0.0, 120.0)
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        kernel = np.where(kd > 0.0, k ** 2 / np.sinh(kd) ** 2, 1.0 / d ** 2)
        cosh = np.cosh(kd)
    kernel = np.where(kd >= 120.0, 0.0, kernel)
    cosh = np.where(kd >= 120.0, 1.0, cosh)
    return kernel, cosh


def ensemble_pressure(maps, d: float, *, min_maps: int = 100,
                      pairing: str = "disjoint") -> Estimate:
    """Ensemble-mean empirical pressure.

    pairing="disjoint" averages empirical_pressure over map pairs
    (2i, 2i+1).  pairing="all" returns the exact mean over all ordered map
    pairs, computed from the ensemble-summed spectra; it has a much lower
    variance at large d, where only a handful of low-k modes contribute.
    Standard errors are jackknifed (over pairs, or over 8 map groups).
    """
    _require_maps(maps, min_maps)
    if pairing == "disjoint":
        pairs = len(maps) // 2
        per_pair = np.array([empirical_pressure(maps[2 * i], maps[2 * i + 1], d)
                             for i in range(pairs)])
        value, stderr = _jackknife(per_pair)
        return Estimate(value, stderr, d, np.array([d]))
    if pairing != "all":
        raise ValueError("pairing must be 'disjoint' or 'all'")

    m0 = maps[0]
    if d <= 2.0 * m0.pitch:
        raise ValueError(f"d={d:g} m under-resolved; need d > {2.0 * m0.pitch:g} m")
    norm = m0.pitch ** 4 / m0.extent ** 2
    kernel, cosh = _pressure_kernel(m0.n, m0.pitch, d)
    area = m0.extent ** 2

    def group_value(group) -> float:
        # all-ordered-pairs mean of the pressure bracket:
        #   mean_ij [ c_ii + c_jj - 2 c_ij cosh ] over i != j
        ffts = [np.fft.fft2(m.values) for m in group]
        power = np.zeros(ffts[0].shape)
        total = np.zeros(ffts[0].shape, dtype=complex)
        for f in ffts:
            power += f.real ** 2 + f.imag ** 2
            total += f
        mm = len(ffts)
        cross = ((total.real ** 2 + total.imag ** 2) - power) / (mm * (mm - 1))
        bracket = (2.0 * power / mm - 2.0 * cross * cosh) * norm
        return float(EPSILON_0 / (2.0 * area) * np.sum(kernel * bracket))

    n_groups = 8
    groups = [maps[g::n_groups] for g in range(n_groups)]
    per_group = np.array([group_value(g) for g in groups])
    value = group_value(maps)
    # jackknife of the group means; slightly conservative for the full
    # all-pairs estimator, which also uses cross-group pairs
    _, stderr = _jackknife(per_group)
    return Estimate(value, stderr, d, np.array([d]))


def pressure_scatter(sizes: SizeDistribution, v_rms: float, d: float,
                     window_ratios, pitch: float, realizations: int,
                     base_seed: int, **layout_kwargs):
    """Realization-to-realization relative scatter of the pair pressure as a
    function of window size.

    window_ratios are target counts of mean patch areas per map window; the
    ergodic hypothesis predicts the scatter falls as the window grows.
    Returns a list of (ratio, mean_pressure, relative_scatter).
    """
    mean_area = 0.25 * math.pi * sizes.mean_sq_diameter
    out = []
    for ratio in window_ratios:
        extent = math.sqrt(ratio * mean_area)
        n_grid = int(round(extent / pitch))
        extent = n_grid * pitch
        maps = generate_ensemble(sizes, v_rms, extent, pitch,
                                 2 * realizations, base_seed,
                                 min_extent_factor=0.0, **layout_kwargs)
        vals = np.array([empirical_pressure(maps[2 * i], maps[2 * i + 1], d)
                         for i in range(realizations)])
        out.append((ratio, float(vals.mean()),
                    float(vals.std(ddof=1) / abs(vals.mean()))))
    return out


# ---------------------------------------------------------------------------
# Map I/O
# ---------------------------------------------------------------------------

def save_voltage_map(m: VoltageMap, path: str | Path) -> None:
    """Text grid dump with a header carrying (N, pitch, seed, v_rms)."""
    header = (f"patchpot voltage map\nN: {m.n}\npitch_m: {m.pitch!r}\n"
              f"seed: {m.seed}\nv_rms_V: {m.v_rms!r}")
    np.savetxt(path, m.values, fmt="%.12e", header=header)


def load_voltage_map(path: str | Path) -> VoltageMap:
    meta = {}
    with open(path) as fh:
        for line in fh:
            if not line.startswith("#"):
                break
            body = line.lstrip("#").strip()
            if ":" in body:
                key, val = body.split(":", 1)
                meta[key.strip()] = val.strip()
    values = np.loadtxt(path)
    return VoltageMap(values, float(meta["pitch_m"]), int(meta["seed"]),
                      float(meta["v_rms_V"]))
