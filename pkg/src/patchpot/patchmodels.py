"""Patch-voltage correlation models for conducting surfaces.

Two models of the isotropic voltage power spectral density C[k] (units
V^2 m^2) and its real-space partner C(r) (units V^2):

* sharp-cutoff: C[k] constant on an annulus k in [k_min, k_max], zero
  elsewhere.  Its real-space correlation oscillates between positive and
  negative values inside an r^(-3/2) envelope.
* quasi-local: voltages are correlated only for point pairs on the same
  patch.  Averaging circular patches of random diameter ell ~ Pi(ell)
  gives a correlation proportional to the normalized overlap area of two
  discs, nonnegative and exactly zero beyond the largest patch.  The
  per-size spectrum is the squared Airy pattern
  C_ell[k] = (pi Vrms^2 ell^2 / 4) [2 J1(k ell / 2) / (k ell / 2)]^2.

Both models recover the variance Vrms^2 = (1/2pi) int k C[k] dk.
All model objects are immutable and their evaluations thread-safe.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable

import numpy as np
from scipy import integrate, interpolate, special

from .numerics import RadialFunction

__all__ = [
    "SizeDistribution",
    "SharpCutoffSpectrum",
    "QuasiLocalSpectrum",
    "moments",
    "sharp_cutoff_spectrum",
    "sharp_cutoff_correlation",
    "quasi_local_spectrum",
    "quasi_local_correlation",
]


# ---------------------------------------------------------------------------
# Patch-size distribution
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SizeDistribution:
    """Probability law Pi(ell) over patch diameters (meters).

    Construct through the classmethods `uniform`, `delta`, or `custom`.
    """

    law: str
    l_min: float
    l_max: float
    density: Callable[[np.ndarray], np.ndarray] | None = None
    grid_nodes: int = 1024

    @classmethod
    def uniform(cls, l_min: float, l_max: float) -> "SizeDistribution":
        if not (0.0 < l_min <= l_max):
            raise ValueError("uniform law requires 0 < l_min <= l_max")
        return cls("uniform", float(l_min), float(l_max))

    @classmethod
    def delta(cls, l: float) -> "SizeDistribution":
        if not (l > 0.0):
            raise ValueError("delta law requires ell > 0")
        return cls("delta", float(l), float(l))

    @classmethod
    def custom(cls, density: Callable, l_min: float, l_max: float,
               nodes: int = 1024) -> "SizeDistribution":
        """Arbitrary density on [l_min, l_max], integrated on a log-spaced
        grid of at least 512 nodes.  The density must integrate to 1
        (checked by adaptive quadrature to within 1e-9)."""
        if not (0.0 < l_min < l_max):
            raise ValueError("custom law requires 0 < l_min < l_max")
        if nodes < 512:
            raise ValueError("custom law requires at least 512 grid nodes")
        norm, _ = integrate.quad(density, l_min, l_max, limit=200)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(
                f"custom density integrates to {norm:.12g}, expected 1 within 1e-9")
        return cls("custom", float(l_min), float(l_max), density=density,
                   grid_nodes=int(nodes))

    # -- internals ---------------------------------------------------------

    @cached_property
    def _grid(self) -> tuple[np.ndarray, np.ndarray]:
        """(ell, weight) quadrature pairs for the custom law (trapezoid in
        log space, normalized so the weights sum exactly to 1)."""
        ell = np.geomspace(self.l_min, self.l_max, self.grid_nodes)
        pdf = np.asarray(self.density(ell), dtype=float)
        w = np.zeros_like(ell)
        dl = np.diff(ell)
        w[:-1] += 0.5 * dl * pdf[:-1]
        w[1:] += 0.5 * dl * pdf[1:]
        w /= w.sum()
        return ell, w

    @cached_property
    def _custom_cdf(self) -> tuple[np.ndarray, np.ndarray]:
        ell, w = self._grid
        cdf = np.concatenate([[0.0], np.cumsum(w)])
        edges = np.concatenate([[self.l_min], 0.5 * (ell[:-1] + ell[1:]), [self.l_max]])
        return cdf / cdf[-1], edges

    # -- public API --------------------------------------------------------

    def moments(self) -> tuple[float, float]:
        """First and second raw moments (mean diameter, mean squared diameter)."""
        if self.law == "delta":
            return self.l_min, self.l_min ** 2
        if self.law == "uniform":
            a, b = self.l_min, self.l_max
            return 0.5 * (a + b), (a * a + b * b + a * b) / 3.0
        ell, w = self._grid
        return float(np.dot(w, ell)), float(np.dot(w, ell * ell))

    @property
    def mean_diameter(self) -> float:
        return self.moments()[0]

    @property
    def mean_sq_diameter(self) -> float:
        return self.moments()[1]

    def sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw n diameters; used by the layout simulator."""
        if self.law == "delta":
            return np.full(n, self.l_min)
        if self.law == "uniform":
            return rng.uniform(self.l_min, self.l_max, size=n)
        cdf, edges = self._custom_cdf
        return np.interp(rng.random(n), cdf, edges)

    def average(self, fn: Callable[[np.ndarray], np.ndarray]) -> float:
        """Expectation of fn(ell) under the distribution."""
        if self.law == "delta":
            return float(fn(np.array([self.l_min]))[0])
        if self.law == "uniform":
            val, _ = integrate.quad(lambda l: float(fn(np.array([l]))[0]),
                                    self.l_min, self.l_max, limit=200)
            return val / (self.l_max - self.l_min)
        ell, w = self._grid
        return float(np.dot(w, fn(ell)))


def moments(d: SizeDistribution) -> tuple[float, float]:
    """First and second raw moments of the diameter distribution."""
    return d.moments()


# ---------------------------------------------------------------------------
# Sharp-cutoff model
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SharpCutoffSpectrum:
    """Band-limited spectrum: constant on k in [k_min, k_max] (1/m), zero
    outside; v_rms is the rms patch voltage (V)."""

    k_min: float
    k_max: float
    v_rms: float

    def __post_init__(self):
        if not (0.0 <= self.k_min < self.k_max):
            raise ValueError("need 0 <= k_min < k_max")
        if self.v_rms < 0.0:
            raise ValueError("v_rms must be >= 0")

    def spectrum(self, k):
        return sharp_cutoff_spectrum(self, k)

    def correlation(self, r):
        return sharp_cutoff_correlation(self, r)

    def spectrum_radial(self) -> RadialFunction:
        return RadialFunction(lambda k: sharp_cutoff_spectrum(self, k),
                              decay_hint=self.k_max, support=self.k_max,
                              breakpoints=(self.k_min, self.k_max))

    def correlation_radial(self) -> RadialFunction:
        # r^(-3/2) envelope: no hard support; decays past the longest mode
        return RadialFunction(lambda r: sharp_cutoff_correlation(self, r),
                              decay_hint=2.0 * math.pi / max(self.k_min, self.k_max / 100.0))

    @property
    def zero_k_value(self) -> float:
        return 0.0 if self.k_min > 0.0 else self.spectrum(0.0)


def sharp_cutoff_spectrum(s: SharpCutoffSpectrum, k):
    """Spectral density (V^2 m^2) of the band-limited model at wavenumber k."""
    karr = np.asarray(k, dtype=float)
    if np.any(karr < 0.0):
        raise ValueError("k must be >= 0")
    level = 4.0 * math.pi * s.v_rms ** 2 / (s.k_max ** 2 - s.k_min ** 2)
    out = np.where((karr >= s.k_min) & (karr <= s.k_max), level, 0.0)
    return float(out) if karr.ndim == 0 else out


def sharp_cutoff_correlation(s: SharpCutoffSpectrum, r):
    """Real-space correlation (V^2) of the band-limited model.

    Closed form 2 Vrms^2 [k_max J1(k_max r) - k_min J1(k_min r)]
    / [(k_max^2 - k_min^2) r]; approaches Vrms^2 as r -> 0 and oscillates
    with both signs at finite r.
    """
    rarr = np.asarray(r, dtype=float)
    if np.any(rarr < 0.0):
        raise ValueError("r must be >= 0")
    denom = s.k_max ** 2 - s.k_min ** 2
    small = s.k_max * rarr < 1e-6
    safe_r = np.where(small, 1.0, rarr)
    closed = 2.0 * s.v_rms ** 2 * (
        s.k_max * special.j1(s.k_max * safe_r) - s.k_min * special.j1(s.k_min * safe_r)
    ) / (denom * safe_r)
    # small-argument expansion: Vrms^2 [1 - r^2 (k_max^2 + k_min^2) / 8]
    series = s.v_rms ** 2 * (1.0 - rarr ** 2 * (s.k_max ** 2 + s.k_min ** 2) / 8.0)
    out = np.where(small, series, closed)
    return float(out) if rarr.ndim == 0 else out


# ---------------------------------------------------------------------------
# Quasi-local model
# ---------------------------------------------------------------------------

def _airy_sq(x: np.ndarray) -> np.ndarray:
    """[2 J1(x) / x]^2, series-safe at small argument."""
    x = np.asarray(x, dtype=float)
    small = np.abs(x) < 1e-3
    safe = np.where(small, 1.0, x)
    main = (2.0 * special.j1(safe) / safe) ** 2
    series = 1.0 - x * x / 4.0 + 5.0 * x ** 4 / 192.0
    return np.where(small, series, main)


# Cumulative integral Phi(x) = int_0^x J1(t)^2 dt, needed for the closed
# form of the size-averaged spectrum of the uniform law:
#   C[k] = (8 pi Vrms^2 / (Dl k^3)) [Phi(k l_max / 2) - Phi(k l_min / 2)].
_PHI_TABLE_MAX = 700.0
_PHI_SERIES_MAX = 0.5


@lru_cache(maxsize=1)
def _phi_spline():
    x = np.linspace(0.0, _PHI_TABLE_MAX, 175001)
    vals = integrate.cumulative_simpson(special.j1(x) ** 2, x=x, initial=0.0)
    return interpolate.CubicSpline(x, vals)


def _phi_j1sq(x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.empty_like(x)
    series = x <= _PHI_SERIES_MAX
    tabled = (~series) & (x <= _PHI_TABLE_MAX)
    beyond = x > _PHI_TABLE_MAX
    if np.any(series):
        t = x[series]
        out[series] = (t ** 3 / 12.0 - t ** 5 / 80.0 + 5.0 * t ** 7 / 5376.0
                       - 7.0 * t ** 9 / 165888.0)
    if np.any(tabled):
        out[tabled] = _phi_spline()(x[tabled])
    if np.any(beyond):
        # tail of J1^2 ~ (1/pi t)(1 - sin 2t) - (3 cos 2t)/(4 pi t^2)
        t = x[beyond]
        x0 = _PHI_TABLE_MAX
        phi0 = float(_phi_spline()(x0))
        si_t, _ = special.sici(2.0 * t)
        si_0, _ = special.sici(2.0 * x0)
        out[beyond] = (phi0 + (np.log(t / x0) - (si_t - si_0)) / math.pi
                       - 3.0 / (8.0 * math.pi) * (np.sin(2.0 * t) / t ** 2
                                                  - math.sin(2.0 * x0) / x0 ** 2))
    return out


@dataclass(frozen=True)
class QuasiLocalSpectrum:
    """Quasi-local correlation model: patch diameters drawn from `sizes`,
    independent zero-mean patch voltages of rms value `v_rms` (V)."""

    sizes: SizeDistribution
    v_rms: float

    def __post_init__(self):
        if self.v_rms < 0.0:
            raise ValueError("v_rms must be >= 0")

    def spectrum(self, k):
        return quasi_local_spectrum(self, k)

    def correlation(self, r):
        return quasi_local_correlation(self, r)

    def spectrum_radial(self) -> RadialFunction:
        mean_l = self.sizes.mean_diameter
        return RadialFunction(lambda k: quasi_local_spectrum(self, k),
                              decay_hint=2.0 / mean_l)

    def correlation_radial(self) -> RadialFunction:
        return RadialFunction(lambda r: quasi_local_correlation(self, r),
                              decay_hint=self.sizes.mean_diameter,
                              support=self.sizes.l_max,
                              breakpoints=(self.sizes.l_min,))

    @property
    def zero_k_value(self) -> float:
        """C[k=0] = (pi/4) * mean_sq_diameter * Vrms^2."""
        return 0.25 * math.pi * self.sizes.mean_sq_diameter * self.v_rms ** 2


def _overlap_bracket(u: np.ndarray) -> np.ndarray:
    """arccos(u) - u sqrt(1 - u^2) for u in [0, 1]: normalized overlap area
    of two unit-diameter discs with centers u apart (times pi/2)."""
    u = np.clip(u, 0.0, 1.0)
    return np.arccos(u) - u * np.sqrt(np.clip(1.0 - u * u, 0.0, None))


def quasi_local_correlation(q: QuasiLocalSpectrum, r):
    """Real-space correlation (V^2) of the quasi-local model.

    (2 Vrms^2 / pi) * E_Pi[ arccos(r/ell) - (r/ell) sqrt(1-(r/ell)^2) ;
    ell > r ]; equals Vrms^2 at coincidence and is identically zero for r
    beyond the largest patch diameter.
    """
    rarr = np.asarray(r, dtype=float)
    if np.any(rarr < 0.0):
        raise ValueError("r must be >= 0")
    pref = 2.0 * q.v_rms ** 2 / math.pi
    d = q.sizes

    def scalar(rv: float) -> float:
        if rv >= d.l_max:
            return 0.0
        if d.law == "delta":
            return pref * float(_overlap_bracket(np.array([rv / d.l_min]))[0])
        if d.law == "uniform":
            lo = max(rv, d.l_min)
            if lo >= d.l_max:
                return 0.0
            val, _ = integrate.quad(
                lambda l: float(_overlap_bracket(np.array([rv / l]))[0]),
                lo, d.l_max, limit=200)
            return pref * val / (d.l_max - d.l_min)
        ell, w = d._grid
        mask = ell > rv
        if not np.any(mask):
            return 0.0
        return pref * float(np.dot(w[mask], _overlap_bracket(rv / ell[mask])))

    if rarr.ndim == 0:
        return scalar(float(rarr))
    return np.array([scalar(rv) for rv in rarr.ravel()]).reshape(rarr.shape)


def quasi_local_spectrum(q: QuasiLocalSpectrum, k):
    """Spectral density (V^2 m^2) of the quasi-local model.

    Size-averaged squared Airy pattern; the k=0 value is
    (pi/4) * mean_sq_diameter * Vrms^2 and the k-integral recovers the
    voltage variance.
    """
    karr = np.asarray(k, dtype=float)
    if np.any(karr < 0.0):
        raise ValueError("k must be >= 0")
    d, v2 = q.sizes, q.v_rms ** 2

    if d.law == "delta":
        L = d.l_min
        out = 0.25 * math.pi * v2 * L * L * _airy_sq(karr * L / 2.0)
    elif d.law == "uniform":
        out = _uniform_spectrum(karr, d.l_min, d.l_max, v2)
    else:
        ell, w = d._grid
        flat = karr.reshape(-1)
        vals = np.empty(flat.shape)
        chunk = max(1, 2_000_000 // ell.size)
        coeff = 0.25 * math.pi * v2 * ell * ell * w
        for i in range(0, flat.size, chunk):
            kb = flat[i:i + chunk, None]
            vals[i:i + chunk] = _airy_sq(kb * ell[None, :] / 2.0) @ coeff
        out = vals.reshape(karr.shape)
    return float(out) if karr.ndim == 0 else out


def _uniform_spectrum(karr: np.ndarray, l1: float, l2: float, v2: float) -> np.ndarray:
    if l1 == l2:
        return 0.25 * math.pi * v2 * l1 * l1 * _airy_sq(karr * l1 / 2.0)
    dl = l2 - l1
    small = karr * l2 / 2.0 < 0.2
    out = np.empty_like(karr, dtype=float)
    if np.any(small):
        # expand the size-averaged squared Airy pattern for k -> 0 (avoids
        # the 0/0 of the Phi-difference form); m2n = E[ell^(2n)]
        kk = karr[small]
        m2 = (l2 ** 2 + l1 * l2 + l1 ** 2) / 3.0
        m4 = (l2 ** 5 - l1 ** 5) / (5.0 * dl)
        m6 = (l2 ** 7 - l1 ** 7) / (7.0 * dl)
        out[small] = (math.pi * v2 / 4.0) * (
            m2 - kk ** 2 * m4 / 16.0 + 5.0 * kk ** 4 * m6 / 3072.0)
    big = ~small
    if np.any(big):
        kk = karr[big]
        phi2 = _phi_j1sq(kk * l2 / 2.0)
        phi1 = _phi_j1sq(kk * l1 / 2.0)
        out[big] = 8.0 * math.pi * v2 / (dl * kk ** 3) * (phi2 - phi1)
    return out
