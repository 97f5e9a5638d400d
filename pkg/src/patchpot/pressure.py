"""Electrostatic patch pressure between plane conductors and its
sphere-plane mappings.

The exact plane-plane pressure is

    P(D) = (eps0 / 4 pi) int_0^inf dk k^3 / sinh^2(k D)
           * { C11[k] + C22[k] - 2 C12[k] cosh(k D) },

positive for attraction; it reduces to the parallel-plate capacitor law
eps0 <(V1 - V2)^2> / (2 D^2) when patches are much larger than the gap and
to a 1/D^4 law proportional to the zero-wavevector spectral weight when
they are much smaller.  The plane-plane energy per unit area is the
distance integral of the pressure; integrating the kernel over distance
analytically gives the single-quadrature form used here:

    E(D) = (eps0 / 4 pi) int_0^inf dk k^2
           * { (C11[k] + C22[k]) * 2 / (exp(2 k D) - 1) - 2 C12[k] / sinh(k D) }.

Sphere-plane observables follow from the proximity-force approximation:
gradient = 2 pi R * P, force = 2 pi R * E.

All functions here are pure; distance grids can be evaluated concurrently.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .constants import EPSILON_0, SINH_KERNEL_CUBED_INTEGRAL, SMALL_PATCH_PRESSURE_COEFF
from .numerics import QuadratureError
from .patchmodels import QuasiLocalSpectrum, SharpCutoffSpectrum

__all__ = [
    "PlatePairSpectra",
    "SpherePlaneGeometry",
    "ValidityReport",
    "patch_pressure_pp",
    "patch_energy_pp",
    "pfa_gradient",
    "pfa_force",
    "validity_ratio",
    "large_patch_pressure",
    "small_patch_pressure",
    "small_patch_pressure_identical",
]

SpectrumFn = Callable[[np.ndarray], np.ndarray]


def _zero_spectrum(k):
    return np.zeros_like(np.asarray(k, dtype=float))


@dataclass(frozen=True)
class PlatePairSpectra:
    """Voltage power spectra of the two facing plates.

    c11, c22 -- per-plate spectral densities, k (1/m) -> V^2 m^2,
                vectorized over numpy arrays.
    c12      -- cross spectrum (defaults to zero: uncorrelated plates).
    k_breakpoints     -- wavenumbers where the spectra are non-smooth.
    oscillation_scale -- largest real-space feature size (m); spectra built
                from patches of diameter ell oscillate in k with period
                ~ 2 pi / ell, and the quadrature panels must resolve that.
    oscillation_damping -- size-average span (m) over which those
                oscillations wash out (relative amplitude ~ 1/(k * span));
                None means undamped (single patch size).
    """

    c11: SpectrumFn
    c22: SpectrumFn
    c12: SpectrumFn = field(default=_zero_spectrum)
    k_breakpoints: tuple[float, ...] = ()
    oscillation_scale: float | None = None
    oscillation_damping: float | None = None

    @classmethod
    def identical(cls, model) -> "PlatePairSpectra":
        """Two identical uncorrelated plates described by `model` (a
        SharpCutoffSpectrum, QuasiLocalSpectrum, or plain callable)."""
        if isinstance(model, SharpCutoffSpectrum):
            return cls(model.spectrum, model.spectrum,
                       k_breakpoints=(model.k_min, model.k_max))
        if isinstance(model, QuasiLocalSpectrum):
            span = model.sizes.l_max - model.sizes.l_min
            return cls(model.spectrum, model.spectrum,
                       oscillation_scale=model.sizes.l_max,
                       oscillation_damping=span if span > 0.0 else None)
        return cls(model, model)

    @classmethod
    def correlated(cls, model, cross_fraction: float = 1.0) -> "PlatePairSpectra":
        """Identical plates with C12 = cross_fraction * C11 (|fraction| <= 1)."""
        if abs(cross_fraction) > 1.0:
            raise ValueError("cross_fraction must satisfy |f| <= 1")
        base = cls.identical(model)
        return cls(base.c11, base.c22,
                   c12=lambda k: cross_fraction * base.c11(k),
                   k_breakpoints=base.k_breakpoints,
                   oscillation_scale=base.oscillation_scale,
                   oscillation_damping=base.oscillation_damping)


@dataclass(frozen=True)
class SpherePlaneGeometry:
    """Sphere of radius R above a plane at closest distance D (meters)."""

    radius: float
    distance: float

    def __post_init__(self):
        if not (self.radius > 0.0):
            raise ValueError("radius must be > 0")
        if not (self.distance > 0.0):
            raise ValueError("distance must be > 0")

    @property
    def pfa_ok(self) -> bool:
        """True when D/R <= 0.01, the regime the 2 pi R mapping assumes."""
        return self.distance / self.radius <= 0.01


# ---------------------------------------------------------------------------
# Plane-plane kernels
# ---------------------------------------------------------------------------

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(16)
_KD_CUTOFF = 40.0  # sinh^-2 suppression ~ 1e-34 beyond k d = 40


def _panel_edges(d: float, spectra: PlatePairSpectra) -> np.ndarray:
    """Quadrature panel edges on [0, 40/d] resolving both the kernel scale
    1/d and the spectra's real-space oscillation scale.

    Size-averaged spectra oscillate with relative amplitude falling like
    1/(k * span); fine panels stop once that amplitude is ~1e-3 and the
    kernel-scale spacing takes over (residual aliasing is negligible and
    the refinement check below would catch it regardless).
    """
    k_upper = _KD_CUTOFF / d
    coarse = 2.5 / d
    if not spectra.oscillation_scale:
        edges = np.linspace(0.0, k_upper, int(math.ceil(k_upper / coarse)) + 1)
    else:
        fine = min(coarse, 2.0 * math.pi / spectra.oscillation_scale)
        k_fine_stop = k_upper
        if spectra.oscillation_damping:
            k_fine_stop = min(k_upper, 2000.0 / spectra.oscillation_damping)
        n_fine = int(math.ceil(k_fine_stop / fine))
        if n_fine > 200_000:
            raise QuadratureError(
                f"pressure quadrature needs {n_fine} panels at d={d:g} m; "
                "distance is too small for the spectrum's oscillation scale")
        edges = np.linspace(0.0, k_fine_stop, n_fine + 1)
        if k_fine_stop < k_upper:
            n_coarse = int(math.ceil((k_upper - k_fine_stop) / coarse))
            edges = np.concatenate([edges,
                                    np.linspace(k_fine_stop, k_upper, n_coarse + 1)[1:]])
    extra = [b for b in spectra.k_breakpoints if 0.0 < b < k_upper]
    if extra:
        edges = np.unique(np.concatenate([edges, extra]))
    return edges


def _panel_quad(f: Callable[[np.ndarray], np.ndarray], edges: np.ndarray) -> float:
    a, b = edges[:-1], edges[1:]
    half = 0.5 * (b - a)
    mid = 0.5 * (a + b)
    k = (mid[:, None] + half[:, None] * _GL_NODES[None, :]).ravel()
    vals = f(k).reshape(len(a), -1)
    return float(np.sum(half * (vals @ _GL_WEIGHTS)))


def _refined(f, edges, label: str, rel_tol: float) -> float:
    coarse = _panel_quad(f, edges)
    fine_edges = np.unique(np.concatenate([edges, 0.5 * (edges[:-1] + edges[1:])]))
    fine = _panel_quad(f, fine_edges)
    scale = max(abs(fine), abs(coarse))
    if scale > 0.0 and abs(fine - coarse) > max(10.0 * rel_tol, 1e-30) * scale:
        raise QuadratureError(
            f"{label} quadrature did not stabilize under panel refinement "
            f"(coarse={coarse:.9e}, fine={fine:.9e})",
            [coarse, fine])
    return fine


def patch_pressure_pp(spectra: PlatePairSpectra, d: float, *,
                      rel_tol: float = 1e-7) -> float:
    """Exact plane-plane patch pressure (Pa) at gap d (m).

    Positive values mean attraction; identical uncorrelated plates always
    attract.  Raises QuadratureError with diagnostics if the k-integral
    fails its refinement check.
    """
    if not (d > 0.0):
        raise ValueError("d must be > 0")

    def integrand(k: np.ndarray) -> np.ndarray:
        kd = k * d
        sinh2 = np.sinh(kd) ** 2
        bracket = spectra.c11(k) + spectra.c22(k) - 2.0 * spectra.c12(k) * np.cosh(kd)
        with np.errstate(invalid="ignore", divide="ignore"):
            out = k ** 3 * bracket / sinh2
        return np.where(kd > 0.0, out, 0.0)

    edges = _panel_edges(d, spectra)
    return EPSILON_0 / (4.0 * math.pi) * _refined(integrand, edges, "pressure", rel_tol)


def patch_energy_pp(spectra: PlatePairSpectra, d: float, *,
                    rel_tol: float = 1e-7) -> float:
    """Plane-plane patch interaction energy per unit area (J/m^2) at gap d:
    the integral of patch_pressure_pp from d to infinity, evaluated with the
    distance integration folded analytically into the k-space kernel."""
    if not (d > 0.0):
        raise ValueError("d must be > 0")

    def integrand(k: np.ndarray) -> np.ndarray:
        kd = k * d
        direct = (spectra.c11(k) + spectra.c22(k)) * 2.0 / np.expm1(2.0 * kd)
        with np.errstate(invalid="ignore", divide="ignore"):
            cross = 2.0 * spectra.c12(k) / np.sinh(kd)
            out = k ** 2 * (direct - cross)
        return np.where(kd > 0.0, out, 0.0)

    edges = _panel_edges(d, spectra)
    return EPSILON_0 / (4.0 * math.pi) * _refined(integrand, edges, "energy", rel_tol)


# ---------------------------------------------------------------------------
# Sphere-plane mappings and asymptotic laws
# ---------------------------------------------------------------------------

def pfa_gradient(g: SpherePlaneGeometry, p_pp: float) -> float:
    """Sphere-plane force gradient (N/m) from the plane-plane pressure."""
    return 2.0 * math.pi * g.radius * p_pp


def pfa_force(g: SpherePlaneGeometry, e_pp: float) -> float:
    """Sphere-plane force (N) from the plane-plane energy per unit area."""
    return 2.0 * math.pi * g.radius * e_pp


def large_patch_pressure(mean_sq_voltage_difference: float, d: float) -> float:
    """Capacitor-limit pressure eps0 <(V1-V2)^2> / (2 d^2), valid when the
    patches are much larger than the gap.  For identical uncorrelated
    plates <(V1-V2)^2> = 2 Vrms^2, giving eps0 Vrms^2 / d^2."""
    return EPSILON_0 * mean_sq_voltage_difference / (2.0 * d * d)


def small_patch_pressure(total_zero_k_weight: float, d: float) -> float:
    """Opposite-limit pressure for spectra with a finite k=0 value:
    (eps0 / 4 pi) * (C11[0] + C22[0] - 2 C12[0]) * (3/2) zeta(3) / d^4.

    For identical uncorrelated quasi-local plates the total zero-k weight
    is 2 * (pi/4) * mean_sq_diameter * Vrms^2, so the law reduces to
    (3 zeta(3) / 16) * eps0 Vrms^2 mean_sq_diameter / d^4; the module
    constant SMALL_PATCH_PRESSURE_COEFF carries that prefactor.
    """
    return (EPSILON_0 / (4.0 * math.pi)) * total_zero_k_weight \
        * SINH_KERNEL_CUBED_INTEGRAL / d ** 4


def small_patch_pressure_identical(mean_sq_diameter: float, v_rms: float,
                                   d: float) -> float:
    """small_patch_pressure specialized to identical uncorrelated
    quasi-local plates."""
    return SMALL_PATCH_PRESSURE_COEFF * EPSILON_0 * v_rms ** 2 * mean_sq_diameter / d ** 4


# ---------------------------------------------------------------------------
# Ergodic-sampling validity check
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ValidityReport:
    """How many average patch areas fit in the sphere-plane interaction
    area pi R D; the statistical (ensemble-average) description of patches
    needs this count to be large."""

    interaction_area: float   # pi R D, m^2
    mean_patch_area: float    # (pi/4) * mean_sq_diameter, m^2
    ratio: float
    warn: bool                # set when ratio < 10

    def __str__(self) -> str:
        lines = [
            f"interaction area pi*R*D : {self.interaction_area:.6e} m^2",
            f"mean patch area         : {self.mean_patch_area:.6e} m^2",
            f"patch count ratio       : {self.ratio:.4g}",
        ]
        if self.warn:
            lines.append("WARNING: fewer than 10 patch areas in the "
                         "interaction area; ensemble averaging is suspect")
        return "\n".join(lines)


def validity_ratio(g: SpherePlaneGeometry, mean_sq_diameter: float) -> ValidityReport:
    """Count of average patch areas, (pi R D) / ((pi/4) mean_sq_diameter),
    inside the effective interaction area; warns when < 10."""
    if mean_sq_diameter < 0.0:
        raise ValueError("mean_sq_diameter must be >= 0")
    interaction = math.pi * g.radius * g.distance
    if mean_sq_diameter == 0.0:
        return ValidityReport(interaction, 0.0, math.inf, False)
    patch_area = 0.25 * math.pi * mean_sq_diameter
    ratio = interaction / patch_area
    return ValidityReport(interaction, patch_area, ratio, ratio < 10.0)
