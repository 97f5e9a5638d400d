"""Finite-temperature Casimir pressure between metallic half-spaces and
residual-signal bookkeeping.

The plane-plane pressure is a Matsubara sum over imaginary frequencies
xi_n = 2 pi n k_B T / hbar (n = 0 term weighted 1/2) of a transverse-
wavevector integral over TE/TM Fresnel reflection coefficients.  Two
permittivity models are provided for the imaginary axis:

* DrudeExtrapolated -- Kramers-Kronig transform of tabulated eps''(omega),
  extended below the table by the Drude conduction term
  eps''(omega) = Omega_P^2 gamma / (omega (omega^2 + gamma^2)) and above it
  by an omega^-3 falloff pinned to the last table point.
* GeneralizedPlasma -- dissipationless conduction term Omega_P^2 / xi^2
  plus Lorentz oscillators for interband transitions.

Sign convention: lifshitz_pressure_pp returns negative values for
attraction; the CLI reports positive magnitudes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .constants import C_LIGHT, EV, HBAR, HBAR_C_EV_M, K_B
from .pressure import SpherePlaneGeometry

__all__ = [
    "OpticalDataTable",
    "DrudeExtrapolated",
    "GeneralizedPlasma",
    "ResidualDataset",
    "MatsubaraError",
    "drude_epsilon",
    "epsilon_imaginary_axis",
    "lifshitz_pressure_pp",
    "ideal_casimir_pressure",
    "residual",
]

OBSERVABLES = ("pressure_pp", "force_sp", "gradient_sp")


class MatsubaraError(RuntimeError):
    """Matsubara sum failed to converge; carries the term count reached."""

    def __init__(self, message: str, terms: int):
        self.terms = terms
        super().__init__(f"{message} (after {terms} terms)")


# ---------------------------------------------------------------------------
# Optical data and permittivity models
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class OpticalDataTable:
    """Tabulated permittivity rows (photon energy in eV, eps', eps'')."""

    energies_ev: np.ndarray
    eps_real: np.ndarray
    eps_imag: np.ndarray
    source: str = ""

    def __post_init__(self):
        e = np.asarray(self.energies_ev, dtype=float)
        er = np.asarray(self.eps_real, dtype=float)
        ei = np.asarray(self.eps_imag, dtype=float)
        if e.ndim != 1 or e.size < 2 or er.shape != e.shape or ei.shape != e.shape:
            raise ValueError("table needs >= 2 aligned rows")
        if np.any(np.diff(e) <= 0.0):
            raise ValueError("photon energies must be strictly increasing")
        if np.any(ei < 0.0):
            raise ValueError("eps'' must be >= 0 at every row")
        object.__setattr__(self, "energies_ev", e)
        object.__setattr__(self, "eps_real", er)
        object.__setattr__(self, "eps_imag", ei)

    @classmethod
    def from_file(cls, path: str | Path) -> "OpticalDataTable":
        """Load a three-column text table (energy_eV, eps_real, eps_imag);
        columns may be whitespace- or comma-separated, `#` starts a comment."""
        rows = []
        path = Path(path)
        for ln, line in enumerate(path.read_text().splitlines(), start=1):
            body = line.split("#", 1)[0].strip()
            if not body:
                continue
            parts = body.replace(",", " ").split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{ln}: expected 3 columns, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise ValueError(f"{path}:{ln}: {exc}") from None
        if len(rows) < 2:
            raise ValueError(f"{path}: fewer than 2 data rows")
        arr = np.array(rows)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], source=str(path))


def drude_epsilon(omega_p_ev: float, gamma_ev: float, xi_ev):
    """Drude conduction permittivity on the imaginary axis:
    1 + Omega_P^2 / (xi (xi + gamma))."""
    xi = np.asarray(xi_ev, dtype=float)
    out = 1.0 + omega_p_ev ** 2 / (xi * (xi + gamma_ev))
    return float(out) if xi.ndim == 0 else out


@dataclass(frozen=True)
class DrudeExtrapolated:
    """Tabulated optical data with Drude low-frequency extrapolation.

    epsilon(i xi) = 1 + (2/pi) int_0^inf domega omega eps''(omega)
                    / (omega^2 + xi^2)
    with eps'' taken from the Drude term below the table, linear
    interpolation of the table inside it, and an omega^-3 tail pinned to
    the last row above it.  All three pieces integrate in closed form, so
    evaluation is exact for that composite eps''.
    """

    table: OpticalDataTable
    omega_p_ev: float
    gamma_ev: float

    def __post_init__(self):
        if not (self.omega_p_ev > 0.0):
            raise ValueError("Omega_P must be > 0")
        if self.gamma_ev < 0.0:
            raise ValueError("gamma must be >= 0")

    def epsilon(self, xi_ev):
        xi = np.atleast_1d(np.asarray(xi_ev, dtype=float))
        if np.any(xi <= 0.0):
            raise ValueError("xi must be > 0")
        total = self._drude_below(xi) + self._table_part(xi) + self._tail(xi)
        out = 1.0 + (2.0 / math.pi) * total
        return float(out[0]) if np.isscalar(xi_ev) or np.ndim(xi_ev) == 0 else out

    # closed-form pieces of int omega eps''(omega) / (omega^2 + xi^2) ------

    def _drude_below(self, xi: np.ndarray) -> np.ndarray:
        e0 = self.table.energies_ev[0]
        op2, g = self.omega_p_ev ** 2, self.gamma_ev
        if g == 0.0:
            # gamma -> 0 limit: conduction weight collapses onto omega = 0
            return (math.pi / 2.0) * op2 / xi ** 2
        same = np.isclose(xi, g, rtol=1e-12, atol=0.0)
        xi_safe = np.where(same, g * (1.0 + 1e-8), xi)
        gen = (np.arctan(e0 / g) / g - np.arctan(e0 / xi_safe) / xi_safe) \
            / (xi_safe ** 2 - g ** 2)
        if np.any(same):
            # xi == gamma: int_0^E domega / (omega^2 + g^2)^2
            lim = e0 / (2.0 * g * g * (e0 * e0 + g * g)) \
                + math.atan(e0 / g) / (2.0 * g ** 3)
            gen = np.where(same, lim, gen)
        return op2 * g * gen

    def _table_part(self, xi: np.ndarray) -> np.ndarray:
        e = self.table.energies_ev
        ei = self.table.eps_imag
        a, b = e[:-1], e[1:]
        slope = (ei[1:] - ei[:-1]) / (b - a)
        intercept = ei[:-1] - slope * a
        x2 = xi[:, None] ** 2
        log_term = 0.5 * np.log((b[None, :] ** 2 + x2) / (a[None, :] ** 2 + x2))
        atan_term = np.arctan(b[None, :] / xi[:, None]) - np.arctan(a[None, :] / xi[:, None])
        seg = intercept[None, :] * log_term \
            + slope[None, :] * ((b - a)[None, :] - xi[:, None] * atan_term)
        return seg.sum(axis=1)

    def _tail(self, xi: np.ndarray) -> np.ndarray:
        en = self.table.energies_ev[-1]
        cn = self.table.eps_imag[-1] * en ** 3
        return cn / xi ** 2 * (1.0 / en - (math.pi / 2.0 - np.arctan(en / xi)) / xi)

    def zero_frequency_te_weight(self) -> float:
        """lim xi->0 of xi^2 (eps - 1) in eV^2; zero for finite dissipation,
        which kills the n = 0 TE reflection."""
        return 0.0 if self.gamma_ev > 0.0 else self.omega_p_ev ** 2


@dataclass(frozen=True)
class GeneralizedPlasma:
    """Dissipationless conduction term plus Lorentz interband oscillators:
    epsilon(i xi) = 1 + Omega_P^2/xi^2 + sum_j f_j / (omega_j^2 + xi g_j + xi^2)
    with f_j in eV^2 and omega_j, g_j in eV."""

    omega_p_ev: float
    oscillators: tuple[tuple[float, float, float], ...] = field(default=())

    def __post_init__(self):
        if not (self.omega_p_ev > 0.0):
            raise ValueError("Omega_P must be > 0")
        for f, w, g in self.oscillators:
            if f < 0.0 or w <= 0.0 or g < 0.0:
                raise ValueError("oscillators need f >= 0, omega > 0, g >= 0")
        object.__setattr__(self, "oscillators",
                           tuple((float(f), float(w), float(g))
                                 for f, w, g in self.oscillators))

    def epsilon(self, xi_ev):
        xi = np.asarray(xi_ev, dtype=float)
        if np.any(xi <= 0.0):
            raise ValueError("xi must be > 0")
        out = 1.0 + self.omega_p_ev ** 2 / xi ** 2
        for f, w, g in self.oscillators:
            out = out + f / (w * w + xi * g + xi * xi)
        return float(out) if xi.ndim == 0 else out

    def zero_frequency_te_weight(self) -> float:
        return self.omega_p_ev ** 2


PermittivityModel = DrudeExtrapolated | GeneralizedPlasma


def epsilon_imaginary_axis(m: PermittivityModel, xi_ev):
    """Permittivity on the imaginary frequency axis at energy xi (eV)."""
    return m.epsilon(xi_ev)


# ---------------------------------------------------------------------------
# Lifshitz pressure
# ---------------------------------------------------------------------------

_Y_NODES_W = None


def _y_grid():
    """Gauss-Legendre nodes/weights on [0, 60] split into three panels,
    reused for every Matsubara term (y = 2 kappa d - y_n offset)."""
    global _Y_NODES_W
    if _Y_NODES_W is None:
        nodes, weights = np.polynomial.legendre.leggauss(32)
        ys, ws = [], []
        for a, b in ((0.0, 6.0), (6.0, 18.0), (18.0, 60.0)):
            half, mid = 0.5 * (b - a), 0.5 * (a + b)
            ys.append(mid + half * nodes)
            ws.append(half * weights)
        _Y_NODES_W = (np.concatenate(ys), np.concatenate(ws))
    return _Y_NODES_W


def _mode_sum(y: np.ndarray, w1: np.ndarray, w2: np.ndarray,
              eps1: np.ndarray, eps2: np.ndarray, d: float) -> np.ndarray:
    """Integrand sum over polarizations at scaled wavevector y = 2 kappa d.

    w_i = xi^2 (eps_i - 1) in eV^2 (finite at xi = 0 for plasma-type
    conduction); eps_i may be inf at xi = 0, where r_TM = 1.
    """
    scale = 2.0 * d / HBAR_C_EV_M  # converts eV to y units
    s1 = np.sqrt(y * y + w1 * scale ** 2)
    s2 = np.sqrt(y * y + w2 * scale ** 2)
    r_te = ((y - s1) / (y + s1)) * ((y - s2) / (y + s2))
    with np.errstate(invalid="ignore", over="ignore"):
        r1_tm = np.where(np.isinf(eps1), 1.0, (eps1 * y - s1) / (eps1 * y + s1))
        r2_tm = np.where(np.isinf(eps2), 1.0, (eps2 * y - s2) / (eps2 * y + s2))
    r_tm = r1_tm * r2_tm
    expy = np.exp(-y)
    out = np.zeros_like(y)
    for rr in (r_te, r_tm):
        q = rr * expy
        out += q / (1.0 - q)
    return y * y * out


def lifshitz_pressure_pp(m1: PermittivityModel, m2: PermittivityModel,
                         d: float, temperature: float, *,
                         rel_term_tol: float = 1e-8, min_terms: int = 10,
                         max_terms: int = 4_000_000,
                         term_limit: int | None = None,
                         correction=None,
                         return_diagnostics: bool = False):
    """Finite-temperature Casimir pressure (Pa) between half-spaces m1, m2
    across a vacuum gap d (m) at temperature T (K).

    Returns a negative number for attraction.  The Matsubara sum runs until
    a block of terms contributes less than `rel_term_tol` of the running
    total (at least `min_terms` terms); `term_limit` forces an exact term
    count instead, for convergence studies.  `correction`, when given, is a
    multiplicative factor curve d -> factor (e.g. a roughness correction).
    Raises MatsubaraError if the sum fails to settle within `max_terms`.
    """
    if not (d > 0.0):
        raise ValueError("d must be > 0")
    if not (temperature > 0.0):
        raise ValueError("temperature must be > 0")

    y, wq = _y_grid()
    xi_step = 2.0 * math.pi * K_B * temperature / EV  # eV between Matsubara terms
    y_step = 2.0 * d * xi_step / HBAR_C_EV_M

    # n = 0 term, weight 1/2: TM reflects fully, TE controlled by the
    # xi^2 (eps - 1) limit of each model
    w1_0 = m1.zero_frequency_te_weight()
    w2_0 = m2.zero_frequency_te_weight()
    g0 = _mode_sum(y, np.full_like(y, w1_0), np.full_like(y, w2_0),
                   np.full_like(y, np.inf), np.full_like(y, np.inf), d)
    total = 0.5 * float(np.dot(wq, g0))

    block = 256
    n_start = 1
    terms_used = 0
    converged = term_limit is not None
    while n_start <= (term_limit or max_terms):
        n_stop = min(n_start + block - 1, term_limit or max_terms)
        n = np.arange(n_start, n_stop + 1, dtype=float)
        if n[0] * y_step > 120.0:
            converged = True
            break
        xi = n * xi_step
        eps1 = np.atleast_1d(m1.epsilon(xi))
        eps2 = np.atleast_1d(m2.epsilon(xi))
        yy = n[:, None] * y_step + y[None, :]
        g = _mode_sum(yy,
                      (xi ** 2 * (eps1 - 1.0))[:, None],
                      (xi ** 2 * (eps2 - 1.0))[:, None],
                      eps1[:, None], eps2[:, None], d)
        contrib = g @ wq
        total += float(contrib.sum())
        terms_used = int(n_stop)
        if term_limit is None and terms_used >= min_terms:
            # terms decay ~ exp(-n y_step); bound the whole remaining tail,
            # not just the next term
            tail = abs(contrib[-1]) / max(math.expm1(min(y_step, 50.0)), 1e-12)
            if tail <= rel_term_tol * max(abs(total), 1e-300):
                converged = True
                break
        n_start = n_stop + 1
    if not converged:
        raise MatsubaraError(
            f"Matsubara sum not converged to {rel_term_tol:g} relative", terms_used)

    magnitude = K_B * temperature / (8.0 * math.pi * d ** 3) * total
    if correction is not None:
        magnitude *= correction(d)
    result = -magnitude
    if return_diagnostics:
        return result, {"terms": terms_used}
    return result


def ideal_casimir_pressure(d: float) -> float:
    """Perfect-mirror zero-temperature pressure magnitude
    pi^2 hbar c / (240 d^4)."""
    return math.pi ** 2 * HBAR * C_LIGHT / (240.0 * d ** 4)


# ---------------------------------------------------------------------------
# Residual datasets
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ResidualDataset:
    """Distance-indexed residuals (measurement minus theory) with
    per-point uncertainties.

    observable -- one of pressure_pp (Pa), force_sp (N), gradient_sp (N/m).
    geometry   -- required for the sphere-plane observables.
    """

    distances: np.ndarray
    values: np.ndarray
    sigmas: np.ndarray
    observable: str
    geometry: SpherePlaneGeometry | None = None

    def __post_init__(self):
        dd = np.asarray(self.distances, dtype=float)
        vv = np.asarray(self.values, dtype=float)
        ss = np.asarray(self.sigmas, dtype=float)
        if dd.ndim != 1 or vv.shape != dd.shape or ss.shape != dd.shape:
            raise ValueError("distances, values, sigmas must be aligned 1-D arrays")
        if np.any(dd <= 0.0) or np.any(np.diff(dd) <= 0.0):
            raise ValueError("distances must be positive and strictly increasing")
        if np.any(ss <= 0.0):
            raise ValueError("every sigma must be > 0")
        if self.observable not in OBSERVABLES:
            raise ValueError(f"observable must be one of {OBSERVABLES}")
        if self.observable != "pressure_pp" and self.geometry is None:
            raise ValueError(f"{self.observable} requires a SpherePlaneGeometry")
        object.__setattr__(self, "distances", dd)
        object.__setattr__(self, "values", vv)
        object.__setattr__(self, "sigmas", ss)

    def __len__(self) -> int:
        return self.distances.size

    def to_csv(self, path: str | Path) -> None:
        lines = [f"# observable: {self.observable}"]
        if self.geometry is not None:
            lines.append(f"# radius_m: {self.geometry.radius!r}")
        lines.append("D_nm, value, sigma")
        for dist, val, sig in zip(self.distances, self.values, self.sigmas):
            lines.append(f"{dist * 1e9:.12g}, {val:.12g}, {sig:.12g}")
        Path(path).write_text("\n".join(lines) + "\n")

    @classmethod
    def from_csv(cls, path: str | Path) -> "ResidualDataset":
        """Parse `D_nm, value, sigma` rows; an `# observable:` comment line
        declares the observable and `# radius_m:` the sphere radius."""
        observable = None
        radius = None
        rows = []
        path = Path(path)
        for ln, line in enumerate(path.read_text().splitlines(), start=1):
            stripped = line.strip()
            if stripped.startswith("#"):
                body = stripped.lstrip("#").strip()
                if body.startswith("observable:"):
                    observable = body.split(":", 1)[1].strip()
                elif body.startswith("radius_m:"):
                    radius = float(body.split(":", 1)[1])
                continue
            if not stripped or stripped.lower().startswith("d_nm"):
                continue
            parts = stripped.replace(",", " ").split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{ln}: expected 3 columns, got {len(parts)}")
            try:
                rows.append([float(p) for p in parts])
            except ValueError as exc:
                raise ValueError(f"{path}:{ln}: {exc}") from None
        if observable is None:
            raise ValueError(f"{path}: missing '# observable:' declaration")
        if not rows:
            raise ValueError(f"{path}: no data rows")
        arr = np.array(rows)
        geom = None
        if radius is not None:
            geom = SpherePlaneGeometry(radius, float(arr[0, 0] * 1e-9))
        return cls(arr[:, 0] * 1e-9, arr[:, 1], arr[:, 2], observable, geom)


def residual(distances, measured, sigmas, prediction,
             observable: str = "pressure_pp",
             geometry: SpherePlaneGeometry | None = None) -> ResidualDataset:
    """Pointwise measurement minus theory prediction.

    `prediction` is a curve D -> value evaluated at every measurement
    distance and treated as exact, so the measurement sigmas pass through
    unchanged.  Raises ValueError listing the offending points if the
    prediction is not finite somewhere.
    """
    dd = np.asarray(distances, dtype=float)
    mm = np.asarray(measured, dtype=float)
    pred = np.array([prediction(x) for x in dd], dtype=float)
    bad = ~np.isfinite(pred)
    if np.any(bad):
        where = ", ".join(f"{x:.6g} m" for x in dd[bad][:8])
        raise ValueError(f"prediction not evaluable at: {where}")
    return ResidualDataset(dd, mm - pred, np.asarray(sigmas, dtype=float),
                           observable, geometry)
