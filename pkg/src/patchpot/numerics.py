"""Shared numerics: Bessel functions, semi-infinite quadrature, and the
zeroth-order Hankel-transform pair linking isotropic real-space correlation
profiles to their two-dimensional power spectra.

All routines are pure functions of their arguments and safe to call from
multiple threads.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy import integrate, special


def _quiet_quad(*args, **kwargs):
    """scipy.integrate.quad with IntegrationWarnings suppressed; accuracy is
    enforced by this module's own convergence checks."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", integrate.IntegrationWarning)
        return integrate.quad(*args, **kwargs)

__all__ = [
    "QuadratureError",
    "RadialFunction",
    "bessel_j",
    "integrate_semi_infinite",
    "hankel_forward",
    "hankel_inverse",
]


class QuadratureError(RuntimeError):
    """Raised when an integral fails its convergence checks.

    Carries the sequence of partial sums accumulated before giving up so
    the caller can inspect how (or whether) the integral was settling.
    """

    def __init__(self, message: str, partial_sums: Sequence[float] = ()):
        self.partial_sums = list(partial_sums)
        if self.partial_sums:
            tail = ", ".join(f"{s:.6e}" for s in self.partial_sums[-4:])
            message = f"{message} [last partial sums: {tail}]"
        super().__init__(message)


@dataclass(frozen=True)
class RadialFunction:
    """An isotropic profile of radius (or wavenumber), f(r) for r >= 0.

    evaluator   -- maps a nonnegative float (or array) to a real value;
                   must be deterministic and finite on the whole half-line.
    decay_hint  -- characteristic scale beyond which the profile is
                   negligible (sets the quadrature segmentation).
    support     -- optional hard support bound: the profile is exactly
                   zero for arguments > support.  None means unbounded.
    breakpoints -- arguments where the profile is not smooth (band edges,
                   support edges); quadratures split there.
    """

    evaluator: Callable[[float], float]
    decay_hint: float
    support: float | None = None
    breakpoints: tuple[float, ...] = ()

    def __post_init__(self):
        if not (self.decay_hint > 0.0) or not math.isfinite(self.decay_hint):
            raise ValueError("decay_hint must be positive and finite")
        if self.support is not None and not (self.support > 0.0):
            raise ValueError("support must be positive when given")

    def __call__(self, x):
        return self.evaluator(x)


def bessel_j(order: int, x):
    """Bessel function of the first kind, order 0 or 1, for x >= 0.

    Accepts scalars or arrays.  Only the two orders the transform pair and
    the band-limited correlation closed form need are exposed.
    """
    if order == 0:
        fn = special.j0
    elif order == 1:
        fn = special.j1
    else:
        raise ValueError(f"order must be 0 or 1, got {order!r}")
    arr = np.asarray(x, dtype=float)
    if np.any(arr < 0.0):
        raise ValueError("bessel_j requires x >= 0")
    out = fn(arr)
    return float(out) if np.isscalar(x) or arr.ndim == 0 else out


def _wynn_epsilon(sums: Sequence[float]) -> float:
    """Wynn epsilon-algorithm extrapolation of a sequence of partial sums.

    With geometrically spaced integration break points an algebraic 1/X
    remainder becomes a geometric sequence in the index, which the epsilon
    table sums exactly; exponential remainders are likewise accelerated.
    """
    n = len(sums)
    if n < 3:
        return float(sums[-1])
    eps_prev = np.zeros(n + 1)
    eps_curr = np.array(sums, dtype=float)
    best = eps_curr[-1]
    for _ in range(n - 1):
        diff = np.diff(eps_curr)
        # guard vanishing differences (already converged)
        tiny = np.abs(diff) < 1e-300
        diff = np.where(tiny, 1e-300, diff)
        eps_next = eps_prev[1:len(eps_curr)] + 1.0 / diff
        eps_prev, eps_curr = eps_curr, eps_next
        if len(eps_curr) == 0:
            break
        # even columns of the table approximate the limit
        if (n - len(eps_curr)) % 2 == 0 and np.isfinite(eps_curr[-1]):
            best = eps_curr[-1]
    return float(best)


def integrate_semi_infinite(
    f: Callable[[float], float],
    scale: float,
    *,
    rel_tol: float = 1e-9,
    oscillation_period: float | None = None,
    breakpoints: Sequence[float] = (),
    max_doublings: int = 44,
) -> float:
    """Integrate f over (0, infinity) for integrands that decay past `scale`.

    The axis is split into geometrically growing segments starting at
    `scale`; each segment is integrated adaptively, with the subdivision
    budget scaled to the number of oscillations when `oscillation_period`
    is given (e.g. the Bessel-zero spacing pi/k of a Hankel integrand).
    Cumulative sums are extrapolated with the Wynn epsilon algorithm so
    slowly decaying oscillatory tails converge without integrating them out
    to impractical distances.

    Raises QuadratureError (carrying the partial sums) when neither direct
    summation nor extrapolation settles within `rel_tol`.
    """
    if not (scale > 0.0) or not math.isfinite(scale):
        raise ValueError("scale must be positive and finite")

    def _segment(a: float, b: float) -> float:
        limit = 50
        if oscillation_period is not None:
            n_osc = (b - a) / oscillation_period
            limit = int(min(4000, max(50, 6 * n_osc)))
        pts = [p for p in breakpoints if a < p < b] or None
        val, _ = _quiet_quad(f, a, b, limit=limit, epsabs=1e-300,
                             epsrel=min(rel_tol, 1e-9), points=pts)
        return val

    sums: list[float] = []
    total = _segment(0.0, scale)
    sums.append(total)
    a, b = scale, 2.0 * scale
    accel_prev = None
    for _ in range(max_doublings):
        seg = _segment(a, b)
        total += seg
        sums.append(total)
        magnitude = max(abs(total), 1e-300)
        # fast exit for exponentially decaying integrands
        if abs(seg) <= rel_tol * magnitude and len(sums) >= 3:
            if abs(sums[-2] - sums[-3]) <= 10.0 * rel_tol * magnitude:
                return total
        accel = _wynn_epsilon(sums[-12:])
        if accel_prev is not None and np.isfinite(accel):
            if abs(accel - accel_prev) <= rel_tol * max(abs(accel), 1e-300):
                return accel
        accel_prev = accel if np.isfinite(accel) else accel_prev
        a, b = b, 2.0 * b
    raise QuadratureError(
        f"semi-infinite quadrature did not converge to rel_tol={rel_tol:g} "
        f"within {max_doublings} segment doublings (integrand may not decay)",
        sums,
    )


def _finite_oscillatory(f: Callable[[float], float], upper: float,
                        period: float | None, breakpoints: Sequence[float] = ()) -> float:
    """Adaptive integral of f over [0, upper], budgeted for oscillations."""
    limit = 100
    if period is not None and period > 0.0:
        limit = int(min(8000, max(100, 6 * upper / period)))
    pts = [p for p in breakpoints if 0.0 < p < upper] or None
    val, _ = _quiet_quad(f, 0.0, upper, limit=limit, epsabs=1e-300,
                         epsrel=1e-12, points=pts)
    return val


def hankel_forward(c: RadialFunction, k: float) -> float:
    """Zeroth-order Hankel transform: real-space profile -> spectral value.

    Evaluates 2 pi * integral_0^inf dr r J0(k r) c(r) at wavenumber k,
    i.e. the isotropic 2-D Fourier transform of c at radius k.
    """
    if k < 0.0:
        raise ValueError("wavenumber k must be >= 0")

    def integrand(r: float) -> float:
        return 2.0 * math.pi * r * special.j0(k * r) * c(r)

    period = math.pi / k if k > 0.0 else None
    if c.support is not None:
        return _finite_oscillatory(integrand, c.support, period, c.breakpoints)
    return integrate_semi_infinite(integrand, c.decay_hint, oscillation_period=period,
                                   breakpoints=c.breakpoints)


def hankel_inverse(cs: RadialFunction, r: float) -> float:
    """Inverse of hankel_forward: spectral profile -> correlation value.

    Evaluates (1 / 2 pi) * integral_0^inf dk k J0(k r) cs(k) at radius r.
    """
    if r < 0.0:
        raise ValueError("radius r must be >= 0")

    def integrand(k: float) -> float:
        return k * special.j0(k * r) * cs(k) / (2.0 * math.pi)

    period = math.pi / r if r > 0.0 else None
    if cs.support is not None:
        return _finite_oscillatory(integrand, cs.support, period, cs.breakpoints)
    return integrate_semi_infinite(integrand, cs.decay_hint, oscillation_period=period,
                                   breakpoints=cs.breakpoints)
