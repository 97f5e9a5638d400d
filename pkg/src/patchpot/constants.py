"""Physical constants (SI) shared across the package.

All internal computation is done in SI units (meters, volts, pascals,
kelvin); unit conversion happens only at I/O boundaries (see cli.units).
"""

import math

# Vacuum permittivity, F/m (CODATA 2018)
EPSILON_0 = 8.8541878128e-12

# Reduced Planck constant, J*s (exact, SI 2019)
HBAR = 1.054571817e-34

# Speed of light, m/s (exact)
C_LIGHT = 299792458.0

# Boltzmann constant, J/K (exact)
K_B = 1.380649e-23

# Elementary charge, C (exact); converts eV <-> J
EV = 1.602176634e-19

# hbar*c in eV*m, convenient for photon-energy <-> wavenumber conversions
HBAR_C_EV_M = HBAR * C_LIGHT / EV

# Riemann zeta(3), appears in the small-patch and thermal pressure laws
ZETA_3 = 1.2020569031595943

# k-integral of x^3/sinh^2(x) over (0, inf) = (3/2) * zeta(3)
SINH_KERNEL_CUBED_INTEGRAL = 1.5 * ZETA_3

# Coefficient of eps0 * Vrms^2 * mean_sq_diameter / D^4 in the small-patch
# (D >> patch size) limit for identical uncorrelated plates.  Derived from
# the exact pressure kernel with the disc-model zero-wavevector spectral
# density C[0] = (pi/4) * mean_sq_diameter * Vrms^2:
#   P -> (eps0 / 2 pi) * C[0] * (3/2) zeta(3) / D^4 = (3 zeta(3) / 16) * ...
SMALL_PATCH_PRESSURE_COEFF = (SINH_KERNEL_CUBED_INTEGRAL / (2.0 * math.pi)) * (math.pi / 4.0)

# Same limit for the plane-plane energy per unit area (integral of the
# pressure law over distance): (zeta(3)/16) * eps0 Vrms^2 mean_sq / D^3.
SMALL_PATCH_ENERGY_COEFF = SMALL_PATCH_PRESSURE_COEFF / 3.0
