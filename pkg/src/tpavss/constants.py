"""Physical constants and unit conversions used throughout the package."""

import math

#: Reduced Planck constant in J s (CODATA 2018, exact by SI definition).
HBAR_J_S = 1.054571817e-34
#: Elementary charge in C (exact), i.e. the joule value of one electronvolt.
EV_J = 1.602176634e-19
#: Reduced Planck constant in eV s.
HBAR_EV_S = HBAR_J_S / EV_J
#: Speed of light in vacuum, m/s.
C_M_S = 299792458.0

#: Reference angular frequency for the sqrt(omega) field weighting (rad/s).
#: Only keeps magnitudes near unity; every observable is normalized.
OMEGA_REF = 1.0e15

FS = 1.0e-15
PS = 1.0e-12
FS2 = 1.0e-30
MM = 1.0e-3
UM = 1.0e-6


def ev_to_rad_s(energy_ev):
    """Convert an energy in eV to an angular frequency in rad/s."""
    return energy_ev / HBAR_EV_S


def rad_s_to_ev(omega):
    """Convert an angular frequency in rad/s to an energy in eV."""
    return omega * HBAR_EV_S


def wavelength_to_omega(wavelength_m):
    """Angular frequency 2 pi c / lambda for a vacuum wavelength in metres."""
    return 2.0 * math.pi * C_M_S / wavelength_m
