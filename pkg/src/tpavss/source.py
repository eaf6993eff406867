"""Pulsed down-conversion source: joint spectral amplitude, Schmidt modes, gain.

The two-photon amplitude of a collinear, first-order-dispersion crystal pumped
by a Gaussian pulse is sampled on two uniform angular-frequency grids,
factorized with a quadrature-weighted singular value decomposition and then
dressed with Bogoliubov coefficients ``u = cosh(gamma lambda)`` and
``v = sinh(gamma lambda)`` describing an intense (high-gain) twin beam.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
import scipy.linalg
import scipy.optimize

from .constants import wavelength_to_omega
from .errors import CalibrationError, DispersionRangeError, DomainError, NumericalError


def _frozen_array(values, dtype=None):
    arr = np.array(values, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class FrequencyGrid:
    """Uniform angular-frequency grid.

    Parameters
    ----------
    center : float
        Central angular frequency in rad/s.
    span : float
        Full width ``values[-1] - values[0]`` in rad/s.
    n_points : int
        Number of samples, at least 2.
    """

    center: float
    span: float
    n_points: int

    def __post_init__(self):
        if int(self.n_points) != self.n_points or self.n_points < 2:
            raise DomainError(f"n_points must be an integer >= 2, got {self.n_points}")
        if not (math.isfinite(self.span) and self.span > 0):
            raise DomainError(f"span must be positive and finite, got {self.span}")
        if not math.isfinite(self.center):
            raise DomainError("center must be finite")
        object.__setattr__(self, "n_points", int(self.n_points))

    @property
    def spacing(self) -> float:
        return self.span / (self.n_points - 1)

    @property
    def values(self) -> np.ndarray:
        offsets = (np.arange(self.n_points) - 0.5 * (self.n_points - 1)) * self.spacing
        return self.center + offsets

    @property
    def detunings(self) -> np.ndarray:
        """Offsets ``values - center`` computed without cancellation."""
        return (np.arange(self.n_points) - 0.5 * (self.n_points - 1)) * self.spacing

    @property
    def weights(self) -> np.ndarray:
        """Trapezoidal quadrature weights."""
        w = np.full(self.n_points, self.spacing)
        w[0] *= 0.5
        w[-1] *= 0.5
        return w

    def as_dict(self) -> dict:
        return {"center": self.center, "span": self.span, "n_points": self.n_points}


@dataclass(frozen=True)
class CrystalParams:
    """Nonlinear crystal with linear dispersion about degenerate phase matching.

    Parameters
    ----------
    length : float
        Crystal length L in metres.
    g_pump, g_signal, g_idler : float
        Inverse group velocities in s/m.
    wl_pump : float
        Central pump wavelength in metres.
    wl_signal, wl_idler : float, optional
        Central signal/idler wavelengths. Default to the degenerate value
        ``2 * wl_pump`` for both.
    dispersion_window : float
        Relative half width of the frequency window, around each central
        frequency, in which the linear dispersion model is accepted.
    """

    length: float
    g_pump: float
    g_signal: float
    g_idler: float
    wl_pump: float
    wl_signal: Optional[float] = None
    wl_idler: Optional[float] = None
    dispersion_window: float = 0.5

    def __post_init__(self):
        if self.wl_signal is None:
            object.__setattr__(self, "wl_signal", 2.0 * self.wl_pump)
        if self.wl_idler is None:
            object.__setattr__(self, "wl_idler", 2.0 * self.wl_pump)
        if not self.length > 0:
            raise DomainError(f"crystal length must be positive, got {self.length}")
        for name in ("g_pump", "g_signal", "g_idler"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        for name in ("wl_pump", "wl_signal", "wl_idler"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if not self.dispersion_window > 0:
            raise DomainError("dispersion_window must be positive")
        lhs = 1.0 / self.wl_pump
        rhs = 1.0 / self.wl_signal + 1.0 / self.wl_idler
        if abs(lhs - rhs) > 1e-9 * lhs:
            raise DomainError(
                "central wavelengths violate energy conservation "
                f"1/lp = 1/ls + 1/li (relative mismatch {abs(lhs - rhs) / lhs:.3e})"
            )

    @property
    def omega_p0(self) -> float:
        return wavelength_to_omega(self.wl_pump)

    @property
    def omega_s0(self) -> float:
        return wavelength_to_omega(self.wl_signal)

    @property
    def omega_i0(self) -> float:
        return wavelength_to_omega(self.wl_idler)

    @property
    def walkoff_time(self) -> float:
        """Signal/idler group-delay difference ``(G_i - G_s) L`` in seconds."""
        return (self.g_idler - self.g_signal) * self.length

    def with_length(self, length: float) -> "CrystalParams":
        return dataclasses.replace(self, length=length)


@dataclass(frozen=True)
class PumpParams:
    """Gaussian pump pulse with duration ``tau_p`` (s) and carrier ``omega_p0`` (rad/s)."""

    tau_p: float
    omega_p0: float

    def __post_init__(self):
        if not self.tau_p > 0:
            raise DomainError(f"pump duration must be positive, got {self.tau_p}")
        if not self.omega_p0 > 0:
            raise DomainError("pump carrier frequency must be positive")

    @classmethod
    def from_wavelength(cls, tau_p: float, wavelength: float) -> "PumpParams":
        return cls(tau_p=tau_p, omega_p0=wavelength_to_omega(wavelength))


@dataclass(frozen=True, eq=False)
class JointSpectralAmplitude:
    """Sampled two-photon amplitude ``values[m, n] = Phi(ws[m], wi[n])`` and its norm."""

    grid_s: FrequencyGrid
    grid_i: FrequencyGrid
    values: np.ndarray
    norm: float

    def __post_init__(self):
        object.__setattr__(self, "values", _frozen_array(self.values, complex))
        if self.values.shape != (self.grid_s.n_points, self.grid_i.n_points):
            raise DomainError("JSA matrix shape does not match its grids")

    def normalized(self) -> np.ndarray:
        """Amplitude divided by its norm (unit quadrature L2 norm)."""
        if self.norm == 0:
            raise NumericalError("joint spectral amplitude vanishes on the grid")
        return self.values / self.norm


@dataclass(frozen=True, eq=False)
class SchmidtDecomposition:
    """Schmidt modes of a normalized two-photon amplitude plus gain coefficients.

    Mode arrays have shape ``(n_modes, n_points)``. The normalized amplitude is
    reconstructed as ``sum_g lambda_g conj(f_s,g(ws)) conj(f_i,g(wi))``.

    Attributes
    ----------
    singular_values : ndarray
        Schmidt coefficients ``lambda_g`` in descending order.
    modes_s, modes_i : ndarray
        Signal and idler mode functions, orthonormal under the trapezoid
        weights of their grids.
    gain : float or None
        Dimensionless gain ``gamma``; ``None`` before :func:`apply_gain`.
    u, v : ndarray or None
        Bogoliubov coefficients.
    residual : float
        Quadrature-weighted Frobenius norm of the truncation error.
    """

    grid_s: FrequencyGrid
    grid_i: FrequencyGrid
    singular_values: np.ndarray
    modes_s: np.ndarray
    modes_i: np.ndarray
    gain: Optional[float] = None
    u: Optional[np.ndarray] = None
    v: Optional[np.ndarray] = None
    residual: float = 0.0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "singular_values", _frozen_array(self.singular_values, float))
        object.__setattr__(self, "modes_s", _frozen_array(self.modes_s, complex))
        object.__setattr__(self, "modes_i", _frozen_array(self.modes_i, complex))
        if self.u is not None:
            object.__setattr__(self, "u", _frozen_array(self.u, float))
            object.__setattr__(self, "v", _frozen_array(self.v, float))
        n = self.singular_values.shape[0]
        if self.modes_s.shape != (n, self.grid_s.n_points) or self.modes_i.shape != (n, self.grid_i.n_points):
            raise DomainError("mode arrays do not match singular values and grids")

    @property
    def n_modes(self) -> int:
        return int(self.singular_values.shape[0])

    @property
    def has_gain(self) -> bool:
        return self.gain is not None

    def reconstruct(self) -> np.ndarray:
        """Rebuild the (truncated) normalized amplitude on the grids."""
        return np.einsum("g,gm,gn->mn", self.singular_values, self.modes_s.conj(), self.modes_i.conj())


def phase_mismatch(omega_s, omega_i, crystal: CrystalParams):
    """Linearized phase mismatch ``Delta k`` in 1/m.

    Parameters
    ----------
    omega_s, omega_i : array_like
        Signal and idler angular frequencies (rad/s); broadcast together.
    crystal : CrystalParams

    Returns
    -------
    ndarray or float
        ``G_p (ws + wi - wp0) - G_s (ws - ws0) - G_i (wi - wi0)``.

    Raises
    ------
    DispersionRangeError
        If any frequency lies outside the configured validity window.
    """
    ws = np.asarray(omega_s, dtype=float)
    wi = np.asarray(omega_i, dtype=float)
    win = crystal.dispersion_window
    ws0, wi0, wp0 = crystal.omega_s0, crystal.omega_i0, crystal.omega_p0
    if np.any(np.abs(ws / ws0 - 1.0) > win) or np.any(np.abs(wi / wi0 - 1.0) > win):
        raise DispersionRangeError(
            f"frequencies outside +/-{100 * win:g}% of the central frequencies; "
            "the linear dispersion model does not apply there"
        )
    ds = ws - ws0
    di = wi - wi0
    # Written with detunings so that the central point gives exactly zero.
    dk = crystal.g_pump * (ds + di + (ws0 + wi0 - wp0)) - crystal.g_signal * ds - crystal.g_idler * di
    return dk if dk.ndim else float(dk)


def _jsa_matrix(grid_s, grid_i, crystal, pump, constant):
    ws = grid_s.values
    wi = grid_i.values
    if np.any(ws <= 0) or np.any(wi <= 0):
        raise DomainError("grid frequencies must be positive")
    ds = grid_s.center - crystal.omega_s0 + grid_s.detunings
    di = grid_i.center - crystal.omega_i0 + grid_i.detunings
    phase_mismatch(ws[[0, -1]], wi[[0, -1]], crystal)  # range guard only
    dk = (crystal.g_pump - crystal.g_signal) * ds[:, None] + (crystal.g_pump - crystal.g_idler) * di[None, :]
    dk = dk + crystal.g_pump * (crystal.omega_s0 + crystal.omega_i0 - crystal.omega_p0)
    sum_detuning = (ds[:, None] + di[None, :]) + (crystal.omega_s0 + crystal.omega_i0 - pump.omega_p0)
    envelope = np.exp(-0.25 * pump.tau_p ** 2 * sum_detuning ** 2)
    half = 0.5 * dk * crystal.length
    matching = crystal.length * np.sinc(half / np.pi) * np.exp(-1j * half)
    return constant * np.sqrt(ws[:, None] * wi[None, :]) * envelope * matching


def build_jsa(grid_s: FrequencyGrid, grid_i: FrequencyGrid, crystal: CrystalParams,
              pump: PumpParams, constant: float = 1.0,
              edge_tolerance: float = 1e-3) -> JointSpectralAmplitude:
    """Sample the joint spectral amplitude of a pulsed crystal source.

    The longitudinal integral over the crystal is done in closed form,
    ``L sinc(dk L / 2) exp(-i dk L / 2)``. ``constant`` stands in for the
    collection of physical prefactors; only normalized quantities are used
    downstream.

    Warns
    -----
    RuntimeWarning
        When the amplitude on the grid boundary exceeds ``edge_tolerance``
        times its maximum (the grid clips the phase-matched region).
    """
    if not constant > 0:
        raise DomainError("amplitude constant must be positive")
    values = _jsa_matrix(grid_s, grid_i, crystal, pump, constant)
    mag = np.abs(values)
    peak = mag.max()
    edge = max(mag[0].max(), mag[-1].max(), mag[:, 0].max(), mag[:, -1].max())
    if peak > 0 and edge > edge_tolerance * peak:
        warnings.warn(
            f"joint spectral amplitude at the grid edge is {edge / peak:.2e} of its maximum; "
            "widen the frequency span",
            RuntimeWarning,
            stacklevel=2,
        )
    w2 = grid_s.weights[:, None] * grid_i.weights[None, :]
    norm = math.sqrt(float(np.sum(w2 * mag ** 2)))
    return JointSpectralAmplitude(grid_s, grid_i, values, norm)


def schmidt_decompose(jsa: JointSpectralAmplitude, n_modes: Optional[int] = None) -> SchmidtDecomposition:
    """Quadrature-weighted Schmidt decomposition.

    The matrix ``sqrt(w_m) Phi[m, n] sqrt(w_n)`` is factorized as ``U S V^H``
    so that the singular values approximate the continuous Schmidt
    coefficients independently of the grid resolution. Mode functions are
    recovered by dividing out the square-root weights.

    Parameters
    ----------
    jsa : JointSpectralAmplitude
    n_modes : int, optional
        Number of modes kept; defaults to full rank.

    Raises
    ------
    NumericalError
        If LAPACK fails to converge with both divide-and-conquer and QR drivers.
    """
    full_rank = min(jsa.grid_s.n_points, jsa.grid_i.n_points)
    if n_modes is None:
        n_modes = full_rank
    if not 1 <= n_modes <= full_rank:
        raise DomainError(f"n_modes must lie in [1, {full_rank}], got {n_modes}")
    sw_s = np.sqrt(jsa.grid_s.weights)
    sw_i = np.sqrt(jsa.grid_i.weights)
    a = sw_s[:, None] * jsa.normalized() * sw_i[None, :]
    if not np.all(np.isfinite(a)):
        raise NumericalError("joint spectral amplitude contains non-finite entries")
    try:
        u_mat, s, vh = scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesdd")
    except np.linalg.LinAlgError:
        try:
            u_mat, s, vh = scipy.linalg.svd(a, full_matrices=False, lapack_driver="gesvd")
        except np.linalg.LinAlgError as exc:
            sv = scipy.linalg.svdvals(a, check_finite=False) if np.all(np.isfinite(a)) else None
            cond = (sv[0] / sv[-1]) if sv is not None and sv[-1] > 0 else float("inf")
            raise NumericalError(
                f"singular value decomposition did not converge (shape {a.shape}, "
                f"condition estimate {cond:.3e})"
            ) from exc
    residual = float(np.sqrt(np.sum(s[n_modes:] ** 2)))
    modes_s = u_mat[:, :n_modes].T.conj() / sw_s[None, :]
    modes_i = vh[:n_modes, :].conj() / sw_i[None, :]
    return SchmidtDecomposition(
        grid_s=jsa.grid_s,
        grid_i=jsa.grid_i,
        singular_values=s[:n_modes],
        modes_s=modes_s,
        modes_i=modes_i,
        residual=residual,
    )


def apply_gain(decomp: SchmidtDecomposition, gamma: float) -> SchmidtDecomposition:
    """Attach Bogoliubov coefficients ``u = cosh(gamma lambda)``, ``v = sinh(gamma lambda)``."""
    if not (gamma >= 0 and math.isfinite(gamma)):
        raise DomainError(f"gain must be finite and non-negative, got {gamma}")
    x = gamma * decomp.singular_values
    return dataclasses.replace(decomp, gain=float(gamma), u=np.cosh(x), v=np.sinh(x))


def mean_photon_number(decomp: SchmidtDecomposition) -> float:
    """Mean photon number per beam, ``sum_g v_g**2``."""
    if not decomp.has_gain:
        raise DomainError("gain has not been applied to this decomposition")
    return float(np.sum(decomp.v ** 2))


def _photon_number(singular_values, gamma):
    return float(np.sum(np.sinh(gamma * singular_values) ** 2))


def calibrate_gain(decomp: SchmidtDecomposition, target_n: float, rtol: float = 1e-3,
                   max_iter: int = 200) -> float:
    """Find the gain giving a prescribed mean photon number.

    The map ``gamma -> sum sinh(gamma lambda_g)**2`` is strictly increasing,
    so a bracketed Brent iteration on ``[0, asinh(sqrt(N)) / lambda_1]``
    converges. The root is refined to machine precision; ``rtol`` is the
    acceptance tolerance checked afterwards.
    """
    if not (target_n > 0 and math.isfinite(target_n)):
        raise DomainError(f"target photon number must be positive, got {target_n}")
    lam = np.asarray(decomp.singular_values, dtype=float)
    if lam.size == 0 or lam[0] <= 0:
        raise CalibrationError("decomposition has no non-zero Schmidt coefficient")
    upper = math.asinh(math.sqrt(target_n)) / lam[0]
    try:
        gamma, info = scipy.optimize.brentq(
            lambda g: _photon_number(lam, g) - target_n, 0.0, upper,
            xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=max_iter, full_output=True,
        )
    except (RuntimeError, ValueError) as exc:
        raise CalibrationError(f"gain calibration failed: {exc}") from exc
    achieved = _photon_number(lam, gamma)
    if not info.converged or abs(achieved - target_n) > rtol * target_n:
        raise CalibrationError(
            f"gain calibration reached N = {achieved:.6g} for target {target_n:.6g} "
            f"after {info.iterations} iterations"
        )
    return float(gamma)


def marginal_fwhm(crystal: CrystalParams, pump: PumpParams, n_probe: int = 801) -> float:
    """FWHM (rad/s) of the marginal signal spectrum, estimated numerically.

    The amplitude is probed on a wide square grid whose half width is set
    by the sinc and pump bandwidths; the marginal ``sum_i |Phi|^2`` is
    interpolated linearly at the half-maximum crossings.
    """
    te = abs(crystal.walkoff_time)
    widths = [8.0 / pump.tau_p]
    if te > 0:
        widths.append(40.0 * math.pi / te)
    half = max(widths)
    half = min(half, 0.4 * crystal.dispersion_window * min(crystal.omega_s0, crystal.omega_i0))
    gs = FrequencyGrid(crystal.omega_s0, 2 * half, n_probe)
    gi = FrequencyGrid(crystal.omega_i0, 2 * half, n_probe)
    phi = _jsa_matrix(gs, gi, crystal, pump, 1.0)
    marg = np.sum(np.abs(phi) ** 2, axis=1)
    marg = marg / marg.max()
    x = gs.detunings
    above = np.nonzero(marg >= 0.5)[0]
    lo, hi = above[0], above[-1]
    if lo == 0 or hi == n_probe - 1:
        return float(x[-1] - x[0])

    def cross(i0, i1):
        y0, y1 = marg[i0], marg[i1]
        return x[i0] + (0.5 - y0) * (x[i1] - x[i0]) / (y1 - y0)

    return float(cross(hi, hi + 1) - cross(lo - 1, lo))


def default_grids(crystal: CrystalParams, pump: PumpParams, n_points: int = 512,
                  n_sigma: float = 6.0, span: Optional[float] = None):
    """Signal and idler grids centred on the degenerate frequencies.

    By default the span is ``2 * n_sigma * sigma`` with ``sigma`` the
    Gaussian-equivalent width ``FWHM / 2.3548`` of the marginal signal
    spectrum; ``span`` overrides it. Both grids share the spacing so that
    sums ``ws[m] + wi[n]`` fall on a common lattice.
    """
    if span is None:
        sigma = marginal_fwhm(crystal, pump) / (2.0 * math.sqrt(2.0 * math.log(2.0)))
        span = 2.0 * n_sigma * sigma
    return (FrequencyGrid(crystal.omega_s0, span, n_points),
            FrequencyGrid(crystal.omega_i0, span, n_points))


def group_delay_offset(crystal: CrystalParams) -> float:
    """Signal delay (s) that centres the two-photon arrival-time distribution.

    With the delay entering as the spectral phase ``exp(-i w tau)`` on the
    signal amplitude, the crystal's own phase ``exp(-i dk L / 2)`` along the
    anti-diagonal is cancelled by ``tau0 = -(G_i - G_s) L / 2``.
    """
    return -0.5 * crystal.walkoff_time


@dataclass(frozen=True)
class SourceSettings:
    """Everything needed to rebuild a gain-dressed decomposition.

    ``span`` of ``None`` selects :func:`default_grids` with ``n_sigma``;
    ``n_modes`` of ``None`` keeps full rank.
    """

    crystal: CrystalParams
    pump: PumpParams
    n_points: int = 512
    span: Optional[float] = None
    n_sigma: float = 6.0
    target_n: float = 100.0
    n_modes: Optional[int] = None

    def with_length(self, length: float) -> "SourceSettings":
        return dataclasses.replace(self, crystal=self.crystal.with_length(length))


def build_source(settings: SourceSettings, edge_tolerance: float = 1e-3) -> SchmidtDecomposition:
    """JSA, Schmidt decomposition and calibrated gain in one call."""
    gs, gi = default_grids(settings.crystal, settings.pump, settings.n_points,
                           settings.n_sigma, settings.span)
    jsa = build_jsa(gs, gi, settings.crystal, settings.pump, edge_tolerance=edge_tolerance)
    decomp = schmidt_decompose(jsa, settings.n_modes)
    gamma = calibrate_gain(decomp, settings.target_n)
    return apply_gain(decomp, gamma)
