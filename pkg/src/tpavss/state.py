"""Gaussian twin-beam state: delay and chirp transforms, second moments, G2.

Conventions
-----------
The positive-frequency field of beam ``x`` is synthesized as

    E_x(t) = sum_m c_m a_x(w_m) exp(-i w_m t),    c_m = w_m^quad sqrt(w_m / OMEGA_REF)

so every time-domain quantity is a trapezoid quadrature of the spectral
moments with a sqrt(omega) field weight. The moment matrices themselves are
stored without that weight, which keeps their quadrature trace equal to the
mean photon number.

Delaying the signal field, ``E_s(t) -> E_s(t + tau)``, and chirping it map
the signal annihilation operator to ``exp(i chi(w)) a_s(w)`` with
``chi(w) = xi (w - w0)**2 - w tau``. The stored mode functions ``f_s``
enter the moments through ``conj(f_s)``, hence they pick up
``exp(-i chi)``.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .constants import OMEGA_REF
from .errors import DomainError
from .source import FrequencyGrid, SchmidtDecomposition, _frozen_array


@dataclass(frozen=True)
class BeamTransform:
    """Signal delay ``delay`` (s) and quadratic chirp ``chirp`` (s^2) about ``chirp_center``.

    ``chirp_center`` defaults to the centre of the signal grid when ``None``.
    """

    delay: float = 0.0
    chirp: float = 0.0
    chirp_center: Optional[float] = None

    def __post_init__(self):
        if not (np.isfinite(self.delay) and np.isfinite(self.chirp)):
            raise DomainError("delay and chirp must be finite")
        if self.chirp_center is not None and not np.isfinite(self.chirp_center):
            raise DomainError("chirp centre must be finite")

    @property
    def is_identity(self) -> bool:
        return self.delay == 0.0 and self.chirp == 0.0

    def operator_phase(self, grid: FrequencyGrid) -> np.ndarray:
        """Phase ``chi(w)`` multiplying the signal annihilation operator."""
        center = grid.center if self.chirp_center is None else self.chirp_center
        detuning = grid.detunings + (grid.center - center)
        return self.chirp * detuning ** 2 - grid.values * self.delay


def transform_modes(decomp: SchmidtDecomposition, xform: BeamTransform) -> SchmidtDecomposition:
    """Fold a delay/chirp into the signal mode functions.

    Singular values, Bogoliubov coefficients and idler modes are shared,
    unmodified, with the input.
    """
    if not decomp.has_gain:
        raise DomainError("apply gain before transforming the beam")
    if xform.is_identity:
        return decomp
    phase = np.exp(-1j * xform.operator_phase(decomp.grid_s))
    return dataclasses.replace(decomp, modes_s=decomp.modes_s * phase[None, :])


@dataclass(frozen=True, eq=False)
class MomentSet:
    """Second moments of the twin beam on the spectral grids.

    Attributes
    ----------
    pair_amplitude : ndarray, shape (n_s, n_i)
        ``<a_s(ws) a_i(wi)>``.
    occupation_s, occupation_i : ndarray
        ``<a^dag(w) a(w')>`` for each beam (Hermitian).
    """

    grid_s: FrequencyGrid
    grid_i: FrequencyGrid
    pair_amplitude: np.ndarray
    occupation_s: np.ndarray
    occupation_i: np.ndarray

    def __post_init__(self):
        for name in ("pair_amplitude", "occupation_s", "occupation_i"):
            object.__setattr__(self, name, _frozen_array(getattr(self, name), complex))

    def field_weights(self, beam: str) -> np.ndarray:
        grid = self.grid_s if beam == "s" else self.grid_i
        return field_weights(grid)

    def photon_number(self, beam: str = "s") -> float:
        grid = self.grid_s if beam == "s" else self.grid_i
        occ = self.occupation_s if beam == "s" else self.occupation_i
        return float(np.real(np.sum(grid.weights * np.diag(occ))))


def field_weights(grid: FrequencyGrid) -> np.ndarray:
    """Quadrature weight times the sqrt(omega) field factor, ``c_m``."""
    return grid.weights * np.sqrt(grid.values / OMEGA_REF)


def _hermitian_product(x):
    m = x @ x.conj().T
    return 0.5 * (m + m.conj().T)


def compute_moments(decomp: SchmidtDecomposition) -> MomentSet:
    """Assemble pair amplitude and occupation matrices by mode summation."""
    if not decomp.has_gain:
        raise DomainError("apply gain before computing moments")
    fs = decomp.modes_s
    fi = decomp.modes_i
    uv = decomp.u * decomp.v
    pair = (fs.conj().T * uv[None, :]) @ fi.conj()
    xs = fs.T * decomp.v[None, :]
    xi = fi.T * decomp.v[None, :]
    return MomentSet(decomp.grid_s, decomp.grid_i, pair, _hermitian_product(xs), _hermitian_product(xi))


def _field_vectors(grid, times, frame):
    """``c_m exp(-i (w_m - frame) t)`` with shape ``times.shape + (n,)``."""
    t = np.asarray(times, dtype=float)[..., None]
    rot = (grid.center - frame) + grid.detunings
    return field_weights(grid) * np.exp(-1j * rot * t)


def _bilinear(left, matrix, right):
    """``sum_mn left[..., m] matrix[m, n] right[..., n]`` with broadcasting."""
    return np.sum((left @ matrix) * right, axis=-1)


def pair_field(moments: MomentSet, t_a, t_b, frame: float = 0.0):
    """``<E(t_a) E(t_b)>`` of the total field (symmetric in its arguments)."""
    es_a = _field_vectors(moments.grid_s, t_a, frame)
    es_b = _field_vectors(moments.grid_s, t_b, frame)
    ei_a = _field_vectors(moments.grid_i, t_a, frame)
    ei_b = _field_vectors(moments.grid_i, t_b, frame)
    psi = moments.pair_amplitude
    return _bilinear(es_a, psi, ei_b) + _bilinear(es_b, psi, ei_a)


def first_order(moments: MomentSet, t_a, t_b, frame: float = 0.0):
    """``G1(t_a, t_b) = <E^-(t_a) E^+(t_b)>`` of the total field."""
    total = 0.0
    for grid, occ in ((moments.grid_s, moments.occupation_s), (moments.grid_i, moments.occupation_i)):
        ea = _field_vectors(grid, t_a, frame)
        eb = _field_vectors(grid, t_b, frame)
        total = total + _bilinear(ea.conj(), occ, eb)
    return total


def g2_value(moments: MomentSet, t2, t1, t2p, t1p, frame: float = 0.0, pair_only: bool = False):
    """Fourth-order correlation ``<E^-(t2) E^-(t1) E^+(t1p) E^+(t2p)>``.

    Evaluated for the zero-mean Gaussian state as the sum of its three
    pairings. Times broadcast against each other. ``frame`` removes a
    carrier ``exp(-i frame t)`` from every field (a rotating frame), which
    only changes an overall phase bookkeeping and leaves ``|G2|`` intact
    whenever the four times balance.

    Parameters
    ----------
    pair_only : bool
        Keep only the anomalous pairing ``<E^- E^-><E^+ E^+>``.
    """
    anomalous = np.conj(pair_field(moments, t2, t1, frame)) * pair_field(moments, t1p, t2p, frame)
    if pair_only:
        return anomalous
    return (anomalous
            + first_order(moments, t2, t2p, frame) * first_order(moments, t1, t1p, frame)
            + first_order(moments, t2, t1p, frame) * first_order(moments, t1, t2p, frame))
