"""Two-photon absorption by a ladder system driven by the twin beam.

Model
-----
The absorption amplitude operator, regularized by a Gaussian observation
window ``W(t) = exp(-(K_f t)**2 / 2)`` with ``K_f = kappa_f / hbar``, is

    A = sum_{x,y} sum_{a in x, b in y} c_a c_b B(a, b) a_x(a) a_y(b),
    B(a, b) = -i sqrt(2 pi) / K_f * D_f(a + b) * sum_j d_j / (w_j - b - i g_j),

where ``b`` is the photon absorbed first, ``w_j`` and ``g_j`` are the
intermediate level frequency and decay rate measured from the ground state
and ``D_f(x) = exp(-(w_f - x)**2 / (2 K_f**2))`` is the final-state
acceptance. The transition probability is ``<A^dag A>``; Gaussian
factorization splits it into the coherent pair term ``|<A>|^2`` and the
exchange term built from the occupations.

Two evaluation paths are provided: :func:`tpa_probability` contracts full
moment matrices, and :func:`tpa_trace` sweeps delays with a low-rank
mode-space formulation. :func:`tpa_probability_oracle` integrates the same
model in the time domain and is meant for tests only.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .constants import HBAR_EV_S
from .errors import ConfigurationError, DomainError, NumericalError
from .source import FrequencyGrid, SchmidtDecomposition, _frozen_array
from .state import BeamTransform, MomentSet, compute_moments, field_weights, g2_value, transform_modes

#: Relative size below which acceptance-window entries are treated as zero
#: when grouping signal-signal pairs by sum frequency in the delay sweep.
ACCEPTANCE_FLOOR = 1e-17


@dataclass(frozen=True)
class MatterSystem:
    """Ground state, final state and intermediate levels of the absorber.

    Parameters
    ----------
    eps_f : float
        Final-state energy (eV).
    levels : sequence of (float, float)
        ``(energy, linewidth)`` pairs in eV for the intermediate levels.
    dipoles : sequence of float, optional
        Products of transition dipoles divided by hbar**2, one per level
        (default 1 each).
    eps_g : float
        Ground-state energy (eV).
    """

    eps_f: float
    levels: tuple
    dipoles: Optional[tuple] = None
    eps_g: float = 0.0

    def __post_init__(self):
        levels = tuple((float(e), float(k)) for e, k in self.levels)
        object.__setattr__(self, "levels", levels)
        if not levels:
            raise DomainError("at least one intermediate level is required")
        dipoles = (1.0,) * len(levels) if self.dipoles is None else tuple(float(d) for d in self.dipoles)
        if len(dipoles) != len(levels):
            raise DomainError("one dipole product per level is required")
        object.__setattr__(self, "dipoles", dipoles)
        if not self.eps_f > self.eps_g:
            raise DomainError("final state must lie above the ground state")
        for energy, kappa in levels:
            if not self.eps_g < energy < self.eps_f:
                raise DomainError(f"level {energy} eV is not between ground and final energies")
            if not kappa > 0:
                raise DomainError(f"level linewidth must be positive, got {kappa}")

    @property
    def energies(self) -> np.ndarray:
        return np.array([e for e, _ in self.levels])

    @property
    def linewidths(self) -> np.ndarray:
        return np.array([k for _, k in self.levels])

    @property
    def omega_f(self) -> float:
        """Final-state transition frequency (rad/s)."""
        return (self.eps_f - self.eps_g) / HBAR_EV_S

    @property
    def omega_levels(self) -> np.ndarray:
        return (self.energies - self.eps_g) / HBAR_EV_S

    @property
    def gamma_levels(self) -> np.ndarray:
        return self.linewidths / HBAR_EV_S

    def scaled(self, factor: float) -> "MatterSystem":
        return MatterSystem(self.eps_f, self.levels, tuple(factor * d for d in self.dipoles), self.eps_g)

    def as_dict(self) -> dict:
        return {
            "eps_g": self.eps_g,
            "eps_f": self.eps_f,
            "levels": [list(lv) for lv in self.levels],
            "dipoles": list(self.dipoles),
        }


def transition_kernel(omega_a, omega_b, matter: MatterSystem):
    """Frequency-domain two-photon kernel summed over both absorption orders.

    ``T = sum_j d_j [1/(e_j - e_g - hbar wa - i k_j) + 1/(e_j - e_g - hbar wb - i k_j)]``
    with energies in eV; inputs broadcast.
    """
    ha = HBAR_EV_S * np.asarray(omega_a, dtype=float)
    hb = HBAR_EV_S * np.asarray(omega_b, dtype=float)
    total = 0.0
    for (energy, kappa), d in zip(matter.levels, matter.dipoles):
        e = energy - matter.eps_g - 1j * kappa
        total = total + d * (1.0 / (e - ha) + 1.0 / (e - hb))
    return total


def _acceptance(sum_omega, matter, kappa_f):
    k_f = kappa_f / HBAR_EV_S
    return np.exp(-0.5 * ((matter.omega_f - sum_omega) / k_f) ** 2)


def _order_kernel(omega_a, omega_b, matter, kappa_f):
    """``B(a, b)`` of the module docstring; ``b`` is absorbed first."""
    k_f = kappa_f / HBAR_EV_S
    b = np.asarray(omega_b, dtype=float)
    res = 0.0
    for w_j, g_j, d in zip(matter.omega_levels, matter.gamma_levels, matter.dipoles):
        res = res + d / ((w_j - b) - 1j * g_j)
    pref = -1j * math.sqrt(2.0 * math.pi) / k_f
    return pref * _acceptance(np.asarray(omega_a) + b, matter, kappa_f) * res


def _block(grid_a: FrequencyGrid, grid_b: FrequencyGrid, matter, kappa_f):
    """Matrix ``B(a, b)`` for ``a`` on ``grid_a`` and ``b`` on ``grid_b``."""
    wa = grid_a.values[:, None]
    wb = grid_b.values[None, :]
    return _order_kernel(wa, wb, matter, kappa_f)


def _check_kappa(kappa_f):
    if not (kappa_f > 0 and math.isfinite(kappa_f)):
        raise DomainError(f"final-state linewidth must be positive, got {kappa_f}")


def tpa_probability(moments: MomentSet, matter: MatterSystem, kappa_f: float = 1e-4,
                    pair_only: bool = False, return_parts: bool = False):
    """Absorption probability from full moment matrices.

    Parameters
    ----------
    moments : MomentSet
        Moments with the desired delay and chirp already applied.
    matter : MatterSystem
    kappa_f : float
        Final-state acceptance linewidth (eV).
    pair_only : bool
        Drop the exchange contribution.
    return_parts : bool
        Return ``(P, P_pair, P_exchange)`` instead of ``P``.
    """
    _check_kappa(kappa_f)
    gs, gi = moments.grid_s, moments.grid_i
    cs = field_weights(gs)
    ci = field_weights(gi)
    b_si = _block(gs, gi, matter, kappa_f)
    b_is = _block(gi, gs, matter, kappa_f)
    coherent = np.sum(cs[:, None] * ci[None, :] * moments.pair_amplitude * (b_si + b_is.T))
    p_pair = float(abs(coherent) ** 2)
    p_ex = 0.0
    if not pair_only:
        c = {"s": cs, "i": ci}
        grids = {"s": gs, "i": gi}
        occ = {"s": moments.occupation_s, "i": moments.occupation_i}
        m = {}
        for x in "si":
            for y in "si":
                blk = b_si if (x, y) == ("s", "i") else b_is if (x, y) == ("i", "s") else \
                    _block(grids[x], grids[y], matter, kappa_f)
                m[x, y] = c[x][:, None] * c[y][None, :] * blk
        total = 0.0
        for x in "si":
            for y in "si":
                kern = m[x, y] + m[y, x].T
                total += np.sum(np.conj(m[x, y]) * (occ[x] @ kern @ occ[y].T))
        if abs(total.imag) > 1e-8 * max(abs(total.real), 1e-300) and abs(total.imag) > 1e-300:
            raise NumericalError(f"exchange contribution has imaginary part {total.imag:.3e}")
        p_ex = max(float(total.real), 0.0)
    p = p_pair + p_ex
    if return_parts:
        return p, p_pair, p_ex
    return p


def tpa_probability_oracle(decomp: SchmidtDecomposition, matter: MatterSystem, xform: BeamTransform,
                           time_grid, kappa_f: float = 1e-4, lag_points: int = 64,
                           lag_log_range=(-18.0, 4.0), pair_only: bool = False,
                           max_points: int = 64) -> float:
    """Brute-force time-domain evaluation of the absorption probability.

    Integrates ``conj(m(t2, t1)) m(t2', t1') G2(t2, t1, t2', t1')`` over the
    ordered domains ``t1 < t2`` and ``t1' < t2'``, where ``m`` combines the
    observation window and the intermediate-state propagator. Absolute times
    ``t2`` use the supplied uniform grid with trapezoid weights; lags
    ``s = t2 - t1 >= 0`` use a logarithmic grid ``s = exp(u) / g_min`` with a
    rectangle rule in ``u``. Fields are evaluated in a frame rotating at half
    the final-state frequency. Intended for tests: the cost is quartic in the
    grid size.

    Raises
    ------
    ConfigurationError
        If the time grid has more than ``max_points`` points or is not uniform.
    """
    _check_kappa(kappa_f)
    t = np.asarray(time_grid, dtype=float)
    if t.ndim != 1 or t.size < 3:
        raise ConfigurationError("oracle time grid must be one-dimensional with at least 3 points")
    if t.size > max_points:
        raise ConfigurationError(f"oracle refuses grids above {max_points} points (got {t.size})")
    dt = np.diff(t)
    if np.any(dt <= 0) or np.ptp(dt) > 1e-9 * abs(dt[0]):
        raise ConfigurationError("oracle time grid must be uniform and increasing")
    n_lag = int(lag_points)
    if n_lag > max_points:
        raise ConfigurationError(f"oracle refuses lag grids above {max_points} points")

    moments = compute_moments(transform_modes(decomp, xform))
    frame = 0.5 * matter.omega_f
    k_f = kappa_f / HBAR_EV_S

    w_t = np.full(t.size, dt[0])
    w_t[[0, -1]] *= 0.5
    u = np.linspace(lag_log_range[0], lag_log_range[1], n_lag)
    scale = 1.0 / float(np.min(matter.gamma_levels))
    s = scale * np.exp(u)
    w_s = (u[1] - u[0]) * s

    prop = 0.0
    for w_j, g_j, d in zip(matter.omega_levels, matter.gamma_levels, matter.dipoles):
        prop = prop + d * np.exp(-1j * (w_j - frame) * s - g_j * s)
    window = np.exp(-0.5 * (k_f * t) ** 2)
    weight = (w_t * window)[:, None] * (w_s * prop)[None, :]

    t2 = np.repeat(t, n_lag)
    t1 = t2 - np.tile(s, t.size)
    wts = weight.ravel()
    total = 0.0 + 0.0j
    chunk = 64
    for start in range(0, t2.size, chunk):
        stop = min(start + chunk, t2.size)
        g2 = g2_value(moments, t2[start:stop, None], t1[start:stop, None],
                      t2[None, :], t1[None, :], frame=frame, pair_only=pair_only)
        total += np.sum(np.conj(wts[start:stop]) @ g2 @ wts)
    return float(total.real)


@dataclass(frozen=True, eq=False)
class TpaTrace:
    """Absorption probability versus signal delay.

    Attributes
    ----------
    delays : ndarray
        Uniform delay grid (s).
    raw : ndarray
        Unnormalized probabilities.
    normalization : float
        Maximum of ``raw``; ``values = raw / normalization``.
    fingerprint : str
        Hash of every input that determines the trace.
    chirp : float
        Chirp parameter (s^2) used.
    """

    delays: np.ndarray
    raw: np.ndarray
    normalization: float
    fingerprint: str
    chirp: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "delays", _frozen_array(self.delays, float))
        object.__setattr__(self, "raw", _frozen_array(self.raw, float))

    @property
    def values(self) -> np.ndarray:
        return self.raw / self.normalization

    @property
    def step(self) -> float:
        return float(self.delays[1] - self.delays[0])


def nyquist_step(matter: MatterSystem, safety: float = 4.0) -> float:
    """Largest admissible delay step ``safety * pi * hbar / (eps_f - eps_g)`` (s)."""
    return safety * math.pi * HBAR_EV_S / (matter.eps_f - matter.eps_g)


def check_delay_grid(delays, matter: MatterSystem, safety: float = 4.0) -> np.ndarray:
    """Validate uniformity and the sampling bound of a delay grid."""
    tau = np.asarray(delays, dtype=float)
    if tau.ndim != 1 or tau.size < 2:
        raise ConfigurationError("delay grid needs at least two points")
    step = np.diff(tau)
    if np.any(step <= 0) or np.ptp(step) > 1e-6 * step[0]:
        raise ConfigurationError("delay grid must be uniform and increasing")
    limit = nyquist_step(matter, safety)
    if not step[0] < limit:
        raise ConfigurationError(
            f"delay step {step[0]:.4e} s violates the sampling bound; need a step below {limit:.4e} s"
        )
    return tau


def _digest_array(h, arr):
    a = np.ascontiguousarray(arr)
    h.update(str(a.dtype).encode())
    h.update(str(a.shape).encode())
    h.update(a.tobytes())


def trace_fingerprint(decomp, matter, chirp, delays, kappa_f, pair_only, extra=None) -> str:
    h = hashlib.sha256()
    for arr in (decomp.singular_values, decomp.modes_s, decomp.modes_i, decomp.u, decomp.v, delays):
        _digest_array(h, arr)
    meta = {
        "grid_s": decomp.grid_s.as_dict(),
        "grid_i": decomp.grid_i.as_dict(),
        "matter": matter.as_dict(),
        "chirp": float(chirp),
        "kappa_f": float(kappa_f),
        "pair_only": bool(pair_only),
        "extra": extra,
    }
    h.update(json.dumps(meta, sort_keys=True).encode())
    return h.hexdigest()


def _active_modes(decomp, tol):
    v2 = decomp.v ** 2
    total = v2.sum()
    if total == 0:
        return 0
    tail = np.cumsum(v2[::-1])[::-1]  # tail[g] = sum of v2 from g onward
    keep = np.nonzero(tail > tol * total)[0]
    return int(keep[-1] + 1) if keep.size else 0


class _TraceKernel:
    """Delay-independent pieces of the low-rank delay sweep."""

    def __init__(self, decomp, matter, kappa_f, pair_only, mode_tol):
        gs, gi = decomp.grid_s, decomp.grid_i
        self.grid_s = gs
        cs = field_weights(gs)
        ci = field_weights(gi)
        b_si = _block(gs, gi, matter, kappa_f)
        b_is = _block(gi, gs, matter, kappa_f)
        b_sym = b_si + b_is.T
        # Untransformed pair amplitude from every retained mode.
        psi0 = (decomp.modes_s.conj().T * (decomp.u * decomp.v)[None, :]) @ decomp.modes_i.conj()
        self.pair_rows = np.sum(cs[:, None] * ci[None, :] * psi0 * b_sym, axis=1)
        self.pair_only = pair_only
        if pair_only:
            return
        g = _active_modes(decomp, mode_tol)
        self.n_active = g
        v = decomp.v[:g]
        ps = (cs[None, :] * v[:, None] * decomp.modes_s[:g]).T  # (n_s, G)
        pi = (ci[None, :] * v[:, None] * decomp.modes_i[:g]).T  # (n_i, G)
        ps_c = ps.conj()
        pi_c = pi.conj()
        # Cross term: S[g, h] = sum_a e^{i chi(a)} conj(ps[a, g]) R[a, h].
        self.cross_r = b_sym @ pi_c  # (n_s, G)
        self.ps_c = ps_c
        # Idler-idler term is delay and chirp independent.
        b_ii = _block(gi, gi, matter, kappa_f)
        q_ii = pi.conj().T @ b_ii @ pi_c
        self.const_ii = 0.5 * float(np.sum(np.abs(q_ii + q_ii.T) ** 2))
        # Signal-signal term grouped by anti-diagonal k = m + m'.
        b_ss = _block(gs, gs, matter, kappa_f)
        n = gs.n_points
        flipped = np.fliplr(b_ss)  # diagonal offsets of flipped matrix are anti-diagonals
        amax = np.array([np.max(np.abs(np.diagonal(flipped, n - 1 - k))) for k in range(2 * n - 1)])
        ref = amax.max() if amax.size else 0.0
        self.ss_k = [k for k in range(2 * n - 1) if ref > 0 and amax[k] > ACCEPTANCE_FLOOR * ref]
        self.b_ss = b_ss

    def compute(self, chirp, delays, chirp_center, chunk=256):
        gs = self.grid_s
        det = gs.detunings
        center = gs.center if chirp_center is None else chirp_center
        cdet = det + (gs.center - center)
        chirp_phase = np.exp(1j * chirp * cdet ** 2)
        tau = np.asarray(delays, dtype=float)
        out_pair = np.empty(tau.size)
        out_ex = np.zeros(tau.size)
        row = chirp_phase * self.pair_rows
        if not self.pair_only and self.n_active > 0:
            g = self.n_active
            y = (chirp_phase[:, None] * self.ps_c)[:, :, None] * self.cross_r[:, None, :]
            y = y.reshape(gs.n_points, g * g)
            zs = []
            sums = []
            for k in self.ss_k:
                m = np.arange(max(0, k - gs.n_points + 1), min(k, gs.n_points - 1) + 1)
                mp = k - m
                coeff = chirp_phase[m] * chirp_phase[mp] * self.b_ss[m, mp]
                z = (self.ps_c[m].T * coeff[None, :]) @ self.ps_c[mp]
                zs.append((z + z.T).reshape(-1))
                sums.append(det[m[0]] + det[mp[0]])
            zs = np.array(zs) if zs else np.zeros((0, g * g), complex)
            sums = np.array(sums)
        for start in range(0, tau.size, chunk):
            tt = tau[start:start + chunk]
            phase = np.exp(-1j * np.outer(tt, det))
            out_pair[start:start + tt.size] = np.abs(phase @ row) ** 2
            if not self.pair_only and self.n_active > 0:
                s_si = phase @ y
                ex = np.sum(s_si.real ** 2 + s_si.imag ** 2, axis=1)
                if len(self.ss_k):
                    q = np.exp(-1j * np.outer(tt, sums)) @ zs
                    ex = ex + 0.5 * np.sum(q.real ** 2 + q.imag ** 2, axis=1)
                out_ex[start:start + tt.size] = ex + self.const_ii
        return out_pair, out_ex


def tpa_trace(decomp: SchmidtDecomposition, matter: MatterSystem, chirp: float, delays,
              kappa_f: float = 1e-4, pair_only: bool = False, chirp_center: Optional[float] = None,
              nyquist_safety: float = 4.0, mode_tol: float = 1e-12,
              return_parts: bool = False, _kernel: Optional[_TraceKernel] = None):
    """Absorption probability over a grid of signal delays at fixed chirp.

    The delay enters as the spectral phase ``exp(-i w tau)``, so the sweep is
    a discrete Fourier sum over the signal frequencies. The exchange part is
    evaluated in the space of the ``G`` most populated Schmidt modes (those
    holding all but a fraction ``mode_tol`` of the photon number).

    Parameters
    ----------
    decomp : SchmidtDecomposition
        Source with gain applied and no transform folded in.
    matter : MatterSystem
    chirp : float
        Quadratic spectral phase coefficient (s^2) about ``chirp_center``
        (default: signal grid centre).
    delays : array_like
        Uniform delay grid (s).
    kappa_f : float
        Final-state acceptance linewidth (eV).
    nyquist_safety : float
        Factor on the step bound, see :func:`nyquist_step`.

    Returns
    -------
    TpaTrace
        Or ``(TpaTrace, pair, exchange)`` arrays when ``return_parts`` is set.

    Raises
    ------
    ConfigurationError
        For non-uniform grids or steps above the sampling bound.
    NumericalError
        If the trace is identically zero (nothing to normalize).
    """
    _check_kappa(kappa_f)
    if not decomp.has_gain:
        raise DomainError("apply gain before computing a trace")
    tau = check_delay_grid(delays, matter, nyquist_safety)
    kernel = _kernel or _TraceKernel(decomp, matter, kappa_f, pair_only, mode_tol)
    pair, ex = kernel.compute(chirp, tau, chirp_center)
    raw = pair + ex
    if not np.all(np.isfinite(raw)):
        raise NumericalError("non-finite absorption probability in trace")
    peak = float(raw.max())
    if peak <= 0:
        raise NumericalError("absorption probability vanishes for every delay; nothing to normalize")
    fp = trace_fingerprint(decomp, matter, chirp, tau, kappa_f, pair_only,
                           extra={"chirp_center": chirp_center, "mode_tol": mode_tol})
    trace = TpaTrace(tau, raw, peak, fp, float(chirp))
    if return_parts:
        return trace, pair, ex
    return trace


def prepare_trace_kernel(decomp, matter, kappa_f=1e-4, pair_only=False, mode_tol=1e-12):
    """Precompute the chirp-independent part of :func:`tpa_trace` for reuse."""
    _check_kappa(kappa_f)
    return _TraceKernel(decomp, matter, kappa_f, pair_only, mode_tol)
