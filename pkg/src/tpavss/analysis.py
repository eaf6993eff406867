"""Spectral analysis of delay traces: spectra, peaks, chirp statistics, levels.

A delay trace is turned into a one-sided magnitude spectrum on an energy
axis derived from the DFT frequency of the delay samples (see
:func:`spectrum` for the two axis conventions).
Over an ensemble of chirp values, peaks are located once on the mean
spectrum and their magnitude fluctuations are summarized by the relative
variance ``R = var / mean**2``. Beat lines tied to a single intermediate
level keep their strength across the ensemble and therefore show the
smallest ``R``.
"""

from __future__ import annotations

import hashlib
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence, Union

import numpy as np
import scipy.signal

from .constants import HBAR_EV_S
from .errors import ConfigurationError, DomainError, EnsembleMemberError, TpavssError
from .source import SchmidtDecomposition, SourceSettings, _frozen_array, build_source, group_delay_offset
from .tpa import MatterSystem, TpaTrace, prepare_trace_kernel, tpa_trace

log = logging.getLogger(__name__)

WINDOWS = ("hann", "none")
#: Energy-axis conventions: a delay beat at angular frequency ``w`` is placed
#: at ``2 hbar w`` on the pair axis (two-photon energy detuning) and at
#: ``hbar w`` on the photon axis.
AXES = {"pair": 2.0, "photon": 1.0}


@dataclass(frozen=True, eq=False)
class Spectrum:
    """One-sided magnitude spectrum on an energy axis in eV."""

    energies: np.ndarray
    magnitudes: np.ndarray
    fingerprint: str = ""
    window: str = "hann"
    axis: str = "pair"

    def __post_init__(self):
        object.__setattr__(self, "energies", _frozen_array(self.energies, float))
        object.__setattr__(self, "magnitudes", _frozen_array(self.magnitudes, float))
        if self.energies.shape != self.magnitudes.shape:
            raise DomainError("energy and magnitude arrays differ in shape")

    @property
    def bin_width(self) -> float:
        return float(self.energies[1] - self.energies[0])

    def scaled(self, factor: float) -> "Spectrum":
        return Spectrum(self.energies, factor * self.magnitudes, self.fingerprint, self.window, self.axis)

    def bin_of(self, energy: float) -> int:
        return int(np.argmin(np.abs(self.energies - energy)))


def _taper(name: str, n: int) -> np.ndarray:
    if name == "none":
        return np.ones(n)
    if name == "hann":
        return scipy.signal.get_window("hann", n)
    raise ConfigurationError(f"unknown window '{name}', expected one of {WINDOWS}")


def spectrum(trace: TpaTrace, window: str = "hann", use_raw: bool = True, axis: str = "pair") -> Spectrum:
    """Mean-subtracted, tapered DFT magnitude of a delay trace.

    Parameters
    ----------
    trace : TpaTrace
    window : {"hann", "none"}
        Periodic Hann taper or none.
    use_raw : bool
        Transform the unnormalized probabilities (default) rather than the
        max-normalized values.
    axis : {"pair", "photon"}
        Energy assigned to a delay beat ``exp(-i w tau)``: ``2 hbar w`` on
        the pair axis, ``hbar w`` on the photon axis. A level at ``e_j``
        beats at ``w = (e_j - e_f / 2) / hbar`` against the broadband part
        of the two-photon amplitude, i.e. at ``|2 e_j - e_f|`` on the pair
        axis.
    """
    if axis not in AXES:
        raise ConfigurationError(f"unknown energy axis '{axis}', expected one of {tuple(AXES)}")
    tau = np.asarray(trace.delays, dtype=float)
    step = np.diff(tau)
    if tau.size < 2 or np.any(step <= 0) or np.ptp(step) > 1e-6 * step[0]:
        raise ConfigurationError("spectrum requires a uniform increasing delay grid")
    p = np.asarray(trace.raw if use_raw else trace.values, dtype=float)
    p = p - p.mean()
    mags = np.abs(np.fft.rfft(_taper(window, p.size) * p))
    energies = AXES[axis] * 2.0 * np.pi * HBAR_EV_S * np.fft.rfftfreq(p.size, step[0])
    fp = hashlib.sha256(f"{trace.fingerprint}|{window}|{use_raw}|{axis}".encode()).hexdigest()
    return Spectrum(energies, mags, fp, window, axis)


@dataclass(frozen=True)
class Peak:
    energy: float
    magnitude: float
    index: int


@dataclass(frozen=True)
class PeakSet:
    """Detected peaks in ascending energy and the parameters that produced them."""

    peaks: tuple
    prominence: float
    min_separation: float
    cutoff: float

    def __len__(self):
        return len(self.peaks)

    def __iter__(self):
        return iter(self.peaks)

    @property
    def energies(self) -> np.ndarray:
        return np.array([p.energy for p in self.peaks])

    @property
    def indices(self) -> np.ndarray:
        return np.array([p.index for p in self.peaks], dtype=int)


def _strict_maxima(mags: np.ndarray) -> np.ndarray:
    inner = np.arange(1, mags.size - 1)
    keep = (mags[inner] > mags[inner - 1]) & (mags[inner] > mags[inner + 1])
    return inner[keep]


def detect_peaks(spec: Spectrum, prominence: float = 0.01, min_separation: float = 0.0,
                 cutoff: float = 0.01) -> PeakSet:
    """Strict local maxima of a spectrum above a prominence threshold.

    Parameters
    ----------
    spec : Spectrum
    prominence : float
        Minimum topographic prominence as a fraction of the largest
        magnitude above ``cutoff``.
    min_separation : float
        Minimum distance (eV) between kept peaks. Conflicts are resolved
        greedily by magnitude, ties going to the lower energy.
    cutoff : float
        Bins below this energy (eV) are ignored.
    """
    mags = np.asarray(spec.magnitudes)
    if mags.size == 0:
        raise DomainError("spectrum is empty")
    usable = spec.energies >= cutoff
    if not np.any(usable):
        return PeakSet((), prominence, min_separation, cutoff)
    ref = float(mags[usable].max())
    cand = _strict_maxima(mags)
    cand = cand[spec.energies[cand] >= cutoff]
    if cand.size and ref > 0:
        prom = scipy.signal.peak_prominences(mags, cand)[0]
        cand = cand[prom >= prominence * ref]
    elif ref <= 0:
        cand = cand[:0]
    order = sorted(cand.tolist(), key=lambda i: (-mags[i], spec.energies[i]))
    kept = []
    for i in order:
        if all(abs(spec.energies[i] - spec.energies[j]) >= min_separation for j in kept):
            kept.append(i)
    kept.sort()
    peaks = tuple(Peak(float(spec.energies[i]), float(mags[i]), int(i)) for i in kept)
    return PeakSet(peaks, prominence, min_separation, cutoff)


def _as_builder(source):
    if isinstance(source, SchmidtDecomposition):
        return lambda: source
    if callable(source):
        return source
    raise DomainError("source must be a SchmidtDecomposition or a zero-argument callable")


def chirp_traces(source, matter: MatterSystem, chirps: Sequence[float], delays, kappa_f: float = 1e-4,
                 pair_only: bool = False, threads: int = 1, chirp_center: Optional[float] = None,
                 nyquist_safety: float = 4.0, progress: Optional[Callable[[int, int], None]] = None):
    """Delay traces for each chirp value of an ensemble (see :func:`chirp_ensemble`)."""
    chirps = [float(c) for c in chirps]
    if len(chirps) < 2:
        raise DomainError("a chirp ensemble needs at least two members")
    decomp = _as_builder(source)()
    kernel = prepare_trace_kernel(decomp, matter, kappa_f, pair_only)

    def member(idx):
        try:
            tr = tpa_trace(decomp, matter, chirps[idx], delays, kappa_f, pair_only, chirp_center,
                           nyquist_safety, _kernel=kernel)
        except TpavssError as exc:
            raise EnsembleMemberError(f"chirp member {idx} (xi = {chirps[idx]:.6g} s^2) failed: {exc}",
                                      idx) from exc
        if progress is not None:
            progress(idx, len(chirps))
        return tr

    if threads <= 1:
        return [member(i) for i in range(len(chirps))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(member, range(len(chirps))))


def chirp_ensemble(source, matter: MatterSystem, chirps: Sequence[float], delays, kappa_f: float = 1e-4,
                   pair_only: bool = False, window: str = "hann", threads: int = 1,
                   chirp_center: Optional[float] = None, nyquist_safety: float = 4.0,
                   axis: str = "pair"):
    """One spectrum per chirp value from identical source and matter settings.

    Parameters
    ----------
    source : SchmidtDecomposition or callable
        Gain-dressed decomposition, or a builder returning one.
    chirps : sequence of float
        At least two chirp values (s^2).

    Raises
    ------
    EnsembleMemberError
        Carrying the index of the failing member.
    """
    traces = chirp_traces(source, matter, chirps, delays, kappa_f, pair_only, threads,
                          chirp_center, nyquist_safety)
    return [spectrum(tr, window, axis=axis) for tr in traces]


@dataclass(frozen=True)
class PeakVariance:
    energy: float
    index: int
    relative_variance: float
    mean: float
    count: int


@dataclass(frozen=True)
class VarianceReport:
    """Relative variance of each matched peak over the ensemble.

    ``missing`` lists mean-spectrum peaks dropped because some member had no
    local maximum within the matching window.
    """

    entries: tuple
    ensemble_size: int
    chirps: tuple = ()
    missing: tuple = ()
    detection: dict = field(default_factory=dict)
    bin_width: float = 0.0

    def sorted_by_variance(self):
        return sorted(self.entries, key=lambda e: (e.relative_variance, e.energy))


def relative_variance(spectra: Sequence[Spectrum], prominence: float = 0.01, min_separation: float = 0.0,
                      cutoff: float = 0.01, match_window: int = 1, chirps: Sequence[float] = ()) -> VarianceReport:
    """Relative variance ``var / mean**2`` of peak magnitudes across spectra.

    Peaks are detected once on the ensemble-mean spectrum. In every member the
    magnitude is read as the maximum within ``match_window`` bins of the mean
    peak, which must hold a strict local maximum; otherwise the peak is
    reported missing and excluded. The variance is the population variance.
    """
    if len(spectra) < 2:
        raise DomainError("relative variance needs at least two spectra")
    axis = spectra[0].energies
    for s in spectra[1:]:
        if s.energies.shape != axis.shape or not np.array_equal(s.energies, axis):
            raise DomainError("spectra do not share an energy axis")
    stack = np.array([s.magnitudes for s in spectra])
    mean_spec = Spectrum(axis, np.mean(stack, 0))
    found = detect_peaks(mean_spec, prominence, min_separation, cutoff)
    entries = []
    missing = []
    n = axis.size
    for pk in found:
        lo = max(pk.index - match_window, 1)
        hi = min(pk.index + match_window, n - 2)
        window = np.arange(lo, hi + 1)
        vals = []
        ok = True
        for row in stack:
            local = window[(row[window] > row[window - 1]) & (row[window] > row[window + 1])]
            if local.size == 0:
                ok = False
                break
            vals.append(row[local].max())
        if not ok:
            missing.append(pk.energy)
            continue
        vals = np.asarray(vals)
        mu = vals.mean()
        r = float(np.mean((vals - mu) ** 2) / mu ** 2) if mu > 0 else float("inf")
        entries.append(PeakVariance(pk.energy, pk.index, r, float(mu), len(vals)))
    if missing:
        warnings.warn(f"{len(missing)} peak(s) missing in some ensemble members were excluded: "
                      + ", ".join(f"{e:.5f} eV" for e in missing), RuntimeWarning, stacklevel=2)
    detection = {"prominence": prominence, "min_separation": min_separation, "cutoff": cutoff,
                 "match_window": match_window}
    return VarianceReport(tuple(entries), len(spectra), tuple(float(c) for c in chirps), tuple(missing),
                          detection, float(axis[1] - axis[0]))


@dataclass(frozen=True)
class LevelCandidate:
    """Both inversions ``(eps_f +/- omega) / 2`` of a beat line at ``omega``."""

    peak_energy: float
    relative_variance: float
    upper: float
    lower: Optional[float]

    @property
    def candidates(self):
        return (self.upper,) if self.lower is None else (self.upper, self.lower)


def identify_levels(report: VarianceReport, eps_f: float, k: int = 3):
    """Level candidates from the ``k`` peaks with the smallest relative variance.

    Each peak at ``omega`` yields ``(eps_f + omega) / 2`` above and
    ``(eps_f - omega) / 2`` below the two-photon midpoint; a peak at zero
    gives the single candidate ``eps_f / 2``. Sorted by relative variance.
    """
    if k < 1:
        raise DomainError("k must be at least 1")
    if not report.entries:
        raise DomainError("variance report is empty")
    ranked = report.sorted_by_variance()
    if k > len(ranked):
        warnings.warn(f"requested {k} levels but only {len(ranked)} peaks are available",
                      RuntimeWarning, stacklevel=2)
    out = []
    for e in ranked[:k]:
        upper = 0.5 * (eps_f + e.energy)
        lower = None if e.energy == 0 else 0.5 * (eps_f - e.energy)
        out.append(LevelCandidate(e.energy, e.relative_variance, upper, lower))
    return out


def crystal_length_traces(lengths: Sequence[float], settings: SourceSettings, matter: MatterSystem,
                          delays, kappa_f: float = 1e-4, pair_only: bool = False,
                          relative_delays: bool = True, threads: int = 1, nyquist_safety: float = 4.0):
    """Delay traces for a set of crystal lengths, each with recalibrated gain.

    With ``relative_delays`` the delays are measured from each crystal's
    group-delay compensation point (:func:`group_delay_offset`), which is how
    a delay scan would be referenced after swapping crystals.
    """
    lengths = [float(x) for x in lengths]
    if len(lengths) < 2:
        raise DomainError("length averaging needs at least two crystals")
    tau = np.asarray(delays, dtype=float)
    if settings.span is None:
        # Fix one frequency window for the whole ensemble.
        from .source import default_grids
        mid = settings.with_length(float(np.mean(lengths)))
        span = default_grids(mid.crystal, mid.pump, settings.n_points, settings.n_sigma)[0].span
        settings = SourceSettings(settings.crystal, settings.pump, settings.n_points, span,
                                  settings.n_sigma, settings.target_n, settings.n_modes)
    cache = {}

    def member(idx):
        length = lengths[idx]
        try:
            if length not in cache:
                cache[length] = build_source(settings.with_length(length))
            decomp = cache[length]
            shift = group_delay_offset(settings.crystal.with_length(length)) if relative_delays else 0.0
            tr = tpa_trace(decomp, matter, 0.0, tau + shift, kappa_f, pair_only,
                           nyquist_safety=nyquist_safety)
        except TpavssError as exc:
            raise EnsembleMemberError(f"crystal length {length:.6g} m failed: {exc}", length) from exc
        return tr

    if threads <= 1:
        return [member(i) for i in range(len(lengths))]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(member, range(len(lengths))))


def average_traces(traces: Sequence[TpaTrace], delays) -> TpaTrace:
    """Pointwise mean of raw traces on a common (relative) delay axis."""
    raw = np.mean([t.raw for t in traces], axis=0)
    fp = hashlib.sha256("|".join(t.fingerprint for t in traces).encode()).hexdigest()
    return TpaTrace(np.asarray(delays, dtype=float), raw, float(raw.max()), fp, 0.0)


def crystal_length_average(lengths: Sequence[float], settings: SourceSettings, matter: MatterSystem,
                           delays, kappa_f: float = 1e-4, pair_only: bool = False, window: str = "hann",
                           relative_delays: bool = True, threads: int = 1, axis: str = "pair") -> Spectrum:
    """Spectrum of the length-averaged trace.

    The raw traces are averaged before transforming, i.e. the complex
    spectra are averaged and the magnitude taken afterwards, so lines whose
    phase depends on the crystal length cancel.
    """
    traces = crystal_length_traces(lengths, settings, matter, delays, kappa_f, pair_only,
                                   relative_delays, threads)
    return spectrum(average_traces(traces, delays), window, axis=axis)
