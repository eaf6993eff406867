import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import CROSS_LINES, LEVEL_LINES, LEVELS, paper_delays
from tpavss.analysis import (Spectrum, VarianceReport, PeakVariance, average_traces, chirp_traces,
                             crystal_length_traces, detect_peaks, identify_levels, relative_variance,
                             spectrum)
from tpavss.constants import HBAR_EV_S
from tpavss.errors import ConfigurationError, DomainError
from tpavss.tpa import MatterSystem, TpaTrace, tpa_trace

STEP = 2e-15
N = 512


def make_trace(values, step=STEP):
    values = np.asarray(values, dtype=float)
    return TpaTrace(np.arange(values.size) * step, values, float(values.max()), "synthetic")


def tone(bin_index, amplitude=1.0, n=N, step=STEP, offset=2.0):
    tau = np.arange(n) * step
    omega = 2 * np.pi * bin_index / (n * step)
    return offset + amplitude * np.cos(omega * tau)


def spectrum_from(mags, bw=1e-3):
    return Spectrum(np.arange(len(mags)) * bw, np.asarray(mags, dtype=float))


# -- spectrum -----------------------------------------------------------------------------

def test_constant_trace_has_no_lines():
    s = spectrum(make_trace(np.full(N, 0.7)))
    assert np.all(s.magnitudes[1:] < 1e-12)


def test_tone_lands_on_its_bin_with_hann():
    s = spectrum(make_trace(tone(37)))
    k = int(np.argmax(s.magnitudes))
    assert k == 37
    others = np.delete(np.arange(s.magnitudes.size), [36, 37, 38])
    assert np.all(s.magnitudes[others] * 10 <= s.magnitudes[k])


def test_tone_neighbours_without_taper():
    s = spectrum(make_trace(tone(37)), window="none")
    assert np.all(np.delete(s.magnitudes, 37) * 10 <= s.magnitudes[37])


@pytest.mark.parametrize("axis,factor", [("pair", 2.0), ("photon", 1.0)])
def test_energy_axis_conventions(axis, factor):
    s = spectrum(make_trace(tone(37)), axis=axis)
    expected = factor * 2 * np.pi * HBAR_EV_S * 37 / (N * STEP)
    assert s.energies[37] == pytest.approx(expected, rel=1e-12)


def test_spectrum_rejects_unknown_options():
    with pytest.raises(ConfigurationError):
        spectrum(make_trace(tone(3)), window="kaiser")
    with pytest.raises(ConfigurationError):
        spectrum(make_trace(tone(3)), axis="bogus")


# -- peaks --------------------------------------------------------------------------------

def test_single_tone_single_peak():
    s = spectrum(make_trace(tone(37)))
    peaks = detect_peaks(s, cutoff=0.0)
    assert len(peaks) == 1 and peaks.indices[0] == 37


def test_close_tones_pruned_to_larger():
    s = spectrum(make_trace(tone(40, 1.0) + tone(45, 0.6)))
    both = detect_peaks(s, cutoff=0.0)
    assert list(both.indices) == [40, 45]
    sep = 6 * s.bin_width
    one = detect_peaks(s, min_separation=sep, cutoff=0.0)
    assert list(one.indices) == [40]


def test_cutoff_excludes_low_bins():
    s = spectrum(make_trace(tone(3) + tone(60)))
    peaks = detect_peaks(s, cutoff=s.energies[10])
    assert list(peaks.indices) == [60]


# -- relative variance --------------------------------------------------------------------

def _peak_spectra(values, n=32, k=10):
    out = []
    for v in values:
        m = np.full(n, 0.01)
        m[k] = v
        out.append(spectrum_from(m))
    return out


def test_identical_spectra_zero_variance():
    rep = relative_variance(_peak_spectra([2.0] * 5), cutoff=0.0)
    assert [e.relative_variance for e in rep.entries] == [0.0]


def test_hand_computed_relative_variance():
    rep = relative_variance(_peak_spectra([1, 1, 1, 3]), cutoff=0.0)
    assert len(rep.entries) == 1
    assert rep.entries[0].relative_variance == pytest.approx(1 / 3, rel=1e-14)


@given(st.lists(st.floats(0.1, 10.0), min_size=2, max_size=12), st.floats(1e-6, 1e6))
@settings(max_examples=60, deadline=None)
def test_variance_estimator_and_scale_invariance(values, scale):
    specs = _peak_spectra(values)
    rep = relative_variance(specs, cutoff=0.0)
    v = np.asarray(values)
    mean = sum(values) / len(values)
    var = sum((x - mean) ** 2 for x in values) / len(values)
    assert rep.entries[0].relative_variance == pytest.approx(var / mean ** 2, rel=1e-12, abs=1e-14)
    scaled = relative_variance([s.scaled(scale) for s in specs], cutoff=0.0)
    assert abs(scaled.entries[0].relative_variance - rep.entries[0].relative_variance) <= \
        1e-12 * max(1.0, rep.entries[0].relative_variance)
    del v


def test_missing_peak_is_reported():
    a = np.full(32, 0.01)
    a[10] = 2.0
    b = np.full(32, 0.01)
    b[20] = 2.0
    with pytest.warns(RuntimeWarning, match="missing"):
        rep = relative_variance([spectrum_from(a), spectrum_from(a), spectrum_from(b)], cutoff=0.0)
    assert len(rep.missing) == 2 and not rep.entries


def test_variance_needs_two_spectra():
    with pytest.raises(DomainError):
        relative_variance(_peak_spectra([1.0]))


def test_chirp_ensemble_needs_two_members(paper_source, paper_config):
    with pytest.raises(DomainError):
        chirp_traces(paper_source, paper_config.matter_system(), [0.0], paper_delays(paper_config))


# -- level identification -----------------------------------------------------------------

def _report(*energies):
    entries = tuple(PeakVariance(e, i, 0.1 * (i + 1), 1.0, 4) for i, e in enumerate(energies))
    return VarianceReport(entries, 4)


def test_identify_branches():
    (c,) = identify_levels(_report(0.0724), 3.0996, k=1)
    assert c.upper == pytest.approx(1.586, abs=1e-12)
    assert c.lower == pytest.approx(1.5136, abs=1e-12)


def test_identify_degenerate_line():
    (c,) = identify_levels(_report(0.0), 3.0996, k=1)
    assert c.candidates == pytest.approx((1.5498,))


def test_identify_too_many_requested():
    with pytest.warns(RuntimeWarning):
        out = identify_levels(_report(0.07, 0.1), 3.0996, k=3)
    assert len(out) == 2


# -- model-level behaviour ----------------------------------------------------------------

def _dominant(spec, cutoff=0.01):
    usable = spec.energies >= cutoff
    return spec.energies[usable][np.argmax(spec.magnitudes[usable])]


def test_single_level_beat_line(paper_config, paper_source):
    cfg = paper_config
    matter = MatterSystem(cfg.matter.eps_f_ev, [(1.586, 1e-4)])
    tr = tpa_trace(paper_source, matter, 0.0, paper_delays(cfg), cfg.matter.kappa_f_ev, pair_only=True)
    spec = spectrum(tr)
    assert abs(_dominant(spec) - abs(2 * 1.586 - cfg.matter.eps_f_ev)) <= spec.bin_width


def test_level_lines_present(paper_traces_pair):
    spec = spectrum(paper_traces_pair[0])
    found = detect_peaks(spec).energies
    for e in LEVEL_LINES:
        assert np.min(np.abs(found - e)) <= spec.bin_width


@pytest.mark.xfail(strict=True, reason="cross-term lines are absent from this model's spectrum; see README")
def test_cross_lines_present(paper_traces_pair):
    spec = spectrum(paper_traces_pair[0])
    found = detect_peaks(spec).energies
    for e in CROSS_LINES:
        assert np.min(np.abs(found - e)) <= spec.bin_width


def test_level_peak_positions_chirp_invariant(paper_traces_pair):
    specs = [spectrum(t) for t in paper_traces_pair]
    bins = [specs[0].bin_of(e) for e in LEVEL_LINES]
    for s in specs:
        idx = detect_peaks(s).indices
        for b in bins:
            assert np.min(np.abs(idx - b)) <= 1


def _lowest_lines(specs, k=3):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rep = relative_variance(specs)
    return sorted(e.energy for e in rep.sorted_by_variance()[:k]), specs[0].bin_width


def test_lowest_variance_at_level_lines(paper_traces_pair):
    lowest, bw = _lowest_lines([spectrum(t) for t in paper_traces_pair])
    assert np.all(np.abs(np.asarray(lowest) - LEVEL_LINES) <= bw)


def test_ranking_stable_under_denser_ensemble(paper_config, paper_source):
    cfg = paper_config
    chirps = np.linspace(cfg.chirps()[0], cfg.chirps()[-1], 2 * cfg.chirp.count)
    traces = chirp_traces(paper_source, cfg.matter_system(), chirps, paper_delays(cfg), cfg.matter.kappa_f_ev,
                          pair_only=True)
    lowest, bw = _lowest_lines([spectrum(t) for t in traces])
    assert np.all(np.abs(np.asarray(lowest) - LEVEL_LINES) <= bw)


def test_identify_recovers_levels(paper_traces_pair, paper_config):
    specs = [spectrum(t) for t in paper_traces_pair]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        rep = relative_variance(specs)
    cands = np.concatenate([c.candidates for c in identify_levels(rep, paper_config.matter.eps_f_ev, 3)])
    for lv in LEVELS:
        assert np.min(np.abs(cands - lv)) <= specs[0].bin_width


def test_literal_short_crystal_misses_level_lines(paper_config):
    """Documented limitation: at 0.801 mm the walk-off is shorter than the delay window."""
    from tpavss.source import build_source
    cfg = paper_config
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        src = build_source(cfg.source_settings(0.801), edge_tolerance=1.0)
        traces = chirp_traces(src, cfg.matter_system(), cfg.chirps(), paper_delays(cfg, 0.801),
                              cfg.matter.kappa_f_ev, pair_only=True)
    lowest, bw = _lowest_lines([spectrum(t) for t in traces])
    assert not np.all(np.abs(np.asarray(lowest) - LEVEL_LINES) <= bw)


# -- crystal-length averaging -------------------------------------------------------------

def test_repeated_length_equals_single_crystal(paper_config):
    cfg = paper_config
    settings_ = cfg.source_settings()
    rel = cfg.relative_delays()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        traces = crystal_length_traces([8.01e-3, 8.01e-3], settings_, cfg.matter_system(), rel, pair_only=True)
        from tpavss.source import build_source
        single = tpa_trace(build_source(settings_), cfg.matter_system(), 0.0, paper_delays(cfg), pair_only=True)
    avg = spectrum(average_traces(traces, rel))
    ref = spectrum(single)
    assert np.max(np.abs(avg.magnitudes - ref.magnitudes)) <= 1e-12 * ref.magnitudes.max()


def _level_to_other_ratio(spec):
    peaks = detect_peaks(spec, prominence=0.0)
    near = lambda p: min(abs(p.energy - e) for e in LEVEL_LINES) <= 1.5 * spec.bin_width
    level = min(p.magnitude for p in peaks if near(p))
    other = max(p.magnitude for p in peaks if not near(p) and p.energy < 0.3)
    return level / other


@pytest.mark.slow
@pytest.mark.xfail(strict=True, reason="length averaging does not suppress off-level peaks in this model; see README")
def test_length_average_suppresses_other_lines():
    from tpavss.config import load_config
    from tpavss.source import build_source
    cfg = load_config("paper-fig2d-baseline")
    rel = cfg.relative_delays()
    matter = cfg.matter_system()
    mid = 0.5 * (cfg.baseline.min_length_mm + cfg.baseline.max_length_mm)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        single = tpa_trace(build_source(cfg.source_settings(mid)), matter, 0.0, paper_delays(cfg, mid),
                           pair_only=True)
        traces = crystal_length_traces(cfg.baseline_lengths_mm() * 1e-3, cfg.source_settings(), matter, rel,
                                       pair_only=True)
    gain = _level_to_other_ratio(spectrum(average_traces(traces, rel))) / _level_to_other_ratio(spectrum(single))
    assert gain >= 3.0
