import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import crystal, oracle_time_grid, pump
from tpavss.constants import HBAR_EV_S
from tpavss.errors import ConfigurationError, DomainError, NumericalError
from tpavss.source import SourceSettings, apply_gain, build_source
from tpavss.state import BeamTransform, compute_moments, field_weights, transform_modes
from tpavss.tpa import (MatterSystem, nyquist_step, tpa_probability, tpa_probability_oracle, tpa_trace,
                        transition_kernel)

EPS_F = 3.0996


# -- matter system ------------------------------------------------------------------------

def test_matter_system_validation():
    with pytest.raises(DomainError):
        MatterSystem(EPS_F, [])
    with pytest.raises(DomainError):
        MatterSystem(EPS_F, [(3.5, 1e-4)])
    with pytest.raises(DomainError):
        MatterSystem(EPS_F, [(1.6, 0.0)])
    with pytest.raises(DomainError):
        MatterSystem(EPS_F, [(1.6, 1e-4)], [1.0, 2.0])


def test_nyquist_step_value():
    m = MatterSystem(EPS_F, [(1.586, 1e-4)])
    assert nyquist_step(m) == pytest.approx(4 * math.pi * HBAR_EV_S / EPS_F, rel=1e-12)
    assert nyquist_step(m) == pytest.approx(2.6685e-15, rel=1e-4)


# -- kernel -------------------------------------------------------------------------------

def test_kernel_on_resonance():
    kappa = 1e-3
    m = MatterSystem(EPS_F, [(1.6, kappa)], [0.7])
    w = 1.6 / HBAR_EV_S
    t = transition_kernel(w, w, m)
    assert t == pytest.approx(2 * 0.7 / (-1j * kappa), rel=1e-9)
    assert abs(t.real) < 1e-9 * abs(t)
    assert abs(t) == pytest.approx(2 * 0.7 / kappa, rel=1e-9)


@given(st.floats(1.0, 2.2), st.floats(1.0, 2.2))
@settings(max_examples=50, deadline=None)
def test_kernel_symmetric(ea, eb):
    m = MatterSystem(EPS_F, [(1.586, 1e-4), (1.604, 2e-4), (1.619, 1e-4)], [1.0, 0.5, 2.0])
    wa, wb = ea / HBAR_EV_S, eb / HBAR_EV_S
    assert transition_kernel(wa, wb, m) == transition_kernel(wb, wa, m)


def test_kernel_far_detuned():
    kappa = 1e-4
    m = MatterSystem(EPS_F, [(1.6, kappa)])
    detuning = 100 * kappa
    w = (1.6 + detuning) / HBAR_EV_S
    assert abs(transition_kernel(w, w, m)) == pytest.approx(2 / detuning, rel=1e-2)


# -- probability --------------------------------------------------------------------------

def test_vacuum_probability_zero(tiny):
    m = compute_moments(apply_gain(tiny["decomp"], 0.0))
    assert tpa_probability(m, tiny["matter"], tiny["kappa_f"]) == 0.0
    xf = BeamTransform()
    tg = oracle_time_grid(tiny["kappa_f"], 9)
    assert tpa_probability_oracle(apply_gain(tiny["decomp"], 0.0), tiny["matter"], xf, tg,
                                  tiny["kappa_f"], lag_points=8) == 0.0


@given(st.floats(-2e-13, 2e-13), st.floats(-1e-27, 1e-27), st.booleans())
@settings(max_examples=30, deadline=None)
def test_probability_real_nonnegative(tiny, tau, xi, pair_only):
    m = compute_moments(transform_modes(tiny["decomp"], BeamTransform(tau, xi)))
    p, pp, pe = tpa_probability(m, tiny["matter"], tiny["kappa_f"], pair_only, return_parts=True)
    assert isinstance(p, float) and p >= 0 and pp >= 0 and pe >= 0


@pytest.mark.parametrize("fixture", ["tiny", "tiny_two_level"])
@pytest.mark.parametrize("pair_only", [True, False])
def test_oracle_equivalence(request, fixture, pair_only):
    f = request.getfixturevalue(fixture)
    xf = BeamTransform(delay=20e-15, chirp=100e-30)
    fast = tpa_probability(compute_moments(transform_modes(f["decomp"], xf)), f["matter"], f["kappa_f"],
                           pair_only)
    slow = tpa_probability_oracle(f["decomp"], f["matter"], xf, oracle_time_grid(f["kappa_f"], 33),
                                  f["kappa_f"], pair_only=pair_only)
    assert abs(fast - slow) / fast < 1e-6


def test_oracle_step_halving(tiny):
    xf = BeamTransform(delay=20e-15, chirp=100e-30)
    p = [tpa_probability_oracle(tiny["decomp"], tiny["matter"], xf, oracle_time_grid(tiny["kappa_f"], n),
                                tiny["kappa_f"]) for n in (32, 63)]
    assert abs(p[1] - p[0]) / p[1] < 1e-4


def test_oracle_refuses_large_grids(tiny):
    with pytest.raises(ConfigurationError):
        tpa_probability_oracle(tiny["decomp"], tiny["matter"], BeamTransform(),
                               oracle_time_grid(tiny["kappa_f"], 65), tiny["kappa_f"])


def test_kernel_only_limit(tiny):
    """For a very wide acceptance the pair term is the bare kernel contracted with the pair amplitude."""
    kappa_f = 1e4
    d, matter = tiny["decomp"], tiny["matter"]
    m = compute_moments(transform_modes(d, BeamTransform(5e-15, 0.0)))
    _, p_pair, _ = tpa_probability(m, matter, kappa_f, pair_only=True, return_parts=True)
    ws, wi = m.grid_s.values[:, None], m.grid_i.values[None, :]
    cs, ci = field_weights(m.grid_s)[:, None], field_weights(m.grid_i)[None, :]
    bare = np.sum(cs * ci * m.pair_amplitude * HBAR_EV_S * transition_kernel(ws, wi, matter))
    k_f = kappa_f / HBAR_EV_S
    expected = 2 * math.pi / k_f ** 2 * abs(bare) ** 2
    assert p_pair / expected == pytest.approx(1.0, abs=1e-8)


def test_rejects_nonpositive_final_linewidth(tiny):
    m = compute_moments(tiny["decomp"])
    with pytest.raises(DomainError):
        tpa_probability(m, tiny["matter"], 0.0)


# -- traces -------------------------------------------------------------------------------

TAU = np.arange(-40, 41) * 2e-15


@pytest.mark.parametrize("pair_only", [True, False])
def test_trace_matches_pointwise_probability(tiny_two_level, pair_only):
    f = tiny_two_level
    tau = TAU[30:51]
    tr = tpa_trace(f["decomp"], f["matter"], 100e-30, tau, f["kappa_f"], pair_only)
    ref = [tpa_probability(compute_moments(transform_modes(f["decomp"], BeamTransform(t, 100e-30))),
                           f["matter"], f["kappa_f"], pair_only) for t in tau]
    assert np.max(np.abs(tr.raw - ref)) < 1e-9 * np.max(ref)


def test_trace_normalization(tiny):
    tr = tpa_trace(tiny["decomp"], tiny["matter"], 0.0, TAU, tiny["kappa_f"])
    assert tr.values.max() == 1.0
    assert tr.values.min() >= 0.0


def test_dipole_scaling(tiny_two_level):
    f = tiny_two_level
    s = 1.7
    a = tpa_trace(f["decomp"], f["matter"], 0.0, TAU, f["kappa_f"])
    b = tpa_trace(f["decomp"], f["matter"].scaled(s), 0.0, TAU, f["kappa_f"])
    assert np.max(np.abs(b.raw / a.raw - s ** 2)) < 1e-12 * s ** 2
    assert np.max(np.abs(b.values - a.values)) < 1e-12


def test_trace_is_not_symmetrized(tiny_two_level):
    f = tiny_two_level
    tr = tpa_trace(f["decomp"], f["matter"], 50e-30, TAU, f["kappa_f"])
    asym = np.max(np.abs(tr.values - tr.values[::-1]))
    assert asym > 1e-3


def test_vacuum_trace_rejected(tiny):
    with pytest.raises(NumericalError):
        tpa_trace(apply_gain(tiny["decomp"], 0.0), tiny["matter"], 0.0, TAU, tiny["kappa_f"])


def test_nyquist_rejection(tiny):
    with pytest.raises(ConfigurationError, match="step below"):
        tpa_trace(tiny["decomp"], tiny["matter"], 0.0, np.arange(10) * 20e-15, tiny["kappa_f"])


def test_nonuniform_delays_rejected(tiny):
    with pytest.raises(ConfigurationError):
        tpa_trace(tiny["decomp"], tiny["matter"], 0.0, np.array([0.0, 1e-15, 3e-15]), tiny["kappa_f"])


def test_fingerprint_tracks_inputs(tiny):
    a = tpa_trace(tiny["decomp"], tiny["matter"], 0.0, TAU, tiny["kappa_f"])
    b = tpa_trace(tiny["decomp"], tiny["matter"], 0.0, TAU, tiny["kappa_f"])
    c = tpa_trace(tiny["decomp"], tiny["matter"], 1e-30, TAU, tiny["kappa_f"])
    assert a.fingerprint == b.fingerprint != c.fingerprint
