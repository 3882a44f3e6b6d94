from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qutritgate.core import DeviceSpec
from qutritgate.drive import (
    PerturbationError,
    TrackingAmbiguity,
    anticrossing_gap,
    build_dressed_hamiltonian,
    compensated_trajectories,
    default_blocks,
    dressed_index,
    nonadiabatic_correction_estimate,
    numeric_shifts,
    perturbative_shifts,
    probe_rabi_frequency,
    rabi_map,
    two_photon_rabi,
    two_photon_resonance,
)
from qutritgate.profiles import GHZ, MHZ
from qutritgate.pulses import PulseEnvelope, PulseSchedule, Tone, ToneSpec

DETUNED = -400 * MHZ


def two_photon_tone(device, amplitude, detuning=DETUNED):
    w02 = device.transition(0, 2)
    return ToneSpec(amplitude, 0.5 * (w02 + detuning), target_transition=(0, 2), is_two_photon=True)


def symmetric_device(device):
    g = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]]) * 100 * MHZ
    return DeviceSpec(device.level_freqs, g)


def ladder_device(n):
    """Weakly anharmonic ladder with nearest-neighbour and some next-nearest couplings."""
    freqs = np.cumsum([0.0] + [5.0 - 0.2 * k for k in range(n - 1)]) * GHZ
    g = np.zeros((n, n))
    for k in range(n - 1):
        g[k, k + 1] = g[k + 1, k] = np.sqrt(k + 1)
    for k in range(n - 2):
        g[k, k + 2] = g[k + 2, k] = 0.1
    return DeviceSpec(freqs, g * 50 * MHZ)


# --- dressed Hamiltonian -----------------------------------------------------


def test_dressed_zero_amplitude_is_bare_ladder(device):
    tone = replace(two_photon_tone(device, 1.0), amplitude=0.0)
    blocks = 4
    h = build_dressed_hamiltonian(device, tone, blocks)
    assert np.count_nonzero(h - np.diag(np.diag(h))) == 0
    expected = sorted(device.level_freqs[j] + n * tone.carrier_freq for n in range(-blocks, blocks + 1) for j in range(3))
    assert np.allclose(np.linalg.eigvalsh(h), expected, rtol=0, atol=1e-3)


def test_dressed_default_size_and_three_level_pattern(device):
    tone = two_photon_tone(device, 1.0)
    h = build_dressed_hamiltonian(device, tone)
    assert h.shape[0] >= 49
    assert np.allclose(h, h.conj().T)
    b = default_blocks(3)
    n = 3
    half = 0.5 * device.drive_couplings * tone.amplitude
    # |j, p> couples to |k, p +/- 1> only, with W_jk / 2; nothing inside a block
    for p in range(-b, b):
        for j in range(n):
            for k in range(n):
                i1 = dressed_index(n, b, j, p)
                assert h[i1, dressed_index(n, b, k, p + 1)] == pytest.approx(half[j, k])
                if j != k:
                    assert h[i1, dressed_index(n, b, k, p)] == 0
    assert h[dressed_index(n, b, 2, 1), dressed_index(n, b, 2, 1)] == pytest.approx(
        device.level_freqs[2] + tone.carrier_freq
    )


def test_dressed_matches_tensor_product_construction_for_seven_levels():
    dev = ladder_device(7)
    tone = ToneSpec(0.7, 4.9 * GHZ)
    b = default_blocks(7)
    nb = 2 * b + 1
    # independent oracle: photon ladder (x) device
    photons = np.diag(np.arange(-b, b + 1).astype(float))
    raise_ = np.diag(np.ones(nb - 1), 1)
    h_oracle = (
        np.kron(np.eye(nb), np.diag(dev.level_freqs))
        + tone.carrier_freq * np.kron(photons, np.eye(7))
        + np.kron(raise_ + raise_.T, 0.5 * tone.amplitude * dev.drive_couplings)
    )
    assert np.allclose(build_dressed_hamiltonian(dev, tone, b), h_oracle, atol=1e-3)


def test_dressed_rejects_small_truncation(device):
    with pytest.raises(ValueError):
        build_dressed_hamiltonian(device, two_photon_tone(device, 1.0), blocks=2)


# --- shifts ------------------------------------------------------------------


def test_zero_amplitude_gives_zero_shifts(device):
    tone = replace(two_photon_tone(device, 1.0), amplitude=0.0)
    assert np.all(perturbative_shifts(device, tone).level_shifts == 0)
    assert np.all(numeric_shifts(device, tone).level_shifts == 0)


def test_two_level_reduction_ac_stark(device):
    g = np.zeros((3, 3))
    g[0, 1] = g[1, 0] = 100 * MHZ
    dev = DeviceSpec(device.level_freqs, g)
    tone = ToneSpec(0.5, dev.transition(0, 1) + 300 * MHZ)
    rep = perturbative_shifts(dev, tone)
    w = 50 * MHZ
    assert rep.ac_stark[1] - rep.ac_stark[0] == pytest.approx(-(w**2) / (2 * 300 * MHZ), rel=1e-12)
    assert rep.transition_shift(0, 1) < 0


def test_gate_tone_shifts_cross_validate(device):
    tone = two_photon_tone(device, 1.5)
    p = perturbative_shifts(device, tone)
    n = numeric_shifts(device, tone)
    # W01 = 150 MHz, W12 = 225 MHz, drive 2.0735 GHz above w01
    assert p.two_photon_rabi == pytest.approx(150 * 225 / (2 * 2073.5) * MHZ, rel=1e-3)
    assert p.transition_shift(0, 1) < 0
    assert 1 * MHZ < abs(p.transition_shift(0, 1)) < 20 * MHZ
    for pair in [(0, 1), (1, 2)]:
        assert p.transition_shift(*pair) == pytest.approx(n.transition_shift(*pair), rel=0.05)


@pytest.mark.parametrize("amplitude", [0.2, 0.4, 0.7])
def test_weak_drive_agreement_within_five_percent(device, amplitude):
    tone = two_photon_tone(device, amplitude)
    p, n = perturbative_shifts(device, tone), numeric_shifts(device, tone)
    for pair in [(0, 1), (1, 2)]:
        assert p.transition_shift(*pair) == pytest.approx(n.transition_shift(*pair), rel=0.05)


def test_numeric_shift_quadratic_scaling(device):
    tone = two_photon_tone(device, 0.6)
    full = numeric_shifts(device, tone).transition_shift(0, 1)
    half = numeric_shifts(device, replace(tone, amplitude=0.3)).transition_shift(0, 1)
    assert full / half == pytest.approx(4.0, rel=0.02)


@settings(max_examples=30, deadline=None)
@given(st.floats(0.05, 1.0), st.floats(-900, -100))
def test_pairwise_sign_rules(amplitude, detuning_mhz):
    from qutritgate.profiles import paper_device

    dev = paper_device(decoherence=False)
    tone = two_photon_tone(dev, amplitude, detuning_mhz * MHZ)
    rep = perturbative_shifts(dev, tone)
    # Bloch-Siegert: the lower level of every pair moves down, the upper one up
    assert rep.bloch_siegert[0] <= 0 and rep.bloch_siegert[2] >= 0
    # the drive lies above w01 and below w12: the 0-1 ac-Stark term narrows 0-1,
    # the 1-2 term widens 1-2
    assert rep.ac_stark[0] > 0
    assert rep.transition_shift(0, 1) < 0
    # quadratic scaling of every level shift
    double = perturbative_shifts(dev, replace(tone, amplitude=2 * amplitude))
    assert np.allclose(double.level_shifts, 4 * rep.level_shifts, rtol=1e-12)


def test_resonant_drive_raises(device):
    tone = ToneSpec(0.1, device.transition(0, 1))
    with pytest.raises(PerturbationError):
        perturbative_shifts(device, tone)


def test_exact_two_photon_resonance_is_flagged_not_guessed(device):
    tone = two_photon_tone(device, 1.0, detuning=0.0)
    with pytest.raises(TrackingAmbiguity):
        numeric_shifts(device, tone)


def test_shift_reports_add(device):
    tone = two_photon_tone(device, 0.5)
    rep = perturbative_shifts(device, tone)
    assert np.allclose((rep + rep).level_shifts, rep.scaled(2.0).level_shifts)


# --- two-photon Rabi rate ------------------------------------------------------


def test_two_photon_rabi_reference_value(device):
    dev = symmetric_device(device)
    tone = ToneSpec(1.0, dev.transition(0, 1) + 2.2735 * GHZ, target_transition=(0, 2), is_two_photon=True)
    value = two_photon_rabi(dev, tone)
    assert value == pytest.approx(2 * np.pi * 2.199e6, rel=1e-3)
    assert anticrossing_gap(dev, tone) == pytest.approx(value, rel=0.05)
    assert two_photon_rabi(dev, replace(tone, amplitude=2.0)) == pytest.approx(4 * value, rel=1e-12)


def test_two_photon_rabi_zero_without_01_coupling(device):
    g = np.array(device.drive_couplings)
    g[0, 1] = g[1, 0] = 0.0
    dev = DeviceSpec(device.level_freqs, g)
    assert two_photon_rabi(dev, two_photon_tone(dev, 1.0)) == 0.0


def test_two_photon_gap_quadratic_in_amplitude(device):
    amps = np.array([0.4, 0.6, 0.9, 1.3])
    gaps = [anticrossing_gap(device, two_photon_tone(device, a)) for a in amps]
    slope = np.polyfit(np.log(amps), np.log(gaps), 1)[0]
    assert slope == pytest.approx(2.0, abs=0.05)


def test_two_photon_resonance_follows_02_shift(device):
    tone = two_photon_tone(device, 1.5)
    rep = perturbative_shifts(device, tone)
    # three levels only: the 1-2 ac-Stark push outweighs the 0-1 pull, so the
    # 0-2 resonance moves up in this model
    expected = 0.5 * (device.transition(0, 2) + rep.transition_shift(0, 2))
    assert two_photon_resonance(device, tone) == pytest.approx(expected)
    assert rep.transition_shift(0, 2) > 0


# --- compensation ----------------------------------------------------------------


def test_compensation_zero_amplitude_is_identity(device):
    tone = Tone(replace(two_photon_tone(device, 1.0), amplitude=0.0), PulseEnvelope(4e-9, 27e-9, 4e-9, 1.0))
    sched = PulseSchedule((tone,))
    out = compensated_trajectories(device, sched)
    assert out.tones[0].trajectory.terms == ()
    assert out.level_terms == ()


def test_compensated_gate_tones_follow_shifts(device):
    env = PulseEnvelope(4e-9, 27e-9, 4e-9, 1.0)
    tp = two_photon_tone(device, 1.5)
    probe01 = ToneSpec(0.1, device.transition(0, 1), target_transition=(0, 1))
    sched = PulseSchedule((Tone(tp, env), Tone(probe01, env)))
    out = compensated_trajectories(device, sched)
    traj01 = out.tones[1].trajectory
    mid = 20e-9
    shift = traj01.frequency(mid) - device.transition(0, 1)
    expected = perturbative_shifts(device, tp).transition_shift(0, 1)
    # the weak resonant probe adds only its counter-rotating correction
    assert shift == pytest.approx(expected, rel=0.01)
    assert shift < 0
    # outside the pulse the carrier sits at the bare transition
    assert traj01.frequency(0.0) == pytest.approx(device.transition(0, 1))
    # phase is the integral of the frequency
    ts = np.linspace(0, 35e-9, 4001)
    numeric = np.trapezoid([traj01.frequency(t) for t in ts], ts)
    assert traj01.phase(35e-9) == pytest.approx(numeric, rel=1e-8)


def test_rectangular_envelope_gives_constant_shifted_carrier(device):
    env = PulseEnvelope(0.0, 30e-9, 0.0, 1.0)
    sched = PulseSchedule((Tone(two_photon_tone(device, 1.0), env),))
    traj = compensated_trajectories(device, sched).tones[0].trajectory
    vals = [traj.frequency(t) for t in np.linspace(1e-9, 29e-9, 7)]
    assert np.ptp(vals) == pytest.approx(0.0, abs=1e-6)
    assert vals[0] != pytest.approx(traj.base)


def test_nonadiabatic_estimate_is_finite_and_shrinks_with_rise(device):
    tone = two_photon_tone(device, 1.5)
    fast = nonadiabatic_correction_estimate(device, tone, 1e-9)
    slow = nonadiabatic_correction_estimate(device, tone, 4e-9)
    assert np.isfinite(fast) and slow == pytest.approx(fast / 4)


# --- probe Rabi map -------------------------------------------------------------


def test_rabi_map_minimum_at_shifted_resonance(device):
    tone = two_photon_tone(device, 1.5)
    d01 = np.linspace(-20, 20, 81) * MHZ
    m = rabi_map(device, tone, 0.02, d01, [DETUNED])
    best = d01[np.argmin(m[0])]
    expected = perturbative_shifts(device, tone).transition_shift(0, 1)
    assert best == pytest.approx(expected, abs=0.6 * MHZ)
    assert np.min(m) == pytest.approx(0.02 * device.drive_couplings[0, 1], rel=0.2)


def test_probe_rabi_far_detuned_is_generalized_rate(device):
    tone = replace(two_photon_tone(device, 1.5), amplitude=0.0)
    w = probe_rabi_frequency(device, tone, 0.02, 10 * MHZ, -100 * MHZ)
    assert w == pytest.approx(np.hypot(2 * MHZ, 10 * MHZ), rel=1e-6)
