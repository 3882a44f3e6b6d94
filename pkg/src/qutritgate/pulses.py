"""Pulse envelopes, carrier-frequency trajectories and multi-tone schedules."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Tuple

import numpy as np


@dataclass(frozen=True)
class PulseEnvelope:
    """Flat-top envelope with raised-cosine rise and fall.

    Times are in seconds; ``peak`` is in drive units.
    """

    rise: float
    flat: float
    fall: float
    peak: float = 1.0

    def __post_init__(self):
        if min(self.rise, self.flat, self.fall) < 0:
            raise ValueError("envelope durations must be non-negative")

    @property
    def duration(self) -> float:
        return self.rise + self.flat + self.fall

    def __call__(self, t):
        return envelope_eval(self, t)

    def scaled(self, peak: float) -> "PulseEnvelope":
        return replace(self, peak=peak)

    def area(self, power: int = 1) -> float:
        """Integral of ``envelope**power`` over the whole pulse."""
        return float(envelope_integral(self, self.duration, power))


def envelope_eval(env: PulseEnvelope, t):
    """Envelope value at time ``t`` (scalar or array); zero outside the support."""
    if np.isscalar(t):
        return _envelope_scalar(env, float(t))
    t = np.asarray(t, dtype=float)
    out = np.zeros_like(t)
    r, f, l, p = env.rise, env.flat, env.fall, env.peak
    m = (t >= 0) & (t < r)
    if r > 0:
        out[m] = 0.5 * p * (1.0 - np.cos(np.pi * t[m] / r))
    m = (t >= r) & (t <= r + f)
    out[m] = p
    m = (t > r + f) & (t <= r + f + l)
    if l > 0:
        s = t[m] - r - f
        out[m] = 0.5 * p * (1.0 + np.cos(np.pi * s / l))
    return out


def _envelope_scalar(env: PulseEnvelope, t: float) -> float:
    r, f, l, p = env.rise, env.flat, env.fall, env.peak
    if t < 0.0 or t > r + f + l:
        return 0.0
    if t < r:
        return 0.5 * p * (1.0 - math.cos(math.pi * t / r))
    if t <= r + f:
        return p
    s = t - r - f
    return 0.5 * p * (1.0 + math.cos(math.pi * s / l))


def _edge_integral(x: float, width: float, power: int, rising: bool) -> float:
    """Integral over ``[0, x]`` of the normalized cosine edge raised to ``power``."""
    if width <= 0 or x <= 0:
        return 0.0
    x = min(x, width)
    sgn = -1.0 if rising else 1.0
    a = math.pi / width
    if power == 1:
        return 0.5 * (x + sgn * math.sin(a * x) / a)
    if power == 2:
        return 0.25 * (1.5 * x + 2.0 * sgn * math.sin(a * x) / a + math.sin(2 * a * x) / (4 * a))
    raise ValueError("power must be 1 or 2")


def envelope_integral(env: PulseEnvelope, t: float, power: int = 1) -> float:
    """Closed-form ``int_0^t envelope(s)**power ds``."""
    r, f, l = env.rise, env.flat, env.fall
    t = float(t)
    if t <= 0:
        return 0.0
    total = _edge_integral(t, r, power, rising=True)
    if t > r:
        total += min(t - r, f)
    if t > r + f:
        total += _edge_integral(t - r - f, l, power, rising=False)
    return env.peak**power * total


@dataclass(frozen=True)
class FrequencyTrajectory:
    """Carrier frequency ``base + sum_i coeff_i * envelope_i(t)**2``.

    Driving-induced level shifts are quadratic in drive amplitude, so a
    shift-compensated carrier is a sum of squared envelopes. ``offset`` is
    a constant added to the accumulated phase.
    """

    base: float
    terms: Tuple[Tuple[float, PulseEnvelope, float], ...] = ()
    offset: float = 0.0

    def frequency(self, t: float) -> float:
        return self.base + sum(c * envelope_eval(e, t - t0) ** 2 for c, e, t0 in self.terms)

    def phase(self, t: float) -> float:
        """Accumulated phase ``int_0^t frequency``."""
        return (
            self.offset
            + self.base * t
            + sum(c * envelope_integral(e, t - t0, 2) for c, e, t0 in self.terms)
        )


@dataclass(frozen=True)
class ToneSpec:
    """One drive tone.

    ``amplitude`` multiplies the device couplings to give Rabi rates.
    A two-photon tone drives ``target_transition`` at half its frequency.
    """

    amplitude: float
    carrier_freq: float
    phase: float = 0.0
    target_transition: Tuple[int, int] = (0, 1)
    is_two_photon: bool = False

    def __post_init__(self):
        if self.amplitude < 0:
            raise ValueError("amplitude must be >= 0")
        if self.carrier_freq <= 0:
            raise ValueError("carrier frequency must be > 0")
        j, k = self.target_transition
        if j == k:
            raise ValueError("target transition needs two distinct levels")
        object.__setattr__(self, "target_transition", (min(j, k), max(j, k)))


@dataclass(frozen=True)
class Tone:
    spec: ToneSpec
    envelope: PulseEnvelope
    trajectory: Optional[FrequencyTrajectory] = None
    start: float = 0.0

    def __post_init__(self):
        if self.envelope.peak != self.spec.amplitude:
            object.__setattr__(self, "envelope", self.envelope.scaled(self.spec.amplitude))
        if self.trajectory is None:
            object.__setattr__(self, "trajectory", FrequencyTrajectory(self.spec.carrier_freq))

    @property
    def end(self) -> float:
        return self.start + self.envelope.duration

    def amplitude(self, t: float) -> float:
        return envelope_eval(self.envelope, t - self.start)

    def carrier_phase(self, t: float) -> float:
        return self.trajectory.phase(t)

    def signal(self, t: float) -> float:
        """``a(t) cos(theta(t) + phase)``."""
        a = self.amplitude(t)
        if a == 0.0:
            return 0.0
        return a * math.cos(self.trajectory.phase(t) + self.spec.phase)


@dataclass(frozen=True)
class PulseSchedule:
    """A set of tones plus the level-phase frame they are referenced to.

    ``level_terms`` holds ``(per-level coefficients, envelope, start)``
    triples: the frame phase of level j is
    ``omega_j t + sum coeff[j] * int envelope**2``.
    """

    tones: Tuple[Tone, ...] = ()
    total_duration: Optional[float] = None
    level_terms: Tuple[Tuple[Tuple[float, ...], PulseEnvelope, float], ...] = ()

    def __post_init__(self):
        tones = tuple(self.tones)
        end = max((t.end for t in tones), default=0.0)
        total = end if self.total_duration is None else float(self.total_duration)
        if total + 1e-18 < end:
            raise ValueError("a tone extends beyond total_duration")
        object.__setattr__(self, "tones", tones)
        object.__setattr__(self, "total_duration", total)

    def with_tones(self, tones: Sequence[Tone]) -> "PulseSchedule":
        return replace(self, tones=tuple(tones))

    def signal(self, t: float) -> float:
        return sum(tone.signal(t) for tone in self.tones)

    def frame_shift_phases(self, t: float, n_levels: int) -> np.ndarray:
        """Level phases accumulated from driving-induced shifts (excluding ``omega_j t``)."""
        out = np.zeros(n_levels)
        for coeffs, env, t0 in self.level_terms:
            out[: len(coeffs)] += np.asarray(coeffs) * envelope_integral(env, t - t0, 2)
        return out

    def level_shifts(self, t: float, n_levels: int) -> np.ndarray:
        """Instantaneous level shifts assumed by the frame."""
        out = np.zeros(n_levels)
        for coeffs, env, t0 in self.level_terms:
            out[: len(coeffs)] += np.asarray(coeffs) * envelope_eval(env, t - t0) ** 2
        return out

    def peak_amplitude(self) -> float:
        return sum(t.spec.amplitude for t in self.tones)
