"""Driving-induced level shifts and two-photon coupling.

Two independent routes are provided:

* ``perturbative_shifts``: second-order sums over every coupled pair, with a
  co-rotating (ac-Stark) and a counter-rotating (Bloch-Siegert) term each.
* ``numeric_shifts``: diagonalization of a truncated photon-block (dressed
  state) Hamiltonian, following each bare level adiabatically from zero
  amplitude.

Both return a :class:`ShiftReport` with per-level shifts in rad/s.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Tuple

import numpy as np
from scipy.optimize import minimize_scalar

from .core import DeviceSpec
from .pulses import FrequencyTrajectory, PulseSchedule, Tone, ToneSpec


WEAK_DRIVE_RATIO = 0.3
MIN_DRESSED_SIZE = 49


class PerturbationError(ValueError):
    """Second-order perturbation theory breaks down (resonant denominator)."""


class TrackingAmbiguity(RuntimeError):
    """Adiabatic level continuation could not decide between dressed branches."""


@dataclass(frozen=True)
class ShiftReport:
    """Per-level drive-induced shifts (rad/s).

    ``ac_stark`` and ``bloch_siegert`` are only split for the perturbative
    route; the dressed-state route reports the combined shift in ``ac_stark``
    and leaves ``bloch_siegert`` at zero.
    """

    ac_stark: np.ndarray
    bloch_siegert: np.ndarray
    two_photon_rabi: float = 0.0
    flags: Tuple[str, ...] = ()

    @property
    def level_shifts(self) -> np.ndarray:
        return np.asarray(self.ac_stark) + np.asarray(self.bloch_siegert)

    def transition_shift(self, j: int, k: int) -> float:
        s = self.level_shifts
        return float(s[k] - s[j])

    @property
    def total_transition_shifts(self) -> dict:
        n = min(3, len(self.ac_stark))
        return {(j, k): self.transition_shift(j, k) for j in range(n) for k in range(j + 1, n)}

    def __add__(self, other: "ShiftReport") -> "ShiftReport":
        return ShiftReport(
            self.ac_stark + other.ac_stark,
            self.bloch_siegert + other.bloch_siegert,
            self.two_photon_rabi + other.two_photon_rabi,
            self.flags + other.flags,
        )

    def scaled(self, factor: float) -> "ShiftReport":
        return replace(
            self,
            ac_stark=self.ac_stark * factor,
            bloch_siegert=self.bloch_siegert * factor,
            two_photon_rabi=self.two_photon_rabi * factor,
        )


def _rabi_matrix(device: DeviceSpec, tone: ToneSpec) -> np.ndarray:
    return device.drive_couplings * tone.amplitude


def perturbative_shifts(
    device: DeviceSpec,
    tone: ToneSpec,
    resonant_pairs: Iterable[Tuple[int, int]] = (),
) -> ShiftReport:
    """Second-order level shifts for every level of the device.

    For each coupled pair j < k with Rabi rate ``W = g_jk A`` and drive
    frequency ``w_d``, the co-rotating term moves level j by
    ``+W^2 / (4 (w_d - w_jk))`` and level k by the opposite amount; the
    counter-rotating term moves level j by ``-W^2 / (4 (w_d + w_jk))`` and
    level k by the opposite amount.

    ``resonant_pairs`` are pairs the tone drives on resonance; their
    co-rotating term is the Rabi drive itself rather than a shift, so it is
    skipped (the counter-rotating term is kept).
    """
    n = device.n_levels
    omega = _rabi_matrix(device, tone)
    wd = tone.carrier_freq
    skip = {tuple(sorted(p)) for p in resonant_pairs}
    acs = np.zeros(n)
    bs = np.zeros(n)
    flags = []
    for j in range(n):
        for k in range(j + 1, n):
            w2 = abs(omega[j, k]) ** 2
            if w2 == 0.0:
                continue
            wjk = device.transition(j, k)
            if (j, k) not in skip:
                det = wd - wjk
                if abs(det) <= 1e-12 * max(wd, wjk):
                    raise PerturbationError(
                        f"drive at {wd:.6g} rad/s is resonant with transition {j}-{k}"
                    )
                if abs(omega[j, k]) / abs(det) > WEAK_DRIVE_RATIO:
                    flags.append(f"strong drive on {j}-{k}: Omega/Delta = {abs(omega[j, k]) / abs(det):.2f}")
                acs[j] += w2 / (4.0 * det)
                acs[k] -= w2 / (4.0 * det)
            bs[j] -= w2 / (4.0 * (wd + wjk))
            bs[k] += w2 / (4.0 * (wd + wjk))
    rabi = 0.0
    if tone.is_two_photon:
        rabi = two_photon_rabi(device, tone)
    return ShiftReport(acs, bs, rabi, tuple(flags))


def two_photon_rabi(device: DeviceSpec, tone: ToneSpec) -> float:
    """Second-order Rabi rate of the tone's target transition j-k.

    Sums the virtual paths through every intermediate level m:
    ``|sum_m W_jm W_mk / (2 (w_d - w_jm))|``. For three levels driving 0-2
    this is ``|W01 W12 / (2 (w_d - w01))|``.
    """
    j, k = tone.target_transition
    omega = _rabi_matrix(device, tone)
    wd = tone.carrier_freq
    total = 0.0
    for m in range(device.n_levels):
        if m in (j, k) or omega[j, m] == 0 or omega[m, k] == 0:
            continue
        det = wd - (device.level_freqs[m] - device.level_freqs[j])
        if abs(det) <= 1e-12 * wd:
            raise PerturbationError(f"intermediate level {m} is resonant with the drive")
        if 10.0 * max(abs(omega[j, m]), abs(omega[m, k])) > abs(det):
            warnings.warn("two-photon formula used outside its validity range (Omega/Delta > 0.1)", RuntimeWarning, stacklevel=2)
        total += omega[j, m] * omega[m, k] / (2.0 * det)
    return float(abs(total))


# --------------------------------------------------------------------------
# dressed states
# --------------------------------------------------------------------------


def default_blocks(n_levels: int) -> int:
    """Smallest photon truncation giving a matrix of at least 49 x 49."""
    b = 3
    while n_levels * (2 * b + 1) < MIN_DRESSED_SIZE:
        b += 1
    return b


def dressed_index(n_levels: int, blocks: int, level: int, photons: int) -> int:
    """Row of bare state ``|level, photons>``; photon numbers run from -blocks to blocks."""
    return (photons + blocks) * n_levels + level


def build_dressed_hamiltonian(device: DeviceSpec, tone: ToneSpec, blocks: Optional[int] = None) -> np.ndarray:
    """Photon-block Hamiltonian of the device dressed by one tone.

    Basis states ``|j, n>`` have energy ``w_j + n w_d``; every coupled pair
    connects ``|j, n>`` with ``|k, n +/- 1>`` through ``W_jk / 2``, which
    keeps both co- and counter-rotating processes.
    """
    if blocks is None:
        blocks = default_blocks(device.n_levels)
    if blocks < 3:
        raise ValueError("need at least 3 photon blocks on each side to hold the two-photon manifold")
    n = device.n_levels
    nb = 2 * blocks + 1
    omega = _rabi_matrix(device, tone)
    h = np.zeros((n * nb, n * nb), dtype=complex)
    photons = np.arange(-blocks, blocks + 1)
    diag = (device.level_freqs[None, :] + photons[:, None] * tone.carrier_freq).ravel()
    h[np.diag_indices_from(h)] = diag
    half = 0.5 * omega
    for b in range(nb - 1):
        rows = slice(b * n, (b + 1) * n)
        cols = slice((b + 1) * n, (b + 2) * n)
        h[rows, cols] = half
        h[cols, rows] = half.conj().T
    return h


def _bare_energies(device: DeviceSpec, tone: ToneSpec, blocks: int) -> np.ndarray:
    photons = np.arange(-blocks, blocks + 1)
    return (device.level_freqs[None, :] + photons[:, None] * tone.carrier_freq).ravel()


def _track_levels(device, tone, blocks, levels, max_steps=4096):
    """Follow ``|j, 0>`` for each j in ``levels`` from zero to full amplitude.

    Returns the final dressed eigenvalues. The amplitude step halves when the
    best eigenvector overlap drops below 0.9; if the two best overlaps stay
    comparable at the smallest step the branch is ambiguous.
    """
    n = device.n_levels
    size = n * (2 * blocks + 1)
    idx = [dressed_index(n, blocks, j, 0) for j in levels]
    bare = _bare_energies(device, tone, blocks)
    gaps = np.abs(bare[idx][:, None] - bare[None, :])
    for row, i in enumerate(idx):
        gaps[row, i] = np.inf
    if np.min(gaps) == 0.0:
        raise TrackingAmbiguity("tracked level is exactly degenerate at zero amplitude")
    vecs = np.zeros((size, len(idx)), dtype=complex)
    vecs[idx, range(len(idx))] = 1.0
    energies = bare[idx].copy()
    target = tone.amplitude
    amp = 0.0
    step = target / 16.0
    min_step = target / max_steps
    while amp < target:
        trial = min(target, amp + step)
        h = build_dressed_hamiltonian(device, replace(tone, amplitude=trial), blocks)
        w, v = np.linalg.eigh(h)
        ov = np.abs(v.conj().T @ vecs)
        best = np.argmax(ov, axis=0)
        best_ov = ov[best, range(len(idx))]
        if np.min(best_ov) < 0.9 and step > min_step:
            step *= 0.5
            continue
        if len(set(best.tolist())) < len(best):
            raise TrackingAmbiguity("two tracked levels converged onto the same dressed state")
        srt = np.sort(ov, axis=0)
        if np.any(srt[-2] > 0.5 * srt[-1]):
            raise TrackingAmbiguity("dressed branches are strongly mixed (near an anticrossing)")
        # fix the eigenvector phase to keep overlaps positive for the next step
        newv = v[:, best]
        ph = np.sum(newv.conj() * vecs, axis=0)
        newv = newv * (ph / np.abs(ph))
        vecs = newv
        energies = w[best]
        amp = trial
        if best_ov.min() > 0.99:
            step *= 2.0
    return energies


def numeric_shifts(
    device: DeviceSpec,
    tone: ToneSpec,
    blocks: Optional[int] = None,
    levels: Optional[Iterable[int]] = None,
) -> ShiftReport:
    """Level shifts from the dressed-state spectrum.

    Each tracked level's shift is its dressed eigenvalue minus the bare
    value in the central photon block. For a two-photon tone the report also
    carries the anticrossing gap (:func:`anticrossing_gap`).
    """
    if blocks is None:
        blocks = default_blocks(device.n_levels)
    n = device.n_levels
    levels = list(range(min(3, n))) if levels is None else list(levels)
    shifts = np.zeros(n)
    if tone.amplitude > 0:
        e = _track_levels(device, tone, blocks, levels)
        shifts[levels] = e - device.level_freqs[levels]
    rabi = 0.0
    if tone.is_two_photon and tone.amplitude > 0:
        rabi = anticrossing_gap(device, tone, blocks)
    return ShiftReport(shifts, np.zeros(n), rabi)


def anticrossing_gap(device: DeviceSpec, tone: ToneSpec, blocks: Optional[int] = None, span: Optional[float] = None) -> float:
    """Minimum splitting of the ``|j, n+2>`` / ``|k, n>`` anticrossing.

    The carrier is swept through the two-photon resonance of the tone's
    target pair; at each frequency the two dressed states carrying the most
    weight on the pair are located and their splitting taken.
    """
    if blocks is None:
        blocks = default_blocks(device.n_levels)
    j, k = tone.target_transition
    n = device.n_levels
    ia = dressed_index(n, blocks, j, 1)
    ib = dressed_index(n, blocks, k, -1)
    w0 = 0.5 * device.transition(j, k)
    est = max(two_photon_rabi(device, replace(tone, carrier_freq=w0)), 1.0)
    if span is None:
        pert = perturbative_shifts(device, replace(tone, carrier_freq=w0))
        span = 4.0 * est + 2.0 * abs(pert.transition_shift(j, k))

    def gap(wd):
        h = build_dressed_hamiltonian(device, replace(tone, carrier_freq=wd), blocks)
        w, v = np.linalg.eigh(h)
        weight = np.abs(v[ia]) ** 2 + np.abs(v[ib]) ** 2
        top = np.argsort(weight)[-2:]
        return abs(w[top[1]] - w[top[0]])

    # coarse scan to bracket the minimum, then a bounded refinement
    grid = w0 + np.linspace(-span, span, 41)
    vals = [gap(x) for x in grid]
    i = int(np.argmin(vals))
    lo, hi = grid[max(i - 1, 0)], grid[min(i + 1, len(grid) - 1)]
    res = minimize_scalar(gap, bounds=(lo, hi), method="bounded", options={"xatol": est * 1e-6})
    return float(min(res.fun, vals[i]))


def two_photon_resonance(device: DeviceSpec, tone: ToneSpec, report: Optional[ShiftReport] = None) -> float:
    """Carrier frequency at which the shifted two-photon transition is resonant."""
    j, k = tone.target_transition
    if report is None:
        report = perturbative_shifts(device, tone)
    return 0.5 * (device.transition(j, k) + report.transition_shift(j, k))


# --------------------------------------------------------------------------
# shift-compensated carriers
# --------------------------------------------------------------------------


def tone_shift_coefficients(device: DeviceSpec, tone: ToneSpec, method: str = "perturbative") -> np.ndarray:
    """Per-level shift per unit amplitude squared caused by one tone."""
    if tone.amplitude == 0:
        return np.zeros(device.n_levels)
    resonant = () if tone.is_two_photon else (tone.target_transition,)
    if method == "numeric" and tone.is_two_photon:
        rep = numeric_shifts(device, tone)
    elif method in ("perturbative", "numeric"):
        rep = perturbative_shifts(device, tone, resonant_pairs=resonant)
    else:
        raise ValueError(f"unknown shift method {method!r}")
    return rep.level_shifts / tone.amplitude**2


def compensated_trajectories(device: DeviceSpec, schedule: PulseSchedule, method: str = "perturbative") -> PulseSchedule:
    """Make every carrier follow its drive-shifted transition frequency.

    The shift from each tone scales with the square of its instantaneous
    amplitude, so the level phases are ``w_j t + sum c_j int a(t)^2`` and each
    carrier's phase is the matching difference of level phases (halved for
    a two-photon tone). Phases stay continuous through the envelope.
    """
    n = device.n_levels
    level_terms = []
    for tone in schedule.tones:
        c = tone_shift_coefficients(device, tone.spec, method)
        if np.any(c):
            level_terms.append((tuple(float(x) for x in c), tone.envelope, tone.start))
    new_tones = []
    for tone in schedule.tones:
        j, k = tone.spec.target_transition
        div = 2.0 if tone.spec.is_two_photon else 1.0
        base = device.transition(j, k) / div
        terms = tuple(((coeffs[k] - coeffs[j]) / div, env, t0) for coeffs, env, t0 in level_terms)
        terms = tuple(t for t in terms if t[0] != 0.0)
        new_tones.append(replace(tone, trajectory=FrequencyTrajectory(base, terms)))
    return replace(schedule, tones=tuple(new_tones), level_terms=tuple(level_terms))


def nonadiabatic_correction_estimate(device: DeviceSpec, tone: ToneSpec, rise: float, blocks: Optional[int] = None) -> float:
    """Rough size (rad/s) of the basis-rotation terms dropped from the effective Hamiltonian.

    Uses ``|dp/dt| * |<m|d/dp n>|`` at the steepest point of a cosine edge,
    with the state derivative from first-order perturbation theory
    (``|d/dp n| ~ max_jk g_jk / (2 |Delta_jk|)``).
    """
    if rise <= 0:
        return math.inf
    pdot = tone.amplitude * math.pi / (2.0 * rise)
    g = device.drive_couplings
    best = 0.0
    for j in range(device.n_levels):
        for k in range(j + 1, device.n_levels):
            if g[j, k] == 0:
                continue
            det = abs(tone.carrier_freq - device.transition(j, k))
            if det > 0:
                best = max(best, g[j, k] / (2.0 * det))
    return pdot * best


# --------------------------------------------------------------------------
# 0-1 Rabi frequency under a 0-2 two-photon drive
# --------------------------------------------------------------------------


def probe_rabi_frequency(
    device: DeviceSpec,
    tone: ToneSpec,
    probe_amplitude: float,
    detuning_01: float,
    detuning_02: float,
) -> float:
    """Dominant 0-1 oscillation frequency (rad/s) with a weak 0-1 probe and a 0-2 two-photon tone.

    Works in the frame where level 1 rotates with the probe and level 2 at
    twice the two-photon carrier, so the effective Hamiltonian is static:
    levels sit at ``-detuning + shift`` (shifts of the two-photon tone
    relative to level 0), coupled by ``g01 a / 2`` and ``K A^2 / 2``.
    Detunings are carrier minus bare transition (``2 w_d - w02`` for the
    0-2 pair). The returned frequency is the component of ``P1(t)`` with
    the largest weight, starting from ``|0>``.
    """
    rep = perturbative_shifts(device, tone)
    s = rep.level_shifts
    h = np.zeros((3, 3), dtype=complex)
    h[1, 1] = -detuning_01 + s[1] - s[0]
    h[2, 2] = -detuning_02 + s[2] - s[0]
    h[0, 1] = h[1, 0] = 0.5 * device.drive_couplings[0, 1] * probe_amplitude
    h[0, 2] = h[2, 0] = 0.5 * rep.two_photon_rabi
    w, v = np.linalg.eigh(h)
    amp = v[1, :] * np.conj(v[0, :])
    best, freq = -1.0, 0.0
    for a in range(3):
        for b in range(a + 1, 3):
            weight = abs(amp[a] * amp[b])
            if weight > best:
                best, freq = weight, abs(w[a] - w[b])
    return float(freq)


def rabi_map(device: DeviceSpec, tone: ToneSpec, probe_amplitude: float, detunings_01, detunings_02) -> np.ndarray:
    """:func:`probe_rabi_frequency` on a grid; rows follow ``detunings_02``."""
    return np.array(
        [[probe_rabi_frequency(device, tone, probe_amplitude, d1, d2) for d1 in detunings_01] for d2 in detunings_02]
    )
