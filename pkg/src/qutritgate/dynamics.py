"""Time-domain evolution of the driven device.

Integration is done in the interaction picture of the bare Hamiltonian
``diag(w_j)``, which removes the large static phases but keeps every
counter-rotating term of the lab-frame drive (no rotating-wave
approximation). Decoherence acts on the lowest three levels only.
"""

from __future__ import annotations

import csv
import enum
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm
from scipy.optimize import curve_fit

from .core import (
    DecoherenceRates,
    CoherenceShape,
    DeviceSpec,
    ReadoutModel,
    embed,
    project_psd,
    state_fidelity,
    validate_density,
)
from .decomposer import GateDecomposition
from .drive import compensated_trajectories, two_photon_rabi
from .pulses import PulseEnvelope, PulseSchedule, Tone, ToneSpec, envelope_eval


class Frame(str, enum.Enum):
    LAB = "lab"
    ROTATING = "rotating"


class IntegrationError(RuntimeError):
    """The ODE integrator failed; ``time`` is where it stopped."""

    def __init__(self, message: str, time: float):
        super().__init__(f"{message} (t = {time:.6g} s)")
        self.time = time


# Lindblad coefficient per unit pure-dephasing rate for L[|i><i| - |j><j|].
# "coherence": an isolated pair's coherence decays as exp(-rate * t), the
# same 1/e rate the coherence functions are defined by; "literal": the
# coefficient equals the rate, so the coherence decays twice as fast.
DEPHASING_SCALE = {"coherence": 0.5, "literal": 1.0}


@dataclass(frozen=True)
class SimulationConfig:
    frame: Frame = Frame.LAB
    integrator_rel_tol: float = 1e-9
    integrator_abs_tol: float = 1e-11
    max_step: float = np.inf
    include_decoherence: bool = False
    method: str = "DOP853"
    dephasing_convention: str = "coherence"

    def __post_init__(self):
        if self.integrator_rel_tol <= 0 or self.integrator_abs_tol <= 0:
            raise ValueError("integrator tolerances must be positive")
        if self.dephasing_convention not in DEPHASING_SCALE:
            raise ValueError(f"dephasing_convention must be one of {sorted(DEPHASING_SCALE)}")
        object.__setattr__(self, "frame", Frame(self.frame))


# --------------------------------------------------------------------------
# Hamiltonians
# --------------------------------------------------------------------------


def drive_hamiltonian(device: DeviceSpec, schedule: PulseSchedule, t: float) -> np.ndarray:
    """Lab-frame Hamiltonian ``diag(w) + sum_tones a(t) cos(theta(t) + phi) g``.

    The same field couples every transition through the coupling matrix.
    """
    return np.diag(device.level_freqs).astype(complex) + schedule.signal(t) * device.drive_couplings


class _InteractionDrive:
    """``H_I(t) = s(t) * (g o exp(i (w_j - w_k) t))`` with ``s`` the summed drive signal."""

    def __init__(self, device: DeviceSpec, schedule: PulseSchedule):
        self.g = np.asarray(device.drive_couplings, dtype=complex)
        w = device.level_freqs
        self.dw = w[:, None] - w[None, :]
        self.schedule = schedule
        self.mask = self.g != 0

    def signal(self, t: float) -> float:
        return self.schedule.signal(t)

    def __call__(self, t: float) -> np.ndarray:
        s = self.schedule.signal(t)
        if s == 0.0:
            return None
        h = np.zeros_like(self.g)
        h[self.mask] = s * self.g[self.mask] * np.exp(1j * self.dw[self.mask] * t)
        return h


class _RotatingDrive:
    """Effective rotating-wave Hamiltonian in the (possibly shift-compensated) frame.

    Each tone contributes only on its target pair: ``a g e^{i phi} / 2`` for a
    single-photon tone and ``K a^2 e^{2 i phi} / 2`` for a two-photon tone.
    The diagonal holds the perturbative level shifts minus the shifts the
    frame already follows, plus the residual carrier detuning.
    """

    def __init__(self, device: DeviceSpec, schedule: PulseSchedule):
        from .drive import tone_shift_coefficients

        self.device = device
        self.schedule = schedule
        self.n = device.n_levels
        self.items = []
        self.shift_terms = []
        for tone in schedule.tones:
            j, k = tone.spec.target_transition
            if tone.spec.is_two_photon:
                unit = ToneSpec(1.0, tone.spec.carrier_freq, tone.spec.phase, (j, k), True)
                coupling = two_photon_rabi(device, unit)
            else:
                coupling = device.drive_couplings[j, k]
            self.items.append((tone, j, k, coupling))
            c = tone_shift_coefficients(device, tone.spec)
            self.shift_terms.append((c, tone))

    def __call__(self, t: float) -> np.ndarray:
        n = self.n
        h = np.zeros((n, n), dtype=complex)
        diag = np.zeros(n)
        for c, tone in self.shift_terms:
            diag += c * tone.amplitude(t) ** 2
        diag -= self.schedule.level_shifts(t, n)
        for tone, j, k, coupling in self.items:
            a = tone.amplitude(t)
            if a == 0.0:
                continue
            p = 2 if tone.spec.is_two_photon else 1
            # carrier phase mismatch against the frame's j-k phase
            phase_err = p * tone.trajectory.phase(t) - self._frame_phase(t, j, k)
            val = 0.5 * coupling * a**p * np.exp(1j * (p * tone.spec.phase + phase_err))
            h[j, k] += val
            h[k, j] += np.conj(val)
        h[np.diag_indices(n)] += diag
        return h

    def _frame_phase(self, t, j, k):
        sh = self.schedule.frame_shift_phases(t, self.n)
        return self.device.transition(j, k) * t + sh[k] - sh[j]


# --------------------------------------------------------------------------
# Lindblad pieces
# --------------------------------------------------------------------------


def collapse_operators(rates: DecoherenceRates, dim: int, dephasing_scale: float = 0.5):
    """``(rate, operator)`` pairs for relaxation/excitation and pure dephasing.

    ``gamma[i, j]`` uses the jump ``|j><i|``; dephasing on pair (i, j) uses
    ``|i><i| - |j><j|`` with coefficient ``dephasing_scale * rate``.
    """
    ops = []
    for i in range(3):
        for j in range(3):
            if i != j and rates.gamma[i, j] > 0:
                op = np.zeros((dim, dim), dtype=complex)
                op[j, i] = 1.0
                ops.append((float(rates.gamma[i, j]), op))
    for i in range(3):
        for j in range(i + 1, 3):
            if rates.pure_dephasing[i, j] > 0:
                op = np.zeros((dim, dim), dtype=complex)
                op[i, i] = 1.0
                op[j, j] = -1.0
                ops.append((dephasing_scale * float(rates.pure_dephasing[i, j]), op))
    return ops


def _dissipator_parts(ops, dim):
    if not ops:
        return None
    rates = np.array([r for r, _ in ops])
    ls = np.array([op for _, op in ops])
    ldag = ls.conj().transpose(0, 2, 1)
    ldl = np.einsum("k,kij,kjl->il", rates, ldag, ls)
    return rates, ls, ldag, ldl


def _dissipate(rho, parts):
    rates, ls, ldag, ldl = parts
    jump = np.einsum("k,kij,...jl,klm->...im", rates, ls, rho, ldag)
    return jump - 0.5 * (ldl @ rho + rho @ ldl)


def liouvillian(h: np.ndarray, rates: DecoherenceRates) -> np.ndarray:
    """Row-major vectorized generator ``vec(drho/dt) = L vec(rho)`` for a static Hamiltonian."""
    d = h.shape[0]
    eye = np.eye(d)
    lv = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for rate, op in collapse_operators(rates, d):
        ldl = op.conj().T @ op
        lv += rate * (np.kron(op, op.conj()) - 0.5 * np.kron(ldl, eye) - 0.5 * np.kron(eye, ldl.T))
    return lv


# --------------------------------------------------------------------------
# integration
# --------------------------------------------------------------------------


@dataclass
class Trajectory:
    """Samples of an evolution; ``states`` has shape ``(len(times), ...)``."""

    times: np.ndarray
    states: np.ndarray
    final: np.ndarray
    nfev: int = 0


def _integrate(rhs, y0, t_end, t_eval, config: SimulationConfig, t_start: float = 0.0):
    if t_end <= t_start:
        return np.array([t_start]), y0[None, :], y0, 0
    sol = solve_ivp(
        rhs,
        (t_start, t_end),
        y0,
        method=config.method,
        rtol=config.integrator_rel_tol,
        atol=config.integrator_abs_tol,
        max_step=config.max_step,
        t_eval=t_eval,
    )
    if sol.status != 0:
        raise IntegrationError(sol.message, float(sol.t[-1]) if sol.t.size else t_start)
    final = sol.y[:, -1] if t_eval is None else None
    ys = sol.y.T
    return sol.t, ys, final, sol.nfev


def _make_hamiltonian(device, schedule, config):
    if config.frame == Frame.LAB:
        return _InteractionDrive(device, schedule)
    return _RotatingDrive(device, schedule)


def _to_output_frame(device, schedule, config, t, states, kind):
    """Interaction-picture states -> rotating frame with the schedule's shift phases."""
    if config.frame == Frame.ROTATING:
        return states
    ph = np.exp(1j * schedule.frame_shift_phases(t, device.n_levels))
    if kind == "ket":
        return ph[:, None] * states if states.ndim == 2 else ph * states
    return ph[:, None] * states * ph.conj()[None, :]


def evolve_schrodinger(
    device: DeviceSpec,
    schedule: PulseSchedule,
    psi0,
    config: SimulationConfig = SimulationConfig(),
    times: Optional[Sequence[float]] = None,
    output: str = "rotating",
) -> Trajectory:
    """Integrate ``i dpsi/dt = H(t) psi`` over the schedule.

    ``psi0`` may be a state vector or a matrix whose columns are evolved
    together (pass the identity to obtain the propagator). States are
    returned in the rotating frame of the schedule (``output="rotating"``)
    or in the lab frame (``output="lab"``).
    """
    psi0 = np.asarray(psi0, dtype=complex)
    shape = psi0.shape
    d = device.n_levels
    if shape[0] != d:
        raise ValueError(f"state dimension {shape[0]} does not match device ({d})")
    norms = np.linalg.norm(psi0.reshape(d, -1), axis=0)
    if np.any(np.abs(norms - 1.0) > 1e-10):
        raise ValueError("initial state is not normalized")
    ham = _make_hamiltonian(device, schedule, config)

    def rhs(t, y):
        h = ham(t)
        if h is None:
            return np.zeros_like(y)
        return (-1j * (h @ y.reshape(d, -1))).ravel()

    t_end = schedule.total_duration
    t_eval = None if times is None else np.asarray(times, dtype=float)
    ts, ys, final, nfev = _integrate(rhs, psi0.ravel(), t_end, t_eval, config)
    if final is None:
        _, _, final, _ = _integrate(rhs, psi0.ravel(), t_end, None, config)
    states = ys.reshape((len(ts),) + shape)
    final = final.reshape(shape)
    out_states = np.array([_frame_ket(device, schedule, config, t, s, output) for t, s in zip(ts, states)])
    out_final = _frame_ket(device, schedule, config, t_end, final, output)
    return Trajectory(ts, out_states, out_final, nfev)


def _frame_ket(device, schedule, config, t, state, output):
    s = state if state.ndim == 2 else state[:, None]
    if output == "lab":
        if config.frame == Frame.ROTATING:
            s = np.exp(-1j * rotating_frame_phases(device, schedule, t))[:, None] * s
        else:
            s = np.exp(-1j * device.level_freqs * t)[:, None] * s
    else:
        s = _to_output_frame(device, schedule, config, t, s, "ket")
    return s if state.ndim == 2 else s[:, 0]


def evolve_lindblad(
    device: DeviceSpec,
    schedule: PulseSchedule,
    rho0,
    config: SimulationConfig = SimulationConfig(include_decoherence=True),
    times: Optional[Sequence[float]] = None,
    rates: Optional[DecoherenceRates] = None,
    output: str = "rotating",
) -> Trajectory:
    """Integrate the Lindblad master equation over the schedule.

    ``rho0`` is one density matrix or a stack ``(m, d, d)``; stacks are
    evolved together, which also allows propagating operator bases. The
    decoherence rates default to the device's when
    ``config.include_decoherence`` is set and to zero otherwise.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    d = device.n_levels
    if rho0.shape[-2:] != (d, d):
        raise ValueError(f"density matrix shape {rho0.shape} does not match device ({d})")
    if rates is None:
        rates = device.decoherence if config.include_decoherence else DecoherenceRates.none()
    parts = _dissipator_parts(collapse_operators(rates, d, DEPHASING_SCALE[config.dephasing_convention]), d)
    ham = _make_hamiltonian(device, schedule, config)
    shape = rho0.shape

    def rhs(t, y):
        rho = y.reshape(shape)
        h = ham(t)
        out = np.zeros_like(rho) if h is None else -1j * (h @ rho - rho @ h)
        if parts is not None:
            out = out + _dissipate(rho, parts)
        return out.ravel()

    t_end = schedule.total_duration
    t_eval = None if times is None else np.asarray(times, dtype=float)
    ts, ys, final, nfev = _integrate(rhs, rho0.ravel(), t_end, t_eval, config)
    if final is None:
        _, _, final, _ = _integrate(rhs, rho0.ravel(), t_end, None, config)
    states = ys.reshape((len(ts),) + shape)
    final = final.reshape(shape)

    def frame(t, r):
        if output == "lab":
            if config.frame == Frame.ROTATING:
                ph = np.exp(-1j * rotating_frame_phases(device, schedule, t))
            else:
                ph = np.exp(-1j * device.level_freqs * t)
            return ph[:, None] * r * ph.conj()[None, :]
        return _to_output_frame(device, schedule, config, t, r, "dm")

    return Trajectory(ts, np.array([frame(t, s) for t, s in zip(ts, states)]), frame(t_end, final), nfev)


def rotating_frame_phases(device: DeviceSpec, schedule: PulseSchedule, t: float) -> np.ndarray:
    """Frame phases ``theta_j(t) = w_j t + int_0^t delta_j``."""
    return device.level_freqs * t + schedule.frame_shift_phases(t, device.n_levels)


def rotating_frame_state(state, device: DeviceSpec, schedule: PulseSchedule, t: float) -> np.ndarray:
    """Map a lab-frame ket or density matrix into the rotating frame ``U(t) = sum_j e^{i theta_j}|j><j|``."""
    state = np.asarray(state, dtype=complex)
    u = np.exp(1j * rotating_frame_phases(device, schedule, t))
    if state.ndim == 1:
        return u * state
    return u[:, None] * state * u.conj()[None, :]


# --------------------------------------------------------------------------
# free decoherence
# --------------------------------------------------------------------------


def coherence_function(rate: float, tau: float, shape: CoherenceShape) -> float:
    if shape == CoherenceShape.GAUSSIAN:
        return math.exp(-((rate * tau) ** 2))
    return math.exp(-rate * tau)


def free_decoherence_evolution(rho0, duration: float, rates: DecoherenceRates) -> np.ndarray:
    """Undriven decay: relaxation/excitation propagator followed by pure dephasing.

    The first map solves the rate master equation (frame co-rotating with the
    bare levels); the second multiplies each off-diagonal element of the
    qutrit block by its coherence function.
    """
    rho0 = np.asarray(rho0, dtype=complex)
    if duration < 0:
        raise ValueError("duration must be >= 0")
    d = rho0.shape[0]
    relax_only = DecoherenceRates(rates.gamma, np.zeros((3, 3)), rates.coherence_shape)
    lv = liouvillian(np.zeros((d, d)), relax_only)
    rho = (expm(lv * duration) @ rho0.ravel()).reshape(d, d)
    for i in range(3):
        for j in range(3):
            if i != j:
                rho[i, j] *= coherence_function(rates.pure_dephasing[i, j], duration, rates.coherence_shape)
    return rho


# --------------------------------------------------------------------------
# gate construction and simulation
# --------------------------------------------------------------------------

DEFAULT_RISE = 4e-9
DEFAULT_DURATION = 35e-9


def gate_schedule(
    device: DeviceSpec,
    decomposition: GateDecomposition,
    duration: float = DEFAULT_DURATION,
    rise: float = DEFAULT_RISE,
    compensate: bool = True,
    shift_method: str = "perturbative",
    phase_offset_02: float = 0.0,
) -> PulseSchedule:
    """Three-tone pulse realizing ``exp(-i G_o)`` in the rotating frame.

    Single-photon tones are scaled so ``g_jk * int a(t) dt = 2 |m_jk|``; the
    two-photon 0-2 tone so ``K * int a(t)^2 dt = 2 |m02|`` where ``K a^2``
    is its two-photon Rabi rate. Tone phases are ``arg(m_jk)`` (halved for
    the two-photon tone, whose effective coupling carries twice the phase).
    ``phase_offset_02`` is added to the two-photon tone phase.
    """
    flat = duration - 2.0 * rise
    if flat < 0:
        raise ValueError("duration shorter than rise + fall")
    unit = PulseEnvelope(rise, flat, rise, 1.0)
    tones = []
    for (j, k), m in decomposition.couplings.items():
        mag = abs(m)
        phase = float(np.angle(m)) if mag > 0 else 0.0
        wjk = device.transition(j, k)
        g = device.drive_couplings[j, k]
        if g != 0:
            amp = 2.0 * mag / (g * unit.area(1)) if duration > 0 else 0.0
            spec = ToneSpec(amp, wjk, phase, (j, k), False)
        else:
            probe = ToneSpec(1.0, wjk / 2.0, 0.0, (j, k), True)
            k2 = two_photon_rabi(device, probe)
            if k2 == 0:
                if mag > 0:
                    raise ValueError(f"transition {j}-{k} cannot be driven (no direct or two-photon coupling)")
                continue
            amp = math.sqrt(2.0 * mag / (k2 * unit.area(2))) if duration > 0 else 0.0
            spec = ToneSpec(amp, wjk / 2.0, 0.5 * phase + phase_offset_02, (j, k), True)
        tones.append(Tone(spec, unit))
    schedule = PulseSchedule(tuple(tones), duration)
    if compensate:
        schedule = compensated_trajectories(device, schedule, shift_method)
    return schedule


def _unitary(u, dim: int) -> np.ndarray:
    """Matrix of a unitary given as an array or a pulse sequence."""
    if hasattr(u, "unitary"):
        return u.unitary(dim)
    return embed(np.asarray(u, dtype=complex), dim)


def _as_qutrit(rho: np.ndarray) -> np.ndarray:
    return rho[..., :3, :3]


@dataclass
class GateResult:
    final: np.ndarray
    voltages: np.ndarray
    rotating_state: np.ndarray = field(repr=False, default=None)


def _gate_channel_states(device, schedule, rho_in, config):
    if config.include_decoherence and not device.decoherence.is_zero:
        return evolve_lindblad(device, schedule, rho_in, config).final
    d = device.n_levels
    u = evolve_schrodinger(device, schedule, np.eye(d), config).final
    return u @ rho_in @ u.conj().T


def gate_propagator(device: DeviceSpec, schedule: PulseSchedule, config: SimulationConfig = SimulationConfig()) -> np.ndarray:
    """Rotating-frame propagator of the schedule (coherent evolution only)."""
    return evolve_schrodinger(device, schedule, np.eye(device.n_levels), config).final


def gate_superoperator(device: DeviceSpec, schedule: PulseSchedule, config: SimulationConfig) -> Callable:
    """Return a function mapping input density matrices to rotating-frame outputs.

    Coherent runs propagate the identity once; dissipative runs propagate all
    ``d^2`` matrix units once, so any number of inputs costs one integration.
    """
    d = device.n_levels
    if config.include_decoherence and not device.decoherence.is_zero:
        units = np.zeros((d * d, d, d), dtype=complex)
        for a in range(d):
            for b in range(d):
                units[a * d + b, a, b] = 1.0
        images = evolve_lindblad(device, schedule, units, config).final

        def apply(rho):
            rho = np.asarray(rho, dtype=complex)
            return np.einsum("...ab,abij->...ij", rho, images.reshape(d, d, d, d))

        return apply
    u = gate_propagator(device, schedule, config)
    return lambda rho: u @ rho @ u.conj().T


def apply_analyzers(rho_rot: np.ndarray, analyzers: Sequence[np.ndarray], readout: ReadoutModel) -> np.ndarray:
    vop = readout.operator(rho_rot.shape[-1])
    out = []
    for u in analyzers:
        u = embed(np.asarray(u), rho_rot.shape[-1])
        out.append(np.real(np.trace(u @ rho_rot @ u.conj().T @ vop)))
    return np.array(out)


def simulate_gate_sequence(
    device: DeviceSpec,
    preparation: np.ndarray,
    schedule: PulseSchedule,
    analyzers: Sequence,
    config: SimulationConfig = SimulationConfig(),
    decomposition: Optional[GateDecomposition] = None,
    initial_state: Optional[np.ndarray] = None,
    analyzer_mode: str = "ideal",
    channel: Optional[Callable] = None,
) -> GateResult:
    """Prepare, run the gate pulse, and read out after each analyzer.

    The diagonal factor ``U_d`` is never pulsed: it is applied virtually by
    reading out through the phase-shifted analyzers ``U_d^dag u U_d``.
    ``final`` is the qutrit-subspace state after the complete gate
    ``U_d U_o`` (i.e. ``U_d rho_rot U_d^dag``). ``channel`` may be a
    precomputed :func:`gate_superoperator` to avoid repeated integration.
    """
    d = device.n_levels
    rho = device.thermal_state() if initial_state is None else np.asarray(initial_state, dtype=complex)
    p = _unitary(preparation, d)
    rho = p @ rho @ p.conj().T
    if channel is None:
        channel = gate_superoperator(device, schedule, config)
    rho_rot = channel(rho)
    ud = np.eye(d, dtype=complex)
    if decomposition is not None:
        ud[:3, :3] = decomposition.u_d()
    if analyzer_mode == "ideal":
        mats = [_unitary(u, d) for u in analyzers]
        volts = apply_analyzers(rho_rot, [ud.conj().T @ u @ ud for u in mats], device.readout)
    elif analyzer_mode == "pulse":
        phases = np.zeros(3) if decomposition is None else decomposition.phases
        seqs = []
        for u in analyzers:
            if not hasattr(u, "phase_shifted"):
                raise ValueError("pulse-mode analyzers must be PulseSequence objects")
            seqs.append(u.phase_shifted(phases))
        volts = np.array([_pulsed_readout(device, rho_rot, s, config) for s in seqs])
    else:
        raise ValueError(f"unknown analyzer mode {analyzer_mode!r}")
    final = ud @ rho_rot @ ud.conj().T
    return GateResult(_as_qutrit(final), volts, rho_rot)


def _pulsed_readout(device, rho_rot, sequence, config):
    """Realize an analyzer with a simulated resonant pulse sequence and read out."""
    rotations = [(r.pair, r.axis, r.angle) for r in sequence.rotations]
    if not rotations:
        u = np.eye(device.n_levels, dtype=complex)
    else:
        schedule = analyzer_schedule(device, rotations)
        cfg = SimulationConfig(config.frame, config.integrator_rel_tol, config.integrator_abs_tol, config.max_step, False)
        u = gate_propagator(device, schedule, cfg)
    rho = u @ rho_rot @ u.conj().T
    vop = device.readout.operator(device.n_levels)
    return float(np.real(np.trace(rho @ vop)))


def analyzer_schedule(device: DeviceSpec, rotations, duration: float = 20e-9, rise: float = 4e-9) -> PulseSchedule:
    """Consecutive single-tone pulses realizing a list of ``(pair, axis_phase, angle)`` rotations.

    The tone phase for rotation axis ``(cos a, sin a)`` is ``-a``, since
    ``e^{i phi}|j><k| + h.c. = cos(phi) sx - sin(phi) sy``.
    """
    tones = []
    t0 = 0.0
    for (j, k), axis, angle in rotations:
        if angle == 0:
            continue
        env = PulseEnvelope(rise, duration - 2 * rise, rise, 1.0)
        amp = abs(angle) / (device.drive_couplings[j, k] * env.area(1))
        phase = -axis + (math.pi if angle < 0 else 0.0)
        tones.append(Tone(ToneSpec(amp, device.transition(j, k), phase, (j, k)), env, start=t0))
        t0 += duration
    return PulseSchedule(tuple(tones), t0)


def average_gate_fidelity(
    device: DeviceSpec,
    schedule: PulseSchedule,
    decomposition: GateDecomposition,
    target: np.ndarray,
    preparations: Sequence[np.ndarray],
    config: SimulationConfig = SimulationConfig(),
    initial_state: Optional[np.ndarray] = None,
    channel: Optional[Callable] = None,
):
    """Per-preparation state fidelities of the simulated gate against ``target``.

    Returns ``(fidelities, final_states)``.
    """
    rho0 = device.thermal_state() if initial_state is None else initial_state
    if channel is None:
        channel = gate_superoperator(device, schedule, config)
    fids, finals = [], []
    for p in preparations:
        res = simulate_gate_sequence(device, p, schedule, [], config, decomposition, rho0, channel=channel)
        p3 = _unitary(p, device.n_levels)
        ideal = (p3 @ rho0 @ p3.conj().T)[:3, :3]
        ideal = target @ ideal @ target.conj().T
        rho = res.final
        fids.append(state_fidelity(_renormalized(rho), _renormalized(ideal)))
        finals.append(rho)
    return np.array(fids), finals


def _renormalized(rho):
    tr = np.real(np.trace(rho))
    return rho / tr if tr > 0 else rho


# --------------------------------------------------------------------------
# Rabi experiments
# --------------------------------------------------------------------------


def two_photon_schedule(
    device: DeviceSpec,
    amplitude: float,
    duration: float,
    phase: float = 0.0,
    rise: float = DEFAULT_RISE,
    compensate: bool = True,
    shift_method: str = "perturbative",
) -> PulseSchedule:
    """A single flat-top 0-2 two-photon tone, kept on resonance by chirping."""
    env = PulseEnvelope(rise, duration - 2.0 * rise, rise, amplitude)
    spec = ToneSpec(amplitude, device.transition(0, 2) / 2.0, phase, (0, 2), True)
    schedule = PulseSchedule((Tone(spec, env),), duration)
    if compensate:
        schedule = compensated_trajectories(device, schedule, shift_method)
    return schedule


def fit_rabi_frequency(times, populations, guess: float) -> float:
    """Angular frequency of ``a - b cos(w t + c)`` fitted to ``populations``.

    ``guess`` seeds the fit; the best of a few nearby seeds is kept so a
    rough guess does not lock onto a harmonic.
    """
    times = np.asarray(times, dtype=float)
    populations = np.asarray(populations, dtype=float)

    def model(t, a, b, w, c):
        return a - b * np.cos(w * t + c)

    best = None
    for factor in (0.8, 0.9, 1.0, 1.1, 1.25):
        try:
            popt, _ = curve_fit(model, times, populations, p0=(0.5, 0.5, guess * factor, 0.0), maxfev=20000)
        except RuntimeError:
            continue
        err = float(np.sum((model(times, *popt) - populations) ** 2))
        if best is None or err < best[0]:
            best = (err, abs(popt[2]))
    if best is None:
        raise RuntimeError("Rabi fit did not converge")
    return best[1]


def two_photon_rabi_rate(
    device: DeviceSpec,
    amplitude: float,
    periods: float = 2.0,
    rise: float = DEFAULT_RISE,
    config: SimulationConfig = SimulationConfig(),
    samples: int = 200,
) -> float:
    """Simulated 0-2 oscillation rate (rad/s) under a resonant two-photon tone.

    The rate is fitted to the level-2 population over the flat part of the
    pulse, starting from ``|0>``.
    """
    k2 = two_photon_rabi(device, ToneSpec(1.0, device.transition(0, 2) / 2.0, 0.0, (0, 2), True))
    expected = k2 * amplitude**2
    flat = periods * 2.0 * math.pi / expected
    schedule = two_photon_schedule(device, amplitude, flat + 2 * rise, 0.0, rise)
    times = np.linspace(rise, rise + flat, samples)
    traj = evolve_schrodinger(device, schedule, np.eye(device.n_levels)[:, 0], config, times)
    p2 = np.abs(traj.states[:, 2]) ** 2
    return fit_rabi_frequency(times, p2, expected)


def two_photon_half_transfer_phase(
    device: DeviceSpec,
    amplitude: float,
    phase: float,
    rise: float = DEFAULT_RISE,
    config: SimulationConfig = SimulationConfig(),
) -> float:
    """``arg <0|rho|2>`` (rotating frame) after a two-photon pulse transferring about half of ``|0>`` to ``|2>``."""
    k2 = two_photon_rabi(device, ToneSpec(1.0, device.transition(0, 2) / 2.0, 0.0, (0, 2), True))
    # pi/2 area: k2 * A^2 * (flat + 3/8 * 2 rise) = pi/2
    flat = max(0.5 * math.pi / (k2 * amplitude**2) - 0.75 * rise, 0.0)
    schedule = two_photon_schedule(device, amplitude, flat + 2 * rise, phase, rise)
    traj = evolve_schrodinger(device, schedule, np.eye(device.n_levels)[:, 0], config)
    psi = traj.final
    return float(np.angle(psi[0] * np.conj(psi[2])))


def write_trajectory_csv(path, times, states, header_lines: Sequence[str] = ()):
    """CSV with populations and the three qutrit coherences of each sampled state."""
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(TRAJECTORY_COLUMNS)
        for t, s in zip(times, states):
            rho = s if s.ndim == 2 else np.outer(s, s.conj())
            w.writerow(
                [f"{t:.12e}"]
                + [f"{np.real(rho[j, j]):.12e}" for j in range(3)]
                + [f"{x:.12e}" for j, k in ((0, 1), (0, 2), (1, 2)) for x in (rho[j, k].real, rho[j, k].imag)]
            )


TRAJECTORY_COLUMNS = ["time_s", "P0", "P1", "P2", "Re_rho01", "Im_rho01", "Re_rho02", "Im_rho02", "Re_rho12", "Im_rho12"]
