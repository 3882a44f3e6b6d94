"""Command-line front end: ``qutritgate {decompose,shifts,simulate,tomo}``.

Exit codes: 0 success, 2 input error, 3 model-validity error, 4 numerical
failure. Every report starts with ``#``-prefixed manifest lines (command,
config hash, seed, version, timestamp); CSV files carry the same header.
Sweeps use ``QUTRITGATE_WORKERS`` worker processes (default 1).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from datetime import datetime, timezone
from importlib import metadata
from pathlib import Path

import numpy as np

from . import decomposer, drive, dynamics, profiles, tomography
from .core import DecoherenceRates, state_fidelity, walsh_hadamard
from .pulses import ToneSpec

log = logging.getLogger("qutritgate")

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_MODEL = 3
EXIT_NUMERIC = 4
WORKERS_ENV = "QUTRITGATE_WORKERS"


class InputError(Exception):
    """Bad user input; maps to exit code 2."""


def _version() -> str:
    try:
        return metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "0.0.0"


def manifest_lines(args: argparse.Namespace, timestamp: bool = True):
    config = {k: v for k, v in sorted(vars(args).items()) if k != "func"}
    blob = json.dumps(config, sort_keys=True, default=str)
    lines = [
        f"command: {args.command}",
        f"config_hash: {hashlib.sha256(blob.encode()).hexdigest()[:16]}",
        f"seed: {getattr(args, 'seed', None)}",
        f"version: {_version()}",
    ]
    if timestamp:
        lines.append(f"timestamp: {datetime.now(timezone.utc).isoformat(timespec='seconds')}")
    return lines


def _emit(args, body: str):
    out = "\n".join(f"# {line}" for line in manifest_lines(args)) + "\n" + body.rstrip("\n") + "\n"
    if getattr(args, "out", None):
        Path(args.out).write_text(out)
    sys.stdout.write(out)


def _workers() -> int:
    try:
        return max(1, int(os.environ.get(WORKERS_ENV, "1")))
    except ValueError:
        raise InputError(f"{WORKERS_ENV} must be an integer")


def _map(fn, items):
    items = list(items)
    n = _workers()
    if n == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))


def parse_range(text: str) -> np.ndarray:
    """``start:stop:count`` (inclusive) or a single number."""
    parts = text.split(":")
    try:
        if len(parts) == 1:
            return np.array([float(parts[0])])
        if len(parts) == 3:
            return np.linspace(float(parts[0]), float(parts[1]), int(parts[2]))
    except ValueError:
        pass
    raise InputError(f"bad range {text!r}; expected start:stop:count")


def read_matrix(path) -> np.ndarray:
    """Square complex matrix from whitespace-separated ``re im`` pairs, row-major."""
    try:
        vals = np.array(Path(path).read_text().split(), dtype=float)
    except (OSError, ValueError) as exc:
        raise InputError(f"cannot read matrix file {path}: {exc}")
    n = int(round(np.sqrt(vals.size / 2)))
    if vals.size == 0 or 2 * n * n != vals.size:
        raise InputError(f"matrix file {path} has {vals.size} numbers; expected 2*n^2")
    return (vals[0::2] + 1j * vals[1::2]).reshape(n, n)


def _target(name: str) -> np.ndarray:
    if name in ("wh", "walsh-hadamard"):
        return walsh_hadamard()
    if name == "identity":
        return np.eye(3, dtype=complex)
    return read_matrix(name)


def _load_device(args, decoherence=None):
    try:
        dev = profiles.load_profile(args.profile)
    except OSError as exc:
        raise InputError(f"cannot read profile {args.profile}: {exc}")
    if decoherence is False:
        dev = dev.replace(decoherence=DecoherenceRates.none())
    return dev


def _fmt_matrix(m: np.ndarray) -> str:
    rows = []
    for part, name in ((m.real, "real"), (m.imag, "imag")):
        rows.append(f"{name}:")
        rows.extend("  " + " ".join(f"{x:+.6f}" for x in r) for r in part)
    return "\n".join(rows)


# --------------------------------------------------------------------------
# decompose
# --------------------------------------------------------------------------


def cmd_decompose(args) -> int:
    target = _target(args.target)
    cfg = decomposer.DecompositionSearchConfig(grid_points=args.grid)
    found = decomposer.search_decompositions(target, cfg)
    if not found:
        raise InputError("no decomposition found")
    chosen = decomposer.select_decomposition(found)
    if args.grid < decomposer.DecompositionSearchConfig().grid_points:
        log.warning("phase grid of %d points is coarse; decompositions may be missed", args.grid)
    lines = ["index,m01,m12,m02,phi0,phi1,phi2,residual,selected"]
    for i, d in enumerate(found):
        lines.append(
            f"{i},{d.m01:.6f},{d.m12:.6f},{d.m02:.6f},{d.phi0:.6f},{d.phi1:.6f},{d.phi2:.6f},{d.residual:.3e},"
            f"{int(d is chosen)}"
        )
    _emit(args, "\n".join(lines))
    return EXIT_OK


# --------------------------------------------------------------------------
# shifts
# --------------------------------------------------------------------------


# Default 0-2 detuning (2 w_d - w02) for shift reports: exactly on the
# two-photon resonance |0, n+1> and |2, n-1> are degenerate and the dressed
# levels cannot be told apart.
DEFAULT_TWO_PHOTON_DETUNING_MHZ = -400.0


def _tone_from_args(dev, args) -> ToneSpec:
    j, k = int(args.transition[0]), int(args.transition[1])
    two_photon = (j, k) == (0, 2)
    div = 2.0 if two_photon else 1.0
    if args.carrier_ghz is not None:
        carrier = args.carrier_ghz * profiles.GHZ
    else:
        det = args.detuning_mhz
        if det is None:
            det = DEFAULT_TWO_PHOTON_DETUNING_MHZ if two_photon else 0.0
        carrier = (dev.transition(j, k) + det * profiles.MHZ) / div
    if carrier <= 0:
        raise InputError("carrier frequency must be positive")
    return ToneSpec(args.amplitude, carrier, 0.0, (j, k), two_photon)


def cmd_shifts(args) -> int:
    dev = _load_device(args)
    tone = _tone_from_args(dev, args)
    if args.sweep:
        d01 = parse_range(args.d01_mhz) * profiles.MHZ
        d02 = parse_range(args.d02_mhz) * profiles.MHZ
        grid = drive.rabi_map(dev, tone, args.probe_amplitude, d01, d02)
        lines = ["delta01_mhz,delta02_mhz,rabi01_mhz"]
        for r, b in enumerate(d02):
            for c, a in enumerate(d01):
                lines.append(f"{a / profiles.MHZ:.6f},{b / profiles.MHZ:.6f},{grid[r, c] / profiles.MHZ:.6f}")
        _emit(args, "\n".join(lines))
        return EXIT_OK
    on_resonance = not tone.is_two_photon and tone.carrier_freq == dev.transition(*tone.target_transition)
    resonant = (tone.target_transition,) if on_resonance else ()
    pert = drive.perturbative_shifts(dev, tone, resonant)
    num = drive.numeric_shifts(dev, tone) if tone.amplitude > 0 and tone.is_two_photon else None
    lines = ["transition,perturbative_mhz,numeric_mhz,relative_deviation"]
    for (j, k), p in pert.total_transition_shifts.items():
        if num is None:
            lines.append(f"{j}{k},{p / profiles.MHZ:.6f},,")
            continue
        n = num.transition_shift(j, k)
        dev_rel = abs(p - n) / abs(n) if n != 0 else 0.0
        lines.append(f"{j}{k},{p / profiles.MHZ:.6f},{n / profiles.MHZ:.6f},{dev_rel:.4e}")
    if tone.is_two_photon:
        lines.append(f"# two_photon_rabi_mhz: {pert.two_photon_rabi / profiles.MHZ:.6f}")
    for flag in pert.flags:
        lines.append(f"# warning: {flag}")
    _emit(args, "\n".join(lines))
    return EXIT_OK


# --------------------------------------------------------------------------
# simulate
# --------------------------------------------------------------------------


def _gate_setup(args):
    dev = _load_device(args, decoherence=None if args.decoherence else False)
    target = _target(args.gate)
    found = decomposer.search_decompositions(target)
    if not found:
        raise InputError("gate has no decomposition")
    d = decomposer.select_decomposition(found)
    duration = args.duration_ns * 1e-9
    rise = min(args.rise_ns * 1e-9, duration / 2.0)
    cfg = dynamics.SimulationConfig(frame=args.frame, include_decoherence=args.decoherence)
    return dev, target, d, duration, rise, cfg


def _phase_point(payload):
    args, offset = payload
    dev, target, d, duration, rise, cfg = _gate_setup(args)
    sched = dynamics.gate_schedule(dev, d, duration, rise, phase_offset_02=offset)
    fids, _ = dynamics.average_gate_fidelity(dev, sched, d, target, tomography.TABLE1_PREPARATIONS, cfg)
    return float(np.mean(fids))


def cmd_simulate(args) -> int:
    dev, target, d, duration, rise, cfg = _gate_setup(args)
    if args.sweep_phase02:
        offsets = parse_range(args.sweep_phase02)
        fids = _map(_phase_point, [(args, float(x)) for x in offsets])
        lines = ["phase_offset_rad,average_fidelity"] + [f"{x:.6f},{f:.8f}" for x, f in zip(offsets, fids)]
        _emit(args, "\n".join(lines))
        return EXIT_OK
    sched = dynamics.gate_schedule(dev, d, duration, rise)
    preps = tomography.TABLE1_PREPARATIONS
    fids, finals = dynamics.average_gate_fidelity(dev, sched, d, target, preps, cfg)
    lines = ["prep_index,preparation,fidelity"]
    lines += [f"{i},{p.label},{f:.8f}" for i, (p, f) in enumerate(zip(preps, fids))]
    lines.append(f"# average_fidelity: {np.mean(fids):.8f} +- {np.std(fids):.8f}")
    if args.show_states:
        for i, rho in enumerate(finals):
            lines.append(f"# final state {i}")
            lines += ["# " + s for s in _fmt_matrix(rho).splitlines()]
    _emit(args, "\n".join(lines))
    if args.trajectory_dir:
        out = Path(args.trajectory_dir)
        out.mkdir(parents=True, exist_ok=True)
        times = np.linspace(0.0, sched.total_duration, args.samples)
        header = manifest_lines(args)
        for i, p in enumerate(preps):
            u = p.unitary(dev.n_levels)
            rho0 = u @ dev.thermal_state() @ u.conj().T
            traj = dynamics.evolve_lindblad(dev, sched, rho0, cfg, times)
            dynamics.write_trajectory_csv(out / f"trajectory_prep{i}.csv", traj.times, traj.states, header)
    return EXIT_OK


# --------------------------------------------------------------------------
# tomo
# --------------------------------------------------------------------------


def _self_generate(args, dev, target, d):
    """Records ``[analyzer, prep]`` from the ideal gate or a simulated one."""
    analyzers = tomography.AnalyzerSet.standard()
    preps = tomography.TABLE1_PREPARATIONS
    rng = np.random.default_rng(args.seed)
    if args.source == "simulated":
        cfg = dynamics.SimulationConfig(include_decoherence=args.decoherence)
        sched = dynamics.gate_schedule(dev, d)
        channel = dynamics.gate_superoperator(dev, sched, cfg)
        cols = [dynamics.simulate_gate_sequence(dev, p, sched, analyzers.sequences, cfg, d, channel=channel).voltages for p in preps]
        records = np.array(cols).T
    else:
        rho0 = dev.thermal_state()[:3, :3]
        records = tomography.process_records(lambda r: target @ r @ target.conj().T, preps, analyzers, dev.readout, rho0)
    if args.noise_sigma > 0:
        records = records + rng.normal(0.0, args.noise_sigma, records.shape)
    return records


def cmd_tomo(args) -> int:
    dev = _load_device(args, decoherence=None if args.decoherence else False)
    target = _target(args.target)
    d = decomposer.select_decomposition(decomposer.search_decompositions(target))
    analyzers = tomography.AnalyzerSet.standard()
    preps = tomography.TABLE1_PREPARATIONS
    if args.records:
        try:
            records = tomography.read_records(args.records)
        except OSError as exc:
            raise InputError(f"cannot read records {args.records}: {exc}")
    elif args.self_generate:
        records = _self_generate(args, dev, target, d)
        if args.write_records:
            tomography.write_records(args.write_records, records, manifest_lines(args))
    else:
        raise InputError("give --records FILE or --self-generate")

    rho0 = dev.thermal_state()[:3, :3]
    if args.mode == "state":
        j = args.prep_index
        p = preps[j].unitary()
        ideal = target @ p @ rho0 @ p.conj().T @ target.conj().T
        est = tomography.mle_state(records[:, j], analyzers, dev.readout, seed=args.seed)
        fid = float(np.real(state_fidelity(est.rho, ideal)))
        body = [
            f"mode: state (preparation {j}: {preps[j].label})",
            f"fidelity: {fid:.8f}",
            f"objective: {est.objective:.6e}",
            f"iterations: {est.iterations}",
            "reconstructed:",
            _fmt_matrix(est.rho),
            "difference (reconstructed - ideal):",
            _fmt_matrix(est.rho - ideal),
        ]
    else:
        chi = tomography.process_mle(records, preps, analyzers, dev.readout, nominal_state=rho0)
        ideal = tomography.ideal_chi(target)
        fid = tomography.process_fidelity(chi, ideal)
        body = [
            "mode: process",
            f"process_fidelity: {fid:.8f}",
            f"objective: {chi.objective:.6e}",
            "chi:",
            _fmt_matrix(chi.chi),
            "difference (chi - ideal):",
            _fmt_matrix(chi.chi - ideal.chi),
        ]
    _emit(args, "\n".join(body))
    return EXIT_OK


# --------------------------------------------------------------------------
# entry point
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="qutritgate", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("decompose", help="find diagonal/off-diagonal generator decompositions of a gate")
    p.add_argument("--target", default="wh", help="wh, identity, or a matrix file")
    p.add_argument("--grid", type=int, default=decomposer.DecompositionSearchConfig().grid_points)
    p.add_argument("--out")
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("shifts", help="drive-induced level shifts or the 0-1 Rabi map")
    p.add_argument("--profile", default="paper")
    p.add_argument("--transition", choices=["01", "12", "02"], default="02")
    p.add_argument("--amplitude", type=float, default=1.5)
    p.add_argument("--carrier-ghz", type=float, default=None)
    p.add_argument(
        "--detuning-mhz", type=float, default=None, help="carrier detuning (twice the carrier for 0-2) from the bare transition"
    )
    p.add_argument("--sweep", action="store_true", help="emit the 0-1 Rabi frequency grid")
    p.add_argument("--d01-mhz", default="-30:30:61")
    p.add_argument("--d02-mhz", default="-30:30:61")
    p.add_argument("--probe-amplitude", type=float, default=0.01)
    p.add_argument("--out")
    p.set_defaults(func=cmd_shifts)

    p = sub.add_parser("simulate", help="simulate the shift-compensated gate")
    p.add_argument("--profile", default="paper")
    p.add_argument("--gate", default="wh")
    p.add_argument("--duration-ns", type=float, default=35.0)
    p.add_argument("--rise-ns", type=float, default=4.0)
    p.add_argument("--frame", choices=["lab", "rotating"], default="lab")
    p.add_argument("--decoherence", dest="decoherence", action="store_true", default=True)
    p.add_argument("--no-decoherence", dest="decoherence", action="store_false")
    p.add_argument("--sweep-phase02", help="start:stop:count offsets (rad) of the 0-2 tone phase")
    p.add_argument("--show-states", action="store_true")
    p.add_argument("--trajectory-dir")
    p.add_argument("--samples", type=int, default=201)
    p.add_argument("--out")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("tomo", help="state or process reconstruction from voltage records")
    p.add_argument("--mode", choices=["state", "process"], default="state")
    p.add_argument("--records")
    p.add_argument("--self-generate", action="store_true")
    p.add_argument("--source", choices=["ideal", "simulated"], default="ideal")
    p.add_argument("--write-records")
    p.add_argument("--profile", default="paper")
    p.add_argument("--target", default="wh")
    p.add_argument("--prep-index", type=int, default=0, choices=range(9))
    p.add_argument("--noise-sigma", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--decoherence", dest="decoherence", action="store_true", default=True)
    p.add_argument("--no-decoherence", dest="decoherence", action="store_false")
    p.add_argument("--out")
    p.set_defaults(func=cmd_tomo)
    return parser


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (InputError, profiles.ProfileError, tomography.IncompleteRecords) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (drive.PerturbationError, drive.TrackingAmbiguity, decomposer.GeneratorRejected) as exc:
        print(f"model error: {exc}", file=sys.stderr)
        return EXIT_MODEL
    except (dynamics.IntegrationError, tomography.ConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
