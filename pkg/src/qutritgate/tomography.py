"""Qutrit readout, state and process tomography, and readout calibration.

Rotations follow ``R_n(theta) = exp(-i theta/2 (n_x sx + n_y sy))`` on a
two-level subspace. Preparation pulses are written as operator products (for example
``R^12_x(pi) R^01_x(pi)``), so the rightmost rotation is applied first.
Analyzer pulses are written in the order they are played: read as operator
products, the listed analyzers never map the 1-2 coherence into the readout
contrast and the induced measurement operators only reach rank 7.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import least_squares, minimize

from .core import embed, expm_skew, project_psd, state_fidelity

PAIR_01 = (0, 1)
PAIR_12 = (1, 2)
AXES = {"x": 0.0, "y": math.pi / 2}


# --------------------------------------------------------------------------
# rotations and pulse sets
# --------------------------------------------------------------------------


def _pair(transition) -> Tuple[int, int]:
    if isinstance(transition, str):
        transition = transition.strip()
        if transition not in ("01", "12", "02"):
            raise ValueError(f"unknown transition {transition!r}")
        return int(transition[0]), int(transition[1])
    j, k = transition
    return (min(j, k), max(j, k))


def rotation(transition, axis, angle: float, dim: int = 3) -> np.ndarray:
    """Two-level rotation embedded in a ``dim``-level space.

    ``axis`` is ``"x"``, ``"y"`` or the azimuthal angle of the axis in the
    xy-plane.
    """
    j, k = _pair(transition)
    a = AXES[axis] if isinstance(axis, str) else float(axis)
    gen = np.zeros((dim, dim), dtype=complex)
    # n_x sx + n_y sy = e^{-ia}|j><k| + e^{ia}|k><j|
    gen[j, k] = np.exp(-1j * a)
    gen[k, j] = np.exp(1j * a)
    return expm_skew(gen, angle / 2.0)


@dataclass(frozen=True)
class Rotation:
    pair: Tuple[int, int]
    axis: float
    angle: float

    def unitary(self, dim: int = 3) -> np.ndarray:
        return rotation(self.pair, self.axis, self.angle, dim)


@dataclass(frozen=True)
class PulseSequence:
    """Rotations in the order they are applied."""

    rotations: Tuple[Rotation, ...] = ()
    label: str = ""

    def unitary(self, dim: int = 3) -> np.ndarray:
        u = np.eye(dim, dtype=complex)
        for r in self.rotations:
            u = r.unitary(dim) @ u
        return u

    def phase_shifted(self, phases) -> "PulseSequence":
        """The sequence realizing ``U_d^dag u U_d`` for ``U_d = diag(exp(-i phases))``.

        Conjugation multiplies ``|j><k|`` by ``exp(i (phi_j - phi_k))``, which
        turns the rotation axis of pair j-k by ``-(phi_j - phi_k)``.
        """
        phases = np.asarray(phases, dtype=float)
        rots = tuple(
            Rotation(r.pair, r.axis - (phases[r.pair[0]] - phases[r.pair[1]]), r.angle) for r in self.rotations
        )
        return PulseSequence(rots, self.label)


def parse_pulse(text: str, operator_order: bool = True) -> PulseSequence:
    """Parse a pulse list such as ``"Rx12(pi) Rx01(pi/2)"`` or ``"I"``.

    With ``operator_order`` the text is an operator product and the
    rightmost rotation is applied first; otherwise rotations are applied
    left to right.
    """
    text = text.strip()
    if text in ("", "I"):
        return PulseSequence((), text)
    rots = []
    for tok in text.split():
        axis = tok[1]
        pair = _pair(tok[2:4])
        arg = tok[tok.index("(") + 1 : tok.rindex(")")]
        angle = float(eval(arg, {"__builtins__": {}}, {"pi": math.pi}))
        rots.append(Rotation(pair, AXES[axis], angle))
    if operator_order:
        rots.reverse()
    return PulseSequence(tuple(rots), text)


TABLE1_PREPARATIONS = tuple(
    parse_pulse(s)
    for s in (
        "I",
        "Rx01(pi)",
        "Rx12(pi) Rx01(pi)",
        "Rx01(pi/2)",
        "Ry01(pi/2)",
        "Rx12(pi/2) Rx01(pi)",
        "Ry12(pi/2) Rx01(pi)",
        "Rx12(pi) Rx01(pi/2)",
        "Rx12(pi) Ry01(pi/2)",
    )
)

TABLE1_ANALYZERS = tuple(
    parse_pulse(s, operator_order=False)
    for s in (
        "Rx01(pi)",
        "Rx01(pi/2)",
        "Ry01(pi/2)",
        "I",
        "Rx12(pi/2) Rx01(pi)",
        "Ry12(pi/2) Rx01(pi)",
        "Rx01(pi) Rx12(pi/2) Rx01(pi)",
        "Rx01(pi) Ry12(pi/2) Rx01(pi)",
        "Rx01(pi) Rx12(pi) Rx01(pi)",
    )
)


@dataclass(frozen=True)
class AnalyzerSet:
    sequences: Tuple[PulseSequence, ...]

    @classmethod
    def standard(cls) -> "AnalyzerSet":
        return cls(TABLE1_ANALYZERS)

    @property
    def unitaries(self):
        return [s.unitary() for s in self.sequences]

    def measurement_operators(self, readout) -> np.ndarray:
        """``M_i = u_i^dag V_h u_i`` for each analyzer."""
        vop = readout.operator(3)
        return np.array([u.conj().T @ vop @ u for u in self.unitaries])

    def gram_rank(self, readout, tol: float = 1e-9) -> int:
        ms = self.measurement_operators(readout)
        vecs = np.array([m.ravel() for m in ms])
        return int(np.linalg.matrix_rank(vecs, tol))

    def __len__(self):
        return len(self.sequences)


def phase_shift_analyzers(analyzers: AnalyzerSet, decomposition) -> AnalyzerSet:
    """Absorb the diagonal gate factor into the analyzer pulses: ``u -> U_d^dag u U_d``."""
    phases = decomposition.phases if hasattr(decomposition, "phases") else decomposition
    return AnalyzerSet(tuple(s.phase_shifted(phases) for s in analyzers.sequences))


# --------------------------------------------------------------------------
# readout
# --------------------------------------------------------------------------


def simulate_homodyne(rho, analyzer, readout, shots_noise: bool = False, seed=None) -> float:
    """Averaged homodyne voltage after applying ``analyzer`` to ``rho``."""
    rho = np.asarray(rho, dtype=complex)
    u = analyzer.unitary(rho.shape[0]) if isinstance(analyzer, PulseSequence) else embed(np.asarray(analyzer), rho.shape[0])
    v = float(np.real(np.trace(u @ rho @ u.conj().T @ readout.operator(rho.shape[0]))))
    if shots_noise and readout.noise_sigma > 0:
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        v += float(rng.normal(0.0, readout.noise_sigma))
    return v


def state_voltages(rho, analyzers: AnalyzerSet, readout, shots_noise: bool = False, seed=None) -> np.ndarray:
    rng = np.random.default_rng(seed)
    return np.array([simulate_homodyne(rho, s, readout, shots_noise, rng) for s in analyzers.sequences])


# --------------------------------------------------------------------------
# state tomography
# --------------------------------------------------------------------------


def hermitian_basis(dim: int) -> np.ndarray:
    """Real-coefficient basis of ``dim x dim`` Hermitian matrices (``dim**2`` elements)."""
    out = []
    for j in range(dim):
        e = np.zeros((dim, dim), dtype=complex)
        e[j, j] = 1.0
        out.append(e)
    for j in range(dim):
        for k in range(j + 1, dim):
            e = np.zeros((dim, dim), dtype=complex)
            e[j, k] = e[k, j] = 1.0
            out.append(e)
            e = np.zeros((dim, dim), dtype=complex)
            e[j, k] = -1j
            e[k, j] = 1j
            out.append(e)
    return np.array(out)


def cholesky_to_density(t) -> np.ndarray:
    """``T^dag T / Tr(T^dag T)`` for the lower-triangular ``T`` built from ``t1..t9``.

    ``T = [[t1, 0, 0], [t4 + i t5, t2, 0], [t8 + i t9, t6 + i t7, t3]]``.
    """
    tm = _t_matrix(np.asarray(t, dtype=float), 3)
    rho = tm.conj().T @ tm
    return rho / np.real(np.trace(rho))


def _t_matrix(t: np.ndarray, dim: int) -> np.ndarray:
    tm = np.zeros((dim, dim), dtype=complex)
    tm[np.diag_indices(dim)] = t[:dim]
    if dim == 3:
        tm[1, 0] = t[3] + 1j * t[4]
        tm[2, 1] = t[5] + 1j * t[6]
        tm[2, 0] = t[7] + 1j * t[8]
        return tm
    rows, cols = np.tril_indices(dim, -1)
    m = rows.size
    tm[rows, cols] = t[dim : dim + m] + 1j * t[dim + m : dim + 2 * m]
    return tm


def _t_params(tm: np.ndarray) -> np.ndarray:
    dim = tm.shape[0]
    diag = np.real(np.diag(tm))
    if dim == 3:
        return np.array(
            [diag[0], diag[1], diag[2], tm[1, 0].real, tm[1, 0].imag, tm[2, 1].real, tm[2, 1].imag, tm[2, 0].real, tm[2, 0].imag]
        )
    rows, cols = np.tril_indices(dim, -1)
    low = tm[rows, cols]
    return np.concatenate([diag, low.real, low.imag])


def density_to_cholesky(rho: np.ndarray, eps: float = 1e-9) -> np.ndarray:
    """Parameters of a lower-triangular ``T`` with ``T^dag T = rho`` (after a small regularization)."""
    dim = rho.shape[0]
    r = project_psd(rho) + eps * np.eye(dim)
    j = np.eye(dim)[::-1]
    low = np.linalg.cholesky(j @ r @ j)
    tm = j @ low.conj().T @ j
    return _t_params(tm)


@dataclass
class StateEstimate:
    rho: np.ndarray
    objective: float
    iterations: int
    restarts: int = 1

    def report(self, target: Optional[np.ndarray] = None) -> str:
        lines = [f"objective: {self.objective:.6e}", f"iterations: {self.iterations}", f"restarts: {self.restarts}"]
        if target is not None:
            lines.insert(0, f"fidelity: {state_fidelity(self.rho, target):.6f}")
        return "\n".join(lines)


class ConvergenceError(RuntimeError):
    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


def linear_inversion(voltages, operators: np.ndarray) -> np.ndarray:
    """Least-squares Hermitian matrix ``rho`` with ``Tr(rho M_i) = V_i``."""
    dim = operators.shape[-1]
    basis = hermitian_basis(dim)
    a = np.real(np.einsum("bij,kji->kb", basis, operators))
    coef, *_ = np.linalg.lstsq(a, np.asarray(voltages, dtype=float), rcond=None)
    return np.einsum("b,bij->ij", coef, basis)


def mle_state(
    voltages,
    analyzers: AnalyzerSet,
    readout,
    norm: str = "l1",
    restarts: int = 20,
    seed: int = 0,
    tol: float = 1e-10,
    patience: int = 3,
) -> StateEstimate:
    """Maximum-likelihood qutrit state from nine averaged voltages.

    Minimizes ``sum_k |V_k - Tr(rho u_k^dag V_h u_k)|`` (``norm="l1"``) or
    its squared-residual counterpart (``norm="l2"``) over the Cholesky
    parameterization, which keeps ``rho`` physical. The first start is the
    projected linear-inversion estimate polished by a smooth least-squares
    fit; Nelder-Mead then minimizes the chosen norm. Restarts from perturbed
    starts stop once the objective is below ``tol`` times the voltage span,
    after ``patience`` restarts without improvement, or when the budget is
    spent. Ties are broken by the parameter vector so results are
    deterministic.
    """
    voltages = np.asarray(voltages, dtype=float)
    ms = analyzers.measurement_operators(readout)
    if voltages.shape != (len(ms),):
        raise ValueError(f"expected {len(ms)} voltages, got {voltages.shape}")
    if analyzers.gram_rank(readout) < 9:
        raise ValueError("analyzer set is not informationally complete")
    if norm not in ("l1", "l2"):
        raise ValueError(f"unknown norm {norm!r}")
    mt = np.array([m.T.ravel() for m in ms])

    def residuals(t):
        return voltages - np.real(mt @ cholesky_to_density(t).ravel())

    def objective(t):
        r = residuals(t)
        return float(np.sum(np.abs(r))) if norm == "l1" else float(np.sum(r**2))

    x0 = density_to_cholesky(linear_inversion(voltages, ms))
    x0 = least_squares(residuals, x0, xtol=1e-15, ftol=1e-15, gtol=1e-15).x
    rng = np.random.default_rng(seed)
    stop = tol * readout.span
    nm_opts = {"xatol": 1e-11, "fatol": 1e-15, "maxiter": 20000, "maxfev": 40000, "adaptive": True}
    best = None
    total_iter = 0
    used = 0
    stale = 0
    for attempt in range(restarts):
        start = x0 if attempt == 0 else x0 + rng.normal(0.0, 0.05 * (1 + attempt / restarts), x0.size)
        res = minimize(objective, start, method="Nelder-Mead", options=nm_opts)
        total_iter += res.nit
        used += 1
        cand = (res.fun, tuple(np.round(res.x, 12)), res.x)
        if best is None or cand[0] < best[0] - 1e-12 * readout.span:
            best, stale = cand, 0
        else:
            if cand[:2] < best[:2]:
                best = cand
            stale += 1
        if best[0] <= stop or stale >= patience:
            break
    if best is None or not np.isfinite(best[0]):
        raise ConvergenceError("state MLE did not converge", best)
    return StateEstimate(cholesky_to_density(best[2]), best[0], total_iter, used)


# --------------------------------------------------------------------------
# process tomography
# --------------------------------------------------------------------------


def _gell_mann() -> np.ndarray:
    mats = []
    for j in range(3):
        for k in range(j + 1, 3):
            m = np.zeros((3, 3), dtype=complex)
            m[j, k] = m[k, j] = 1.0
            mats.append(m)
            m = np.zeros((3, 3), dtype=complex)
            m[j, k] = -1j
            m[k, j] = 1j
            mats.append(m)
    mats.append(np.diag([1.0, -1.0, 0.0]).astype(complex))
    mats.append(np.diag([1.0, 1.0, -2.0]).astype(complex) / math.sqrt(3))
    return np.array(mats)


@dataclass(frozen=True)
class OperatorBasis:
    """Nine 3x3 matrices with ``Tr(l_m l_n^dag) = 3 delta_mn``."""

    matrices: np.ndarray

    def coefficients(self, op) -> np.ndarray:
        """``e_m`` with ``op = sum_m e_m l_m``."""
        op = np.asarray(op, dtype=complex)
        return np.einsum("mij,ij->m", self.matrices.conj(), op) / 3.0

    def gram(self) -> np.ndarray:
        return np.einsum("mij,nij->mn", self.matrices, self.matrices.conj())

    def __eq__(self, other):
        return isinstance(other, OperatorBasis) and np.allclose(self.matrices, other.matrices)

    def __hash__(self):
        return hash(np.round(self.matrices, 12).tobytes())


def build_operator_basis() -> OperatorBasis:
    """Identity plus the eight Gell-Mann matrices, scaled to ``Tr(l l^dag) = 3``."""
    mats = np.concatenate([np.eye(3, dtype=complex)[None], _gell_mann() * math.sqrt(1.5)])
    return OperatorBasis(mats)


@dataclass
class ProcessMatrix:
    chi: np.ndarray
    basis: OperatorBasis
    objective: float = 0.0

    def apply(self, rho) -> np.ndarray:
        lam = self.basis.matrices
        return np.einsum("mn,mij,jk,nlk->il", self.chi, lam, rho, lam.conj())


def ideal_chi(u, basis: Optional[OperatorBasis] = None) -> ProcessMatrix:
    """Rank-one process matrix ``chi_mn = e_m e_n^*`` of a unitary."""
    basis = basis or build_operator_basis()
    e = basis.coefficients(u)
    return ProcessMatrix(np.outer(e, e.conj()), basis)


def process_fidelity(chi: ProcessMatrix, chi_ideal: ProcessMatrix) -> float:
    """``Tr sqrt(sqrt(chi_ideal) chi sqrt(chi_ideal))`` (not squared)."""
    if chi.basis != chi_ideal.basis:
        raise ValueError("process matrices are expressed in different bases")
    return state_fidelity(chi.chi, chi_ideal.chi, squared=False)


class RankDeficientDesign(ValueError):
    """The preparations and analyzers do not determine the process matrix."""


def process_design(preparations, analyzers: AnalyzerSet, readout, basis: OperatorBasis, nominal_state) -> np.ndarray:
    """Complex tensor ``A[i, j, m, n] = Tr(M_i l_m p_j rho_n p_j^dag l_n^dag)``."""
    ms = analyzers.measurement_operators(readout)
    lam = basis.matrices
    lam_dag = lam.conj().transpose(0, 2, 1)
    ps = [p.unitary() if isinstance(p, PulseSequence) else np.asarray(p, dtype=complex) for p in preparations]
    rhos = np.array([p @ nominal_state @ p.conj().T for p in ps])
    return np.einsum("iea,mab,jbc,nce->ijmn", ms, lam, rhos, lam_dag, optimize=True)


def predicted_records(chi: np.ndarray, design: np.ndarray) -> np.ndarray:
    return np.real(np.einsum("ijmn,mn->ij", design, chi))


def process_records(channel, preparations, analyzers: AnalyzerSet, readout, nominal_state) -> np.ndarray:
    """Noiseless records ``m_ij = Tr(M_i channel(p_j rho_n p_j^dag))``."""
    ms = analyzers.measurement_operators(readout)
    out = np.zeros((len(ms), len(preparations)))
    for j, p in enumerate(preparations):
        u = p.unitary() if isinstance(p, PulseSequence) else np.asarray(p, dtype=complex)
        rho_out = channel(u @ nominal_state @ u.conj().T)
        out[:, j] = np.real(np.einsum("iab,ba->i", ms, rho_out))
    return out


def process_mle(
    records,
    preparations=TABLE1_PREPARATIONS,
    analyzers: Optional[AnalyzerSet] = None,
    readout=None,
    basis: Optional[OperatorBasis] = None,
    nominal_state=None,
) -> ProcessMatrix:
    """Cholesky-parameterized least-squares fit of the process matrix.

    Minimizes ``sum_ij (m_ij - m_ij^exp)^2`` with
    ``m_ij = sum_mn chi_mn Tr(M_i l_m p_j rho_n p_j^dag l_n^dag)`` and
    ``chi = T^dag T / Tr(T^dag T)``.
    """
    from .core import ReadoutModel, thermal_state

    analyzers = analyzers or AnalyzerSet.standard()
    readout = readout or ReadoutModel()
    basis = basis or build_operator_basis()
    nominal_state = thermal_state(0.74) if nominal_state is None else np.asarray(nominal_state, dtype=complex)
    records = np.asarray(records, dtype=float)
    design = process_design(preparations, analyzers, readout, basis, nominal_state)
    if records.shape != design.shape[:2]:
        raise ValueError(f"records must be {design.shape[:2]}, got {records.shape}")

    herm = hermitian_basis(9)
    a = np.real(np.einsum("ijmn,bmn->ijb", design, herm)).reshape(-1, 81)
    rank = np.linalg.matrix_rank(a, tol=1e-9 * np.abs(a).max())
    if rank < 81:
        raise RankDeficientDesign(
            f"design has rank {rank} < 81: the prepared states p_j rho_n p_j^dag do not span the operator space"
        )
    coef, *_ = np.linalg.lstsq(a, records.ravel(), rcond=None)
    chi0 = np.einsum("b,bij->ij", coef, herm)
    x0 = density_to_cholesky(chi0, eps=1e-7)
    flat_design = design.reshape(records.size, 81)

    def residuals(t):
        tm = _t_matrix(t, 9)
        chi = tm.conj().T @ tm
        chi = chi / np.real(np.trace(chi))
        return np.real(flat_design @ chi.ravel()) - records.ravel()

    res = least_squares(residuals, x0, method="trf", xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=200)
    tm = _t_matrix(res.x, 9)
    chi = tm.conj().T @ tm
    chi = chi / np.real(np.trace(chi))
    return ProcessMatrix(chi, basis, float(np.sum(res.fun**2)))


# --------------------------------------------------------------------------
# calibration
# --------------------------------------------------------------------------


def thermal_populations(rabi_amp_swap12: float, rabi_amp_swap02: float) -> Tuple[float, float]:
    """Thermal populations from the 0-1 Rabi amplitudes after a 1-2 swap and after a 0-2 swap.

    The amplitude ratio (0-2 swap over 1-2 swap) equals ``P_th1 / P_th0``.
    """
    if rabi_amp_swap12 <= 0 or rabi_amp_swap02 < 0:
        raise ValueError("Rabi amplitudes must be positive")
    r = rabi_amp_swap02 / rabi_amp_swap12
    p0 = 1.0 / (1.0 + r)
    return p0, 1.0 - p0


def solve_voltage_levels(v_thermal: float, v_swap01: float, v_swap01_12: float, p_th0: float):
    """Voltage levels from the thermal state and two population swaps.

    Populations are ``(p0, p1, 0)``, ``(p1, p0, 0)`` and ``(p1, 0, p0)``.
    """
    p1 = 1.0 - p_th0
    if not 0.0 <= p_th0 <= 1.0:
        raise ValueError("p_th0 must be a probability")
    a = np.array([[p_th0, p1, 0.0], [p1, p_th0, 0.0], [p1, 0.0, p_th0]])
    if abs(p_th0 * (p_th0 - p1) * (p_th0 + p1)) < 1e-9:
        raise ValueError("singular calibration system (p_th0 = 0.5)")
    return tuple(float(x) for x in np.linalg.solve(a, [v_thermal, v_swap01, v_swap01_12]))


# --------------------------------------------------------------------------
# record files
# --------------------------------------------------------------------------

RECORD_COLUMNS = ["prep_index", "analyzer_index", "voltage_volts"]


def write_records(path, records: np.ndarray, header_lines: Sequence[str] = ()):
    """Write ``records[analyzer, prep]`` as CSV rows ``prep_index, analyzer_index, voltage_volts``."""
    records = np.atleast_2d(records)
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(RECORD_COLUMNS)
        for j in range(records.shape[1]):
            for i in range(records.shape[0]):
                w.writerow([j, i, f"{records[i, j]:.16e}"])


class IncompleteRecords(ValueError):
    def __init__(self, missing):
        self.missing = missing
        pairs = ", ".join(f"({p},{a})" for p, a in missing[:20])
        super().__init__(f"missing (prep, analyzer) pairs: {pairs}" + (" ..." if len(missing) > 20 else ""))


def read_records(path, n_preps: int = 9, n_analyzers: int = 9) -> np.ndarray:
    """Read a record CSV into ``records[analyzer, prep]``."""
    out = np.full((n_analyzers, n_preps), np.nan)
    with open(path) as fh:
        rows = [line for line in fh if not line.startswith("#")]
    reader = csv.DictReader(rows)
    if reader.fieldnames != RECORD_COLUMNS:
        raise ValueError(f"record header must be {RECORD_COLUMNS}, got {reader.fieldnames}")
    for row in reader:
        j, i = int(row["prep_index"]), int(row["analyzer_index"])
        if not (0 <= j < n_preps and 0 <= i < n_analyzers):
            raise ValueError(f"record index out of range: prep {j}, analyzer {i}")
        out[i, j] = float(row["voltage_volts"])
    missing = [(j, i) for j in range(n_preps) for i in range(n_analyzers) if np.isnan(out[i, j])]
    if missing:
        raise IncompleteRecords(missing)
    return out
