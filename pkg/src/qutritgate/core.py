"""Dense-matrix foundations: states, unitaries, device description and metrics.

All frequencies are angular (rad/s) and all rates are in 1/s.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

VALIDATION_TOL = 1e-10
PROPERTY_TOL = 1e-9

TWO_PI = 2.0 * np.pi


class ValidationError(ValueError):
    """Raised when an input violates a physicality or shape invariant."""


def _as_square(m, name="matrix") -> np.ndarray:
    m = np.asarray(m, dtype=complex)
    if m.ndim != 2 or m.shape[0] != m.shape[1]:
        raise ValidationError(f"{name} must be square, got shape {m.shape}")
    return m


def is_hermitian(m: np.ndarray, tol: float = VALIDATION_TOL) -> bool:
    return bool(np.max(np.abs(m - m.conj().T), initial=0.0) <= tol)


def is_unitary(m: np.ndarray, tol: float = VALIDATION_TOL) -> bool:
    m = np.asarray(m)
    return bool(np.max(np.abs(m @ m.conj().T - np.eye(m.shape[0]))) <= tol)


# --------------------------------------------------------------------------
# matrix functions
# --------------------------------------------------------------------------


def expm_skew(generator, scale: float = 1.0) -> np.ndarray:
    """Return ``exp(-i * generator * scale)`` for a Hermitian generator.

    Uses the eigendecomposition of the generator, which is exact up to
    rounding for Hermitian input.
    """
    h = _as_square(generator, "generator")
    if not is_hermitian(h):
        err = np.max(np.abs(h - h.conj().T))
        raise ValidationError(f"generator is not Hermitian (max asymmetry {err:.3g})")
    h = 0.5 * (h + h.conj().T)
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * scale)) @ v.conj().T


def sqrtm_psd(m: np.ndarray) -> np.ndarray:
    """Square root of a Hermitian positive semidefinite matrix.

    Small negative eigenvalues from rounding are clipped to zero.
    """
    m = 0.5 * (m + m.conj().T)
    w, v = np.linalg.eigh(m)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.conj().T


def logm_unitary(u: np.ndarray) -> np.ndarray:
    """Principal logarithm of a unitary matrix, returned as a skew-Hermitian matrix.

    The complex Schur form of a normal matrix is diagonal, so the Schur
    vectors form an orthonormal eigenbasis even for degenerate spectra.
    """
    from scipy.linalg import schur

    t, z = schur(np.asarray(u, dtype=complex), output="complex")
    lam = np.diag(t)
    return (z * (1j * np.angle(lam))) @ z.conj().T


def project_psd(m: np.ndarray, trace: Optional[float] = 1.0) -> np.ndarray:
    """Nearest positive semidefinite matrix (eigenvalue clipping), optionally renormalized."""
    m = 0.5 * (m + m.conj().T)
    w, v = np.linalg.eigh(m)
    w = np.clip(w, 0.0, None)
    out = (v * w) @ v.conj().T
    if trace is not None:
        tr = np.real(np.trace(out))
        if tr <= 0:
            out = np.eye(m.shape[0]) / m.shape[0] * trace
        else:
            out = out * (trace / tr)
    return out


# --------------------------------------------------------------------------
# states and metrics
# --------------------------------------------------------------------------


def basis_state(dim: int, k: int) -> np.ndarray:
    v = np.zeros(dim, dtype=complex)
    v[k] = 1.0
    return v


def projector(psi) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def _check_same_dim(a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ValidationError(f"dimension mismatch: {a.shape} vs {b.shape}")


def state_fidelity(rho, sigma, squared: bool = True) -> float:
    """Uhlmann fidelity between two density matrices.

    With ``squared=True`` (default) returns ``(Tr sqrt(sqrt(rho) sigma sqrt(rho)))**2``,
    which reduces to ``|<psi|phi>|**2`` for pure states. ``squared=False``
    returns the root fidelity.
    """
    rho = _as_square(rho, "rho")
    sigma = _as_square(sigma, "sigma")
    _check_same_dim(rho, sigma)
    s = sqrtm_psd(rho)
    inner = s @ sigma @ s
    w = np.linalg.eigvalsh(0.5 * (inner + inner.conj().T))
    root = float(np.sum(np.sqrt(np.clip(w, 0.0, None))))
    f = root**2 if squared else root
    return float(min(max(f, 0.0), 1.0))


def unitary_distance(u, v) -> float:
    """Frobenius distance between two unitaries minimized over a global phase.

    ``min_theta ||U - exp(i theta) V||_F = sqrt(2 (d - |Tr(U^dag V)|))``.
    """
    u = _as_square(u, "U")
    v = _as_square(v, "V")
    _check_same_dim(u, v)
    d = u.shape[0]
    overlap = abs(np.trace(u.conj().T @ v))
    return float(np.sqrt(max(2.0 * (d - overlap), 0.0)))


@dataclass(frozen=True)
class DensityReport:
    """Outcome of :func:`validate_density`.

    ``violations`` maps the name of each failed invariant to its magnitude.
    """

    matrix: np.ndarray
    violations: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return not self.violations

    def __str__(self):
        if self.ok:
            return "valid density matrix"
        parts = [f"{k}={v:.3g}" for k, v in self.violations.items()]
        return "invalid density matrix: " + ", ".join(parts)


def validate_density(
    m,
    herm_tol: float = VALIDATION_TOL,
    trace_tol: float = VALIDATION_TOL,
    pos_tol: float = VALIDATION_TOL,
) -> DensityReport:
    """Check the density-matrix invariants without repairing anything."""
    m = _as_square(m)
    violations = {}
    asym = float(np.max(np.abs(m - m.conj().T), initial=0.0))
    if asym > herm_tol:
        violations["hermiticity"] = asym
    tr_err = float(abs(np.trace(m) - 1.0))
    if tr_err > trace_tol:
        violations["trace"] = tr_err
    w = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
    if w[0] < -pos_tol:
        violations["negative_eigenvalue"] = float(-w[0])
    return DensityReport(m, violations)


def require_density(m, **tols) -> np.ndarray:
    report = validate_density(m, **tols)
    if not report.ok:
        raise ValidationError(str(report))
    return report.matrix


def thermal_state(p0: float, dim: int = 3) -> np.ndarray:
    """Qutrit thermal state ``diag(p0, 1 - p0, 0, ...)``."""
    pops = np.zeros(dim)
    pops[0] = p0
    pops[1] = 1.0 - p0
    return np.diag(pops).astype(complex)


def walsh_hadamard(dim: int = 3) -> np.ndarray:
    """The d-dimensional Walsh-Hadamard (discrete Fourier) gate."""
    w = np.exp(TWO_PI * 1j / dim)
    j, k = np.meshgrid(np.arange(dim), np.arange(dim), indexing="ij")
    return w ** (j * k) / np.sqrt(dim)


def embed(op: np.ndarray, dim: int) -> np.ndarray:
    """Embed a small operator in the top-left block of a ``dim``-dimensional identity."""
    n = op.shape[0]
    out = np.eye(dim, dtype=complex)
    out[:n, :n] = op
    return out


# --------------------------------------------------------------------------
# device description
# --------------------------------------------------------------------------


class CoherenceShape(str, enum.Enum):
    EXPONENTIAL = "exponential"
    GAUSSIAN = "gaussian"


@dataclass(frozen=True)
class DecoherenceRates:
    """Relaxation/excitation and pure-dephasing rates on the qutrit subspace.

    ``gamma[i, j]`` is the rate (1/s) of the transition from level i to
    level j: relaxation for i > j, excitation for i < j. ``pure_dephasing``
    is symmetric with entries for each level pair.
    """

    gamma: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    pure_dephasing: np.ndarray = field(default_factory=lambda: np.zeros((3, 3)))
    coherence_shape: CoherenceShape = CoherenceShape.GAUSSIAN

    def __post_init__(self):
        g = np.array(self.gamma, dtype=float)
        r = np.array(self.pure_dephasing, dtype=float)
        if g.shape != (3, 3) or r.shape != (3, 3):
            raise ValidationError("decoherence rates are 3x3 (qutrit subspace only)")
        if np.any(g < 0) or np.any(r < 0):
            raise ValidationError("decoherence rates must be non-negative")
        np.fill_diagonal(g, 0.0)
        r = np.maximum(r, r.T)
        np.fill_diagonal(r, 0.0)
        g.setflags(write=False)
        r.setflags(write=False)
        object.__setattr__(self, "gamma", g)
        object.__setattr__(self, "pure_dephasing", r)
        object.__setattr__(self, "coherence_shape", CoherenceShape(self.coherence_shape))

    @classmethod
    def none(cls) -> "DecoherenceRates":
        return cls()

    @property
    def is_zero(self) -> bool:
        return not (np.any(self.gamma) or np.any(self.pure_dephasing))


@dataclass(frozen=True)
class ReadoutModel:
    """Averaged homodyne readout: ``V = sum_j P_j V_hj`` plus Gaussian noise."""

    voltage_levels: tuple = (1.0, -1.0, 0.3)
    noise_sigma: float = 0.0

    def __post_init__(self):
        v = tuple(float(x) for x in self.voltage_levels)
        if len(v) != 3:
            raise ValidationError("readout needs exactly three voltage levels")
        if len(set(v)) != 3:
            raise ValidationError(f"voltage levels must be pairwise distinct, got {v}")
        if self.noise_sigma < 0:
            raise ValidationError("noise_sigma must be >= 0")
        object.__setattr__(self, "voltage_levels", v)

    def operator(self, dim: int = 3) -> np.ndarray:
        """Diagonal voltage operator; levels above 2 read out as level 2."""
        levels = list(self.voltage_levels) + [self.voltage_levels[2]] * (dim - 3)
        return np.diag(levels).astype(complex)

    @property
    def span(self) -> float:
        return max(self.voltage_levels) - min(self.voltage_levels)


@dataclass(frozen=True)
class DeviceSpec:
    """An N-level driven device.

    ``drive_couplings[j, k]`` converts drive amplitude to Rabi rate on
    transition j-k: ``Omega_jk = g_jk * A``.
    """

    level_freqs: np.ndarray
    drive_couplings: np.ndarray
    decoherence: DecoherenceRates = field(default_factory=DecoherenceRates)
    readout: ReadoutModel = field(default_factory=ReadoutModel)
    thermal_p0: float = 0.74

    def __post_init__(self):
        w = np.array(self.level_freqs, dtype=float)
        g = np.array(self.drive_couplings, dtype=float)
        n = w.size
        if n < 3:
            raise ValidationError("device needs at least 3 levels")
        if w[0] != 0.0:
            raise ValidationError("level_freqs[0] must be 0")
        if np.any(np.diff(w) <= 0):
            raise ValidationError("level frequencies must be strictly increasing")
        if g.shape != (n, n):
            raise ValidationError(f"couplings must be {n}x{n}, got {g.shape}")
        if np.any(np.diag(g) != 0):
            raise ValidationError("couplings must have zero diagonal")
        if not np.allclose(g, g.T, rtol=0, atol=1e-12 * max(1.0, np.abs(g).max())):
            raise ValidationError("couplings must be symmetric")
        if not 0.0 <= self.thermal_p0 <= 1.0:
            raise ValidationError("thermal_p0 must be a probability")
        w.setflags(write=False)
        g.setflags(write=False)
        object.__setattr__(self, "level_freqs", w)
        object.__setattr__(self, "drive_couplings", g)

    @property
    def n_levels(self) -> int:
        return self.level_freqs.size

    def transition(self, j: int, k: int) -> float:
        """Transition frequency ``omega_k - omega_j``."""
        return float(self.level_freqs[k] - self.level_freqs[j])

    def thermal_state(self) -> np.ndarray:
        return thermal_state(self.thermal_p0, self.n_levels)

    def replace(self, **changes) -> "DeviceSpec":
        from dataclasses import replace

        return replace(self, **changes)
