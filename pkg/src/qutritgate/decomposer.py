"""Search for factorizations ``U = exp(-i G_d) exp(-i G_o)``.

``G_d`` is diagonal (the phases ``phi_j``) and ``G_o`` is Hermitian with a
vanishing diagonal (couplings ``m_jk``). The diagonal factor costs nothing
experimentally (it is absorbed into later pulse phases), so a decomposition
is found by scanning the three phases and keeping points where the
principal generator of ``U_d^dag U`` has no diagonal part.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, replace
from typing import List

import numpy as np
from scipy.optimize import minimize

from .core import TWO_PI, ValidationError, expm_skew, is_unitary, logm_unitary

log = logging.getLogger(__name__)

PAIRS = ((0, 1), (0, 2), (1, 2))
ACCEPT_RESIDUAL = 1e-6
BRANCH_TOL = 1e-6


@dataclass(frozen=True)
class GateDecomposition:
    m01: complex
    m02: complex
    m12: complex
    phi0: float
    phi1: float
    phi2: float
    residual: float = 0.0
    degenerate: bool = False

    @property
    def phases(self) -> np.ndarray:
        return np.array([self.phi0, self.phi1, self.phi2])

    @property
    def couplings(self) -> dict:
        return {(0, 1): self.m01, (0, 2): self.m02, (1, 2): self.m12}

    def offdiagonal_generator(self) -> np.ndarray:
        g = np.zeros((3, 3), dtype=complex)
        for (j, k), m in self.couplings.items():
            g[j, k] = m
            g[k, j] = np.conj(m)
        return g

    def diagonal_generator(self) -> np.ndarray:
        return np.diag(self.phases).astype(complex)

    def u_d(self) -> np.ndarray:
        return np.diag(np.exp(-1j * self.phases))

    def u_o(self) -> np.ndarray:
        return expm_skew(self.offdiagonal_generator())

    def unitary(self) -> np.ndarray:
        return self.u_d() @ self.u_o()

    def params(self) -> np.ndarray:
        """The six parameters as a flat real vector (used for ordering and dedup)."""
        return np.array(
            [
                self.m01.real, self.m01.imag,
                self.m02.real, self.m02.imag,
                self.m12.real, self.m12.imag,
                self.phi0, self.phi1, self.phi2,
            ]
        )


@dataclass(frozen=True)
class DecompositionSearchConfig:
    grid_points: int = 40
    refine_tol: float = 1e-10
    dedup_tol: float = 1e-3

    def __post_init__(self):
        if self.grid_points < 8:
            raise ValueError("grid_points must be >= 8")


class GeneratorRejected(ValueError):
    """The generator of a unitary is not purely off-diagonal."""

    def __init__(self, max_diagonal: float, degenerate: bool = False):
        self.max_diagonal = max_diagonal
        self.degenerate = degenerate
        msg = f"generator diagonal magnitude {max_diagonal:.3g}"
        if degenerate:
            msg += " (eigenvalue at -1: logarithm branch ambiguous)"
        super().__init__(msg)


def extract_offdiagonal_generator(u_o, tol: float = 1e-10) -> np.ndarray:
    """Return ``G = i log(U_o)`` (principal branch) if its diagonal vanishes.

    Raises :class:`GeneratorRejected` carrying the largest diagonal magnitude
    otherwise, or when ``U_o`` has an eigenvalue at -1 where the principal
    branch is ambiguous.
    """
    u_o = np.asarray(u_o, dtype=complex)
    if not is_unitary(u_o, 1e-8):
        raise ValidationError("U_o is not unitary")
    g = 1j * logm_unitary(u_o)
    g = 0.5 * (g + g.conj().T)
    lam = np.linalg.eigvals(u_o)
    degenerate = bool(np.min(np.abs(lam + 1.0)) < BRANCH_TOL)
    dmax = float(np.max(np.abs(np.diag(g))))
    if degenerate or dmax >= tol:
        raise GeneratorRejected(dmax, degenerate)
    return g


# --------------------------------------------------------------------------
# vectorized objective
# --------------------------------------------------------------------------


def _batch_generators(target: np.ndarray, phis: np.ndarray):
    """Principal generators of ``U_d(phi)^dag target`` for a batch of phase triples."""
    w = np.exp(1j * phis)[:, :, None] * target[None, :, :]
    lam, vec = np.linalg.eig(w)
    ang = np.angle(lam)
    inv = np.linalg.inv(vec)
    # G = i log(W) = -V diag(angle) V^-1
    g = -np.einsum("nij,nj,njk->nik", vec, ang, inv)
    return g, lam


def _diag_objective(target: np.ndarray, phis: np.ndarray) -> np.ndarray:
    g, _ = _batch_generators(target, np.atleast_2d(phis))
    return np.sum(np.abs(np.einsum("nii->ni", g)) ** 2, axis=1)


def _canonical_phases(phis) -> np.ndarray:
    p = np.mod(np.asarray(phis, dtype=float), TWO_PI)
    p[np.isclose(p, TWO_PI, atol=1e-12)] = 0.0
    return p


def _decomposition_at(target: np.ndarray, phis):
    phis = _canonical_phases(phis)
    u_o = np.diag(np.exp(1j * phis)) @ target
    g = 1j * logm_unitary(u_o)
    g = 0.5 * (g + g.conj().T)
    lam = np.linalg.eigvals(u_o)
    degenerate = bool(np.min(np.abs(lam + 1.0)) < BRANCH_TOL)
    d = GateDecomposition(
        m01=complex(g[0, 1]),
        m02=complex(g[0, 2]),
        m12=complex(g[1, 2]),
        phi0=float(phis[0]),
        phi1=float(phis[1]),
        phi2=float(phis[2]),
        degenerate=degenerate,
    )
    resid = float(np.linalg.norm(d.unitary() - target))
    diag = float(np.max(np.abs(np.diag(g))))
    return d, resid, diag


def _with_residual(d: GateDecomposition, resid: float) -> GateDecomposition:
    return replace(d, residual=resid)


def _grid_minima(values: np.ndarray) -> np.ndarray:
    """Indices of cells not larger than any of their 26 periodic neighbours."""
    is_min = np.ones(values.shape, dtype=bool)
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            for dz in (-1, 0, 1):
                if dx == dy == dz == 0:
                    continue
                shifted = np.roll(values, (dx, dy, dz), axis=(0, 1, 2))
                is_min &= values <= shifted
    return np.argwhere(is_min)


def _sort_key(d: GateDecomposition):
    return (round(abs(d.m02), 9), tuple(np.round(d.params(), 9)))


def search_decompositions(target, config: DecompositionSearchConfig = DecompositionSearchConfig()) -> List[GateDecomposition]:
    """Find all diagonal x off-diagonal factorizations of a qutrit unitary.

    A uniform grid over ``[0, 2 pi)^3`` locates minima of the summed squared
    diagonal of ``G_o``; each grid minimum is polished with Nelder-Mead.
    Accepted results are deduplicated and sorted by ``|m02|``. An empty
    list means no grid cell refined to a valid decomposition.
    """
    target = np.asarray(target, dtype=complex)
    if target.shape != (3, 3):
        raise ValidationError("target must be 3x3")
    if not is_unitary(target, 1e-8):
        raise ValidationError("target is not unitary")

    n = config.grid_points
    axis = np.arange(n) * TWO_PI / n
    grid = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
    values = np.concatenate(
        [_diag_objective(target, grid[i : i + 20000]) for i in range(0, len(grid), 20000)]
    ).reshape(n, n, n)
    starts = _grid_minima(values)
    order = np.lexsort((starts[:, 2], starts[:, 1], starts[:, 0], values[tuple(starts.T)]))
    starts = starts[order]
    log.debug("%d grid minima from %d^3 grid", len(starts), n)

    def objective(p):
        return float(_diag_objective(target, p)[0])

    found: List[GateDecomposition] = []
    ftol = config.refine_tol**2
    for idx in starts:
        x0 = axis[idx]
        res = minimize(
            objective,
            x0,
            method="Nelder-Mead",
            options={
                "xatol": 1e-12,
                "fatol": ftol * 1e-4,
                "maxiter": 4000,
                "initial_simplex": x0 + np.vstack([np.zeros(3), np.eye(3) * (TWO_PI / n) * 0.5]),
            },
        )
        d, resid, diag = _decomposition_at(target, res.x)
        if diag >= config.refine_tol or resid > ACCEPT_RESIDUAL or d.degenerate:
            continue
        d = _with_residual(d, resid)
        if any(np.max(np.abs(d.params() - e.params())) < config.dedup_tol for e in found):
            continue
        found.append(d)

    found.sort(key=_sort_key)
    return found


def select_decomposition(candidates) -> GateDecomposition:
    """Pick the candidate with the smallest ``|m02|``.

    The 0-2 transition is driven as a two-photon process, so it is the most
    expensive in drive power. Ties go to the smallest ``|m01| + |m12|``.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("no candidate decompositions")
    return min(candidates, key=lambda d: (round(abs(d.m02), 9), abs(d.m01) + abs(d.m12)))


def pulse_area_targets(d: GateDecomposition, gate_duration: float) -> dict:
    """Square-envelope Rabi rates and phases realizing ``G_o`` in ``gate_duration``.

    Returns ``{(j, k): (rabi_rate, phase)}`` with ``rabi_rate * duration = 2 |m_jk|``
    and ``phase = arg(m_jk)``.
    """
    if gate_duration <= 0:
        raise ValueError("gate duration must be positive")
    return {
        pair: (2.0 * abs(m) / gate_duration, float(np.angle(m)) if m != 0 else 0.0)
        for pair, m in d.couplings.items()
    }


# Rows of the published decomposition table for the qutrit Walsh-Hadamard gate.
TABLE_S1 = (
    GateDecomposition(-0.9672 - 0.2365j, -0.9672 - 0.2365j, 1.9345, 0.8434, 0.3637, 0.3637),
    GateDecomposition(-0.6982 - 1.2092j, -0.6981 - 1.2092j, 1.3962, 1.9199, 6.1087, 6.1086),
    GateDecomposition(-0.9672 - 1.6753j, 0.2788 - 0.9559j, 0.6885 + 0.7194j, 2.4581, 0.3637, 5.0322),
    GateDecomposition(0.2788 - 0.9559j, -0.9672 - 1.6753j, 0.6885 - 0.7194j, 2.4581, 5.0322, 0.3637),
    GateDecomposition(0.3491 + 0.6046j, 0.3491 + 0.6046j, -0.6981, 6.1086, 4.0143, 4.0143),
)


def reference_decomposition() -> GateDecomposition:
    """The published decomposition used for the gate (smallest ``|m02|``)."""
    return TABLE_S1[4]


def match_reference(d: GateDecomposition, reference: GateDecomposition) -> float:
    """Largest per-element deviation between two decompositions (phases compared mod 2 pi)."""
    return _param_gap(d.params(), reference.params())


def _param_gap(a, b) -> float:
    diff = np.abs(a - b)
    # phases are compared on the circle
    diff[6:] = np.minimum(diff[6:], TWO_PI - diff[6:])
    return float(np.max(diff))
