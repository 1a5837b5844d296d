"""Electron/nuclear spin Hamiltonians of the NV centre and their eigenstructure.

Basis convention (used by every module): the product basis |m_S, m_I> with
m_S in (+1, 0, -1) as the outer index and m_I in (+1, 0, -1) as the inner
index, so ``basis_index(ms, mi) == 3 * (1 - ms) + (1 - mi)``.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import AmbiguousLabeling, NotHermitian
from .params import FieldConfig, NvParams

SPIN_VALUES = (1, 0, -1)
BASIS_9 = tuple((ms, mi) for ms in SPIN_VALUES for mi in SPIN_VALUES)
BASIS_3 = SPIN_VALUES

HERMITIAN_TOL = 1e-12
AMBIGUITY_TOL = 1e-6


def basis_index(ms: int, mi: int) -> int:
    return 3 * (1 - ms) + (1 - mi)


@lru_cache(maxsize=None)
def _spin1():
    s2 = np.sqrt(2.0)
    sx = np.array([[0, 1, 0], [1, 0, 1], [0, 1, 0]], dtype=complex) / s2
    sy = np.array([[0, -1j, 0], [1j, 0, -1j], [0, 1j, 0]], dtype=complex) / s2
    sz = np.diag([1.0, 0.0, -1.0]).astype(complex)
    for m in (sx, sy, sz):
        m.setflags(write=False)
    return sx, sy, sz


def spin1_matrices() -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Spin-1 operators (Sx, Sy, Sz) in the (+1, 0, -1) ordering."""
    return tuple(m.copy() for m in _spin1())


def electron_operator(axis, nuclear: bool = True) -> np.ndarray:
    """Microwave coupling operator S_axis (x, y, or in-plane angle in rad).

    With ``nuclear=True`` the operator acts on the 9-dim product space as
    S_axis (x) 1.
    """
    sx, sy, _ = _spin1()
    if axis == "x":
        op = sx
    elif axis == "y":
        op = sy
    else:
        phi = float(axis)
        op = np.cos(phi) * sx + np.sin(phi) * sy
    return np.kron(op, np.eye(3)) if nuclear else op.copy()


@dataclass(frozen=True)
class Hamiltonian:
    """Hermitian matrix in MHz together with its bare-state basis labels."""

    matrix: np.ndarray
    basis: tuple
    kind: str = "ground"

    @property
    def dim(self) -> int:
        return self.matrix.shape[0]

    def hermiticity_error(self) -> float:
        return float(np.max(np.abs(self.matrix - self.matrix.conj().T)))


def _zeeman_and_hyperfine(D, A_zz, A_perp, params: NvParams, field: FieldConfig,
                          nuclear_transverse: bool = True) -> np.ndarray:
    sx, sy, sz = _spin1()
    eye = np.eye(3)
    bx, by, bz = field.vector
    electron = D * sz @ sz + params.gamma_e * (bx * sx + by * sy + bz * sz)
    nuc_field = bz * sz
    if nuclear_transverse:
        nuc_field = nuc_field + bx * sx + by * sy
    nuclear = params.Q * sz @ sz - params.gamma_n * nuc_field
    H = np.kron(electron, eye) + np.kron(eye, nuclear)
    H += A_zz * np.kron(sz, sz) + A_perp * (np.kron(sx, sx) + np.kron(sy, sy))
    return H


def build_ground_hamiltonian(params: NvParams, field: FieldConfig,
                             nuclear_transverse: bool = True) -> Hamiltonian:
    """9x9 ground-state Hamiltonian D Sz^2 + ge S.B + Q Iz^2 - gn I.B + A I.S.

    ``nuclear_transverse=False`` drops the gn B_perp I_x term (used to show it
    hardly matters).
    """
    H = _zeeman_and_hyperfine(params.D, params.A_zz, params.A_perp, params, field,
                              nuclear_transverse)
    return Hamiltonian(H, BASIS_9, "ground")


def build_excited_hamiltonian(params: NvParams, field: FieldConfig) -> Hamiltonian:
    H = _zeeman_and_hyperfine(params.D_es, params.A_zz_es, params.A_perp_es, params, field)
    return Hamiltonian(H, BASIS_9, "excited")


def build_electron_hamiltonian(params: NvParams, field: FieldConfig,
                               excited: bool = False) -> Hamiltonian:
    """3x3 hyperfine-free electron Hamiltonian D Sz^2 + ge S.B."""
    sx, sy, sz = _spin1()
    bx, by, bz = field.vector
    D = params.D_es if excited else params.D
    H = D * sz @ sz + params.gamma_e * (bx * sx + by * sy + bz * sz)
    return Hamiltonian(H, BASIS_3, "electron-excited" if excited else "electron")


def build_metastable_hamiltonian(params: NvParams, field: FieldConfig,
                                 mixing: bool = True) -> Hamiltonian:
    """Nuclear-only Hamiltonian Q Iz^2 - gn I.B of the metastable singlet.

    ``mixing=False`` keeps only the diagonal part (bare basis, no mixing).
    """
    sx, sy, sz = _spin1()
    bx, by, bz = field.vector
    H = params.Q * sz @ sz - params.gamma_n * bz * sz
    if mixing:
        H = H - params.gamma_n * (bx * sx + by * sy)
    return Hamiltonian(H, BASIS_3, "metastable")


@dataclass(frozen=True)
class EigenSystem:
    """Eigen-decomposition with a bijective bare-state labeling.

    ``energies`` ascend, ``vectors[:, i]`` is eigenvector i, ``labels[i]`` its
    bare label and ``overlaps[i, k] = |<basis_k|i>|^2``.
    """

    energies: np.ndarray
    vectors: np.ndarray
    basis: tuple
    labels: tuple | None = None

    @property
    def dim(self) -> int:
        return len(self.energies)

    @property
    def overlaps(self) -> np.ndarray:
        return (np.abs(self.vectors) ** 2).T

    def index_of(self, label) -> int:
        if self.labels is None:
            raise AmbiguousLabeling("eigensystem carries no labeling")
        return self.labels.index(label)

    def vector(self, label) -> np.ndarray:
        return self.vectors[:, self.index_of(label)]

    def energy(self, label) -> float:
        return float(self.energies[self.index_of(label)])

    def by_label(self) -> tuple[np.ndarray, np.ndarray]:
        """Energies and vectors reordered so column k is labeled basis[k]."""
        order = [self.index_of(b) for b in self.basis]
        return self.energies[order], self.vectors[:, order]


def _fix_phases(vectors: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    for i in range(out.shape[1]):
        k = int(np.argmax(np.abs(out[:, i])))
        out[:, i] *= np.exp(-1j * np.angle(out[k, i]))
        out[k, i] = abs(out[k, i])
    return out


def _refine_degenerate(w: np.ndarray, v: np.ndarray, scale: float) -> np.ndarray:
    # Inside exactly degenerate clusters pick the basis closest to the bare states.
    tol = 1e-9 * max(1.0, scale)
    n = len(w)
    i = 0
    while i < n:
        j = i + 1
        while j < n and w[j] - w[j - 1] < tol:
            j += 1
        if j - i > 1:
            block = v[:, i:j]
            marker = np.diag(np.arange(1.0, n + 1.0) ** 2)
            _, rot = np.linalg.eigh(block.conj().T @ marker @ block)
            v[:, i:j] = block @ rot
        i = j
    return v


def diagonalize(H: Hamiltonian | np.ndarray, label: bool = True,
                basis: tuple | None = None) -> EigenSystem:
    """Hermitian eigen-decomposition with deterministic phases and labels."""
    if isinstance(H, Hamiltonian):
        matrix, basis = H.matrix, H.basis
    else:
        matrix = np.asarray(H, dtype=complex)
        if basis is None:
            basis = tuple(range(matrix.shape[0]))
    scale = float(np.max(np.abs(matrix))) if matrix.size else 0.0
    if np.max(np.abs(matrix - matrix.conj().T)) > HERMITIAN_TOL * max(1.0, scale):
        raise NotHermitian("input matrix is not Hermitian")
    w, v = np.linalg.eigh(matrix)
    v = _refine_degenerate(w, v, scale)
    v = _fix_phases(v)
    eig = EigenSystem(w, v, tuple(basis))
    if label:
        eig = EigenSystem(w, v, tuple(basis), label_states(eig))
    return eig


def _assignment_total(weights: np.ndarray) -> tuple[float, np.ndarray]:
    rows, cols = linear_sum_assignment(weights, maximize=True)
    return float(weights[rows, cols].sum()), cols


def label_states(eig: EigenSystem, tol: float = AMBIGUITY_TOL) -> tuple:
    """Assign each eigenvector a distinct bare label maximising total overlap.

    Solved as an assignment problem. Raises AmbiguousLabeling when the best
    and second-best assignments differ by less than ``tol`` in summed overlap.
    """
    ov = eig.overlaps
    best, cols = _assignment_total(ov)
    second = -np.inf
    forbidden = -1e6
    for i, k in enumerate(cols):
        trial = ov.copy()
        trial[i, k] = forbidden
        total, _ = _assignment_total(trial)
        second = max(second, total)
    if best - second < tol:
        raise AmbiguousLabeling(
            f"bare-state labeling is ambiguous (margin {best - second:.3g}); "
            "use label_by_continuation"
        )
    return tuple(eig.basis[k] for k in cols)


def label_by_continuation(builder: Callable[[FieldConfig], Hamiltonian],
                          field: FieldConfig, steps: int = 100,
                          theta_start: float = 0.0) -> EigenSystem:
    """Label eigenstates by following them adiabatically along a theta ramp.

    Starts from ``theta_start`` (labelled by overlap) and at each step maps
    the new eigenvectors onto the previous ones by maximal overlap.
    """
    thetas = np.linspace(theta_start, field.theta, steps + 1)
    prev = diagonalize(builder(FieldConfig(field.B, thetas[0], field.phi)))
    for th in thetas[1:]:
        cur = diagonalize(builder(FieldConfig(field.B, th, field.phi)), label=False)
        ov = np.abs(prev.vectors.conj().T @ cur.vectors) ** 2  # [prev, cur]
        rows, cols = linear_sum_assignment(ov, maximize=True)
        labels = [None] * cur.dim
        for r, c in zip(rows, cols):
            labels[c] = prev.labels[r]
        prev = EigenSystem(cur.energies, cur.vectors, cur.basis, tuple(labels))
    return prev


def block_diagonalize(blocks: Sequence[Hamiltonian]) -> list[EigenSystem]:
    return [diagonalize(b) for b in blocks]
