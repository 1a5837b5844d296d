"""Incoherent optical-cycle rate models (7 electronic levels, 21 with the nucleus).

Level indices (7-level model): ground m_S = +1, 0, -1 -> 0, 1, 2; excited
m_S = +1, 0, -1 -> 3, 4, 5; metastable singlet -> 6. The 21-level model
appends the nuclear index (m_I = +1, 0, -1) as the inner factor, so ground,
excited and metastable blocks occupy 0-8, 9-17 and 18-20.

``rates[n, m]`` is the rate n -> m in MHz.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla
from scipy.optimize import brentq

from .errors import AmbiguousLabeling, DimensionMismatch, NonUniqueSteadyState
from .params import FieldConfig, NvParams
from .spin import (EigenSystem, build_electron_hamiltonian, build_excited_hamiltonian,
                   build_ground_hamiltonian, build_metastable_hamiltonian, diagonalize,
                   label_by_continuation, label_states)

RATE_NAMES = ("k_PL", "k_47", "k_57", "k_71", "k_72")
GROUND, EXCITED, METASTABLE = (0, 1, 2), (3, 4, 5), 6
NULL_TOL = 1e-10


@dataclass(frozen=True)
class RateSet:
    """Intrinsic rates (MHz) of the optical cycle plus the pumping rate k_Las."""

    k_PL: float
    k_47: float
    k_57: float
    k_71: float
    k_72: float
    k_Las: float = 0.0
    sigma: tuple = (0.0, 0.0, 0.0, 0.0, 0.0)
    name: str = ""

    def __post_init__(self):
        for n in RATE_NAMES + ("k_Las",):
            v = getattr(self, n)
            if not (np.isfinite(v) and v >= 0):
                raise ValueError(f"{n} must be finite and >= 0, got {v!r}")
        if len(self.sigma) != len(RATE_NAMES) or any(s < 0 for s in self.sigma):
            raise ValueError("sigma needs five non-negative entries")

    @classmethod
    def preset(cls, name: str, k_las: float | None = None, k_las_fraction: float = 0.01) -> "RateSet":
        """Named literature rate set; k_Las defaults to ``k_las_fraction * k_PL``."""
        key = name.lower()
        if key not in PRESETS:
            raise KeyError(f"unknown rate set {name!r}; choose from {sorted(PRESETS)}")
        values, sigma = PRESETS[key]
        k = k_las_fraction * values[0] if k_las is None else k_las
        return cls(*values, k_Las=k, sigma=sigma, name=key)

    @property
    def intrinsic(self) -> tuple:
        return tuple(getattr(self, n) for n in RATE_NAMES)

    def with_k_las(self, k_las: float) -> "RateSet":
        return replace(self, k_Las=float(k_las))

    def corners(self) -> list["RateSet"]:
        """All 2^5 sign combinations of the +-1 sigma shifts (clipped at zero)."""
        out = []
        for signs in itertools.product((-1.0, 1.0), repeat=len(RATE_NAMES)):
            vals = [max(v + s * d, 0.0) for v, s, d in zip(self.intrinsic, signs, self.sigma)]
            out.append(replace(self, **dict(zip(RATE_NAMES, vals))))
        return out


PRESETS = {
    "set1": ((67.9, 5.7, 49.9, 1.01, 0.75), (1.3, 0.7, 1.6, 0.28, 0.11)),
    "set2": ((63.0, 12.0, 80.0, 3.3, 2.4), (3.0, 3.0, 6.0, 0.4, 0.4)),
}


@dataclass(frozen=True)
class RateMatrix:
    rates: np.ndarray
    labels: tuple = field(default=())

    def __post_init__(self):
        r = np.asarray(self.rates, dtype=float)
        if r.ndim != 2 or r.shape[0] != r.shape[1]:
            raise DimensionMismatch("rate matrix must be square")
        off = r - np.diag(np.diag(r))
        if np.any(off < -1e-15):
            raise ValueError("off-diagonal rates must be non-negative")
        object.__setattr__(self, "rates", r)

    @property
    def dim(self) -> int:
        return self.rates.shape[0]

    @property
    def generator(self) -> np.ndarray:
        """G with dp/dt = G p; columns sum to zero."""
        K = self.rates
        return K.T - np.diag(K.sum(axis=1))

    def nonzero_transitions(self) -> int:
        K = self.rates
        return int(np.count_nonzero(K - np.diag(np.diag(K))))


def build_electron_rate_matrix(rs: RateSet) -> RateMatrix:
    K = np.zeros((7, 7))
    for g, e in zip(GROUND, EXCITED):
        K[g, e] = rs.k_Las
        K[e, g] = rs.k_PL
    K[4, METASTABLE] = rs.k_47
    K[3, METASTABLE] = K[5, METASTABLE] = rs.k_57
    K[METASTABLE, 1] = rs.k_71
    K[METASTABLE, 0] = K[METASTABLE, 2] = rs.k_72
    labels = ("g+1", "g0", "g-1", "e+1", "e0", "e-1", "s")
    return RateMatrix(K, labels)


def extend_to_nuclear(rm: RateMatrix) -> RateMatrix:
    """Split every electronic transition into three nuclear-spin preserving ones."""
    if rm.dim != 7:
        raise DimensionMismatch(f"expected a 7-level matrix, got {rm.dim}")
    labels = tuple(f"{e}|{mi:+d}" for e in (rm.labels or range(7)) for mi in (1, 0, -1))
    return RateMatrix(np.kron(rm.rates, np.eye(3)), labels)


def trace_out_nucleus(rm: RateMatrix) -> RateMatrix:
    """Average a 21-level matrix back onto the 7 electronic levels."""
    if rm.dim != 21:
        raise DimensionMismatch(f"expected a 21-level matrix, got {rm.dim}")
    K = rm.rates.reshape(7, 3, 7, 3).sum(axis=(1, 3)) / 3.0
    return RateMatrix(K)


def _labeled(H, builder=None, field=None) -> EigenSystem:
    try:
        return diagonalize(H)
    except AmbiguousLabeling:
        if builder is None:
            raise
    try:
        return label_by_continuation(builder, field)
    except AmbiguousLabeling:
        # degenerate even on the axis (B = 0): keep the best assignment
        eig = diagonalize(H, label=False)
        return EigenSystem(eig.energies, eig.vectors, eig.basis, label_states(eig, tol=-np.inf))


def composite_basis(params: NvParams, field: FieldConfig, level: int = 7,
                    metastable: str = "nuclear") -> tuple[np.ndarray, list[EigenSystem]]:
    """Block-diagonal unitary whose column k is the eigenstate labeled by bare state k.

    ``metastable`` selects the singlet's nuclear Hamiltonian for the 21-level
    case: ``"nuclear"`` (Q Iz^2 - gn I.B) or ``"bare"`` (no mixing).
    """
    if level == 7:
        g = _labeled(build_electron_hamiltonian(params, field),
                     lambda f: build_electron_hamiltonian(params, f), field)
        e = _labeled(build_electron_hamiltonian(params, field, excited=True),
                     lambda f: build_electron_hamiltonian(params, f, excited=True), field)
        blocks = [g.by_label()[1], e.by_label()[1], np.eye(1)]
        eigs = [g, e]
    elif level == 21:
        g = _labeled(build_ground_hamiltonian(params, field),
                     lambda f: build_ground_hamiltonian(params, f), field)
        e = _labeled(build_excited_hamiltonian(params, field),
                     lambda f: build_excited_hamiltonian(params, f), field)
        if metastable == "bare":
            m = np.eye(3, dtype=complex)
        elif metastable == "nuclear":
            m = _labeled(build_metastable_hamiltonian(params, field),
                         lambda f: build_metastable_hamiltonian(params, f), field).by_label()[1]
        else:
            raise ValueError(f"metastable must be 'nuclear' or 'bare', got {metastable!r}")
        blocks = [g.by_label()[1], e.by_label()[1], m]
        eigs = [g, e]
    else:
        raise DimensionMismatch(f"level must be 7 or 21, got {level}")
    return sla.block_diag(*blocks), eigs


def rotate_rates(rm: RateMatrix, basis) -> RateMatrix:
    """Rates between eigenstates: k~_ij = sum_pq |a_ip|^2 |a_jq|^2 k_pq.

    ``basis`` is the block unitary from :func:`composite_basis` (or the tuple
    it returns).
    """
    U = basis[0] if isinstance(basis, tuple) else np.asarray(basis)
    if U.shape != (rm.dim, rm.dim):
        raise DimensionMismatch(f"basis {U.shape} does not match rate matrix {rm.dim}")
    A = np.abs(U) ** 2          # A[p, i] = |<p|i>|^2
    return RateMatrix(A.T @ rm.rates @ A, rm.labels)


def steady_state(rm: RateMatrix) -> np.ndarray:
    """Unique stationary distribution from the generator null space."""
    G = rm.generator
    _, s, vh = np.linalg.svd(G)
    scale = max(float(s[0]), 1e-300)
    null_dim = int(np.sum(s < NULL_TOL * scale))
    if null_dim > 1:
        raise NonUniqueSteadyState(f"generator null space has dimension {null_dim}")
    p = vh[-1].real
    p = p / p.sum()
    p[(p < 0) & (p > -1e-12)] = 0.0
    return p


def evolve_populations(rm: RateMatrix, p0, times) -> np.ndarray:
    """Populations p(t) = expm(G t) p0 for each t; rows follow ``times``."""
    G = rm.generator
    p0 = np.asarray(p0, dtype=float)
    return np.array([sla.expm(G * float(t)) @ p0 for t in times])


def lowest_state_population(p, ground_energies, level: int = 7,
                            normalize: str = "ground") -> float:
    """Population of the lowest ground eigenstate(s).

    For the 21-level model the three lowest ground states (the m_S = 0
    manifold) are summed. ``normalize="ground"`` divides by the total ground
    population, ``"total"`` keeps the absolute value.
    """
    n_ground = 3 if level == 7 else 9
    n_low = 1 if level == 7 else 3
    order = np.argsort(ground_energies)[:n_low]
    pg = np.asarray(p)[:n_ground]
    low = float(pg[order].sum())
    if normalize == "ground":
        return low / float(pg.sum())
    if normalize == "total":
        return low
    raise ValueError(f"normalize must be 'ground' or 'total', got {normalize!r}")


def polarized_steady_state(params: NvParams, rs: RateSet, field: FieldConfig, level: int = 7,
                           metastable: str = "nuclear") -> tuple[np.ndarray, np.ndarray]:
    """Steady state in the eigenbasis and the ground energies ordered by label."""
    rm = build_electron_rate_matrix(rs)
    if level == 21:
        rm = extend_to_nuclear(rm)
    U, eigs = composite_basis(params, field, level, metastable)
    p = steady_state(rotate_rates(rm, U))
    return p, eigs[0].by_label()[0]


def polarization_vs_angle(params: NvParams, rs: RateSet, B: float, theta_grid, level: int = 7,
                          normalize: str = "ground") -> np.ndarray:
    """Rows (theta, lowest-state steady population)."""
    rows = []
    for th in theta_grid:
        p, eg = polarized_steady_state(params, rs, FieldConfig(B, float(th)), level)
        rows.append((float(th), lowest_state_population(p, eg, level, normalize)))
    return np.array(rows).reshape(-1, 2)


def polarization_envelope(params: NvParams, rs: RateSet, B: float, theta_grid, level: int = 7,
                          normalize: str = "ground") -> np.ndarray:
    """Rows (theta, central, lo, hi) with lo/hi over the +-sigma rate corners."""
    central = polarization_vs_angle(params, rs, B, theta_grid, level, normalize)
    curves = [polarization_vs_angle(params, c, B, theta_grid, level, normalize)[:, 1]
              for c in rs.corners()]
    curves = np.array(curves + [central[:, 1]])
    return np.column_stack([central, curves.min(axis=0), curves.max(axis=0)])


def electron_repolarization_rate(rs: RateSet) -> float:
    """Effective laser repolarization rate toward m_S = 0 (MHz).

    The slowest relaxation mode of the 7-level model that is visible in the
    excited-state (PL) population when starting from ground m_S = -1.
    """
    G = build_electron_rate_matrix(rs).generator
    w, V = np.linalg.eig(G)
    p0 = np.zeros(7)
    p0[2] = 1.0
    obs = np.zeros(7)
    obs[list(EXCITED)] = 1.0
    weight = np.abs((obs @ V) * np.linalg.solve(V, p0))
    rates = -w.real
    visible = (rates > 1e-9) & (weight > 1e-9 * weight.max())
    if not np.any(visible):
        return 0.0
    return float(rates[visible].min())


def k_las_for_gamma(gamma_las: float, rs: RateSet, bracket=(1e-6, 1e3)) -> float:
    """Pumping rate k_Las that yields the requested repolarization rate."""
    f = lambda k: electron_repolarization_rate(rs.with_k_las(k)) - gamma_las
    return float(brentq(f, *bracket, xtol=1e-12, rtol=1e-12))
