"""21-level Lindblad dynamics of the optical cycle with electron-nuclear coherences.

States use the bare product basis: ground |m_S, m_I> (0-8), excited
|m_S, m_I> (9-17), metastable |m_I> (18-20). Density matrices are vectorised
column-major, so vec(A X B) = kron(B.T, A) vec(X).

The Liouvillian is time independent, so evolution defaults to exact spectral
propagation exp(L t) = V exp(w t) V^-1 instead of adaptive stepping through
GHz-scale coherent phases.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg as sla
from scipy.integrate import solve_ivp

from .errors import (AmbiguousLabeling, DimensionMismatch, FitFailure, IntegratorFailure,
                     InvalidInitialState)
from .fitting import fit_exp_decay
from .params import FieldConfig, NvParams
from .photophysics import (RATE_NAMES, RateSet, build_electron_rate_matrix,
                           electron_repolarization_rate, extend_to_nuclear, k_las_for_gamma)
from .spin import (EigenSystem, build_excited_hamiltonian, build_ground_hamiltonian,
                   build_metastable_hamiltonian, diagonalize, label_by_continuation)

N_LEVELS = 21
GROUND = slice(0, 9)
EXCITED = slice(9, 18)
METASTABLE = slice(18, 21)
TWO_PI = 2.0 * math.pi
COND_LIMIT = 1e8


@dataclass(frozen=True)
class JumpOperator:
    """Incoherent transition src -> dst at ``rate``: L = sqrt(rate) |dst><src|."""

    rate: float
    src: int
    dst: int

    def __post_init__(self):
        if self.rate < 0:
            raise ValueError("jump rate must be >= 0")
        if self.src == self.dst:
            raise ValueError("jump must connect two different states")

    def matrix(self, n: int = N_LEVELS) -> np.ndarray:
        L = np.zeros((n, n), dtype=complex)
        L[self.dst, self.src] = math.sqrt(self.rate)
        return L


@dataclass(frozen=True)
class LindbladModel:
    H: np.ndarray
    jumps: tuple
    params: NvParams
    field: FieldConfig
    rates: RateSet
    ground: EigenSystem
    metastable: str = "nuclear"

    @property
    def dim(self) -> int:
        return self.H.shape[0]

    def jump_matrices(self) -> list[np.ndarray]:
        return [j.matrix(self.dim) for j in self.jumps]

    def liouvillian(self) -> np.ndarray:
        return liouvillian(self.H, self.jump_matrices())

    def ground_state(self, label) -> np.ndarray:
        """Pure density matrix of the labeled ground eigenstate ``label``."""
        psi = np.zeros(self.dim, dtype=complex)
        psi[GROUND] = self.ground.vector(tuple(label))
        return np.outer(psi, psi.conj())


def _ground_eig(params, field):
    try:
        return diagonalize(build_ground_hamiltonian(params, field))
    except AmbiguousLabeling:
        return label_by_continuation(lambda f: build_ground_hamiltonian(params, f), field)


def build_model(params: NvParams, field: FieldConfig, rs: RateSet,
                metastable: str = "nuclear") -> LindbladModel:
    """Block Hamiltonian plus the 36 nuclear-spin preserving jump operators."""
    Hg = build_ground_hamiltonian(params, field).matrix
    He = build_excited_hamiltonian(params, field).matrix
    Hm = build_metastable_hamiltonian(params, field, mixing=(metastable == "nuclear")).matrix
    H = sla.block_diag(Hg, He, Hm)
    K = extend_to_nuclear(build_electron_rate_matrix(rs)).rates
    src, dst = np.nonzero(K)
    jumps = tuple(JumpOperator(float(K[a, b]), int(a), int(b)) for a, b in zip(src, dst))
    return LindbladModel(H, jumps, params, field, rs, _ground_eig(params, field), metastable)


def liouvillian(H: np.ndarray, jumps: Sequence[np.ndarray]) -> np.ndarray:
    """Superoperator of d rho/dt = -i [2 pi H, rho] + sum D[L] rho (column-major vec)."""
    H = np.asarray(H, dtype=complex)
    n = H.shape[0]
    eye = np.eye(n)
    Hw = TWO_PI * H
    L = -1j * (np.kron(eye, Hw) - np.kron(Hw.T, eye))
    for J in jumps:
        J = np.asarray(J, dtype=complex)
        if J.shape != (n, n):
            raise DimensionMismatch(f"jump operator shape {J.shape} != {(n, n)}")
        JdJ = J.conj().T @ J
        L += np.kron(J.conj(), J) - 0.5 * np.kron(eye, JdJ) - 0.5 * np.kron(JdJ.T, eye)
    return L


def vec(rho: np.ndarray) -> np.ndarray:
    return np.asarray(rho).reshape(-1, order="F")


def unvec(v: np.ndarray, n: int) -> np.ndarray:
    return np.asarray(v).reshape(n, n, order="F")


class Propagator:
    """exp(L t) for a constant Liouvillian via its eigen-decomposition.

    Falls back to dense matrix exponentials when the eigenvector matrix is
    too ill-conditioned to trust.
    """

    def __init__(self, L: np.ndarray):
        self.L = np.asarray(L, dtype=complex)
        self.n = int(round(math.sqrt(self.L.shape[0])))
        w, V = np.linalg.eig(self.L)
        self.cond = float(np.linalg.cond(V))
        self.spectral = self.cond < COND_LIMIT
        self.w, self.V = w, V
        self._lu = sla.lu_factor(V) if self.spectral else None

    @property
    def rates(self) -> np.ndarray:
        """Relaxation rates -Re(w), ascending."""
        return np.sort(-self.w.real)

    def apply(self, rho0: np.ndarray, times) -> np.ndarray:
        v0 = vec(rho0)
        times = np.asarray(times, dtype=float)
        if self.spectral:
            c = sla.lu_solve(self._lu, v0)
            out = (self.V @ (np.exp(np.outer(self.w, times)) * c[:, None])).T
        else:
            out = _expm_steps(self.L, v0, times)
        rhos = np.array([unvec(v, self.n) for v in out])
        # rounding in GHz-scale phases leaves an anti-Hermitian residue ~1e-10
        return 0.5 * (rhos + rhos.conj().transpose(0, 2, 1))


def _expm_steps(L, v0, times):
    out, v, t_prev = [], v0, 0.0
    cache = {}
    for t in times:
        dt = float(t - t_prev)
        key = round(dt, 12)
        if key not in cache:
            cache[key] = sla.expm(L * dt)
        v = cache[key] @ v
        out.append(v)
        t_prev = t
    return np.array(out)


def validate_density_matrix(rho: np.ndarray, n: int | None = None, tol: float = 1e-8) -> np.ndarray:
    rho = np.asarray(rho, dtype=complex)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1] or (n is not None and rho.shape[0] != n):
        raise InvalidInitialState(f"density matrix has shape {rho.shape}, expected {(n, n)}")
    if np.max(np.abs(rho - rho.conj().T)) > 1e-10:
        raise InvalidInitialState("density matrix is not Hermitian")
    if abs(np.trace(rho) - 1.0) > 1e-10:
        raise InvalidInitialState(f"trace is {np.trace(rho).real:.12g}, not 1")
    if np.linalg.eigvalsh(rho).min() < -tol:
        raise InvalidInitialState("density matrix has a negative eigenvalue")
    return rho


def evolve(model, rho0: np.ndarray, t_grid, method: str = "spectral",
           rtol: float = 1e-10, atol: float = 1e-12) -> np.ndarray:
    """Density matrices at each time of ``t_grid`` (us, ascending from 0).

    ``model`` is a LindbladModel, a Liouvillian matrix or a Propagator.
    ``method`` is ``"spectral"`` (default), ``"expm"`` (dense matrix
    exponential per time point, slow but independent) or ``"ode"`` (DOP853).
    """
    if isinstance(model, Propagator):
        prop, L = model, model.L
    else:
        L = model.liouvillian() if isinstance(model, LindbladModel) else np.asarray(model)
        prop = None
    n = int(round(math.sqrt(L.shape[0])))
    rho0 = validate_density_matrix(rho0, n)
    t = np.asarray(t_grid, dtype=float)
    if t.size and (t[0] < 0 or np.any(np.diff(t) < 0)):
        raise ValueError("t_grid must be ascending and start at or after 0")
    if method == "spectral":
        return (prop or Propagator(L)).apply(rho0, t)
    if method == "expm":
        return np.array([unvec(sla.expm(L * ti) @ vec(rho0), n) for ti in t])
    if method == "ode":
        sol = solve_ivp(lambda _, y: L @ y, (0.0, float(t[-1]) if t.size else 0.0), vec(rho0),
                        method="DOP853", t_eval=t, rtol=rtol, atol=atol)
        if not sol.success:
            raise IntegratorFailure(sol.message)
        return np.array([unvec(sol.y[:, k], n) for k in range(len(t))])
    raise ValueError(f"unknown method {method!r}")


def steady_state(L: np.ndarray) -> np.ndarray:
    """Density matrix spanning the Liouvillian null space (smallest singular vector)."""
    n = int(round(math.sqrt(L.shape[0])))
    _, _, vh = np.linalg.svd(L)
    rho = unvec(vh[-1].conj(), n)
    rho = rho / np.trace(rho)
    return 0.5 * (rho + rho.conj().T)


def observable_p_exc(rho: np.ndarray) -> float:
    """Total excited-state population (proportional to PL)."""
    return float(np.trace(np.asarray(rho)[EXCITED, EXCITED]).real)


def labeled_population(rho: np.ndarray, ground: EigenSystem, label) -> float:
    v = ground.vector(tuple(label))
    return float(np.real(v.conj() @ np.asarray(rho)[GROUND, GROUND] @ v))


def observable_p_signal(rho: np.ndarray, ground: EigenSystem, pair=((0, 0), (-1, 0))) -> float:
    """Population difference between two labeled ground eigenstates."""
    a, b = pair
    return labeled_population(rho, ground, a) - labeled_population(rho, ground, b)


def nuclear_populations(rho: np.ndarray, ground: EigenSystem) -> np.ndarray:
    """Ground populations summed over m_S per nuclear label (+1, 0, -1), normalised."""
    pops = np.array([labeled_population(rho, ground, (ms, mi))
                     for mi in (1, 0, -1) for ms in (1, 0, -1)]).reshape(3, 3).sum(axis=1)
    return pops / pops.sum()


@dataclass
class DepolarizationResult:
    gamma_0: float
    gamma_plus1: float
    horizon: float
    fits: dict
    flags: dict = field(default_factory=dict)
    traces: dict = field(default_factory=dict)

    @property
    def ratio(self) -> float:
        return self.gamma_0 / self.gamma_plus1 if self.gamma_plus1 > 0 else float("nan")

    def to_dict(self) -> dict:
        return {"gamma_0": self.gamma_0, "gamma_plus1": self.gamma_plus1, "ratio": self.ratio,
                "horizon_us": self.horizon, "flags": dict(self.flags),
                "fits": {k: v.to_dict() for k, v in self.fits.items()}}


SIGNAL_PAIRS = {(0, 0): ((0, 0), (-1, 0)), (0, 1): ((0, 1), (-1, 1))}


def default_horizon(prop: Propagator, rs: RateSet) -> float:
    """Fit horizon (us) for nuclear depolarization.

    Three lifetimes of the slowest nuclear relaxation mode of the Liouvillian
    (rates between 1e-9 k_Las and half the electron repolarization rate),
    capped at 20 / (0.08 gamma_las).
    """
    g_las = electron_repolarization_rate(rs)
    cap = 20.0 / (0.08 * g_las)
    rates = prop.rates
    nuclear = rates[(rates > 1e-9 * rs.k_Las) & (rates < 0.5 * g_las)]
    if nuclear.size == 0:
        return cap
    return min(3.0 / float(nuclear.min()), cap)


def depolarization_rates(model: LindbladModel, inits=((0, 0), (0, 1)), horizon: float | None = None,
                         n_samples: int = 400, discard: float = 0.05,
                         prop: Propagator | None = None, strict: bool = False) -> DepolarizationResult:
    """Nuclear depolarization rates from exponential fits of P_signal(t).

    Each labeled initial state evolves under the laser; the first ``discard``
    fraction of the horizon (excited-state filling) is dropped before fitting
    A exp(-gamma t) + C. Poor fits are reported through ``flags`` (or raised
    when ``strict``).
    """
    prop = prop or Propagator(model.liouvillian())
    T = default_horizon(prop, model.rates) if horizon is None else float(horizon)
    t = np.linspace(0.0, T, n_samples)
    keep = t >= discard * T
    gammas, fits, flags, traces = [], {}, {}, {}
    for init in inits:
        pair = SIGNAL_PAIRS[tuple(init)]
        rhos = prop.apply(model.ground_state(init), t)
        sig = np.array([observable_p_signal(r, model.ground, pair) for r in rhos])
        key = f"{init[0]},{init[1]:+d}"
        traces[key] = (t, sig)
        try:
            fit = fit_exp_decay(t[keep], sig[keep])
            flags[f"fit_failed[{key}]"] = False
        except FitFailure as exc:
            if strict or exc.result is None:
                raise
            fit = exc.result
            flags[f"fit_failed[{key}]"] = True
        flags[f"degenerate[{key}]"] = bool(fit.flags.get("degenerate", False))
        fits[key] = fit
        gammas.append(fit.params["gamma"])
    return DepolarizationResult(gammas[0], gammas[1], T, fits, flags, traces)


def depolarization_sweep(params: NvParams, field: FieldConfig, rs: RateSet, gamma_las_grid,
                         **kwargs) -> np.ndarray:
    """Rows (gamma_las, gamma_0, gamma_plus1) with k_Las set from each gamma_las."""
    rows = []
    for g in gamma_las_grid:
        r = rs.with_k_las(k_las_for_gamma(float(g), rs))
        res = depolarization_rates(build_model(params, field, r), **kwargs)
        rows.append((float(g), res.gamma_0, res.gamma_plus1))
    return np.array(rows).reshape(-1, 3)


def depolarization_envelope(params: NvParams, field: FieldConfig, rs: RateSet, gamma_las_grid,
                            a_perp_es=(20.0, 26.0), alternative: RateSet | None = None,
                            corners: str = "axes", **kwargs) -> dict:
    """Min/max depolarization-rate bands per uncertainty source.

    Regions: ``"a_perp_es"`` (excited transverse hyperfine range),
    ``"rate_set"`` (central vs ``alternative`` rate set) and ``"rate_errors"``
    (within-set +-sigma, ``corners="full"`` for all 32 corners or ``"axes"``
    for one rate at a time). Each value is an array with rows
    (gamma_las, lo_0, hi_0, lo_plus1, hi_plus1, lo_ratio, hi_ratio).
    """
    central = depolarization_sweep(params, field, rs, gamma_las_grid, **kwargs)
    variants = {"a_perp_es": [], "rate_set": [], "rate_errors": []}
    for a in a_perp_es:
        variants["a_perp_es"].append(
            depolarization_sweep(params.replace(A_perp_es=float(a)), field, rs, gamma_las_grid, **kwargs))
    if alternative is not None:
        variants["rate_set"].append(depolarization_sweep(params, field, alternative, gamma_las_grid, **kwargs))
    for r in _error_sets(rs, corners):
        variants["rate_errors"].append(depolarization_sweep(params, field, r, gamma_las_grid, **kwargs))
    out = {"central": central}
    for name, curves in variants.items():
        stack = np.array([central] + curves)
        g0, g1 = stack[:, :, 1], stack[:, :, 2]
        ratio = np.divide(g0, g1, out=np.full_like(g0, np.nan), where=g1 > 0)
        out[name] = np.column_stack([central[:, 0], g0.min(0), g0.max(0), g1.min(0), g1.max(0),
                                     ratio.min(0), ratio.max(0)])
    return out


def _error_sets(rs: RateSet, corners: str) -> list[RateSet]:
    if not any(rs.sigma):
        return []
    if corners == "full":
        return rs.corners()
    if corners != "axes":
        raise ValueError(f"corners must be 'full' or 'axes', got {corners!r}")
    out = []
    for name, s in zip(RATE_NAMES, rs.sigma):
        for sign in (-1.0, 1.0):
            out.append(replace(rs, **{name: max(getattr(rs, name) + sign * s, 0.0)}))
    return out
