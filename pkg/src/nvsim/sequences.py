"""Coherently driven protocols: Rabi traces, CPT in a Lambda system, nuclear pumping.

Microwave tones act in a rotating frame: every ground eigenstate k gets a
frame frequency f_k, the Hamiltonian becomes H - sum_k f_k |k><k| and each
tone keeps only the couplings whose frame frequencies differ by the tone
frequency (rotating-wave approximation). Jump operators are split into
their frame-frequency components, which is the secular form of the
dissipator in that frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.linalg as sla

from .errors import FitFailure, NonUniqueSteadyState
from .fitting import FitResult, fit_lorentzian, t2star_from_fwhm
from .lindblad import (GROUND, LindbladModel, Propagator, labeled_population, liouvillian,
                       nuclear_populations, steady_state, unvec)
from .spin import electron_operator
from .traces import SpectrumTrace, TimeTrace
from .transitions import find_family, synth_odmr, transition_table

TWO_PI = 2.0 * math.pi
DEFAULT_GAMMA2_FWHM = 0.237          # MHz, Gaussian ODMR linewidth
STARK_THRESHOLD = 0.05


@dataclass(frozen=True)
class DriveTone:
    """Microwave tone on one transition.

    ``target`` is a family tag (``"a-"``) or a pair of ground labels
    ``((m_S, m_I), (m_S', m_I'))``; ``rabi`` is Omega/2pi in MHz.
    """

    target: object
    rabi: float
    detuning: float = 0.0
    window: tuple = (0.0, math.inf)

    def __post_init__(self):
        if self.rabi < 0:
            raise ValueError("Rabi frequency must be >= 0")
        if not self.window[0] <= self.window[1]:
            raise ValueError("tone window must be ordered")


# -- two-level Rabi -----------------------------------------------------------

def rabi_trace(omega: float, delta: float = 0.0, gamma_dephase: float = 0.0, t_grid=()) -> TimeTrace:
    """Excited-state population of a driven two-level system with pure dephasing.

    Bloch equations with Rabi frequency ``omega`` and detuning ``delta`` (both
    Omega/2pi in MHz) and coherence decay rate ``gamma_dephase`` (1/us). On
    resonance with weak dephasing the oscillation envelope decays at
    gamma_dephase / 2.
    """
    if omega <= 0:
        raise ValueError("omega must be positive")
    W, D, g = TWO_PI * omega, TWO_PI * delta, gamma_dephase
    # Bloch vector (u, v, w), w = -1 in the ground state
    A = np.array([[-g, D, 0.0], [-D, -g, -W], [0.0, W, 0.0]])
    r0 = np.array([0.0, 0.0, -1.0])
    t = np.asarray(t_grid, dtype=float)
    w, V = np.linalg.eig(A)
    c = np.linalg.solve(V, r0)
    r = (V @ (np.exp(np.outer(w, t)) * c[:, None])).real
    pe = 0.5 * (1.0 + r[2])
    meta = {"omega_mhz": omega, "delta_mhz": delta, "gamma_dephase": gamma_dephase}
    return TimeTrace(t, pe, meta, observable="p_excited")


# -- Lambda model -------------------------------------------------------------

G1, G2, E = 0, 1, 2


def _ketbra(a, b, n=3):
    m = np.zeros((n, n), dtype=complex)
    m[a, b] = 1.0
    return m


@dataclass(frozen=True)
class LambdaModel:
    """Three-level Lambda system g1 = |0,0>, g2 = |0,-1>, e = |-1,-1>.

    Rates in 1/us, Rabi frequencies and detunings as Omega/2pi in MHz.
    ``gamma_las`` returns e to g1 and g2 with equal branching;
    ``gamma_e2g1`` is an extra e -> g1 channel, ``gamma_g2g1`` a symmetric
    g1 <-> g2 exchange, ``dephasing_ge`` the decay of both optical-type
    (g-e) coherences and ``dephasing_gg`` an extra g1-g2 dephasing.
    """

    omega_a: float
    omega_1: float
    gamma_las: float
    gamma_e2g1: float = 0.0
    gamma_g2g1: float = 0.0
    dephasing_ge: float = 0.0
    dephasing_gg: float = 0.0
    delta_1: float = 0.0

    def __post_init__(self):
        for name in ("omega_a", "omega_1", "gamma_las", "gamma_e2g1", "gamma_g2g1",
                     "dephasing_ge", "dephasing_gg"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")

    @classmethod
    def from_fractions(cls, omega_a, omega_1, gamma_las, e2g1_fraction=0.1, g2g1_fraction=0.05,
                       dephasing_ge=None, dephasing_gg=0.0, delta_1=0.0) -> "LambdaModel":
        """Ground-state rates as fractions of gamma_las; g-e dephasing defaults to 1/T2*."""
        if dephasing_ge is None:
            dephasing_ge = 1.0 / t2star_from_fwhm(DEFAULT_GAMMA2_FWHM)
        return cls(omega_a, omega_1, gamma_las, e2g1_fraction * gamma_las,
                   g2g1_fraction * gamma_las, dephasing_ge, dephasing_gg, delta_1)

    def with_(self, **changes) -> "LambdaModel":
        return replace(self, **changes)

    def hamiltonian(self, delta: float) -> np.ndarray:
        H = np.zeros((3, 3), dtype=complex)
        H[G1, E] = H[E, G1] = self.omega_a / 2
        H[G2, E] = H[E, G2] = self.omega_1 / 2
        H[E, E] = -self.delta_1
        H[G2, G2] = delta
        return H

    def jumps(self) -> list[np.ndarray]:
        ops = []
        if self.gamma_las > 0:
            ops += [math.sqrt(self.gamma_las / 2) * _ketbra(G1, E),
                    math.sqrt(self.gamma_las / 2) * _ketbra(G2, E)]
        if self.gamma_e2g1 > 0:
            ops.append(math.sqrt(self.gamma_e2g1) * _ketbra(G1, E))
        if self.gamma_g2g1 > 0:
            ops += [math.sqrt(self.gamma_g2g1) * _ketbra(G1, G2),
                    math.sqrt(self.gamma_g2g1) * _ketbra(G2, G1)]
        if self.dephasing_ge > 0:
            ops.append(math.sqrt(2 * self.dephasing_ge) * _ketbra(E, E))
        if self.dephasing_gg > 0:
            ops.append(math.sqrt(2 * self.dephasing_gg) * _ketbra(G2, G2))
        return ops

    def steady_state(self, delta: float) -> np.ndarray:
        L = liouvillian(self.hamiltonian(delta), self.jumps())
        s = np.linalg.svd(L, compute_uv=False)
        if np.sum(s <= 1e-12 * s[0]) > 1:
            raise NonUniqueSteadyState("Lambda model has more than one steady state")
        return steady_state(L)

    def excited_population(self, delta: float) -> float:
        return float(self.steady_state(delta)[E, E].real)


def dark_state(model: LambdaModel) -> np.ndarray:
    """Normalised state Omega_1 |g1> - Omega_a |g2>, decoupled from both drives."""
    v = np.array([model.omega_1, -model.omega_a, 0.0], dtype=complex)
    return v / np.linalg.norm(v)


def cpt_excited_population(model: LambdaModel, delta_grid) -> np.ndarray:
    return np.array([model.excited_population(float(d)) for d in delta_grid])


def cpt_spectrum(model: LambdaModel, delta_grid, odmr_depth: float = 0.1) -> SpectrumTrace:
    """ODMR signal versus two-photon detuning.

    The excited population is referenced to the single-tone level (omega_1 =
    0, where no Lambda interference exists) so the signal approaches the ODMR
    dip ``1 - odmr_depth`` once |delta| exceeds the one-photon width, and the
    CPT feature rises toward 1.
    """
    grid = np.asarray(delta_grid, dtype=float)
    pe = cpt_excited_population(model, grid)
    p_ref = model.with_(omega_1=0.0).excited_population(0.0)
    signal = 1.0 - odmr_depth * pe / p_ref if p_ref > 0 else np.ones_like(pe)
    meta = {"omega_a_mhz": model.omega_a, "omega_1_mhz": model.omega_1,
            "gamma_las": model.gamma_las, "gamma_e2g1": model.gamma_e2g1,
            "gamma_g2g1": model.gamma_g2g1, "dephasing_ge": model.dephasing_ge,
            "odmr_depth": odmr_depth, "p_ref": p_ref}
    return SpectrumTrace(grid, np.clip(signal, 0.0, None), meta)


def _flanked_window(y):
    i = int(np.argmin(y))
    lo = i
    while lo > 0 and y[lo - 1] >= y[lo]:
        lo -= 1
    hi = i
    while hi < len(y) - 1 and y[hi + 1] >= y[hi]:
        hi += 1
    return lo, hi


def fit_cpt(model: LambdaModel, delta_grid) -> FitResult:
    """Lorentzian fit of the CPT dip in the excited population.

    Only the region between the local maxima on either side of the dip is
    fitted, so the broad one-photon background does not bias the width.
    FWHM is in MHz; contrast is the fractional dip depth.
    """
    grid = np.asarray(delta_grid, dtype=float)
    pe = cpt_excited_population(model, grid)
    lo, hi = _flanked_window(pe)
    return fit_lorentzian(grid[lo:hi + 1], pe[lo:hi + 1])


def cpt_scaling(model: LambdaModel, sweep: str, values, delta_grid=None,
                rates_follow_gamma: bool = True) -> list[dict]:
    """FWHM and contrast of the CPT dip along a sweep of ``omega_1`` or ``gamma_las``.

    With ``rates_follow_gamma`` the ground-state rates keep their ratio to
    gamma_las during a gamma_las sweep. Failed fits are tabulated with NaN.
    """
    if delta_grid is None:
        delta_grid = np.linspace(-0.06, 0.06, 601)
    rows = []
    for x in values:
        x = float(x)
        if x <= 0:
            raise ValueError("sweep values must be positive")
        if sweep == "omega_1":
            m = model.with_(omega_1=x)
        elif sweep == "gamma_las":
            scale = x / model.gamma_las
            m = model.with_(gamma_las=x)
            if rates_follow_gamma:
                m = m.with_(gamma_e2g1=model.gamma_e2g1 * scale, gamma_g2g1=model.gamma_g2g1 * scale)
        else:
            raise ValueError(f"sweep must be 'omega_1' or 'gamma_las', got {sweep!r}")
        try:
            fit = fit_cpt(m, delta_grid)
            rows.append({"x": x, "fwhm": fit["fwhm"], "contrast": fit["contrast"], "ok": True})
        except FitFailure:
            rows.append({"x": x, "fwhm": math.nan, "contrast": math.nan, "ok": False})
    return rows


# -- driven 21-level model ----------------------------------------------------

def _sx_eigen(model: LindbladModel) -> np.ndarray:
    V = model.ground.vectors
    return V.conj().T @ electron_operator("x") @ V


def resolve_target(model: LindbladModel, target) -> tuple[int, int]:
    """Ground eigenindices (from, to) of a family tag or label pair."""
    eig = model.ground
    if isinstance(target, str):
        tag = target.split("/")[0]
        rec = find_family(transition_table(eig, tag[-1]), tag)
        return eig.index_of(rec.from_label), eig.index_of(rec.to_label)
    a, b = target
    return eig.index_of(tuple(a)), eig.index_of(tuple(b))


def stark_shift(model: LindbladModel, pair: tuple[int, int], rabi: float, iterations: int = 5) -> float:
    """Second-order light shift (MHz) of the transition ``pair`` under its own tone.

    The tone also drives every other transition sharing the same frame
    coupling, most strongly the allowed (nuclear spin preserving) lines a few
    MHz away; those off-resonant couplings shift both levels. The shifted
    resonance is found by fixed-point iteration.
    """
    i, j = pair
    E = model.ground.energies
    M = _sx_eigen(model)
    s = abs(M[i, j])
    V = 0.5 * (rabi / s) * M
    ms_to = model.ground.labels[j][0]
    upper = [k for k, lab in enumerate(model.ground.labels) if lab[0] == ms_to]
    lower = [k for k in range(len(E)) if k not in upper]
    bare = E[j] - E[i]
    om = bare
    for _ in range(iterations):
        d_i = sum(abs(V[i, k]) ** 2 / (E[i] - (E[k] - om)) for k in upper if k != j)
        d_j = sum(abs(V[j, k]) ** 2 / ((E[j] - om) - E[k]) for k in lower if k != i)
        om = bare + d_j - d_i
    return float(om - bare)


def max_offresonant_ratio(model: LindbladModel, pair: tuple[int, int], rabi: float) -> float:
    """Largest |coupling| / |detuning| among the tone's off-resonant couplings."""
    i, j = pair
    E = model.ground.energies
    M = _sx_eigen(model)
    V = 0.5 * (rabi / abs(M[i, j])) * M
    om = E[j] - E[i]
    ms_to = model.ground.labels[j][0]
    worst = 0.0
    for k, lab in enumerate(model.ground.labels):
        for l, lab2 in enumerate(model.ground.labels):
            if lab[0] == 0 and lab2[0] == ms_to and (k, l) != (i, j):
                det = abs(E[l] - E[k] - om)
                if det > 0:
                    worst = max(worst, abs(V[k, l]) / det)
    return worst


@dataclass
class DrivenFrame:
    """Rotating-frame Liouvillian for tones acting on the ground manifold."""

    L: np.ndarray
    frame: np.ndarray          # frame frequency per ground eigenstate (MHz)
    projector_groups: dict
    model: LindbladModel

    def to_lab(self, rho: np.ndarray, t: float) -> np.ndarray:
        """Undo the frame rotation accumulated over a stage of length ``t``."""
        n = self.model.dim
        U = np.eye(n, dtype=complex)
        V = self.model.ground.vectors
        U[GROUND, GROUND] = V @ np.diag(np.exp(-1j * TWO_PI * self.frame * t)) @ V.conj().T
        return U @ rho @ U.conj().T


def driven_liouvillian(model: LindbladModel, tones: Sequence[tuple[tuple[int, int], float, float]],
                       frame: np.ndarray) -> DrivenFrame:
    """Build the rotating-frame Liouvillian.

    ``tones`` holds ((i, j), rabi, frequency) per tone, where rabi is the
    Rabi frequency on ground eigenstates i -> j. ``frame`` gives each ground
    eigenstate's frame frequency; a tone couples eigenstates k, l when
    frame[l] - frame[k] equals the tone frequency.
    """
    n = model.dim
    V = model.ground.vectors
    M = _sx_eigen(model)
    frame = np.asarray(frame, dtype=float)
    H = model.H.astype(complex).copy()
    Hg = np.diag(model.ground.energies - frame).astype(complex)
    for (i, j), rabi, freq in tones:
        amp = 0.5 * rabi / abs(M[i, j])
        for k in range(9):
            for l in range(9):
                if abs(frame[l] - frame[k] - freq) < 1e-9:
                    Hg[k, l] += amp * M[k, l]
                    Hg[l, k] += amp * M[l, k]
    H[GROUND, GROUND] = V @ Hg @ V.conj().T

    # projectors onto groups of equal frame frequency (non-ground states rotate at 0)
    groups = {}
    for k, f in enumerate(frame):
        key = round(float(f), 9)
        groups.setdefault(key, []).append(k)
    projectors = {}
    for key, idx in groups.items():
        P = np.zeros((n, n), dtype=complex)
        P[GROUND, GROUND] = V[:, idx] @ V[:, idx].conj().T
        projectors[key] = P
    rest = np.eye(n) - sum(projectors.values())
    projectors[0.0] = projectors.get(0.0, 0) + rest

    ops = []
    for J in model.jump_matrices():
        for fa, Pa in projectors.items():
            for fb, Pb in projectors.items():
                A = Pa @ J @ Pb
                if np.max(np.abs(A)) > 1e-14:
                    ops.append(A)
    return DrivenFrame(liouvillian(H, ops), frame, projectors, model)


def pump_frame(model: LindbladModel, tone: DriveTone, stark="auto") -> tuple[DrivenFrame, dict]:
    """Rotating-frame Liouvillian for a single pump tone (plus diagnostics)."""
    i, j = resolve_target(model, tone.target)
    E = model.ground.energies
    bare = E[j] - E[i]
    shift = 0.0
    ratio = max_offresonant_ratio(model, (i, j), tone.rabi) if tone.rabi > 0 else 0.0
    apply = (ratio > STARK_THRESHOLD) if stark == "auto" else bool(stark)
    if apply and tone.rabi > 0:
        shift = stark_shift(model, (i, j), tone.rabi)
    freq = bare + shift + tone.detuning
    ms_to = model.ground.labels[j][0]
    frame = np.array([freq if lab[0] == ms_to else 0.0 for lab in model.ground.labels])
    tones = [((i, j), tone.rabi, freq)] if tone.rabi > 0 else []
    info = {"pair": (model.ground.labels[i], model.ground.labels[j]), "bare_mhz": float(bare),
            "stark_shift_mhz": float(shift), "offresonant_ratio": float(ratio),
            "frequency_mhz": float(freq)}
    return driven_liouvillian(model, tones, frame), info


@dataclass
class SequenceResult:
    nuclear: np.ndarray                   # m_I = +1, 0, -1 populations after the last stage
    stages: dict = field(default_factory=dict)
    trace_error: float = 0.0
    readout: SpectrumTrace | None = None
    info: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"nuclear_populations": {"+1": float(self.nuclear[0]), "0": float(self.nuclear[1]),
                                        "-1": float(self.nuclear[2])},
                "stages": {k: [float(x) for x in v] for k, v in self.stages.items()},
                "trace_error": float(self.trace_error),
                "info": {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.info.items()}}


def polarization_sequence(model: LindbladModel, pump: DriveTone, durations=(100.0, 300.0, 100.0, 25.0),
                          read_linewidth: float = DEFAULT_GAMMA2_FWHM, read_contrast: float = 0.1,
                          read_grid=None, stark="auto", prop0: Propagator | None = None) -> SequenceResult:
    """Laser polarize -> laser + microwave pump -> laser repolarize -> read.

    The system starts in the laser-only steady state (long prior
    illumination). The read stage is not propagated; its ODMR spectrum is
    synthesised from the final nuclear populations.
    """
    if any(d < 0 for d in durations) or len(durations) not in (3, 4):
        raise ValueError("durations must be 3 or 4 non-negative values")
    t_pol, t_pump, t_rep = (float(d) for d in durations[:3])
    L0 = model.liouvillian()
    prop0 = prop0 or Propagator(L0)
    rho = steady_state(L0)
    stages, errors = {"initial": nuclear_populations(rho, model.ground)}, []

    rho = prop0.apply(rho, [t_pol])[0]
    stages["polarize"] = nuclear_populations(rho, model.ground)
    errors.append(abs(np.trace(rho) - 1))

    frame, info = pump_frame(model, pump, stark)
    rho = Propagator(frame.L).apply(rho, [t_pump])[0]
    rho = frame.to_lab(rho, t_pump)
    stages["pump"] = nuclear_populations(rho, model.ground)
    errors.append(abs(np.trace(rho) - 1))

    rho = prop0.apply(rho, [t_rep])[0]
    nuc = nuclear_populations(rho, model.ground)
    stages["repolarize"] = nuc
    errors.append(abs(np.trace(rho) - 1))

    table = transition_table(model.ground, "-")
    if read_grid is None:
        f = [r.frequency for r in table]
        read_grid = np.linspace(min(f) - 2.0, max(f) + 2.0, 1201)
    weights = [3.0 * nuc[1 - r.from_label[1]] for r in table]
    readout = synth_odmr(table, read_linewidth, read_contrast, "x", read_grid, weights)
    readout.metadata.update({"pump": str(pump.target), "pump_rabi_mhz": pump.rabi})
    info["durations_us"] = tuple(float(d) for d in durations)
    return SequenceResult(nuc, stages, float(max(errors)), readout, info)


def lambda_frame_21(model: LindbladModel, rabi_a: float, rabi_1: float, delta: float = 0.0) -> DrivenFrame:
    """Two-tone Lambda drive (a- and 1-) on the full 21-level model.

    Exploration only: no light-shift correction is applied.
    """
    ia, ja = resolve_target(model, "a-")
    i1, j1 = resolve_target(model, "1-")
    E = model.ground.energies
    wa = E[ja] - E[ia]
    w1 = E[j1] - E[i1] - delta
    frame = np.array([wa if lab[0] == -1 else 0.0 for lab in model.ground.labels])
    frame[i1] = wa - w1
    return driven_liouvillian(model, [((ia, ja), rabi_a, wa), ((i1, j1), rabi_1, w1)], frame)


def cpt_spectrum_21(model: LindbladModel, rabi_a: float, rabi_1: float, delta_grid) -> np.ndarray:
    """Steady-state excited population of the 21-level model versus two-photon detuning."""
    out = []
    for d in delta_grid:
        rho = steady_state(lambda_frame_21(model, rabi_a, rabi_1, float(d)).L)
        out.append(float(np.trace(rho[9:18, 9:18]).real))
    return np.array(out)
