"""Microwave transition strengths, line families and synthetic ODMR spectra.

Line families within a branch (m_S = 0 -> m_S = +1 or -1):

=================  =========================================
family             selection
=================  =========================================
``1``, ``2``, ``3``  Delta m_I = 0, ascending frequency
``a`` .. ``d``       |Delta m_I| = 1, ascending frequency
``other``          |Delta m_I| = 2
=================  =========================================

Tags carry the branch sign, e.g. ``"a-"`` or ``"2+"``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from .errors import AmbiguousLabeling, DegenerateDenominator, EmptyTable, IndexOutOfRange
from .params import FieldConfig, NvParams
from .spin import (EigenSystem, build_ground_hamiltonian, diagonalize, electron_operator,
                   label_by_continuation)
from .traces import SpectrumTrace

SPIN_PRESERVING = ("1", "2", "3")
SPIN_EXCHANGING = ("a", "b", "c", "d")
DENOMINATOR_FLOOR = 1e-9
FWHM_TO_SIGMA = 1.0 / (2.0 * np.sqrt(2.0 * np.log(2.0)))


@dataclass(frozen=True)
class TransitionRecord:
    from_label: tuple
    to_label: tuple
    frequency: float
    strength_x: float
    strength_y: float
    family: str

    def strength(self, axis="x") -> float:
        if axis == "x":
            return self.strength_x
        if axis == "y":
            return self.strength_y
        # in-plane angles need the complex matrix elements: use transition_strength
        raise ValueError(f"records store x/y strengths only, got axis {axis!r}")

    def to_dict(self) -> dict:
        return {
            "from": list(self.from_label),
            "to": list(self.to_label),
            "frequency_mhz": self.frequency,
            "strength_x": self.strength_x,
            "strength_y": self.strength_y,
            "family": self.family,
        }


def transition_strength(eig: EigenSystem, i: int, j: int, axis="x") -> float:
    """|<i| S_axis (x) 1 |j>| for eigenindices i, j of a 9-level eigensystem."""
    n = eig.dim
    for k in (i, j):
        if not (0 <= int(k) < n):
            raise IndexOutOfRange(f"eigenindex {k} outside 0..{n - 1}")
    if i > j:
        i, j = j, i                     # bitwise symmetric under exchange
    op = electron_operator(axis, nuclear=(n == 9))
    return float(abs(eig.vectors[:, i].conj() @ op @ eig.vectors[:, j]))


def rabi_frequency(strength: float, B_uw: float, params: NvParams | None = None) -> float:
    """Rabi frequency (MHz) gamma_e * B_uw * strength."""
    if strength < 0 or B_uw < 0:
        raise ValueError("strength and B_uw must be non-negative")
    ge = (params or NvParams()).gamma_e
    return ge * B_uw * strength


def transition_table(eig: EigenSystem, branch: str = "-") -> list[TransitionRecord]:
    """All nine m_S=0 -> m_S=+-1 transitions of a labeled ground eigensystem."""
    if eig.labels is None:
        raise AmbiguousLabeling("transition_table needs a labeled eigensystem")
    if branch not in ("+", "-"):
        raise ValueError(f"branch must be '+' or '-', got {branch!r}")
    ms_to = 1 if branch == "+" else -1
    sx = electron_operator("x")
    sy = electron_operator("y")
    V = eig.vectors
    Mx = np.abs(V.conj().T @ sx @ V)
    My = np.abs(V.conj().T @ sy @ V)

    raw = []
    for i, (ms_i, mi_i) in enumerate(eig.labels):
        if ms_i != 0:
            continue
        for j, (ms_j, mi_j) in enumerate(eig.labels):
            if ms_j != ms_to:
                continue
            raw.append((abs(eig.energies[j] - eig.energies[i]), i, j, abs(mi_j - mi_i)))

    records = []
    for dmi, names in ((0, SPIN_PRESERVING), (1, SPIN_EXCHANGING), (2, None)):
        group = sorted((r for r in raw if r[3] == dmi), key=lambda r: r[0])
        for k, (freq, i, j, _) in enumerate(group):
            fam = (names[k] + branch) if names else "other" + branch
            records.append(TransitionRecord(eig.labels[i], eig.labels[j], float(freq),
                                            float(Mx[i, j]), float(My[i, j]), fam))
    return sorted(records, key=lambda r: r.frequency)


def find_family(table: Sequence[TransitionRecord], family: str) -> TransitionRecord:
    hits = [r for r in table if r.family == family]
    if not hits:
        raise KeyError(f"no transition of family {family!r}")
    return hits[0]


def ground_eigensystem(params: NvParams, field: FieldConfig, **kwargs) -> EigenSystem:
    """Labeled ground eigensystem, falling back to continuation labeling."""
    try:
        return diagonalize(build_ground_hamiltonian(params, field, **kwargs))
    except AmbiguousLabeling:
        return label_by_continuation(lambda f: build_ground_hamiltonian(params, f, **kwargs), field)


def strength_ratio_curve(params: NvParams, B: float, family_num: str, family_den: str,
                         theta_grid: Iterable[float], axis="x") -> np.ndarray:
    """Rows (theta, strength(num)/strength(den)) along a theta grid (rad)."""
    branch = family_num[-1]
    if family_den[-1] != branch:
        raise ValueError("numerator and denominator must belong to the same branch")
    rows = []
    for th in theta_grid:
        eig = ground_eigensystem(params, FieldConfig(B, float(th)))
        table = transition_table(eig, branch)
        num = find_family(table, family_num)
        den = find_family(table, family_den)
        s_num = _record_strength(eig, num, axis)
        s_den = _record_strength(eig, den, axis)
        if s_den < DENOMINATOR_FLOOR:
            raise DegenerateDenominator(
                f"{family_den} strength {s_den:.3g} vanishes at theta={float(th):.6g} rad")
        rows.append((float(th), s_num / s_den))
    return np.array(rows, dtype=float).reshape(-1, 2)


def _record_strength(eig: EigenSystem, rec: TransitionRecord, axis) -> float:
    if axis in ("x", "y"):
        return rec.strength(axis)
    return transition_strength(eig, eig.index_of(rec.from_label), eig.index_of(rec.to_label), axis)


def synth_odmr(table: Sequence[TransitionRecord], linewidth_fwhm: float, contrast_scale: float,
               drive_axis="x", axis_grid: Sequence[float] = (),
               weights: Sequence[float] | None = None) -> SpectrumTrace:
    """Gaussian-line ODMR spectrum normalised to an off-resonant baseline of 1.

    Each line has depth ``contrast_scale * w_k * s_k**2 / max(s**2)`` where s is
    the drive-axis strength and w_k an optional per-line weight (defaults to 1;
    used for population-weighted read-out spectra).
    """
    if linewidth_fwhm <= 0:
        raise ValueError("linewidth must be positive")
    if not (0 < contrast_scale <= 1):
        raise ValueError("contrast_scale must lie in (0, 1]")
    if len(table) == 0:
        raise EmptyTable("no transitions to synthesize")
    grid = np.asarray(axis_grid, dtype=float)
    s2 = np.array([r.strength(drive_axis) ** 2 for r in table])
    peak = s2.max()
    amp = s2 / peak if peak > 0 else np.zeros_like(s2)
    if weights is not None:
        amp = amp * np.asarray(weights, dtype=float)
    sigma = linewidth_fwhm * FWHM_TO_SIGMA
    signal = np.ones_like(grid)
    for r, a in zip(table, amp):
        signal -= contrast_scale * a * np.exp(-0.5 * ((grid - r.frequency) / sigma) ** 2)
    meta = {"linewidth_fwhm_mhz": float(linewidth_fwhm), "contrast_scale": float(contrast_scale),
            "drive_axis": str(drive_axis), "lines": len(table)}
    return SpectrumTrace(grid, np.clip(signal, 0.0, None), meta)


def resolved_lines(table: Sequence[TransitionRecord], merge_within: float, min_intensity: float = 1e-3,
                   drive_axis="x") -> list[dict]:
    """Group visible transitions into the lines an ODMR scan can separate.

    Transitions with relative intensity s**2 / max(s**2) below
    ``min_intensity`` are dropped; neighbours closer than ``merge_within``
    (MHz) merge into one line at their intensity-weighted mean frequency.
    """
    if len(table) == 0:
        raise EmptyTable("no transitions to group")
    s2 = np.array([r.strength(drive_axis) ** 2 for r in table])
    if s2.max() <= 0:
        return []
    rel = s2 / s2.max()
    visible = sorted((r.frequency, w, r.family) for r, w in zip(table, rel) if w >= min_intensity)
    groups: list[list] = []
    for item in visible:
        if groups and item[0] - groups[-1][-1][0] < merge_within:
            groups[-1].append(item)
        else:
            groups.append([item])
    lines = []
    for g in groups:
        w = np.array([x[1] for x in g])
        f = np.array([x[0] for x in g])
        lines.append({"frequency_mhz": float(w @ f / w.sum()), "intensity": float(w.sum()),
                      "families": [x[2] for x in g]})
    return lines
