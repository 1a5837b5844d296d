"""Field calibration: recover (B, theta) from the two electron-spin line frequencies.

The forward model is the hyperfine-free 3x3 electron Hamiltonian. The mean
and the splitting of the two lines form a 2x2 nonlinear system; level sets
of each give loci in the (B, theta) plane whose intersection seeds a damped
Newton solve. Angles are reported in [0, pi/2] (the frequencies are even
under theta -> -theta and theta -> pi - theta).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from .errors import EmptyLocus, IllConditioned, NoSolution
from .params import FieldConfig, NvParams
from .spin import build_electron_hamiltonian

B_MAX = 500.0
THETA_MAX = math.pi / 2
DET_THRESHOLD = 1e-3        # |det J| in MHz^2 / (G rad)
TOL = 1e-10                 # residual target per component (MHz)
MAX_ITER = 100


@dataclass(frozen=True)
class CalibrationInput:
    """Measured |0> <-> |+-1> line frequencies (MHz) with 1-sigma uncertainties."""

    E_plus: float
    E_minus: float
    sigma_plus: float = 0.0
    sigma_minus: float = 0.0

    def __post_init__(self):
        if not (self.E_plus >= self.E_minus > 0):
            raise ValueError("need E_plus >= E_minus > 0")
        if self.sigma_plus < 0 or self.sigma_minus < 0:
            raise ValueError("uncertainties must be >= 0")

    @property
    def E_mean(self) -> float:
        return 0.5 * (self.E_plus + self.E_minus)

    @property
    def E_diff(self) -> float:
        return self.E_plus - self.E_minus

    @property
    def covariance(self) -> np.ndarray:
        """Covariance of (E_mean, E_diff) from independent line errors."""
        T = np.array([[0.5, 0.5], [1.0, -1.0]])
        return T @ np.diag([self.sigma_plus ** 2, self.sigma_minus ** 2]) @ T.T


def line_frequencies(params: NvParams, B: float, theta: float) -> tuple[float, float]:
    """(E_plus, E_minus): upper and lower transition from the lowest level."""
    w = np.linalg.eigvalsh(build_electron_hamiltonian(params, FieldConfig(B, theta)).matrix)
    return float(w[2] - w[0]), float(w[1] - w[0])


def forward_frequencies(params: NvParams, B: float, theta: float) -> tuple[float, float]:
    """(E_mean, E_diff) in MHz for field magnitude B (G) at angle theta (rad)."""
    ep, em = line_frequencies(params, B, theta)
    return 0.5 * (ep + em), ep - em


def _F(params, x):
    return np.array(forward_frequencies(params, x[0], x[1]))


def jacobian(params: NvParams, B: float, theta: float, hB: float = 1e-4, hth: float = 1e-6) -> np.ndarray:
    """Finite-difference Jacobian d(E_mean, E_diff)/d(B, theta).

    Central differences in the interior, one-sided at the domain edges.
    """
    J = np.zeros((2, 2))
    x = np.array([B, theta], dtype=float)
    for k, (h, lo, hi) in enumerate(((hB, 0.0, math.inf), (hth, 0.0, THETA_MAX))):
        xp, xm = x.copy(), x.copy()
        if x[k] - h < lo:
            xp[k] += h
            J[:, k] = (_F(params, xp) - _F(params, x)) / h
        elif x[k] + h > hi:
            xm[k] -= h
            J[:, k] = (_F(params, x) - _F(params, xm)) / h
        else:
            xp[k] += h
            xm[k] -= h
            J[:, k] = (_F(params, xp) - _F(params, xm)) / (2 * h)
    return J


def contour_pairs(params: NvParams, target: str, value: float, theta_grid=None,
                  B_max: float = B_MAX, xtol: float = 1e-12) -> np.ndarray:
    """Rows (theta, B) along the level set ``E_target(B, theta) = value``.

    ``target`` is ``"mean"`` or ``"diff"``. For each theta the level set is
    bracketed in B on [0, B_max] and refined with Brent's method.
    """
    if target not in ("mean", "diff"):
        raise ValueError(f"target must be 'mean' or 'diff', got {target!r}")
    k = 0 if target == "mean" else 1
    if theta_grid is None:
        theta_grid = np.linspace(0.0, THETA_MAX, 91)
    rows = []
    for th in theta_grid:
        th = float(th)
        f = lambda B: forward_frequencies(params, B, th)[k] - value
        f0, f1 = f(0.0), f(B_max)
        if f0 == 0.0:
            rows.append((th, 0.0))
        elif f0 * f1 < 0:
            rows.append((th, brentq(f, 0.0, B_max, xtol=xtol, rtol=1e-14)))
    if not rows:
        raise EmptyLocus(f"E_{target} = {value} is not reached for B <= {B_max} G")
    return np.array(rows)


def _seed(params: NvParams, inp: CalibrationInput, B_max: float, n_grid: int = 19) -> np.ndarray:
    # coarse loci are enough: Newton does the refinement
    grid = np.linspace(0.0, THETA_MAX, n_grid)
    try:
        diff = contour_pairs(params, "diff", inp.E_diff, grid, B_max, xtol=1e-3)
        mean = contour_pairs(params, "mean", inp.E_mean, grid, B_max, xtol=1e-3)
    except EmptyLocus:
        diff = mean = None
    if diff is not None:
        common, i_d, i_m = np.intersect1d(diff[:, 0], mean[:, 0], return_indices=True)
        if common.size:
            gap = diff[i_d, 1] - mean[i_m, 1]
            sign = np.nonzero(np.diff(np.sign(gap)))[0]
            if sign.size:
                k = sign[0]
                t = gap[k] / (gap[k] - gap[k + 1])
                th = common[k] + t * (common[k + 1] - common[k])
                B = diff[i_d[k], 1] + t * (diff[i_d[k + 1], 1] - diff[i_d[k], 1])
                return np.array([B, th])
            k = int(np.argmin(np.abs(gap)))
            return np.array([diff[i_d[k], 1], common[k]])
    # fall back to the on-axis closed form
    return np.array([min(inp.E_diff / (2 * params.gamma_e), B_max), 0.1])


@dataclass(frozen=True)
class CalibrationResult:
    B: float
    theta: float
    sigma_B: float
    sigma_theta: float
    covariance: np.ndarray
    residual: float
    iterations: int
    det_jacobian: float

    @property
    def theta_deg(self) -> float:
        return math.degrees(self.theta)

    @property
    def sigma_theta_deg(self) -> float:
        return math.degrees(self.sigma_theta)

    def to_dict(self) -> dict:
        return {"B_gauss": self.B, "theta_rad": self.theta, "theta_deg": self.theta_deg,
                "sigma_B_gauss": self.sigma_B, "sigma_theta_rad": self.sigma_theta,
                "sigma_theta_deg": self.sigma_theta_deg,
                "covariance": [[float(v) for v in row] for row in self.covariance],
                "residual_mhz": self.residual, "iterations": self.iterations,
                "det_jacobian": self.det_jacobian}


def invert_field(params: NvParams, inp: CalibrationInput, seed=None, B_max: float = B_MAX,
                 tol: float = TOL) -> CalibrationResult:
    """Solve forward_frequencies(B, theta) = (E_mean, E_diff) by damped Newton.

    Steps are projected onto [0, B_max] x [0, pi/2] and halved until the
    residual decreases. Raises NoSolution when the target is not reached and
    IllConditioned (carrying the estimate) when |det J| < 1e-3.
    """
    target = np.array([inp.E_mean, inp.E_diff])
    x = np.asarray(seed if seed is not None else _seed(params, inp, B_max), dtype=float)
    lo, hi = np.array([0.0, 0.0]), np.array([B_max, THETA_MAX])
    x = np.clip(x, lo, hi)
    r = _F(params, x) - target
    it = 0
    while np.max(np.abs(r)) > tol and it < MAX_ITER:
        it += 1
        J = jacobian(params, *x)
        try:
            step = -np.linalg.solve(J, r)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(J, r, rcond=None)[0]
        lam, improved = 1.0, False
        while lam > 1e-6:
            xn = np.clip(x + lam * step, lo, hi)
            rn = _F(params, xn) - target
            if np.max(np.abs(rn)) < np.max(np.abs(r)):
                x, r, improved = xn, rn, True
                break
            lam *= 0.5
        if not improved:
            break
    res = float(np.max(np.abs(r)))
    J = jacobian(params, *x)
    det = float(np.linalg.det(J))
    if res > 1e-6:
        raise NoSolution(f"no field reproduces the lines (residual {res:.3g} MHz)")
    if abs(det) < DET_THRESHOLD:
        raise IllConditioned(f"|det J| = {abs(det):.3g}: theta is not determined by the lines",
                             B=float(x[0]), theta=float(x[1]))
    Jinv = np.linalg.inv(J)
    cov = Jinv @ inp.covariance @ Jinv.T
    return CalibrationResult(float(x[0]), float(x[1]), float(math.sqrt(cov[0, 0])),
                             float(math.sqrt(cov[1, 1])), cov, res, it, det)
