"""Deterministic least-squares fits: Gaussian, Lorentzian, damped sinusoid, exponential.

All fits use Levenberg-Marquardt with analytic Jacobians and data-driven
initial guesses, so identical inputs give identical results.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import least_squares

from .errors import FitFailure, NonPositiveWidth

MAX_NFEV = 200
XTOL = 1e-10
RESIDUAL_LIMIT = 0.05   # max |residual| allowed, as a fraction of the data range
FLAT_TOL = 1e-5         # data range below this (relative) counts as flat
FOUR_LN2 = 4.0 * math.log(2.0)


@dataclass
class FitResult:
    model: str
    params: dict
    errors: dict
    residual_norm: float
    max_residual: float
    converged: bool
    n_points: int
    flags: dict = field(default_factory=dict)

    def __getitem__(self, name):
        return self.params[name]

    def to_dict(self) -> dict:
        return {
            "model": self.model,
            "params": {k: float(v) for k, v in self.params.items()},
            "errors": {k: float(v) for k, v in self.errors.items()},
            "residual_norm": float(self.residual_norm),
            "max_residual": float(self.max_residual),
            "converged": bool(self.converged),
            "n_points": int(self.n_points),
            "flags": {k: bool(v) for k, v in self.flags.items()},
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def _xy(trace, y=None):
    if y is not None:
        x = np.asarray(trace, dtype=float)
        y = np.asarray(y, dtype=float)
    elif hasattr(trace, "axis"):
        x, y = np.asarray(trace.axis, float), np.asarray(trace.signal, float)
    else:
        x, y = (np.asarray(a, dtype=float) for a in trace)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("x and y must be 1-D arrays of equal length")
    return x, y


def _is_flat(y) -> bool:
    span = np.ptp(y) if y.size else 0.0
    return span <= FLAT_TOL * max(1.0, float(np.max(np.abs(y)))) if y.size else True


def _run(model, names, fun, jac, p0, x, y, **ls_kwargs):
    res = least_squares(lambda p: fun(p, x) - y, p0, jac=lambda p: jac(p, x),
                        xtol=XTOL, ftol=1e-14, gtol=1e-14, max_nfev=MAX_NFEV, **ls_kwargs)
    p = res.x
    r = res.fun
    n, k = len(y), len(p)
    dof = max(n - k, 1)
    s2 = float(r @ r) / dof
    J = res.jac
    cov = np.linalg.pinv(J.T @ J) * s2
    err = np.sqrt(np.clip(np.diag(cov), 0.0, None))
    span = float(np.ptp(y))
    max_res = float(np.max(np.abs(r))) if n else 0.0
    ok = bool(res.status > 0) and max_res <= RESIDUAL_LIMIT * span
    return FitResult(model, dict(zip(names, map(float, p))), dict(zip(names, map(float, err))),
                     float(np.linalg.norm(r)), max_res, ok, n)


def _check(result: FitResult, what: str) -> FitResult:
    if not result.converged:
        raise FitFailure(f"{what} fit rejected: max residual {result.max_residual:.3g}", result)
    return result


# -- Gaussian ---------------------------------------------------------------

def gaussian(x, center, fwhm, amplitude, offset):
    return offset + amplitude * np.exp(-FOUR_LN2 * (x - center) ** 2 / fwhm ** 2)


def _gauss_fun(p, x):
    return gaussian(x, *p)


def _gauss_jac(p, x):
    c, w, a, _ = p
    d = x - c
    e = np.exp(-FOUR_LN2 * d ** 2 / w ** 2)
    return np.column_stack([a * e * 2 * FOUR_LN2 * d / w ** 2,
                            a * e * 2 * FOUR_LN2 * d ** 2 / w ** 3,
                            e, np.ones_like(x)])


def _peak_guess(x, y):
    """Center, FWHM, signed amplitude and offset of the dominant extremum."""
    base = float(np.median(y))
    dev = y - base
    k = int(np.argmax(np.abs(dev)))
    amp = float(dev[k])
    half = np.abs(dev) >= 0.5 * abs(amp)
    lo = k
    while lo > 0 and half[lo - 1]:
        lo -= 1
    hi = k
    while hi < len(x) - 1 and half[hi + 1]:
        hi += 1
    width = float(x[hi] - x[lo])
    if width <= 0:
        width = float(np.min(np.diff(x))) if len(x) > 1 else 1.0
    return float(x[k]), width, amp, base


def fit_gaussian(trace, y=None) -> FitResult:
    """Fit offset + amplitude * exp(-4 ln2 (x-center)^2 / fwhm^2)."""
    x, y = _xy(trace, y)
    if len(x) < 8:
        raise FitFailure("need at least 8 samples")
    if _is_flat(y):
        raise FitFailure("flat trace: no line to fit")
    p0 = _peak_guess(x, y)
    res = _run("gaussian", ("center", "fwhm", "amplitude", "offset"), _gauss_fun, _gauss_jac,
               p0, x, y, method="lm")
    res.params["fwhm"] = abs(res.params["fwhm"])
    return _check(res, "gaussian")


# -- Lorentzian -------------------------------------------------------------

def lorentzian(x, center, fwhm, contrast, baseline):
    """baseline * (1 - contrast * L(x)), L a unit-peak Lorentzian."""
    hw2 = (fwhm / 2.0) ** 2
    return baseline * (1.0 - contrast * hw2 / ((x - center) ** 2 + hw2))


def _lor_fun(p, x):
    return lorentzian(x, *p)


def _lor_jac(p, x):
    c, w, C, b = p
    hw2 = (w / 2.0) ** 2
    d = x - c
    den = d ** 2 + hw2
    L = hw2 / den
    dL_dc = hw2 * 2 * d / den ** 2
    dL_dw = (w / 2.0) * d ** 2 / den ** 2
    return np.column_stack([-b * C * dL_dc, -b * C * dL_dw, -b * L, 1.0 - C * L])


CONTRAST_BOUNDS = (0.0, 1.05)


def fit_lorentzian(trace, y=None) -> FitResult:
    """Fit a Lorentzian dip baseline * (1 - contrast * L).

    Contrast is physically bounded to [0, 1.05]; if the free fit leaves that
    range the fit is redone with the bound enforced, ``flags["clamped"]`` is
    set and the result is returned even if the residual test fails.
    """
    x, y = _xy(trace, y)
    if len(x) < 8:
        raise FitFailure("need at least 8 samples")
    if _is_flat(y):
        raise FitFailure("flat trace: no line to fit")
    k = int(np.argmin(y))
    base = float(max(y[0], y[-1], np.median(y)))
    _, w0, _, _ = _peak_guess(x, y)
    p0 = [float(x[k]), w0, 1.0 - float(y[k]) / base if base else 0.5, base]
    names = ("center", "fwhm", "contrast", "baseline")
    res = _run("lorentzian", names, _lor_fun, _lor_jac, p0, x, y, method="lm")
    clamped = not (CONTRAST_BOUNDS[0] <= res.params["contrast"] <= CONTRAST_BOUNDS[1])
    if clamped:
        lo = [-np.inf, -np.inf, CONTRAST_BOUNDS[0], -np.inf]
        hi = [np.inf, np.inf, CONTRAST_BOUNDS[1], np.inf]
        start = [res.params[n] for n in names]
        start[2] = float(np.clip(start[2], *CONTRAST_BOUNDS))
        res = _run("lorentzian", names, _lor_fun, _lor_jac, start, x, y,
                   method="trf", bounds=(lo, hi))
    res.params["fwhm"] = abs(res.params["fwhm"])
    res.flags["clamped"] = clamped
    if clamped:
        # the bound itself explains a poor residual; report rather than reject
        return res
    return _check(res, "lorentzian")


# -- damped sinusoid ----------------------------------------------------------

def damped_sin(t, omega, tau, phase, amplitude, offset):
    """offset + amplitude * exp(-t/tau) * cos(2 pi omega t + phase); omega in MHz."""
    return offset + amplitude * np.exp(-t / tau) * np.cos(2 * np.pi * omega * t + phase)


def _ds_fun(p, t):
    return damped_sin(t, *p)


def _ds_jac(p, t):
    om, tau, ph, a, _ = p
    env = np.exp(-t / tau)
    arg = 2 * np.pi * om * t + ph
    c, s = np.cos(arg), np.sin(arg)
    return np.column_stack([-a * env * s * 2 * np.pi * t, a * env * c * t / tau ** 2,
                            -a * env * s, env * c, np.ones_like(t)])


def _dominant_frequency(t, y):
    dt = float(np.mean(np.diff(t)))
    n = len(y)
    nfft = 1 << (8 * n - 1).bit_length()
    spec = np.abs(np.fft.rfft((y - y.mean()) * np.hanning(n), nfft))
    freqs = np.fft.rfftfreq(nfft, dt)
    k = int(np.argmax(spec[1:])) + 1
    if 1 <= k < len(spec) - 1:
        a, b, c = spec[k - 1], spec[k], spec[k + 1]
        den = a - 2 * b + c
        shift = 0.5 * (a - c) / den if den != 0 else 0.0
        return float(freqs[k] + shift * (freqs[1] - freqs[0]))
    return float(freqs[k])


def fit_damped_sin(trace, y=None) -> FitResult:
    """Fit an exponentially damped sinusoid; returns omega (MHz), tau (us), ..."""
    t, y = _xy(trace, y)
    if len(t) < 8:
        raise FitFailure("need at least 8 samples")
    if _is_flat(y):
        raise FitFailure("zero-amplitude trace: nothing oscillates")
    om = _dominant_frequency(t, y)
    span = float(t[-1] - t[0])
    best = None
    for tau in span * np.array([0.1, 0.2, 0.5, 1.0, 2.0, 5.0, 50.0]):
        env = np.exp(-(t - t[0]) / tau)
        A = np.column_stack([np.ones_like(t), env * np.cos(2 * np.pi * om * t),
                             env * np.sin(2 * np.pi * om * t)])
        coef, *_ = np.linalg.lstsq(A, y, rcond=None)
        ssr = float(np.sum((A @ coef - y) ** 2))
        if best is None or ssr < best[0]:
            best = (ssr, tau, coef)
    _, tau, (off, cc, ss) = best
    amp = math.hypot(cc, ss) * math.exp(t[0] / tau)
    phase = math.atan2(-ss, cc)
    names = ("omega", "tau", "phase", "amplitude", "offset")
    res = _run("damped_sin", names, _ds_fun, _ds_jac, [om, tau, phase, amp, off], t, y, method="lm")
    p = res.params
    if p["amplitude"] < 0:
        p["amplitude"] = -p["amplitude"]
        p["phase"] += math.pi
    if p["omega"] < 0:
        p["omega"] = -p["omega"]
        p["phase"] = -p["phase"]
    p["phase"] = math.remainder(p["phase"], 2 * math.pi)
    return _check(res, "damped sinusoid")


# -- exponential decay --------------------------------------------------------

def exp_decay(t, gamma, amplitude, offset):
    return amplitude * np.exp(-gamma * t) + offset


def _exp_fun(p, t):
    return exp_decay(t, *p)


def _exp_jac(p, t):
    g, a, _ = p
    e = np.exp(-g * t)
    return np.column_stack([-a * t * e, e, np.ones_like(t)])


def _decay_guess(t, y):
    # differences remove the offset: log|dy| is linear in t with slope -gamma
    dy = np.diff(y)
    tm = 0.5 * (t[1:] + t[:-1])
    keep = np.abs(dy) > 1e-3 * np.max(np.abs(dy))
    if keep.sum() >= 2:
        slope = np.polyfit(tm[keep], np.log(np.abs(dy[keep])), 1)[0]
        gamma = max(-slope, 1e-12)
    else:
        gamma = 1.0 / max(t[-1] - t[0], 1e-12)
    e = np.exp(-gamma * t)
    A = np.column_stack([e, np.ones_like(t)])
    (amp, off), *_ = np.linalg.lstsq(A, y, rcond=None)
    return [gamma, float(amp), float(off)]


def fit_exp_decay(trace, y=None) -> FitResult:
    """Fit amplitude * exp(-gamma t) + offset.

    A constant trace returns gamma = 0 with ``flags["degenerate"]``; a poor
    single-exponential description raises FitFailure carrying the result.
    """
    t, y = _xy(trace, y)
    names = ("gamma", "amplitude", "offset")
    if len(t) < 4:
        raise FitFailure("need at least 4 samples")
    if _is_flat(y):
        off = float(np.mean(y))
        r = y - off
        return FitResult("exp_decay", {"gamma": 0.0, "amplitude": 0.0, "offset": off},
                         dict.fromkeys(names, 0.0), float(np.linalg.norm(r)),
                         float(np.max(np.abs(r))), True, len(t), {"degenerate": True})
    res = _run("exp_decay", names, _exp_fun, _exp_jac, _decay_guess(t, y), t, y, method="lm")
    res.flags["degenerate"] = False
    return _check(res, "exponential")


# -- linewidth <-> T2* --------------------------------------------------------

_T2_CONST = 2.0 * math.sqrt(math.log(2.0)) / math.pi


def t2star_from_fwhm(fwhm: float) -> float:
    """T2* (us) from a Gaussian ODMR FWHM (MHz): 2 sqrt(ln 2) / (pi FWHM)."""
    if not fwhm > 0:
        raise NonPositiveWidth(f"linewidth must be positive, got {fwhm!r}")
    return _T2_CONST / fwhm


def fwhm_from_t2star(t2star: float) -> float:
    if not t2star > 0:
        raise NonPositiveWidth(f"T2* must be positive, got {t2star!r}")
    return _T2_CONST / t2star
