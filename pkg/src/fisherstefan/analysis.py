"""
Post-processing of solver traces: outcome classification, blow-up
extrapolation, scaling fits and the closed-form predictions for the
rescaled (s(0) = 1) problem.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .solver import InitialCondition, ProblemConfig, Trace

TW_WINDOW_FRACTION = 0.2
TW_REL_CHANGE = 1e-4
MIN_BLOWUP_SAMPLES = 20
MIN_FIT_SAMPLES = 10
# the speed must at least double across the blow-up window
MIN_SPEEDUP = 2.0


class RegimeError(ValueError):
    pass


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    window: tuple
    r_squared: float
    n: int = 0


@dataclass(frozen=True)
class BlowupEstimate:
    t_c: float
    s_c: float
    window: tuple
    n: int
    r_squared_speed: float
    r_squared_position: float
    rms_speed: float
    rms_position: float

    def to_dict(self) -> dict:
        return {
            "t_c": self.t_c, "s_c": self.s_c, "window": list(self.window), "n": self.n,
            "r_squared_speed": self.r_squared_speed,
            "r_squared_position": self.r_squared_position,
            "rms_speed": self.rms_speed, "rms_position": self.rms_position,
        }


VERDICTS = ("TravellingWave", "FiniteTimeBlowup", "Extinction", "CompleteMelting", "Undetermined")


@dataclass(frozen=True)
class Classification:
    verdict: str
    estimates: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"verdict": self.verdict, "estimates": dict(self.estimates),
                "diagnostics": dict(self.diagnostics)}


# ------------------------------------------------------------ closed forms

def superheating_Q(ic: InitialCondition, kappa: float) -> float:
    """Initial heat plus the latent term 1/kappa; its sign splits extinction from blow-up."""
    if kappa == 0.0:
        raise ValueError("kappa must be nonzero")
    return ic.initial_mass() + 1.0 / kappa


def predict_extinction_boundary(ic: InitialCondition, kappa: float) -> float:
    """Final interface position 1 + kappa M(0) of an extinct lambda = 0 run."""
    q = superheating_Q(ic, kappa)
    if q >= 0.0:
        raise RegimeError(f"Q={q:.6g} >= 0: no extinction, the lambda=0 solution blows up")
    return 1.0 + kappa * ic.initial_mass()


def skellam_extinction_estimate(trace: Trace, ic: InitialCondition, kappa: float,
                                lam: float) -> float:
    """kappa * (Q + lam * int_0^inf M dt), with the integral taken over the
    sampled trace by the trapezoid rule."""
    if trace.termination.kind != "MassVanished":
        raise RegimeError(f"trace ended in {trace.termination.kind}, not extinction")
    integral = float(np.trapezoid(trace.M, trace.t))
    return kappa * (superheating_Q(ic, kappa) + lam * integral)


def conservation_residual(trace: Trace, Q: float, kappa: float) -> float:
    """max |s + kappa (M - Q)| over the samples; zero for exact lambda = 0 dynamics."""
    return float(np.max(np.abs(trace.s + kappa * (trace.M - Q))))


def blowup_scaling_law(t, t_c: float, s_c: float):
    """s ~ s_c + 2 (t_c - t)^(1/2) ln^(1/2)(-ln(t_c - t)) for 0 < t_c - t <= 1/e.

    At t_c - t = 1/e the double logarithm vanishes and s = s_c.
    """
    tau = t_c - np.asarray(t, dtype=float)
    if np.any(tau <= 0.0) or np.any(tau > math.exp(-1.0)):
        raise ValueError("scaling law needs 0 < t_c - t <= 1/e")
    loglog = np.maximum(np.log(-np.log(tau)), 0.0)  # clip rounding just below zero at the edge
    out = s_c + 2.0 * np.sqrt(tau) * np.sqrt(loglog)
    return float(out) if out.ndim == 0 else out


def blowup_profile(x, s_c: float, kappa: float):
    """Limiting profile at blow-up, u ~ -(1/kappa)(1 + 1/(2 ln(-ln(s_c - x))))."""
    d = s_c - np.asarray(x, dtype=float)
    if np.any(d <= 0.0) or np.any(d >= math.exp(-1.0)):
        raise ValueError("blow-up profile needs 0 < s_c - x < 1/e")
    out = -(1.0 / kappa) * (1.0 + 1.0 / (2.0 * np.log(-np.log(d))))
    return float(out) if out.ndim == 0 else out


def near_blowup_wave_profile(x, s: float, s_dot: float):
    """Thin-layer estimate u ~ 1 - exp(-s_dot (x - s)) just before blow-up."""
    if not s_dot < 0.0:
        raise ValueError("s_dot must be negative")
    x = np.asarray(x, dtype=float)
    if np.any(x > s):
        raise ValueError("profile is defined for x <= s only")
    out = 1.0 - np.exp(-s_dot * (x - s))
    return float(out) if out.ndim == 0 else out


# ------------------------------------------------------------ fits

def _finite(trace: Trace):
    ok = np.isfinite(trace.dsdt)
    return trace.t[ok], trace.s[ok], trace.dsdt[ok]


def terminal_window(trace: Trace) -> np.ndarray:
    """Indices (into the finite-speed samples) of the trailing run whose speed
    stays within one decade of the final speed."""
    _, _, v = _finite(trace)
    v = np.abs(v)
    if v.size == 0:
        return np.arange(0)
    below = np.nonzero(v < v[-1] / 10.0)[0]
    start = below[-1] + 1 if below.size else 0
    return np.arange(start, v.size)


def _r_squared(y, fit, weights=None) -> float:
    w = np.ones_like(y) if weights is None else weights
    ybar = np.sum(w * y) / np.sum(w)
    ss_tot = np.sum(w * (y - ybar) ** 2)
    if ss_tot == 0.0:
        return 1.0
    return float(min(1.0, max(0.0, 1.0 - np.sum(w * (y - fit) ** 2) / ss_tot)))


def estimate_blowup(trace: Trace, min_samples: int = MIN_BLOWUP_SAMPLES) -> BlowupEstimate:
    """Extrapolate blow-up time and position from the last decade of speeds.

    Near blow-up |ds/dt| ~ (t_c - t)^(-1/2), so (ds/dt)^-2 is linear in t and
    vanishes at t_c.  The fit weights relative residuals, which keeps the
    samples nearest t_c from being swamped by the early end of the window.
    If the line crosses zero before the last sample the window is halved from
    its early end and refitted.
    """
    t_all, s_all, v_all = _finite(trace)
    idx = terminal_window(trace)
    fit = None
    while idx.size >= min_samples:
        t, s, v = t_all[idx], s_all[idx], np.abs(v_all[idx])
        if not v[-1] >= MIN_SPEEDUP * v[0]:
            break
        w = v ** -2.0
        b, a = np.polyfit(t, w, 1, w=1.0 / w)
        if b < 0.0 and -a / b > t[-1]:
            fit = (a, b, -a / b)
            break
        idx = idx[idx.size // 2:]
    if fit is None:
        raise InsufficientData(
            f"need >= {min_samples} samples in a terminal window over which the speed "
            f"grows at least {MIN_SPEEDUP:g}x toward a finite-time singularity"
        )
    a, b, t_c = fit

    rel = 1.0 / w**2
    r2_speed = _r_squared(w, a + b * t, rel)
    rms_speed = float(np.sqrt(np.mean(((w - (a + b * t)) / w) ** 2)))
    root = np.sqrt(t_c - t)
    k, s_c = np.polyfit(root, s, 1)
    r2_pos = _r_squared(s, s_c + k * root)
    rms_pos = float(np.sqrt(np.mean((s - (s_c + k * root)) ** 2)))
    return BlowupEstimate(
        t_c=float(t_c), s_c=float(s_c), window=(float(t[0]), float(t[-1])), n=int(t.size),
        r_squared_speed=r2_speed, r_squared_position=r2_pos,
        rms_speed=rms_speed, rms_position=rms_pos,
    )


def fit_loglog_slope(trace: Trace, t_c: float, quantity: str = "speed",
                     s_c: Optional[float] = None, window: Optional[tuple] = None,
                     min_samples: int = MIN_FIT_SAMPLES) -> ScalingFit:
    """Least-squares slope of ln|ds/dt| (or ln(s - s_c)) against ln(t_c - t).

    ``window`` is a (t_lo, t_hi) pair; by default the terminal speed decade.
    """
    t, s, v = _finite(trace)
    if window is None:
        idx = terminal_window(trace)
    else:
        idx = np.nonzero((t >= window[0]) & (t <= window[1]))[0]
    t, s, v = t[idx], s[idx], v[idx]
    if t.size < min_samples:
        raise InsufficientData(f"need >= {min_samples} samples in the fit window, got {t.size}")
    if not np.all(t < t_c):
        raise ValueError("t_c must exceed every sampled time in the window")
    x = np.log(t_c - t)
    if quantity == "speed":
        yv = np.log(np.abs(v))
    elif quantity == "position":
        if s_c is None:
            raise ValueError("position fit needs s_c")
        if not np.all(s > s_c):
            raise ValueError("position fit needs s > s_c throughout the window")
        yv = np.log(s - s_c)
    else:
        raise ValueError(f"quantity must be 'speed' or 'position', got {quantity!r}")
    slope, intercept = np.polyfit(x, yv, 1)
    return ScalingFit(slope=float(slope), intercept=float(intercept),
                      window=(float(t[0]), float(t[-1])),
                      r_squared=_r_squared(yv, intercept + slope * x), n=int(t.size))


# ------------------------------------------------------------ classification

def _plateau(trace: Trace):
    _, _, v = _finite(trace)
    if v.size < 5:
        return None
    tail = v[int(math.floor((1.0 - TW_WINDOW_FRACTION) * v.size)):]
    ref = abs(float(np.mean(tail)))
    if ref == 0.0:
        return None
    return float(tail[-1]), float((tail.max() - tail.min()) / ref)


def classify(trace: Trace, cfg: ProblemConfig) -> Classification:
    """Single verdict for a finished run; falls back to Undetermined rather than raising."""
    ev = trace.termination
    q = superheating_Q(cfg.ic, cfg.kappa)
    diag: dict = {"termination": ev.kind, "Q": q, "Q_sign": int(np.sign(q))}

    if ev.kind == "MassVanished":
        return Classification("Extinction", {"s_e": float(trace.s[-1])}, diag)
    if ev.kind == "InterfaceHitOrigin":
        return Classification("CompleteMelting", {"t_e": float(ev.t)}, diag)

    if ev.kind in ("SpeedExceeded", "NewtonFailed", "Instability"):
        try:
            est = estimate_blowup(trace)
        except InsufficientData as exc:
            est = None
            diag["blowup_fit"] = str(exc)
        if est is not None:
            diag["blowup_fit"] = est.to_dict()
            diag["method"] = "extrapolation"
            # validity of the near-blow-up analysis: lambda (t_c - t) << 1, scaled units
            diag["lambda_tau"] = cfg.lam * (est.t_c - float(trace.t[-1])) / trace.scale**2
            return Classification("FiniteTimeBlowup", {"t_c": est.t_c, "s_c": est.s_c}, diag)
        if ev.kind != "SpeedExceeded" and cfg.lam == 0.0 and q > 0.0:
            # lambda = 0 with Q > 0 must blow up; the solver breakdown brackets t_c
            diag["method"] = "breakdown"
            return Classification("FiniteTimeBlowup",
                                  {"t_c": float(ev.t), "s_c": float(trace.s[-1])}, diag)
        return Classification("Undetermined", {}, diag)

    plateau = _plateau(trace)
    if plateau is not None:
        speed, change = plateau
        diag["plateau_rel_change"] = change
        if change < TW_REL_CHANGE and speed < 0.0:
            return Classification("TravellingWave", {"speed": speed}, diag)
    return Classification("Undetermined", {}, diag)
