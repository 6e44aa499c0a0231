"""
Acceptance checks, shared by ``fisherstefan check`` and the test suite.

Each check returns a CheckResult carrying the measured numbers next to the
targets, so a failure report says by how much it missed.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import analysis, phaseplane
from .config import RunResult, execute, from_mapping
from .mesh import MeshSpec, build_mesh, solve_expansion_ratio
from .output import trace_csv
from .solver import InitialCondition, ProblemConfig, StepperParams, run

FAST_NODES = 251
FAST_TOL = 3e-2
# large enough to corrupt the dynamics, small enough that runs still go long
MUTATION = 1e-5


@dataclass
class CheckResult:
    id: int
    name: str
    passed: bool
    details: dict = field(default_factory=dict)
    seconds: float = 0.0

    def line(self) -> str:
        return f"[{'PASS' if self.passed else 'FAIL'}] {self.id:2d} {self.name} ({self.seconds:.1f} s)"

    def to_dict(self) -> dict:
        return {"id": self.id, "name": self.name, "passed": bool(self.passed),
                "seconds": self.seconds, "details": self.details}


class _Cache:
    """Memoises runs by config so criteria that share a run pay for it once."""

    def __init__(self, perturbation: float = 0.0):
        self.perturbation = perturbation
        self._runs: dict = {}

    def get(self, **cfg) -> RunResult:
        key = tuple(sorted(cfg.items()))
        if key not in self._runs:
            self._runs[key] = execute(from_mapping(cfg), stencil_perturbation=self.perturbation)
        return self._runs[key]


def _close(value, target, tol) -> bool:
    return bool(abs(value - target) <= tol)


# ------------------------------------------------------------ criteria

def check_mesh(ctx) -> tuple[bool, dict]:
    spec = MeshSpec(1001, 1e-6)
    r = solve_expansion_ratio(spec)
    mesh = build_mesh(spec)
    ok_r = _close(r, 1.009165, 1e-6)
    ok_max = _close(mesh.dy_max, 9.083e-2, 1e-5)
    return ok_r and ok_max, {"ratio": r, "ratio_target": 1.009165, "ratio_ok": ok_r,
                             "dy_max": mesh.dy_max, "dy_max_target": 9.083e-2, "dy_max_ok": ok_max}


PHASE_TABLE = ((-0.1, -0.643, -0.156), (-1.0, -1.32, -0.753),
               (-2.0, -2.21, -0.904), (-5.0, -5.10, -0.981))


def check_phase_table(ctx):
    rows, ok = [], True
    for c, v_ref, k_ref in PHASE_TABLE:
        w = phaseplane.kappa_from_c(c)
        row_ok = abs(w.v_star - v_ref) <= 0.01 * abs(v_ref) and _close(w.kappa, k_ref, 0.005)
        ok &= row_ok
        rows.append({"c": c, "v_star": w.v_star, "v_star_ref": v_ref,
                     "kappa": w.kappa, "kappa_ref": k_ref, "ok": row_ok})
    return ok, {"rows": rows}


def check_asymptote(ctx):
    k5 = phaseplane.kappa_from_c(-5.0).kappa
    k10 = phaseplane.kappa_from_c(-10.0).kappa
    ok = _close(k5, -0.98, 0.005) and _close(k10, -0.995, 0.002)
    return ok, {"kappa_c-5": k5, "kappa_c-10": k10,
                "asymptotic_c-5": phaseplane.asymptotic_kappa(-5.0),
                "asymptotic_c-10": phaseplane.asymptotic_kappa(-10.0)}


EXTINCTION_CASES = ((-0.25, 1.0), (-0.5, 1.0), (-0.75, 1.0),
                    (-0.75, 0.75), (-0.75, 0.5), (-0.75, 0.25))


def _extinction_cfg(kappa, alpha, n_nodes=1001):
    return dict(kappa=kappa, **{"lambda": 0.0, "ic.alpha": alpha, "t_end": 200.0,
                                "sample_every": 10, "mesh.n_nodes": n_nodes})


def check_extinction(ctx):
    n, tol = (FAST_NODES, FAST_TOL) if ctx.fast else (1001, 1e-2)
    rows, ok = [], True
    for kappa, alpha in EXTINCTION_CASES:
        res = ctx.runs.get(**_extinction_cfg(kappa, alpha, n))
        target = 1.0 + kappa * alpha
        s_e = res.classification.estimates.get("s_e", math.nan)
        row_ok = res.classification.verdict == "Extinction" and _close(s_e, target, tol)
        ok &= row_ok
        rows.append({"kappa": kappa, "M0": alpha, "s_e": s_e, "target": target, "ok": row_ok})
    return ok, {"n_nodes": n, "tol": tol, "rows": rows}


def check_conservation(ctx):
    rows, worst, clean = [], 0.0, True
    for kappa, alpha in EXTINCTION_CASES:
        res = ctx.runs.get(**_extinction_cfg(kappa, alpha))
        q = analysis.superheating_Q(InitialCondition.step(alpha), kappa)
        r = analysis.conservation_residual(res.trace, q, kappa)
        # a run that stopped early proves nothing about the identity
        ended = res.trace.termination.kind == "MassVanished"
        clean &= ended
        worst = max(worst, r)
        rows.append({"kappa": kappa, "M0": alpha, "residual": r,
                     "termination": res.trace.termination.kind})
    return clean and worst < 5e-3, {"max_residual": worst, "tol": 5e-3, "rows": rows}


def _blowup_cfg(kappa):
    return dict(kappa=kappa, s0=1000.0, t_end=20.0, **{"ic.alpha": 0.5})


def check_blowup_headline(ctx):
    res = ctx.runs.get(**_blowup_cfg(-1.01))
    est = res.classification.estimates
    t_c, s_c = est.get("t_c", math.nan), est.get("s_c", math.nan)
    ok = (res.classification.verdict == "FiniteTimeBlowup"
          and _close(t_c, 6.4, 0.3) and _close(s_c, 975.0, 10.0))
    return ok, {"verdict": res.classification.verdict, "t_c": t_c, "s_c": s_c,
                "termination": res.trace.termination.kind}


def check_scaling(ctx):
    rows, ok = [], True
    for kappa in (-1.2, -1.1, -1.05):
        res = ctx.runs.get(**_blowup_cfg(kappa))
        est = res.classification.estimates
        if res.classification.verdict != "FiniteTimeBlowup":
            ok = False
            rows.append({"kappa": kappa, "verdict": res.classification.verdict, "ok": False})
            continue
        sp = analysis.fit_loglog_slope(res.trace, est["t_c"], "speed")
        po = analysis.fit_loglog_slope(res.trace, est["t_c"], "position", s_c=est["s_c"])
        row_ok = _close(sp.slope, -0.5, 0.1) and _close(po.slope, 0.5, 0.1)
        ok &= row_ok
        rows.append({"kappa": kappa, "speed_slope": sp.slope, "position_slope": po.slope,
                     "window": sp.window, "n": sp.n, "ok": row_ok})
    return ok, {"rows": rows}


def check_travelling_waves(ctx):
    res = ctx.runs.get(kappa=-0.981, s0=1000.0, t_end=13.0, **{"ic.alpha": 0.5})
    c_pp = phaseplane.c_from_kappa(-0.981)
    v = float(res.trace.dsdt[-1])
    ok1 = abs(v - c_pp) <= 0.05 * abs(c_pp)
    small = ctx.runs.get(kappa=-0.05, s0=1000.0, t_end=100.0,
                         **{"ic.alpha": 0.5, "stepper.dt": 1e-2})
    v2 = float(small.trace.dsdt[-1])
    c2 = -0.05 / math.sqrt(3.0)
    ok2 = abs(v2 - c2) <= 0.1 * abs(c2)
    return ok1 and ok2, {"kappa-0.981": {"speed": v, "c_from_kappa": c_pp, "ok": ok1},
                         "kappa-0.05": {"speed": v2, "kappa_over_sqrt3": c2, "ok": ok2}}


def check_lambda_ordering(ctx):
    res = ctx.runs.get(kappa=-0.5, t_end=50.0, sample_every=10,
                       **{"lambda": 1.0, "ic.alpha": 1.0})
    s_e = res.classification.estimates.get("s_e", math.nan)
    ok = res.classification.verdict == "Extinction" and s_e < 0.5 - 1e-2
    return ok, {"s_e": s_e, "lambda0_prediction": 0.5,
                "skellam": analysis.skellam_extinction_estimate(
                    res.trace, InitialCondition.step(1.0), -0.5, 1.0) if ok else None}


def check_ramp_blowup(ctx):
    res = ctx.runs.get(kappa=-3.0, t_end=0.1, **{"lambda": 1.0, "ic.kind": "ramp",
                                                  "ic.m0": 0.5, "stepper.dt": 1e-6})
    cl = res.classification
    if cl.verdict != "FiniteTimeBlowup":
        return False, {"verdict": cl.verdict}
    t_c, s_c = cl.estimates["t_c"], cl.estimates["s_c"]
    final = res.trace.final
    d = s_c - final.x
    win = (d >= 1e-4) & (d <= 1e-2)
    dev = float(np.max(np.abs(final.u[win] - analysis.blowup_profile(final.x[win], s_c, -3.0))))
    ok_t = 0.015 <= t_c <= 0.035
    ok_s = 0.5 <= s_c <= 0.72
    ok_p = dev < 0.1
    return ok_t and ok_s and ok_p, {"t_c": t_c, "t_c_ok": ok_t, "s_c": s_c, "s_c_ok": ok_s,
                                    "profile_sup_dev": dev, "profile_nodes": int(win.sum()),
                                    "profile_ok": ok_p}


def heun_order(c: float = -1.0, dzs=(1e-3, 5e-4, 2.5e-4)) -> float:
    """Observed order of V* from three successive halvings of dz."""
    v = [phaseplane.find_v_star(phaseplane.integrate_from_saddle(c, dz)) for dz in dzs]
    return math.log2(abs(v[0] - v[1]) / abs(v[1] - v[2]))


def check_properties(ctx):
    parts = {}
    # time-step halving at a fixed time before blow-up
    ss = []
    for dt in (1e-4, 5e-5):
        r = execute(from_mapping({"kappa": -1.01, "s0": 1000.0, "ic.alpha": 0.5,
                                  "t_end": 5.0, "stepper.dt": dt}))
        ss.append(float(r.trace.s[-1]))
    rel = abs(ss[0] - ss[1]) / abs(ss[1])
    parts["dt_halving"] = {"s": ss, "rel_change": rel, "ok": rel < 1e-3}

    # zero initial data is a fixed point
    mesh = build_mesh(MeshSpec())
    ic0 = InitialCondition.tabulated(np.zeros(mesh.n_nodes), mesh.nodes)
    tr = run(ProblemConfig(-0.5, 1.0, ic0, t_end=0.01), mesh, StepperParams())
    fixed = bool(np.all(tr.s == 1.0) and np.all(tr.M == 0.0) and np.all(tr.final.u == 0.0))
    parts["zero_fixed_point"] = {"ok": fixed}

    # boundary rows hold exactly after every sampled step
    res = ctx.runs.get(**_extinction_cfg(-0.5, 1.0))
    snaps = [res.trace.final]
    r2 = execute(from_mapping({"kappa": -0.5, "lambda": 1.0, "t_end": 0.05,
                               "snapshots": [0.01, 0.02, 0.03, 0.04]}))
    snaps += list(r2.trace.snapshots)
    exact = all(sn.u[0] == sn.u[1] and sn.u[-1] == 0.0 for sn in snaps)
    parts["boundary_exactness"] = {"snapshots": len(snaps), "ok": bool(exact)}

    order = heun_order()
    parts["heun_order"] = {"order": order, "ok": 1.8 <= order <= 2.2}

    spec = from_mapping({"kappa": -0.98, "s0": 1000.0, "ic.alpha": 0.5, "t_end": 0.5})
    a, b = trace_csv(execute(spec).trace), trace_csv(execute(spec).trace)
    parts["determinism"] = {"ok": a == b}

    return all(p["ok"] for p in parts.values()), parts


CHECKS: tuple[tuple[int, str, Callable], ...] = (
    (1, "mesh expansion factor and largest spacing", check_mesh),
    (2, "phase-plane V* and kappa table", check_phase_table),
    (3, "large-|c| kappa asymptote", check_asymptote),
    (4, "lambda=0 extinction positions", check_extinction),
    (5, "lambda=0 conservation identity", check_conservation),
    (6, "blow-up time and position, kappa=-1.01", check_blowup_headline),
    (7, "near-blow-up scaling exponents", check_scaling),
    (8, "travelling-wave speeds vs phase plane", check_travelling_waves),
    (9, "proliferation moves the front further", check_lambda_ordering),
    (10, "ramp blow-up regime and profile", check_ramp_blowup),
    (11, "numerical property suite", check_properties),
)


@dataclass
class Context:
    fast: bool = False
    runs: _Cache = field(default_factory=_Cache)


def run_check(cid: int, ctx: Context) -> CheckResult:
    for i, name, fn in CHECKS:
        if i == cid:
            t0 = time.perf_counter()
            try:
                ok, details = fn(ctx)
            except Exception as exc:  # a crashing check is a failing check
                ok, details = False, {"error": f"{type(exc).__name__}: {exc}"}
            return CheckResult(i, name, bool(ok), details, time.perf_counter() - t0)
    raise ValueError(f"no acceptance criterion {cid}")


def run_checks(ids=None, fast: bool = False, mutate: bool = False, echo=None) -> list[CheckResult]:
    """Run the selected criteria (all by default).

    ``mutate`` perturbs one u_yy stencil coefficient in every cached run; the
    conservation criterion is expected to catch it.
    """
    ctx = Context(fast=fast, runs=_Cache(MUTATION if mutate else 0.0))
    out = []
    for cid in (ids or [c[0] for c in CHECKS]):
        res = run_check(cid, ctx)
        if echo is not None:
            echo(res.line())
        out.append(res)
    return out
