"""
Implicit front-fixing solver for the Fisher-Stefan problem.

The moving domain 0 < x < s(t) is mapped to 0 < y < 1 with y = x/s, giving

    u_t = u_yy / s^2 + (y/s) (ds/dt) u_y + lam * u (1 - u),
    u_y(0) = 0,  u(1) = 0,  ds/dt = -(kappa/s) u_y(1).

Each time step is backward Euler on a graded mesh; the nonlinear system in
(u_1..u_N, s) is solved with Newton-Raphson.  The Jacobian is tridiagonal in
u, bordered by one column (the advection term's dependence on s) and one row
(the discrete Stefan condition), so each sweep costs two Thomas solves.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence

import numba
import numpy as np

from .mesh import Mesh

logger = logging.getLogger(__name__)

# u may overshoot [0, 1] by this much before the run is declared unstable
OVERSHOOT = 0.05
EXTINCTION_MASS = 1e-8
EXTINCTION_SPEED = 1e-8


class NewtonFailed(RuntimeError):
    pass


class InstabilityDetected(RuntimeError):
    pass


@dataclass(frozen=True)
class InitialCondition:
    kind: str
    alpha: float = 0.0
    m0: float = 0.0
    values: Optional[np.ndarray] = field(default=None, repr=False, compare=False)
    nodes: Optional[np.ndarray] = field(default=None, repr=False, compare=False)

    @classmethod
    def step(cls, alpha: float) -> "InitialCondition":
        if not 0.0 < alpha <= 1.0:
            raise ValueError(f"step height alpha must lie in (0, 1], got {alpha!r}")
        return cls("step", alpha=float(alpha))

    @classmethod
    def ramp(cls, m0: float) -> "InitialCondition":
        if not 0.0 < m0 <= 0.5:
            raise ValueError(f"ramp mass m0 must lie in (0, 0.5], got {m0!r}")
        return cls("ramp", m0=float(m0))

    @classmethod
    def tabulated(cls, values, nodes) -> "InitialCondition":
        values = np.asarray(values, dtype=float)
        nodes = np.asarray(nodes, dtype=float)
        if values.shape != nodes.shape or values.ndim != 1:
            raise ValueError("tabulated values and nodes must be 1-D arrays of equal length")
        if np.any(values < 0.0) or np.any(values > 1.0):
            raise ValueError("tabulated values must lie in [0, 1]")
        if values[-1] != 0.0:
            raise ValueError("tabulated initial condition must vanish at y = 1")
        return cls("tabulated", values=values, nodes=nodes)

    def initial_mass(self) -> float:
        """Integral of the initial profile over [0, 1] (exact for step and ramp)."""
        if self.kind == "step":
            return self.alpha
        if self.kind == "ramp":
            return self.m0
        return float(np.trapezoid(self.values, self.nodes))

    def on_mesh(self, y: np.ndarray) -> np.ndarray:
        if self.kind == "step":
            u = np.full(y.size, self.alpha)
        elif self.kind == "ramp":
            u = 2.0 * self.m0 * (1.0 - y)
        elif self.kind == "tabulated":
            if self.values.size != y.size or not np.allclose(self.nodes, y, rtol=0, atol=1e-14):
                raise ValueError("tabulated initial condition is not defined on this mesh")
            u = self.values.copy()
        else:
            raise ValueError(f"unknown initial condition kind {self.kind!r}")
        u[-1] = 0.0
        return u

    def describe(self) -> dict:
        if self.kind == "step":
            return {"kind": "step", "alpha": self.alpha}
        if self.kind == "ramp":
            return {"kind": "ramp", "m0": self.m0}
        return {"kind": "tabulated", "values": self.values.tolist()}


@dataclass(frozen=True)
class ProblemConfig:
    kappa: float
    lam: float
    ic: InitialCondition
    t_end: float
    blowup_speed_threshold: float = 1e4
    # stop once dt * (ds/dt)^2 exceeds this: the remaining time to blow-up is
    # then comparable to one step (invariant under the s(0) rescaling)
    blowup_resolution: float = 1.0

    def __post_init__(self):
        if self.kappa == 0.0 or not math.isfinite(self.kappa):
            raise ValueError("kappa must be finite and nonzero")
        if not self.lam >= 0.0:
            raise ValueError(f"lambda must be >= 0, got {self.lam!r}")
        if not self.t_end > 0.0:
            raise ValueError(f"t_end must be positive, got {self.t_end!r}")
        if not self.blowup_speed_threshold > 0.0:
            raise ValueError("blowup_speed_threshold must be positive")
        if not self.blowup_resolution > 0.0:
            raise ValueError("blowup_resolution must be positive")

    def speed_limit(self, dt: float) -> float:
        return min(self.blowup_speed_threshold, math.sqrt(self.blowup_resolution / dt))


@dataclass(frozen=True)
class StepperParams:
    dt: float = 1e-4
    newton_tol: float = 1e-10
    newton_max_iters: int = 25

    def __post_init__(self):
        if not self.dt > 0.0:
            raise ValueError(f"dt must be positive, got {self.dt!r}")
        if not self.newton_tol > 0.0:
            raise ValueError(f"newton_tol must be positive, got {self.newton_tol!r}")
        if self.newton_max_iters < 2:
            raise ValueError("newton_max_iters must be at least 2")


@dataclass(frozen=True)
class State:
    u: np.ndarray = field(repr=False)
    s: float
    t: float


@dataclass(frozen=True)
class Stencils:
    """Nonuniform three-point coefficients for u_yy and u_y at interior nodes,
    plus the one-sided second-order u_y at y = 1."""

    y: np.ndarray
    d2: np.ndarray  # shape (3, N): lower, centre, upper
    d1: np.ndarray
    back: np.ndarray  # weights on u_{N-2}, u_{N-1}, u_N


def build_stencils(mesh: Mesh, perturb: float = 0.0) -> Stencils:
    """``perturb`` scales the upper u_yy coefficient; only used for fault injection."""
    y = np.asarray(mesh.nodes, dtype=float)
    n = y.size
    hm = y[1:-1] - y[:-2]
    hp = y[2:] - y[1:-1]
    d2 = np.zeros((3, n))
    d1 = np.zeros((3, n))
    d2[0, 1:-1] = 2.0 / (hm * (hp + hm))
    d2[1, 1:-1] = -2.0 / (hm * hp)
    d2[2, 1:-1] = 2.0 / (hp * (hp + hm)) * (1.0 + perturb)
    d1[0, 1:-1] = -hp / (hm * (hp + hm))
    d1[1, 1:-1] = (hp - hm) / (hm * hp)
    d1[2, 1:-1] = hm / (hp * (hp + hm))

    hp_n = y[-1] - y[-2]
    hm_n = y[-2] - y[-3]
    back = np.array([
        hp_n / (hm_n * (hp_n + hm_n)),
        -(hp_n + hm_n) / (hm_n * hp_n),
        (2.0 * hp_n + hm_n) / (hp_n * (hp_n + hm_n)),
    ])
    return Stencils(y=y, d2=d2, d1=d1, back=back)


@numba.njit(cache=True)
def _thomas2(lo, di, up, r1, r2, x1, x2, cp, w):
    # Tridiagonal solve for two right-hand sides sharing one factorisation.
    n = di.size
    cp[0] = up[0] / di[0]
    x1[0] = r1[0] / di[0]
    x2[0] = r2[0] / di[0]
    for i in range(1, n):
        den = di[i] - lo[i] * cp[i - 1]
        w[i] = den
        cp[i] = up[i] / den if i < n - 1 else 0.0
        x1[i] = (r1[i] - lo[i] * x1[i - 1]) / den
        x2[i] = (r2[i] - lo[i] * x2[i - 1]) / den
    for i in range(n - 2, -1, -1):
        x1[i] -= cp[i] * x1[i + 1]
        x2[i] -= cp[i] * x2[i + 1]


@numba.njit(cache=True)
def _newton(u_old, s_old, s_guess, y, d2, d1, back, dt, kappa, lam, tol, max_iters, u):
    """Solve one backward-Euler step in place into ``u``.

    Returns (s_new, iterations, converged).
    """
    n = u_old.size
    lo = np.empty(n)
    di = np.empty(n)
    up = np.empty(n)
    res = np.empty(n)
    col = np.empty(n)
    x1 = np.empty(n)
    x2 = np.empty(n)
    cp = np.empty(n)
    w = np.empty(n)

    for i in range(n):
        u[i] = u_old[i]
    s = s_guess
    inv_s2 = 1.0 / (s_old * s_old)
    stefan = dt * kappa / s_old

    for it in range(1, max_iters + 1):
        vel = (s - s_old) / dt / s_old
        # no-flux row: u_2 - u_1 = 0
        lo[0] = 0.0
        di[0] = -1.0
        up[0] = 1.0
        res[0] = -(u[1] - u[0])
        col[0] = 0.0
        for i in range(1, n - 1):
            a2 = d2[0, i] * inv_s2
            b2 = d2[1, i] * inv_s2
            c2 = d2[2, i] * inv_s2
            uy = d1[0, i] * u[i - 1] + d1[1, i] * u[i] + d1[2, i] * u[i + 1]
            uyy = a2 * u[i - 1] + b2 * u[i] + c2 * u[i + 1]
            adv = y[i] * vel
            r = (u[i] - u_old[i]) / dt - uyy - adv * uy - lam * u[i] * (1.0 - u[i])
            res[i] = -r
            lo[i] = -a2 - adv * d1[0, i]
            di[i] = 1.0 / dt - b2 - adv * d1[1, i] - lam * (1.0 - 2.0 * u[i])
            up[i] = -c2 - adv * d1[2, i]
            col[i] = -y[i] / (s_old * dt) * uy
        lo[n - 1] = 0.0
        di[n - 1] = 1.0
        up[n - 1] = 0.0
        res[n - 1] = -u[n - 1]
        col[n - 1] = 0.0

        flux = back[0] * u[n - 3] + back[1] * u[n - 2] + back[2] * u[n - 1]
        rs = s - s_old + stefan * flux

        _thomas2(lo, di, up, res, col, x1, x2, cp, w)
        cx1 = stefan * (back[0] * x1[n - 3] + back[1] * x1[n - 2] + back[2] * x1[n - 1])
        cx2 = stefan * (back[0] * x2[n - 3] + back[1] * x2[n - 2] + back[2] * x2[n - 1])
        ds = (-rs - cx1) / (1.0 - cx2)

        change = abs(ds)
        for i in range(n):
            du = x1[i] - ds * x2[i]
            u[i] += du
            if abs(du) > change:
                change = abs(du)
        s += ds
        if not math.isfinite(change) or not math.isfinite(s):
            return s, it, False
        if change < tol:
            return s, it, True
    return s, max_iters, False


def make_initial_state(mesh: Mesh, ic: InitialCondition) -> State:
    u = ic.on_mesh(np.asarray(mesh.nodes))
    return State(u=u, s=1.0, t=0.0)


def mass(state: State, mesh: Mesh) -> float:
    """Trapezoidal integral of u over 0 < x < s on the graded mesh."""
    return float(state.s * np.trapezoid(state.u, mesh.nodes))


def _advance(state: State, st: Stencils, cfg: ProblemConfig, p: StepperParams,
             dt: float, s_guess: float):
    u = np.empty_like(state.u)
    s_new, iters, ok = _newton(
        state.u, state.s, s_guess, st.y, st.d2, st.d1, st.back,
        dt, cfg.kappa, cfg.lam, p.newton_tol, p.newton_max_iters, u,
    )
    if not ok:
        raise NewtonFailed(f"Newton did not converge in {iters} iterations at t={state.t + dt:.6g}")
    # the two boundary rows are linear, so pin them exactly
    u[0] = u[1]
    u[-1] = 0.0
    if u.min() < -OVERSHOOT or u.max() > 1.0 + OVERSHOOT:
        raise InstabilityDetected(
            f"u left [{-OVERSHOOT}, {1 + OVERSHOOT}] at t={state.t + dt:.6g} "
            f"(min={u.min():.3g}, max={u.max():.3g})"
        )
    return State(u=u, s=float(s_new), t=state.t + dt), iters


def step(state: State, mesh: Mesh, cfg: ProblemConfig, p: StepperParams,
         stencils: Optional[Stencils] = None) -> tuple[State, int]:
    """Advance one time step of size ``p.dt``; returns the new state and Newton iterations."""
    if not state.s > 0.0:
        raise ValueError("interface position must be positive")
    st = stencils if stencils is not None else build_stencils(mesh)
    return _advance(state, st, cfg, p, p.dt, state.s)


# --------------------------------------------------------------------------- runs

TERMINATIONS = ("ReachedTEnd", "SpeedExceeded", "InterfaceHitOrigin",
                "NewtonFailed", "MassVanished", "Instability")


@dataclass(frozen=True)
class TerminationEvent:
    kind: str
    t: float
    s: float
    dsdt: float
    message: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind, "t": self.t, "s": self.s, "dsdt": self.dsdt,
                "message": self.message}


@dataclass(frozen=True)
class Snapshot:
    t: float
    s: float
    y: np.ndarray = field(repr=False)
    u: np.ndarray = field(repr=False)

    @property
    def x(self) -> np.ndarray:
        return self.s * self.y


def _rescale_snapshot(sn: Snapshot, s0: float) -> Snapshot:
    return Snapshot(t=sn.t * s0 * s0, s=sn.s * s0, y=sn.y, u=sn.u)


@dataclass(frozen=True)
class Trace:
    """Sampled history of a run.  ``dsdt[k]`` is the backward difference of the
    step that produced sample k (NaN for the initial sample)."""

    t: np.ndarray
    s: np.ndarray
    dsdt: np.ndarray
    M: np.ndarray
    termination: TerminationEvent
    snapshots: tuple = ()
    final: Optional[Snapshot] = None
    newton_iters: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=int), repr=False)
    retries: int = 0
    scale: float = 1.0

    def __len__(self):
        return self.t.size

    def rescaled(self, s0: float) -> "Trace":
        """Express a trace of the x/s(0), t/s(0)^2 problem in original units."""
        tt, ss, vv, mm = s0 * s0, s0, 1.0 / s0, s0
        ev = self.termination
        return replace(
            self,
            t=self.t * tt, s=self.s * ss, dsdt=self.dsdt * vv, M=self.M * mm,
            termination=replace(ev, t=ev.t * tt, s=ev.s * ss, dsdt=ev.dsdt * vv),
            snapshots=tuple(_rescale_snapshot(sn, s0) for sn in self.snapshots),
            final=None if self.final is None else _rescale_snapshot(self.final, s0),
            scale=self.scale * s0,
        )

    def newton_stats(self) -> dict:
        it = self.newton_iters
        if it.size == 0:
            return {"steps": 0, "total": 0, "mean": 0.0, "max": 0, "retries": self.retries}
        return {"steps": int(it.size), "total": int(it.sum()), "mean": float(it.mean()),
                "max": int(it.max()), "retries": self.retries}


def run(cfg: ProblemConfig, mesh: Mesh, p: StepperParams, sample_every: int = 1,
        snapshot_times: Sequence[float] = (), stencil_perturbation: float = 0.0,
        initial_state: Optional[State] = None) -> Trace:
    """Time-step until t_end or a terminating event; never raises for solver trouble."""
    if sample_every < 1:
        raise ValueError("sample_every must be >= 1")
    st = build_stencils(mesh, stencil_perturbation)
    state = initial_state if initial_state is not None else make_initial_state(mesh, cfg.ic)
    dt = p.dt
    n_steps = max(1, int(math.ceil(cfg.t_end / dt - 1e-9)))
    dy_min = mesh.dy_min

    ts, ss, vs, ms = [state.t], [state.s], [math.nan], [mass(state, mesh)]
    iters: list[int] = []
    snaps: list[Snapshot] = []
    pending = sorted(float(t) for t in snapshot_times)
    retries = 0

    def take_snapshots(stt: State):
        while pending and stt.t >= pending[0] - 0.5 * dt:
            pending.pop(0)
            snaps.append(Snapshot(t=stt.t, s=stt.s, y=st.y, u=stt.u.copy()))

    take_snapshots(state)
    speed_limit = cfg.speed_limit(dt)
    # a discontinuous initial profile gives a large first-step speed; the
    # blow-up test is armed only once the speed has been below the limit
    armed = False
    speed = 0.0
    event = None
    k = 0
    while event is None:
        k += 1
        t_target = k * dt
        try:
            try:
                new, it = _advance(state, st, cfg, p, dt, state.s + dt * speed)
            except NewtonFailed:
                retries += 1
                half, it1 = _advance(state, st, cfg, p, 0.5 * dt, state.s + 0.5 * dt * speed)
                new, it2 = _advance(half, st, cfg, p, 0.5 * dt, half.s + 0.5 * dt * speed)
                it = it1 + it2
        except NewtonFailed as exc:
            event = TerminationEvent("NewtonFailed", state.t + dt, state.s, speed, str(exc))
            break
        except InstabilityDetected as exc:
            event = TerminationEvent("Instability", state.t + dt, state.s, speed, str(exc))
            break

        speed = (new.s - state.s) / dt
        state = State(u=new.u, s=new.s, t=t_target)
        iters.append(it)
        m = mass(state, mesh)

        if abs(speed) > speed_limit and armed:
            event = TerminationEvent("SpeedExceeded", state.t, state.s, speed)
        elif state.s <= dy_min:
            event = TerminationEvent("InterfaceHitOrigin", state.t, state.s, speed)
        elif m < EXTINCTION_MASS and abs(speed) < EXTINCTION_SPEED:
            event = TerminationEvent("MassVanished", state.t, state.s, speed)
        elif k >= n_steps:
            event = TerminationEvent("ReachedTEnd", state.t, state.s, speed)
        armed = armed or abs(speed) <= speed_limit

        if event is not None or k % sample_every == 0:
            ts.append(state.t)
            ss.append(state.s)
            vs.append(speed)
            ms.append(m)
        take_snapshots(state)

    if event.kind not in ("ReachedTEnd", "MassVanished"):
        logger.info("run terminated: %s at t=%.6g", event.kind, event.t)
    return Trace(
        t=np.array(ts), s=np.array(ss), dsdt=np.array(vs), M=np.array(ms),
        termination=event, snapshots=tuple(snaps),
        final=Snapshot(t=state.t, s=state.s, y=st.y, u=state.u.copy()),
        newton_iters=np.array(iters, dtype=int), retries=retries,
    )
