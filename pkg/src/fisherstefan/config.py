"""
Run configuration: a flat ``key = value`` text format with dotted sections.

    kappa = -1.01
    s0 = 1000              # or: lambda = 1e6 (scaled units)
    ic.kind = step
    ic.alpha = 0.5
    t_end = 13
    stepper.dt = 1e-4
    snapshots = 0:13:1     # start:stop:step, or a comma list

When ``s0`` is given the solver works on the rescaled problem with
lambda = s0^2, and every time, length and speed in the file (t_end, dt,
snapshots, blowup_speed_threshold) and in the outputs is in original units.
A summary JSON written by ``simulate`` is also accepted; its ``config``
block is read back as the same flat mapping.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional

import numpy as np

from .analysis import Classification, classify
from .mesh import MeshSpec, build_mesh
from .solver import InitialCondition, ProblemConfig, StepperParams, Trace, run


class ConfigError(ValueError):
    """Bad or missing configuration entry; the message names the key."""


_FLOAT_KEYS = {
    "kappa", "lambda", "s0", "ic.alpha", "ic.m0", "t_end", "blowup_speed_threshold",
    "blowup_resolution", "mesh.dy_min", "stepper.dt", "stepper.newton_tol",
}
_INT_KEYS = {"mesh.n_nodes", "stepper.newton_max_iters", "sample_every"}
_STR_KEYS = {"ic.kind", "output_dir", "sweep.parameter"}
_LIST_KEYS = {"snapshots", "sweep.values"}
KNOWN_KEYS = _FLOAT_KEYS | _INT_KEYS | _STR_KEYS | _LIST_KEYS

SWEEPABLE = ("kappa", "lambda", "s0", "ic.alpha", "ic.m0", "t_end")


def _parse_list(key: str, text) -> list[float]:
    if isinstance(text, (list, tuple)):
        return [float(v) for v in text]
    text = str(text).strip()
    if not text:
        return []
    try:
        if ":" in text:
            start, stop, inc = (float(p) for p in text.split(":"))
            if inc <= 0.0:
                raise ConfigError(f"{key}: range step must be positive")
            n = int(math.floor((stop - start) / inc + 1e-9)) + 1
            return [start + k * inc for k in range(max(n, 0))]
        return [float(p) for p in text.replace(",", " ").split()]
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{key}: cannot parse {text!r} as a number list") from None


def _coerce(key: str, raw):
    if key not in KNOWN_KEYS:
        raise ConfigError(f"unknown config key {key!r}")
    if key in _LIST_KEYS:
        return _parse_list(key, raw)
    if key in _STR_KEYS:
        return str(raw).strip()
    try:
        if key in _INT_KEYS:
            val = float(raw)
            if val != int(val):
                raise ValueError
            return int(val)
        val = float(raw)
    except (TypeError, ValueError):
        raise ConfigError(f"{key}: expected a number, got {raw!r}") from None
    if not math.isfinite(val):
        raise ConfigError(f"{key}: must be finite, got {raw!r}")
    return val


def parse_text(text: str) -> dict:
    """Flat mapping from the key = value format, values already typed."""
    out: dict = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
        key, val = (p.strip() for p in line.split("=", 1))
        if key in out:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        out[key] = _coerce(key, val)
    return out


def read_config(path) -> dict:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {str(path)!r}: {exc.strerror}") from None
    if text.lstrip().startswith("{"):
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc.msg})") from None
        data = data.get("config", data)
        return {k: _coerce(k, v) for k, v in data.items() if v is not None}
    return parse_text(text)


@dataclass(frozen=True)
class RunSpec:
    """A validated run request, in the units the user wrote it in."""

    kappa: float
    t_end: float
    lam: Optional[float] = None
    s0: Optional[float] = None
    ic_kind: str = "step"
    ic_alpha: float = 0.5
    ic_m0: float = 0.5
    blowup_speed_threshold: float = 1e4
    blowup_resolution: float = 1.0
    mesh: MeshSpec = field(default_factory=MeshSpec)
    dt: float = 1e-4
    newton_tol: float = 1e-10
    newton_max_iters: int = 25
    sample_every: int = 1
    snapshots: tuple = ()
    output_dir: Optional[str] = None

    @property
    def scale(self) -> float:
        return 1.0 if self.s0 is None else self.s0

    def initial_condition(self) -> InitialCondition:
        if self.ic_kind == "step":
            return InitialCondition.step(self.ic_alpha)
        return InitialCondition.ramp(self.ic_m0)

    def problem(self) -> tuple[ProblemConfig, StepperParams]:
        """Solver inputs on the rescaled (s(0) = 1) problem."""
        L = self.scale
        lam = L * L if self.s0 is not None else self.lam
        cfg = ProblemConfig(
            kappa=self.kappa, lam=lam, ic=self.initial_condition(), t_end=self.t_end / L**2,
            blowup_speed_threshold=self.blowup_speed_threshold * L,
            blowup_resolution=self.blowup_resolution,
        )
        p = StepperParams(dt=self.dt / L**2, newton_tol=self.newton_tol,
                          newton_max_iters=self.newton_max_iters)
        return cfg, p

    def echo(self) -> dict:
        """Flat config mapping; feeding it back through from_mapping reproduces the run."""
        d = {"kappa": self.kappa}
        if self.s0 is not None:
            d["s0"] = self.s0
        else:
            d["lambda"] = self.lam
        d["ic.kind"] = self.ic_kind
        if self.ic_kind == "step":
            d["ic.alpha"] = self.ic_alpha
        else:
            d["ic.m0"] = self.ic_m0
        d.update({
            "t_end": self.t_end,
            "blowup_speed_threshold": self.blowup_speed_threshold,
            "blowup_resolution": self.blowup_resolution,
            "mesh.n_nodes": self.mesh.n_nodes,
            "mesh.dy_min": self.mesh.dy_min,
            "stepper.dt": self.dt,
            "stepper.newton_tol": self.newton_tol,
            "stepper.newton_max_iters": self.newton_max_iters,
            "sample_every": self.sample_every,
            "snapshots": list(self.snapshots),
        })
        return d

    def with_value(self, key: str, value: float) -> "RunSpec":
        d = self.echo()
        if key == "s0":
            d.pop("lambda", None)
        elif key == "lambda":
            d.pop("s0", None)
        elif key == "ic.alpha":
            d.pop("ic.m0", None)
            d["ic.kind"] = "step"
        elif key == "ic.m0":
            d.pop("ic.alpha", None)
            d["ic.kind"] = "ramp"
        d[key] = value
        return replace(from_mapping(d), output_dir=self.output_dir)


def _get(d: dict, key: str, default=None):
    return d[key] if key in d else default


def from_mapping(d: dict) -> RunSpec:
    """Validate a flat mapping into a RunSpec; every failure names its key."""
    d = {k: _coerce(k, v) for k, v in d.items()}
    for key in ("kappa", "t_end"):
        if key not in d:
            raise ConfigError(f"missing required key {key!r}")
    if ("lambda" in d) == ("s0" in d):
        raise ConfigError("exactly one of 'lambda' and 's0' must be given")
    if d["kappa"] == 0.0:
        raise ConfigError("kappa: must be nonzero")
    if "lambda" in d and d["lambda"] < 0.0:
        raise ConfigError(f"lambda: must be >= 0, got {d['lambda']!r}")
    if "s0" in d and not d["s0"] > 0.0:
        raise ConfigError(f"s0: must be positive, got {d['s0']!r}")
    if not d["t_end"] > 0.0:
        raise ConfigError(f"t_end: must be positive, got {d['t_end']!r}")

    kind = _get(d, "ic.kind", "step")
    if kind not in ("step", "ramp"):
        raise ConfigError(f"ic.kind: must be 'step' or 'ramp', got {kind!r}")
    alpha = _get(d, "ic.alpha", 0.5)
    m0 = _get(d, "ic.m0", 0.5)
    if kind == "step" and not 0.0 < alpha <= 1.0:
        raise ConfigError(f"ic.alpha: must lie in (0, 1], got {alpha!r}")
    if kind == "ramp" and not 0.0 < m0 <= 0.5:
        raise ConfigError(f"ic.m0: must lie in (0, 0.5], got {m0!r}")

    try:
        mesh = MeshSpec(n_nodes=_get(d, "mesh.n_nodes", 1001), dy_min=_get(d, "mesh.dy_min", 1e-6))
    except ValueError as exc:
        raise ConfigError(f"mesh: {exc}") from None

    for key in ("stepper.dt", "stepper.newton_tol", "blowup_speed_threshold", "blowup_resolution"):
        if key in d and not d[key] > 0.0:
            raise ConfigError(f"{key}: must be positive, got {d[key]!r}")
    if _get(d, "stepper.newton_max_iters", 25) < 2:
        raise ConfigError("stepper.newton_max_iters: must be at least 2")
    if _get(d, "sample_every", 1) < 1:
        raise ConfigError("sample_every: must be at least 1")
    snaps = tuple(_get(d, "snapshots", []))
    if any(t < 0.0 for t in snaps):
        raise ConfigError("snapshots: times must be non-negative")

    return RunSpec(
        kappa=d["kappa"], t_end=d["t_end"], lam=_get(d, "lambda"), s0=_get(d, "s0"),
        ic_kind=kind, ic_alpha=alpha, ic_m0=m0,
        blowup_speed_threshold=_get(d, "blowup_speed_threshold", 1e4),
        blowup_resolution=_get(d, "blowup_resolution", 1.0),
        mesh=mesh, dt=_get(d, "stepper.dt", 1e-4),
        newton_tol=_get(d, "stepper.newton_tol", 1e-10),
        newton_max_iters=_get(d, "stepper.newton_max_iters", 25),
        sample_every=_get(d, "sample_every", 1), snapshots=snaps,
        output_dir=_get(d, "output_dir"),
    )


def sweep_from_mapping(d: dict) -> tuple[RunSpec, str, list[float]]:
    if "sweep.parameter" not in d:
        raise ConfigError("missing required key 'sweep.parameter'")
    param = d["sweep.parameter"]
    if param not in SWEEPABLE:
        raise ConfigError(f"sweep.parameter: must be one of {', '.join(SWEEPABLE)}, got {param!r}")
    values = list(d.get("sweep.values", []))
    if not values:
        raise ConfigError("sweep.values: sweep list is empty")
    if len(set(values)) != len(values):
        raise ConfigError("sweep.values: duplicate values")
    base = {k: v for k, v in d.items() if not k.startswith("sweep.")}
    base.setdefault(param, values[0])
    if param == "s0":
        base.pop("lambda", None)
    elif param == "lambda":
        base.pop("s0", None)
    spec = from_mapping(base)
    for v in values:
        spec.with_value(param, v)  # validate every value before any run starts
    return spec, param, sorted(values)


@dataclass(frozen=True)
class RunResult:
    spec: RunSpec
    trace: Trace  # in the units the run was requested in
    classification: Classification
    wall_seconds: float = 0.0


def execute(spec: RunSpec, stencil_perturbation: float = 0.0) -> RunResult:
    import time

    cfg, p = spec.problem()
    mesh = build_mesh(spec.mesh)
    L = spec.scale
    t0 = time.perf_counter()
    trace = run(cfg, mesh, p, sample_every=spec.sample_every,
                snapshot_times=[t / L**2 for t in spec.snapshots],
                stencil_perturbation=stencil_perturbation)
    if spec.s0 is not None:
        trace = trace.rescaled(spec.s0)
    verdict = classify(trace, cfg)
    return RunResult(spec=spec, trace=trace, classification=verdict,
                     wall_seconds=time.perf_counter() - t0)


def to_jsonable(obj):
    """Replace non-finite floats with None and numpy scalars with Python ones."""
    if isinstance(obj, dict):
        return {k: to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj
