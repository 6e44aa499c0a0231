"""
Writers for run artifacts: trace and profile CSVs, summary and manifest JSON.

All files for one run are written into a single directory.  If any write
fails, everything already written by that call is removed again, so a run
either leaves a complete set of files or none.
"""

from __future__ import annotations

import io
import json
import os
import shutil
from pathlib import Path

import numpy as np

from . import __version__
from .config import RunResult, to_jsonable
from .solver import Snapshot, Trace

TRACE_HEADER = "t,s,dsdt,M"
PROFILE_HEADER = "y,x,u"


def _fmt(x: float) -> str:
    return format(float(x), ".17g")


def trace_csv(trace: Trace) -> str:
    buf = io.StringIO()
    buf.write(TRACE_HEADER + "\n")
    for row in zip(trace.t, trace.s, trace.dsdt, trace.M):
        buf.write(",".join(_fmt(v) for v in row) + "\n")
    return buf.getvalue()


def profile_csv(snap: Snapshot) -> str:
    buf = io.StringIO()
    buf.write(PROFILE_HEADER + "\n")
    for y, x, u in zip(snap.y, snap.x, snap.u):
        buf.write(f"{_fmt(y)},{_fmt(x)},{_fmt(u)}\n")
    return buf.getvalue()


def read_trace_csv(path) -> dict:
    data = np.genfromtxt(path, delimiter=",", names=True)
    return {k: np.atleast_1d(data[k]) for k in data.dtype.names}


def summary_dict(res: RunResult) -> dict:
    tr = res.trace
    return to_jsonable({
        "config": res.spec.echo(),
        "units": "unscaled" if res.spec.s0 is not None else "scaled",
        "termination": tr.termination.to_dict(),
        "final": {"t": float(tr.t[-1]), "s": float(tr.s[-1]), "M": float(tr.M[-1])},
        "newton": tr.newton_stats(),
        "classification": res.classification.to_dict(),
    })


def ensure_writable(out_dir: Path) -> bool:
    """Create ``out_dir`` if needed and probe it; returns whether it was created."""
    created = not out_dir.exists()
    out_dir.mkdir(parents=True, exist_ok=True)
    probe = out_dir / f".probe-{os.getpid()}"
    try:
        probe.write_text("")
    finally:
        if probe.exists():
            probe.unlink()
    return created


def _cleanup(paths, out_dir: Path, created: bool):
    for p in paths:
        try:
            p.unlink()
        except OSError:
            pass
    if created:
        shutil.rmtree(out_dir, ignore_errors=True)


def write_run(res: RunResult, out_dir, created: bool = False) -> list[str]:
    """Write every artifact of one run; returns the file names relative to ``out_dir``."""
    out_dir = Path(out_dir)
    tr = res.trace
    files: dict[str, str] = {"trace.csv": trace_csv(tr)}
    profiles = []
    for i, sn in enumerate(tr.snapshots):
        name = f"profile_{i:03d}.csv"
        files[name] = profile_csv(sn)
        profiles.append({"file": name, "t": sn.t, "s": sn.s})
    if tr.final is not None:
        files["final_state.csv"] = profile_csv(tr.final)
        profiles.append({"file": "final_state.csv", "t": tr.final.t, "s": tr.final.s})

    summary = summary_dict(res)
    summary["profiles"] = to_jsonable(profiles)
    files["summary.json"] = json.dumps(summary, indent=2) + "\n"

    names = sorted(files) + ["manifest.json"]
    manifest = {
        "tool": "fisherstefan",
        "version": __version__,
        "config": res.spec.echo(),
        "wall_seconds": res.wall_seconds,
        "files": names,
    }
    files["manifest.json"] = json.dumps(to_jsonable(manifest), indent=2) + "\n"

    written = []
    try:
        out_dir.mkdir(parents=True, exist_ok=True)
        for name in names:
            path = out_dir / name
            path.write_text(files[name])
            written.append(path)
    except OSError:
        _cleanup(written, out_dir, created)
        raise
    return names
