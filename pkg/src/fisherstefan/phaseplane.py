"""
Retreating travelling waves from the phase plane.

A wave u = U(z), z = x - ct, satisfies U'' + cU' + U(1 - U) = 0 with U -> 1
far behind the front.  Writing V = dU/dz, the relevant orbit leaves the saddle
(1, 0) along its unstable manifold into U < 1, V < 0 and is truncated where it
meets U = 0.  The slope there, V*, fixes the leakage coefficient through the
Stefan condition: c = -kappa V*.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

DEFAULT_DZ = 1e-4
DEFAULT_OFFSET = 1e-6
MAX_STEPS = 10_000_000


class NoCrossing(RuntimeError):
    pass


class NotBracketed(ValueError):
    pass


@dataclass(frozen=True)
class Trajectory:
    z: np.ndarray = field(repr=False)
    U: np.ndarray = field(repr=False)
    V: np.ndarray = field(repr=False)
    c: float
    launch_offset: float

    def crossing_index(self) -> int:
        """Index of the first sample with U <= 0."""
        hit = np.nonzero(self.U <= 0.0)[0]
        if hit.size == 0 or hit[0] == 0:
            raise NoCrossing(f"trajectory for c={self.c:g} never reaches U = 0")
        return int(hit[0])

    def front_z(self) -> float:
        k = self.crossing_index()
        h = _crossing_step(self.U[k - 1], self.V[k - 1], self.c, self.z[k] - self.z[k - 1])
        return float(self.z[k - 1] + h)


@dataclass(frozen=True)
class WaveResult:
    c: float
    v_star: float
    kappa: float


def unstable_eigenvalue(c: float) -> float:
    return 0.5 * (-c + math.sqrt(c * c + 4.0))


def integrate_from_saddle(c: float, dz: float = DEFAULT_DZ,
                          launch_offset: float = DEFAULT_OFFSET,
                          max_steps: int = MAX_STEPS) -> Trajectory:
    """Heun integration of U' = V, V' = -cV - U(1 - U) away from (1, 0).

    Stops at the first sample with U <= 0 (kept, so the crossing is bracketed).
    """
    if not c < 0.0:
        raise ValueError(f"wave speed must be negative, got {c!r}")
    if not 0.0 < dz <= 1e-3:
        raise ValueError(f"dz must lie in (0, 1e-3], got {dz!r}")
    if not 0.0 < launch_offset <= 1e-4:
        raise ValueError(f"launch_offset must lie in (0, 1e-4], got {launch_offset!r}")

    mu = unstable_eigenvalue(c)
    norm = math.hypot(1.0, mu)
    U = 1.0 - launch_offset / norm
    V = -launch_offset * mu / norm

    zs, us, vs = [0.0], [U], [V]
    h = dz
    half = 0.5 * dz
    z = 0.0
    for _ in range(max_steps):
        fu = V
        fv = -c * V - U * (1.0 - U)
        Up = U + h * fu
        Vp = V + h * fv
        U, V = U + half * (fu + Vp), V + half * (fv - c * Vp - Up * (1.0 - Up))
        z += h
        zs.append(z)
        us.append(U)
        vs.append(V)
        if U <= 0.0:
            break
    else:
        raise NoCrossing(f"no crossing of U = 0 within {max_steps} steps for c={c:g}")
    return Trajectory(z=np.array(zs), U=np.array(us), V=np.array(vs), c=c,
                      launch_offset=launch_offset)


def _crossing_step(U: float, V: float, c: float, dz: float) -> float:
    # over one Heun step U(h) = U + hV + h^2 f / 2 exactly, so the partial
    # step landing on U = 0 is a root of that quadratic
    f = -c * V - U * (1.0 - U)
    if f == 0.0:
        return -U / V
    disc = V * V - 2.0 * f * U
    if disc < 0.0:
        return dz
    sq = math.sqrt(disc)
    # numerically stable pair of roots; take the smallest one in (0, dz]
    q = -(V + math.copysign(sq, V))
    roots = [r for r in (q / f, 2.0 * U / q if q != 0.0 else math.inf) if 0.0 < r <= dz * (1 + 1e-12)]
    return min(roots) if roots else dz


def find_v_star(traj: Trajectory) -> float:
    """V where the orbit crosses U = 0.

    The last sample before the crossing is advanced by a truncated Heun step
    that lands exactly on U = 0, so the event adds no error beyond the
    integrator's own.
    """
    k = traj.crossing_index()
    U, V, c = traj.U[k - 1], traj.V[k - 1], traj.c
    h = _crossing_step(U, V, c, traj.z[k] - traj.z[k - 1])
    f = -c * V - U * (1.0 - U)
    Up, Vp = U + h * V, V + h * f
    return float(V + 0.5 * h * (f - c * Vp - Up * (1.0 - Up)))


def _auto_dz(c: float, dz: float) -> float:
    # keep mu * dz small when the saddle is strongly repelling
    return min(dz, 1e-2 / unstable_eigenvalue(c))


def kappa_from_c(c: float, dz: float = DEFAULT_DZ,
                 launch_offset: float = DEFAULT_OFFSET) -> WaveResult:
    v_star = find_v_star(integrate_from_saddle(c, _auto_dz(c, dz), launch_offset))
    return WaveResult(c=c, v_star=v_star, kappa=-c / v_star)


def c_from_kappa(kappa: float, tol: float = 1e-6, dz: float = DEFAULT_DZ) -> float:
    """Invert kappa(c) by bisection in log|c| over [-1e4, -1e-4].

    The bracket is widened by decades (to [-1e6, -1e-8]) when the target lies
    outside it.  Raises NotBracketed if the bracket cannot be made to straddle
    ``kappa`` or if kappa(c) turns out not to be monotone inside it.
    """
    if not -1.0 < kappa < 0.0:
        raise ValueError(f"kappa must lie in (-1, 0), got {kappa!r}")

    def k_of(logc):
        return kappa_from_c(-math.exp(logc), dz).kappa

    # kappa(c) runs from 0 (c -> 0-) down to -1 (c -> -inf)
    lo, hi = math.log(1e-4), math.log(1e4)
    k_lo, k_hi = k_of(lo), k_of(hi)
    while k_lo < kappa and lo > math.log(1e-8):
        lo -= math.log(10.0)
        k_lo = k_of(lo)
    while k_hi > kappa and hi < math.log(1e6):
        hi += math.log(10.0)
        k_hi = k_of(hi)
    if not k_hi <= kappa <= k_lo:
        raise NotBracketed(
            f"kappa={kappa!r} not bracketed by kappa(c) on c in "
            f"[{-math.exp(hi):.3g}, {-math.exp(lo):.3g}] (values {k_hi:.9f}, {k_lo:.9f})"
        )

    for _ in range(200):
        mid = 0.5 * (lo + hi)
        k_mid = k_of(mid)
        if not k_hi <= k_mid <= k_lo:
            raise NotBracketed(f"kappa(c) is not monotone near c={-math.exp(mid):.6g}")
        if abs(k_mid - kappa) < tol:
            return -math.exp(mid)
        if k_mid > kappa:
            lo, k_lo = mid, k_mid
        else:
            hi, k_hi = mid, k_mid
        if hi - lo < 1e-15:
            break
    raise NotBracketed(f"bisection stalled before reaching tol={tol:g} for kappa={kappa!r}")


def asymptotic_kappa(c: float) -> float:
    """Large-|c| limit kappa ~ -1 + 1/(2c^2)."""
    if not c < 0.0:
        raise ValueError("c must be negative")
    return -1.0 + 1.0 / (2.0 * c * c)


def asymptotic_profile(c: float, z):
    """Large-|c| wave profile, with z = 0 at the front and z < 0 behind it."""
    if not c < 0.0:
        raise ValueError("c must be negative")
    z = np.asarray(z, dtype=float)
    e = np.exp(-c * z)
    out = 1.0 - e + e * (2.0 * c * z - 1.0 + e) / (2.0 * c * c)
    return float(out) if out.ndim == 0 else out
