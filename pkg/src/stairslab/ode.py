"""Deterministic search-phase dynamics: the two-overlap ODE system and the
comparison against seed-averaged SGD traces.

The reduced system inside the small-overlap region is

    da_u/dt = 2 c20 a_u + c11 a_v
    da_v/dt = c11 a_u + 4 c04 a_v^3 - 2 c20 a_u^2 a_v

where the last term is the distortion of the spherical projection. One SGD
step corresponds to dt = delta / d up to an O(1) convention factor, which is
fitted (and reported), never assumed.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import NumericalAccuracyError


class SearchOdeCoeffs(NamedTuple):
    c20: float
    c11: float
    c04: float


def ode_rhs(coeffs: SearchOdeCoeffs, alpha_u: float, alpha_v: float):
    du = 2.0 * coeffs.c20 * alpha_u + coeffs.c11 * alpha_v
    dv = (coeffs.c11 * alpha_u + 4.0 * coeffs.c04 * alpha_v ** 3
          - 2.0 * coeffs.c20 * alpha_u ** 2 * alpha_v)
    return du, dv


@dataclass(frozen=True)
class OdeTrajectory:
    t: np.ndarray
    alpha_u: np.ndarray
    alpha_v: np.ndarray
    eta_region: float
    dt: float
    exit_time: Optional[float]  # None if the region was never left

    def __post_init__(self):
        if not (np.isfinite(self.alpha_u).all() and np.isfinite(self.alpha_v).all()):
            raise ValueError("trajectory contains non-finite overlaps")


def _rk4_path(coeffs, alpha0, t_end, dt, eta_region):
    n = int(np.ceil(t_end / dt))
    t = np.empty(n + 1)
    au = np.empty(n + 1)
    av = np.empty(n + 1)
    au[0], av[0] = alpha0
    t[0] = 0.0
    exit_time = None
    last = n
    for s in range(n):
        x, y = au[s], av[s]
        k1u, k1v = ode_rhs(coeffs, x, y)
        k2u, k2v = ode_rhs(coeffs, x + 0.5 * dt * k1u, y + 0.5 * dt * k1v)
        k3u, k3v = ode_rhs(coeffs, x + 0.5 * dt * k2u, y + 0.5 * dt * k2v)
        k4u, k4v = ode_rhs(coeffs, x + dt * k3u, y + dt * k3v)
        au[s + 1] = x + dt * (k1u + 2 * k2u + 2 * k3u + k4u) / 6.0
        av[s + 1] = y + dt * (k1v + 2 * k2v + 2 * k3v + k4v) / 6.0
        t[s + 1] = (s + 1) * dt
        if max(abs(au[s + 1]), abs(av[s + 1])) >= eta_region:
            exit_time = t[s + 1]
            last = s + 1
            break
    return t[: last + 1], au[: last + 1], av[: last + 1], exit_time


def integrate(coeffs: SearchOdeCoeffs, alpha0: tuple[float, float], t_end: float,
              dt: float, eta_region: float = 0.3) -> OdeTrajectory:
    """Fixed-step RK4 with a step-halving accuracy check; stops at region exit."""
    if dt <= 0 or t_end <= 0:
        raise ValueError("t_end and dt must be positive")
    t, au, av, exit_time = _rk4_path(coeffs, alpha0, t_end, dt, eta_region)
    t2, au2, av2, _ = _rk4_path(coeffs, alpha0, float(t[-1]), dt / 2.0, np.inf)
    err = max(abs(au[-1] - au2[-1]), abs(av[-1] - av2[-1]))
    if err > 1e-8:
        raise NumericalAccuracyError(
            f"RK4 step dt={dt:g} fails the halving check (endpoint shift {err:.2e}); "
            "reduce dt")
    return OdeTrajectory(t, au, av, eta_region, dt, exit_time)


@dataclass(frozen=True)
class OdeCompareReport:
    sup_dev_u: float
    sup_dev_v: float
    time_scale: float       # fitted multiplier on (delta / d) per SGD step
    eta_region: float
    n_points: int

    @property
    def sup_dev(self) -> float:
        return max(self.sup_dev_u, self.sup_dev_v)


def sgd_ode_compare(trace_t: np.ndarray, trace_u: np.ndarray, trace_v: np.ndarray,
                    traj: OdeTrajectory, delta: float, d: int,
                    eta_region: Optional[float] = None,
                    fit_scale: bool = True) -> OdeCompareReport:
    """Sup-norm deviation between a (seed-averaged) SGD overlap trace and the
    ODE trajectory, inside the eta-region.

    SGD step t maps to ODE time s * (delta / d) * t; the scalar s is fitted by
    minimising the joint sup deviation unless ``fit_scale`` is false.
    """
    if eta_region is not None and abs(eta_region - traj.eta_region) > 1e-12:
        raise ValueError(
            f"eta regions differ: trace {eta_region} vs trajectory {traj.eta_region}")
    region = traj.eta_region
    inside = (np.abs(trace_u) <= region) & (np.abs(trace_v) <= region)
    t_sgd = np.asarray(trace_t, dtype=float)[inside]
    su = np.asarray(trace_u)[inside]
    sv = np.asarray(trace_v)[inside]
    if t_sgd.size < 4:
        raise ValueError("too few trace points inside the comparison region")
    base = t_sgd * (delta / d)

    def dev(scale):
        s = base * scale
        ok = s <= traj.t[-1]
        if ok.sum() < 4:
            return np.inf, np.inf
        ou = np.interp(s[ok], traj.t, traj.alpha_u)
        ov = np.interp(s[ok], traj.t, traj.alpha_v)
        return float(np.max(np.abs(ou - su[ok]))), float(np.max(np.abs(ov - sv[ok])))

    if fit_scale:
        grid = np.geomspace(0.25, 4.0, 161)
        scores = [max(*dev(s)) for s in grid]
        scale = float(grid[int(np.argmin(scores))])
    else:
        scale = 1.0
    du, dv = dev(scale)
    return OdeCompareReport(du, dv, scale, region, int(t_sgd.size))
