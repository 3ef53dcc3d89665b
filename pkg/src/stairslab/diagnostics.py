"""Cross-module verification oracles: Monte-Carlo population loss, unbiased
directional cumulants, and activation/moment assumption checks.

These stay deliberately independent of the Hermite-series path: the loss is
estimated on full d-dimensional samples with an explicitly constructed
weight vector, and cumulants use exact k-statistics rather than the closed
forms they are tested against.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .hermite import Activation, activation_coeff, mcm_assumption_holds
from .mcm import McmParams, SpikeSet, sample_mcm_batch
from .sampling import RngHandle, sample_unit_sphere


@dataclass(frozen=True)
class MomentReport:
    order: int
    estimate: float
    standard_error: float
    n_used: int

    def __post_init__(self):
        if not math.isfinite(self.estimate):
            raise ValueError("estimate must be finite")


def construct_overlap_weight(spikes: SpikeSet, alpha_u: float, alpha_v: float,
                             rng: RngHandle) -> np.ndarray:
    """Unit w with the requested overlaps: w = a_u u + a_v v + residual."""
    slack = 1.0 - alpha_u ** 2 - alpha_v ** 2
    if slack < -1e-12:
        raise ValueError("infeasible overlaps: alpha_u^2 + alpha_v^2 > 1")
    slack = max(slack, 0.0)
    w_perp = sample_unit_sphere(spikes.d, rng)
    for direction in (spikes.m, spikes.u, spikes.v):
        w_perp -= (w_perp @ direction) * direction
    w_perp /= np.linalg.norm(w_perp)
    return alpha_u * spikes.u + alpha_v * spikes.v + math.sqrt(slack) * w_perp


def mc_population_loss(params: McmParams, spikes: SpikeSet, sigma: Activation,
                       alpha_u: float, alpha_v: float, n_mc: int, rng: RngHandle,
                       chunk: int = 100_000):
    """Empirical mean of 1 - y sigma(w.x) over fresh samples; returns (estimate, se)."""
    w = construct_overlap_weight(spikes, alpha_u, alpha_v, rng.derive("wperp"))
    data_rng = rng.derive("mc")
    total = 0.0
    total_sq = 0.0
    done = 0
    while done < n_mc:
        b = min(chunk, n_mc - done)
        y, x = sample_mcm_batch(params, spikes, b, data_rng)
        vals = 1.0 - y * np.asarray(sigma(x @ w))
        total += vals.sum()
        total_sq += (vals * vals).sum()
        done += b
    mean = total / done
    var = max(total_sq / done - mean * mean, 0.0)
    return float(mean), float(math.sqrt(var / done))


def directional_cumulant(samples: np.ndarray, direction: np.ndarray, order: int,
                         n_batches: int = 20) -> MomentReport:
    """Unbiased k-statistic of the projections, with a batch-means error bar."""
    if order not in (2, 3, 4):
        raise ValueError("supported cumulant orders are 2, 3, 4")
    proj = np.asarray(samples) @ np.asarray(direction)
    n = proj.shape[0]
    if n < 10_000:
        raise ValueError(f"need at least 10^4 samples for stable k-statistics, got {n}")
    estimate = float(stats.kstat(proj, order))
    batch = n // n_batches
    per_batch = [float(stats.kstat(proj[i * batch:(i + 1) * batch], order))
                 for i in range(n_batches)]
    se = float(np.std(per_batch, ddof=1) / math.sqrt(n_batches))
    return MomentReport(order, estimate, se, n)


@dataclass(frozen=True)
class AssumptionReport:
    c2: float
    c4: float
    sign_conditions_pass: bool
    max_deriv_moment_4: float
    max_deriv_moment_high: float
    high_moment_order: float
    coeff_partial_sums: np.ndarray   # partial sums of k |c_sigma_k|
    n_directions: int

    @property
    def passed(self) -> bool:
        return self.sign_conditions_pass


def assumption_check(sigma: Activation, params: McmParams, spikes: SpikeSet,
                     rng: RngHandle, n_directions: int = 100, n_mc: int = 20_000,
                     max_degree: int = 12, high_order: float = 9.0) -> AssumptionReport:
    """Diagnostic report for the activation conditions.

    The suprema over the whole sphere are not computable; the maxima over
    ``n_directions`` random unit vectors are an explicit under-approximation.
    """
    ok, c2, c4 = mcm_assumption_holds(sigma)
    dir_rng = rng.derive("dirs")
    data_rng = rng.derive("data")
    _, x = sample_mcm_batch(params, spikes, n_mc, data_rng)
    max4 = 0.0
    max_high = 0.0
    for _ in range(n_directions):
        w = sample_unit_sphere(params.d, dir_rng)
        dvals = np.abs(np.asarray(sigma.deriv(x @ w)))
        max4 = max(max4, float(np.mean(dvals ** 4)))
        max_high = max(max_high, float(np.mean(dvals ** high_order)))
    terms = np.array([k * abs(activation_coeff(sigma, k)) for k in range(max_degree + 1)])
    return AssumptionReport(
        c2=c2, c4=c4, sign_conditions_pass=ok,
        max_deriv_moment_4=max4, max_deriv_moment_high=max_high,
        high_moment_order=high_order,
        coeff_partial_sums=np.cumsum(terms), n_directions=n_directions)
