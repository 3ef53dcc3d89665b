"""Spherical perceptron trained by projected online SGD under the
correlation loss, with overlap tracking and weak-recovery detection.

One fresh sample per step, never reused. The mean spike is excluded
(beta_m = 0): the single-neuron analysis concerns the covariance and
cumulant directions only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import _kernels
from .errors import DivergenceError
from .hermite import Activation, Relu, SmoothedRelu, require_mcm_assumption
from .mcm import LabeledSample, McmParams, SpikeSet, sample_mcm_batch
from .sampling import RngHandle, sample_unit_sphere


# ---------------------------------------------------------------------------
# reference single-step operations

def spherical_gradient(w: np.ndarray, g: np.ndarray) -> np.ndarray:
    """(1 - w w^T) g in O(d); w must be unit norm."""
    if abs(np.linalg.norm(w) - 1.0) > 1e-6:
        raise ValueError("invalid state: weight is not unit norm")
    return g - (w @ g) * w


def sample_gradient(w: np.ndarray, sample: LabeledSample, sigma: Activation) -> np.ndarray:
    """Gradient of the correlation loss 1 - y sigma(w.x): -y sigma'(w.x) x."""
    pre = float(w @ sample.x)
    return -sample.y * float(sigma.deriv(pre)) * sample.x


@dataclass
class PerceptronState:
    w: np.ndarray
    spikes: SpikeSet
    t: int = 0
    alpha_u: float = field(init=False)
    alpha_v: float = field(init=False)

    def __post_init__(self):
        if abs(np.linalg.norm(self.w) - 1.0) > 1e-10:
            raise ValueError("weight must be unit norm")
        self.refresh_overlaps()

    def refresh_overlaps(self):
        self.alpha_u = float(self.w @ self.spikes.u)
        self.alpha_v = float(self.w @ self.spikes.v)


def sgd_step(state: PerceptronState, sample: LabeledSample, sigma: Activation,
             delta: float) -> PerceptronState:
    """One projected step: w <- normalize(w - (delta/d) grad_sph)."""
    d = state.w.shape[0]
    tangent = spherical_gradient(state.w, sample_gradient(state.w, sample, sigma))
    w_tilde = state.w - (delta / d) * tangent
    nrm = float(np.linalg.norm(w_tilde))
    assert nrm >= 1.0 - 1e-12, "tangent update cannot shrink the weight"
    new = PerceptronState(w_tilde / nrm, state.spikes)
    new.t = state.t + 1
    return new


def lr_schedule(regime: str, d: int, prefactor: float = 1.0) -> float:
    """Learning rates matched to the scaling regimes of the theory."""
    if regime == "fixed":
        return prefactor
    if d < 3:
        raise ValueError("log-based schedules need d >= 3")
    if regime == "cov_large":
        return prefactor / math.log(d)
    if regime in ("cumulant_scale", "suboptimal"):
        return prefactor / (d * math.log(d))
    raise ValueError(f"unknown learning-rate regime {regime!r}")


# ---------------------------------------------------------------------------
# full training runs

@dataclass(frozen=True)
class SgdConfig:
    delta: float
    max_steps: int
    eta: float = 0.3
    condition_matched_init: bool = False
    record_every: int = 0         # 0: pick ~512 evenly spaced records
    stop_when: tuple[str, ...] = ("u", "v")
    chunk: int = 4096

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if not (0.0 < self.eta < 1.0):
            raise ValueError("eta must lie in (0, 1)")
        if self.max_steps < 1:
            raise ValueError("max_steps must be positive")
        if any(s not in ("u", "v") for s in self.stop_when):
            raise ValueError("stop_when entries must be 'u' or 'v'")

    @property
    def effective_record_every(self) -> int:
        if self.record_every > 0:
            return self.record_every
        return max(1, self.max_steps // 512)


@dataclass(frozen=True)
class OverlapTrace:
    t: np.ndarray
    alpha_u: np.ndarray
    alpha_v: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.t) <= 0):
            raise ValueError("trace times must be strictly increasing")
        if np.max(np.abs(self.alpha_u), initial=0.0) > 1.0 + 1e-9:
            raise ValueError("overlaps must stay in [-1, 1]")

    def write_csv(self, fh):
        fh.write("t,alpha_u,alpha_v\n")
        for t, au, av in zip(self.t, self.alpha_u, self.alpha_v):
            fh.write(f"{int(t)},{au!r},{av!r}\n")


def average_traces(traces: list[OverlapTrace]) -> OverlapTrace:
    """Average aligned traces over seeds on their longest shared time grid.

    Early-stopped runs append one off-grid final point; the average is taken
    over the prefix where all recording times agree."""
    n = min(tr.t.shape[0] for tr in traces)
    stack = np.stack([tr.t[:n] for tr in traces])
    agree = np.all(stack == stack[0:1], axis=0)
    if not agree.all():
        n = int(np.argmin(agree))
    if n < 2:
        raise ValueError("traces are not on a common recording grid")
    t0 = traces[0].t[:n]
    au = np.mean([tr.alpha_u[:n] for tr in traces], axis=0)
    av = np.mean([tr.alpha_v[:n] for tr in traces], axis=0)
    return OverlapTrace(t0, au, av)


@dataclass(frozen=True)
class RecoveryReport:
    tau_u: Optional[int]
    tau_v: Optional[int]
    final_alpha_u: float
    final_alpha_v: float
    steps: int
    eta: float
    delta: float
    d: int
    trace: OverlapTrace
    seed: Optional[int] = None
    regime: str = ""

    @property
    def recovered_u(self) -> bool:
        return self.tau_u is not None

    @property
    def recovered_v(self) -> bool:
        return self.tau_v is not None

    def to_json_dict(self) -> dict:
        return {
            "tau_u": self.tau_u,
            "tau_v": self.tau_v,
            "final_alpha_u": self.final_alpha_u,
            "final_alpha_v": self.final_alpha_v,
            "steps": self.steps,
            "eta": self.eta,
            "delta": self.delta,
            "d": self.d,
            "seed": self.seed,
            "regime": self.regime,
        }


def _draw_initial_weight(spikes: SpikeSet, rng: RngHandle, matched: bool) -> np.ndarray:
    w = sample_unit_sphere(spikes.d, rng)
    if matched:
        while (w @ spikes.u) * (w @ spikes.v) <= 0.0:
            w = sample_unit_sphere(spikes.d, rng)
    return w


def train(params: McmParams, spikes: SpikeSet, sigma: Activation, config: SgdConfig,
          rng: RngHandle, w0: Optional[np.ndarray] = None, seed_label: Optional[int] = None,
          regime_label: str = "") -> RecoveryReport:
    """Online SGD for up to max_steps fresh samples; reports first-hitting
    times of |overlap| >= eta for both spikes and the recorded overlap trace."""
    if params.beta_m != 0.0:
        raise ValueError("perceptron runs exclude the mean spike (set beta_m = 0)")
    if spikes.d != params.d:
        raise ValueError("spike dimension does not match params")
    require_mcm_assumption(sigma)

    rng_init = rng.derive("init")
    rng_data = rng.derive("data")
    if w0 is None:
        w = _draw_initial_weight(spikes, rng_init, config.condition_matched_init)
    else:
        w = np.array(w0, dtype=float)
        w /= np.linalg.norm(w)
    au = float(w @ spikes.u)
    av = float(w @ spikes.v)

    if isinstance(sigma, Relu):
        act_kind, act_tau = _kernels.ACT_RELU, 1.0
    elif isinstance(sigma, SmoothedRelu):
        act_kind, act_tau = _kernels.ACT_SMOOTHED_RELU, sigma.tau
    else:
        act_kind = None  # generic python path

    rec_every = config.effective_record_every
    cap = config.max_steps // rec_every + 4
    rec_t = np.zeros(cap, dtype=np.int64)
    rec_u = np.zeros(cap)
    rec_v = np.zeros(cap)
    rec_t[0], rec_u[0], rec_v[0] = 0, au, av
    rec_n = 1
    stop_mask = (1 if "u" in config.stop_when else 0) | (2 if "v" in config.stop_when else 0)
    tau_u = tau_v = -1
    t = 0
    lr_over_d = config.delta / params.d

    while t < config.max_steps:
        b = min(config.chunk, config.max_steps - t)
        ys, X = sample_mcm_batch(params, spikes, b, rng_data)
        xu = X @ spikes.u
        xv = X @ spikes.v
        xsq = np.einsum("ij,ij->i", X, X)
        if act_kind is not None:
            au, av, t, tau_u, tau_v, rec_n, status = _kernels.sgd_chunk(
                w, X, ys, xu, xv, xsq, lr_over_d, act_kind, act_tau,
                config.eta, au, av, t, tau_u, tau_v,
                rec_every, rec_t, rec_u, rec_v, rec_n, stop_mask)
        else:
            au, av, t, tau_u, tau_v, rec_n, status = _sgd_chunk_python(
                w, X, ys, xu, xv, xsq, lr_over_d, sigma,
                config.eta, au, av, t, tau_u, tau_v,
                rec_every, rec_t, rec_u, rec_v, rec_n, stop_mask)
        if status == 2:
            raise DivergenceError(t)
        # kill rounding drift at chunk boundaries; the tangent update keeps
        # |w| >= 1 exactly, so anything below 1/2 is numerical collapse
        nrm_w = float(np.linalg.norm(w))
        if not math.isfinite(nrm_w) or nrm_w < 0.5:
            raise DivergenceError(t, f"weight norm {nrm_w} at step {t}")
        w /= nrm_w
        au = float(w @ spikes.u)
        av = float(w @ spikes.v)
        if status == 1:
            break

    if rec_t[rec_n - 1] != t:
        rec_t[rec_n], rec_u[rec_n], rec_v[rec_n] = t, au, av
        rec_n += 1
    trace = OverlapTrace(rec_t[:rec_n].copy(), rec_u[:rec_n].copy(), rec_v[:rec_n].copy())
    return RecoveryReport(
        tau_u=None if tau_u < 0 else int(tau_u),
        tau_v=None if tau_v < 0 else int(tau_v),
        final_alpha_u=au, final_alpha_v=av, steps=int(t),
        eta=config.eta, delta=config.delta, d=params.d, trace=trace,
        seed=seed_label, regime=regime_label)


def _sgd_chunk_python(w, X, ys, xu, xv, xsq, lr_over_d, sigma,
                      eta, au, av, t0, tau_u, tau_v,
                      rec_every, rec_t, rec_u, rec_v, rec_n, stop_mask):
    """Generic-activation mirror of the numba kernel (identical semantics)."""
    t = t0
    for i in range(X.shape[0]):
        t = t0 + i + 1
        h = float(X[i] @ w)
        if not math.isfinite(h):
            return au, av, t, tau_u, tau_v, rec_n, 2
        dact = float(sigma.deriv(h))
        if dact != 0.0:
            c = lr_over_d * ys[i] * dact
            om = 1.0 - c * h
            nrm = math.sqrt(1.0 + c * c * max(xsq[i] - h * h, 0.0))
            w[:] = (om * w + c * X[i]) / nrm
            au = (om * au + c * xu[i]) / nrm
            av = (om * av + c * xv[i]) / nrm
        if tau_u < 0 and abs(au) >= eta:
            tau_u = t
        if tau_v < 0 and abs(av) >= eta:
            tau_v = t
        if rec_every > 0 and t % rec_every == 0:
            rec_t[rec_n], rec_u[rec_n], rec_v[rec_n] = t, au, av
            rec_n += 1
        if stop_mask:
            if not (stop_mask & 1 and tau_u < 0) and not (stop_mask & 2 and tau_v < 0):
                return au, av, t, tau_u, tau_v, rec_n, 1
    return au, av, t, tau_u, tau_v, rec_n, 0


def with_delta(config: SgdConfig, delta: float) -> SgdConfig:
    return replace(config, delta=delta)
