"""Two-layer network f(x) = sum_k a_k sigma(w_k . x) trained online for the
staircase experiments: mixed-cumulant classification with censored test
sets, and Hermite teacher-student regression with top-k overlap tracking.

Squared loss on scalar targets throughout (labels are +-1 for the
classification task, where the test metric is the sign-mismatch rate).
First and second layer use two timescales, eta2 = eps * eta1.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from . import _kernels
from .errors import DivergenceError
from .hermite import Activation, Relu, hermite_eval
from .mcm import (CensorMode, McmParams, SpikeSet, planted_covariance,
                  sample_censored_batch, sample_mcm_batch)
from .sampling import RngHandle

DEFAULT_CENSOR_MODES = (CensorMode.FULL, CensorMode.MEAN_ONLY,
                        CensorMode.MEAN_COV, CensorMode.GAUSSIAN_EQUIVALENT)


@dataclass
class TwoLayerNet:
    W: np.ndarray
    a: np.ndarray
    activation: Activation

    def __post_init__(self):
        if self.W.ndim != 2 or self.a.shape != (self.W.shape[0],):
            raise ValueError("W must be (m, d) and a must be (m,)")
        if not (np.isfinite(self.W).all() and np.isfinite(self.a).all()):
            raise ValueError("weights must be finite")

    @property
    def m(self) -> int:
        return self.W.shape[0]

    @property
    def d(self) -> int:
        return self.W.shape[1]

    @classmethod
    def init(cls, d: int, m: int, activation: Activation, rng: RngHandle) -> "TwoLayerNet":
        """Mean-field-style start: rows ~ N(0, 1/d), second layer +-1/m."""
        W = rng.normal((m, d)) / math.sqrt(d)
        a = rng.rademacher(m) / m
        return cls(W, a, activation)

    def copy(self) -> "TwoLayerNet":
        return TwoLayerNet(self.W.copy(), self.a.copy(), self.activation)


def forward(net: TwoLayerNet, x: np.ndarray) -> float:
    if x.shape != (net.d,):
        raise ValueError("input dimension mismatch")
    return float(net.a @ np.asarray(net.activation(net.W @ x)))


def forward_batch(net: TwoLayerNet, X: np.ndarray) -> np.ndarray:
    return np.asarray(net.activation(X @ net.W.T)) @ net.a


def loss_and_grads(net: TwoLayerNet, x: np.ndarray, y: float):
    """Squared loss 0.5 (f - y)^2 and its gradients (generic activation)."""
    z = net.W @ x
    act = np.asarray(net.activation(z))
    f = float(net.a @ act)
    e = f - y
    ga = e * act
    gW = (e * net.a * np.asarray(net.activation.deriv(z)))[:, None] * x[None, :]
    return 0.5 * e * e, gW, ga


def top_k_overlaps(net: TwoLayerNet, direction: np.ndarray, k: int) -> float:
    """Mean of the k largest |w_j . direction| / |w_j|."""
    if k > net.m:
        raise ValueError("k exceeds the number of hidden neurons")
    norms = np.linalg.norm(net.W, axis=1)
    ok = norms > 0
    if not ok.all():
        warnings.warn(f"excluding {int((~ok).sum())} zero-norm neurons from overlaps")
    vals = np.abs(net.W[ok] @ direction) / norms[ok]
    if vals.size == 0:
        return 0.0
    k = min(k, vals.size)
    return float(np.sort(vals)[-k:].mean())


# ---------------------------------------------------------------------------
# teacher-student targets

@dataclass(frozen=True)
class TeacherSpec:
    """Degree-4 Hermite teacher y*(x) = h1(m.x) + h2(u.x) + h4(v.x), with an
    optional h1(u.x) h1(v.x) cross term ('mixed') and optionally cross-spiked
    Gaussian inputs with covariance 1 + gamma (u v^T + v u^T)."""

    kind: str                  # "plain" | "mixed"
    spikes: SpikeSet
    cross_gamma: float = 0.0
    convention: str = "normalized"

    def __post_init__(self):
        if self.kind not in ("plain", "mixed"):
            raise ValueError("teacher kind must be 'plain' or 'mixed'")
        if not (-1.0 < self.cross_gamma < 1.0):
            raise ValueError("cross_gamma must lie in (-1, 1) for a positive-definite covariance")

    @property
    def d(self) -> int:
        return self.spikes.d


def teacher_label(spec: TeacherSpec, x: np.ndarray):
    """Target values for a single input or a batch of rows."""
    X = np.atleast_2d(x)
    zm, zu, zv = X @ spec.spikes.m, X @ spec.spikes.u, X @ spec.spikes.v
    conv = spec.convention
    y = (hermite_eval(1, zm, conv) + hermite_eval(2, zu, conv)
         + hermite_eval(4, zv, conv))
    if spec.kind == "mixed":
        y = y + hermite_eval(1, zu, conv) * hermite_eval(1, zv, conv)
    return float(y[0]) if x.ndim == 1 else y


def sample_teacher_input(spec: TeacherSpec, n: int, rng: RngHandle) -> np.ndarray:
    """Gaussian inputs, identity or cross-spiked covariance, O(d) per sample."""
    z = rng.normal((n, spec.d))
    g = spec.cross_gamma
    if g == 0.0:
        return z
    u, v = spec.spikes.u, spec.spikes.v
    L = np.linalg.cholesky(np.array([[1.0, g], [g, 1.0]]))
    gu, gv = z @ u, z @ v
    a = L[0, 0] * gu
    b = L[1, 0] * gu + L[1, 1] * gv
    return z + np.outer(a - gu, u) + np.outer(b - gv, v)


# ---------------------------------------------------------------------------
# online training

@dataclass(frozen=True)
class TrainConfig2L:
    eta1: float
    steps: int
    eps: float = 0.01               # eta2 = eps * eta1
    eval_every: int = 1000
    eval_set_size: int = 10_000     # per class / per test set
    eval_log: bool = False          # log-spaced snapshots instead of linear
    top_k: int = 5
    chunk: int = 1024

    def __post_init__(self):
        if self.eta1 < 0:
            raise ValueError("eta1 must be non-negative")
        if not (0.0 < self.eps <= 1.0):
            raise ValueError("eps must lie in (0, 1]")
        if self.steps < 1 or self.eval_every < 1:
            raise ValueError("steps and eval_every must be positive")

    def snapshot_steps(self) -> np.ndarray:
        if not self.eval_log:
            pts = np.arange(0, self.steps + 1, self.eval_every)
        else:
            n_pts = max(2, int(round(math.log10(max(self.steps, 10)) * self.eval_every)))
            pts = np.unique(np.round(np.geomspace(1, self.steps, n_pts)).astype(np.int64))
            pts = np.concatenate([[0], pts])
        if pts[-1] != self.steps:
            pts = np.concatenate([pts, [self.steps]])
        return pts.astype(np.int64)


@dataclass
class TrainLog2L:
    task: str                                 # "mcm" | "teacher"
    steps: np.ndarray
    loss_train: np.ndarray                    # mean train loss since previous snapshot
    metrics: dict[str, np.ndarray]
    top5: dict[str, np.ndarray]               # keys "m", "u", "v"
    d: int
    m: int

    def columns(self) -> list[str]:
        if self.task == "mcm":
            metric_cols = ["err_full", "err_mean_only", "err_mean_cov", "err_gauss_equiv"]
        else:
            metric_cols = ["mse_test"]
        return ["step", "loss_train"] + metric_cols + ["top5_m", "top5_u", "top5_v"]

    def write_csv(self, fh):
        cols = self.columns()
        fh.write(",".join(cols) + "\n")
        arrays = {"step": self.steps, "loss_train": self.loss_train,
                  "top5_m": self.top5["m"], "top5_u": self.top5["u"],
                  "top5_v": self.top5["v"], **self.metrics}
        for i in range(self.steps.shape[0]):
            row = []
            for c in cols:
                v = arrays[c][i]
                row.append(str(int(v)) if c == "step" else repr(float(v)))
            fh.write(",".join(row) + "\n")

    def first_step_below(self, metric: str, level: float) -> Optional[int]:
        vals = self.metrics[metric]
        hits = np.nonzero(vals < level)[0]
        return int(self.steps[hits[0]]) if hits.size else None


def _mcm_test_sets(params: McmParams, spikes: SpikeSet, modes, size: int, rng: RngHandle):
    sets = {}
    for mode in modes:
        y, x = sample_censored_batch(params, spikes, mode, 2 * size, rng.derive(mode.value))
        sets[mode] = (y, x)
    return sets


def _classification_errors(net: TwoLayerNet, test_sets) -> dict[str, float]:
    out = {}
    for mode, (y, x) in test_sets.items():
        pred = np.sign(forward_batch(net, x))
        pred[pred == 0] = 1.0
        out[f"err_{mode.value}"] = float(np.mean(pred != y))
    return out


def train_online(net: TwoLayerNet, task: Union[McmParams, TeacherSpec],
                 config: TrainConfig2L, rng: RngHandle,
                 spikes: Optional[SpikeSet] = None,
                 censor_modes=DEFAULT_CENSOR_MODES) -> TrainLog2L:
    """Single-pass online SGD (batch size 1) with periodic evaluation.

    MCM classification needs ``spikes``; teacher regression carries its own.
    The network is modified in place and also returned via the log-free
    ``net`` reference.
    """
    is_mcm = isinstance(task, McmParams)
    if is_mcm:
        if spikes is None:
            raise ValueError("MCM training needs a SpikeSet")
        test_sets = _mcm_test_sets(task, spikes, censor_modes,
                                   config.eval_set_size, rng.derive("eval"))
        track = spikes
    else:
        track = task.spikes
        eval_rng = rng.derive("eval")
        x_test = sample_teacher_input(task, 2 * config.eval_set_size, eval_rng)
        y_test = teacher_label(task, x_test)

    data_rng = rng.derive("data")
    snaps = config.snapshot_steps()
    n_snap = snaps.shape[0]
    loss_log = np.zeros(n_snap)
    top5 = {k: np.zeros(n_snap) for k in ("m", "u", "v")}
    metrics: dict[str, list] = {}
    use_kernel = isinstance(net.activation, Relu)
    eta2 = config.eps * config.eta1

    def snapshot(idx, mean_loss):
        loss_log[idx] = mean_loss
        k_eff = min(config.top_k, net.m)
        for key, direction in (("m", track.m), ("u", track.u), ("v", track.v)):
            top5[key][idx] = top_k_overlaps(net, direction, k_eff)
        vals = (_classification_errors(net, test_sets) if is_mcm
                else {"mse_test": float(np.mean((forward_batch(net, x_test) - y_test) ** 2))})
        for k, v in vals.items():
            metrics.setdefault(k, []).append(v)

    snapshot(0, 0.0)
    t = 0
    loss_acc, loss_cnt = 0.0, 0
    for idx in range(1, n_snap):
        target = int(snaps[idx])
        while t < target:
            b = min(config.chunk, target - t)
            if is_mcm:
                ys, X = sample_mcm_batch(task, spikes, b, data_rng)
            else:
                X = sample_teacher_input(task, b, data_rng)
                ys = teacher_label(task, X)
            if use_kernel:
                ls, status, done = _kernels.two_layer_relu_chunk(
                    net.W, net.a, X, ys, config.eta1, eta2)
                if status == 2:
                    raise DivergenceError(t + done + 1)
            else:
                ls = 0.0
                for i in range(b):
                    step_loss, gW, ga = loss_and_grads(net, X[i], float(ys[i]))
                    if not math.isfinite(step_loss):
                        raise DivergenceError(t + i + 1)
                    net.W -= config.eta1 * gW
                    net.a -= eta2 * ga
                    ls += step_loss
            loss_acc += ls
            loss_cnt += b
            t += b
        snapshot(idx, loss_acc / max(loss_cnt, 1))
        loss_acc, loss_cnt = 0.0, 0

    return TrainLog2L(
        task="mcm" if is_mcm else "teacher",
        steps=snaps, loss_train=loss_log,
        metrics={k: np.array(v) for k, v in metrics.items()},
        top5=top5, d=net.d, m=net.m)
