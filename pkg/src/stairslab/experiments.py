"""Config-driven experiment harness: dimension sweeps, recovery-time
statistics, exponent fits, coupling comparisons, and artifact emission.

Budgets are named rules tied to the scaling table of the theory rather than
free-form formulas, so config files stay auditable. Medians (not means) are
aggregated across seeds: first-hitting times are heavy-tailed. Censored runs
(no recovery within budget) are always counted and reported, never silently
dropped.
"""

from __future__ import annotations

import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import __version__
from .hermite import Relu
from .mcm import McmParams, SpikeSet
from .perceptron import RecoveryReport, SgdConfig, lr_schedule, train
from .sampling import LatentCoupling, RngHandle

TASKS = ("cov_only", "cum_only", "mcm_independent", "mcm_correlated")

BUDGET_RULES = {
    "d_log2d": lambda d: d * math.log(d) ** 2,
    "d2_logd": lambda d: d ** 2 * math.log(d),
    "d3_log2d": lambda d: d ** 3 * math.log(d) ** 2,
    "d3": lambda d: float(d ** 3),
}


def budget_steps(rule: str, d: int, prefactor: float) -> int:
    if rule not in BUDGET_RULES:
        raise ValueError(f"unknown budget rule {rule!r}; options: {sorted(BUDGET_RULES)}")
    return max(1, int(round(prefactor * BUDGET_RULES[rule](d))))


class CensoringError(RuntimeError):
    """Exponent fit aborted: every run censored at one or more dimensions."""

    def __init__(self, message: str, censored_frac: dict):
        super().__init__(message)
        self.censored_frac = censored_frac


@dataclass(frozen=True)
class SweepConfig:
    task: str
    dims: tuple[int, ...]
    regime: str
    budget_rule: str
    lr_prefactor: float = 1.0
    budget_prefactor: float = 1.0
    seeds: int = 10
    eta: float = 0.3
    beta_u: float = 5.0
    beta_v: float = 10.0
    q: float = 1.0                      # latent coupling for mcm_correlated
    condition_matched_init: bool = False
    init_cap: float = 0.0               # >0: redraw w0 until |target overlap| below cap
    init_kappa_band: tuple[float, float] | None = None  # |alpha_0| sqrt(d) in band
    record_points: int = 256

    def __post_init__(self):
        if self.task not in TASKS:
            raise ValueError(f"unknown task {self.task!r}; options: {TASKS}")
        dims = tuple(self.dims)
        if len(dims) < 3:
            raise ValueError("exponent fits need at least 3 dimensions")
        if any(b <= a for a, b in zip(dims, dims[1:])):
            raise ValueError("dims must be strictly increasing")
        object.__setattr__(self, "dims", dims)
        if self.budget_rule not in BUDGET_RULES:
            raise ValueError(f"unknown budget rule {self.budget_rule!r}")

    def params_for(self, d: int) -> McmParams:
        if self.task == "cov_only":
            return McmParams(d=d, beta_u=self.beta_u)
        if self.task == "cum_only":
            return McmParams(d=d, beta_v=self.beta_v)
        coupling = (LatentCoupling.independent() if self.task == "mcm_independent"
                    else LatentCoupling.partial_sign(self.q))
        return McmParams(d=d, beta_u=self.beta_u, beta_v=self.beta_v, coupling=coupling)

    @property
    def target_direction(self) -> str:
        return "u" if self.task == "cov_only" else "v"

    @property
    def stop_when(self) -> tuple[str, ...]:
        if self.task == "cov_only":
            return ("u",)
        if self.task == "cum_only":
            return ("v",)
        return ("u", "v")


def run_single(config: SweepConfig, d: int, seed: int, master_seed: int) -> RecoveryReport:
    """One training run; fully determined by (config, d, seed, master_seed)."""
    rng = RngHandle(master_seed).derive("sweep", config.task, d, seed)
    spikes = SpikeSet.orthogonal(d, rng.derive("spikes"))
    params = config.params_for(d)
    steps = budget_steps(config.budget_rule, d, config.budget_prefactor)
    w0 = None
    if config.init_cap > 0.0 or config.init_kappa_band is not None:
        # escape-time measurement: start microscopic in the target direction
        # (at d = 16 a quarter of uniform starts already exceed eta = 0.3);
        # the kappa band additionally tames the heavy alpha_0^-2 tail that
        # otherwise dominates the spread of quartic escape times
        from .sampling import sample_unit_sphere

        target = spikes.u if config.target_direction == "u" else spikes.v
        lo, hi = 0.0, math.inf
        if config.init_cap > 0.0:
            hi = config.init_cap
        if config.init_kappa_band is not None:
            lo = config.init_kappa_band[0] / math.sqrt(d)
            hi = min(hi, config.init_kappa_band[1] / math.sqrt(d))
        init_rng = rng.derive("init_cap")
        if config.init_kappa_band is not None and \
                config.init_kappa_band[0] == config.init_kappa_band[1]:
            # pin the starting overlap exactly at kappa / sqrt(d)
            w0 = sample_unit_sphere(d, init_rng)
            for direction in (spikes.m, spikes.u, spikes.v):
                w0 -= (w0 @ direction) * direction
            w0 /= np.linalg.norm(w0)
            kap = config.init_kappa_band[0] / math.sqrt(d)
            w0 = kap * target + math.sqrt(1.0 - kap * kap) * w0
        else:
            w0 = sample_unit_sphere(d, init_rng)
            while not (lo <= abs(w0 @ target) <= hi) or \
                    (config.condition_matched_init and (w0 @ spikes.u) * (w0 @ spikes.v) <= 0):
                w0 = sample_unit_sphere(d, init_rng)
    sgd = SgdConfig(
        delta=lr_schedule(config.regime, d, config.lr_prefactor),
        max_steps=steps, eta=config.eta,
        condition_matched_init=config.condition_matched_init and w0 is None,
        record_every=max(1, steps // config.record_points),
        stop_when=config.stop_when)
    return train(params, spikes, Relu(), sgd, rng.derive("train"), w0=w0,
                 seed_label=seed, regime_label=config.regime)


def _sweep_worker(args):
    config_dict, d, seed, master_seed = args
    return d, seed, run_single(SweepConfig(**config_dict), d, seed, master_seed)


@dataclass(frozen=True)
class ScalingFit:
    slope: float
    intercept: float
    r_squared: float
    dims: tuple[int, ...]
    medians: tuple[float, ...]
    q25: tuple[float, ...]
    q75: tuple[float, ...]
    censored_frac: tuple[float, ...]
    n_per_d: tuple[int, ...]


def fit_scaling(dims, taus_by_d: dict[int, list[Optional[int]]]) -> ScalingFit:
    """Least squares of log median(tau) on log d, finite recovery times only."""
    medians, q25s, q75s, cens, counts = [], [], [], [], []
    for d in dims:
        taus = taus_by_d[d]
        finite = np.array([t for t in taus if t is not None], dtype=float)
        frac = 1.0 - finite.size / len(taus)
        cens.append(frac)
        counts.append(len(taus))
        if finite.size == 0:
            medians.append(math.nan)
            q25s.append(math.nan)
            q75s.append(math.nan)
        else:
            medians.append(float(np.median(finite)))
            q25s.append(float(np.percentile(finite, 25)))
            q75s.append(float(np.percentile(finite, 75)))
    if any(math.isnan(m) for m in medians):
        bad = {d: c for d, c, m in zip(dims, cens, medians) if math.isnan(m)}
        raise CensoringError(
            f"all runs censored at d in {sorted(bad)}; cannot fit an exponent",
            dict(zip(dims, cens)))
    x = np.log(np.asarray(dims, dtype=float))
    y = np.log(np.asarray(medians))
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return ScalingFit(float(slope), float(intercept), r2, tuple(dims),
                      tuple(medians), tuple(q25s), tuple(q75s),
                      tuple(cens), tuple(counts))


@dataclass
class SweepResult:
    config: SweepConfig
    master_seed: int
    reports: dict[tuple[int, int], RecoveryReport] = field(default_factory=dict)
    fit: Optional[ScalingFit] = None
    fit_error: Optional[str] = None
    wall_clock_s: float = 0.0

    def taus_by_d(self) -> dict[int, list[Optional[int]]]:
        target = self.config.target_direction
        out: dict[int, list] = {d: [] for d in self.config.dims}
        for (d, seed) in sorted(self.reports):
            rep = self.reports[(d, seed)]
            out[d].append(rep.tau_u if target == "u" else rep.tau_v)
        return out


def _run_parallel(worker, jobs, threads: int):
    if threads <= 1:
        return [worker(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(worker, jobs, chunksize=1))


def run_sweep(config: SweepConfig, master_seed: int, threads: int = 1,
              out_dir: Optional[Path] = None) -> SweepResult:
    t0 = time.monotonic()
    cfg_dict = asdict(config)
    jobs = [(cfg_dict, d, seed, master_seed)
            for d in config.dims for seed in range(config.seeds)]
    result = SweepResult(config=config, master_seed=master_seed)
    for d, seed, rep in _run_parallel(_sweep_worker, jobs, threads):
        result.reports[(d, seed)] = rep
    try:
        result.fit = fit_scaling(config.dims, result.taus_by_d())
    except CensoringError as exc:
        result.fit_error = str(exc)
    result.wall_clock_s = time.monotonic() - t0
    if out_dir is not None:
        emit_sweep_artifacts(result, Path(out_dir))
    return result


# ---------------------------------------------------------------------------
# coupling comparison (paired seeds)

@dataclass(frozen=True)
class CompareConfig:
    dims: tuple[int, ...]
    qs: tuple[float, ...]              # 0 = independent latents
    regime: str
    budget_rule: str
    lr_prefactor: float = 1.0
    budget_prefactor: float = 1.0
    seeds: int = 20
    eta: float = 0.3
    beta_u: float = 5.0
    beta_v: float = 10.0
    condition_matched_init: bool = True
    record_points: int = 256

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(self.dims))
        object.__setattr__(self, "qs", tuple(self.qs))
        if not self.dims or not self.qs:
            raise ValueError("dims and qs must be non-empty")


def _compare_worker(args):
    cfg_dict, d, q, seed, master_seed = args
    config = CompareConfig(**cfg_dict)
    # spikes and the initial weight are paired across couplings by seed
    rng = RngHandle(master_seed).derive("compare", d, seed)
    spikes = SpikeSet.orthogonal(d, rng.derive("spikes"))
    from .perceptron import _draw_initial_weight

    w0 = _draw_initial_weight(spikes, rng.derive("init"),
                              config.condition_matched_init)
    params = McmParams(d=d, beta_u=config.beta_u, beta_v=config.beta_v,
                       coupling=LatentCoupling.partial_sign(q))
    steps = budget_steps(config.budget_rule, d, config.budget_prefactor)
    sgd = SgdConfig(
        delta=lr_schedule(config.regime, d, config.lr_prefactor),
        max_steps=steps, eta=config.eta,
        record_every=max(1, steps // config.record_points),
        stop_when=("u", "v"))
    rep = train(params, spikes, Relu(), sgd,
                rng.derive("train", f"q{q:g}"), w0=w0,
                seed_label=seed, regime_label=config.regime)
    return d, q, seed, rep


@dataclass
class CompareResult:
    config: CompareConfig
    master_seed: int
    reports: dict[tuple[int, float, int], RecoveryReport] = field(default_factory=dict)
    wall_clock_s: float = 0.0

    def summary_rows(self) -> list[dict]:
        """Per (d, q): recovery fractions, medians, and the paired v/u ratio."""
        rows = []
        for d in self.config.dims:
            for q in self.config.qs:
                reps = [self.reports[(d, q, s)] for s in range(self.config.seeds)]
                tau_v = [r.tau_v for r in reps]
                tau_u = [r.tau_u for r in reps]
                fin_v = [t for t in tau_v if t is not None]
                fin_u = [t for t in tau_u if t is not None]
                ratios = [r.tau_v / r.tau_u for r in reps
                          if r.tau_v is not None and r.tau_u is not None and r.tau_u > 0]
                rows.append({
                    "d": d, "q": q,
                    "frac_v_recovered": len(fin_v) / len(reps),
                    "frac_u_recovered": len(fin_u) / len(reps),
                    "median_tau_v": float(np.median(fin_v)) if fin_v else math.inf,
                    "median_tau_u": float(np.median(fin_u)) if fin_u else math.inf,
                    "median_ratio_v_over_u": float(np.median(ratios)) if ratios else math.inf,
                })
        return rows


def compare_couplings(config: CompareConfig, master_seed: int, threads: int = 1,
                      out_dir: Optional[Path] = None) -> CompareResult:
    t0 = time.monotonic()
    cfg_dict = asdict(config)
    jobs = [(cfg_dict, d, q, seed, master_seed)
            for d in config.dims for q in config.qs for seed in range(config.seeds)]
    result = CompareResult(config=config, master_seed=master_seed)
    for d, q, seed, rep in _run_parallel(_compare_worker, jobs, threads):
        result.reports[(d, q, seed)] = rep
    result.wall_clock_s = time.monotonic() - t0
    if out_dir is not None:
        emit_compare_artifacts(result, Path(out_dir))
    return result


# ---------------------------------------------------------------------------
# artifact emission

def _write_report_files(out: Path, run_id: str, rep: RecoveryReport, manifest_runs: list):
    trace_path = out / "traces" / f"{run_id}.csv"
    report_path = out / "reports" / f"{run_id}.json"
    with open(trace_path, "w") as fh:
        rep.trace.write_csv(fh)
    with open(report_path, "w") as fh:
        json.dump(rep.to_json_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    manifest_runs.append({"run_id": run_id,
                          "trace": str(trace_path.relative_to(out)),
                          "report": str(report_path.relative_to(out))})


def _prepare_dirs(out: Path):
    (out / "traces").mkdir(parents=True, exist_ok=True)
    (out / "reports").mkdir(parents=True, exist_ok=True)


def _write_manifest(out: Path, kind: str, config_dict: dict, master_seed: int,
                    runs: list, wall_clock_s: float, extra: dict):
    manifest = {
        "schema_version": 1,
        "kind": kind,
        "library_version": __version__,
        "config": config_dict,
        "master_seed": master_seed,
        "runs": runs,
        "wall_clock_s": wall_clock_s,
        "created_unix": time.time(),
        **extra,
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1, sort_keys=True)
        fh.write("\n")
    return manifest


def emit_sweep_artifacts(result: SweepResult, out: Path) -> dict:
    """traces/*.csv + reports/*.json + sweep_summary.csv + manifest.json."""
    _prepare_dirs(out)
    runs = []
    for (d, seed) in sorted(result.reports):
        run_id = f"{result.config.task}_d{d:04d}_s{seed:03d}"
        _write_report_files(out, run_id, result.reports[(d, seed)], runs)
    taus = result.taus_by_d() if result.reports else {}
    with open(out / "sweep_summary.csv", "w") as fh:
        fh.write("d,n_runs,n_recovered,censored_frac,median_tau,q25_tau,q75_tau\n")
        for d in result.config.dims if result.reports else []:
            vals = taus.get(d, [])
            fin = [t for t in vals if t is not None]
            med = float(np.median(fin)) if fin else math.nan
            lo = float(np.percentile(fin, 25)) if fin else math.nan
            hi = float(np.percentile(fin, 75)) if fin else math.nan
            frac = 1.0 - len(fin) / len(vals) if vals else math.nan
            fh.write(f"{d},{len(vals)},{len(fin)},{frac!r},{med!r},{lo!r},{hi!r}\n")
    extra = {}
    if result.fit is not None:
        extra["fit"] = {k: (list(v) if isinstance(v, tuple) else v)
                        for k, v in asdict(result.fit).items()}
    if result.fit_error:
        extra["fit_error"] = result.fit_error
    return _write_manifest(out, "sweep", asdict(result.config), result.master_seed,
                           runs, result.wall_clock_s, extra)


def emit_compare_artifacts(result: CompareResult, out: Path) -> dict:
    _prepare_dirs(out)
    runs = []
    for (d, q, seed) in sorted(result.reports):
        run_id = f"compare_d{d:04d}_q{q:g}_s{seed:03d}"
        _write_report_files(out, run_id, result.reports[(d, q, seed)], runs)
    with open(out / "sweep_summary.csv", "w") as fh:
        fh.write("d,q,frac_u_recovered,frac_v_recovered,median_tau_u,median_tau_v,"
                 "median_ratio_v_over_u\n")
        for row in result.summary_rows():
            fh.write(f"{row['d']},{row['q']!r},{row['frac_u_recovered']!r},"
                     f"{row['frac_v_recovered']!r},{row['median_tau_u']!r},"
                     f"{row['median_tau_v']!r},{row['median_ratio_v_over_u']!r}\n")
    return _write_manifest(out, "compare", asdict(result.config), result.master_seed,
                           runs, result.wall_clock_s, {})
