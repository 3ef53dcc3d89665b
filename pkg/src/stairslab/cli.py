"""stairs-lab command line: sample | coeffs | perceptron | ode | two-layer |
sweep | compare. Every subcommand reads a JSON config (versioned with
``schema_version``) and writes CSV/JSON artifacts under --out.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path


from .experiments import (CompareConfig, SweepConfig, budget_steps,
                          compare_couplings, run_sweep)
from .hermite import (Relu, SmoothedRelu, build_series, effective_search_coeffs,
                      likelihood_coeff_exact)
from .mcm import CensorMode, McmParams, SpikeSet, sample_censored_batch, sample_mcm_batch
from .ode import SearchOdeCoeffs, integrate
from .perceptron import SgdConfig, lr_schedule, train
from .sampling import LatentCoupling, RngHandle
from .two_layer import TeacherSpec, TrainConfig2L, TwoLayerNet, train_online

SCHEMA_VERSION = 1


def load_config(path: str) -> dict:
    with open(path) as fh:
        cfg = json.load(fh)
    version = cfg.pop("schema_version", None)
    if version != SCHEMA_VERSION:
        raise SystemExit(f"config {path}: schema_version must be {SCHEMA_VERSION}, got {version}")
    return cfg


def _coupling(cfg: dict) -> LatentCoupling:
    return LatentCoupling.partial_sign(float(cfg.get("q", 0.0)))


def _activation(cfg: dict):
    spec = cfg.get("activation", {"name": "relu"})
    if spec["name"] == "relu":
        return Relu()
    if spec["name"] == "smoothed_relu":
        return SmoothedRelu(float(spec.get("tau", 0.1)))
    raise SystemExit(f"unknown activation {spec['name']!r}")


def _params(cfg: dict) -> McmParams:
    return McmParams(d=int(cfg["d"]), beta_m=float(cfg.get("beta_m", 0.0)),
                     beta_u=float(cfg.get("beta_u", 0.0)),
                     beta_v=float(cfg.get("beta_v", 0.0)), coupling=_coupling(cfg))


def cmd_sample(cfg: dict, out: Path, seed: int, threads: int) -> int:
    params = _params(cfg)
    rng = RngHandle(seed).derive("sample")
    spikes = SpikeSet.orthogonal(params.d, rng.derive("spikes"))
    n = int(cfg.get("n", 1000))
    keep = bool(cfg.get("keep_latents", False))
    mode = CensorMode(cfg["censor_mode"]) if "censor_mode" in cfg else CensorMode.FULL
    if mode is CensorMode.FULL and keep:
        y, x, lat = sample_mcm_batch(params, spikes, n, rng.derive("data"), keep_latents=True)
    else:
        y, x = sample_censored_batch(params, spikes, mode, n, rng.derive("data"))
        lat = None
    out.mkdir(parents=True, exist_ok=True)
    path = out / "samples.csv"
    with open(path, "w") as fh:
        cols = ["y"] + [f"x_{i}" for i in range(params.d)]
        if lat is not None:
            cols += ["lambda", "nu"]
        fh.write(",".join(cols) + "\n")
        for i in range(n):
            row = [str(int(y[i]))] + [repr(float(v)) for v in x[i]]
            if lat is not None:
                row += [repr(float(lat[i, 0])), repr(float(lat[i, 1]))]
            fh.write(",".join(row) + "\n")
    print(f"wrote {n} samples to {path}")
    return 0


def cmd_coeffs(cfg: dict, out: Path, seed: int, threads: int, verify: bool = False) -> int:
    params = _params(cfg)
    sigma = _activation(cfg)
    K = int(cfg.get("truncation", 8))
    n_mc = int(cfg.get("n_mc", 1_000_000))
    rng = RngHandle(seed).derive("coeffs")
    series = build_series(params, sigma, truncation=K, rng=rng, n_mc=n_mc)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "c_sigma.csv", "w") as fh:
        fh.write("k,c_sigma\n")
        for k, c in enumerate(series.c_sigma):
            fh.write(f"{k},{float(c)!r}\n")
    with open(out / "c_l.csv", "w") as fh:
        fh.write("i,j,c_l,standard_error\n")
        for i in range(K + 1):
            for j in range(K + 1 - i):
                fh.write(f"{i},{j},{float(series.c_l[i, j])!r},"
                         f"{float(series.c_l_se[i, j])!r}\n")
    print(f"wrote coefficient tables to {out}")
    if verify:
        from .diagnostics import assumption_check

        spikes = SpikeSet.orthogonal(params.d, rng.derive("spikes"))
        report = assumption_check(sigma, params, spikes, rng.derive("assume"))
        print(f"sign conditions (c2 > 0, c4 < 0): "
              f"{'PASS' if report.passed else 'FAIL'} (c2={report.c2:.5f}, c4={report.c4:.5f})")
        worst = 0.0
        for i in range(min(K, 4) + 1):
            for j in range(min(K, 4) + 1 - i):
                exact = likelihood_coeff_exact(params, i, j)
                if exact is None or series.c_l_se[i, j] == 0:
                    continue
                worst = max(worst, abs(series.c_l[i, j] - exact))
        print(f"closed-form vs monte-carlo max deviation (degree <= 4): {worst:.3g}")
    return 0


def cmd_perceptron(cfg: dict, out: Path, seed: int, threads: int) -> int:
    params = _params(cfg)
    rng = RngHandle(seed).derive("perceptron")
    spikes = SpikeSet.orthogonal(params.d, rng.derive("spikes"))
    if "delta" in cfg:
        delta, regime = float(cfg["delta"]), "fixed"
    else:
        regime = cfg.get("regime", "cov_large")
        delta = lr_schedule(regime, params.d, float(cfg.get("lr_prefactor", 1.0)))
    if "max_steps" in cfg:
        steps = int(cfg["max_steps"])
    else:
        steps = budget_steps(cfg.get("budget_rule", "d_log2d"), params.d,
                             float(cfg.get("budget_prefactor", 1.0)))
    sgd = SgdConfig(delta=delta, max_steps=steps, eta=float(cfg.get("eta", 0.3)),
                    condition_matched_init=bool(cfg.get("matched_init", False)),
                    record_every=int(cfg.get("record_every", 0)),
                    stop_when=tuple(cfg.get("stop_when", ["u", "v"])))
    report = train(params, spikes, _activation(cfg), sgd, rng.derive("train"),
                   seed_label=seed, regime_label=regime)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trace.csv", "w") as fh:
        report.trace.write_csv(fh)
    with open(out / "report.json", "w") as fh:
        json.dump(report.to_json_dict(), fh, indent=1, sort_keys=True)
        fh.write("\n")
    print(f"tau_u={report.tau_u} tau_v={report.tau_v} after {report.steps} steps "
          f"(delta={delta:.3g}); artifacts in {out}")
    return 0


def cmd_ode(cfg: dict, out: Path, seed: int, threads: int) -> int:
    if "c20" in cfg:
        coeffs = SearchOdeCoeffs(float(cfg["c20"]), float(cfg["c11"]), float(cfg["c04"]))
    else:
        series = build_series(_params(cfg), _activation(cfg), truncation=4)
        coeffs = effective_search_coeffs(series)
    alpha0 = tuple(float(a) for a in cfg.get("alpha0", (0.01, 0.01)))
    traj = integrate(coeffs, alpha0, t_end=float(cfg.get("t_end", 50.0)),
                     dt=float(cfg.get("dt", 1e-3)),
                     eta_region=float(cfg.get("eta_region", 0.3)))
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "trajectory.csv", "w") as fh:
        fh.write("t,alpha_u,alpha_v\n")
        for t, au, av in zip(traj.t, traj.alpha_u, traj.alpha_v):
            fh.write(f"{float(t)!r},{float(au)!r},{float(av)!r}\n")
    exit_str = "none" if traj.exit_time is None else f"{traj.exit_time:.4g}"
    print(f"coeffs={tuple(round(c, 6) for c in coeffs)} exit_time={exit_str}; "
          f"trajectory in {out}")
    return 0


def cmd_two_layer(cfg: dict, out: Path, seed: int, threads: int) -> int:
    rng = RngHandle(seed).derive("two_layer")
    d, m = int(cfg["d"]), int(cfg.get("m", 256))
    net = TwoLayerNet.init(d, m, _activation(cfg), rng.derive("net"))
    config = TrainConfig2L(
        eta1=float(cfg.get("eta1", 0.5)), eps=float(cfg.get("eps", 0.01)),
        steps=int(cfg.get("steps", 100_000)),
        eval_every=int(cfg.get("eval_every", 1000)),
        eval_set_size=int(cfg.get("eval_set_size", 10_000)),
        eval_log=bool(cfg.get("eval_log", False)))
    if cfg.get("task", "mcm") == "teacher":
        spikes = SpikeSet.orthogonal(d, rng.derive("spikes"))
        task = TeacherSpec(kind=cfg.get("teacher_kind", "plain"), spikes=spikes,
                           cross_gamma=float(cfg.get("cross_gamma", 0.0)))
        log = train_online(net, task, config, rng.derive("train"))
    else:
        params = _params(cfg)
        spikes = SpikeSet.orthogonal(d, rng.derive("spikes"))
        log = train_online(net, params, config, rng.derive("train"), spikes=spikes)
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "training_log.csv", "w") as fh:
        log.write_csv(fh)
    print(f"trained {config.steps} steps; log in {out / 'training_log.csv'}")
    return 0


def cmd_sweep(cfg: dict, out: Path, seed: int, threads: int) -> int:
    config = SweepConfig(**{**cfg, "dims": tuple(cfg["dims"])})
    result = run_sweep(config, master_seed=seed, threads=threads, out_dir=out)
    if result.fit is not None:
        print(f"fitted slope {result.fit.slope:.3f} (r^2 {result.fit.r_squared:.4f}); "
              f"artifacts in {out}")
    else:
        print(f"fit aborted: {result.fit_error}; artifacts in {out}")
    return 0


def cmd_compare(cfg: dict, out: Path, seed: int, threads: int) -> int:
    config = CompareConfig(**{**cfg, "dims": tuple(cfg["dims"]), "qs": tuple(cfg["qs"])})
    result = compare_couplings(config, master_seed=seed, threads=threads, out_dir=out)
    for row in result.summary_rows():
        print(f"d={row['d']} q={row['q']:g}: v recovered {row['frac_v_recovered']:.0%}, "
              f"median tau_v={row['median_tau_v']:g}, "
              f"median tau_v/tau_u={row['median_ratio_v_over_u']:g}")
    print(f"artifacts in {out}")
    return 0


COMMANDS = {
    "sample": cmd_sample,
    "coeffs": cmd_coeffs,
    "perceptron": cmd_perceptron,
    "ode": cmd_ode,
    "two-layer": cmd_two_layer,
    "sweep": cmd_sweep,
    "compare": cmd_compare,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="stairs-lab",
                                     description="mixed-cumulant learning experiments")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True, help="path to a JSON config")
    parser.add_argument("--out", default="out", help="output directory")
    parser.add_argument("--seed", type=int, default=0, help="master seed (u64)")
    parser.add_argument("--threads", type=int, default=1, help="parallel workers")
    parser.add_argument("--verify", action="store_true",
                        help="extra verification output (coeffs)")
    args = parser.parse_args(argv)
    cfg = load_config(args.config)
    kwargs = {"verify": args.verify} if args.command == "coeffs" else {}
    return COMMANDS[args.command](cfg, Path(args.out), args.seed, args.threads, **kwargs)


if __name__ == "__main__":
    sys.exit(main())
