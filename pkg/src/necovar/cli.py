"""Command-line entry point: simulate, backtest, reproduce.

Every run writes a ``manifest.json`` with the resolved configuration, seed
and package version. Flag precedence: command line over config file over
built-in defaults. Exit codes: 0 success, 2 usage error, 3 partial failure
(some method failed on some window; partial results still written), 4 data
error in the inputs.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from . import __version__
from .backtest import (
    BacktestConfig,
    rolling_backtest,
    write_aggregate_csv,
    write_aggregate_json,
    write_forecast_csv,
)
from .engines import METHODS
from .errors import NecoVarError
from .panel import make_windows, parse_panel_csv, write_panel_csv
from .sem import model_to_json
from .simulate import (
    STUDIES,
    SimConfig,
    calibrate_contagion,
    draw_edge_coefficients,
    lag_aic_study,
    random_dag,
    run_study,
    simulate_sem,
    timing_study,
    write_study_tables,
)

_SIM_DEFAULTS = dict(
    p=5,
    edges=None,
    density=0.7,
    necof=0.47,
    n=350,
    noise="exponential",
    sigma=0.01,
    shock_every=100,
    shock_scale=5.0,
    seed=0,
    out="out",
)
_BT_DEFAULTS = dict(
    mode="log_returns",
    train=250,
    test=100,
    stride=None,
    alpha=0.05,
    methods="neco,varcovar,hist,garch,fhs",
    lags=1,
    alpha_ci=0.01,
    boot_reps=1000,
    mc_paths=10_000,
    dq_lags=4,
    unit_noise=False,
    seed=0,
    out="out",
)
_REPRO_DEFAULTS = dict(reps=20, seed=0, jobs=1, lmax=3, p_values="5,10,20,50", out="out")


class UsageError(Exception):
    pass


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help()
        return 2
    try:
        merged = _merge_config(args)
        if args.command == "simulate":
            return _cmd_simulate(merged)
        if args.command == "backtest":
            return _cmd_backtest(merged)
        return _cmd_reproduce(merged)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NecoVarError as exc:
        print(f"data error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="necovar", description=__doc__)
    parser.add_argument("--version", action="version", version=f"necovar {__version__}")
    sub = parser.add_subparsers(dest="command")

    sim = sub.add_parser("simulate", help="simulate a synthetic contagion panel")
    sim.add_argument("--config", help="key=value config file")
    sim.add_argument("--p", type=int)
    sim.add_argument("--edges", type=int, help="exact number of network links")
    sim.add_argument("--density", type=float, help="edge probability (ignored when --edges given)")
    sim.add_argument("--necof", type=float, help="target market contagion share in [0,1)")
    sim.add_argument("--n", type=int, help="number of sample rows")
    sim.add_argument("--noise", choices=["gaussian", "exponential"])
    sim.add_argument("--sigma", type=float)
    sim.add_argument("--shock-every", dest="shock_every", type=int, help="0 disables shocks")
    sim.add_argument("--shock-scale", dest="shock_scale", type=float)
    sim.add_argument("--seed", type=int)
    sim.add_argument("--out", help="output directory")

    bt = sub.add_parser("backtest", help="rolling-window VaR comparison on a panel CSV")
    bt.add_argument("--config", help="key=value config file")
    bt.add_argument("--panel", required=True, help="input CSV (date,label,... header)")
    bt.add_argument("--mode", choices=["prices", "log_returns"])
    bt.add_argument("--train", type=int)
    bt.add_argument("--test", type=int)
    bt.add_argument("--stride", type=int, help="defaults to the test length")
    bt.add_argument("--alpha", type=float)
    bt.add_argument("--methods", help="comma list from: " + ",".join(METHODS))
    bt.add_argument("--lags", type=int)
    bt.add_argument("--alpha-ci", dest="alpha_ci", type=float)
    bt.add_argument("--boot-reps", dest="boot_reps", type=int)
    bt.add_argument("--mc-paths", dest="mc_paths", type=int)
    bt.add_argument("--dq-lags", dest="dq_lags", type=int)
    bt.add_argument(
        "--unit-noise",
        dest="unit_noise",
        action="store_const",
        const=True,
        help="use unit noise variances in the latent conditional covariance",
    )
    bt.add_argument("--seed", type=int)
    bt.add_argument("--out")

    rep = sub.add_parser("reproduce", help="run a named simulation study")
    rep.add_argument("study", help="one of: " + ", ".join([*STUDIES, "timing", "lag-aic"]))
    rep.add_argument("--config", help="key=value config file")
    rep.add_argument("--reps", type=int)
    rep.add_argument("--seed", type=int)
    rep.add_argument("--jobs", type=int, help="parallel workers, default all cores")
    rep.add_argument("--lmax", type=int, help="maximum lag for the lag-aic study")
    rep.add_argument("--p-values", dest="p_values", help="comma list of sizes for the timing study")
    rep.add_argument("--out")
    return parser


def _merge_config(args) -> dict:
    defaults = {
        "simulate": _SIM_DEFAULTS,
        "backtest": _BT_DEFAULTS,
        "reproduce": _REPRO_DEFAULTS,
    }[args.command]
    merged = dict(defaults)
    config_path = getattr(args, "config", None)
    if config_path:
        merged.update(_read_config_file(config_path, set(defaults)))
    for key in defaults:
        provided = getattr(args, key, None)
        if provided is not None:
            merged[key] = provided
    for key in ("panel", "study"):
        if hasattr(args, key):
            merged[key] = getattr(args, key)
    merged["command"] = args.command
    return merged


def _read_config_file(path, known) -> dict:
    if not os.path.exists(path):
        raise UsageError(f"config file not found: {path}")
    out = {}
    with open(path) as fh:
        for lineno, raw in enumerate(fh, 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise UsageError(f"{path}:{lineno}: expected key = value")
            key, value = (part.strip() for part in line.split("=", 1))
            key = key.replace("-", "_")
            if key not in known:
                raise UsageError(f"{path}:{lineno}: unknown key {key!r}")
            out[key] = _coerce(value)
    return out


def _coerce(text: str):
    low = text.lower()
    if low in ("true", "false"):
        return low == "true"
    if low in ("none", "null", ""):
        return None
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        return text


def _write_manifest(outdir, merged) -> None:
    manifest = {
        "version": __version__,
        "command": merged["command"],
        "config": {k: v for k, v in sorted(merged.items()) if k != "command"},
    }
    with open(os.path.join(outdir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)


def _cmd_simulate(cfg) -> int:
    if not 0.0 <= cfg["necof"] < 1.0:
        raise UsageError(f"--necof must lie in [0,1), got {cfg['necof']}")
    if cfg["n"] < 2:
        raise UsageError("--n must be at least 2")
    outdir = cfg["out"]
    os.makedirs(outdir, exist_ok=True)
    ss = np.random.SeedSequence([int(cfg["seed"]), 1])
    g_seed, c_seed, s_seed = ss.spawn(3)
    density = cfg["edges"] if cfg["edges"] is not None else cfg["density"]
    graph = random_dag(cfg["p"], density, g_seed)
    coeffs = draw_edge_coefficients(graph, np.random.default_rng(c_seed))
    target = cfg["necof"] if graph.directed_edges else 0.0
    model = calibrate_contagion(graph, coeffs, target, cfg["sigma"])
    sim_cfg = SimConfig(
        p=cfg["p"],
        density=min(float(len(graph.directed_edges)) / max(cfg["p"] * (cfg["p"] - 1) / 2, 1), 1.0),
        target_necof=target,
        noise=cfg["noise"],
        sigma=cfg["sigma"],
        shock_period=cfg["shock_every"] or None,
        shock_scale=cfg["shock_scale"],
        n_obs=cfg["n"],
        seed=s_seed,
    )
    panel = simulate_sem(model, sim_cfg)
    write_panel_csv(panel, os.path.join(outdir, "panel.csv"))
    with open(os.path.join(outdir, "true_model.json"), "w") as fh:
        fh.write(model_to_json(model))
    cfg_record = dict(cfg)
    cfg_record["achieved_edges"] = len(graph.directed_edges)
    _write_manifest(outdir, cfg_record)
    print(f"wrote {outdir}/panel.csv ({panel.n_obs} rows, {panel.n_instruments} instruments)")
    return 0


def _cmd_backtest(cfg) -> int:
    if not 0.0 < cfg["alpha"] < 1.0:
        raise UsageError(f"--alpha must lie in (0,1), got {cfg['alpha']}")
    methods = [m.strip() for m in str(cfg["methods"]).split(",") if m.strip()]
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise UsageError(f"unknown methods {unknown}; choose from {','.join(METHODS)}")
    panel = parse_panel_csv(cfg["panel"], cfg["mode"])
    stride = cfg["stride"] if cfg["stride"] else cfg["test"]
    plan = make_windows(panel.n_obs, cfg["train"], cfg["test"], stride)
    bt_cfg = BacktestConfig(
        alpha_ci=cfg["alpha_ci"],
        lags=cfg["lags"],
        boot_reps=cfg["boot_reps"],
        mc_paths=cfg["mc_paths"],
        dq_lags=cfg["dq_lags"],
        unit_noise=bool(cfg["unit_noise"]),
    )
    result = rolling_backtest(panel, plan, methods, cfg["alpha"], bt_cfg, seed=cfg["seed"])
    outdir = cfg["out"]
    os.makedirs(outdir, exist_ok=True)
    write_aggregate_csv(result.aggregate, methods, os.path.join(outdir, "backtest_table.csv"))
    write_aggregate_json(result.aggregate, methods, os.path.join(outdir, "backtest_table.json"))
    write_forecast_csv(result, os.path.join(outdir, "forecasts.csv"))
    _write_manifest(outdir, cfg)
    if result.failures:
        for method, w_idx, msg in result.failures:
            print(f"failed: {method} window {w_idx}: {msg}", file=sys.stderr)
        return 3
    print(f"wrote {outdir}/backtest_table.csv ({len(plan.windows)} windows)")
    return 0


def _cmd_reproduce(cfg) -> int:
    study = cfg["study"]
    valid = [*STUDIES, "timing", "lag-aic"]
    if study not in valid:
        raise UsageError(f"unknown study {study!r}; valid names: {', '.join(valid)}")
    outdir = os.path.join(cfg["out"], study)
    os.makedirs(outdir, exist_ok=True)
    jobs = cfg["jobs"] if cfg["jobs"] else (os.cpu_count() or 1)
    if study == "timing":
        p_values = [int(x) for x in str(cfg["p_values"]).split(",")]
        rows = timing_study(p_values, reps=cfg["reps"], seed=cfg["seed"])
        with open(os.path.join(outdir, "study_timing_table.csv"), "w") as fh:
            fh.write("p,mean_ms,reps\n")
            for row in rows:
                fh.write(f"{row['p']},{row['mean_ms']!r},{row['reps']}\n")
    elif study == "lag-aic":
        res = lag_aic_study(l_max=cfg["lmax"], reps=cfg["reps"], seed=cfg["seed"])
        chosen_freq = res["frequency"]
        best = min([l for l, f in chosen_freq.items() if f == max(chosen_freq.values())])
        with open(os.path.join(outdir, "study_lag_aic_table.csv"), "w") as fh:
            fh.write("lag,mean_aic,chosen_frequency,is_minimum\n")
            mean_aic = np.mean(np.asarray(res["curves"]), axis=0)
            for lag in range(cfg["lmax"] + 1):
                fh.write(
                    f"{lag},{float(mean_aic[lag])!r},{chosen_freq[lag]!r},{int(lag == best)}\n"
                )
    else:
        result = run_study(study, seed=cfg["seed"], jobs=jobs, overrides={"reps": cfg["reps"]})
        write_study_tables(result, outdir)
    _write_manifest(outdir, cfg)
    print(f"wrote study outputs under {outdir}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
