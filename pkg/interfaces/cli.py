"""Command-line surface. Results go to stdout and the output directory,
diagnostics to stderr through logfire.

Exit codes: 0 success, 1 invalid input, 2 numerical failure, 3 failed acceptance checks.
"""
import argparse
import asyncio
import math
import os
import sys
from datetime import datetime, timezone
from typing import Any, Callable, Dict, List, Optional, Sequence

import logfire
import numpy as np
from dotenv import dotenv_values
from pydantic import BaseModel, ConfigDict, Field, FiniteFloat, ValidationError, model_validator

from analysis import ensemble, experiments, lyapunov, selftest
from analysis.struct import CheckResult, GridSpec
from dynamics.noise import NoisePath
from dynamics.rds import CocycleContext
from dynamics.struct import AcceptanceFailure, HopfError, ModelParams, StepConfig, StepSizeError
from interfaces import export

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2
EXIT_ACCEPTANCE = 3

FULL_SCALE_TAU = 1e-5
FULL_SCALE_T = 1000.0

DEFAULT_T = {"lyap": 500.0, "scan": 500.0, "bisect": 500.0, "attractor": 50.0, "sync": 40.0, "converge": 1.0,
             "verify": 0.0, "selftest": 0.0}
STEP_CHECKED = ("lyap", "attractor", "sync", "verify")


def seed_type(text: str) -> int:
    """Decimal or 0x-prefixed hex."""
    return int(text, 0)


def float_list(text: str) -> List[float]:
    """Comma separated values, or start:stop:count for an inclusive linear grid."""
    if ":" in text:
        start, stop, count = text.split(":")
        return np.linspace(float(start), float(stop), int(count)).tolist()
    return [float(v) for v in text.split(",") if v.strip()]


def seed_list(text: str) -> List[int]:
    return [seed_type(v) for v in text.split(",") if v.strip()]


class RunConfig(BaseModel):
    """Fully resolved run settings, echoed into every output."""
    model_config = ConfigDict(frozen=True)

    subcommand: str
    params: ModelParams
    tau: FiniteFloat = Field(gt=0.0)
    T: FiniteFloat = Field(ge=0.0)
    seed: int = Field(ge=0, le=(1 << 64) - 1)
    burn_in: Optional[FiniteFloat] = Field(default=None, ge=0.0)
    gamma_ou: FiniteFloat = Field(default=1.0, gt=0.0)
    ensemble_size: int = Field(default=10**6, ge=1)
    grid: GridSpec = GridSpec()
    output_dir: str = "./out"
    workers: int = Field(default=1, ge=1)
    gnuplot: bool = False
    full_scale: bool = False
    options: Dict[str, Any] = {}

    @model_validator(mode="after")
    def _step_admissible(self) -> "RunConfig":
        if self.subcommand in STEP_CHECKED:
            StepConfig.admissible(self.params, self.tau)
        return self

    def meta(self) -> Dict[str, Any]:
        return {"config": self.model_dump(mode="json"), "created_at": datetime.now(timezone.utc).isoformat()}

    def stem(self, name: str) -> str:
        return os.path.join(self.output_dir, name)


# dest: (built-in default, cast, environment key)
_RESOLVED: Dict[str, tuple] = {
    "alpha": (1.0, float, None),
    "beta": (1.0, float, None),
    "a": (1.0, float, None),
    "b": (1.0, float, None),
    "sigma": (1.0, float, None),
    "tau": (1e-3, float, None),
    "T": (None, float, None),
    "seed": (0, seed_type, None),
    "burn_in": (None, float, None),
    "gamma_ou": (1.0, float, None),
    "workers": (os.cpu_count() or 1, int, "HOPF_WORKERS"),
    "output_dir": ("./out", str, "HOPF_OUTPUT_DIR"),
    "ensemble_size": (10**6, int, "HOPF_ENSEMBLE_SIZE"),
    "nx": (512, int, None),
    "ny": (512, int, None),
}


def _resolve(args: argparse.Namespace, file_cfg: Dict[str, Optional[str]]) -> Dict[str, Any]:
    """flags > config file > environment > built-in defaults."""
    values = {}
    for dest, (default, cast, env_key) in _RESOLVED.items():
        flag = getattr(args, dest, None)
        if flag is not None:
            values[dest] = flag
        elif file_cfg.get(dest) not in (None, ""):
            values[dest] = cast(file_cfg[dest])
        elif env_key and os.getenv(env_key):
            values[dest] = cast(os.environ[env_key])
        else:
            values[dest] = default
    return values


def build_config(args: argparse.Namespace) -> RunConfig:
    file_cfg = dotenv_values(args.config) if args.config else {}
    if args.config and not file_cfg and not os.path.exists(args.config):
        raise ValueError(f"config file {args.config} does not exist")
    v = _resolve(args, file_cfg)
    if args.full_scale:
        if args.tau is None:
            v["tau"] = FULL_SCALE_TAU
        if args.T is None and args.command in ("lyap", "scan", "bisect"):
            v["T"] = FULL_SCALE_T
    if v["T"] is None:
        v["T"] = DEFAULT_T[args.command]
    bounds = getattr(args, "bounds", None) or [-3.0, 3.0, -3.0, 3.0]
    if len(bounds) != 4:
        raise ValueError(f"--bounds needs x_min,x_max,y_min,y_max, got {bounds}")
    grid = GridSpec(nx=v["nx"], ny=v["ny"], auto=getattr(args, "auto_bounds", False),
                    **dict(zip(("x_min", "x_max", "y_min", "y_max"), bounds)))
    options = {k: val for k, val in vars(args).items()
               if k not in _RESOLVED and k not in ("command", "handler", "config", "gnuplot", "full_scale",
                                                   "auto_bounds", "bounds")}
    return RunConfig(
        subcommand=args.command,
        params=ModelParams(alpha=v["alpha"], beta=v["beta"], a=v["a"], b=v["b"], sigma=v["sigma"]),
        tau=v["tau"], T=v["T"], seed=v["seed"], burn_in=v["burn_in"], gamma_ou=v["gamma_ou"],
        ensemble_size=v["ensemble_size"], grid=grid, output_dir=v["output_dir"], workers=v["workers"],
        gnuplot=args.gnuplot, full_scale=args.full_scale, options=options,
    )


def _emit(text: str) -> None:
    sys.stdout.write(text)
    sys.stdout.flush()


def _check_table(results: Sequence[CheckResult]) -> str:
    rows = [{"identity": r.name, "max_residual": r.value, "threshold": r.threshold, "samples": r.samples,
             "passed": r.passed} for r in results]
    return export.format_rows(rows, ["identity", "max_residual", "threshold", "samples", "passed"])


async def cmd_lyap(cfg: RunConfig) -> int:
    step = StepConfig.admissible(cfg.params, cfg.tau)
    path = NoisePath(seed=cfg.seed, tau=cfg.tau)
    x0 = cfg.options["x0"]
    u0 = (math.cos(cfg.options["xi0"]), math.sin(cfg.options["xi0"]))
    scan = await asyncio.to_thread(lyapunov.lyap_scan, cfg.params, step, path, x0, u0, cfg.T, cfg.burn_in)
    rows = export.lyap_rows(cfg.params, scan.tangent.total_time, cfg.seed, [scan.tangent, scan.fk])
    meta = {**cfg.meta(), "gap_estimate": scan.gap}
    export.write_rows(cfg.stem(f"lyap_{cfg.seed:#x}.csv"), rows, export.LYAP_COLUMNS, meta)
    _emit(export.format_rows([{**r, "gap": scan.gap} for r in rows], export.LYAP_COLUMNS + ["gap"]))
    return EXIT_OK


async def cmd_scan(cfg: RunConfig) -> int:
    result = await experiments.scan_lambda(cfg.params, cfg.options["alphas"], cfg.options["bs"], cfg.tau, cfg.T,
                                           cfg.seed, cfg.burn_in, cfg.workers)
    paths = export.write_sweep(cfg.stem("scan"), result, cfg.meta(), heatmap=cfg.options["heatmap"])
    if cfg.gnuplot:
        export.write_gnuplot("scan", paths[0], cfg.stem("scan"))
    _emit(export.format_rows([{"alpha": a, "b": b} for a, b in result.border], ["alpha", "b"]))
    return EXIT_OK


async def cmd_bisect(cfg: RunConfig) -> int:
    seeds = cfg.options["seeds"] or [cfg.seed, cfg.seed + 1, cfg.seed + 2]
    b_star = await experiments.bisect_bifurcation(cfg.params, cfg.options["b_lo"], cfg.options["b_hi"], cfg.tau,
                                                  cfg.T, cfg.options["tol_b"], seeds, cfg.burn_in, cfg.workers)
    export.write_json(cfg.stem("bisect.json"), {**cfg.meta(), "seeds": seeds, "b_star": b_star})
    _emit(export.format_rows([{"b_star": b_star}], ["b_star"]))
    return EXIT_OK


async def cmd_attractor(cfg: RunConfig) -> int:
    times = cfg.options["snapshots"] or [cfg.T]
    T = max(times)
    ctx = CocycleContext.build(cfg.params, cfg.tau, cfg.seed, cfg.gamma_ou)
    points0 = ensemble.normal_cloud(cfg.ensemble_size, cfg.seed)
    snapshots = await ensemble.evolve_ensemble(ctx, points0, T, times, cfg.workers, cfg.options["on_failure"])
    rows = []
    for snap in snapshots:
        grid = ensemble.histogram(snap, cfg.grid)
        stem = cfg.stem(f"attractor_t{snap.time:g}")
        meta = {**cfg.meta(), "params": cfg.params.model_dump(), "seed": cfg.seed, "tau": cfg.tau}
        export.write_histogram(stem, grid, meta)
        if cfg.options["points_csv"] or cfg.gnuplot:
            data = export.write_points(f"{stem}.csv", snap.points, {**meta, "time": snap.time})
            if cfg.gnuplot:
                export.write_gnuplot("attractor", data, stem)
        rows.append({"time": snap.time, "diameter": snap.diameter, "occupied_cells": grid.occupied_cells(),
                     "out_of_bounds": grid.out_of_bounds, "dropped": snap.dropped})
    _emit(export.format_rows(rows, ["time", "diameter", "occupied_cells", "out_of_bounds", "dropped"]))
    return EXIT_OK


async def cmd_sync(cfg: RunConfig) -> int:
    ctx = CocycleContext.build(cfg.params, cfg.tau, cfg.seed, cfg.gamma_ou)
    points0 = ensemble.normal_cloud(cfg.ensemble_size, cfg.seed)
    series = await ensemble.diameter_series(ctx, points0, cfg.T, cfg.options["dt"], cfg.workers,
                                            cfg.options["on_failure"])
    data = export.write_table(cfg.stem("sync.csv"), ["time", "diameter"], np.array(series), cfg.meta())
    if cfg.gnuplot:
        export.write_gnuplot("sync", data, cfg.stem("sync"))
    _emit(export.format_rows([{"time": t, "diameter": d} for t, d in series], ["time", "diameter"]))
    return EXIT_OK


async def cmd_converge(cfg: RunConfig) -> int:
    taus = cfg.options["taus"] or [0.2 * 2.0 ** -k for k in range(5, 10)]
    report = await experiments.convergence_study(cfg.params, taus, cfg.options["ref_refinement"], cfg.T,
                                                 cfg.options["n_seeds"], cfg.seed, workers=cfg.workers)
    paths = export.write_convergence(cfg.stem("converge"), report, cfg.meta())
    if cfg.gnuplot:
        export.write_gnuplot("converge", paths[0], cfg.stem("converge"))
    rows = [{"tau": t, "err_state": es, "err_dir": ed}
            for t, es, ed in zip(report.tau_list, report.rms_errors_state, report.rms_errors_direction)]
    _emit(export.format_rows(rows, ["tau", "err_state", "err_dir"]))
    _emit(f"# order state {report.fitted_order_state:.4f} direction {report.fitted_order_direction:.4f}\n")
    return EXIT_OK


def _acceptance(results: Sequence[CheckResult]) -> int:
    _emit(_check_table(results))
    failed = [r.name for r in results if not r.passed]
    if failed:
        raise AcceptanceFailure(failed)
    return EXIT_OK


async def cmd_verify(cfg: RunConfig) -> int:
    seeds = cfg.options["seeds"] or [cfg.seed]
    results = await asyncio.to_thread(selftest.verify_identities, cfg.params, cfg.tau, seeds, cfg.options["k"],
                                      cfg.options["points"])
    return _acceptance(results)


async def cmd_selftest(cfg: RunConfig) -> int:
    return _acceptance(await selftest.run_selftest(cfg.seed, cfg.workers))


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    model = common.add_argument_group("model")
    for name in ("alpha", "beta", "a", "b", "sigma"):
        model.add_argument(f"--{name}", type=float, help=f"{name} coefficient (default 1)")
    run = common.add_argument_group("run")
    run.add_argument("--tau", type=float, help="step size (default 1e-3)")
    run.add_argument("--T", dest="T", type=float, help="time horizon")
    run.add_argument("--seed", type=seed_type, help="noise seed, decimal or 0x-hex (default 0)")
    run.add_argument("--burn-in", dest="burn_in", type=float, help="discarded transient (default 10%% of T)")
    run.add_argument("--gamma-ou", dest="gamma_ou", type=float, help="OU rate of the conjugacy transform (default 1)")
    run.add_argument("--workers", type=int, help="parallel workers (default HOPF_WORKERS or all cores)")
    run.add_argument("--full-scale", dest="full_scale", action="store_true",
                     help=f"use tau={FULL_SCALE_TAU:g} and T={FULL_SCALE_T:g} unless given")
    out = common.add_argument_group("output")
    out.add_argument("--out", dest="output_dir", help="output directory (default HOPF_OUTPUT_DIR or ./out)")
    out.add_argument("--config", help="flat key=value file, overridden by flags")
    out.add_argument("--gnuplot", action="store_true", help="also write gnuplot scripts")

    parser = argparse.ArgumentParser(prog="hopf", description="Backward Euler stochastic Hopf toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("lyap", parents=[common], help="tangent and FK Lyapunov estimates with the gap diagnostic")
    p.add_argument("--x0", type=float_list, default=[1.0, 0.0])
    p.add_argument("--xi0", type=float, default=0.0)
    p.set_defaults(handler=cmd_lyap)

    p = sub.add_parser("scan", parents=[common], help="lambda over an (alpha, b) grid")
    p.add_argument("--alphas", type=float_list, default=float_list("-1:3:9"))
    p.add_argument("--bs", type=float_list, default=float_list("0:15:16"))
    p.add_argument("--heatmap", action="store_true", help="also write a PGM of the lambda matrix")
    p.set_defaults(handler=cmd_scan)

    p = sub.add_parser("bisect", parents=[common], help="locate the sign change of lambda in b")
    p.add_argument("--b-lo", dest="b_lo", type=float, default=4.0)
    p.add_argument("--b-hi", dest="b_hi", type=float, default=7.0)
    p.add_argument("--tol-b", dest="tol_b", type=float, default=0.25)
    p.add_argument("--seeds", type=seed_list, default=None, help="at least three seeds (default seed..seed+2)")
    p.set_defaults(handler=cmd_bisect)

    for name, handler, text in (("attractor", cmd_attractor, "ensemble snapshots and density rasters"),
                                ("sync", cmd_sync, "ensemble diameter over time")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--n", dest="ensemble_size", type=int, help="ensemble size (default HOPF_ENSEMBLE_SIZE or 1e6)")
        p.add_argument("--on-failure", dest="on_failure", choices=["abort", "drop"], default="abort")
        p.set_defaults(handler=handler)
        if name == "attractor":
            p.add_argument("--snapshots", type=float_list, default=None, help="comma separated snapshot times")
            p.add_argument("--nx", type=int)
            p.add_argument("--ny", type=int)
            p.add_argument("--bounds", type=float_list, default=None, help="x_min,x_max,y_min,y_max")
            p.add_argument("--auto-bounds", dest="auto_bounds", action="store_true")
            p.add_argument("--points-csv", dest="points_csv", action="store_true")
        else:
            p.add_argument("--dt", type=float, default=0.1)

    p = sub.add_parser("converge", parents=[common], help="strong convergence order study")
    p.add_argument("--taus", type=float_list, default=None)
    p.add_argument("--ref-refinement", dest="ref_refinement", type=int, default=256)
    p.add_argument("--n-seeds", dest="n_seeds", type=int, default=256)
    p.set_defaults(handler=cmd_converge)

    p = sub.add_parser("verify", parents=[common], help="cocycle and conjugacy residual table")
    p.add_argument("--k", type=int, default=10)
    p.add_argument("--points", type=int, default=20)
    p.add_argument("--seeds", type=seed_list, default=None)
    p.set_defaults(handler=cmd_verify)

    p = sub.add_parser("selftest", parents=[common], help="property suite")
    p.set_defaults(handler=cmd_selftest)
    return parser


def run(argv: Sequence[str]) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(list(argv))
    except SystemExit as e:
        return EXIT_OK if e.code in (0, None) else EXIT_INVALID

    handler: Callable = args.handler
    try:
        cfg = build_config(args)
        logfire.info(f"CLI -- {cfg.subcommand} tau={cfg.tau:g} T={cfg.T:g} seed={cfg.seed:#x} workers={cfg.workers}")
        return asyncio.run(handler(cfg))
    except StepSizeError as e:
        logfire.exception(f"CLI -- {e}")
        return EXIT_INVALID
    except AcceptanceFailure as e:
        logfire.error(f"CLI -- {e}")
        return EXIT_ACCEPTANCE
    except HopfError as e:
        logfire.exception(f"CLI -- numerical failure: {e}")
        return EXIT_NUMERICAL
    except (ValidationError, ValueError) as e:
        logfire.exception(f"CLI -- invalid input: {e}")
        return EXIT_INVALID
