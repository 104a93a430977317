"""Command-line interface: ``metapop <subcommand> [options]``.

Options come from three places, highest priority first: command-line
flags, a flat ``key=value`` config file (``--config``), built-in defaults.
Model parameters can be set in the config file by their field names
(``beta_before=0.7``) or on the command line with ``--param beta_before=0.7``.

Every run writes its outputs, the resolved configuration (``config.txt``,
usable as ``--config`` to replay the run) and ``manifest.json`` into the
output directory. Exit codes: 0 success, 1 user error, 2 internal error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import os
import platform
import secrets
import sys
import tempfile
import time
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .anomaly import anomalies, top_outliers, write_anomaly_csv, write_plot_csv
from .benchmarks import conditional_logliks, fit_ar, fit_iid, write_conditional_csv, write_fit_json
from .core import ParameterSet, RngStream, TimeGrid, percentile_summary, simulate
from .filters import compare_filters, run_filter, write_comparison_csv
from .ibpf import PerturbationSchedule, jitter, replicated_search
from .ingest import ingest
from .mobility import GravityConfig, MobilityTensor, connectivity_check, gravity_adjust
from .profile import BoundaryMaximumError, boundary_lrt, mcap, read_profile_csv, write_profile_csv
from .seair import PRESETS, SeairModel, SeairParams
from .synthetic import make_synthetic

PARAM_NAMES = tuple(f.name for f in fields(SeairParams))


class UserError(Exception):
    """Bad input or configuration; reported with exit code 1."""


def _csv_list(s: str) -> tuple[str, ...]:
    return tuple(x.strip() for x in s.split(",") if x.strip())


def _float_list(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in _csv_list(s))


# name -> (type, default, help). ``None`` default means "not set".
COMMON = {
    "cases": (str, None, "cases CSV (date,unit,cases)"),
    "population": (str, None, "population CSV (unit,population)"),
    "mobility": (str, None, "mobility CSV (day,from,to,flow)"),
    "geo": (str, None, "geo CSV (unit,lat,lon,population)"),
    "gravity": (float, None, "gravity factor F (default 20 with a geo file; small for --units)"),
    "units": (int, None, "use a synthetic panel with this many units instead of files"),
    "days": (int, 30, "days in the synthetic panel"),
    "data_seed": (int, 0, "seed for the synthetic panel"),
    "preset": (str, "unconstrained", "starting parameter preset"),
    "fixed": (_csv_list, (), "extra parameters held fixed (comma list)"),
    "tied": (_csv_list, (), "regime parameters sharing one value before and after lockdown"),
    "lockdown_time": (float, 14.0, "regime switch time in days"),
    "source_unit": (str, None, "unit seeded with E0 and A0 (default: first unit)"),
    "dt": (float, 0.25, "Euler step in days"),
    "enkf_variance": (str, "as-described", "EnKF measurement variance floor mode"),
    "seed": (int, None, "master seed; generated and printed when absent"),
}

FILTER_OPTS = {
    "J": (int, 1000, "particles or ensemble members"),
    "block_size": (int, 1, "units per block for the block particle filter"),
}

SEARCH_OPTS = {
    "iterations": (int, 50, "IBPF iterations"),
    "starts": (int, 3, "independent searches"),
    "jitter": (float, 0.1, "sd of random starts on the estimation scale"),
    "n_eval": (int, 5, "filter replicates used to evaluate each end point"),
    "J_eval": (int, None, "particles for the evaluation filters (default J)"),
    "rw_sd": (float, 0.02, "random-walk sd for regular parameters"),
    "rw_sd_ivp": (float, 0.1, "random-walk sd for initial-value parameters"),
    "cooling": (float, 0.5 ** (1 / 25), "per-iteration cooling factor"),
    "free": (_csv_list, (), "parameters to estimate (default: all free)"),
}

COMMANDS = {
    "simulate": ({"n_reps": (int, 1, "simulated replicates")}, "simulate case counts"),
    "percentiles": ({"n_reps": (int, 100, "simulated replicates"),
                     "probs": (_float_list, (0.1, 0.5, 0.9), "quantile levels")},
                    "pointwise quantiles of simulated counts"),
    "filter": ({**FILTER_OPTS, "method": (str, "bpf", "pf, bpf or enkf")}, "evaluate the log-likelihood"),
    "fit": ({**FILTER_OPTS, **SEARCH_OPTS}, "maximum likelihood by iterated block filtering"),
    "profile": ({**FILTER_OPTS, **SEARCH_OPTS, "profile_param": (str, None, "parameter to profile"),
                 "grid": (str, None, "lo:hi:n or comma list of values")}, "profile likelihood"),
    "mcap": ({"profile_csv": (str, None, "profile CSV written by the profile command"),
              "confidence": (float, 0.95, "confidence level"),
              "span": (float, 0.75, "smoother span")}, "Monte Carlo adjusted profile interval"),
    "benchmark": ({"model": (str, "ar", "iid or ar")}, "negative binomial benchmark fit"),
    "anomaly": ({**FILTER_OPTS, "benchmark": (str, "ar", "iid or ar"),
                 "top": (int, 10, "outliers to list")}, "log-likelihood anomalies"),
    "compare-filters": ({"block_size": FILTER_OPTS["block_size"],
                         "filters": (_csv_list, ("pf:1000", "bpf:1000", "enkf:1000"), "method:J list"),
                         "n_reps": (int, 5, "replicates per filter")}, "compare filter log-likelihoods"),
}

UNSEEDED = {"mcap", "benchmark"}
NOT_IN_SNAPSHOT = {"threads", "config", "out", "param"}


# --- configuration ----------------------------------------------------------------

def read_config(path) -> dict[str, str]:
    out = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UserError(f"cannot read config {path}: {exc.strerror}") from None
    for k, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UserError(f"{path}:{k}: expected key=value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def _format(value) -> str:
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="metapop", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"metapop {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, (opts, help_) in COMMANDS.items():
        p = sub.add_parser(name, help=help_)
        p.add_argument("--config", help="key=value config file")
        p.add_argument("--out", help="output directory (default: out-<command>)")
        p.add_argument("--threads", type=int, help="worker threads (or METAPOP_THREADS)")
        p.add_argument("--param", action="append", default=[], metavar="NAME=VALUE",
                       help="model parameter override (repeatable)")
        for key, (typ, default, h) in {**COMMON, **opts}.items():
            flag = "--" + key.replace("_", "-")
            p.add_argument(flag, dest=key, type=typ, default=None,
                           help=f"{h} (default: {_format(default) if default not in (None, ()) else '-'})")
    return parser


def resolve(args: argparse.Namespace) -> dict:
    """Merge flags, config file and defaults into one settings dict."""
    opts = {**COMMON, **COMMANDS[args.command][0]}
    config = read_config(args.config) if args.config else {}
    unknown = sorted(set(config) - set(opts) - set(PARAM_NAMES))
    if unknown:
        raise UserError(f"unknown config keys {unknown}")
    settings = {"command": args.command}
    for key, (typ, default, _) in opts.items():
        value = getattr(args, key)
        if value is None and key in config:
            try:
                value = typ(config[key])
            except ValueError as exc:
                raise UserError(f"config key {key}: {exc}") from None
        settings[key] = default if value is None else value
    params = {k: float(v) for k, v in config.items() if k in PARAM_NAMES}
    for item in args.param:
        if "=" not in item:
            raise UserError(f"--param expects NAME=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        if k not in PARAM_NAMES:
            raise UserError(f"unknown parameter {k!r}")
        params[k] = float(v)
    settings["params"] = params
    return settings


def write_config(path, settings: dict, params: ParameterSet | None) -> None:
    lines = [f"# metapop {__version__} resolved configuration"]
    for k, v in settings.items():
        if k in ("command", "params") or k in NOT_IN_SNAPSHOT or v is None or v == ():
            continue
        lines.append(f"{k}={_format(v)}")
    if params is not None:
        lines += [f"{k}={params[k]!r}" for k in params.names]
    Path(path).write_text("\n".join(lines) + "\n")


def _atomic_json(path: Path, obj) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".manifest-", suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        json.dump(obj, fh, indent=2, default=str)
    os.replace(tmp, path)


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


# --- setup ----------------------------------------------------------------------------

class Context:
    """Data, model and starting parameters shared by the subcommands."""

    def __init__(self, settings: dict):
        self.s = settings
        base = PRESETS.get(settings["preset"])
        if base is None:
            raise UserError(f"unknown preset {settings['preset']!r}; choose from {sorted(PRESETS)}")
        base = replace(base, **settings["params"])
        fixed = {"Td_before", "Td_after", *settings["fixed"]}
        bad = sorted(set(settings["fixed"]) - set(PARAM_NAMES))
        if bad:
            raise UserError(f"unknown fixed parameters {bad}")
        self.dates = None
        self.report = []
        if settings["units"] is not None:
            if any(settings[k] for k in ("cases", "population", "mobility", "geo")):
                raise UserError("--units cannot be combined with input files")
            kw = {} if settings["gravity"] is None else {"gravity": settings["gravity"]}
            syn = make_synthetic(settings["units"], settings["days"], settings["data_seed"], base,
                                 dt=settings["dt"], **kw)
            self.panel, self.geo, self.mob = syn.panel, syn.geo, syn.mobility
            pops = np.round(syn.geo.population).astype(np.int64)
            start = replace(base, E0=syn.params["E0"])
        elif settings["cases"]:
            ds = ingest(settings["cases"], settings["population"], settings["mobility"], settings["geo"],
                        dt_step=settings["dt"])
            self.panel, self.geo, self.dates, pops = ds.panel, ds.geo, ds.dates, ds.populations
            U = self.panel.n_units
            mob = ds.mobility or MobilityTensor(np.zeros((self.panel.n_times, U, U)))
            if self.geo is not None and U > 1:
                F = 20.0 if settings["gravity"] is None else settings["gravity"]
                mob = gravity_adjust(mob, self.geo, GravityConfig(F))
            self.mob = mob
            start = base
        else:
            raise UserError("give --cases (with --population or --geo) or --units")
        self.report = connectivity_check(self.mob, list(self.panel.units))
        units = self.panel.units
        src = settings["source_unit"]
        if src is not None and src not in units:
            raise UserError(f"unknown source unit {src!r}")
        self.model = SeairModel(
            pops, self.mob, unit_names=units, source_unit=units.index(src) if src else 0,
            lockdown_time=settings["lockdown_time"], tied=settings["tied"],
            enkf_variance=settings["enkf_variance"],
        )
        self.params = start.to_parameter_set(fixed=tuple(fixed))
        self.grid: TimeGrid = self.panel.grid

    @property
    def blocks(self):
        B = self.s.get("block_size", 1)
        if B < 1:
            raise UserError("block size must be >= 1")
        U = self.panel.n_units
        return [tuple(range(k, min(k + B, U))) for k in range(0, U, B)]

    def free(self, params: ParameterSet, exclude=()) -> tuple[str, ...]:
        free = tuple(k for k in (self.s["free"] or params.free_names) if k not in exclude)
        bad = sorted(set(free) - set(params.free_names))
        if bad:
            raise UserError(f"cannot estimate fixed or unknown parameters {bad}")
        return free

    def jitter_sd(self, params: ParameterSet, exclude=()) -> dict[str, float]:
        return {k: self.s["jitter"] for k in self.free(params, exclude)}

    def schedule(self, params: ParameterSet, exclude=()) -> PerturbationSchedule:
        s = self.s
        free = self.free(params, exclude)
        ivp = self.model.ivp_names()
        sd = {k: (s["rw_sd_ivp"] if k in ivp else s["rw_sd"]) if k in free else 0.0 for k in params.free_names}
        return PerturbationSchedule(sd, s["cooling"], s["iterations"], ivp)


# --- subcommands ----------------------------------------------------------------------

def _write_sim_csv(path, sims, units):
    with open(path, "w") as fh:
        fh.write("rep,unit,time,cases\n")
        for r, sim in enumerate(sims):
            for u, name in enumerate(units):
                for n, v in enumerate(sim.observations[u]):
                    fh.write(f"{r},{name},{n + 1},{int(v)}\n")


def cmd_simulate(ctx: Context, out: Path, seed: int, threads) -> dict:
    sims = simulate(ctx.model, ctx.params, ctx.grid, ctx.s["n_reps"], seed, threads)
    _write_sim_csv(out / "simulations.csv", sims, ctx.panel.units)
    return {"n_reps": len(sims)}


def cmd_percentiles(ctx: Context, out: Path, seed: int, threads) -> dict:
    probs = ctx.s["probs"]
    sims = simulate(ctx.model, ctx.params, ctx.grid, ctx.s["n_reps"], seed, threads)
    q = percentile_summary(sims, probs)
    with open(out / "percentiles.csv", "w") as fh:
        fh.write("unit,time," + ",".join(f"q{p:g}" for p in probs) + ",observed\n")
        for u, name in enumerate(ctx.panel.units):
            for n in range(ctx.grid.n_times):
                vals = ",".join(repr(float(v)) for v in q[u, n])
                fh.write(f"{name},{n + 1},{vals},{float(ctx.panel.counts[u, n])!r}\n")
    return {"n_reps": ctx.s["n_reps"], "probs": list(probs)}


def cmd_filter(ctx: Context, out: Path, seed: int, threads) -> dict:
    res = run_filter(ctx.s["method"], ctx.model, ctx.params, ctx.panel, ctx.s["J"], seed, blocks=ctx.blocks)
    res.write_json(out / "filter.json")
    res.write_csv(out / "cond_loglik.csv")
    if res.failures:
        print(f"warning: {len(res.failures)} block/time filter failures", file=sys.stderr)
    return {"loglik": res.loglik_total}


def _starts(ctx: Context, seed: int, base: ParameterSet, tag: str) -> list[ParameterSet]:
    rng = RngStream(seed, ("cli", tag)).for_step(0, 0, "jitter")
    sd = ctx.jitter_sd(base)
    return [base] + [jitter(base, sd, rng) for _ in range(ctx.s["starts"] - 1)]


def cmd_fit(ctx: Context, out: Path, seed: int, threads) -> dict:
    s = ctx.s
    if s["starts"] < 1:
        raise UserError("need at least one start")
    sched = ctx.schedule(ctx.params)
    rows = replicated_search(ctx.model, _starts(ctx, seed, ctx.params, "fit"), ctx.panel, s["J"], ctx.blocks,
                             sched, seed, n_eval=s["n_eval"], J_eval=s["J_eval"], threads=threads)
    best = rows[0]
    if best["params"] is None:
        raise UserError(f"every search failed; first error: {best['error']}")
    with open(out / "fit_starts.csv", "w") as fh:
        names = best["params"].names
        fh.write("start,loglik,se,status," + ",".join(names) + "\n")
        for r in sorted(rows, key=lambda r: r["start"]):
            status = r["error"] or r["trace"].status
            vals = ",".join(repr(r["params"][k]) for k in names) if r["params"] else ",".join("" for _ in names)
            fh.write(f"{r['start']},{r['loglik']!r},{r['se']!r},{status},{vals}\n")
    best["trace"].write_csv(out / "trace.csv")
    result = {"loglik": best["loglik"], "se": best["se"], "start": best["start"],
              "params": {k: best["params"][k] for k in best["params"].names}}
    with open(out / "fit.json", "w") as fh:
        json.dump(result, fh, indent=2)
    return {"loglik": best["loglik"]}


def _parse_grid(text: str) -> list[float]:
    if ":" in text:
        lo, hi, n = text.split(":")
        return list(np.linspace(float(lo), float(hi), int(n)))
    return [float(v) for v in _csv_list(text)]


def cmd_profile(ctx: Context, out: Path, seed: int, threads) -> dict:
    from .profile import profile_grid

    s = ctx.s
    name = s["profile_param"]
    if not name or not s["grid"]:
        raise UserError("profile needs --profile-param and --grid")
    if name not in ctx.params.names:
        raise UserError(f"unknown parameter {name!r}")
    base = ctx.params
    if name not in base.free_names:
        raise UserError(f"{name!r} is fixed; it cannot be profiled")
    sched = ctx.schedule(base, exclude=(name,))
    points = profile_grid(ctx.model, ctx.panel, name, _parse_grid(s["grid"]), base, J=s["J"], blocks=ctx.blocks,
                          schedule=sched, n_reps=s["starts"], n_eval=s["n_eval"], J_eval=s["J_eval"],
                          jitter_sd=ctx.jitter_sd(base, exclude=(name,)), seed=seed, threads=threads)
    write_profile_csv(out / "profile.csv", name, points)
    return {"n_points": len(points), "missing": sum(p.missing for p in points)}


def cmd_mcap(ctx, out: Path, seed, threads, settings) -> dict:
    path = settings["profile_csv"]
    if not path:
        raise UserError("mcap needs --profile-csv")
    name, points = read_profile_csv(path)
    try:
        res = mcap(points, settings["confidence"], settings["span"])
    except BoundaryMaximumError:
        # maximum on the edge of the grid: plain likelihood-ratio interval, no MC inflation
        ci = boundary_lrt(points, settings["confidence"], settings["span"])
        d = {"param": name, "method": "boundary_lrt", "ci": list(ci),
             "warnings": ["profile maximized at the grid boundary; MCAP not applicable"]}
        with open(out / "mcap.json", "w") as fh:
            json.dump(d, fh, indent=2)
        return {"ci": list(ci), "method": "boundary_lrt"}
    d = {"param": name, "method": "mcap", **res.to_dict()}
    with open(out / "mcap.json", "w") as fh:
        json.dump(d, fh, indent=2)
    with open(out / "mcap_smoothed.csv", "w") as fh:
        fh.write("value,smoothed\n")
        for x, y in zip(res.grid, res.smoothed):
            fh.write(f"{x!r},{y!r}\n")
    return {"ci": list(res.ci), "mle": res.mle, "method": "mcap"}


def _fit_benchmark(kind: str, panel):
    if kind not in ("iid", "ar"):
        raise UserError(f"unknown benchmark model {kind!r}; choose iid or ar")
    return fit_iid(panel) if kind == "iid" else fit_ar(panel)


def cmd_benchmark(ctx: Context, out: Path, seed, threads) -> dict:
    fit = _fit_benchmark(ctx.s["model"], ctx.panel)
    write_fit_json(out / "benchmark.json", fit)
    write_conditional_csv(out / "benchmark_cond.csv", conditional_logliks(fit, ctx.panel), ctx.panel.units)
    return {"loglik": fit.loglik}


def cmd_anomaly(ctx: Context, out: Path, seed: int, threads) -> dict:
    U = ctx.panel.n_units
    res = run_filter("bpf", ctx.model, ctx.params, ctx.panel, ctx.s["J"], seed, blocks=[(u,) for u in range(U)])
    fit = _fit_benchmark(ctx.s["benchmark"], ctx.panel)
    times = ctx.dates or tuple(range(1, ctx.panel.n_times + 1))
    mat = anomalies(res, conditional_logliks(fit, ctx.panel), benchmark_label=ctx.s["benchmark"],
                    units=ctx.panel.units, times=times)
    write_anomaly_csv(out / "anomaly.csv", mat)
    write_plot_csv(out / "anomaly_plot.csv", mat)
    with open(out / "outliers.csv", "w") as fh:
        fh.write("rank,unit,time,anomaly\n")
        for k, (u, t, v) in enumerate(top_outliers(mat, ctx.s["top"]), 1):
            fh.write(f"{k},{u},{t},{v!r}\n")
    return {"model_loglik": res.loglik_total, "benchmark_loglik": fit.loglik,
            "anomaly_total": float(np.sum(mat.values))}


def cmd_compare(ctx: Context, out: Path, seed: int, threads) -> dict:
    spec = []
    for item in ctx.s["filters"]:
        try:
            method, J = item.split(":")
            spec.append((method, int(J)))
        except ValueError:
            raise UserError(f"--filters entries look like bpf:1000, got {item!r}") from None
    rows = compare_filters(ctx.model, ctx.params, ctx.panel, spec, seed, ctx.s["n_reps"],
                           blocks=ctx.blocks, threads=threads)
    write_comparison_csv(out / "compare.csv", rows)
    return {"rows": [{k: r[k] for k in ("filter", "J", "loglik", "se")} for r in rows]}


HANDLERS = {
    "simulate": cmd_simulate,
    "percentiles": cmd_percentiles,
    "filter": cmd_filter,
    "fit": cmd_fit,
    "profile": cmd_profile,
    "benchmark": cmd_benchmark,
    "anomaly": cmd_anomaly,
    "compare-filters": cmd_compare,
}


# --- entry point ----------------------------------------------------------------------

def run(argv=None) -> int:
    parser = _build_parser()

    def _err(message):
        raise UserError(message)

    parser.error = _err
    for sp in parser._subparsers._group_actions[0].choices.values():
        sp.error = _err
    args = parser.parse_args(argv)
    settings = resolve(args)
    command = settings["command"]
    started = time.time()
    ctx = None if command == "mcap" else Context(settings)
    if command not in UNSEEDED and settings["seed"] is None:
        settings["seed"] = secrets.randbits(31)
        print(f"seed={settings['seed']}")
    out = Path(args.out or f"out-{command}")
    out.mkdir(parents=True, exist_ok=True)
    params = None
    if ctx is None:
        summary = cmd_mcap(None, out, None, args.threads, settings)
    else:
        params = ctx.params
        summary = HANDLERS[command](ctx, out, settings["seed"], args.threads)
        if ctx.panel.n_units > 1 and any(r["isolated"] for r in ctx.report):
            print("warning: units with no incoming travel: "
                  + ",".join(r["unit"] for r in ctx.report if r["isolated"]), file=sys.stderr)
    write_config(out / "config.txt", settings, params)
    outputs = sorted(p for p in out.iterdir() if p.is_file() and p.name != "manifest.json"
                     and not p.name.startswith("."))
    manifest = {
        "tool": "metapop",
        "version": __version__,
        "command": command,
        "argv": list(sys.argv[1:] if argv is None else argv),
        "seed": settings["seed"],
        "threads": args.threads if args.threads is not None else os.environ.get("METAPOP_THREADS"),
        "config": {k: (list(v) if isinstance(v, tuple) else v) for k, v in settings.items()
                   if k not in NOT_IN_SNAPSHOT},
        "parameters": None if params is None else {k: params[k] for k in params.names},
        "python": platform.python_version(),
        "numpy": np.__version__,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(started)),
        "wall_clock_seconds": round(time.time() - started, 3),
        "summary": summary,
        "outputs": [{"file": p.name, "sha256": _sha256(p)} for p in outputs],
    }
    _atomic_json(out / "manifest.json", manifest)
    print(json.dumps(summary, default=float))
    return 0


def main(argv=None) -> int:
    from .core import DomainError

    try:
        return run(argv)
    except (UserError, ValueError, KeyError, FileNotFoundError, DomainError) as exc:
        msg = str(exc).replace("\n", " ")
        print(f"error: user: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort report
        msg = str(exc).replace("\n", " ")
        print(f"error: internal: {type(exc).__name__}: {msg}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
