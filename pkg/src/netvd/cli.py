"""Command-line experiment runner: ``netvd run|resources|validate|scaling``."""
from __future__ import annotations

import argparse
import csv
import datetime as _dt
import io
import itertools
import sys
from dataclasses import replace
from importlib import resources as _res
from pathlib import Path

import yaml

from . import estimator as est
from . import network as net
from .heisenberg import PRESETS
from .noise_model import NoiseModel
from .vd_builder import CSV_COLUMNS, IMPLS, count_resources

EXIT_OK, EXIT_VALIDATION, EXIT_RUNTIME = 0, 1, 2
RECIPES = ("fig6", "fig7", "fig9", "fig12", "table1")
SCHEMA_VERSION = 1
SCALING_COLUMNS = ("impl", "n", "N", "c", "M", "seed", "stderr", "ratio")

_RUN_KEYS = {"impl", "n", "N", "c", "mode", "M", "seed", "network", "preset", "h", "K",
             "observable", "noise", "scaled", "vd_noise", "reference", "Ms"}


class ConfigError(ValueError):
    """Invalid experiment configuration; the message names the offending field."""


# -- configuration ------------------------------------------------------------

def recipe_text(name: str) -> str:
    return _res.files("netvd").joinpath("recipes", f"{name}.yaml").read_text()


def load_config(source: str) -> dict:
    """Path or shipped recipe name, optionally ``#run`` to pick one run block."""
    src, _, pick = source.partition("#")
    p = Path(src)
    if p.exists():
        text = p.read_text()
    elif src in RECIPES:
        text = recipe_text(src)
    else:
        raise ConfigError(f"config: no file or recipe named {src!r}")
    try:
        cfg = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise ConfigError(f"config: YAML error: {exc}") from exc
    if not isinstance(cfg, dict):
        raise ConfigError("config: top level must be a mapping")
    if cfg.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
        raise ConfigError(f"schema: unsupported version {cfg.get('schema')}")
    runs = cfg.get("runs")
    if not isinstance(runs, dict) or not runs:
        raise ConfigError("runs: need a non-empty mapping of named runs")
    if pick:
        if pick not in runs:
            raise ConfigError(f"runs: no run named {pick!r} (have {', '.join(runs)})")
        runs = {pick: runs[pick]}
    cfg = dict(cfg, runs=runs)
    return cfg


def _range(v, where):
    """int, list, or {from, to[, step]} (inclusive)."""
    if isinstance(v, dict):
        try:
            lo, hi, st = v["from"], v["to"], v.get("step", 1)
        except KeyError as exc:
            raise ConfigError(f"{where}: range needs 'from' and 'to'") from exc
        out = list(range(int(lo), int(hi) + 1, int(st)))
    elif isinstance(v, (list, tuple)):
        out = list(v)
    else:
        out = [v]
    if not out:
        raise ConfigError(f"{where}: empty range")
    return out


def _as_list(v):
    return list(v) if isinstance(v, (list, tuple)) else [v]


def expand_run(name: str, spec: dict, defaults: dict | None = None) -> list:
    """Cells of one run block, in impl, N, n, c order."""
    spec = {**(defaults or {}), **(spec or {})}
    where = f"runs.{name}"
    bad = set(spec) - _RUN_KEYS
    if bad:
        raise ConfigError(f"{where}: unknown keys {sorted(bad)}")
    impls = [str(i).upper() for i in _as_list(spec.get("impl", "CR"))]
    for i in impls:
        if i not in IMPLS:
            raise ConfigError(f"{where}.impl: unknown implementation {i}")
    Ns = [int(x) for x in _range(spec.get("N", 4), f"{where}.N")]
    ns = [int(x) for x in _range(spec.get("n", 2), f"{where}.n")]
    cs = [float(x) for x in _range(spec.get("c", 1.0), f"{where}.c")]
    if any(x < 1 for x in Ns + ns):
        raise ConfigError(f"{where}: n and N must be >= 1")
    if any(x <= 0 for x in cs):
        raise ConfigError(f"{where}.c: scale factors must be positive")
    mode = spec.get("mode", "exact")
    if mode not in ("exact", "mc", "oracle"):
        raise ConfigError(f"{where}.mode: must be exact, mc or oracle")
    M = int(spec.get("M", 0))
    if mode == "mc" and (M <= 0 or M % est.N_BATCHES):
        raise ConfigError(f"{where}.M: {M} is not a positive multiple of {est.N_BATCHES}")
    preset = spec.get("preset")
    if preset is not None and preset not in PRESETS:
        raise ConfigError(f"{where}.preset: unknown preset {preset!r}")
    noise = spec.get("noise") or {}
    try:
        NoiseModel.from_dict(noise)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.noise: {exc}") from exc
    scaled = tuple(spec.get("scaled", ("p1Q", "p2Q", "pBell")))
    if set(scaled) - {"p1Q", "p2Q", "pBell"}:
        raise ConfigError(f"{where}.scaled: only p1Q, p2Q, pBell can be scaled")
    network = spec.get("network", "folded")
    if network not in ("folded", "explicit"):
        raise ConfigError(f"{where}.network: must be folded or explicit")
    cells = []
    for impl, N, n, c in itertools.product(impls, Ns, ns, cs):
        h = spec.get("h")
        if h is not None and len(h) != N:
            raise ConfigError(f"{where}.h: {len(h)} fields for N={N}")
        if preset is not None and len(PRESETS[preset]) != N:
            raise ConfigError(f"{where}.preset: {preset} does not have N={N} sites")
        obs = spec.get("observable")
        if obs is not None and len(obs) != N:
            raise ConfigError(f"{where}.observable: width {len(obs)} for N={N}")
        cells.append(est.Cell(impl=impl, n=n, N=N, c=c, mode=mode, M=M, seed=int(spec.get("seed", 0)),
                              network=network, preset=preset, h=None if h is None else tuple(h),
                              K=spec.get("K"), observable=obs, noise=dict(noise), subset=scaled,
                              vd_noise=bool(spec.get("vd_noise", True)), reference=spec.get("reference")))
    return cells


def config_cells(cfg: dict, seed=None, mode=None) -> list:
    cells = []
    for name, spec in cfg["runs"].items():
        spec = dict(spec or {})
        if mode is not None:
            spec["mode"] = mode
        if seed is not None:
            spec["seed"] = seed
        cells.extend(expand_run(name, spec, cfg.get("defaults")))
    return cells


# -- output -------------------------------------------------------------------

def _stamp(args) -> str:
    if args.no_timestamp:
        return ""
    now = _dt.datetime.now(_dt.timezone.utc).replace(microsecond=0).isoformat()
    return f"# generated {now}\n"


def _emit(args, body: str):
    text = _stamp(args) + body
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _csv(rows, columns) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: repr(v) if isinstance(v, float) else v for k, v in r.items()})
    return buf.getvalue()


def _summary(row) -> str:
    head = f"{row['impl']} n={row['n']} N={row['N']} c={row['c']} {row['mode']}"
    if row["error"]:
        return f"{head}: FAILED {row['error']}"
    se = f" +- {row['stderr']:.2e}" if row["mode"] == "mc" else ""
    return f"{head}: ratio={row['ratio']:.6f}{se} deltaE={row['deltaE']:.3e}"


# -- commands -----------------------------------------------------------------

def cmd_run(args) -> int:
    cfg = load_config(args.config)
    cells = config_cells(cfg, seed=args.seed, mode=args.mode)
    rows = est.sweep(cells, jobs=args.jobs)
    for r in rows:
        print(_summary(r), file=sys.stderr)
    buf = io.StringIO()
    est.write_rows(rows, buf)
    _emit(args, buf.getvalue())
    return EXIT_RUNTIME if any(r["error"] for r in rows) else EXIT_OK


def _int_range(text: str, flag: str) -> list:
    try:
        if ":" in text:
            lo, hi = text.split(":")
            out = list(range(int(lo), int(hi) + 1))
        else:
            out = [int(x) for x in text.split(",")]
    except ValueError as exc:
        raise ConfigError(f"{flag}: expected 'a:b' or a comma list, got {text!r}") from exc
    if not out or min(out) < 1:
        raise ConfigError(f"{flag}: values must be >= 1 and non-empty")
    return out


def cmd_resources(args) -> int:
    if args.config:
        spec = load_config(args.config)["runs"]
        jobs = []
        for name, s in spec.items():
            jobs.append(([str(i).upper() for i in _as_list(s.get("impl", list(IMPLS)))],
                         [int(x) for x in _range(s.get("n", 2), f"runs.{name}.n")],
                         [int(x) for x in _range(s.get("N", 1), f"runs.{name}.N")],
                         _as_list(s.get("mode", "table"))))
    else:
        impls = [i.upper() for i in args.impl.split(",")]
        jobs = [(impls, _int_range(args.n, "--n"), _int_range(args.N, "--N"), [args.mode or "table"])]
    rows = []
    for impls, ns, Ns, modes in jobs:
        for i in impls:
            if i not in IMPLS:
                raise ConfigError(f"impl: unknown implementation {i}")
        for m in modes:
            if m not in ("table", "as-built"):
                raise ConfigError(f"mode: {m!r} is not table or as-built")
        for impl, n, N, m in itertools.product(impls, ns, Ns, modes):
            rows.append(count_resources(impl, n, N, m).row())
    _emit(args, _csv(rows, CSV_COLUMNS))
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        text = Path(args.topology).read_text()
    except OSError as exc:
        raise ConfigError(f"topology: {exc}") from exc
    try:
        topo = net.parse_topology(text)
    except net.TopologyParseError as exc:
        print(f"{args.topology}: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    res = net.validate_topology(topo, net.required_topology(args.impl.upper(), args.n))
    if res.ok:
        mapping = ", ".join(f"{r}->{a}" for r, a in sorted(res.mapping.items()))
        _emit(args, f"ok {args.impl.upper()} n={args.n}: {mapping}\n")
        return EXIT_OK
    _emit(args, "".join(f"deficiency: {d}\n" for d in res.deficiencies))
    return EXIT_VALIDATION


def cmd_scaling(args) -> int:
    """Monte Carlo runs at each M of the config; fits log10 stdError against log10 M."""
    cfg = load_config(args.config)
    rows, pts = [], []
    for name, spec in cfg["runs"].items():
        spec = {**(cfg.get("defaults") or {}), **(spec or {})}
        Ms = [int(m) for m in _range(spec.pop("Ms", spec.get("M")), f"runs.{name}.Ms")]
        for M in Ms:
            if M <= 0 or M % est.N_BATCHES:
                raise ConfigError(f"runs.{name}.Ms: {M} is not a positive multiple of {est.N_BATCHES}")
        if len(set(Ms)) < 4 or max(Ms) < 10 * min(Ms):
            raise ConfigError(f"runs.{name}.Ms: need at least 4 values spanning a decade")
        spec.update(mode="mc", M=Ms[0])
        if args.seed is not None:
            spec["seed"] = args.seed
        for cell in expand_run(name, spec):
            for M in Ms:
                c = replace(cell, M=M)
                rep, _ = est.run_monte_carlo(c.plan(), c.model(), M, c.seed, c.obs(),
                                             vd_noise=c.vd_noise)
                rows.append(dict(impl=c.impl, n=c.n, N=c.N, c=c.c, M=M, seed=c.seed,
                                 stderr=rep.stdError, ratio=rep.ratio))
                pts.append((M, rep.stdError))
                print(f"{c.impl} n={c.n} N={c.N} M={M}: stderr={rep.stdError:.4e}", file=sys.stderr)
    slope, intercept = est.scaling_fit(pts)
    body = _csv(rows, SCALING_COLUMNS)
    body += f"# slope={slope!r} intercept={intercept!r} sd={10 ** intercept!r}\n"
    _emit(args, body)
    print(f"slope {slope:.4f}, underlying sd {10 ** intercept:.4f}", file=sys.stderr)
    return EXIT_OK


# -- entry point ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="netvd", description=__doc__)
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", help="output file (default stdout)")
    common.add_argument("--no-timestamp", action="store_true", help="omit the '# generated' header line")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", parents=[common], help="run a sweep from a config")
    r.add_argument("--config", required=True, help="YAML file or recipe name, optional '#run'")
    r.add_argument("--seed", type=int)
    r.add_argument("--mode", choices=("exact", "mc", "oracle"))
    r.add_argument("--jobs", type=int, default=1)
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("resources", parents=[common], help="resource counts per (impl, n, N)")
    s.add_argument("--config", help="recipe with impl/n/N/mode ranges (e.g. table1)")
    s.add_argument("--impl", default="CR,QECR,BW")
    s.add_argument("--n", default="2:8", help="'a:b' or comma list")
    s.add_argument("--N", default="1:8", help="'a:b' or comma list")
    s.add_argument("--mode", choices=("table", "as-built"))
    s.set_defaults(func=cmd_resources)

    v = sub.add_parser("validate", parents=[common], help="check a topology file")
    v.add_argument("topology")
    v.add_argument("--impl", required=True)
    v.add_argument("--n", type=int, required=True)
    v.set_defaults(func=cmd_validate)

    c = sub.add_parser("scaling", parents=[common], help="stdError against M and its log-log fit")
    c.add_argument("--config", required=True)
    c.add_argument("--seed", type=int)
    c.set_defaults(func=cmd_scaling)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except Exception as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
