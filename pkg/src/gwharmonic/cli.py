"""Command-line front end.

    gwh <command> --dist '{"1":0.5,"2":0.5}' --lambda 1 [options]

Commands: sample, beta, rde, dim, children, sweep, check. Settings come from
built-in defaults, then ``--config`` (a JSON object keyed like the long
flags, with underscores), then ``GWH_THREADS``, then explicit flags. The
effective configuration and the package version are echoed into every
artifact. Exit status: 0 success, 2 inconclusive checks, 1 error or failed
check.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
import tempfile
from importlib import resources

import jsonschema
import numpy as np

from . import __version__
from .conductance import DEFAULT_DEPTH_CAP, DEFAULT_TOL, beta_refined
from .errors import ConfigError, GWHError
from .estimators import (QUANTITIES, Budget, ClosedForm, SweepResult, children_average, dim_harmonic,
                         parse_grid, reciprocal_children_average, sweep_lambda, theorem_suite)
from .gw_tree import Tree, iter_keys, sample_tree, validate_distribution
from .rde import DEFAULT_POOL, DEFAULT_SWEEPS, pool_expectations, pool_histogram, solve_pool
from .rng import RngStream

COMMANDS = ("sample", "beta", "rde", "dim", "children", "sweep", "check")
ESTIMATE_HEADER = SweepResult.HEADER

DEFAULTS = {
    "dist": {"1": 0.5, "2": 0.5},
    "lambda": None,
    "grid": None,
    "seed": 0,
    "pool_size": DEFAULT_POOL,
    "sweeps": DEFAULT_SWEEPS,
    "walk_steps": 2_000_000,
    "ray_steps": 20_000,
    "replicas": 4,
    "depth_cap": DEFAULT_DEPTH_CAP,
    "tol": None,
    "out": None,
    "format": "csv",
    "threads": 1,
    "allow_deterministic": False,
    "method": "closed_form",
    "target": "both",
    "depth": 8,
    "trees": 100,
    "bins": 50,
    "k_max": 10,
}


def load_schema(name: str) -> dict:
    text = resources.files("gwharmonic").joinpath("schemas", f"{name}.json").read_text()
    return json.loads(text)


def validate(instance, schema_name: str) -> None:
    try:
        jsonschema.validate(instance, load_schema(schema_name))
    except jsonschema.ValidationError as exc:
        raise ConfigError(f"{schema_name}: {exc.message}") from exc


# Configuration -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON file with default settings")
    common.add_argument("--dist", help='offspring law as JSON, e.g. \'{"1":0.5,"2":0.5}\'')
    common.add_argument("--lambda", dest="lambda_", type=float, help="bias parameter")
    common.add_argument("--grid", help="lambda grid start:stop:step (endpoint inclusive)")
    common.add_argument("--seed", type=int)
    common.add_argument("--pool-size", type=int)
    common.add_argument("--sweeps", type=int)
    common.add_argument("--walk-steps", type=int)
    common.add_argument("--ray-steps", type=int)
    common.add_argument("--replicas", type=int)
    common.add_argument("--depth-cap", type=int)
    common.add_argument("--tol", type=float)
    common.add_argument("--out", help="output directory (default: stdout)")
    common.add_argument("--format", choices=("csv", "json"))
    common.add_argument("--threads", type=int)
    common.add_argument("--allow-deterministic", action="store_true", default=None)

    p = argparse.ArgumentParser(prog="gwh", description="Biased random walks on Galton-Watson trees.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    sp = sub.add_parser("sample", parents=[common], help="sample a tree to a fixed depth")
    sp.add_argument("--depth", type=int)
    sp = sub.add_parser("beta", parents=[common], help="refined escape probabilities of sampled trees")
    sp.add_argument("--trees", type=int)
    sp = sub.add_parser("rde", parents=[common], help="population-dynamics solution for the beta law")
    sp.add_argument("--bins", type=int)
    for name, hlp in (("dim", "dimension of harmonic measure"), ("children", "average offspring counts")):
        sp = sub.add_parser(name, parents=[common], help=hlp)
        sp.add_argument("--method", choices=("closed_form", "ergodic"))
        if name == "children":
            sp.add_argument("--target", choices=("harm_ray", "walk_path", "both"))
    sub.add_parser("sweep", parents=[common], help="closed-form estimates over a lambda grid")
    sp = sub.add_parser("check", parents=[common], help="statistical checks of the main inequalities")
    sp.add_argument("--k-max", type=int)
    return p


def resolve_config(args: argparse.Namespace, environ=os.environ) -> dict:
    """Defaults, then the config file, then GWH_THREADS, then explicit flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        try:
            with open(args.config) as fh:
                from_file = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(from_file, dict):
            raise ConfigError("config file must hold a JSON object")
        from_file = {k.replace("-", "_"): v for k, v in from_file.items()}
        from_file.pop("command", None)
        if "offspring" in from_file:
            from_file["dist"] = from_file.pop("offspring")
        cfg.update(from_file)
    if environ.get("GWH_THREADS"):
        try:
            cfg["threads"] = int(environ["GWH_THREADS"])
        except ValueError as exc:
            raise ConfigError("GWH_THREADS must be an integer") from exc
    for key, value in vars(args).items():
        if key in ("config", "command") or value is None:
            continue
        key = "lambda" if key == "lambda_" else key
        if key == "dist":
            try:
                value = json.loads(value)
            except json.JSONDecodeError as exc:
                raise ConfigError(f"--dist is not valid JSON: {exc}") from exc
        cfg[key] = value
    if isinstance(cfg["dist"], dict) and set(cfg["dist"]) == {"offspring"}:
        cfg["dist"] = cfg["dist"]["offspring"]
    cfg["command"] = args.command
    validate(cfg, "config")
    return dict(sorted(cfg.items()))


def budget_from(cfg: dict) -> Budget:
    return Budget(pool_size=cfg["pool_size"], sweeps=cfg["sweeps"], walk_steps=cfg["walk_steps"],
                  ray_length=cfg["ray_steps"], ray_steps=cfg["ray_steps"], replicas=cfg["replicas"],
                  tol=cfg["tol"], depth_cap=cfg["depth_cap"], threads=cfg["threads"])


def lambdas_from(cfg: dict) -> list[float]:
    if cfg["grid"]:
        try:
            return parse_grid(cfg["grid"])
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
    if cfg["lambda"] is None:
        raise ConfigError(f"{cfg['command']} needs --lambda or --grid")
    return [float(cfg["lambda"])]


# Emission ----------------------------------------------------------------------

def fmt(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return str(bool(x)).lower()
    if isinstance(x, (float, np.floating)):
        return f"{float(x):.17g}"
    if isinstance(x, (np.integer,)):
        return str(int(x))
    return "" if x is None else str(x)


def _plain(x):
    if isinstance(x, dict):
        return {str(k): _plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_plain(v) for v in x.tolist()]
    if isinstance(x, (np.floating, float)):
        return float(f"{float(x):.17g}")
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.bool_):
        return bool(x)
    return x


def render_csv(columns, rows, cfg: dict, meta: dict | None = None) -> str:
    buf = io.StringIO()
    buf.write(f"# gwharmonic {__version__}\n")
    buf.write(f"# config {json.dumps(_plain(cfg), sort_keys=True)}\n")
    for key, value in sorted((meta or {}).items()):
        buf.write(f"# {key} {json.dumps(_plain(value), sort_keys=True)}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


def render_json(columns, rows, cfg: dict, meta: dict | None = None) -> str:
    doc = {"version": __version__, "config": cfg, "columns": list(columns), "rows": rows}
    if meta:
        doc["meta"] = meta
    doc = _plain(doc)
    validate(doc, "result")
    return json.dumps(doc, indent=1, sort_keys=True) + "\n"


def csv_body(text: str) -> str:
    """The CSV without its ``#`` metadata lines."""
    return "".join(line for line in text.splitlines(keepends=True) if not line.startswith("#"))


def write_atomic(path: str, text: str) -> None:
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=d, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit(text: str, cfg: dict, stem: str, stdout=None) -> str | None:
    if cfg["out"] is None:
        (stdout or sys.stdout).write(text)
        return None
    path = os.path.join(cfg["out"], f"{stem}.{cfg['format']}")
    try:
        write_atomic(path, text)
    except OSError as exc:
        raise GWHError(f"cannot write {path}: {exc}") from exc
    return path


# Commands ----------------------------------------------------------------------

def _estimate_row(lam, name, e):
    return (lam, name, e.mean, e.std_error, e.ci_low, e.ci_high, e.n, e.method)


def cmd_sample(dist, cfg):
    tree = sample_tree(dist, cfg["depth"], RngStream(cfg["seed"]).derive("sample"))
    rows = []
    for v in range(tree.n):
        if tree.depth(v) > cfg["depth"]:
            continue
        nch = tree.child_count(v) if tree.is_expanded(v) else None
        rows.append((v, tree.parent(v), tree.depth(v), nch))
    return ("node", "parent", "depth", "child_count"), rows, {"level_sizes": tree.level_sizes()[: cfg["depth"] + 1]}


def cmd_beta(dist, cfg):
    tol = DEFAULT_TOL if cfg["tol"] is None else cfg["tol"]
    rows = []
    for lam in lambdas_from(cfg):
        keys = iter_keys(RngStream(cfg["seed"]).derive("beta", lam), cfg["trees"])
        for i, key in enumerate(keys):
            iv = beta_refined(Tree(dist, key), lam, tol, depth_cap=cfg["depth_cap"])
            rows.append((lam, i, iv.lo, iv.hi, iv.mid, iv.width, iv.depth_used, iv.certified))
    return ("lambda", "tree", "lo", "hi", "mid", "width", "depth_used", "certified"), rows, {}


def cmd_rde(dist, cfg):
    lams = lambdas_from(cfg)
    rows, expectations = [], {}
    for lam in lams:
        pool = solve_pool(dist, lam, cfg["pool_size"], cfg["sweeps"],
                          RngStream(cfg["seed"]).derive("pool").generator())
        est = pool_expectations(pool, ("beta", "log_inv_beta", "inv_lam_minus_1_plus_beta"))
        expectations[fmt(lam)] = {k: e.to_dict() for k, e in est.items()}
        prefix = (lam,) if len(lams) > 1 else ()
        rows.extend(prefix + r for r in pool_histogram(pool, cfg["bins"]))
    columns = (("lambda",) if len(lams) > 1 else ()) + ("bin_lo", "bin_hi", "count")
    return columns, rows, {"expectations": expectations}


def _method(cfg, ergodic_name):
    return "closed_form_pool" if cfg["method"] == "closed_form" else ergodic_name


def cmd_dim(dist, cfg):
    budget = budget_from(cfg)
    stream = RngStream(cfg["seed"])
    ctx = ClosedForm(dist, budget, stream)
    rows = []
    for lam in lambdas_from(cfg):
        e = dim_harmonic(dist, lam, _method(cfg, "ergodic_ray"), budget, stream.derive("dim"), ctx)
        rows.append(_estimate_row(lam, "dim", e))
    return ESTIMATE_HEADER, rows, {}


def cmd_children(dist, cfg):
    budget = budget_from(cfg)
    stream = RngStream(cfg["seed"])
    ctx = ClosedForm(dist, budget, stream)
    targets = ("harm_ray", "walk_path") if cfg["target"] == "both" else (cfg["target"],)
    rows = []
    for lam in lambdas_from(cfg):
        for target in targets:
            kind = "harm" if target == "harm_ray" else "walk"
            method = _method(cfg, "ergodic_ray" if target == "harm_ray" else "ergodic_walk")
            e = children_average(dist, lam, target, method, budget, stream.derive(target), ctx)
            r = reciprocal_children_average(dist, lam, target, budget, stream.derive(target, "recip"),
                                            method, ctx)
            rows.append(_estimate_row(lam, f"{kind}_children", e))
            rows.append(_estimate_row(lam, f"{kind}_reciprocal", r))
    return ESTIMATE_HEADER, rows, {}


def cmd_sweep(dist, cfg):
    if not cfg["grid"]:
        raise ConfigError("sweep needs --grid")
    res = sweep_lambda(dist, lambdas_from(cfg), QUANTITIES, budget_from(cfg), RngStream(cfg["seed"]))
    return ESTIMATE_HEADER, res.rows(), {"constants": res.constants, "flags": res.flags}


def cmd_check(dist, cfg):
    lams = lambdas_from(cfg) if (cfg["grid"] or cfg["lambda"] is not None) else None
    return theorem_suite(dist, budget_from(cfg), RngStream(cfg["seed"]), lams, cfg["k_max"])


HANDLERS = {"sample": cmd_sample, "beta": cmd_beta, "rde": cmd_rde, "dim": cmd_dim,
            "children": cmd_children, "sweep": cmd_sweep}


def run(cfg: dict, stdout=None) -> int:
    dist = validate_distribution(cfg["dist"], cfg["allow_deterministic"])
    command = cfg["command"]
    echo = cfg
    if command == "check":
        report = cmd_check(dist, cfg)
        if cfg["format"] == "json":
            doc = _plain({"version": __version__, "config": echo, **report.to_dict()})
            validate(doc, "check_report")
            text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
        else:
            rows = [(c.claim_id, c.paper_ref, c.direction, c.z, c.verdict) for c in report.claims]
            text = render_csv(("claim_id", "paper_ref", "direction", "z", "verdict"), rows, echo,
                              {"counts": report.counts()})
        emit(text, cfg, "check", stdout)
        if report.has_failure:
            return 1
        return 2 if report.has_inconclusive else 0
    columns, rows, meta = HANDLERS[command](dist, cfg)
    render = render_json if cfg["format"] == "json" else render_csv
    emit(render(columns, rows, echo, meta), cfg, command, stdout)
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(resolve_config(args))
    except (GWHError, ValueError) as exc:
        print(f"gwh: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
