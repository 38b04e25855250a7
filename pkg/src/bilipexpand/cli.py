"""Command-line interface.

Subcommands
-----------
stretch     expand a set by iterated stretch steps; writes warped.pgm,
            metrics.json, map.stack and optionally grid.svg
verify      re-check a stored map.stack against its input set
poisson     seed sweep of the Poisson embedding; writes poisson.csv,
            per-seed reports and metrics.json
psi-demo    SVG figures of the chart, fibre maps and warped lattices

Exit codes: 0 ok, 1 check failure, 2 configuration error, 3 I/O error.
The thread count is read from ``BILIPEXPAND_THREADS``.
"""
import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .dyadic import DensityTree, PixelSet, ingest
from .errors import (BudgetExhaustedError, ConfigError, DomainError, NoProgressError,
                     ParseError, PreconditionError)
from .multiscale import (ComposedMap, ExpansionResult, StopConfig, expand_to_target,
                         rasterize_image, step_budget)
from .pixelio import MAX_Q, write_pgm

METRICS_SCHEMA = "bilipexpand.metrics"
METRICS_VERSION = 1

EXIT_OK, EXIT_CHECK, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3


class CliError(Exception):
    def __init__(self, message, code):
        super().__init__(message)
        self.code = code


# ---------------------------------------------------------------------------
# JSON with 17 significant digits

def _encode(obj, indent, level):
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, (bool, np.bool_)):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return format(x, ".17g") if math.isfinite(x) else "null"
    if isinstance(obj, str):
        return json.dumps(obj)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{json.dumps(str(k))}: {_encode(v, indent, level + 1)}"
                 for k, v in sorted(obj.items(), key=lambda kv: str(kv[0]))]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple, np.ndarray)):
        if len(obj) == 0:
            return "[]"
        items = [pad + _encode(v, indent, level + 1) for v in obj]
        return "[\n" + ",\n".join(items) + "\n" + end + "]"
    if hasattr(obj, "to_dict"):
        return _encode(obj.to_dict(), indent, level)
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps_metrics(obj, indent=1):
    """JSON text with keys sorted and every float written with 17 significant digits."""
    return _encode(obj, indent, 0) + "\n"


def _metrics(command, body):
    return {"schema": METRICS_SCHEMA, "version": METRICS_VERSION, "package_version": __version__,
            "command": command, **body}


def _write(path, text, binary=False):
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        if binary:
            path.write_bytes(text)
        else:
            path.write_text(text)
    except OSError as exc:
        raise CliError(f"cannot write {path}: {exc}", EXIT_IO) from None


# ---------------------------------------------------------------------------
# configuration files

_CONFIG_KEYS = {
    "shape": str, "input": str, "q": int, "gamma": float, "gamma_prime": float, "eta": float,
    "min_gain": float, "eps1": float, "eps2": float, "eps3": float, "eps4": float,
    "max_depth": int, "seed": int, "out": str, "lipschitz_pairs": int, "svg": bool,
    "n": int, "seeds": int, "seed_start": int, "intensity_x": float, "intensity_y": float,
    "delta": float, "eps": float, "kappa": float, "pairs": int, "mc_samples": int,
}

_RANGES = {
    "q": (lambda v: 1 <= v <= MAX_Q, f"must lie in 1..{MAX_Q}"),
    "gamma": (lambda v: 0 < v < 1, "must lie in (0, 1)"),
    "gamma_prime": (lambda v: 0 < v < 1, "must lie in (0, 1)"),
    "eta": (lambda v: v > 0, "must be positive"),
    "min_gain": (lambda v: v > 0, "must be positive"),
    "eps1": (lambda v: v > 0, "must be positive"),
    "eps2": (lambda v: v > 0, "must be positive"),
    "eps3": (lambda v: v > 0, "must be positive"),
    "eps4": (lambda v: v > 0, "must be positive"),
    "max_depth": (lambda v: v >= 1, "must be at least 1"),
    "lipschitz_pairs": (lambda v: v >= 1, "must be at least 1"),
    "n": (lambda v: v >= 2, "must be at least 2"),
    "seeds": (lambda v: v >= 1, "must be at least 1"),
    "intensity_x": (lambda v: v >= 0, "must be non-negative"),
    "intensity_y": (lambda v: v > 0, "must be positive"),
    "delta": (lambda v: 0 < v <= 1, "must lie in (0, 1]"),
    "eps": (lambda v: v > 0, "must be positive"),
    "kappa": (lambda v: v > 0, "must be positive"),
    "pairs": (lambda v: v >= 1, "must be at least 1"),
    "mc_samples": (lambda v: v >= 1, "must be at least 1"),
}


def load_config(path):
    """Read a YAML mapping of option names; errors carry ``file:line`` locations."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise CliError(f"cannot read config {path}: {exc}", EXIT_IO) from None
    try:
        root = yaml.compose(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f"{path}:{mark.line + 1}" if mark else str(path)
        raise CliError(f"{where}: invalid YAML: {getattr(exc, 'problem', exc)}", EXIT_CONFIG) from None
    if root is None:
        return {}
    if not isinstance(root, yaml.MappingNode):
        raise CliError(f"{path}:{root.start_mark.line + 1}: config must be a mapping", EXIT_CONFIG)
    out = {}
    for knode, vnode in root.value:
        line = knode.start_mark.line + 1
        key = str(knode.value).replace("-", "_")
        if key not in _CONFIG_KEYS:
            raise CliError(f"{path}:{line}: unknown key {knode.value!r}", EXIT_CONFIG)
        if not isinstance(vnode, yaml.ScalarNode):
            raise CliError(f"{path}:{line}: {key} must be a scalar", EXIT_CONFIG)
        value = yaml.safe_load(vnode.value) if vnode.tag != "tag:yaml.org,2002:str" else vnode.value
        kind = _CONFIG_KEYS[key]
        try:
            if kind is bool:
                if not isinstance(value, bool):
                    raise ValueError
            elif kind is int:
                if isinstance(value, bool) or int(value) != value:
                    raise ValueError
                value = int(value)
            elif kind is float:
                if isinstance(value, bool):
                    raise ValueError
                value = float(value)
            else:
                value = str(value)
        except (TypeError, ValueError):
            raise CliError(f"{path}:{line}: {key} must be of type {kind.__name__}, got {vnode.value!r}",
                           EXIT_CONFIG) from None
        if key in _RANGES and not _RANGES[key][0](value):
            raise CliError(f"{path}:{line}: {key} = {value!r} {_RANGES[key][1]}", EXIT_CONFIG)
        out[key] = value
    return out


def _check_ranges(args):
    for key, (ok, msg) in _RANGES.items():
        v = getattr(args, key, None)
        if v is not None and not ok(v):
            raise CliError(f"--{key.replace('_', '-')} = {v!r} {msg}", EXIT_CONFIG)


# ---------------------------------------------------------------------------
# inputs

def load_input(shape=None, path=None, q=8):
    """Pixel set from a shape descriptor (config error when malformed) or a file (I/O error)."""
    if (shape is None) == (path is None):
        raise CliError("give exactly one of --shape or --input", EXIT_CONFIG)
    if shape is not None:
        try:
            return ingest(shape, q=q), {"shape": shape, "q": q}
        except (ParseError, DomainError) as exc:
            raise CliError(f"bad shape {shape!r}: {exc}", EXIT_CONFIG) from None
    p = Path(path)
    if not p.is_file():
        raise CliError(f"input file {path} not found", EXIT_IO)
    try:
        px = ingest(p)
    except (ParseError, DomainError, OSError) as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from None
    return px, {"input": str(path), "q": px.q}


def warped_pixels(fmap, px):
    """Pixel-centre membership of the inverse image: the raster of ``fmap(A)``."""
    centres = px.pixel_centres().reshape(-1, 2)
    return PixelSet(px.contains(fmap.inverse(centres)).reshape(px.bits.shape))


# ---------------------------------------------------------------------------
# stretch

def _stop_overrides(args):
    return {k: getattr(args, k) for k in ("eps1", "eps2", "eps3", "eps4", "max_depth")
            if getattr(args, k) is not None}


def cmd_stretch(args):
    px, source = load_input(args.shape, args.input, args.q)
    out = Path(args.out)
    overrides = _stop_overrides(args)
    try:
        config = StopConfig(eta=args.eta, gamma=args.gamma, gamma_prime=args.gamma_prime, q=px.q,
                            seed=args.seed, **overrides)
    except ConfigError as exc:
        raise CliError(f"invalid configuration: {exc}", EXIT_CONFIG) from None
    cfg = config.to_dict()
    cfg["min_gain"] = args.min_gain
    cfg["step_budget"] = step_budget(args.gamma, args.gamma_prime, args.min_gain)
    cfg["lipschitz_pairs"] = args.lipschitz_pairs
    if args.dry_run:
        summary = DensityTree(px).summary()
        _write(out / "metrics.json", dumps_metrics(_metrics("stretch", {
            "dry_run": True, "source": source, "config": cfg, "density_tree": summary})))
        print(f"dry run: measure {px.measure:.17g}, {summary['max_level']} levels; no map built")
        return EXIT_OK

    status, code, message = "ok", EXIT_OK, ""
    try:
        result = expand_to_target(px, args.gamma, args.gamma_prime, args.eta,
                                  min_gain=args.min_gain, lipschitz_pairs=args.lipschitz_pairs,
                                  seed=args.seed, **overrides)
    except PreconditionError as exc:
        raise CliError(f"precondition-failed: {exc}", EXIT_CHECK) from None
    except BudgetExhaustedError as exc:
        status, code, message = "budget-exhausted", EXIT_CHECK, str(exc)
        result = exc.partial
    except NoProgressError as exc:
        raise CliError(f"no-progress: {exc}", EXIT_CHECK) from None
    if result.lipschitz is None and result.stacks:
        from .verify import estimate_lipschitz
        result.lipschitz = estimate_lipschitz(result.map, n_pairs=args.lipschitz_pairs, seed=args.seed)
        result.c0_hat = result.lipschitz.constant

    fmap = result.map
    warped = warped_pixels(fmap, px)
    histogram = {}
    for row in result.trace:
        for k, v in row["stop_masses"].items():
            histogram[k] = histogram.get(k, 0.0) + v
    log_bound = result.steps * math.log1p(args.eta)
    c0 = result.c0_hat
    predictions = [row["measure_before"] + row["predicted_gain"] for row in result.trace]
    body = {
        "status": status, "message": message, "source": source, "config": cfg,
        "measures": {"input": px.measure, "target": 1.0 - args.gamma_prime,
                     "final_raster": result.pixels.measure, "warped": warped.measure,
                     "step_predictions": predictions},
        "steps": result.steps,
        "trace": result.trace,
        "stop_reason_histogram": histogram,
        "c0_hat": c0,
        "log_bound": log_bound,
        "c0_within_bound": bool(math.log(c0) <= log_bound + 1e-12),
        "lipschitz": result.lipschitz.to_dict() if result.lipschitz is not None else None,
    }
    meta = {"source": source, "eta": args.eta, "gamma": args.gamma, "gamma_prime": args.gamma_prime,
            "seed": args.seed, "lipschitz_pairs": args.lipschitz_pairs, "c0_hat": c0,
            "step_predictions": predictions, "final_raster_measure": result.pixels.measure,
            "warped_measure": warped.measure}
    _write(out / "map.stack", fmap.dumps(meta))
    try:
        write_pgm(out / "warped.pgm", warped.bits)
    except OSError as exc:
        raise CliError(f"cannot write {out / 'warped.pgm'}: {exc}", EXIT_IO) from None
    if args.svg:
        from .render import svg_lattice
        _write(out / "grid.svg", svg_lattice(fmap, title="warped lattice"))
    _write(out / "metrics.json", dumps_metrics(_metrics("stretch", body)))
    print(f"{status}: measure {px.measure:.6g} -> {result.pixels.measure:.6g} in {result.steps} "
          f"steps, C0_hat {c0:.6g}")
    if message:
        print(message, file=sys.stderr)
    return code


# ---------------------------------------------------------------------------
# verify

def cmd_verify(args):
    from .verify import (check_boundary_and_bijection, estimate_lipschitz,
                         estimate_pushforward_measure)

    path = Path(args.stack)
    if not path.is_file():
        raise CliError(f"map stack {path} not found", EXIT_IO)
    try:
        fmap = ComposedMap.load(path)
    except ParseError as exc:
        raise CliError(f"cannot parse {path}: {exc}", EXIT_IO) from None
    except (OSError, UnicodeDecodeError) as exc:
        raise CliError(f"cannot read {path}: {exc}", EXIT_IO) from None
    meta = fmap.meta
    source = meta.get("source", {})
    if args.shape is None and args.input is None:
        if "shape" in source:
            px, source = load_input(source["shape"], None, source.get("q", 8))
        elif "input" in source:
            px, source = load_input(None, source["input"])
        else:
            raise CliError("map stack records no input; pass --shape or --input", EXIT_CONFIG)
    else:
        px, source = load_input(args.shape, args.input, args.q)

    checks, details = {}, {}
    deltas = np.concatenate([lv.delta for s in fmap.stacks for lv in s.levels] or [np.zeros(0)])
    checks["delta_range"] = bool(np.all(np.abs(deltas) < 1.0))
    bij = check_boundary_and_bijection(fmap, seed=args.seed)
    checks["boundary"] = bij.checks["boundary"]
    checks["roundtrip"] = bij.checks["roundtrip"]
    details["bijection"] = bij.to_dict()

    # replay the chain: exact per-step predictions and a Monte Carlo cross-check
    cur = px
    preds, mc_ok, mc = [], True, []
    for k, stack in enumerate(fmap.stacks):
        rep = estimate_pushforward_measure(stack, cur, n_samples=args.mc_samples, seed=args.seed + k)
        preds.append(rep.predicted)
        ok = rep.within(rep.predicted, 4.0)
        mc_ok &= ok
        mc.append({"step": k + 1, "estimate": rep.estimate, "stderr": rep.stderr,
                   "predicted": rep.predicted, "ok": ok})
        cur = rasterize_image(stack, cur)
    checks["pushforward_mc"] = bool(mc_ok)
    details["pushforward"] = mc
    stored = meta.get("step_predictions")
    if stored is not None:
        checks["step_predictions"] = bool(
            len(stored) == len(preds) and all(abs(a - b) <= 1e-12 for a, b in zip(stored, preds)))
    if "final_raster_measure" in meta:
        checks["final_raster"] = bool(cur.measure == meta["final_raster_measure"])
    warped = warped_pixels(fmap, px)
    if "warped_measure" in meta:
        checks["warped_measure"] = bool(warped.measure == meta["warped_measure"])
    pairs = args.pairs or int(meta.get("lipschitz_pairs", 20_000))
    lip = estimate_lipschitz(fmap, n_pairs=pairs, seed=int(meta.get("seed", args.seed)))
    details["lipschitz"] = lip.to_dict()
    eta = meta.get("eta")
    if eta is not None:
        checks["lipschitz_bound"] = bool(
            math.log(lip.constant) <= len(fmap.stacks) * math.log1p(eta) + 1e-12)
    if "c0_hat" in meta:
        checks["lipschitz_reproduced"] = bool(abs(lip.constant - meta["c0_hat"]) <= 1e-9 * meta["c0_hat"])
    failing = sorted(k for k, v in checks.items() if not v)
    body = {"stack": str(path), "source": source, "steps": len(fmap.stacks), "checks": checks,
            "failing": failing, "passed": not failing, "details": details,
            "measures": {"input": px.measure, "replayed_raster": cur.measure, "warped": warped.measure}}
    _write(Path(args.out) / "metrics.json", dumps_metrics(_metrics("verify", body)))
    if failing:
        print("FAILED: " + ", ".join(failing))
        return EXIT_CHECK
    print(f"ok: {len(checks)} checks passed")
    return EXIT_OK


# ---------------------------------------------------------------------------
# poisson

CSV_FIELDS = ("seed", "k_x", "k_y", "precondition", "event", "event_frequency", "valid", "M", "D", "C",
              "D_bound", "C_bound", "steps", "measure_a", "measure_image", "conditional_valid",
              "conditional_D", "conditional_C")


def _fmt(v):
    if isinstance(v, bool) or v is None:
        return "" if v is None else str(v).lower()
    if isinstance(v, float):
        return format(v, ".17g")
    return str(v)


def cmd_poisson(args):
    from .poisson import solve_delta_prime, sweep

    try:
        dp = solve_delta_prime(args.kappa, args.eps)
        seeds = range(args.seed_start, args.seed_start + args.seeds)
        rows = sweep(args.n, seeds, delta=args.delta, eps=args.eps, kappa=args.kappa,
                     intensity_x=args.intensity_x, intensity_y=args.intensity_y, eta=args.eta,
                     q=args.q, n_pairs=args.pairs, conditional=not args.no_conditional)
    except ConfigError as exc:
        raise CliError(f"invalid configuration: {exc}", EXIT_CONFIG) from None
    out = Path(args.out)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_FIELDS, lineterminator="\n")
    writer.writeheader()
    events, done, bad_pre, invalid = 0, 0, [], []
    for row in rows:
        rec = {"seed": row["seed"], "k_x": row["k_x"], "k_y": row["k_y"],
               "precondition": row["precondition"]}
        if not row["precondition"]:
            bad_pre.append((row["seed"], row["k_x"]))
        else:
            rep = row["report"]
            done += 1
            events += rep.event
            rec.update(event=rep.event, valid=rep.valid if rep.event else None, M=rep.M,
                       D=rep.D if rep.event else None, C=rep.C if rep.event else None,
                       D_bound=rep.D_bound, C_bound=rep.C_bound, steps=rep.steps,
                       measure_a=rep.measure_a, measure_image=rep.measure_image)
            if rep.event and not rep.valid:
                invalid.append(row["seed"])
            cond = row.get("conditional")
            if cond is not None:
                rec.update(conditional_valid=cond.valid, conditional_D=cond.D, conditional_C=cond.C)
                if not cond.valid:
                    invalid.append(row["seed"])
            _write(out / "reports" / f"seed_{row['seed']:06d}.json", dumps_metrics(_metrics(
                "poisson-run", {"seed": row["seed"], "report": rep.to_dict(),
                                "conditional": cond.to_dict() if cond is not None else None})))
        rec["event_frequency"] = events / done if done else None
        writer.writerow({k: _fmt(rec.get(k)) for k in CSV_FIELDS})
    _write(out / "poisson.csv", buf.getvalue())
    summary = {"n": args.n, "seeds": args.seeds, "seed_start": args.seed_start, "kappa": args.kappa,
               "eps": args.eps, "delta": args.delta, "delta_prime": dp,
               "intensity_x": args.intensity_x, "intensity_y": args.intensity_y, "eta": args.eta,
               "runs": done, "event_count": events, "event_frequency": events / done if done else None,
               "precondition_failures": [{"seed": s, "k_x": k} for s, k in bad_pre],
               "invalid_seeds": sorted(set(invalid))}
    _write(out / "metrics.json", dumps_metrics(_metrics("poisson", summary)))
    if bad_pre:
        for s, k in bad_pre:
            print(f"precondition-failed: seed {s}: k_X(n) = {k} < delta n^2 = {args.delta * args.n ** 2:g}",
                  file=sys.stderr)
        return EXIT_CHECK
    if invalid:
        print(f"FAILED: invalid embeddings for seeds {sorted(set(invalid))}")
        return EXIT_CHECK
    print(f"ok: {done} runs, event frequency {summary['event_frequency']:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# psi-demo

def cmd_psi_demo(args):
    from .render import svg_fibres, svg_level_lines, svg_psi

    out = Path(args.out)
    try:
        deltas = [float(d) for d in args.deltas.split(",") if d.strip()]
    except ValueError:
        raise CliError(f"--deltas must be a comma-separated list of numbers, got {args.deltas!r}",
                       EXIT_CONFIG) from None
    if not deltas or any(abs(d) >= 1 for d in deltas):
        raise CliError("--deltas entries must satisfy |delta| < 1", EXIT_CONFIG)
    _write(out / "level_lines.svg", svg_level_lines())
    for d in deltas:
        tag = format(d, "g")
        _write(out / f"fibres_{tag}.svg", svg_fibres(d))
        _write(out / f"psi_{tag}.svg", svg_psi(d, lines=args.lines))
    print(f"wrote {1 + 2 * len(deltas)} figures to {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser

def build_parser():
    p = argparse.ArgumentParser(prog="bilipexpand", description=__doc__.split("\n\n")[0])
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("stretch", help="expand a set by iterated stretch steps")
    src = s.add_mutually_exclusive_group()
    src.add_argument("--shape", help="shape descriptor, e.g. 'disk 0.5 0.5 0.3'")
    src.add_argument("--input", help="PGM or ASCII 0/1 grid")
    s.add_argument("--config", help="YAML file of option values (command line wins)")
    s.add_argument("--q", type=int, default=8, help="resolution exponent for shapes")
    s.add_argument("--gamma", type=float, default=0.2)
    s.add_argument("--gamma-prime", type=float, default=0.2)
    s.add_argument("--eta", type=float, default=0.5)
    s.add_argument("--min-gain", type=float, default=0.005, help="sets the step budget")
    for k in ("eps1", "eps2", "eps3", "eps4"):
        s.add_argument(f"--{k}", type=float)
    s.add_argument("--max-depth", type=int)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--lipschitz-pairs", type=int, default=20_000)
    s.add_argument("--out", default=".")
    s.add_argument("--svg", action="store_true", help="also write grid.svg")
    s.add_argument("--dry-run", action="store_true", help="density-tree summary only")
    s.set_defaults(func=cmd_stretch)

    v = sub.add_parser("verify", help="re-check a stored map stack")
    v.add_argument("stack")
    src = v.add_mutually_exclusive_group()
    src.add_argument("--shape")
    src.add_argument("--input")
    v.add_argument("--config")
    v.add_argument("--q", type=int, default=8)
    v.add_argument("--seed", type=int, default=0)
    v.add_argument("--pairs", type=int, help="Lipschitz pairs (default: as recorded)")
    v.add_argument("--mc-samples", type=int, default=20_000)
    v.add_argument("--out", default=".")
    v.set_defaults(func=cmd_verify)

    po = sub.add_parser("poisson", help="seed sweep of the Poisson embedding")
    po.add_argument("--config")
    po.add_argument("--n", type=int, default=6)
    po.add_argument("--seeds", type=int, default=10)
    po.add_argument("--seed-start", type=int, default=0)
    po.add_argument("--intensity-x", type=float, default=1.0)
    po.add_argument("--intensity-y", type=float, default=10.0)
    po.add_argument("--delta", type=float, default=0.3)
    po.add_argument("--eps", type=float, default=7.0)
    po.add_argument("--kappa", type=float, default=0.5)
    po.add_argument("--eta", type=float, default=16.0)
    po.add_argument("--q", type=int, default=8)
    po.add_argument("--pairs", type=int, default=10_000)
    po.add_argument("--no-conditional", action="store_true",
                    help="skip the extra run with Y drawn given the event")
    po.add_argument("--out", default=".")
    po.set_defaults(func=cmd_poisson)

    d = sub.add_parser("psi-demo", help="SVG figures of the stretch map")
    d.add_argument("--deltas", default="0.1,0.3,0.5,-0.5")
    d.add_argument("--lines", type=int, default=16)
    d.add_argument("--out", default=".")
    d.set_defaults(func=cmd_psi_demo)
    return p


def _parse(parser, argv):
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        values = load_config(args.config)
        sub = parser._subparsers._group_actions[0].choices[args.command]
        known = {a.dest for a in sub._actions}
        stray = sorted(set(values) - known)
        if stray:
            raise CliError(f"{args.config}: keys not used by {args.command}: {', '.join(stray)}",
                           EXIT_CONFIG)
        if {"shape", "input"} <= set(values):
            raise CliError(f"{args.config}: give only one of shape and input", EXIT_CONFIG)
        if getattr(args, "shape", None) or getattr(args, "input", None):
            values.pop("shape", None)
            values.pop("input", None)
        sub.set_defaults(**values)
        args = parser.parse_args(argv)
    _check_ranges(args)
    return args


def main(argv=None):
    parser = build_parser()
    try:
        args = _parse(parser, argv)
        return args.func(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
