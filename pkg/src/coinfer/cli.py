"""Command-line front end: ``coinfer {fit,rd,plan,verify-prop1}``.

Exit codes: 0 for any analysis result (an infeasible plan included), 1 for
input, parse or argument problems, 2 for usage errors (argparse), 3 when a
checked invariant is breached.
"""
from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import logging
import os
import sys
from typing import Any, Sequence

import numpy as np

from coinfer import __version__
from coinfer import dnn, planner
from coinfer import rate_distortion as rd
from coinfer import weight_stats as ws
from coinfer.errors import CoinferError, DomainError, SchemaError

log = logging.getLogger("coinfer")

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_BREACH = 3


class InvariantBreach(CoinferError):
    pass


def _fmt(x: Any) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.17g}"
    return str(x)


def _csv(header: Sequence[str], rows: Sequence[Sequence[Any]]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_fmt(v) for v in r])
    return buf.getvalue()


def _json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _float_list(text: str) -> list[float]:
    """Comma-separated values, or ``lo:hi:n`` for n evenly spaced points."""
    if text.count(":") == 2:
        lo, hi, n = text.split(":")
        return [float(v) for v in np.linspace(float(lo), float(hi), int(n))]
    return [float(v) for v in text.split(",") if v.strip()]


def _int_list(text: str) -> list[int]:
    out: list[int] = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-")
            out.extend(range(int(lo), int(hi) + 1))
        elif part:
            out.append(int(part))
    return out


class Run:
    """Collects outputs of one invocation and writes them plus a manifest."""

    def __init__(self, args: argparse.Namespace, config: dict[str, Any]):
        self.args = args
        self.config = config
        self.outputs: dict[str, str] = {}

    @property
    def config_hash(self) -> str:
        blob = json.dumps({"command": self.args.command, "seed": self.args.seed, "config": self.config},
                          sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def add(self, name: str, text: str) -> None:
        self.outputs[name] = text

    def finish(self, primary: str) -> None:
        out_dir = self.args.out
        if out_dir is None:
            sys.stdout.write(self.outputs[primary])
            return
        os.makedirs(out_dir, exist_ok=True)
        for name, text in self.outputs.items():
            with open(os.path.join(out_dir, name), "w", encoding="utf-8", newline="") as fh:
                fh.write(text)
        manifest = {
            "command": self.args.command,
            "config": self.config,
            "config_hash": self.config_hash,
            "seed": self.args.seed,
            "tool_version": __version__,
            "outputs": sorted(self.outputs),
        }
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            fh.write(_json(manifest))


def _file_digest(path: str) -> str:
    with open(path, "rb") as fh:
        return hashlib.sha256(fh.read()).hexdigest()


# --- fit ---

def cmd_fit(args: argparse.Namespace) -> int:
    fmt = args.input_format or ws.format_for_path(args.weights)
    try:
        with open(args.weights, "rb") as fh:
            data = fh.read()
        sample = ws.load_magnitudes(data, fmt)
    except (OSError, CoinferError) as exc:
        raise CoinferError(f"{args.weights}: {exc}") from exc
    stats = ws.fit_exponential(sample)
    centers, density = ws.histogram(sample, args.bins)
    run = Run(args, {"weights_sha256": _file_digest(args.weights), "format": fmt, "bins": args.bins})
    run.add("stats.json", _json(stats.to_dict()))
    run.add("histogram.csv", ws.histogram_csv(centers, density))
    run.finish("histogram.csv" if args.format == "csv" else "stats.json")
    if args.out is not None:
        print(f"lambda = {stats.lam:.17g}")
    return EXIT_OK


# --- rd ---

def cmd_rd(args: argparse.Namespace) -> int:
    if not args.r_min > 0:
        raise DomainError("--r-min must be > 0: the upper bound has a pole at zero rate")
    if not args.r_max > args.r_min:
        raise DomainError("--r-max must exceed --r-min")
    if args.points < 2:
        raise DomainError("--points must be at least 2")
    if args.ba_config is not None:
        with open(args.ba_config, encoding="utf-8") as fh:
            ba_cfg = rd.BaConfig.from_json(fh.read())
    else:
        ba_cfg = rd.BaConfig()
    rates = np.linspace(args.r_min, args.r_max, args.points)
    curves = [rd.bound_curve(args.lam, rates, rd.Provenance.LOWER_BOUND),
              rd.bound_curve(args.lam, rates, rd.Provenance.UPPER_BOUND)]
    if args.ba:
        curve = rd.ba_distortion_rate(args.lam, ba_cfg)
        if curve.dropped:
            log.warning("dropped %d Blahut-Arimoto points that did not converge", curve.dropped)
        curves.append(curve)
    config = {"lambda": args.lam, "r_min": args.r_min, "r_max": args.r_max, "points": args.points,
              "ba": args.ba, "ba_config": dataclasses.asdict(ba_cfg) if args.ba else None}
    run = Run(args, config)
    run.add("curves.csv", rd.curves_to_csv(curves))
    run.finish("curves.csv")
    return EXIT_OK


# --- plan ---

SWEEP_HEADER = ("t0", "e0", "b_hat", "f", "f_tilde", "delay", "energy", "gap", "status")


def _load_problem(path: str) -> planner.PlanProblem:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise SchemaError([f"{path}: invalid JSON at line {exc.lineno} column {exc.colno}: {exc.msg}"]) from exc
    except OSError as exc:
        raise CoinferError(f"{path}: {exc.strerror}") from exc
    return planner.problem_from_dict(doc)


def cmd_plan(args: argparse.Namespace) -> int:
    problem = _load_problem(args.problem)
    config = {"problem": planner.problem_to_dict(problem), "method": args.method,
              "t0_grid": args.t0_grid, "e0_grid": args.e0_grid}
    run = Run(args, config)
    if args.t0_grid is None and args.e0_grid is None:
        if args.method == "sca":
            plan, trace = planner.sca_plan(problem)
            doc = {"plan": plan.to_dict(), "trace": trace.to_dict()}
        else:
            plan = planner.plan_with(args.method, problem, seed=args.seed)
            doc = {"plan": plan.to_dict()}
        log.info("status %s, b_hat %s", plan.status.value, plan.b_hat)
        run.add("plan.json", _json(doc))
        run.finish("plan.json")
        return EXIT_OK
    t0s = _float_list(args.t0_grid) if args.t0_grid else [problem.t0]
    e0s = _float_list(args.e0_grid) if args.e0_grid else [problem.e0]
    rows = []
    for t0 in t0s:
        for e0 in e0s:
            p = planner.plan_with(args.method, problem.with_budgets(t0, e0), seed=args.seed)
            rows.append((t0, e0, p.b_hat, p.f, p.f_tilde, p.delay, p.energy, p.objective_gap,
                         p.status.value))
    run.add("sweep.csv", _csv(SWEEP_HEADER, rows))
    run.finish("sweep.csv")
    return EXIT_OK


# --- verify-prop1 ---

VERIFY_HEADER = ("bit_width", "scheme", "measured", "prop1_bound", "surrogate_H_bound")


def cmd_verify(args: argparse.Namespace) -> int:
    rng = np.random.default_rng(args.seed)
    if args.model is not None:
        model = dnn.load_model(args.model)
        source: dict[str, Any] = {"model_sha256": _file_digest(args.model)}
    else:
        dims = dnn.fcdnn16_dims() if args.random == "fcdnn16" else _int_list(args.random)
        model = dnn.random_model(dims, rng, args.activation)
        source = {"random_dims": dims, "activation": args.activation}
    cfg = dnn.VerifyConfig(bit_widths=_int_list(args.bits), schemes=args.scheme.split(","),
                           n_inputs=args.inputs, seed=int(rng.integers(2**63)))
    rows = dnn.verify_prop1(model, cfg)
    config = {**source, "bits": list(cfg.bit_widths), "schemes": list(cfg.schemes), "inputs": cfg.n_inputs}
    run = Run(args, config)
    if args.format == "json":
        run.add("verify.json", _json([vars(r) for r in rows]))
        run.finish("verify.json")
    else:
        run.add("verify.csv", _csv(VERIFY_HEADER, [
            (r.bit_width, r.scheme, r.measured, r.prop1_bound, r.surrogate_h_bound) for r in rows]))
        run.finish("verify.csv")
    bad = [r for r in rows if not r.holds]
    if bad:
        raise InvariantBreach(
            f"measured distortion exceeds the bound at {[(r.scheme, r.bit_width) for r in bad]}")
    return EXIT_OK


# --- argument parsing ---

def _global_flags(p: argparse.ArgumentParser, suppress: bool) -> None:
    d = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    p.add_argument("--seed", type=int, default=d(0), help="seed for every random draw (default 0)")
    p.add_argument("--out", default=d(None), help="write outputs and manifest.json to this directory")
    p.add_argument("--format", choices=("json", "csv"), default=d(None),
                   help="format of the primary output printed to stdout")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="coinfer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"coinfer {__version__}")
    _global_flags(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="fit the exponential magnitude model to a weight file")
    _global_flags(p, suppress=True)
    p.add_argument("weights", help=".f32 (raw little-endian float32) or .csv file")
    p.add_argument("--input-format", choices=ws.FORMATS)
    p.add_argument("--bins", type=int, default=100)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("rd", help="distortion-rate bounds and the Blahut-Arimoto curve")
    _global_flags(p, suppress=True)
    p.add_argument("--lambda", dest="lam", type=float, required=True)
    p.add_argument("--r-min", type=float, default=0.5)
    p.add_argument("--r-max", type=float, default=8.0)
    p.add_argument("--points", type=int, default=40)
    p.add_argument("--ba", action="store_true", help="add Blahut-Arimoto rows")
    p.add_argument("--ba-config", help="JSON file with Blahut-Arimoto settings")
    p.set_defaults(func=cmd_rd)

    p = sub.add_parser("plan", help="choose bit-width and clock frequencies")
    _global_flags(p, suppress=True)
    p.add_argument("problem", help="problem JSON document")
    p.add_argument("--method", choices=planner.METHODS, default="sca")
    p.add_argument("--t0-grid", help="delay budgets: a,b,c or lo:hi:n")
    p.add_argument("--e0-grid", help="energy budgets: a,b,c or lo:hi:n")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("verify-prop1", help="check measured output distortion against the layerwise bound")
    _global_flags(p, suppress=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model", help="model manifest JSON")
    src.add_argument("--random", help="layer widths like 16,32,8, or 'fcdnn16'")
    p.add_argument("--activation", choices=[a.value for a in dnn.Activation], default="relu")
    p.add_argument("--scheme", default="uniform", help="uniform, pot-log, or both comma-separated")
    p.add_argument("--bits", default="2-8", help="bit widths like 2-8 or 3,5")
    p.add_argument("--inputs", type=int, default=32)
    p.set_defaults(func=cmd_verify)
    return parser


def _configure_logging() -> None:
    level = os.environ.get("COINFER_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s")


def main(argv: Sequence[str] | None = None) -> int:
    _configure_logging()
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except InvariantBreach as exc:
        print(f"coinfer: invariant breach: {exc}", file=sys.stderr)
        return EXIT_BREACH
    except SchemaError as exc:
        print("coinfer: schema errors:", file=sys.stderr)
        for problem in exc.problems:
            print(f"  {problem}", file=sys.stderr)
        return EXIT_INPUT
    except (CoinferError, OSError, ValueError) as exc:
        print(f"coinfer: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
