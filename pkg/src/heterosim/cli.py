"""Command-line entry point: run, batch, evolve, metrics."""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from .config import load_scenario
from .engine import run
from .errors import HeterosimError, NonFiniteError
from .metrics import summarize_log

log = logging.getLogger("heterosim")

BATCH_COLUMNS = ("seed", "kind", "t_final", "coverage_fraction", "connected_fraction", "sinr_ok_fraction",
                 "tags_collected", "tags_per_hour", "terminal_event")


def out_dir(arg):
    return Path(os.environ.get("HETEROSIM_OUT") or arg or "out")


def parse_seeds(text):
    """``a..b`` (inclusive) or a comma list."""
    try:
        if ".." in text:
            a, b = text.split("..", 1)
            a, b = int(a), int(b)
            if b < a:
                raise ValueError
            return list(range(a, b + 1))
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"bad seed range {text!r}; use a..b or a,b,c") from None


def _stem(cfg):
    return f"{cfg.name}_seed{cfg.seed}"


def _run_one(path, seed, out):
    cfg = load_scenario(path)
    if seed is not None:
        cfg = cfg.with_seed(seed)
    try:
        mlog = run(cfg)
    except NonFiniteError as exc:
        dump = getattr(exc, "dump", None)
        if dump is not None:
            out.mkdir(parents=True, exist_ok=True)
            path = out / f"{_stem(cfg)}.dump.json"
            path.write_text(json.dumps(dump, indent=2) + "\n")
            exc.args = (f"{exc.args[0]}; state dumped to {path}",)
        raise
    mlog.write(out, _stem(cfg))
    return mlog.summary


def _batch_row(s):
    term = s.get("terminal_event")
    return [s.get("seed"), s.get("kind"), s.get("t_final"), s.get("coverage_fraction", ""),
            s.get("connected_fraction", ""), s.get("sinr_ok_fraction", ""), s.get("tags_collected", ""),
            s.get("tags_per_hour", ""), term["name"] if term else ""]


def cmd_run(args):
    out = out_dir(args.out)
    summary = _run_one(args.config, args.seed, out)
    print(json.dumps(summary, sort_keys=True))
    return 0


def cmd_batch(args):
    from .metrics import fmt

    out = out_dir(args.out)
    seeds = args.seeds
    if args.parallel and len(seeds) > 1:
        workers = args.workers or os.cpu_count() or 1
        with ProcessPoolExecutor(max_workers=workers) as ex:
            summaries = list(ex.map(_run_one, [args.config] * len(seeds), seeds, [out] * len(seeds)))
    else:
        summaries = [_run_one(args.config, s, out) for s in seeds]
    lines = [",".join(BATCH_COLUMNS)]
    for s in summaries:
        lines.append(",".join(fmt(v) if v is not None else "" for v in _batch_row(s)))
    text = "\n".join(lines) + "\n"
    cfg = load_scenario(args.config)
    out.mkdir(parents=True, exist_ok=True)
    (out / f"{cfg.name}_batch.csv").write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_evolve(args):
    from .evolution import ga_run, load_ga_config, save_result

    try:
        data = json.loads(Path(args.config).read_text())
    except json.JSONDecodeError as exc:
        raise HeterosimError(f"{args.config}:{exc.lineno}:{exc.colno}: JSON parse error: {exc.msg}") from exc
    try:
        config, settings, name = load_ga_config(data)
    except (TypeError, ValueError) as exc:
        raise HeterosimError(f"{args.config}: {exc}") from exc
    best, history = ga_run(config, settings)
    dest = out_dir(args.out) / name
    result = save_result(dest, best, history, config)
    print(json.dumps({"output": str(dest), "best_fitness": result["best_fitness"]}, sort_keys=True))
    return 0


def cmd_metrics(args):
    summary = summarize_log(args.log)
    if args.summary:
        print(json.dumps(summary, sort_keys=True, indent=2))
    else:
        print(Path(args.log).read_text(), end="")
    return 0


def build_parser():
    p = argparse.ArgumentParser(prog="heterosim", description="Heterogeneous multi-robot coordination simulator")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run one scenario")
    r.add_argument("config")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default=None, help="output directory (HETEROSIM_OUT overrides)")
    r.set_defaults(func=cmd_run)

    b = sub.add_parser("batch", help="run one scenario over a seed range")
    b.add_argument("config")
    b.add_argument("--seeds", type=parse_seeds, required=True, help="a..b inclusive, or a,b,c")
    b.add_argument("--parallel", action="store_true")
    b.add_argument("--workers", type=int, default=None)
    b.add_argument("--out", default=None)
    b.set_defaults(func=cmd_batch)

    e = sub.add_parser("evolve", help="tune the forager genome with the GA")
    e.add_argument("config")
    e.add_argument("--out", default=None)
    e.set_defaults(func=cmd_evolve)

    m = sub.add_parser("metrics", help="inspect a step log")
    m.add_argument("log")
    m.add_argument("--summary", action="store_true")
    m.set_defaults(func=cmd_metrics)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except HeterosimError as exc:
        print(f"heterosim: error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", 1)
    except FileNotFoundError as exc:
        print(f"heterosim: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
