"""Command-line entry point.

    strata run --config cfg.json --out runs/a
    strata benchmark --config cfg.json --out runs/bench
    strata render --design "10 6 16 0.8 1 0 0.35 0.6" --knots 1 --out x0.svg
    strata report --dir runs/a

Exit codes: 0 success, 2 input/schema error, 3 infeasible design.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import design_space as ds
from .export import polygon_json, to_svg
from .reporting import OutputLocked, RecordError, build_report, execute_benchmark, execute_run

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_INFEASIBLE = 3

log = logging.getLogger("strata")


def _load_config(path):
    cfg = config_mod.load(path)
    cfg.check_x0()
    return cfg


def _guarded(fn):
    def wrapper(args):
        try:
            return fn(args)
        except config_mod.ConfigError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
        except (ds.OutOfBoundsError, ds.InfeasibleGeometryError) as exc:
            print(f"infeasible design: {exc}", file=sys.stderr)
            return EXIT_INFEASIBLE
        except (ds.DesignError, RecordError, OutputLocked) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return EXIT_INPUT
    return wrapper


@_guarded
def cmd_run(args) -> int:
    cfg = _load_config(args.config)
    out = Path(args.out or cfg.output_dir)
    meta = execute_run(cfg, out)
    final = meta.final_step
    print(f"{out}: {meta.total_cost} evaluations, stop: {meta.stop_reason}, "
          f"final L={final.L} max {final.max_db:.3f} dB, footprint {final.footprint:.2f} mm2")
    return EXIT_OK


@_guarded
def cmd_benchmark(args) -> int:
    cfg = _load_config(args.config)
    out = Path(args.out or cfg.output_dir)
    execute_benchmark(cfg, out)
    print((out / "benchmark.md").read_text())
    return EXIT_OK


def parse_design(text: str) -> np.ndarray:
    path = Path(text)
    if path.is_file():
        text = path.read_text()
        try:
            raw = json.loads(text)
        except json.JSONDecodeError:
            raw = None
        if isinstance(raw, dict):
            raw = raw.get("x", raw.get("final", {}).get("x") if isinstance(raw.get("final"), dict) else None)
        if isinstance(raw, list):
            return np.asarray(raw, dtype=float)
    try:
        return np.array([float(t) for t in text.replace(",", " ").replace("[", " ").replace("]", " ").split()])
    except ValueError as exc:
        raise config_mod.ConfigError(f"cannot parse design vector: {exc}") from exc


@_guarded
def cmd_render(args) -> int:
    x = parse_design(args.design)
    L = args.knots
    if x.size != ds.dimension(L):
        raise config_mod.ConfigError(f"design has {x.size} entries; L={L} needs 2L+6 = {ds.dimension(L)}")
    geom = ds.build_geometry(x, args.samples)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(to_svg(geom, f"design with L={L} knots"))
    out.with_suffix(".json").write_text(polygon_json(geom) + "\n")
    f = geom.features
    print(f"{out}: footprint {geom.params.X * geom.params.Y:.2f} mm2, radiator perimeter {f['perimeter']:.3f} mm")
    return EXIT_OK


@_guarded
def cmd_report(args) -> int:
    build_report(args.dir)
    print(f"{Path(args.dir) / 'report.md'}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="strata", description=__doc__.split("\n")[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="stratified optimization on the mock evaluator")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("benchmark", help="stratified vs direct trust-region comparison table")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_benchmark)

    p = sub.add_parser("render", help="write SVG + polygon JSON for a design")
    p.add_argument("--design", required=True, help="file (JSON list, {'x': [...]} or numbers) or inline vector")
    p.add_argument("--knots", type=int, required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--samples", type=int, default=512)
    p.set_defaults(func=cmd_render)

    p = sub.add_parser("report", help="summarize a completed run directory")
    p.add_argument("--dir", required=True)
    p.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_INPUT if exc.code else EXIT_OK
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
