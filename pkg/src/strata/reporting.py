"""Run orchestration and on-disk artifacts (JSONL log, CSV, JSON, Markdown)."""
from __future__ import annotations

import csv
import io
import json
import logging
import os
from contextlib import contextmanager
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import design_space as ds
from .config import RunConfig, dumps
from .evaluation import Evaluator, MockAntenna
from .export import polygon_json, to_svg
from .objective import ModeSwitchingObjective, ObjectiveState, is_feasible, max_in_band
from .stratified import DesignProblem, MetaResult, lift_design, stratified_optimize
from .trust_region import OptResult, tr_optimize

log = logging.getLogger(__name__)

THREADS_ENV = "STRATA_TR_THREADS"
LOCK_NAME = ".strata.lock"
CONVERGENCE_HEADER = ["eval_index", "best_objective", "max_in_band_db", "footprint_mm2", "alpha", "delta"]
RUN_FILES = ("run.jsonl", "convergence.csv", "meta.json", "final_geometry.svg", "final_geometry.json")


class RecordError(RuntimeError):
    """Missing or unreadable run records."""


class OutputLocked(RuntimeError):
    pass


def env_threads() -> int:
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        return max(1, int(raw))
    except ValueError:
        log.warning("ignoring non-integer %s=%r", THREADS_ENV, raw)
        return 1


@contextmanager
def output_lock(out_dir: Path):
    out_dir.mkdir(parents=True, exist_ok=True)
    lock = out_dir / LOCK_NAME
    try:
        fd = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise OutputLocked(f"{out_dir} is in use by another run (remove {lock} if stale)") from None
    try:
        os.write(fd, str(os.getpid()).encode())
        os.close(fd)
        yield
    finally:
        lock.unlink(missing_ok=True)


def _num(v) -> str:
    return "" if v is None else f"{float(v):.10g}"


class EventLog:
    def __init__(self):
        self.events: list[dict] = []

    def __call__(self, event: dict) -> None:
        self.events.append(event)

    def dumps(self) -> str:
        return "".join(json.dumps(e) + "\n" for e in self.events)


def make_evaluator(cfg: RunConfig, sink=None, threads: int | None = None) -> Evaluator:
    model = MockAntenna(cfg.grid, cfg.mock, cfg.geometry_samples)
    return Evaluator(
        model, cfg.grid,
        threads=env_threads() if threads is None else threads,
        sink=sink,
        max_db=lambda r: float(max_in_band(r.values, r.freqs, cfg.objective)),
    )


def _design_summary(x, evaluator: Evaluator, cfg: RunConfig) -> dict:
    x = np.asarray(x, dtype=float)
    resp = evaluator.cached(x) or evaluator.evaluate(x)
    p = ds.derive_params(x[:ds.N_CORE])
    mx = float(max_in_band(resp.values, resp.freqs, cfg.objective))
    return {
        "L": ds.knot_count(x),
        "x": x.tolist(),
        "max_db": mx,
        "footprint": ds.footprint(p, cfg.objective.footprint_convention),
        "feasible": is_feasible(mx, cfg.objective),
        "response": {"freq_ghz": resp.freqs.tolist(), "s11_db": resp.values.tolist()},
    }


def convergence_rows(meta: MetaResult, evaluator: Evaluator, cfg: RunConfig) -> list[list]:
    rows, end_total = [], 0
    for step in meta.per_step:
        problem = DesignProblem(step.L, cfg.objective.footprint_convention)
        objective = ModeSwitchingObjective(problem.area, cfg.objective)
        end_total += step.cost
        last = None
        for h in step.result.history:
            resp = evaluator.cached(problem.to_design(h.u))
            last = [h.evals_total, h.objective, float(objective.max_db(resp.values, resp.freqs)),
                    float(problem.area(h.u)), h.alpha, h.delta]
            rows.append(last)
        if last is not None and last[0] < end_total:
            rows.append([end_total] + last[1:])
    return rows


def convergence_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CONVERGENCE_HEADER)
    for ev, obj, mx, area, alpha, delta in rows:
        w.writerow([ev, _num(obj), _num(mx), _num(area), "" if alpha is None else alpha, _num(delta)])
    return buf.getvalue()


def run_stratified(cfg: RunConfig, sink=None, threads: int | None = None):
    evaluator = make_evaluator(cfg, sink, threads)
    meta = stratified_optimize(
        cfg.schedule, cfg.x0, evaluator, cfg.objective, cfg.tr_config,
        max_total_evals=cfg.max_total_evals, sink=sink,
    )
    return meta, evaluator


def execute_run(cfg: RunConfig, out_dir, threads: int | None = None) -> MetaResult:
    out_dir = Path(out_dir)
    with output_lock(out_dir):
        events = EventLog()
        events({"event": "config", "config": cfg.to_dict()})
        meta, evaluator = run_stratified(cfg, events, threads)
        events({"event": "run_end", "evals_total": evaluator.ledger.total, "stop_reason": meta.stop_reason})
        rows = convergence_rows(meta, evaluator, cfg)

        summary = meta.summary()
        summary.update({
            "x0": [float(v) for v in cfg.x0],
            "final": _design_summary(meta.final_x, evaluator, cfg),
            "ledger": evaluator.ledger.snapshot(),
            "transitions": [
                {"eval_index": e, "from": a, "to": b, "A1": A1} for e, a, b, A1 in meta.state.transition_log
            ],
            "config_file": "config.json",
        })
        geom = ds.build_geometry(meta.final_x, cfg.geometry_samples)

        (out_dir / "config.json").write_text(dumps(cfg) + "\n")
        (out_dir / "run.jsonl").write_text(events.dumps())
        (out_dir / "convergence.csv").write_text(convergence_csv(rows))
        (out_dir / "meta.json").write_text(json.dumps(summary, indent=2) + "\n")
        (out_dir / "final_geometry.svg").write_text(to_svg(geom, "optimized design"))
        (out_dir / "final_geometry.json").write_text(polygon_json(geom) + "\n")
    return meta


# -- benchmark ---------------------------------------------------------------------

@dataclass
class BenchmarkRow:
    method: str
    costs: list
    total: int
    size: float
    max_db: float
    x0: list
    x_final: list

    def violates(self, cfg) -> bool:
        return not is_feasible(self.max_db, cfg)


def run_direct(cfg: RunConfig, threads: int | None = None) -> tuple[OptResult, np.ndarray, Evaluator]:
    """Single TR run at the final knot count with the mode frozen at 1."""
    L = cfg.schedule.knot_counts[-1]
    x_start = cfg.x0 if ds.knot_count(cfg.x0) == L else lift_design(cfg.x0, L)
    problem = DesignProblem(L, cfg.objective.footprint_convention)
    u0 = problem.to_unit(x_start)
    state = ObjectiveState(alpha=1, A1=float(problem.area(u0)))
    objective = ModeSwitchingObjective(problem.area, cfg.objective, state, adaptive=False)
    evaluator = make_evaluator(cfg, threads=threads)
    with evaluator.in_phase("direct"):
        result = tr_optimize(evaluator, objective, u0,
                             replace(cfg.tr_config, max_true_evals=cfg.max_total_evals),
                             to_input=problem.to_design)
    return result, x_start, evaluator


def execute_benchmark(cfg: RunConfig, out_dir, threads: int | None = None) -> list[BenchmarkRow]:
    out_dir = Path(out_dir)
    with output_lock(out_dir):
        direct, x_start, ev_direct = run_direct(cfg, threads)
        L = cfg.schedule.knot_counts[-1]
        x_direct = DesignProblem(L).to_design(direct.best_u)
        d = _design_summary(x_direct, ev_direct, cfg)
        rows = [BenchmarkRow("TR with α=1", [ev_direct.ledger.total], ev_direct.ledger.total,
                             d["footprint"], d["max_db"], x_start.tolist(), x_direct.tolist())]

        meta, ev_strat = run_stratified(cfg, threads=threads)
        s = _design_summary(meta.final_x, ev_strat, cfg)
        rows.append(BenchmarkRow("This work", [st.cost for st in meta.per_step], meta.total_cost,
                                 s["footprint"], s["max_db"], [float(v) for v in cfg.x0],
                                 np.asarray(meta.final_x).tolist()))

        (out_dir / "benchmark.md").write_text(benchmark_markdown(rows, cfg))
        payload = {
            "x0": [float(v) for v in cfg.x0],
            "schedule": list(cfg.schedule.knot_counts),
            "S1": cfg.objective.S1,
            "methods": [row.__dict__ | {"violates_S1": row.violates(cfg.objective)} for row in rows],
        }
        (out_dir / "benchmark.json").write_text(json.dumps(payload, indent=2) + "\n")
    return rows


def benchmark_markdown(rows: list[BenchmarkRow], cfg: RunConfig) -> str:
    n = max(len(cfg.schedule.knot_counts), max(len(r.costs) for r in rows))
    x0 = " ".join(f"{v:g}" for v in cfg.x0)
    lines = [
        "# Benchmark: stratified optimization vs direct trust-region",
        "",
        f"Shared initial design x0 (L={cfg.schedule.knot_counts[0]}): [{x0}]; the direct run starts "
        f"from the same design re-expressed with L={cfg.schedule.knot_counts[-1]} knots.",
        f"Knot schedule: {list(cfg.schedule.knot_counts)}. Costs count true evaluations [R].",
        "",
        "| Method | " + " | ".join(f"Meta-step {k + 1} cost [R]" for k in range(n))
        + " | Total cost [R] | Size [mm²] | max(S(x)) [dB] |",
        "|---" * (n + 4) + "|",
    ]
    flagged = False
    for r in rows:
        costs = [str(c) for c in r.costs] + ["–"] * (n - len(r.costs))
        mark = "*" if r.violates(cfg.objective) else ""
        flagged |= bool(mark)
        lines.append(f"| {r.method} | " + " | ".join(costs)
                     + f" | {r.total} | {r.size:.1f} | {r.max_db:.2f}{mark} |")
    if flagged:
        lines += ["", f"\\* The optimized design violates the performance specification "
                      f"max(S(x)) ≤ S1 = {cfg.objective.S1:g} dB."]
    return "\n".join(lines) + "\n"


# -- post-hoc report -----------------------------------------------------------------

def load_records(out_dir) -> tuple[dict, list[dict], list[dict]]:
    out_dir = Path(out_dir)
    try:
        meta = json.loads((out_dir / "meta.json").read_text())
        with open(out_dir / "convergence.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        events = [json.loads(line) for line in (out_dir / "run.jsonl").read_text().splitlines() if line]
    except (OSError, json.JSONDecodeError, csv.Error) as exc:
        raise RecordError(f"{out_dir}: incomplete or corrupt run records ({exc})") from exc
    if not rows or "final" not in meta or "steps" not in meta:
        raise RecordError(f"{out_dir}: run records are incomplete")
    if list(rows[0].keys()) != CONVERGENCE_HEADER:
        raise RecordError(f"{out_dir}/convergence.csv: unexpected header {list(rows[0].keys())}")
    return meta, rows, events


def build_report(out_dir, bucket: int = 10) -> str:
    out_dir = Path(out_dir)
    meta, rows, events = load_records(out_dir)
    try:
        lines = ["# Run report", "", "## Meta-steps", "",
                 "| j | L | cost [R] | objective (mode-1 form) | max in-band [dB] | footprint [mm²] | termination |",
                 "|---|---|---|---|---|---|---|"]
        for j, s in enumerate(meta["steps"]):
            lines.append(f"| {j} | {s['L']} | {s['cost']} | {s['best_objective']:.4f} | {s['max_db']:.3f} "
                         f"| {s['footprint']:.2f} | {s['termination']} |")
        final = meta["final"]
        lines += ["", f"Total cost: {meta['total_cost']} evaluations; stop reason: {meta['stop_reason']}; "
                      f"returned design from meta-step {meta['final_step']} (L={final['L']}).",
                  f"Final design: max in-band {final['max_db']:.3f} dB, footprint {final['footprint']:.2f} mm², "
                  f"{'meets' if final['feasible'] else 'violates'} the reflection threshold.",
                  "", "## Mode switches", ""]
        switches = [e for e in events if e.get("event") == "mode_switch"]
        if switches:
            lines += ["| eval index | from | to | A1 [mm²] |", "|---|---|---|---|"]
            for e in switches:
                a1 = "" if e["A1"] is None else f"{e['A1']:.2f}"
                lines.append(f"| {e['eval_index']} | {e['from']} | {e['to']} | {a1} |")
        else:
            lines.append("No mode switches.")
        lines += ["", f"## Convergence (incumbent at the end of each {bucket}-evaluation bucket)", "",
                  "| evaluations | objective | alpha | max in-band [dB] | footprint [mm²] |",
                  "|---|---|---|---|---|"]
        by_bucket = {}
        for r in rows:
            by_bucket[(int(r["eval_index"]) - 1) // bucket] = r
        for b in sorted(by_bucket):
            r = by_bucket[b]
            lines.append(f"| {b * bucket + 1}–{(b + 1) * bucket} | {float(r['best_objective']):.4f} "
                         f"| {r['alpha']} | {float(r['max_in_band_db']):.3f} | {float(r['footprint_mm2']):.2f} |")
        resp = final["response"]
        freq, s11 = resp["freq_ghz"], resp["s11_db"]
    except (KeyError, TypeError, ValueError) as exc:
        raise RecordError(f"{out_dir}: malformed run records ({exc})") from exc
    lines += ["", "Final reflection profile: reflection.csv (frequency_ghz, s11_db)."]
    report = "\n".join(lines) + "\n"
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["frequency_ghz", "s11_db"])
    w.writerows([f"{f:.6g}", f"{v:.6f}"] for f, v in zip(freq, s11))
    (out_dir / "report.md").write_text(report)
    (out_dir / "reflection.csv").write_text(buf.getvalue())
    return report
