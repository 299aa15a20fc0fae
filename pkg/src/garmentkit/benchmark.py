"""Benchmark harness: seeded episode suites with JSON and CSV reports.

A suite is a JSON object listing episode rows; each row names a shipped
task kind and a seed.  The harness runs every row through the closed-loop
planner with its scripted client, collects the goal measurements, and
writes twin reports: a JSON file with rows plus aggregates and a CSV with
a fixed column order.  Row failures are recorded in place, never raised,
and loading a report re-derives the aggregates as a self-audit.
"""

from __future__ import annotations

import csv
import io
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

from .config import Config, DEFAULTS

CSV_COLUMNS = ("kind", "scene", "seed", "status", "success", "rounds",
               "iou", "coverage", "in_box", "on_rack", "max_edge_error",
               "min_z_seen", "error")

_METRIC_KEYS = ("iou", "coverage", "in_box", "on_rack")


class SuiteError(ValueError):
    """The suite description is malformed."""


class ReportMismatch(RuntimeError):
    """Stored aggregates disagree with recomputation from the rows."""


def default_suite() -> dict:
    """The shipped smoke suite: every task kind on its shipped seeds."""
    from .fixtures import FLATTEN_SEEDS

    rows = [{"kind": "fold", "seed": 0}]
    rows += [{"kind": "flatten", "seed": s} for s in FLATTEN_SEEDS]
    rows += [{"kind": "hang", "seed": 0}, {"kind": "place", "seed": 0}]
    return {"suite": "towel_smoke", "rows": rows}


def _check_suite(suite: dict) -> dict:
    if not isinstance(suite, dict):
        raise SuiteError("suite must be a JSON object")
    rows = suite.get("rows")
    if not isinstance(rows, list) or not rows:
        raise SuiteError('suite needs a non-empty "rows" list')
    for i, row in enumerate(rows):
        if not isinstance(row, dict) or "kind" not in row:
            raise SuiteError(f'row {i} needs a "kind" field')
    return suite


def run_row(row: dict, cfg: Config = DEFAULTS) -> dict:
    """One suite row -> one report row; failures come back as values."""
    from .fixtures import build_episode
    from .planner import run_episode

    kind = str(row["kind"])
    seed = int(row.get("seed", 0))
    out = {"kind": kind, "seed": seed}
    try:
        sim, client, task = build_episode(kind, seed, cfg)
        log = run_episode(task, sim, client, cfg=cfg)
        final = log.records[-1]
        checks = final["checks"]
        out["scene"] = sim.scene.name
        out["status"] = final["status"]
        out["success"] = bool(checks.get("success", False))
        out["rounds"] = final["rounds"]
        out["plan_lengths"] = [len(r["plan"]) for r in log.rounds
                               if "plan" in r]
        out["max_edge_error"] = final["max_edge_error"]
        out["min_z_seen"] = final["min_z_seen"]
        for key in _METRIC_KEYS:
            if key in checks:
                out[key] = checks[key]
    except Exception as exc:
        out["status"] = "error"
        out["success"] = False
        out["error"] = f"{type(exc).__name__}: {exc}"
    return out


def aggregate(rows: List[dict]) -> dict:
    """Success rates and mean rounds, overall and per task kind."""
    def summarize(group: List[dict]) -> dict:
        n = len(group)
        wins = sum(1 for r in group if r.get("success"))
        ran = [r["rounds"] for r in group if "rounds" in r]
        out = {"episodes": n, "successes": wins,
               "success_rate": wins / n if n else 0.0}
        if ran:
            out["mean_rounds"] = sum(ran) / len(ran)
        return out

    kinds = sorted({r["kind"] for r in rows})
    return {"overall": summarize(rows),
            "per_kind": {k: summarize([r for r in rows if r["kind"] == k])
                         for k in kinds}}


@dataclass
class BenchmarkReport:
    suite: str
    rows: List[dict] = field(default_factory=list)
    aggregates: Dict[str, object] = field(default_factory=dict)

    def to_json(self) -> str:
        payload = {"suite": self.suite, "rows": self.rows,
                   "aggregates": self.aggregates}
        return json.dumps(payload, sort_keys=True, indent=2) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS,
                                extrasaction="ignore", lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: row.get(k, "") for k in CSV_COLUMNS})
        return buf.getvalue()

    def save(self, out_dir) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.json").write_text(self.to_json(), encoding="utf-8")
        (out / "report.csv").write_text(self.to_csv(), encoding="utf-8")


def run_benchmark(suite: Optional[dict] = None,
                  out_dir=None, cfg: Config = DEFAULTS,
                  workers: int = 1) -> BenchmarkReport:
    """Run every suite row and assemble the report.

    ``suite`` may be a parsed suite object or a path to one; omitted, the
    shipped smoke suite runs.  Rows execute independently (optionally in a
    small thread pool) and the report keeps the suite's row order.
    """
    if suite is None:
        suite = default_suite()
    elif not isinstance(suite, dict):
        try:
            suite = json.loads(Path(suite).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise SuiteError(f"cannot read suite: {exc}") from exc
    _check_suite(suite)
    rows = suite["rows"]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(lambda r: run_row(r, cfg), rows))
    else:
        results = [run_row(r, cfg) for r in rows]
    report = BenchmarkReport(str(suite.get("suite", "suite")), results,
                             aggregate(results))
    if out_dir is not None:
        report.save(out_dir)
    return report


def load_report(path) -> BenchmarkReport:
    """Read a JSON report back, re-deriving the aggregates as an audit."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ReportMismatch(f"cannot read report: {exc}") from exc
    report = BenchmarkReport(data.get("suite", ""), data.get("rows", []),
                             data.get("aggregates", {}))
    if aggregate(report.rows) != report.aggregates:
        raise ReportMismatch("stored aggregates do not match the rows")
    return report
