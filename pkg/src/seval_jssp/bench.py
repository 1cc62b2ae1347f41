"""Benchmark harness: corpus evaluation, gap tables, Gantt artifacts.

Methods are evaluated per instance against a reference makespan (sidecar
file or, for small instances, the exact solver). Reports carry both
per-instance rows and per-size aggregates; artifacts are a tab-separated
table, an aggregate summary, and one SVG Gantt chart per row.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

from .engine import greedy_rollout, seval_rollout
from .instance import (
    JsspInstance,
    Schedule,
    makespan,
    optimal_gap,
    parse_standard,
    parse_taillard,
    validate_schedule,
)
from .model import SevalModel
from .oracle import dispatch_solve, solve_exact

ORACLE_FALLBACK_MAX_SIZE = 8  # jobs and machines both at most this


@dataclass
class BenchRow:
    instance_id: str
    size: str
    method: str
    makespan: int
    reference: int
    gap: float
    wall_time: float
    schedule: Schedule | None = field(default=None, repr=False)


@dataclass
class BenchReport:
    rows: list[BenchRow]

    def aggregates(self) -> list[dict]:
        """Mean gap and wall time grouped by (size, method)."""
        groups: dict[tuple[str, str], list[BenchRow]] = {}
        for row in self.rows:
            groups.setdefault((row.size, row.method), []).append(row)
        out = []
        for (size, method), rows in sorted(groups.items()):
            out.append(
                {
                    "size": size,
                    "method": method,
                    "instances": len(rows),
                    "mean_gap": sum(r.gap for r in rows) / len(rows),
                    "mean_time": sum(r.wall_time for r in rows) / len(rows),
                }
            )
        return out


def parse_method(spec: str) -> tuple[str, int | None]:
    """"seval16" -> ("seval", 16); plain names pass through."""
    spec = spec.strip().lower()
    if spec.startswith("seval"):
        suffix = spec[len("seval"):].lstrip("-")
        return "seval", int(suffix) if suffix else 16
    if spec in ("greedy", "spt", "mwkr", "fifo", "exact"):
        return spec, None
    raise ValueError(f"unknown method {spec!r}")


def _run_method(
    instance: JsspInstance,
    method: str,
    n: int | None,
    model: SevalModel | None,
    time_limit: float,
    seed: int,
) -> tuple[int, Schedule, float]:
    t0 = time.monotonic()
    if method in ("spt", "mwkr", "fifo"):
        result = dispatch_solve(instance, method)
        return result.makespan, result.schedule, time.monotonic() - t0
    if method == "exact":
        result = solve_exact(instance, time_limit)
        return result.makespan, result.schedule, time.monotonic() - t0
    if model is None:
        raise ValueError(f"method {method!r} needs a checkpoint")
    if method == "greedy":
        schedule = greedy_rollout(instance, model)
    elif method == "seval":
        schedule = seval_rollout(instance, model, n=n or 16, seed=seed)
    else:
        raise ValueError(f"unknown method {method!r}")
    ms = makespan(instance, schedule)
    return ms, schedule, time.monotonic() - t0


def load_references(path: Path | str) -> dict[str, int]:
    """Sidecar file: one "instance_id makespan" pair per line; '#' comments."""
    refs: dict[str, int] = {}
    for raw in Path(path).read_text(encoding="ascii").splitlines():
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        name, value = line.split()
        refs[name] = int(value)
    return refs


def load_instance_dir(
    instance_dir: Path | str, fmt: str = "std"
) -> list[tuple[str, JsspInstance]]:
    parser = parse_standard if fmt == "std" else parse_taillard
    out = []
    for path in sorted(Path(instance_dir).glob("*.txt")):
        out.append((path.stem, parser(path.read_text(encoding="ascii"), name=path.stem)))
    if not out:
        raise FileNotFoundError(f"no *.txt instances under {instance_dir}")
    return out


def run_benchmark(
    instances: Sequence[tuple[str, JsspInstance]],
    methods: Sequence[str],
    model: SevalModel | None = None,
    references: dict[str, int] | None = None,
    time_limit: float = 10.0,
    seed: int = 0,
) -> BenchReport:
    """Evaluate each method on each instance; reference makespans come from
    the sidecar mapping, or the exact solver for small instances."""
    references = dict(references or {})
    rows: list[BenchRow] = []
    for name, instance in instances:
        ref = references.get(name)
        if ref is None:
            small = (
                instance.num_jobs <= ORACLE_FALLBACK_MAX_SIZE
                and instance.num_machines <= ORACLE_FALLBACK_MAX_SIZE
            )
            if not small:
                raise ValueError(
                    f"{name}: no reference makespan and instance too large "
                    f"for the oracle fallback"
                )
            ref = solve_exact(instance, time_limit).makespan
            references[name] = ref
        for spec in methods:
            method, n = parse_method(spec)
            ms, schedule, wall = _run_method(
                instance, method, n, model, time_limit, seed
            )
            assert not validate_schedule(instance, schedule)
            rows.append(
                BenchRow(
                    instance_id=name,
                    size=f"{instance.num_jobs}x{instance.num_machines}",
                    method=spec,
                    makespan=ms,
                    reference=ref,
                    gap=optimal_gap(ms, ref),
                    wall_time=wall,
                    schedule=schedule,
                )
            )
    return BenchReport(rows)


# ---------------------------------------------------------------------------
# Artifacts
# ---------------------------------------------------------------------------

REPORT_HEADER = "instance\tsize\tmethod\tmakespan\treference\tgap_pct\twall_s"

_GANTT_COLORS = (
    "#4e79a7", "#f28e2b", "#e15759", "#76b7b2", "#59a14f",
    "#edc948", "#b07aa1", "#ff9da7", "#9c755f", "#bab0ac",
)


def report_to_text(report: BenchReport) -> str:
    lines = [REPORT_HEADER]
    for r in report.rows:
        lines.append(
            f"{r.instance_id}\t{r.size}\t{r.method}\t{r.makespan}"
            f"\t{r.reference}\t{r.gap:.3f}\t{r.wall_time:.4f}"
        )
    return "\n".join(lines) + "\n"


def aggregates_to_text(report: BenchReport) -> str:
    lines = ["size\tmethod\tinstances\tmean_gap_pct\tmean_time_s"]
    for a in report.aggregates():
        lines.append(
            f"{a['size']}\t{a['method']}\t{a['instances']}"
            f"\t{a['mean_gap']:.3f}\t{a['mean_time']:.4f}"
        )
    return "\n".join(lines) + "\n"


def gantt_svg(instance: JsspInstance, schedule: Schedule, title: str) -> str:
    """One row per machine, one rect per operation, colored by job."""
    ms = makespan(instance, schedule)
    row_h, gap, left, top = 28, 6, 60, 30
    width = 900
    scale = (width - left - 20) / max(ms, 1)
    height = top + instance.num_machines * (row_h + gap) + 20
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">',
        f'<text x="{left}" y="18" font-size="13">{title} (makespan {ms})</text>',
    ]
    for k in range(instance.num_machines):
        y = top + k * (row_h + gap)
        parts.append(
            f'<text x="4" y="{y + row_h - 9}" font-size="11">machine {k}</text>'
        )
    for j, ops in enumerate(instance.jobs):
        color = _GANTT_COLORS[j % len(_GANTT_COLORS)]
        for i, (mach, dur) in enumerate(ops):
            x = left + schedule.starts[j][i] * scale
            w = max(dur * scale, 1.0)
            y = top + mach * (row_h + gap)
            parts.append(
                f'<rect data-machine="{mach}" data-start="{schedule.starts[j][i]}"'
                f' data-duration="{dur}" x="{x:.2f}" y="{y}" width="{w:.2f}"'
                f' height="{row_h}" fill="{color}" stroke="#333">'
                f"<title>job {j} op {i}: {schedule.starts[j][i]}"
                f"+{dur}</title></rect>"
            )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def emit_artifacts(report: BenchReport, out_dir: Path | str,
                   instances: dict[str, JsspInstance] | None = None) -> list[Path]:
    """Write the gap table, per-size aggregates, and per-row Gantt charts.

    Gantt charts need the instance geometry; rows whose instance is not in
    `instances` (or that carry no schedule) get no chart.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    table = out / "report.tsv"
    table.write_text(report_to_text(report), encoding="ascii")
    written.append(table)
    agg = out / "aggregates.tsv"
    agg.write_text(aggregates_to_text(report), encoding="ascii")
    written.append(agg)
    if instances:
        gantt_dir = out / "gantt"
        gantt_dir.mkdir(exist_ok=True)
        for row in report.rows:
            inst = instances.get(row.instance_id)
            if inst is None or row.schedule is None:
                continue
            path = gantt_dir / f"{row.instance_id}__{row.method}.svg"
            path.write_text(
                gantt_svg(inst, row.schedule, f"{row.instance_id} / {row.method}"),
                encoding="ascii",
            )
            written.append(path)
    return written
