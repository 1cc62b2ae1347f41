"""JSSP instances: parsing, generation, schedules, validation, gap metric.

All durations and times are integers; scheduling arithmetic is exact.
Machine indices are 0-based everywhere inside the package regardless of
the source file format.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

Operation = tuple[int, int]  # (machine_id, duration)


class ParseError(ValueError):
    """Malformed instance text. Carries the 1-based source line number."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


@dataclass(frozen=True)
class JsspInstance:
    """A job-shop instance: jobs are ordered sequences of (machine, duration).

    Invariants (enforced at construction): durations positive, machine ids
    in [0, num_machines), at least one job with at least one operation.
    """

    num_jobs: int
    num_machines: int
    jobs: tuple[tuple[Operation, ...], ...]
    name: str = field(default="", compare=False)

    def __post_init__(self):
        if self.num_jobs < 1 or self.num_machines < 1:
            raise ValueError("instance needs at least one job and one machine")
        if len(self.jobs) != self.num_jobs:
            raise ValueError(f"expected {self.num_jobs} jobs, got {len(self.jobs)}")
        for j, ops in enumerate(self.jobs):
            if not ops:
                raise ValueError(f"job {j} has no operations")
            for i, (mach, dur) in enumerate(ops):
                if not 0 <= mach < self.num_machines:
                    raise ValueError(f"job {j} op {i}: machine {mach} out of range")
                if dur <= 0:
                    raise ValueError(f"job {j} op {i}: non-positive duration {dur}")

    @property
    def total_ops(self) -> int:
        return sum(len(ops) for ops in self.jobs)

    def machine(self, job: int, op: int) -> int:
        return self.jobs[job][op][0]

    def duration(self, job: int, op: int) -> int:
        return self.jobs[job][op][1]

    def job_duration_sum(self, job: int) -> int:
        return sum(d for _, d in self.jobs[job])

    @property
    def max_duration(self) -> int:
        return max(d for ops in self.jobs for _, d in ops)

    @property
    def max_ops_per_job(self) -> int:
        return max(len(ops) for ops in self.jobs)


@dataclass(frozen=True)
class Schedule:
    """Start times per operation, parallel to the instance's job structure."""

    starts: tuple[tuple[int, ...], ...]

    def start(self, job: int, op: int) -> int:
        return self.starts[job][op]

    def completion(self, instance: JsspInstance, job: int, op: int) -> int:
        return self.starts[job][op] + instance.duration(job, op)


class Violation(NamedTuple):
    """A single feasibility violation between two operations.

    kind is "precedence" or "machine-overlap"; ops are (job, op_index).
    """

    kind: str
    op_a: tuple[int, int]
    op_b: tuple[int, int]


def _check_coverage(instance: JsspInstance, schedule: Schedule) -> None:
    if len(schedule.starts) != instance.num_jobs:
        raise ValueError("schedule does not cover all jobs")
    for j, ops in enumerate(instance.jobs):
        if len(schedule.starts[j]) != len(ops):
            raise ValueError(f"schedule does not cover all operations of job {j}")


def makespan(instance: JsspInstance, schedule: Schedule) -> int:
    """Completion time of the last operation across all jobs."""
    _check_coverage(instance, schedule)
    return max(
        schedule.starts[j][-1] + instance.jobs[j][-1][1]
        for j in range(instance.num_jobs)
    )


def validate_schedule(instance: JsspInstance, schedule: Schedule) -> list[Violation]:
    """Check precedence and machine exclusivity; violations are data, not errors."""
    _check_coverage(instance, schedule)
    violations: list[Violation] = []
    for j, ops in enumerate(instance.jobs):
        for i in range(1, len(ops)):
            if schedule.starts[j][i] < schedule.starts[j][i - 1] + ops[i - 1][1]:
                violations.append(Violation("precedence", (j, i - 1), (j, i)))
    by_machine: dict[int, list[tuple[int, int, int, int]]] = {}
    for j, ops in enumerate(instance.jobs):
        for i, (mach, dur) in enumerate(ops):
            s = schedule.starts[j][i]
            by_machine.setdefault(mach, []).append((s, s + dur, j, i))
    for intervals in by_machine.values():
        intervals.sort()
        for (s1, e1, j1, i1), (s2, e2, j2, i2) in zip(intervals, intervals[1:]):
            if s2 < e1:
                violations.append(Violation("machine-overlap", (j1, i1), (j2, i2)))
    return violations


def optimal_gap(achieved: float, reference: float) -> float:
    """Percentage excess of an achieved makespan over a reference makespan.

    Computed as (achieved - reference) * 100 / reference, which is exact for
    the integer makespans this package produces.
    """
    if reference <= 0:
        raise ValueError(f"reference makespan must be positive, got {reference}")
    return (achieved - reference) * 100.0 / reference


# ---------------------------------------------------------------------------
# Parsing and serialization
# ---------------------------------------------------------------------------

def parse_standard(text: str, name: str = "") -> JsspInstance:
    """Parse the whitespace-separated standard format.

    Header line "n m", then n job rows of (machine, duration) pairs.
    Lines starting with '#' and blank lines are skipped.
    """
    rows: list[tuple[int, str]] = []  # (1-based line number, content)
    for lineno, raw in enumerate(text.splitlines(), start=1):
        stripped = raw.strip()
        if not stripped or stripped.startswith("#"):
            continue
        rows.append((lineno, stripped))
    if not rows:
        raise ParseError("empty instance text")
    header_line, header = rows[0]
    parts = header.split()
    if len(parts) != 2:
        raise ParseError(f"header must be 'n m', got {header!r}", header_line)
    try:
        n, m = int(parts[0]), int(parts[1])
    except ValueError:
        raise ParseError(f"header must hold two integers, got {header!r}", header_line)
    if n < 1 or m < 1:
        raise ParseError(f"header values must be positive, got {header!r}", header_line)
    if len(rows) - 1 != n:
        raise ParseError(
            f"job-count mismatch: header says {n} jobs, found {len(rows) - 1} rows",
            header_line,
        )
    jobs: list[tuple[Operation, ...]] = []
    for j in range(n):
        lineno, row = rows[1 + j]
        try:
            values = [int(tok) for tok in row.split()]
        except ValueError:
            raise ParseError(f"job row holds a non-integer token: {row!r}", lineno)
        if len(values) == 0 or len(values) % 2 != 0:
            raise ParseError(
                f"job row must hold (machine, duration) pairs, got {len(values)} values",
                lineno,
            )
        ops = []
        for k in range(0, len(values), 2):
            mach, dur = values[k], values[k + 1]
            if not 0 <= mach < m:
                raise ParseError(f"machine index {mach} out of range [0, {m})", lineno)
            if dur <= 0:
                raise ParseError(f"non-positive duration {dur}", lineno)
            ops.append((mach, dur))
        jobs.append(tuple(ops))
    return JsspInstance(n, m, tuple(jobs), name=name)


def instance_to_text(instance: JsspInstance) -> str:
    """Serialize to standard format; parse_standard round-trips it."""
    lines = [f"{instance.num_jobs} {instance.num_machines}"]
    for ops in instance.jobs:
        lines.append(" ".join(f"{mach} {dur}" for mach, dur in ops))
    return "\n".join(lines) + "\n"


def parse_taillard(text: str, name: str = "") -> JsspInstance:
    """Parse the Taillard two-matrix layout.

    First line: n and m (extra trailing numbers, e.g. seeds and bounds in the
    published files, are ignored). Then an n-by-m matrix of processing times
    followed by an n-by-m matrix of 1-based machine indices; each machines
    row must be a permutation of 1..m. Label lines such as "Times" are
    skipped; '#' comments are not part of this format.
    """
    lines = [(no, raw.strip()) for no, raw in enumerate(text.splitlines(), start=1)]
    lines = [(no, s) for no, s in lines if s]
    # drop pure label lines (alphabetic words, e.g. "Times" / "Machines")
    numeric_lines = [(no, s) for no, s in lines if not s.replace(" ", "").isalpha()]
    if not numeric_lines:
        raise ParseError("empty instance text")
    header_no, header = numeric_lines[0]
    header_tokens = header.split()
    if len(header_tokens) < 2:
        raise ParseError(f"header must start with 'n m', got {header!r}", header_no)
    try:
        n, m = int(header_tokens[0]), int(header_tokens[1])
    except ValueError:
        raise ParseError(f"header must start with two integers, got {header!r}", header_no)
    if n < 1 or m < 1:
        raise ParseError(f"header values must be positive, got {header!r}", header_no)
    tokens: list[tuple[int, int]] = []  # (line number, value)
    for no, s in numeric_lines[1:]:
        for tok in s.split():
            try:
                tokens.append((no, int(tok)))
            except ValueError:
                raise ParseError(f"non-integer token {tok!r}", no)
    expected = 2 * n * m
    if len(tokens) != expected:
        raise ParseError(
            f"matrix dimension mismatch: expected {expected} values "
            f"({n}x{m} times then {n}x{m} machines), got {len(tokens)}",
            numeric_lines[-1][0],
        )
    times = tokens[: n * m]
    machines = tokens[n * m:]
    jobs: list[tuple[Operation, ...]] = []
    for j in range(n):
        row_t = times[j * m: (j + 1) * m]
        row_m = machines[j * m: (j + 1) * m]
        seen = sorted(v for _, v in row_m)
        if seen != list(range(1, m + 1)):
            raise ParseError(
                f"machines row for job {j} is not a permutation of 1..{m}",
                row_m[0][0],
            )
        ops = []
        for (no_t, dur), (_, mach) in zip(row_t, row_m):
            if dur <= 0:
                raise ParseError(f"non-positive duration {dur}", no_t)
            ops.append((mach - 1, dur))
        jobs.append(tuple(ops))
    return JsspInstance(n, m, tuple(jobs), name=name)


def generate_instance(n: int, m: int, seed: int) -> JsspInstance:
    """Random instance: each job visits all m machines in a uniformly random
    order with i.i.d. integer durations from Uniform{1..99}. Deterministic
    given the seed."""
    if n < 1 or m < 1:
        raise ValueError("n and m must be >= 1")
    rng = random.Random(seed)
    jobs = []
    for _ in range(n):
        order = list(range(m))
        rng.shuffle(order)
        jobs.append(tuple((mach, rng.randint(1, 99)) for mach in order))
    return JsspInstance(n, m, tuple(jobs), name=f"gen-{n}x{m}-s{seed}")


def schedule_to_text(instance: JsspInstance, schedule: Schedule) -> str:
    """Export: one "job op machine start duration" line per operation plus a
    trailing "makespan V" line."""
    _check_coverage(instance, schedule)
    lines = []
    for j, ops in enumerate(instance.jobs):
        for i, (mach, dur) in enumerate(ops):
            lines.append(f"{j} {i} {mach} {schedule.starts[j][i]} {dur}")
    lines.append(f"makespan {makespan(instance, schedule)}")
    return "\n".join(lines) + "\n"


def machine_load_bound(instance: JsspInstance) -> int:
    """max over machines of total assigned duration (classical lower bound)."""
    load = [0] * instance.num_machines
    for ops in instance.jobs:
        for mach, dur in ops:
            load[mach] += dur
    return max(load)


def job_length_bound(instance: JsspInstance) -> int:
    """max over jobs of total duration (classical lower bound)."""
    return max(instance.job_duration_sum(j) for j in range(instance.num_jobs))


def schedule_from_starts(starts: Iterable[Iterable[int]]) -> Schedule:
    return Schedule(tuple(tuple(int(s) for s in row) for row in starts))
