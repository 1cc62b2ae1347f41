"""Label oracle: exact branch-and-bound, exhaustive enumeration, dispatch rules.

The exact solver does depth-first branch-and-bound over active schedules
(earliest-completion conflict branching) with job, machine-load, and
head-plus-tail one-machine lower bounds. The brute-force enumerator walks
the same class of schedules without any pruning and is kept independent of
the solver so the two can check each other.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

from .instance import JsspInstance, Schedule, validate_schedule
from .state import SchedState

STATUS_OPTIMAL = "optimal"
STATUS_FEASIBLE = "feasible-only"

BRUTE_FORCE_MAX_OPS = 16


@dataclass
class SolveResult:
    schedule: Schedule
    makespan: int
    status: str
    nodes: int
    wall_time: float


class _TimeLimit(Exception):
    pass


def _suffix_sums(instance: JsspInstance) -> list[list[int]]:
    # suffix[j][i] = total duration of ops i.. of job j; suffix[j][k_j] = 0
    out = []
    for ops in instance.jobs:
        row = [0] * (len(ops) + 1)
        for i in range(len(ops) - 1, -1, -1):
            row[i] = row[i + 1] + ops[i][1]
        out.append(row)
    return out


def _machine_ops(instance: JsspInstance) -> list[list[tuple[int, int]]]:
    # per machine: list of (job, op_index) that run on it
    out: list[list[tuple[int, int]]] = [[] for _ in range(instance.num_machines)]
    for j, ops in enumerate(instance.jobs):
        for i, (mach, _) in enumerate(ops):
            out[mach].append((j, i))
    return out


class _Search:
    """Shared DFS machinery; branching is Giffler-Thompson conflict sets."""

    def __init__(self, instance: JsspInstance, prune: bool, deadline: float | None):
        self.inst = instance
        self.jobs = instance.jobs
        self.n = instance.num_jobs
        self.m = instance.num_machines
        self.suffix = _suffix_sums(instance)
        self.mach_ops = _machine_ops(instance)
        self.prune = prune
        self.deadline = deadline
        self.nodes = 0
        self.best_ub = float("inf")
        self.best_starts: list[list[int]] | None = None

    def run(
        self,
        t_job: list[int],
        t_mach: list[int],
        next_op: list[int],
        incumbent: tuple[int, list[list[int]]] | None = None,
    ):
        if incumbent is not None:
            self.best_ub, self.best_starts = incumbent
        starts = [[-1] * len(ops) for ops in self.jobs]
        remaining = sum(len(self.jobs[j]) - next_op[j] for j in range(self.n))
        base = max(max(t_job, default=0), max(t_mach, default=0))
        self._dfs(list(t_job), list(t_mach), list(next_op), starts, remaining, base)

    def _lower_bound(self, t_job, t_mach, next_op, current_max) -> int:
        lb = current_max
        jobs, suffix = self.jobs, self.suffix
        for j in range(self.n):
            v = t_job[j] + suffix[j][next_op[j]]
            if v > lb:
                lb = v
        # head + load + tail per machine (covers the plain load bound)
        for k in range(self.m):
            load = 0
            min_head = None
            min_tail = None
            t_k = t_mach[k]
            for j, i in self.mach_ops[k]:
                if i < next_op[j]:
                    continue
                dur = jobs[j][i][1]
                load += dur
                head = t_job[j] + (suffix[j][next_op[j]] - suffix[j][i])
                if head < t_k:
                    head = t_k
                tail = suffix[j][i + 1]
                if min_head is None or head < min_head:
                    min_head = head
                if min_tail is None or tail < min_tail:
                    min_tail = tail
            if min_head is not None:
                v = min_head + load + min_tail
                if v > lb:
                    lb = v
        return lb

    def _dfs(self, t_job, t_mach, next_op, starts, remaining, current_max):
        self.nodes += 1
        if self.deadline is not None and self.nodes % 1024 == 0:
            if time.monotonic() > self.deadline:
                raise _TimeLimit
        if remaining == 0:
            if current_max < self.best_ub:
                self.best_ub = current_max
                self.best_starts = [list(row) for row in starts]
            return
        if self.prune:
            if self._lower_bound(t_job, t_mach, next_op, current_max) >= self.best_ub:
                return

        # minimum earliest completion across ready ops fixes the branch machine
        jobs = self.jobs
        best_c = None
        best_m = -1
        ready = []
        for j in range(self.n):
            i = next_op[j]
            if i >= len(jobs[j]):
                continue
            mach, dur = jobs[j][i]
            s = t_job[j]
            if t_mach[mach] > s:
                s = t_mach[mach]
            c = s + dur
            ready.append((j, i, mach, dur, s, c))
            if best_c is None or c < best_c:
                best_c = c
                best_m = mach
        conflict = [r for r in ready if r[2] == best_m and r[4] < best_c]
        # earliest completion first finds good incumbents early
        conflict.sort(key=lambda r: (r[5], r[0]))
        for j, i, mach, dur, s, c in conflict:
            old_tj, old_tm = t_job[j], t_mach[mach]
            t_job[j] = t_mach[mach] = c
            next_op[j] = i + 1
            starts[j][i] = s
            self._dfs(
                t_job, t_mach, next_op, starts, remaining - 1,
                c if c > current_max else current_max,
            )
            t_job[j], t_mach[mach] = old_tj, old_tm
            next_op[j] = i
            starts[j][i] = -1


def _dispatch_starts(
    instance: JsspInstance,
    rule: str,
    t_job: list[int] | None = None,
    t_mach: list[int] | None = None,
    next_op: list[int] | None = None,
) -> list[list[int]]:
    """Non-delay schedule construction under a priority rule, optionally
    completing a partial rollout given by (t_job, t_mach, next_op)."""
    rule = rule.lower()
    if rule not in ("spt", "mwkr", "fifo"):
        raise ValueError(f"unknown dispatching rule {rule!r}")
    jobs = instance.jobs
    n = instance.num_jobs
    t_job = [0] * n if t_job is None else list(t_job)
    t_mach = [0] * instance.num_machines if t_mach is None else list(t_mach)
    next_op = [0] * n if next_op is None else list(next_op)
    rem_work = [
        sum(d for _, d in jobs[j][next_op[j]:]) for j in range(n)
    ]
    starts = [[-1] * len(ops) for ops in jobs]
    remaining = sum(len(jobs[j]) - next_op[j] for j in range(n))
    while remaining:
        t_star = None
        candidates = []
        for j in range(n):
            i = next_op[j]
            if i >= len(jobs[j]):
                continue
            mach, dur = jobs[j][i]
            s = max(t_job[j], t_mach[mach])
            if t_star is None or s < t_star:
                t_star = s
                candidates = [(j, i, mach, dur)]
            elif s == t_star:
                candidates.append((j, i, mach, dur))
        if rule == "spt":
            j, i, mach, dur = min(candidates, key=lambda c: (c[3], c[0]))
        elif rule == "mwkr":
            j, i, mach, dur = min(candidates, key=lambda c: (-rem_work[c[0]], c[0]))
        else:  # fifo: job that became available earliest
            j, i, mach, dur = min(candidates, key=lambda c: (t_job[c[0]], c[0]))
        starts[j][i] = t_star
        completion = t_star + dur
        t_job[j] = t_mach[mach] = completion
        next_op[j] = i + 1
        rem_work[j] -= dur
        remaining -= 1
    return starts


def _completion_makespan(
    instance: JsspInstance,
    starts: list[list[int]],
    t_job: list[int],
    next_op: list[int],
) -> int:
    ms = max(t_job)
    for j, ops in enumerate(instance.jobs):
        for i in range(next_op[j], len(ops)):
            c = starts[j][i] + ops[i][1]
            if c > ms:
                ms = c
    return ms


def dispatch_solve(instance: JsspInstance, rule: str) -> SolveResult:
    """Dispatching-rule baseline: SPT, MWKR, or FIFO. Never proves optimality."""
    t0 = time.monotonic()
    starts = _dispatch_starts(instance, rule)
    schedule = Schedule(tuple(tuple(row) for row in starts))
    ms = max(
        starts[j][-1] + instance.jobs[j][-1][1] for j in range(instance.num_jobs)
    )
    return SolveResult(schedule, ms, STATUS_FEASIBLE, 0, time.monotonic() - t0)


def _best_dispatch_incumbent(instance: JsspInstance) -> tuple[int, list[list[int]]]:
    best_ms = None
    best_starts = None
    for rule in ("spt", "mwkr", "fifo"):
        starts = _dispatch_starts(instance, rule)
        ms = max(
            starts[j][-1] + instance.jobs[j][-1][1]
            for j in range(instance.num_jobs)
        )
        if best_ms is None or ms < best_ms:
            best_ms, best_starts = ms, starts
    return best_ms, best_starts


def solve_exact(instance: JsspInstance, time_limit: float = 10.0) -> SolveResult:
    """Branch-and-bound over active schedules; proves optimality unless the
    time limit is hit, in which case the best incumbent is returned."""
    t0 = time.monotonic()
    deadline = t0 + time_limit if time_limit else None
    search = _Search(instance, prune=True, deadline=deadline)
    incumbent = _best_dispatch_incumbent(instance)
    status = STATUS_OPTIMAL
    try:
        search.run(
            [0] * instance.num_jobs,
            [0] * instance.num_machines,
            [0] * instance.num_jobs,
            incumbent=incumbent,
        )
    except _TimeLimit:
        status = STATUS_FEASIBLE
    schedule = Schedule(tuple(tuple(row) for row in search.best_starts))
    return SolveResult(
        schedule, int(search.best_ub), status, search.nodes, time.monotonic() - t0
    )


def solve_from_state(
    state: SchedState, time_limit: float = 10.0
) -> tuple[dict[tuple[int, int], int], int, str]:
    """Re-optimize the remaining operations of a partial rollout.

    Returns (starts for remaining ops, overall makespan including the already
    scheduled prefix, proof status).
    """
    inst = state.instance
    deadline = time.monotonic() + time_limit if time_limit else None
    search = _Search(inst, prune=True, deadline=deadline)
    incumbent = None
    if state.pending_total:
        best_ms, best_starts = None, None
        for rule in ("spt", "mwkr", "fifo"):
            starts = _dispatch_starts(
                inst, rule, state.t_job, state.t_machine, state.next_op
            )
            ms = _completion_makespan(inst, starts, state.t_job, state.next_op)
            if best_ms is None or ms < best_ms:
                best_ms, best_starts = ms, starts
        incumbent = (best_ms, best_starts)
    status = STATUS_OPTIMAL
    try:
        search.run(
            list(state.t_job),
            list(state.t_machine),
            list(state.next_op),
            incumbent=incumbent,
        )
    except _TimeLimit:
        status = STATUS_FEASIBLE
    if search.best_starts is None:
        raise RuntimeError("search returned no feasible completion")
    starts = {
        (j, i): search.best_starts[j][i]
        for j in range(inst.num_jobs)
        for i in range(state.next_op[j], len(inst.jobs[j]))
    }
    return starts, int(search.best_ub), status


def brute_force_small(instance: JsspInstance) -> SolveResult:
    """Exhaustive enumeration of all active schedules. Guaranteed optimal;
    restricted to tiny instances."""
    if instance.total_ops > BRUTE_FORCE_MAX_OPS:
        raise ValueError(
            f"instance with {instance.total_ops} operations exceeds the "
            f"brute-force limit of {BRUTE_FORCE_MAX_OPS}"
        )
    t0 = time.monotonic()
    jobs = instance.jobs
    n = instance.num_jobs
    best = {"ms": None, "starts": None, "leaves": 0}

    t_job = [0] * n
    t_mach = [0] * instance.num_machines
    next_op = [0] * n
    starts = [[-1] * len(ops) for ops in jobs]

    def recurse(remaining: int, current_max: int):
        if remaining == 0:
            best["leaves"] += 1
            if best["ms"] is None or current_max < best["ms"]:
                best["ms"] = current_max
                best["starts"] = [list(row) for row in starts]
            return
        ready = []
        best_c = None
        best_m = -1
        for j in range(n):
            i = next_op[j]
            if i >= len(jobs[j]):
                continue
            mach, dur = jobs[j][i]
            s = max(t_job[j], t_mach[mach])
            ready.append((j, i, mach, dur, s, s + dur))
            if best_c is None or s + dur < best_c:
                best_c = s + dur
                best_m = mach
        for j, i, mach, dur, s, c in ready:
            if mach != best_m or s >= best_c:
                continue
            old_tj, old_tm = t_job[j], t_mach[mach]
            t_job[j] = t_mach[mach] = c
            next_op[j] = i + 1
            starts[j][i] = s
            recurse(remaining - 1, max(current_max, c))
            t_job[j], t_mach[mach] = old_tj, old_tm
            next_op[j] = i
            starts[j][i] = -1

    recurse(instance.total_ops, 0)
    schedule = Schedule(tuple(tuple(row) for row in best["starts"]))
    return SolveResult(
        schedule, best["ms"], STATUS_OPTIMAL, best["leaves"], time.monotonic() - t0
    )


def solve(instance: JsspInstance, rule: str = "exact", time_limit: float = 10.0) -> SolveResult:
    """Dispatch table used by the CLI: exact or a named priority rule."""
    if rule == "exact":
        result = solve_exact(instance, time_limit)
    else:
        result = dispatch_solve(instance, rule)
    assert not validate_schedule(instance, result.schedule)
    return result
