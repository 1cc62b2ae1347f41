"""Scheduling environment: graph state, feasible assignments, subset actions.

The state is a heterogeneous graph over job, machine, and operation nodes.
Completed operations are removed from the graph; time is carried by per-job
and per-machine completion stamps, there is no global clock.

Feature column orders (the serialization contract):

  job node:      [completed flag, last completion t_j, remaining ops r_j,
                  remaining workload s_j, t_j - t_min]
  machine node:  [pending op count, assignable op count,
                  assignable duration sum, last assigned completion t_final]
  operation node:[ready flag, duration]
  op-machine / machine-job edge: [duration,
                  duration / max remaining duration in the job,
                  duration / max duration among pending ops on the machine]

Time-valued columns (see TIME_COLUMNS_*) are divided by the per-instance
normalization constant, max duration times max ops per job, in the
normalized view used as network input.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .instance import JsspInstance, Schedule

JOB_FEATURES = 5
MACHINE_FEATURES = 4
OP_FEATURES = 2
EDGE_FEATURES = 3

TIME_COLUMNS_JOB = (1, 3, 4)
TIME_COLUMNS_MACHINE = (2, 3)
TIME_COLUMNS_OP = (1,)
TIME_COLUMNS_EDGE = (0,)

STATE_RECORD_VERSION = 1


@dataclass(frozen=True)
class FeasibleAssignment:
    """A (job, machine) pair whose first pending operation may start now."""

    job: int
    machine: int
    op_index: int
    start: int      # earliest start = max(job ready time, machine ready time)
    duration: int

    def key(self) -> tuple[int, int]:
        return (self.job, self.machine)


@dataclass(frozen=True)
class AssignmentSubset:
    """A conflict-free, non-empty set of feasible assignments (one action)."""

    assignments: tuple[FeasibleAssignment, ...]

    def __post_init__(self):
        if not self.assignments:
            raise ValueError("assignment subset must be non-empty")
        machines = [a.machine for a in self.assignments]
        if len(set(machines)) != len(machines):
            raise ValueError("subset assigns one machine more than once")
        jobs = [a.job for a in self.assignments]
        if len(set(jobs)) != len(jobs):
            raise ValueError("subset assigns one job more than once")

    def __len__(self) -> int:
        return len(self.assignments)

    def keys(self) -> set[tuple[int, int]]:
        return {a.key() for a in self.assignments}


class StaleAssignmentError(ValueError):
    """Raised when an applied assignment no longer matches the state."""


class TerminalStateError(ValueError):
    """Raised when an operation requires a non-terminal (or terminal) state."""


class SchedState:
    """Mutable scheduling state; clone before concurrent or exploratory use.

    Mutation happens only through apply_subset / apply_subset_inplace.
    """

    def __init__(self, instance: JsspInstance):
        self.instance = instance
        n = instance.num_jobs
        self.t_job = [0] * n
        self.t_machine = [0] * instance.num_machines
        self.next_op = [0] * n
        self.pending_total = instance.total_ops
        # start time per operation; None until scheduled (or unknown after
        # deserializing a mid-rollout state)
        self.op_start: list[list[int | None]] = [
            [None] * len(ops) for ops in instance.jobs
        ]
        self.norm_constant = instance.max_duration * instance.max_ops_per_job

    # -- bookkeeping ------------------------------------------------------

    def clone(self) -> "SchedState":
        other = SchedState.__new__(SchedState)
        other.instance = self.instance
        other.t_job = list(self.t_job)
        other.t_machine = list(self.t_machine)
        other.next_op = list(self.next_op)
        other.pending_total = self.pending_total
        other.op_start = [list(row) for row in self.op_start]
        other.norm_constant = self.norm_constant
        return other

    def job_completed(self, job: int) -> bool:
        return self.next_op[job] >= len(self.instance.jobs[job])

    def remaining_ops(self, job: int) -> int:
        return len(self.instance.jobs[job]) - self.next_op[job]

    def remaining_workload(self, job: int) -> int:
        ops = self.instance.jobs[job]
        return sum(d for _, d in ops[self.next_op[job]:])

    def pending_ops(self) -> list[tuple[int, int]]:
        """All unscheduled (job, op_index), jobs ascending then op order."""
        out = []
        for j, ops in enumerate(self.instance.jobs):
            for i in range(self.next_op[j], len(ops)):
                out.append((j, i))
        return out


def init_state(instance: JsspInstance) -> SchedState:
    return SchedState(instance)


def is_terminal(state: SchedState) -> bool:
    return state.pending_total == 0


def feasible_assignments(
    state: SchedState, truncate: bool = True
) -> list[FeasibleAssignment]:
    """Feasible (job, machine) pairs sorted by earliest start (ties by job id),
    truncated to at most num_machines entries. truncate=False yields the full
    list; the truncated prefix of it is the policy-visible action space."""
    if is_terminal(state):
        raise TerminalStateError("no feasible assignments in a terminal state")
    inst = state.instance
    pairs = []
    for j in range(inst.num_jobs):
        i = state.next_op[j]
        if i >= len(inst.jobs[j]):
            continue
        mach, dur = inst.jobs[j][i]
        start = max(state.t_job[j], state.t_machine[mach])
        pairs.append(FeasibleAssignment(j, mach, i, start, dur))
    pairs.sort(key=lambda a: (a.start, a.job))
    if truncate:
        return pairs[: inst.num_machines]
    return pairs


def enumerate_action_space(
    state: SchedState, max_feasible: int = 12
) -> list[AssignmentSubset]:
    """All non-empty machine- and job-conflict-free subsets of the feasible
    list. Guarded to small feasible lists; exponential by construction."""
    feas = feasible_assignments(state)
    if len(feas) > max_feasible:
        raise ValueError(
            f"feasible list of size {len(feas)} too large to enumerate "
            f"(limit {max_feasible})"
        )
    out = []
    for bits in range(1, 1 << len(feas)):
        members = [feas[k] for k in range(len(feas)) if bits >> k & 1]
        machines = [a.machine for a in members]
        if len(set(machines)) != len(machines):
            continue
        jobs = [a.job for a in members]
        if len(set(jobs)) != len(jobs):
            continue
        out.append(AssignmentSubset(tuple(members)))
    return out


def _apply_inplace(state: SchedState, assignments: Sequence[FeasibleAssignment]):
    machines = [a.machine for a in assignments]
    if len(set(machines)) != len(machines):
        raise ValueError("subset assigns one machine more than once")
    jobs = [a.job for a in assignments]
    if len(set(jobs)) != len(jobs):
        raise ValueError("subset assigns one job more than once")
    inst = state.instance
    for a in assignments:
        if state.next_op[a.job] != a.op_index:
            raise StaleAssignmentError(
                f"job {a.job}: op {a.op_index} is not the first pending "
                f"(next is {state.next_op[a.job]})"
            )
        mach, dur = inst.jobs[a.job][a.op_index]
        if mach != a.machine:
            raise StaleAssignmentError(
                f"job {a.job} op {a.op_index} runs on machine {mach}, "
                f"not {a.machine}"
            )
        start = max(state.t_job[a.job], state.t_machine[mach])
        completion = start + dur
        state.op_start[a.job][a.op_index] = start
        state.t_job[a.job] = completion
        state.t_machine[mach] = completion
        state.next_op[a.job] += 1
        state.pending_total -= 1


def apply_subset(
    state: SchedState, action: AssignmentSubset | Sequence[FeasibleAssignment]
) -> SchedState:
    """Apply a conflict-free subset and return the successor state.

    The input state is left untouched. Each assignment starts at
    max(job ready time, machine ready time) evaluated in this state.
    """
    assignments = action.assignments if isinstance(action, AssignmentSubset) else tuple(action)
    new_state = state.clone()
    _apply_inplace(new_state, assignments)
    return new_state


def apply_subset_inplace(
    state: SchedState, action: AssignmentSubset | Sequence[FeasibleAssignment]
) -> None:
    """In-place variant for rollouts that own their state."""
    assignments = action.assignments if isinstance(action, AssignmentSubset) else tuple(action)
    _apply_inplace(state, assignments)


def to_schedule(state: SchedState) -> Schedule:
    """The full schedule accumulated by a rollout; terminal states only."""
    if not is_terminal(state):
        raise TerminalStateError("to_schedule requires a terminal state")
    rows = []
    for j, starts in enumerate(state.op_start):
        if any(s is None for s in starts):
            raise ValueError(
                "state lacks recorded start times (deserialized mid-rollout?)"
            )
        rows.append(tuple(starts))
    return Schedule(tuple(rows))  # type: ignore[arg-type]


# ---------------------------------------------------------------------------
# Graph views and features
# ---------------------------------------------------------------------------

def _op_nodes(state: SchedState) -> list[tuple[int, int]]:
    return state.pending_ops()


def machine_job_edges(state: SchedState) -> list[tuple[int, int]]:
    """(machine, job) edges for each job's first pending operation."""
    inst = state.instance
    edges = []
    for j in range(inst.num_jobs):
        i = state.next_op[j]
        if i < len(inst.jobs[j]):
            edges.append((inst.jobs[j][i][0], j))
    return edges


def _edge_feature_row(
    state: SchedState,
    job: int,
    op_index: int,
    max_pending_on_machine: dict[int, int],
) -> tuple[int, float, float]:
    inst = state.instance
    mach, dur = inst.jobs[job][op_index]
    job_max = max(d for _, d in inst.jobs[job][state.next_op[job]:])
    mach_max = max_pending_on_machine[mach]
    return (dur, dur / job_max, dur / mach_max)


def _max_pending_duration_per_machine(state: SchedState) -> dict[int, int]:
    out: dict[int, int] = {}
    inst = state.instance
    for j, i in state.pending_ops():
        mach, dur = inst.jobs[j][i]
        if dur > out.get(mach, 0):
            out[mach] = dur
    return out


@dataclass
class GraphView:
    """Dense feature matrices plus typed edge lists for one state.

    Edge index pairs reference positions in the corresponding feature
    matrices (ops by their row in op_features, jobs and machines by id).
    """

    job_features: np.ndarray          # (num_jobs, JOB_FEATURES)
    machine_features: np.ndarray      # (num_machines, MACHINE_FEATURES)
    op_features: np.ndarray           # (num_pending_ops, OP_FEATURES)
    op_ids: list[tuple[int, int]]     # row -> (job, op_index)
    mo_edges: list[tuple[int, int]]   # (machine, op_row), undirected pairs
    mo_edge_features: np.ndarray      # (len(mo_edges), EDGE_FEATURES)
    prec_edges: list[tuple[int, int]]  # (op_row, succ_op_row)
    oj_edges: list[tuple[int, int]]   # (op_row, job)
    mj_edges: list[tuple[int, int]]   # (machine, job)
    mj_edge_features: np.ndarray      # (len(mj_edges), EDGE_FEATURES)
    norm_constant: int


def feature_matrices(state: SchedState) -> GraphView:
    """Raw (unnormalized) feature matrices and edge lists for the state."""
    inst = state.instance
    n, m = inst.num_jobs, inst.num_machines

    t_min = min(state.t_job)
    job_feats = np.zeros((n, JOB_FEATURES), dtype=np.float64)
    for j in range(n):
        job_feats[j] = (
            1.0 if state.job_completed(j) else 0.0,
            state.t_job[j],
            state.remaining_ops(j),
            state.remaining_workload(j),
            state.t_job[j] - t_min,
        )

    op_ids = _op_nodes(state)
    op_row = {op: r for r, op in enumerate(op_ids)}
    op_feats = np.zeros((len(op_ids), OP_FEATURES), dtype=np.float64)
    for r, (j, i) in enumerate(op_ids):
        ready = 1.0 if i == state.next_op[j] else 0.0
        op_feats[r] = (ready, inst.duration(j, i))

    pending_count = [0] * m
    assignable_count = [0] * m
    assignable_sum = [0] * m
    for j, i in op_ids:
        mach, dur = inst.jobs[j][i]
        pending_count[mach] += 1
        if i == state.next_op[j]:
            assignable_count[mach] += 1
            assignable_sum[mach] += dur
    mach_feats = np.zeros((m, MACHINE_FEATURES), dtype=np.float64)
    for k in range(m):
        mach_feats[k] = (
            pending_count[k],
            assignable_count[k],
            assignable_sum[k],
            state.t_machine[k],
        )

    mach_max = _max_pending_duration_per_machine(state)
    mo_edges = []
    mo_feats = []
    for r, (j, i) in enumerate(op_ids):
        mach = inst.machine(j, i)
        mo_edges.append((mach, r))
        mo_feats.append(_edge_feature_row(state, j, i, mach_max))

    prec_edges = []
    for r, (j, i) in enumerate(op_ids):
        succ = (j, i + 1)
        if succ in op_row:
            prec_edges.append((r, op_row[succ]))

    oj_edges = [(r, j) for r, (j, _) in enumerate(op_ids)]

    mj_edges = machine_job_edges(state)
    mj_feats = []
    for mach, j in mj_edges:
        mj_feats.append(_edge_feature_row(state, j, state.next_op[j], mach_max))

    return GraphView(
        job_features=job_feats,
        machine_features=mach_feats,
        op_features=op_feats,
        op_ids=op_ids,
        mo_edges=mo_edges,
        mo_edge_features=np.array(mo_feats, dtype=np.float64).reshape(-1, EDGE_FEATURES),
        prec_edges=prec_edges,
        oj_edges=oj_edges,
        mj_edges=mj_edges,
        mj_edge_features=np.array(mj_feats, dtype=np.float64).reshape(-1, EDGE_FEATURES),
        norm_constant=state.norm_constant,
    )


def normalized_feature_matrices(state: SchedState) -> GraphView:
    """Network-input view: time-valued columns divided by the per-instance
    normalization constant."""
    view = feature_matrices(state)
    c = float(view.norm_constant)
    for cols, mat in (
        (TIME_COLUMNS_JOB, view.job_features),
        (TIME_COLUMNS_MACHINE, view.machine_features),
        (TIME_COLUMNS_OP, view.op_features),
        (TIME_COLUMNS_EDGE, view.mo_edge_features),
        (TIME_COLUMNS_EDGE, view.mj_edge_features),
    ):
        for col in cols:
            if mat.size:
                mat[:, col] /= c
    return view


def assignment_edge_features(
    state: SchedState, assignments: Sequence[FeasibleAssignment]
) -> np.ndarray:
    """Raw machine-job edge feature rows for a list of feasible assignments."""
    mach_max = _max_pending_duration_per_machine(state)
    rows = [
        _edge_feature_row(state, a.job, a.op_index, mach_max) for a in assignments
    ]
    return np.array(rows, dtype=np.float64).reshape(-1, EDGE_FEATURES)


# ---------------------------------------------------------------------------
# Serialization (embedded in dataset files)
# ---------------------------------------------------------------------------

def state_to_record(state: SchedState) -> dict:
    """Self-contained JSON-able snapshot; start times of already-scheduled
    operations are not retained."""
    inst = state.instance
    return {
        "v": STATE_RECORD_VERSION,
        "n": inst.num_jobs,
        "m": inst.num_machines,
        "jobs": [[[mach, dur] for mach, dur in ops] for ops in inst.jobs],
        "t_job": list(state.t_job),
        "t_machine": list(state.t_machine),
        "next_op": list(state.next_op),
        "norm": state.norm_constant,
    }


def state_from_record(record: dict) -> SchedState:
    if record.get("v") != STATE_RECORD_VERSION:
        raise ValueError(f"unsupported state record version {record.get('v')!r}")
    inst = JsspInstance(
        record["n"],
        record["m"],
        tuple(tuple((mach, dur) for mach, dur in ops) for ops in record["jobs"]),
    )
    state = SchedState(inst)
    state.t_job = [int(t) for t in record["t_job"]]
    state.t_machine = [int(t) for t in record["t_machine"]]
    state.next_op = [int(i) for i in record["next_op"]]
    state.pending_total = sum(
        len(ops) - k for ops, k in zip(inst.jobs, state.next_op)
    )
    state.norm_constant = int(record["norm"])
    return state


def state_record_to_line(record: dict) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))
