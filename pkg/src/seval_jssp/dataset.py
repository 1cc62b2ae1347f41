"""Supervised corpus construction: solver replay, perturbation, file format.

Each sample pairs a serialized scheduling state with its feasible assignment
list and the subset of assignments that matches an optimal (or re-optimized)
solution's start times. Dataset files are line-oriented: a JSON header line
("sevalds-v1") followed by one JSON sample per line.
"""

from __future__ import annotations

import json
import random
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Mapping, Sequence

from .instance import JsspInstance, Schedule, generate_instance
from .oracle import STATUS_OPTIMAL, solve_exact, solve_from_state
from .state import (
    SchedState,
    apply_subset_inplace,
    feasible_assignments,
    init_state,
    is_terminal,
    state_from_record,
    state_to_record,
)

DATASET_FORMAT = "sevalds-v1"

REJECT_SOLVE_TIMEOUT = "solve-timeout"
REJECT_RESOLVE_TIMEOUT = "resolve-timeout"
REJECT_SCORE_RATIO = "score-ratio"

SCORE_RATIO_LIMIT = 1.1
MAX_RANDOM_ACTIONS = 30
OPTIMAL_PREFIX_FRACTION = 0.7


class ReplayError(RuntimeError):
    """A solution operation became unreachable during greedy replay."""


@dataclass
class TrajectorySample:
    """One supervised example: state, feasible list, optimal subset indices."""

    state_record: dict
    feasible: list[tuple[int, int, int, int]]  # (job, machine, start, duration)
    a_opt: tuple[int, ...]                     # indices into `feasible`
    instance_id: str
    step_index: int

    def to_json_obj(self) -> dict:
        return {
            "state": self.state_record,
            "feasible": [list(f) for f in self.feasible],
            "a_opt": list(self.a_opt),
            "instance_id": self.instance_id,
            "step_index": self.step_index,
        }

    @classmethod
    def from_json_obj(cls, obj: dict) -> "TrajectorySample":
        return cls(
            state_record=obj["state"],
            feasible=[tuple(f) for f in obj["feasible"]],
            a_opt=tuple(obj["a_opt"]),
            instance_id=obj["instance_id"],
            step_index=int(obj["step_index"]),
        )

    def load_state(self) -> SchedState:
        return state_from_record(self.state_record)


def extract_trajectory(
    instance: JsspInstance,
    solution: Schedule | Mapping[tuple[int, int], int],
    start_state: SchedState | None = None,
    instance_id: str = "",
) -> list[TrajectorySample]:
    """Replay a solution through the environment, emitting one sample per step.

    At each state the optimal subset is the batch of feasible assignments
    whose earliest start equals the solution's start time for that operation
    and whose operation is the next unscheduled one in the solution's machine
    sequence; without the machine-sequence condition a batch could commit a
    machine to a later operation first and make the solution unreachable.
    The batch is conflict-free by construction and maximal.
    """
    if isinstance(solution, Schedule):
        starts: Mapping[tuple[int, int], int] = {
            (j, i): solution.starts[j][i]
            for j in range(instance.num_jobs)
            for i in range(len(instance.jobs[j]))
        }
    else:
        starts = solution
    machine_seq: dict[int, list[tuple[int, int]]] = {}
    for (j, i), s in starts.items():
        machine_seq.setdefault(instance.machine(j, i), []).append((s, j, i))
    machine_next = {
        mach: [(j, i) for _, j, i in sorted(rows)]
        for mach, rows in machine_seq.items()
    }
    state = init_state(instance) if start_state is None else start_state.clone()
    truncation = instance.num_machines
    samples: list[TrajectorySample] = []
    step = 0
    while not is_terminal(state):
        feas = feasible_assignments(state, truncate=False)
        chosen: list[int] = []
        for k, fa in enumerate(feas):
            target = starts.get((fa.job, fa.op_index))
            if target is None or target != fa.start:
                continue
            queue = machine_next[fa.machine]
            if not queue or queue[0] != (fa.job, fa.op_index):
                continue
            chosen.append(k)
        if not chosen:
            raise ReplayError(
                f"{instance_id or 'instance'}: no feasible assignment matches "
                f"the solution at step {step}"
            )
        for k in chosen:
            machine_next[feas[k].machine].pop(0)
        # the stored action space is the truncated view; the applied batch may
        # reach past it only when jobs outnumber machines
        a_opt = tuple(k for k in chosen if k < truncation)
        if a_opt:
            samples.append(
                TrajectorySample(
                    state_record=state_to_record(state),
                    feasible=[
                        (a.job, a.machine, a.start, a.duration)
                        for a in feas[:truncation]
                    ],
                    a_opt=a_opt,
                    instance_id=instance_id,
                    step_index=step,
                )
            )
        apply_subset_inplace(state, [feas[k] for k in chosen])
        step += 1
    return samples


@dataclass
class PerturbResult:
    accepted: bool
    samples: list[TrajectorySample] = field(default_factory=list)
    reason: str | None = None
    score_optimal: int = 0
    new_score: int = 0
    optimal_prefix: int = 0
    random_actions: int = 0

    @property
    def score_ratio(self) -> float:
        return self.new_score / self.score_optimal if self.score_optimal else 0.0


def _solution_event_order(
    instance: JsspInstance, schedule: Schedule
) -> list[tuple[int, int]]:
    events = [
        (schedule.starts[j][i], j, i)
        for j in range(instance.num_jobs)
        for i in range(len(instance.jobs[j]))
    ]
    events.sort()
    return [(j, i) for _, j, i in events]


def perturb_and_extract(
    instance: JsspInstance,
    rng: random.Random,
    time_limit: float = 10.0,
    max_random_actions: int = MAX_RANDOM_ACTIONS,
    instance_id: str = "",
) -> PerturbResult:
    """Diversify a trajectory: replay part of the optimal solution, take a few
    random assignments, re-optimize, and keep the result only if it stays
    within 10% of the optimal makespan."""
    base = solve_exact(instance, time_limit)
    if base.status != STATUS_OPTIMAL:
        return PerturbResult(False, reason=REJECT_SOLVE_TIMEOUT)
    score_optimal = base.makespan

    total = instance.total_ops
    n_prefix = rng.randint(0, int(OPTIMAL_PREFIX_FRACTION * total))
    state = init_state(instance)
    order = _solution_event_order(instance, base.schedule)
    for j, i in order[:n_prefix]:
        feas = feasible_assignments(state, truncate=False)
        match = [a for a in feas if a.job == j and a.op_index == i]
        if not match:
            raise ReplayError(f"{instance_id}: optimal prefix replay lost op ({j},{i})")
        apply_subset_inplace(state, match)

    n_random = min(rng.randint(1, MAX_RANDOM_ACTIONS), max_random_actions,
                   state.pending_total)
    for _ in range(n_random):
        feas = feasible_assignments(state)
        pick = feas[rng.randrange(len(feas))]
        apply_subset_inplace(state, [pick])

    if is_terminal(state):
        # every operation got assigned during the prefix or perturbation;
        # nothing is left to re-optimize or to learn from
        new_score = max(state.t_job)
        accepted = new_score / score_optimal <= SCORE_RATIO_LIMIT
        return PerturbResult(
            accepted, reason=None if accepted else REJECT_SCORE_RATIO,
            score_optimal=score_optimal, new_score=new_score,
            optimal_prefix=n_prefix, random_actions=n_random,
        )

    residual_starts, new_score, status = solve_from_state(state, time_limit)
    if status != STATUS_OPTIMAL:
        return PerturbResult(
            False, reason=REJECT_RESOLVE_TIMEOUT, score_optimal=score_optimal,
            optimal_prefix=n_prefix, random_actions=n_random,
        )
    if new_score / score_optimal > SCORE_RATIO_LIMIT:
        return PerturbResult(
            False, reason=REJECT_SCORE_RATIO, score_optimal=score_optimal,
            new_score=new_score, optimal_prefix=n_prefix, random_actions=n_random,
        )
    samples = extract_trajectory(
        instance, residual_starts, start_state=state, instance_id=instance_id
    )
    return PerturbResult(
        True, samples=samples, score_optimal=score_optimal, new_score=new_score,
        optimal_prefix=n_prefix, random_actions=n_random,
    )


# ---------------------------------------------------------------------------
# Corpus building
# ---------------------------------------------------------------------------

@dataclass
class DatasetManifest:
    format: str
    seed: int
    num_jobs: int
    num_machines: int
    instance_count: int
    perturbed_fraction: float
    oracle_time_limit: float
    normalization: str
    clean_trajectories: int = 0
    perturbed_trajectories: int = 0
    rejected_perturbations: int = 0
    reject_reasons: dict = field(default_factory=dict)
    oracle_failures: int = 0
    train_samples: int = 0
    val_samples: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), sort_keys=True, indent=2)


def _build_one(args) -> tuple[int, str | None, list[dict], bool, str | None]:
    """Worker: returns (index, instance_id, sample objs, perturbed?, reject reason)."""
    index, n, m, seed, perturbed, time_limit = args
    instance = generate_instance(n, m, seed)
    instance_id = f"i{index:06d}-{n}x{m}-s{seed}"
    if perturbed:
        result = perturb_and_extract(
            instance, random.Random(seed ^ 0x5EED), time_limit,
            instance_id=instance_id,
        )
        if not result.accepted:
            return index, instance_id, [], True, result.reason
        return (
            index,
            instance_id,
            [s.to_json_obj() for s in result.samples],
            True,
            None,
        )
    solved = solve_exact(instance, time_limit)
    if solved.status != STATUS_OPTIMAL:
        return index, instance_id, [], False, REJECT_SOLVE_TIMEOUT
    samples = extract_trajectory(instance, solved.schedule, instance_id=instance_id)
    return index, instance_id, [s.to_json_obj() for s in samples], False, None


def _sample_line(obj: dict) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def write_dataset_file(path: Path, split: str, samples: Sequence[dict]) -> None:
    header = {"format": DATASET_FORMAT, "split": split, "count": len(samples)}
    with open(path, "w", encoding="ascii") as fh:
        fh.write(_sample_line(header) + "\n")
        for obj in samples:
            fh.write(_sample_line(obj) + "\n")


def read_dataset_file(path: Path | str) -> list[TrajectorySample]:
    with open(path, encoding="ascii") as fh:
        header = json.loads(fh.readline())
        if header.get("format") != DATASET_FORMAT:
            raise ValueError(f"unsupported dataset format {header.get('format')!r}")
        samples = [TrajectorySample.from_json_obj(json.loads(line)) for line in fh]
    if len(samples) != header["count"]:
        raise ValueError(
            f"{path}: header count {header['count']} != {len(samples)} samples"
        )
    return samples


def build_dataset(
    count: int,
    num_jobs: int,
    num_machines: int,
    seed: int,
    out_dir: Path | str,
    perturbed_fraction: float = 0.5,
    time_limit: float = 10.0,
    workers: int | None = None,
    val_fraction: float = 0.1,
) -> DatasetManifest:
    """Generate, solve, and serialize a corpus; 90/10 train/validation split.

    Deterministic for a given seed: instance seeds, the clean/perturbed
    pattern, and the shuffle all derive from it.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    manifest = DatasetManifest(
        format=DATASET_FORMAT,
        seed=seed,
        num_jobs=num_jobs,
        num_machines=num_machines,
        instance_count=count,
        perturbed_fraction=perturbed_fraction,
        oracle_time_limit=time_limit,
        normalization="time features / (max duration * max ops per job)",
    )
    tasks = []
    for i in range(count):
        perturbed = int((i + 1) * perturbed_fraction) > int(i * perturbed_fraction)
        tasks.append((i, num_jobs, num_machines, seed + i, perturbed, time_limit))

    results: list[tuple[int, str | None, list[dict], bool, str | None]] = []
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_build_one, tasks, chunksize=8))
    else:
        results = [_build_one(t) for t in tasks]
    results.sort(key=lambda r: r[0])

    all_samples: list[dict] = []
    failures = 0
    for _, _, objs, perturbed, reason in results:
        if reason == REJECT_SOLVE_TIMEOUT:
            failures += 1
            manifest.oracle_failures += 1
            continue
        if perturbed:
            if reason is not None:
                manifest.rejected_perturbations += 1
                manifest.reject_reasons[reason] = (
                    manifest.reject_reasons.get(reason, 0) + 1
                )
                continue
            manifest.perturbed_trajectories += 1
        else:
            manifest.clean_trajectories += 1
        all_samples.extend(objs)
    if failures > 0.1 * count:
        raise RuntimeError(
            f"oracle failed on {failures}/{count} instances (>10%); aborting"
        )

    random.Random(seed).shuffle(all_samples)
    n_val = int(len(all_samples) * val_fraction)
    val, train = all_samples[:n_val], all_samples[n_val:]
    manifest.train_samples = len(train)
    manifest.val_samples = len(val)
    write_dataset_file(out / "train.jsonl", "train", train)
    write_dataset_file(out / "val.jsonl", "val", val)
    (out / "manifest.json").write_text(manifest.to_json() + "\n", encoding="ascii")
    return manifest
