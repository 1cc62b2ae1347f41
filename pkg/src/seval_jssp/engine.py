"""Training loop, subset sampling, and rollout inference.

Training alternates, per batch: encoder embeddings, a policy update driven
by KL against the solver's subset distribution (updates encoder + policy
head), then a scorer update driven by MSE against subset overlap scores on
randomly sampled conflict-free subsets (updates the scorer head only, on
frozen embeddings).

Inference builds schedules either greedily (maximal subset by descending
policy probability) or by sampling n candidate subsets and executing the
one the scorer ranks highest.
"""

from __future__ import annotations

import json
import random
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .dataset import TrajectorySample, read_dataset_file
from .instance import JsspInstance, Schedule
from .model import (
    GraphBatch,
    ModelConfig,
    SevalModel,
    StateEncoding,
    encode_state,
    kl_policy_loss,
    mse_self_eval_loss,
    policy_for_state,
    save_checkpoint,
    score_subsets_for_state,
    true_score,
    uniform_target,
)
from .state import (
    FeasibleAssignment,
    apply_subset_inplace,
    feasible_assignments,
    init_state,
    is_terminal,
    to_schedule,
)


class TrainingDiverged(RuntimeError):
    """Raised when a loss goes non-finite; the last good epoch is kept."""


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 256
    learning_rate: float = 3e-4
    adam_betas: tuple[float, float] = (0.9, 0.999)
    candidate_subsets: int = 16       # n candidates scored at inference
    se_subsets_per_sample: int = 8    # random subsets per sample in training
    inclusion_q_range: tuple[float, float] = (0.3, 0.9)
    grad_clip: float = 1.0
    seed: int = 0
    threads: int = 1

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.candidate_subsets < 1:
            raise ValueError("epochs, batch size, and subset count must be >= 1")


@dataclass
class TrainSample:
    """A dataset sample prepared for batching."""

    encoding: StateEncoding
    a_opt: tuple[int, ...]
    target: np.ndarray          # solver distribution over the feasible list
    jobs: list[int]             # job per feasible index (conflict checks)
    machines: list[int]         # machine per feasible index

    @property
    def n_feasible(self) -> int:
        return len(self.jobs)


def prepare_sample(sample: TrajectorySample) -> TrainSample:
    """Rebuild the state, check stored-vs-recomputed feasible agreement, and
    precompute network inputs."""
    state = sample.load_state()
    feasible = feasible_assignments(state)
    recomputed = [(a.job, a.machine, a.start, a.duration) for a in feasible]
    if recomputed != list(sample.feasible):
        raise ValueError(
            f"{sample.instance_id} step {sample.step_index}: stored feasible "
            f"list does not match the state"
        )
    return TrainSample(
        encoding=encode_state(state, feasible),
        a_opt=sample.a_opt,
        target=uniform_target(sample.a_opt, len(feasible)),
        jobs=[a.job for a in feasible],
        machines=[a.machine for a in feasible],
    )


def load_training_data(data_dir: Path | str) -> tuple[list[TrainSample], list[TrainSample]]:
    data_dir = Path(data_dir)
    train = [prepare_sample(s) for s in read_dataset_file(data_dir / "train.jsonl")]
    val = [prepare_sample(s) for s in read_dataset_file(data_dir / "val.jsonl")]
    return train, val


# ---------------------------------------------------------------------------
# Subset sampling
# ---------------------------------------------------------------------------

def sample_training_subsets(
    jobs: Sequence[int],
    machines: Sequence[int],
    a_opt: Sequence[int],
    rng: random.Random,
    count: int,
    q_range: tuple[float, float] = (0.3, 0.9),
) -> list[tuple[np.ndarray, float]]:
    """Random conflict-free subsets with their overlap scores.

    Each subset sweeps the feasible list once with inclusion probability q
    drawn per subset; empty sweeps are resampled.
    """
    n = len(jobs)
    out = []
    opt = set(a_opt)
    for _ in range(count):
        while True:
            q = rng.uniform(*q_range)
            bits = np.zeros(n, dtype=np.float64)
            used_jobs: set[int] = set()
            used_machines: set[int] = set()
            members = []
            for k in range(n):
                if jobs[k] in used_jobs or machines[k] in used_machines:
                    continue
                if rng.random() < q:
                    bits[k] = 1.0
                    members.append(k)
                    used_jobs.add(jobs[k])
                    used_machines.add(machines[k])
            if members:
                break
        score = len(opt.intersection(members)) / len(members)
        out.append((bits, score))
    return out


def greedy_subset(
    probs: np.ndarray, jobs: Sequence[int], machines: Sequence[int]
) -> list[int]:
    """Maximal conflict-free subset taken in descending probability order."""
    order = sorted(range(len(probs)), key=lambda k: (-probs[k], k))
    chosen: list[int] = []
    used_jobs: set[int] = set()
    used_machines: set[int] = set()
    for k in order:
        if jobs[k] in used_jobs or machines[k] in used_machines:
            continue
        chosen.append(k)
        used_jobs.add(jobs[k])
        used_machines.add(machines[k])
    return chosen


def sample_candidate_subsets(
    probs: np.ndarray,
    jobs: Sequence[int],
    machines: Sequence[int],
    n: int,
    rng: random.Random,
) -> list[list[int]]:
    """n candidate subsets: the greedy maximal subset first, then maximal
    subsets grown by sampling without replacement proportionally to the
    policy probabilities. Duplicates are allowed."""
    if n < 1:
        raise ValueError("need at least one candidate")
    candidates = [greedy_subset(probs, jobs, machines)]
    weights = np.maximum(np.asarray(probs, dtype=np.float64), 1e-12)
    for _ in range(n - 1):
        chosen: list[int] = []
        used_jobs: set[int] = set()
        used_machines: set[int] = set()
        addable = set(range(len(probs)))
        while addable:
            pool = sorted(addable)
            w = weights[pool]
            r = rng.random() * w.sum()
            acc = 0.0
            pick = pool[-1]
            for k, wk in zip(pool, w):
                acc += wk
                if r < acc:
                    pick = k
                    break
            chosen.append(pick)
            used_jobs.add(jobs[pick])
            used_machines.add(machines[pick])
            addable = {
                k for k in addable
                if jobs[k] not in used_jobs and machines[k] not in used_machines
            }
        candidates.append(chosen)
    return candidates


# ---------------------------------------------------------------------------
# Training (policy and scorer, per-batch alternation)
# ---------------------------------------------------------------------------

def _batch_tensors(samples: Sequence[TrainSample], dtype=torch.float32):
    batch = GraphBatch([s.encoding for s in samples], dtype=dtype)
    target = torch.zeros((len(samples), batch.max_len), dtype=dtype)
    for i, s in enumerate(samples):
        target[i, : s.n_feasible] = torch.as_tensor(s.target, dtype=dtype)
    return batch, target

def _subset_tensors(
    samples: Sequence[TrainSample],
    rng: random.Random,
    count: int,
    q_range: tuple[float, float],
    max_len: int,
    dtype=torch.float32,
):
    bits = torch.zeros((len(samples), count, max_len), dtype=dtype)
    scores = torch.zeros((len(samples), count), dtype=dtype)
    for i, s in enumerate(samples):
        for u, (b, sc) in enumerate(
            sample_training_subsets(s.jobs, s.machines, s.a_opt, rng, count, q_range)
        ):
            bits[i, u, : s.n_feasible] = torch.as_tensor(b, dtype=dtype)
            scores[i, u] = sc
    return bits, scores


def _evaluate(model, samples, cfg: TrainConfig, rng: random.Random):
    """Mean KL and subset-score MSE without gradient tracking."""
    model.eval()
    kl_total = mse_total = 0.0
    with torch.no_grad():
        for i in range(0, len(samples), cfg.batch_size):
            chunk = samples[i: i + cfg.batch_size]
            batch, target = _batch_tensors(chunk)
            h_job, h_mach, _ = model.encode(batch)
            tokens = model.assignment_tokens(batch, h_job, h_mach)
            probs = model.policy_probs(batch, tokens)
            kl_total += kl_policy_loss(probs, target, batch.pad_mask).item() * len(chunk)
            bits, scores = _subset_tensors(
                chunk, rng, cfg.se_subsets_per_sample, cfg.inclusion_q_range,
                batch.max_len,
            )
            pred = model.self_eval_scores(batch, tokens, bits)
            mse_total += mse_self_eval_loss(pred, scores).item() * len(chunk)
    model.train()
    return kl_total / len(samples), mse_total / len(samples)


def train(
    train_samples: Sequence[TrainSample],
    val_samples: Sequence[TrainSample],
    model_config: ModelConfig,
    config: TrainConfig,
    checkpoint_path: Path | str | None = None,
    metrics_path: Path | str | None = None,
) -> tuple[SevalModel, list[dict]]:
    """Run the two-model supervised loop; returns the model and epoch metrics.

    Deterministic for fixed seeds and thread count. A non-finite loss aborts
    with the previous epoch's weights saved.
    """
    if not train_samples:
        raise ValueError("training set is empty")
    torch.set_num_threads(config.threads)
    model = SevalModel(model_config)
    model.train()
    opt_policy = torch.optim.Adam(
        list(model.encoder_parameters()) + list(model.policy_parameters()),
        lr=config.learning_rate,
        betas=config.adam_betas,
    )
    opt_se = torch.optim.Adam(
        model.self_eval_parameters(),
        lr=config.learning_rate,
        betas=config.adam_betas,
    )
    rng = random.Random(config.seed)
    metrics: list[dict] = []
    last_good: dict | None = None
    samples = list(train_samples)

    for epoch in range(1, config.epochs + 1):
        rng.shuffle(samples)
        kl_sum = mse_sum = 0.0
        for i in range(0, len(samples), config.batch_size):
            chunk = samples[i: i + config.batch_size]
            batch, target = _batch_tensors(chunk)

            h_job, h_mach, _ = model.encode(batch)
            tokens = model.assignment_tokens(batch, h_job, h_mach)
            probs = model.policy_probs(batch, tokens)
            policy_loss = kl_policy_loss(probs, target, batch.pad_mask)

            opt_policy.zero_grad(set_to_none=True)
            policy_loss.backward()
            torch.nn.utils.clip_grad_norm_(
                [p for g in opt_policy.param_groups for p in g["params"]],
                config.grad_clip,
            )
            opt_policy.step()

            # scorer trains on the embeddings computed before the policy step
            bits, scores = _subset_tensors(
                chunk, rng, config.se_subsets_per_sample,
                config.inclusion_q_range, batch.max_len,
            )
            pred = model.self_eval_scores(batch, tokens.detach(), bits)
            se_loss = mse_self_eval_loss(pred, scores)
            opt_se.zero_grad(set_to_none=True)
            se_loss.backward()
            torch.nn.utils.clip_grad_norm_(
                [p for g in opt_se.param_groups for p in g["params"]],
                config.grad_clip,
            )
            opt_se.step()

            if not (torch.isfinite(policy_loss) and torch.isfinite(se_loss)):
                if checkpoint_path and last_good is not None:
                    model.load_state_dict(last_good)
                    save_checkpoint(checkpoint_path, model, {"diverged_epoch": epoch})
                raise TrainingDiverged(f"non-finite loss at epoch {epoch}")
            kl_sum += policy_loss.item() * len(chunk)
            mse_sum += se_loss.item() * len(chunk)

        row = {
            "epoch": epoch,
            "train_kl": kl_sum / len(samples),
            "train_mse": mse_sum / len(samples),
        }
        if val_samples:
            val_rng = random.Random(config.seed * 1_000_003 + epoch)
            row["val_kl"], row["val_mse"] = _evaluate(
                model, val_samples, config, val_rng
            )
        metrics.append(row)
        last_good = {k: v.clone() for k, v in model.state_dict().items()}

    model.eval()
    if checkpoint_path:
        save_checkpoint(
            checkpoint_path, model,
            {"train_config": asdict(config), "epochs_done": config.epochs},
        )
    if metrics_path:
        with open(metrics_path, "w", encoding="ascii") as fh:
            for row in metrics:
                fh.write(json.dumps(row, sort_keys=True) + "\n")
    return model, metrics


# ---------------------------------------------------------------------------
# Rollouts
# ---------------------------------------------------------------------------

def greedy_rollout(instance: JsspInstance, model: SevalModel) -> Schedule:
    """Apply the greedy maximal subset at every step; no subset scoring."""
    state = init_state(instance)
    while not is_terminal(state):
        feas = feasible_assignments(state)
        probs, _ = policy_for_state(model, state, feas)
        chosen = greedy_subset(
            probs, [a.job for a in feas], [a.machine for a in feas]
        )
        apply_subset_inplace(state, [feas[k] for k in chosen])
    return to_schedule(state)


def _scored_rollout(
    instance: JsspInstance, model: SevalModel, n: int, seed: int
) -> tuple[Schedule, int]:
    rng = random.Random(seed)
    state = init_state(instance)
    steps = 0
    while not is_terminal(state):
        feas = feasible_assignments(state)
        jobs = [a.job for a in feas]
        machines = [a.machine for a in feas]
        probs, batch_tokens = policy_for_state(model, state, feas)
        candidates = sample_candidate_subsets(probs, jobs, machines, n, rng)
        bits = np.zeros((len(candidates), len(feas)), dtype=np.float64)
        for c, members in enumerate(candidates):
            bits[c, members] = 1.0
        scores = score_subsets_for_state(model, batch_tokens, bits)
        best = int(np.argmax(scores))
        apply_subset_inplace(state, [feas[k] for k in candidates[best]])
        steps += 1
    return to_schedule(state), steps


def seval_rollout(
    instance: JsspInstance,
    model: SevalModel,
    n: int = 16,
    seed: int = 0,
) -> Schedule:
    """Sample n candidate subsets per step and execute the top-scored one
    (ties resolved toward the earliest candidate, i.e. the greedy one)."""
    schedule, _ = _scored_rollout(instance, model, n, seed)
    return schedule


def random_subset_rollout(
    instance: JsspInstance, rng: random.Random
) -> Schedule:
    """Uniformly shuffled conflict-free subsets; exercises the environment."""
    state = init_state(instance)
    while not is_terminal(state):
        feas = feasible_assignments(state)
        order = list(range(len(feas)))
        rng.shuffle(order)
        q = rng.uniform(0.3, 1.0)
        chosen = [order[0]]
        used_jobs = {feas[order[0]].job}
        used_machines = {feas[order[0]].machine}
        for k in order[1:]:
            if feas[k].job in used_jobs or feas[k].machine in used_machines:
                continue
            if rng.random() < q:
                chosen.append(k)
                used_jobs.add(feas[k].job)
                used_machines.add(feas[k].machine)
        apply_subset_inplace(state, [feas[k] for k in chosen])
    return to_schedule(state)


def rollout_step_count(instance: JsspInstance, model: SevalModel, n: int = 16,
                       seed: int = 0) -> int:
    """Number of subset transitions a scored rollout takes to finish."""
    _, steps = _scored_rollout(instance, model, n, seed)
    return steps
