import hashlib
import json
import random
from pathlib import Path

import pytest

from seval_jssp.dataset import (
    DATASET_FORMAT,
    REJECT_SCORE_RATIO,
    SCORE_RATIO_LIMIT,
    TrajectorySample,
    build_dataset,
    extract_trajectory,
    perturb_and_extract,
    read_dataset_file,
    write_dataset_file,
)
from seval_jssp.instance import generate_instance
from seval_jssp.oracle import solve_exact
from seval_jssp.state import apply_subset_inplace, feasible_assignments


def file_hash(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class TestExtractTrajectory:
    def test_one_by_one_single_sample(self, one_by_one):
        sol = solve_exact(one_by_one)
        samples = extract_trajectory(one_by_one, sol.schedule, instance_id="one")
        assert len(samples) == 1
        assert samples[0].a_opt == (0,)
        assert samples[0].feasible == [(0, 0, 0, 5)]

    def test_ref4x4_replay_reproduces_start_times(self, ref4x4):
        sol = solve_exact(ref4x4)
        samples = extract_trajectory(ref4x4, sol.schedule, instance_id="ref")
        for sample in samples:
            state = sample.load_state()
            for k in sample.a_opt:
                job, mach, start, dur = sample.feasible[k]
                op_index = state.next_op[job]
                assert sol.schedule.starts[job][op_index] == start

    def test_event_conservation(self):
        for seed in range(15):
            inst = generate_instance(4, 4, 800 + seed)
            sol = solve_exact(inst)
            samples = extract_trajectory(inst, sol.schedule)
            assert sum(len(s.a_opt) for s in samples) == inst.total_ops
            assert len(samples) < inst.total_ops  # batching compresses steps

    def test_more_jobs_than_machines(self):
        # the truncated view cannot always carry every batched assignment
        for seed in range(10):
            inst = generate_instance(5, 3, 900 + seed)
            sol = solve_exact(inst)
            samples = extract_trajectory(inst, sol.schedule)
            total = sum(len(s.a_opt) for s in samples)
            assert 0 < total <= inst.total_ops
            for s in samples:
                assert len(s.feasible) <= inst.num_machines

    def test_stored_subsets_conflict_free_and_replayable(self):
        inst = generate_instance(5, 5, 321)
        sol = solve_exact(inst)
        for sample in extract_trajectory(inst, sol.schedule):
            machines = [sample.feasible[k][1] for k in sample.a_opt]
            jobs = [sample.feasible[k][0] for k in sample.a_opt]
            assert len(set(machines)) == len(machines)
            assert len(set(jobs)) == len(jobs)
            state = sample.load_state()
            feas = feasible_assignments(state)
            assert [(a.job, a.machine, a.start, a.duration) for a in feas] == [
                tuple(f) for f in sample.feasible
            ]
            apply_subset_inplace(state, [feas[k] for k in sample.a_opt])


class TestPerturbAndExtract:
    def test_degenerate_zero_perturbations(self):
        inst = generate_instance(6, 6, 7)
        res = perturb_and_extract(inst, random.Random(3), max_random_actions=0)
        assert res.accepted
        assert res.new_score == res.score_optimal
        assert res.score_ratio == 1.0

    def test_retained_outputs_within_ratio(self):
        accepted = rejected = 0
        for seed in range(25):
            inst = generate_instance(6, 6, 1000 + seed)
            res = perturb_and_extract(inst, random.Random(seed))
            if res.accepted:
                accepted += 1
                assert res.new_score / res.score_optimal <= SCORE_RATIO_LIMIT
            else:
                rejected += 1
                assert res.reason is not None
        assert accepted > 0
        assert rejected > 0  # thirty random actions on 36 ops usually hurt

    def test_samples_start_mid_rollout(self):
        inst = generate_instance(6, 6, 55)
        rng = random.Random(1)
        res = perturb_and_extract(inst, rng)
        if res.accepted and res.samples:
            first = res.samples[0].load_state()
            assert first.pending_total <= inst.total_ops


class TestBuildDataset:
    def test_manifest_counts_match_files(self, tmp_path):
        manifest = build_dataset(10, 3, 3, 17, tmp_path, workers=1)
        train = read_dataset_file(tmp_path / "train.jsonl")
        val = read_dataset_file(tmp_path / "val.jsonl")
        assert manifest.train_samples == len(train)
        assert manifest.val_samples == len(val)
        assert (
            manifest.clean_trajectories
            + manifest.perturbed_trajectories
            + manifest.rejected_perturbations
            + manifest.oracle_failures
            == manifest.instance_count
        )
        on_disk = json.loads((tmp_path / "manifest.json").read_text())
        assert on_disk["train_samples"] == len(train)

    def test_byte_identical_across_runs_and_workers(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        build_dataset(8, 3, 3, 23, a, workers=2)
        build_dataset(8, 3, 3, 23, b, workers=1)
        for name in ("train.jsonl", "val.jsonl", "manifest.json"):
            assert file_hash(a / name) == file_hash(b / name)

    def test_oracle_failures_abort_when_pervasive(self, tmp_path):
        with pytest.raises(RuntimeError, match="10%"):
            build_dataset(
                4, 6, 6, 3, tmp_path, workers=1, time_limit=1e-9,
                perturbed_fraction=0.0,
            )

    def test_header_and_round_trip(self, tmp_path):
        manifest = build_dataset(6, 3, 3, 29, tmp_path, workers=1)
        path = tmp_path / "train.jsonl"
        header = json.loads(path.read_text().splitlines()[0])
        assert header["format"] == DATASET_FORMAT
        samples = read_dataset_file(path)
        rewritten = tmp_path / "rewrite.jsonl"
        write_dataset_file(rewritten, "train", [s.to_json_obj() for s in samples])
        assert file_hash(rewritten) == file_hash(path)

    def test_bad_header_rejected(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"format":"other","count":0,"split":"train"}\n')
        with pytest.raises(ValueError, match="format"):
            read_dataset_file(bad)

    def test_count_mismatch_rejected(self, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text('{"format":"%s","count":3,"split":"train"}\n' % DATASET_FORMAT)
        with pytest.raises(ValueError, match="count"):
            read_dataset_file(bad)
