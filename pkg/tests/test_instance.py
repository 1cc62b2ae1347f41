import random

import pytest
from scipy import stats

from seval_jssp.instance import (
    JsspInstance,
    ParseError,
    Schedule,
    generate_instance,
    instance_to_text,
    job_length_bound,
    machine_load_bound,
    makespan,
    optimal_gap,
    parse_standard,
    parse_taillard,
    schedule_to_text,
    validate_schedule,
)
from seval_jssp.oracle import dispatch_solve

from conftest import REF4X4_TEXT


class TestParseStandard:
    def test_smallest_instance(self):
        inst = parse_standard("1 1\n0 5")
        assert inst.num_jobs == 1 and inst.num_machines == 1
        assert inst.jobs == (((0, 5),),)

    def test_ref4x4_parses_to_12_ops(self):
        inst = parse_standard(REF4X4_TEXT)
        assert inst.total_ops == 12
        assert inst.jobs[0] == ((3, 5), (1, 6), (0, 3), (2, 2))
        assert [len(ops) for ops in inst.jobs] == [4, 2, 3, 3]

    def test_comments_and_blank_lines_skipped(self):
        inst = parse_standard("# header comment\n\n1 2\n# job comment\n0 3 1 4\n")
        assert inst.jobs == (((0, 3), (1, 4)),)

    def test_job_count_mismatch(self):
        with pytest.raises(ParseError, match="job-count mismatch"):
            parse_standard("2 3\n0 1 1 1\n1 1 2 1\n2 1 0 1\n")

    def test_malformed_header(self):
        with pytest.raises(ParseError, match="header"):
            parse_standard("nope nope\n0 5")
        with pytest.raises(ParseError, match="header"):
            parse_standard("3\n0 5")

    def test_odd_pair_count_reports_line(self):
        with pytest.raises(ParseError, match="line 2.*pairs"):
            parse_standard("1 2\n0 3 1\n")

    def test_machine_out_of_range(self):
        with pytest.raises(ParseError, match="machine index 5"):
            parse_standard("1 2\n5 3\n")

    def test_non_positive_duration(self):
        with pytest.raises(ParseError, match="non-positive duration"):
            parse_standard("1 1\n0 0\n")

    def test_round_trip(self):
        for seed in range(5):
            inst = generate_instance(4, 3, seed)
            assert parse_standard(instance_to_text(inst)) == inst


class TestParseTaillard:
    def test_one_by_one_body(self):
        inst = parse_taillard("1 1\n5\n1")
        assert inst.jobs == (((0, 5),),)

    def test_two_matrix_layout(self):
        text = "2 3\n5 7 9\n4 4 4\n1 2 3\n3 1 2\n"
        inst = parse_taillard(text)
        assert inst.jobs[0] == ((0, 5), (1, 7), (2, 9))
        assert inst.jobs[1] == ((2, 4), (0, 4), (1, 4))

    def test_published_header_and_labels(self):
        # the published files carry seeds/bounds on the header line and
        # "Times"/"Machines" label lines
        text = (
            "2 2 840612802 398197754 100 90\n"
            "Times\n10 20\n30 40\nMachines\n1 2\n2 1\n"
        )
        inst = parse_taillard(text)
        assert inst.jobs == (((0, 10), (1, 20)), ((1, 30), (0, 40)))

    def test_fifteen_by_fifteen_layout(self):
        src = generate_instance(15, 15, 3)
        times = "\n".join(" ".join(str(d) for _, d in ops) for ops in src.jobs)
        machines = "\n".join(
            " ".join(str(m + 1) for m, _ in ops) for ops in src.jobs
        )
        inst = parse_taillard(f"15 15\n{times}\n{machines}\n")
        assert inst.total_ops == 225
        for ops in inst.jobs:
            assert sorted(m for m, _ in ops) == list(range(15))
        assert inst == src

    def test_non_permutation_rejected(self):
        with pytest.raises(ParseError, match="not a permutation"):
            parse_taillard("1 3\n4 5 6\n1 1 2\n")

    def test_dimension_mismatch(self):
        with pytest.raises(ParseError, match="dimension mismatch"):
            parse_taillard("2 2\n1 2\n3 4\n1 2\n")


class TestGenerate:
    def test_smallest(self):
        inst = generate_instance(1, 1, 0)
        assert inst.total_ops == 1
        assert 1 <= inst.jobs[0][0][1] <= 99

    def test_deterministic(self):
        assert generate_instance(6, 6, 42) == generate_instance(6, 6, 42)
        assert generate_instance(6, 6, 42) != generate_instance(6, 6, 43)

    def test_rows_are_machine_permutations(self):
        inst = generate_instance(20, 15, 7)
        assert inst.total_ops == 300
        for ops in inst.jobs:
            assert sorted(m for m, _ in ops) == list(range(15))

    def test_duration_distribution_uniform(self):
        durations = []
        seed = 0
        while len(durations) < 10_000:
            inst = generate_instance(10, 10, 5000 + seed)
            durations.extend(d for ops in inst.jobs for _, d in ops)
            seed += 1
        counts = [0] * 99
        for d in durations:
            counts[d - 1] += 1
        assert stats.chisquare(counts).pvalue > 0.01

    def test_validates_args(self):
        with pytest.raises(ValueError):
            generate_instance(0, 3, 1)


class TestMakespanAndValidation:
    def test_single_op(self, one_by_one):
        sched = Schedule(((0,),))
        assert makespan(one_by_one, sched) == 5
        assert validate_schedule(one_by_one, sched) == []

    def test_two_jobs_one_machine_back_to_back(self):
        inst = JsspInstance(2, 1, (((0, 3),), ((0, 4),)))
        sched = Schedule(((0,), (3,)))
        assert makespan(inst, sched) == 7
        assert validate_schedule(inst, sched) == []

    def test_incomplete_schedule_rejected(self, ref4x4):
        with pytest.raises(ValueError, match="cover"):
            makespan(ref4x4, Schedule(((0,),)))

    def test_machine_overlap_detected(self):
        inst = JsspInstance(2, 1, (((0, 3),), ((0, 4),)))
        violations = validate_schedule(inst, Schedule(((0,), (2,))))
        assert len(violations) == 1
        assert violations[0].kind == "machine-overlap"
        assert {violations[0].op_a, violations[0].op_b} == {(0, 0), (1, 0)}

    def test_precedence_violation_detected(self):
        inst = JsspInstance(1, 2, (((0, 5), (1, 2)),))
        violations = validate_schedule(inst, Schedule(((0, 3),)))
        assert [v.kind for v in violations] == ["precedence"]
        assert violations[0].op_a == (0, 0) and violations[0].op_b == (0, 1)

    def test_dispatch_schedules_beat_classical_bounds(self):
        for seed in range(10):
            inst = generate_instance(5, 4, seed)
            sched = dispatch_solve(inst, "spt").schedule
            ms = makespan(inst, sched)
            assert ms >= machine_load_bound(inst)
            assert ms >= job_length_bound(inst)

    def test_export_format(self, one_by_one):
        text = schedule_to_text(one_by_one, Schedule(((0,),)))
        assert text.splitlines() == ["0 0 0 0 5", "makespan 5"]


class TestOptimalGap:
    @pytest.mark.parametrize(
        "achieved,reference,expected",
        [(100, 100, 0.0), (110, 100, 10.0), (1070, 1000, 7.0)],
    )
    def test_hand_computed(self, achieved, reference, expected):
        assert optimal_gap(achieved, reference) == expected

    def test_identity_property(self):
        rng = random.Random(0)
        for _ in range(50):
            x = rng.randint(1, 10_000)
            assert optimal_gap(x, x) == 0.0

    def test_negative_gap_allowed(self):
        assert optimal_gap(90, 100) == pytest.approx(-10.0)

    def test_reference_must_be_positive(self):
        with pytest.raises(ValueError):
            optimal_gap(10, 0)
        with pytest.raises(ValueError):
            optimal_gap(10, -5)
