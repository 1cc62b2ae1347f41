import math
import random

import numpy as np
import pytest
import torch

from seval_jssp.instance import JsspInstance, generate_instance
from seval_jssp.model import (
    GraphBatch,
    ModelConfig,
    SevalModel,
    encode_state,
    gradient_check,
    kl_policy_loss,
    load_checkpoint,
    mse_self_eval_loss,
    params_finite,
    policy_for_state,
    save_checkpoint,
    score_subsets_for_state,
    true_score,
    uniform_target,
)
from seval_jssp.state import feasible_assignments, init_state


@pytest.fixture(scope="module")
def model():
    m = SevalModel(ModelConfig.desk_profile(seed=3))
    m.eval()
    return m


def small_states(seeds, n=3, m=3):
    out = []
    for s in seeds:
        state = init_state(generate_instance(n, m, s))
        out.append(state)
    return out


class TestPolicyForward:
    def test_single_assignment_prob_one(self, model, one_by_one):
        probs, _ = policy_for_state(model, init_state(one_by_one))
        assert probs.shape == (1,)
        assert probs[0] == pytest.approx(1.0, abs=1e-6)

    def test_distribution_sums_to_one(self, model):
        for state in small_states(range(4), 5, 5):
            probs, _ = policy_for_state(model, state)
            assert probs.sum() == pytest.approx(1.0, abs=1e-6)
            assert (probs >= 0).all()

    def test_permutation_equivariance(self, model):
        state = init_state(generate_instance(5, 5, 11))
        feas = feasible_assignments(state)
        probs, _ = policy_for_state(model, state, feas)
        perm = np.random.RandomState(0).permutation(len(feas))
        probs_p, _ = policy_for_state(model, state, [feas[k] for k in perm])
        np.testing.assert_allclose(probs_p, probs[perm], atol=1e-5)

    def test_duplicate_tokens_equal_probability(self, model):
        # two identical jobs produce identical assignment tokens
        inst = JsspInstance(2, 2, (((0, 4), (1, 2)), ((0, 4), (1, 2))))
        state = init_state(inst)
        probs, _ = policy_for_state(model, state)
        assert probs[0] == pytest.approx(probs[1], abs=1e-6)

    def test_job_relabeling_permutes_embeddings(self, model):
        inst = generate_instance(4, 4, 21)
        swapped = JsspInstance(
            4, 4, (inst.jobs[1], inst.jobs[0]) + inst.jobs[2:], name="swap"
        )
        b1 = GraphBatch([encode_state(init_state(inst))])
        b2 = GraphBatch([encode_state(init_state(swapped))])
        with torch.no_grad():
            h1, _, _ = model.encode(b1)
            h2, _, _ = model.encode(b2)
        np.testing.assert_allclose(h2[0].numpy(), h1[1].numpy(), atol=1e-5)
        np.testing.assert_allclose(h2[1].numpy(), h1[0].numpy(), atol=1e-5)


class TestSelfEvalForward:
    def test_scores_bounded(self, model):
        state = init_state(generate_instance(5, 5, 13))
        feas = feasible_assignments(state)
        _, bt = policy_for_state(model, state, feas)
        rng = np.random.RandomState(1)
        bits = (rng.random((8, len(feas))) < 0.5).astype(float)
        bits[:, 0] = 1  # non-empty
        scores = score_subsets_for_state(model, bt, bits)
        assert ((scores >= 0) & (scores <= 1)).all()

    def test_permutation_invariance(self, model):
        state = init_state(generate_instance(5, 5, 17))
        feas = feasible_assignments(state)
        _, bt = policy_for_state(model, state, feas)
        bits = np.zeros((2, len(feas)))
        bits[0, :2] = 1
        bits[1, 1:4] = 1
        base = score_subsets_for_state(model, bt, bits)
        perm = np.random.RandomState(2).permutation(len(feas))
        _, bt_p = policy_for_state(model, state, [feas[k] for k in perm])
        perm_scores = score_subsets_for_state(model, bt_p, bits[:, perm])
        np.testing.assert_allclose(perm_scores, base, atol=1e-5)

    def test_identical_inputs_identical_scores(self, model):
        state = init_state(generate_instance(4, 4, 19))
        feas = feasible_assignments(state)
        _, bt = policy_for_state(model, state, feas)
        bits = np.zeros((2, len(feas)))
        bits[:, :2] = 1
        scores = score_subsets_for_state(model, bt, bits)
        assert scores[0] == scores[1]


class TestResidualStructure:
    def test_zero_layers_equal_input_projection(self):
        cfg = ModelConfig.desk_profile(seed=5)
        cfg.hgnn_layers = 0
        m = SevalModel(cfg)
        batch = GraphBatch([encode_state(init_state(generate_instance(3, 3, 2)))])
        with torch.no_grad():
            h_job, h_mach, _ = m.encode(batch)
            np.testing.assert_allclose(
                h_job.numpy(), m.job_in(batch.job_x).numpy(), atol=1e-7
            )
            np.testing.assert_allclose(
                h_mach.numpy(), m.mach_in(batch.mach_x).numpy(), atol=1e-7
            )

    def test_zeroed_layers_keep_residual_stream(self):
        m = SevalModel(ModelConfig.desk_profile(seed=6))
        with torch.no_grad():
            for name, p in m.named_parameters():
                if name.startswith("hgnn."):
                    p.zero_()
        batch = GraphBatch([encode_state(init_state(generate_instance(3, 3, 2)))])
        with torch.no_grad():
            h_job, _, _ = m.encode(batch)
            np.testing.assert_allclose(
                h_job.numpy(), m.job_in(batch.job_x).numpy(), atol=1e-7
            )

    def test_single_neighbor_attention_is_identity_weight(self, model, one_by_one):
        # softmax over one element is 1 regardless of parameters, so the
        # machine aggregates exactly its single op message
        state = init_state(one_by_one)
        batch = GraphBatch([encode_state(state)])
        layer = model.hgnn[0]
        with torch.no_grad():
            h_job = model.job_in(batch.job_x)
            h_mach = model.mach_in(batch.mach_x)
            h_op = model.op_in(batch.op_x)
            mo_emb = model.mo_edge_in(batch.mo_feat)
            att = layer.mach_from_op
            expected = (
                att.w_src(h_op).view(1, att.heads, att.dim)
                + att.w_edge(mo_emb).view(1, att.heads, att.dim)
            ).mean(1)
            got = att(h_mach, h_op, batch.mo_dst, batch.mo_src, mo_emb)
        np.testing.assert_allclose(got.numpy(), expected.numpy(), atol=1e-6)


class TestLosses:
    def test_kl_identity_zero(self):
        p = torch.tensor([[0.25, 0.75]], dtype=torch.float64)
        assert kl_policy_loss(p, p).item() == pytest.approx(0.0, abs=1e-12)

    def test_kl_clamped_and_decreasing(self):
        target = torch.tensor([[1.0, 0.0]], dtype=torch.float64)

        def kl_at(p0):
            pred = torch.tensor([[p0, 1 - p0]], dtype=torch.float64)
            return kl_policy_loss(pred, target).item()

        uniform = kl_at(0.5)
        expected = 0.5 * math.log(0.5 / 1.0) + 0.5 * (math.log(0.5) - math.log(1e-8))
        assert uniform == pytest.approx(expected, rel=1e-9)
        assert math.isfinite(uniform)
        assert kl_at(0.9) < kl_at(0.7) < uniform

    def test_kl_non_negative_on_random_pairs(self):
        rng = np.random.RandomState(0)
        for _ in range(20):
            p = rng.dirichlet(np.ones(5))[None, :]
            q = rng.dirichlet(np.ones(5))[None, :]
            v = kl_policy_loss(
                torch.as_tensor(p, dtype=torch.float64),
                torch.as_tensor(q, dtype=torch.float64),
            ).item()
            assert v >= -1e-12

    def test_kl_gradient_zero_at_symmetric_point(self):
        logits = torch.zeros(4, dtype=torch.float64, requires_grad=True)
        probs = torch.softmax(logits, dim=0)[None, :]
        target = torch.full((1, 4), 0.25, dtype=torch.float64)
        kl_policy_loss(probs, target).backward()
        np.testing.assert_allclose(logits.grad.numpy(), np.zeros(4), atol=1e-12)

    def test_kl_shape_mismatch(self):
        with pytest.raises(ValueError, match="shape"):
            kl_policy_loss(torch.ones(1, 2), torch.ones(1, 3))

    def test_mse_cases(self):
        z = torch.zeros(3, dtype=torch.float64)
        o = torch.ones(3, dtype=torch.float64)
        assert mse_self_eval_loss(o, o).item() == 0.0
        assert mse_self_eval_loss(z, o).item() == 1.0
        got = mse_self_eval_loss(
            torch.tensor([0.2, 0.9], dtype=torch.float64),
            torch.tensor([0.5, 0.5], dtype=torch.float64),
        ).item()
        assert got == pytest.approx(0.125, abs=1e-12)

    def test_true_score(self):
        a_opt = [(0, 3), (3, 1)]
        assert true_score([(0, 3)], a_opt) == 1.0
        assert true_score([(2, 2)], a_opt) == 0.0
        assert true_score([(0, 3), (3, 1), (2, 2), (1, 0)], a_opt) == 0.5
        with pytest.raises(ValueError):
            true_score([], a_opt)

    def test_uniform_target(self):
        t = uniform_target((1, 3), 5)
        assert t.tolist() == [0.0, 0.5, 0.0, 0.5, 0.0]


def _check_inputs(seeds, model_cfg_seed=3):
    encodings = [encode_state(s) for s in small_states(seeds)]
    targets = [uniform_target((0,), e.n_tokens) for e in encodings]
    max_len = max(e.n_tokens for e in encodings)
    rng = np.random.RandomState(0)
    bits = np.zeros((len(encodings), 2, max_len))
    for i, e in enumerate(encodings):
        bits[i, 0, 0] = 1
        bits[i, 1, : min(2, e.n_tokens)] = 1
    scores = rng.random((len(encodings), 2))
    return encodings, targets, bits, scores


class TestGradientCheck:
    def test_small_batch_under_tolerance(self, model):
        enc, targets, bits, scores = _check_inputs((0, 1))
        err = gradient_check(model, enc, targets, bits, scores, seed=5)
        assert err <= 1e-4

    def test_fd_step_sweep_reaches_tolerance(self, model):
        enc, targets, bits, scores = _check_inputs((2,))
        errs = {
            h: gradient_check(model, enc, targets, bits, scores, step=h, seed=9)
            for h in (1e-3, 1e-4, 1e-5)
        }
        # truncation error shrinks with the step until round-off dominates
        assert errs[1e-4] <= errs[1e-3]
        assert errs[1e-5] <= 1e-4 and errs[1e-4] <= 1e-4

    def test_parameters_finite(self, model):
        assert params_finite(model)


class TestCheckpoints:
    def test_round_trip(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, {"note": "x"})
        loaded, meta = load_checkpoint(path)
        assert meta == {"note": "x"}
        for (n1, p1), (n2, p2) in zip(
            model.named_parameters(), loaded.named_parameters()
        ):
            assert n1 == n2
            assert torch.equal(p1, p2)

    def test_shape_mismatch_rejected(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, {})
        payload = torch.load(path, weights_only=True)
        payload["state_dict"]["job_in.weight"] = torch.zeros(2, 2)
        torch.save(payload, path)
        with pytest.raises(ValueError, match="shape mismatch"):
            load_checkpoint(path)

    def test_format_rejected(self, model, tmp_path):
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model, {})
        payload = torch.load(path, weights_only=True)
        payload["format"] = "other-v9"
        torch.save(payload, path)
        with pytest.raises(ValueError, match="format"):
            load_checkpoint(path)

    def test_init_deterministic_by_seed(self):
        a = SevalModel(ModelConfig.desk_profile(seed=8))
        b = SevalModel(ModelConfig.desk_profile(seed=8))
        c = SevalModel(ModelConfig.desk_profile(seed=9))
        for p1, p2 in zip(a.parameters(), b.parameters()):
            assert torch.equal(p1, p2)
        assert any(
            not torch.equal(p1, p3)
            for p1, p3 in zip(a.parameters(), c.parameters())
        )
