"""Networks: typed-graph attention encoder, policy head, subset-scoring head.

The encoder runs L rounds of GATv2-style attention over the scheduling
graph's typed edges and keeps a residual stream per node. Both heads are
small Transformer encoders over assignment tokens (job embedding, machine
embedding, edge features); the scoring head additionally sees one
inclusion bit per token and mean-pools to a scalar in [0, 1].

Assignment tokens form a set, so neither head uses positional encodings;
permutation equivariance (policy) and invariance (scorer) are tested
properties.
"""

from __future__ import annotations

import copy
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
from torch import nn

from .state import (
    EDGE_FEATURES,
    JOB_FEATURES,
    MACHINE_FEATURES,
    OP_FEATURES,
    TIME_COLUMNS_EDGE,
    FeasibleAssignment,
    SchedState,
    assignment_edge_features,
    feasible_assignments,
    normalized_feature_matrices,
)

CHECKPOINT_FORMAT = "sevalckpt-v1"

LEAKY_SLOPE = 0.2
PROB_CLAMP = 1e-8


@dataclass
class ModelConfig:
    """Hyperparameters for the encoder and both heads."""

    hgnn_layers: int = 6
    hgnn_dim: int = 32
    hgnn_heads: int = 3
    tf_layers: int = 4
    tf_heads: int = 8
    tf_dim: int = 128
    tf_ff_dim: int = 128
    seed: int = 0

    @classmethod
    def desk_profile(cls, seed: int = 0) -> "ModelConfig":
        """Half-size profile for laptop-scale training runs."""
        return cls(
            hgnn_layers=3, hgnn_dim=16, hgnn_heads=3,
            tf_layers=2, tf_heads=4, tf_dim=64, tf_ff_dim=64, seed=seed,
        )


# ---------------------------------------------------------------------------
# State encodings and batching
# ---------------------------------------------------------------------------

@dataclass
class StateEncoding:
    """Numpy bundle for one state: node features, typed edges, tokens."""

    job_x: np.ndarray            # (n_jobs, JOB_FEATURES), normalized
    mach_x: np.ndarray           # (n_machines, MACHINE_FEATURES)
    op_x: np.ndarray             # (n_ops, OP_FEATURES)
    mo_dst: np.ndarray           # machine index per machine-op edge
    mo_src: np.ndarray           # op row per machine-op edge
    mo_feat: np.ndarray          # (E_mo, EDGE_FEATURES), normalized
    prec_dst: np.ndarray         # successor op row per precedence edge
    prec_src: np.ndarray         # predecessor op row
    oj_dst: np.ndarray           # job index per op-job edge
    oj_src: np.ndarray           # op row
    mj_dst: np.ndarray           # machine index per machine-job edge
    mj_src: np.ndarray           # job index
    mj_feat: np.ndarray          # (E_mj, EDGE_FEATURES)
    token_job: np.ndarray        # job index per feasible assignment
    token_mach: np.ndarray       # machine index per feasible assignment
    token_edge: np.ndarray       # (n_feasible, EDGE_FEATURES)

    @property
    def n_tokens(self) -> int:
        return len(self.token_job)


def encode_state(
    state: SchedState, feasible: Sequence[FeasibleAssignment] | None = None
) -> StateEncoding:
    """Build the network-input bundle for one state."""
    if feasible is None:
        feasible = feasible_assignments(state)
    view = normalized_feature_matrices(state)
    token_edge = assignment_edge_features(state, feasible)
    for col in TIME_COLUMNS_EDGE:
        token_edge[:, col] /= state.norm_constant

    def idx(pairs, pos):
        return np.array([p[pos] for p in pairs], dtype=np.int64)

    return StateEncoding(
        job_x=view.job_features,
        mach_x=view.machine_features,
        op_x=view.op_features,
        mo_dst=idx(view.mo_edges, 0),
        mo_src=idx(view.mo_edges, 1),
        mo_feat=view.mo_edge_features,
        prec_dst=idx(view.prec_edges, 1),
        prec_src=idx(view.prec_edges, 0),
        oj_dst=idx(view.oj_edges, 1),
        oj_src=idx(view.oj_edges, 0),
        mj_dst=idx(view.mj_edges, 0),
        mj_src=idx(view.mj_edges, 1),
        mj_feat=view.mj_edge_features,
        token_job=np.array([a.job for a in feasible], dtype=np.int64),
        token_mach=np.array([a.machine for a in feasible], dtype=np.int64),
        token_edge=token_edge,
    )


class GraphBatch:
    """A block-diagonal batch of state graphs plus padded token indexing."""

    def __init__(self, encodings: Sequence[StateEncoding], dtype=torch.float32):
        self.size = len(encodings)
        self.dtype = dtype

        def cat_f(mats, width):
            mats = [m.reshape(-1, width) for m in mats]
            out = np.concatenate(mats, axis=0) if mats else np.zeros((0, width))
            return torch.as_tensor(out, dtype=dtype)

        job_off, mach_off, op_off = [], [], []
        j = m = o = 0
        for e in encodings:
            job_off.append(j); mach_off.append(m); op_off.append(o)
            j += len(e.job_x); m += len(e.mach_x); o += len(e.op_x)
        self.num_jobs, self.num_machines, self.num_ops = j, m, o

        self.job_x = cat_f([e.job_x for e in encodings], JOB_FEATURES)
        self.mach_x = cat_f([e.mach_x for e in encodings], MACHINE_FEATURES)
        self.op_x = cat_f([e.op_x for e in encodings], OP_FEATURES)

        def cat_i(parts):
            return torch.as_tensor(
                np.concatenate(parts) if parts else np.zeros(0), dtype=torch.int64
            )

        self.mo_dst = cat_i([e.mo_dst + mo for e, mo in zip(encodings, mach_off)])
        self.mo_src = cat_i([e.mo_src + oo for e, oo in zip(encodings, op_off)])
        self.mo_feat = cat_f([e.mo_feat for e in encodings], EDGE_FEATURES)
        self.prec_dst = cat_i([e.prec_dst + oo for e, oo in zip(encodings, op_off)])
        self.prec_src = cat_i([e.prec_src + oo for e, oo in zip(encodings, op_off)])
        self.oj_dst = cat_i([e.oj_dst + jo for e, jo in zip(encodings, job_off)])
        self.oj_src = cat_i([e.oj_src + oo for e, oo in zip(encodings, op_off)])
        self.mj_dst = cat_i([e.mj_dst + mo for e, mo in zip(encodings, mach_off)])
        self.mj_src = cat_i([e.mj_src + jo for e, jo in zip(encodings, job_off)])
        self.mj_feat = cat_f([e.mj_feat for e in encodings], EDGE_FEATURES)

        self.lengths = torch.as_tensor(
            [e.n_tokens for e in encodings], dtype=torch.int64
        )
        self.max_len = int(self.lengths.max().item()) if self.size else 0
        self.token_job = cat_i([e.token_job + jo for e, jo in zip(encodings, job_off)])
        self.token_mach = cat_i(
            [e.token_mach + mo for e, mo in zip(encodings, mach_off)]
        )
        self.token_edge = cat_f([e.token_edge for e in encodings], EDGE_FEATURES)
        self.token_sample = cat_i(
            [np.full(e.n_tokens, s) for s, e in enumerate(encodings)]
        )
        self.token_pos = cat_i([np.arange(e.n_tokens) for e in encodings])
        # True marks padding, the convention of key_padding_mask
        self.pad_mask = torch.ones((self.size, self.max_len), dtype=torch.bool)
        self.pad_mask[self.token_sample, self.token_pos] = False


# ---------------------------------------------------------------------------
# Attention encoder
# ---------------------------------------------------------------------------

def _segment_softmax(scores: torch.Tensor, seg: torch.Tensor, n_seg: int):
    """Softmax of scores grouped by segment id; scores is (E, H)."""
    heads = scores.shape[1]
    m = torch.full((n_seg, heads), -torch.inf, dtype=scores.dtype)
    m = m.scatter_reduce(0, seg.unsqueeze(1).expand_as(scores), scores, "amax")
    ex = torch.exp(scores - m[seg])
    denom = torch.zeros((n_seg, heads), dtype=scores.dtype)
    denom = denom.index_add(0, seg, ex)
    return ex / denom[seg]


class EdgeAttention(nn.Module):
    """One typed-edge aggregation: destination nodes attend over sources.

    Attention logits score the concatenation of the transformed destination,
    source, and (when present) edge vectors; messages are the transformed
    source plus edge term, averaged over heads.
    """

    def __init__(self, dim: int, heads: int, with_edge: bool):
        super().__init__()
        self.dim = dim
        self.heads = heads
        self.with_edge = with_edge
        self.w_dst = nn.Linear(dim, heads * dim, bias=False)
        self.w_src = nn.Linear(dim, heads * dim, bias=False)
        self.w_edge = nn.Linear(dim, heads * dim, bias=False) if with_edge else None
        parts = 3 if with_edge else 2
        self.att = nn.Parameter(torch.empty(heads, parts * dim))

    def forward(self, h_dst, h_src, dst_idx, src_idx, edge_emb=None):
        n_dst = h_dst.shape[0]
        if dst_idx.numel() == 0:
            return torch.zeros((n_dst, self.dim), dtype=h_dst.dtype)
        e = dst_idx.shape[0]
        d = self.w_dst(h_dst)[dst_idx].view(e, self.heads, self.dim)
        s = self.w_src(h_src)[src_idx].view(e, self.heads, self.dim)
        if self.with_edge:
            ee = self.w_edge(edge_emb).view(e, self.heads, self.dim)
            z = torch.cat([d, s, ee], dim=-1)
            msg = s + ee
        else:
            z = torch.cat([d, s], dim=-1)
            msg = s
        z = nn.functional.leaky_relu(z, LEAKY_SLOPE)
        scores = (z * self.att).sum(-1)
        alpha = _segment_softmax(scores, dst_idx, n_dst)
        agg = torch.zeros((n_dst, self.heads, self.dim), dtype=h_dst.dtype)
        agg = agg.index_add(0, dst_idx, alpha.unsqueeze(-1) * msg)
        return agg.mean(dim=1)


class HgnnLayer(nn.Module):
    """Synchronous residual update of machine, operation, and job nodes."""

    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.mach_from_op = EdgeAttention(dim, heads, with_edge=True)
        self.mach_from_job = EdgeAttention(dim, heads, with_edge=True)
        self.op_from_prec = EdgeAttention(dim, heads, with_edge=False)
        self.op_from_mach = EdgeAttention(dim, heads, with_edge=True)
        self.job_from_op = EdgeAttention(dim, heads, with_edge=False)
        self.job_from_mach = EdgeAttention(dim, heads, with_edge=True)

    def forward(self, h_job, h_mach, h_op, batch: GraphBatch, mo_emb, mj_emb):
        mach_new = nn.functional.elu(
            self.mach_from_op(h_mach, h_op, batch.mo_dst, batch.mo_src, mo_emb)
            + self.mach_from_job(h_mach, h_job, batch.mj_dst, batch.mj_src, mj_emb)
        )
        op_new = nn.functional.elu(
            self.op_from_prec(h_op, h_op, batch.prec_dst, batch.prec_src)
            + self.op_from_mach(h_op, h_mach, batch.mo_src, batch.mo_dst, mo_emb)
        )
        job_new = nn.functional.elu(
            self.job_from_op(h_job, h_op, batch.oj_dst, batch.oj_src)
            + self.job_from_mach(h_job, h_mach, batch.mj_src, batch.mj_dst, mj_emb)
        )
        return h_job + job_new, h_mach + mach_new, h_op + op_new


class TransformerBlock(nn.Module):
    """Post-norm encoder block: self-attention then GELU feed-forward."""

    def __init__(self, dim: int, heads: int, ff_dim: int):
        super().__init__()
        self.attn = nn.MultiheadAttention(dim, heads, batch_first=True)
        self.norm1 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(
            nn.Linear(dim, ff_dim), nn.GELU(), nn.Linear(ff_dim, dim)
        )
        self.norm2 = nn.LayerNorm(dim)

    def forward(self, x, pad_mask=None):
        att, _ = self.attn(x, x, x, key_padding_mask=pad_mask, need_weights=False)
        x = self.norm1(x + att)
        return self.norm2(x + self.ff(x))


class TokenHead(nn.Module):
    """Shared shape of both heads: project tokens, encode, project out."""

    def __init__(self, in_dim: int, cfg: ModelConfig):
        super().__init__()
        self.in_proj = nn.Linear(in_dim, cfg.tf_dim)
        self.blocks = nn.ModuleList(
            TransformerBlock(cfg.tf_dim, cfg.tf_heads, cfg.tf_ff_dim)
            for _ in range(cfg.tf_layers)
        )
        self.out_proj = nn.Linear(cfg.tf_dim, 1)

    def forward(self, tokens, pad_mask=None):
        x = self.in_proj(tokens)
        for block in self.blocks:
            x = block(x, pad_mask)
        return self.out_proj(x).squeeze(-1)  # (B, L)


class SevalModel(nn.Module):
    """Encoder plus policy and subset-scoring heads."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.hgnn_dim
        self.job_in = nn.Linear(JOB_FEATURES, d)
        self.mach_in = nn.Linear(MACHINE_FEATURES, d)
        self.op_in = nn.Linear(OP_FEATURES, d)
        self.mo_edge_in = nn.Linear(EDGE_FEATURES, d)
        self.mj_edge_in = nn.Linear(EDGE_FEATURES, d)
        self.hgnn = nn.ModuleList(
            HgnnLayer(d, config.hgnn_heads) for _ in range(config.hgnn_layers)
        )
        token_dim = 2 * d + EDGE_FEATURES
        self.policy_head = TokenHead(token_dim, config)
        self.self_eval_head = TokenHead(token_dim + 1, config)
        init_parameters(self, config.seed)

    # -- parameter groups ---------------------------------------------------

    def encoder_parameters(self):
        heads = {"policy_head.", "self_eval_head."}
        for name, p in self.named_parameters():
            if not any(name.startswith(h) for h in heads):
                yield p

    def policy_parameters(self):
        return self.policy_head.parameters()

    def self_eval_parameters(self):
        return self.self_eval_head.parameters()

    # -- forward paths -------------------------------------------------------

    def encode(self, batch: GraphBatch):
        """L rounds of typed attention; returns job/machine/op embeddings."""
        h_job = self.job_in(batch.job_x)
        h_mach = self.mach_in(batch.mach_x)
        h_op = self.op_in(batch.op_x)
        mo_emb = self.mo_edge_in(batch.mo_feat)
        mj_emb = self.mj_edge_in(batch.mj_feat)
        for layer in self.hgnn:
            h_job, h_mach, h_op = layer(h_job, h_mach, h_op, batch, mo_emb, mj_emb)
        return h_job, h_mach, h_op

    def assignment_tokens(self, batch: GraphBatch, h_job, h_mach):
        """Padded (B, Lmax, 2d+3) token tensor for the feasible lists."""
        flat = torch.cat(
            [h_job[batch.token_job], h_mach[batch.token_mach], batch.token_edge],
            dim=1,
        )
        tokens = torch.zeros(
            (batch.size, batch.max_len, flat.shape[1]), dtype=flat.dtype
        )
        tokens[batch.token_sample, batch.token_pos] = flat
        return tokens

    def policy_logits(self, batch: GraphBatch, tokens):
        logits = self.policy_head(tokens, batch.pad_mask)
        return logits.masked_fill(batch.pad_mask, -torch.inf)

    def policy_probs(self, batch: GraphBatch, tokens):
        return torch.softmax(self.policy_logits(batch, tokens), dim=-1)

    def self_eval_scores(self, batch: GraphBatch, tokens, bits):
        """Score subsets-per-sample: bits is (B, S, Lmax) in {0,1}.

        Returns (B, S) scores in [0, 1]."""
        b, s, lmax = bits.shape
        base = tokens.repeat_interleave(s, dim=0)
        bit_col = bits.reshape(b * s, lmax, 1).to(tokens.dtype)
        se_tokens = torch.cat([base, bit_col], dim=2)
        pad = batch.pad_mask.repeat_interleave(s, dim=0)
        raw = self.self_eval_head(se_tokens, pad)
        valid = (~pad).to(tokens.dtype)
        pooled = (raw * valid).sum(dim=1) / valid.sum(dim=1)
        return torch.sigmoid(pooled).view(b, s)


def init_parameters(model: nn.Module, seed: int) -> None:
    """Uniform fan-in init for matrices, zeros for biases, ones for norms;
    deterministic in parameter order for a given seed."""
    gen = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for name, p in model.named_parameters():
            if p.dim() >= 2:
                bound = 1.0 / math.sqrt(p.shape[-1])
                p.uniform_(-bound, bound, generator=gen)
            elif "weight" in name:  # layer-norm scales
                p.fill_(1.0)
            else:
                p.zero_()


def params_finite(model: nn.Module) -> bool:
    return all(torch.isfinite(p).all().item() for p in model.parameters())


# ---------------------------------------------------------------------------
# Losses and targets
# ---------------------------------------------------------------------------

def kl_policy_loss(pred_probs, target_probs, pad_mask=None):
    """KL(predicted || target), batch mean, probabilities clamped away from 0.

    Both arguments are (B, L) distributions over the same feasible lists.
    """
    if pred_probs.shape != target_probs.shape:
        raise ValueError(
            f"shape mismatch {tuple(pred_probs.shape)} vs {tuple(target_probs.shape)}"
        )
    p = pred_probs.clamp(PROB_CLAMP, 1.0)
    q = target_probs.clamp(PROB_CLAMP, 1.0)
    per_entry = p * (torch.log(p) - torch.log(q))
    if pad_mask is not None:
        per_entry = per_entry.masked_fill(pad_mask, 0.0)
    return per_entry.sum(dim=-1).mean()


def mse_self_eval_loss(pred_scores, true_scores):
    if pred_scores.shape != true_scores.shape:
        raise ValueError(
            f"shape mismatch {tuple(pred_scores.shape)} vs {tuple(true_scores.shape)}"
        )
    return ((pred_scores - true_scores) ** 2).mean()


def true_score(subset, optimal) -> float:
    """Fraction of a subset's members that are optimal assignments."""
    members = list(subset)
    if not members:
        raise ValueError("subset must be non-empty")
    opt = set(optimal)
    return sum(1 for x in members if x in opt) / len(members)


def uniform_target(a_opt: Sequence[int], length: int) -> np.ndarray:
    """Solver target distribution: uniform mass over the optimal subset."""
    target = np.zeros(length, dtype=np.float64)
    target[list(a_opt)] = 1.0 / len(a_opt)
    return target


# ---------------------------------------------------------------------------
# Gradient checking
# ---------------------------------------------------------------------------

def _policy_loss_value(model, batch, target):
    h_job, h_mach, _ = model.encode(batch)
    tokens = model.assignment_tokens(batch, h_job, h_mach)
    probs = model.policy_probs(batch, tokens)
    return kl_policy_loss(probs, target, batch.pad_mask)


def _self_eval_loss_value(model, batch, bits, scores):
    h_job, h_mach, _ = model.encode(batch)
    tokens = model.assignment_tokens(batch, h_job, h_mach)
    pred = model.self_eval_scores(batch, tokens, bits)
    return mse_self_eval_loss(pred, scores)


def gradient_check(
    model: SevalModel,
    encodings: Sequence[StateEncoding],
    targets: Sequence[np.ndarray],
    bits: np.ndarray,
    scores: np.ndarray,
    step: float = 1e-5,
    seed: int = 0,
) -> float:
    """Compare autograd gradients of both losses against central finite
    differences along a random direction per parameter tensor, in double
    precision. Returns the maximum relative error observed."""
    model = copy.deepcopy(model).double()
    batch = GraphBatch(encodings, dtype=torch.float64)
    max_len = batch.max_len
    target = torch.zeros((batch.size, max_len), dtype=torch.float64)
    for i, t in enumerate(targets):
        target[i, : len(t)] = torch.as_tensor(t, dtype=torch.float64)
    bits_t = torch.as_tensor(bits, dtype=torch.float64)
    scores_t = torch.as_tensor(scores, dtype=torch.float64)

    losses = {
        "policy": lambda: _policy_loss_value(model, batch, target),
        "self_eval": lambda: _self_eval_loss_value(model, batch, bits_t, scores_t),
    }
    gen = torch.Generator().manual_seed(seed)
    worst = 0.0
    for loss_fn in losses.values():
        model.zero_grad(set_to_none=True)
        loss = loss_fn()
        if not torch.isfinite(loss):
            raise FloatingPointError("non-finite loss in gradient check")
        loss.backward()
        for _, param in sorted(model.named_parameters()):
            if param.grad is None:
                continue
            direction = torch.randn(param.shape, generator=gen, dtype=torch.float64)
            direction /= direction.norm().clamp_min(1e-12)
            analytic = (param.grad * direction).sum().item()
            with torch.no_grad():
                param.add_(direction, alpha=step)
                up = loss_fn().item()
                param.add_(direction, alpha=-2 * step)
                down = loss_fn().item()
                param.add_(direction, alpha=step)
            numeric = (up - down) / (2 * step)
            denom = max(abs(analytic), abs(numeric))
            if denom < 1e-10:
                continue
            rel = abs(analytic - numeric) / denom
            worst = max(worst, rel)
    return worst


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(path: Path | str, model: SevalModel, meta: dict | None = None):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "config": asdict(model.config),
        "state_dict": model.state_dict(),
        "meta": dict(meta or {}),
    }
    torch.save(payload, path)


def load_checkpoint(path: Path | str) -> tuple[SevalModel, dict]:
    payload = torch.load(path, weights_only=True)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"unsupported checkpoint format {payload.get('format')!r}")
    model = SevalModel(ModelConfig(**payload["config"]))
    current = model.state_dict()
    for name, tensor in payload["state_dict"].items():
        if name not in current:
            raise ValueError(f"checkpoint holds unknown parameter {name!r}")
        if tuple(current[name].shape) != tuple(tensor.shape):
            raise ValueError(
                f"shape mismatch for {name!r}: checkpoint "
                f"{tuple(tensor.shape)} vs model {tuple(current[name].shape)}"
            )
    model.load_state_dict(payload["state_dict"], strict=True)
    return model, payload["meta"]


# ---------------------------------------------------------------------------
# Single-state conveniences
# ---------------------------------------------------------------------------

def policy_for_state(
    model: SevalModel,
    state: SchedState,
    feasible: Sequence[FeasibleAssignment] | None = None,
):
    """Probabilities over one state's (truncated) feasible list."""
    if feasible is None:
        feasible = feasible_assignments(state)
    batch = GraphBatch([encode_state(state, feasible)])
    with torch.no_grad():
        h_job, h_mach, _ = model.encode(batch)
        tokens = model.assignment_tokens(batch, h_job, h_mach)
        probs = model.policy_probs(batch, tokens)
    return probs[0].numpy(), (batch, tokens)


def score_subsets_for_state(
    model: SevalModel, batch_tokens, subset_bits: np.ndarray
) -> np.ndarray:
    """Score candidate subsets of a single state. subset_bits is (S, L)."""
    batch, tokens = batch_tokens
    with torch.no_grad():
        bits = torch.as_tensor(subset_bits[None, :, :])
        scores = model.self_eval_scores(batch, tokens, bits)
    return scores[0].numpy()
