"""Transformer building blocks: rotary positions, RMS normalization,
grouped-query attention, gated experts, top-k routing, last-token pooling.

All functions take and return autograd Tensors; weights are plain Tensors
owned by the network. Sequences are (seq, dim) matrices; batching happens
one sample at a time in the network forward.
"""

from __future__ import annotations

import numpy as np

from . import autograd as ag
from .autograd import Tensor

NEG_INF = -1e30  # additive mask value; survives float32 and max-subtraction


def rope_angle(dim_index: int, head_dim: int, base: float) -> float:
    """Rotation frequency for coordinate pair `dim_index`: base**(-2k/d)."""
    if not 0 <= dim_index < head_dim // 2:
        raise ValueError(f"rotary pair index {dim_index} outside "
                         f"[0, {head_dim // 2}) for head_dim {head_dim}")
    return float(base ** (-2.0 * dim_index / head_dim))


def _rope_tables(positions, head_dim: int, base: float, dtype):
    freqs = np.array([rope_angle(k, head_dim, base) for k in range(head_dim // 2)],
                     dtype=np.float64)
    angles = np.asarray(positions, dtype=np.float64)[:, None] * freqs[None, :]
    return np.cos(angles).astype(dtype), np.sin(angles).astype(dtype)


def apply_rope(x: Tensor, positions, base: float) -> Tensor:
    """Rotate consecutive coordinate pairs of each row by position*angle.

    x is (seq, d) with d even; positions has one entry per row. The
    backward pass is the inverse rotation applied to the incoming gradient
    (rotations are orthogonal).
    """
    seq, d = x.shape
    if d % 2 != 0:
        raise ValueError(f"apply_rope needs an even dimension, got {d}")
    if len(positions) != seq:
        raise ValueError(f"positions length {len(positions)} != seq {seq}")
    cos, sin = _rope_tables(positions, d, base, x.data.dtype)

    even = x.data[:, 0::2]
    odd = x.data[:, 1::2]
    out = np.empty_like(x.data)
    out[:, 0::2] = even * cos - odd * sin
    out[:, 1::2] = even * sin + odd * cos

    def vjp(g):
        ge = g[:, 0::2]
        go = g[:, 1::2]
        gx = np.empty_like(g)
        gx[:, 0::2] = ge * cos + go * sin
        gx[:, 1::2] = -ge * sin + go * cos
        return (gx,)

    return ag.graph_node(out, (x,), vjp)


def rms_norm(x: Tensor, gamma: Tensor, eps: float) -> Tensor:
    """x / sqrt(mean(x^2) + eps) * gamma, normalizing the last axis."""
    ms = ag.tmean(ag.mul(x, x), axis=-1, keepdims=True)
    inv = ag.pow_scalar(ag.add_scalar(ms, eps), -0.5)
    return ag.mul(ag.mul(x, inv), gamma)


def expert_forward(x: Tensor, w1: Tensor, w2: Tensor, w3: Tensor) -> Tensor:
    """Gated feed-forward: (silu(x·w1) ⊙ (x·w3)) · w2."""
    gate = ag.silu(ag.matmul(x, w1))
    return ag.matmul(ag.mul(gate, ag.matmul(x, w3)), w2)


def attention_bias(seq: int, mask, causal: bool, dtype=np.float64) -> np.ndarray:
    """Additive (seq, seq) score bias: NEG_INF at padded keys, and above the
    diagonal in causal mode."""
    mask = np.asarray(mask)
    if mask.shape != (seq,):
        raise ValueError(f"mask length {mask.shape} != seq {seq}")
    bias = np.zeros((seq, seq), dtype=dtype)
    bias[:, mask == 0] = NEG_INF
    if causal:
        bias[np.triu_indices(seq, k=1)] = NEG_INF
    return bias


def gqa_attention(h: Tensor, wq: Tensor, wk: Tensor, wv: Tensor, wo: Tensor,
                  bias: np.ndarray, positions, *, query_heads: int,
                  kv_groups: int, head_dim: int, rope_base: float) -> Tensor:
    """Grouped-query attention: each block of H/G query heads shares one
    key/value head. Rotary positions are applied to queries and keys;
    scores are scaled by 1/sqrt(head_dim) and offset by `bias`."""
    if query_heads % kv_groups != 0:
        raise ValueError(f"query_heads {query_heads} not divisible by "
                         f"kv_groups {kv_groups}")
    q = ag.matmul(h, wq)   # (seq, H*dk)
    k = ag.matmul(h, wk)   # (seq, G*dk)
    v = ag.matmul(h, wv)   # (seq, G*dk)
    scale = 1.0 / np.sqrt(head_dim)
    bias_t = Tensor(bias)
    heads_per_group = query_heads // kv_groups

    head_outputs = []
    for i in range(query_heads):
        g = i // heads_per_group
        qi = apply_rope(ag.narrow(q, -1, i * head_dim, head_dim), positions, rope_base)
        ki = apply_rope(ag.narrow(k, -1, g * head_dim, head_dim), positions, rope_base)
        vi = ag.narrow(v, -1, g * head_dim, head_dim)
        scores = ag.add(ag.mul_scalar(ag.matmul(qi, ag.transpose(ki)), scale), bias_t)
        attn = ag.softmax(scores, axis=-1)
        head_outputs.append(ag.matmul(attn, vi))
    return ag.matmul(ag.concat(head_outputs, axis=-1), wo)


def top_k_routes(gates: np.ndarray, k: int) -> np.ndarray:
    """Indices of the k largest gate entries per row; ties go to the lowest
    expert index (stable sort on descending value)."""
    order = np.argsort(-gates, axis=-1, kind="stable")
    return order[:, :k]


def moe_forward(x: Tensor, gate_w: Tensor, routed: list[tuple[Tensor, Tensor, Tensor]],
                shared: list[tuple[Tensor, Tensor, Tensor]], k: int):
    """Mixture layer: softmax gate over routed experts, top-k selection
    weighted by the raw gate values (no renormalization over the selected
    subset), plus ungated shared experts.

    Returns (output, records) where records[token] is the list of k
    (expert_index, gate_weight) pairs actually used.
    """
    n_experts = len(routed)
    if k > n_experts:
        raise ValueError(f"k={k} exceeds expert count {n_experts}")
    seq = x.shape[0]
    gates = ag.softmax(ag.matmul(x, gate_w), axis=-1)  # (seq, E)
    selected = top_k_routes(gates.data, k)             # (seq, k)

    out = None
    for slot in range(k):
        experts_of_token = selected[:, slot]
        # Group tokens by chosen expert so each expert runs one batched pass.
        order = np.argsort(experts_of_token, kind="stable")
        inverse = np.empty_like(order)
        inverse[order] = np.arange(seq)
        pieces = []
        start = 0
        while start < seq:
            e = experts_of_token[order[start]]
            stop = start
            while stop < seq and experts_of_token[order[stop]] == e:
                stop += 1
            w1, w2, w3 = routed[e]
            pieces.append(expert_forward(ag.take_rows(x, order[start:stop]), w1, w2, w3))
            start = stop
        grouped = pieces[0] if len(pieces) == 1 else ag.concat(pieces, axis=0)
        restored = ag.take_rows(grouped, inverse)
        weight = ag.take_per_row(gates, experts_of_token)  # (seq, 1)
        contribution = ag.mul(restored, weight)
        out = contribution if out is None else ag.add(out, contribution)

    for w1, w2, w3 in shared:
        out = ag.add(out, expert_forward(x, w1, w2, w3))

    records = [[(int(selected[t, s]), float(gates.data[t, selected[t, s]]))
                for s in range(k)] for t in range(seq)]
    return out, records


def pool_last_token(h: Tensor, mask) -> Tensor:
    """Row of h at the last unmasked position (padding must be a suffix)."""
    mask = np.asarray(mask)
    total = int(mask.sum())
    if total == 0:
        raise ValueError("empty sequence: mask selects no tokens")
    if mask[:total].min() != 1 or (total < len(mask) and mask[total:].max() != 0):
        raise ValueError("padding must be a contiguous suffix of the mask")
    return ag.narrow(h, 0, total - 1, 1)
