"""The classifier network: embedding + projection, MoE transformer blocks
with grouped-query attention, last-token pooling, and two heads (binary
vulnerability, multi-label CWE)."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autograd as ag
from . import layers
from .autograd import Tensor
from .config import ModelConfig

INIT_STD = 0.02
TRUNC_BOUND = 2.0  # resample beyond 2 sigma


def _trunc_normal(rng: np.random.Generator, shape, std: float = INIT_STD,
                  dtype=np.float64) -> np.ndarray:
    out = rng.standard_normal(shape)
    bad = np.abs(out) > TRUNC_BOUND
    while bad.any():
        out[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(out) > TRUNC_BOUND
    return (out * std).astype(dtype)


@dataclass
class ForwardOutput:
    binary_logits: Tensor            # (batch, 2); column 1 = vulnerable
    cwe_logits: Tensor               # (batch, num_cwe_classes)
    # routing_trace[layer][sample][token] -> [(expert_index, gate_weight)] * k
    routing_trace: list = field(default_factory=list)


class VulnNet:
    """MoE transformer classifier over token ids.

    Parameters live in an insertion-ordered name -> Tensor mapping. Names
    starting with "head_" form the head group for differential learning
    rates; everything else is backbone.
    """

    def __init__(self, cfg: ModelConfig, seed: int = 0, dtype=np.float64):
        self.cfg = cfg
        self.dtype = dtype
        self.params: dict[str, Tensor] = {}
        rng = np.random.default_rng(seed)
        self._init_params(rng)

    def _param(self, name: str, array: np.ndarray) -> Tensor:
        t = Tensor(array, requires_grad=True)
        self.params[name] = t
        return t

    def _init_params(self, rng: np.random.Generator) -> None:
        c = self.cfg
        self._param("embed.table", _trunc_normal(rng, (c.vocab_size, c.embed_dim),
                                                 dtype=self.dtype))
        self._param("embed.proj", _trunc_normal(rng, (c.embed_dim, c.model_dim),
                                                dtype=self.dtype))
        for l in range(c.num_layers):
            p = f"block{l}."
            self._param(p + "attn_norm.gamma", np.ones(c.model_dim, dtype=self.dtype))
            self._param(p + "attn.wq",
                        _trunc_normal(rng, (c.model_dim, c.query_heads * c.head_dim),
                                      dtype=self.dtype))
            self._param(p + "attn.wk",
                        _trunc_normal(rng, (c.model_dim, c.kv_groups * c.head_dim),
                                      dtype=self.dtype))
            self._param(p + "attn.wv",
                        _trunc_normal(rng, (c.model_dim, c.kv_groups * c.head_dim),
                                      dtype=self.dtype))
            self._param(p + "attn.wo",
                        _trunc_normal(rng, (c.query_heads * c.head_dim, c.model_dim),
                                      dtype=self.dtype))
            self._param(p + "ffn_norm.gamma", np.ones(c.model_dim, dtype=self.dtype))
            self._param(p + "moe.gate",
                        _trunc_normal(rng, (c.model_dim, c.num_routed_experts),
                                      dtype=self.dtype))
            for e in range(c.num_routed_experts):
                for w, shape in (("w1", (c.model_dim, c.expert_hidden_dim)),
                                 ("w2", (c.expert_hidden_dim, c.model_dim)),
                                 ("w3", (c.model_dim, c.expert_hidden_dim))):
                    self._param(p + f"moe.expert{e}.{w}",
                                _trunc_normal(rng, shape, dtype=self.dtype))
            for s in range(c.num_shared_experts):
                for w, shape in (("w1", (c.model_dim, c.expert_hidden_dim)),
                                 ("w2", (c.expert_hidden_dim, c.model_dim)),
                                 ("w3", (c.model_dim, c.expert_hidden_dim))):
                    self._param(p + f"moe.shared{s}.{w}",
                                _trunc_normal(rng, shape, dtype=self.dtype))
        self._param("final_norm.gamma", np.ones(c.model_dim, dtype=self.dtype))
        self._param("head_bin.w", _trunc_normal(rng, (c.model_dim, 2),
                                                dtype=self.dtype))
        self._param("head_cwe.w", _trunc_normal(rng, (c.model_dim, c.num_cwe_classes),
                                                dtype=self.dtype))

    def reinit_cwe_head(self, seed: int) -> None:
        """Swap in a freshly initialized CWE head (stage-3 contract)."""
        rng = np.random.default_rng(seed)
        c = self.cfg
        self.params["head_cwe.w"] = Tensor(
            _trunc_normal(rng, (c.model_dim, c.num_cwe_classes), dtype=self.dtype),
            requires_grad=True)

    def named_parameters(self) -> dict[str, Tensor]:
        return self.params

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.zero_grad()

    def state_arrays(self) -> dict[str, np.ndarray]:
        return {name: t.data.copy() for name, t in self.params.items()}

    def load_state_arrays(self, state: dict[str, np.ndarray]) -> None:
        missing = set(self.params) - set(state)
        extra = set(state) - set(self.params)
        if missing or extra:
            raise ValueError(f"state mismatch: missing {sorted(missing)}, "
                             f"unexpected {sorted(extra)}")
        for name, arr in state.items():
            if arr.shape != self.params[name].shape:
                raise ValueError(f"shape mismatch for {name}: "
                                 f"{arr.shape} vs {self.params[name].shape}")
            self.params[name] = Tensor(arr.copy(), requires_grad=True)

    # ------------------------------------------------------------------
    def _block(self, h: Tensor, l: int, bias: np.ndarray, positions,
               training: bool, rng) -> tuple[Tensor, list]:
        c = self.cfg
        p = self.params
        pre = f"block{l}."
        normed = layers.rms_norm(h, p[pre + "attn_norm.gamma"], c.rmsnorm_eps)
        attn = layers.gqa_attention(
            normed, p[pre + "attn.wq"], p[pre + "attn.wk"], p[pre + "attn.wv"],
            p[pre + "attn.wo"], bias, positions,
            query_heads=c.query_heads, kv_groups=c.kv_groups,
            head_dim=c.head_dim, rope_base=c.rope_base)
        if training and c.dropout > 0:
            attn = ag.dropout(attn, c.dropout, rng)
        h = ag.add(h, attn)

        normed = layers.rms_norm(h, p[pre + "ffn_norm.gamma"], c.rmsnorm_eps)
        routed = [(p[pre + f"moe.expert{e}.w1"], p[pre + f"moe.expert{e}.w2"],
                   p[pre + f"moe.expert{e}.w3"])
                  for e in range(c.num_routed_experts)]
        shared = [(p[pre + f"moe.shared{s}.w1"], p[pre + f"moe.shared{s}.w2"],
                   p[pre + f"moe.shared{s}.w3"])
                  for s in range(c.num_shared_experts)]
        ffn, records = layers.moe_forward(normed, p[pre + "moe.gate"], routed,
                                          shared, c.active_experts_per_token)
        if training and c.dropout > 0:
            ffn = ag.dropout(ffn, c.dropout, rng)
        return ag.add(h, ffn), records

    def _forward_one(self, tokens, mask, training: bool, rng):
        c = self.cfg
        p = self.params
        tokens = np.asarray(tokens, dtype=np.int64)
        seq = len(tokens)
        positions = np.arange(seq)
        bias = layers.attention_bias(seq, mask, c.attention_mode == "causal",
                                     dtype=self.dtype)
        h = ag.matmul(ag.embedding_lookup(p["embed.table"], tokens), p["embed.proj"])
        trace = []
        for l in range(c.num_layers):
            h, records = self._block(h, l, bias, positions, training, rng)
            trace.append(records)
        h = layers.rms_norm(h, p["final_norm.gamma"], c.rmsnorm_eps)
        pooled = layers.pool_last_token(h, mask)  # (1, d)
        bin_logits = ag.matmul(pooled, p["head_bin.w"])
        cwe_logits = ag.matmul(pooled, p["head_cwe.w"])
        return bin_logits, cwe_logits, trace

    def forward(self, tokens, mask=None, *, training: bool = False,
                dropout_rng: np.random.Generator | None = None,
                truncate: bool = False) -> ForwardOutput:
        """Run a batch (list of id sequences) through the network.

        `mask` mirrors `tokens` with 1 for real positions and 0 for padding
        (padding must be a suffix); None means no padding. Sequences longer
        than max_seq_len raise unless `truncate` is set.
        """
        c = self.cfg
        if training and c.dropout > 0 and dropout_rng is None:
            raise ValueError("training-mode forward with dropout needs a dropout_rng")
        if mask is None:
            mask = [[1] * len(seq) for seq in tokens]
        bin_rows, cwe_rows = [], []
        per_layer: list[list] = [[] for _ in range(c.num_layers)]
        for seq_tokens, seq_mask in zip(tokens, mask):
            if len(seq_tokens) > c.max_seq_len:
                if not truncate:
                    raise ValueError(f"sequence length {len(seq_tokens)} exceeds "
                                     f"max_seq_len {c.max_seq_len}; pass "
                                     "truncate=True to clip")
                seq_tokens = seq_tokens[:c.max_seq_len]
                seq_mask = seq_mask[:c.max_seq_len]
            b, w, trace = self._forward_one(seq_tokens, seq_mask, training,
                                            dropout_rng)
            bin_rows.append(b)
            cwe_rows.append(w)
            for l in range(c.num_layers):
                per_layer[l].append(trace[l])
        binary = bin_rows[0] if len(bin_rows) == 1 else ag.concat(bin_rows, axis=0)
        cwe = cwe_rows[0] if len(cwe_rows) == 1 else ag.concat(cwe_rows, axis=0)
        return ForwardOutput(binary_logits=binary, cwe_logits=cwe,
                             routing_trace=per_layer)
