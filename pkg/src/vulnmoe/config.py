"""Model architecture configuration and analytic parameter counting."""

from __future__ import annotations

from dataclasses import dataclass, asdict, replace


@dataclass(frozen=True)
class ModelConfig:
    """All architecture hyperparameters. Every linear map is bias-free."""

    vocab_size: int = 151_673
    embed_dim: int = 2048
    model_dim: int = 768
    num_layers: int = 8
    query_heads: int = 12
    kv_groups: int = 4
    head_dim: int = 64
    rope_base: float = 1_000_000.0
    rmsnorm_eps: float = 1e-6
    num_routed_experts: int = 25
    active_experts_per_token: int = 1
    num_shared_experts: int = 1
    expert_hidden_dim: int = 768
    num_cwe_classes: int = 25
    max_seq_len: int = 1024
    dropout: float = 0.1
    attention_mode: str = "bidirectional"  # or "causal"

    def __post_init__(self):
        if self.query_heads % self.kv_groups != 0:
            raise ValueError(f"query_heads {self.query_heads} not divisible by "
                             f"kv_groups {self.kv_groups}")
        if self.query_heads * self.head_dim != self.model_dim:
            raise ValueError(f"query_heads*head_dim = "
                             f"{self.query_heads * self.head_dim} != model_dim "
                             f"{self.model_dim}")
        if not 1 <= self.active_experts_per_token <= self.num_routed_experts:
            raise ValueError(f"active_experts_per_token "
                             f"{self.active_experts_per_token} outside "
                             f"[1, {self.num_routed_experts}]")
        if self.head_dim % 2 != 0:
            raise ValueError(f"head_dim {self.head_dim} must be even for rotary "
                             "position pairs")
        if self.attention_mode not in ("bidirectional", "causal"):
            raise ValueError(f"attention_mode {self.attention_mode!r} not one of "
                             "'bidirectional', 'causal'")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown ModelConfig keys: {sorted(unknown)}")
        return cls(**d)


_PAPER = ModelConfig()

PRESETS: dict[str, ModelConfig] = {
    # Full-size baseline: 25 routed experts at hidden dim 768, top-1, one
    # shared expert.
    "paper": _PAPER,
    # Fine-grained variant: twice the experts at half the width, top-2.
    "ablation2": replace(_PAPER, num_routed_experts=50, expert_hidden_dim=384,
                         active_experts_per_token=2),
    # Heavy-shared variant: thin routed experts, four shared experts.
    "ablation3": replace(_PAPER, expert_hidden_dim=256, num_shared_experts=4),
    # Gradient-check scale: small enough for exhaustive finite differences.
    "tiny": ModelConfig(vocab_size=17, embed_dim=8, model_dim=8, num_layers=2,
                        query_heads=2, kv_groups=1, head_dim=4,
                        num_routed_experts=3, active_experts_per_token=1,
                        num_shared_experts=1, expert_hidden_dim=8,
                        num_cwe_classes=25, max_seq_len=4, dropout=0.0),
    # Trainable desk-scale preset: same structure, shrunk dims/vocab.
    "toy": ModelConfig(vocab_size=512, embed_dim=32, model_dim=32, num_layers=2,
                       query_heads=4, kv_groups=2, head_dim=8,
                       num_routed_experts=4, active_experts_per_token=1,
                       num_shared_experts=1, expert_hidden_dim=32,
                       num_cwe_classes=25, max_seq_len=128, dropout=0.1),
}


def get_preset(name: str) -> ModelConfig:
    try:
        return PRESETS[name]
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; available: "
                         f"{', '.join(sorted(PRESETS))}") from None


def count_parameters(cfg: ModelConfig) -> tuple[int, int]:
    """(total, active-per-token) parameter counts, summed analytically.

    Active counts embedding, projection, heads, norms, attention, gates,
    the k routed experts a token actually visits, and all shared experts.
    """
    expert = 3 * cfg.model_dim * cfg.expert_hidden_dim  # w1, w2, w3
    attn = (cfg.model_dim * cfg.query_heads * cfg.head_dim          # W_Q
            + 2 * cfg.model_dim * cfg.kv_groups * cfg.head_dim      # W_K, W_V
            + cfg.query_heads * cfg.head_dim * cfg.model_dim)       # W_O
    per_layer_fixed = (attn
                       + 2 * cfg.model_dim                          # two norm scales
                       + cfg.model_dim * cfg.num_routed_experts     # gate
                       + cfg.num_shared_experts * expert)
    shared_parts = (cfg.vocab_size * cfg.embed_dim
                    + cfg.embed_dim * cfg.model_dim
                    + cfg.model_dim                                 # final norm
                    + cfg.model_dim * 2                             # binary head
                    + cfg.model_dim * cfg.num_cwe_classes)          # cwe head
    total = shared_parts + cfg.num_layers * (per_layer_fixed
                                             + cfg.num_routed_experts * expert)
    active = shared_parts + cfg.num_layers * (per_layer_fixed
                                              + cfg.active_experts_per_token * expert)
    return total, active
