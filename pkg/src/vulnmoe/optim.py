"""AdamW with decoupled weight decay, global gradient clipping, cosine
learning-rate schedule with linear warm-up, and backbone/head parameter
grouping for differential learning rates."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .autograd import Tensor


def cosine_lr(step: int, total_steps: int, warmup: int = 500,
              peak_lr: float = 1.0, floor_lr: float = 0.0) -> float:
    """Linear ramp 0 -> peak over [0, warmup], cosine decay peak -> floor
    over [warmup, total_steps], clamped to floor beyond."""
    if total_steps <= warmup:
        raise ValueError(f"total_steps {total_steps} must exceed warmup {warmup}")
    if step <= 0:
        return 0.0 if warmup > 0 else peak_lr
    if step < warmup:
        return peak_lr * step / warmup
    if step >= total_steps:
        return floor_lr
    progress = (step - warmup) / (total_steps - warmup)
    return floor_lr + 0.5 * (peak_lr - floor_lr) * (1.0 + np.cos(np.pi * progress))


@dataclass
class ParamGroup:
    name: str
    params: list[tuple[str, Tensor]]
    peak_lr: float


def differential_lr_groups(params: dict[str, Tensor], lr_backbone: float,
                           lr_head: float) -> list[ParamGroup]:
    """Split parameters into backbone and head groups by name. Names must
    classify; silently defaulting a parameter would hide wiring bugs."""
    backbone, head = [], []
    for name, tensor in params.items():
        if name.startswith("head_"):
            head.append((name, tensor))
        elif name.startswith(("embed.", "block", "final_norm.")):
            backbone.append((name, tensor))
        else:
            raise ValueError(f"parameter {name!r} matches neither the backbone "
                             "nor the head naming scheme")
    return [ParamGroup("backbone", backbone, lr_backbone),
            ParamGroup("head", head, lr_head)]


def global_grad_norm(groups: list[ParamGroup]) -> float:
    total = 0.0
    for group in groups:
        for _, p in group.params:
            if p.grad is not None:
                total += float(np.sum(p.grad.astype(np.float64) ** 2))
    return float(np.sqrt(total))


def clip_grad_norm(groups: list[ParamGroup], max_norm: float = 1.0) -> float:
    """Scale all gradients so the global norm is at most max_norm.
    Returns the pre-clip norm."""
    norm = global_grad_norm(groups)
    if norm > max_norm:
        scale = max_norm / norm
        for group in groups:
            for _, p in group.params:
                if p.grad is not None:
                    p.grad *= scale
    return norm


@dataclass
class AdamW:
    """Decoupled-weight-decay Adam over named parameter groups.

    The decay term (param -= lr * weight_decay * param) is applied
    separately from the bias-corrected adaptive update.
    """

    groups: list[ParamGroup]
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 1e-2
    step_count: int = 0
    _m: dict[str, np.ndarray] = field(default_factory=dict)
    _v: dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, lr_scale: float = 1.0) -> None:
        """One update. Effective lr per group = lr_scale * group.peak_lr,
        so a schedule multiplier in [0, 1] drives all groups together."""
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1 ** t
        bc2 = 1.0 - self.beta2 ** t
        for group in self.groups:
            lr = lr_scale * group.peak_lr
            for name, p in group.params:
                g = p.grad
                if g is None:
                    continue
                if not np.isfinite(g).all():
                    raise FloatingPointError(f"non-finite gradient for {name} at "
                                             f"step {t}")
                m = self._m.setdefault(name, np.zeros_like(p.data))
                v = self._v.setdefault(name, np.zeros_like(p.data))
                m += (1.0 - self.beta1) * (g - m)
                v += (1.0 - self.beta2) * (g * g - v)
                update = (m / bc1) / (np.sqrt(v / bc2) + self.eps)
                p.data -= lr * update
                if self.weight_decay:
                    p.data -= lr * self.weight_decay * p.data

    def zero_grad(self) -> None:
        for group in self.groups:
            for _, p in group.params:
                p.zero_grad()
