"""Rank-weighted multi-label CWE loss, binary vulnerability loss, and the
combined training objective.

Class weights come from the MITRE Top 25 rank of each CWE: rank r maps to
weight 1 + gamma*(26-r)/25 inside the ranking and 1 outside it. The CWE
term of a sample is zeroed (through a detached mask) when the predicted
vulnerability probability sits below the confidence threshold.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autograd as ag
from .autograd import Tensor


class TrainingAbortError(RuntimeError):
    """A loss component went non-finite; training must stop."""


@dataclass(frozen=True)
class LossConfig:
    gamma: float = 2.0
    w1: float = 10.0
    w2: float = 1.0
    tau: float = 0.5
    prob_clamp: float = 1e-7

    def __post_init__(self):
        if self.gamma < 0:
            raise ValueError(f"gamma {self.gamma} must be >= 0")
        if not 0.0 < self.tau < 1.0:
            raise ValueError(f"tau {self.tau} outside (0, 1)")
        if not 0.0 < self.prob_clamp <= 1e-3:
            raise ValueError(f"prob_clamp {self.prob_clamp} outside (0, 1e-3]")


class RankTable:
    """CWE id -> MITRE rank (1 = most dangerous). Absent ids rank as
    infinity, i.e. outside the Top 25."""

    def __init__(self, ranks: dict[str, int]):
        seen: dict[int, str] = {}
        for cwe, rank in ranks.items():
            if not (isinstance(rank, int) and rank >= 1):
                raise ValueError(f"rank for {cwe} must be a positive integer, "
                                 f"got {rank!r}")
            if rank in seen:
                raise ValueError(f"duplicate rank {rank} for {cwe} and {seen[rank]}")
            seen[rank] = cwe
        self.ranks = dict(ranks)

    def get(self, cwe: str) -> int | None:
        return self.ranks.get(cwe)

    @classmethod
    def from_file(cls, path) -> "RankTable":
        ranks: dict[str, int] = {}
        for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                cwe, rank = line.split(",")
                ranks[cwe.strip()] = int(rank)
            except ValueError:
                raise ValueError(f"{path}:{line_no}: expected 'CWE-id,rank', "
                                 f"got {line!r}") from None
        return cls(ranks)


def rank_factor(r: float) -> float:
    """(26 - r)/25 inside the Top 25, zero beyond it."""
    if r < 1:
        raise ValueError(f"rank {r} must be >= 1")
    if r > 25:
        return 0.0
    return (26.0 - r) / 25.0


def rank_weight(r: float, gamma: float) -> float:
    if gamma < 0:
        raise ValueError(f"gamma {gamma} must be >= 0")
    return 1.0 + gamma * rank_factor(r)


def class_weights(cwe_ids: list[str], table: RankTable, gamma: float) -> np.ndarray:
    """Per-class loss weights; ids absent from the table weigh 1 (with a
    warning, since that usually means an incomplete table)."""
    weights = np.empty(len(cwe_ids))
    for i, cwe in enumerate(cwe_ids):
        rank = table.get(cwe)
        if rank is None:
            warnings.warn(f"{cwe} missing from rank table; using base weight 1.0",
                          stacklevel=2)
            weights[i] = 1.0
        else:
            weights[i] = rank_weight(rank, gamma)
    return weights


def bce(y: float, p: float, prob_clamp: float = 1e-7) -> float:
    """Scalar binary cross-entropy with probability clamping."""
    p = min(max(p, prob_clamp), 1.0 - prob_clamp)
    return -(y * math.log(p) + (1.0 - y) * math.log(1.0 - p))


def _bce_matrix(labels: np.ndarray, probs: Tensor, prob_clamp: float) -> Tensor:
    p = ag.clamp(probs, prob_clamp, 1.0 - prob_clamp)
    y = Tensor(labels.astype(p.data.dtype))
    pos = ag.mul(y, ag.log(p))
    neg = ag.mul(Tensor(1.0 - y.data), ag.log(ag.add_scalar(ag.mul_scalar(p, -1.0), 1.0)))
    return ag.mul_scalar(ag.add(pos, neg), -1.0)


def cwe_loss(labels: np.ndarray, cwe_probs: Tensor, vul_probs: Tensor,
             weights: np.ndarray, cfg: LossConfig) -> Tensor:
    """Weighted multi-label BCE over CWE classes, confidence-masked.

    labels: (N, C) binary matrix; cwe_probs: (N, C) sigmoid outputs;
    vul_probs: (N, 1) vulnerability probabilities (used detached for the
    mask); weights: (C,) per-class rank weights. The outer mean divides by
    N regardless of how many samples survive the mask.
    """
    labels = np.asarray(labels)
    n, c = labels.shape
    if cwe_probs.shape != (n, c):
        raise ag.ShapeError(f"cwe_probs shape {cwe_probs.shape} != labels {labels.shape}")
    per_class = ag.mul(_bce_matrix(labels, cwe_probs, cfg.prob_clamp),
                       Tensor(weights.astype(cwe_probs.data.dtype)))
    per_sample = ag.tsum(per_class, axis=-1, keepdims=True)  # (N, 1)
    mask = (vul_probs.data >= cfg.tau).astype(per_sample.data.dtype)  # detached
    return ag.mul_scalar(ag.tsum(ag.mul(per_sample, Tensor(mask))), 1.0 / n)


def vul_probabilities(binary_logits: Tensor) -> Tensor:
    """(N, 1) probability of the vulnerable class (softmax of 2 logits)."""
    return ag.narrow(ag.softmax(binary_logits, axis=-1), -1, 1, 1)


def vul_loss(vul_labels: np.ndarray, binary_logits: Tensor, cfg: LossConfig) -> Tensor:
    """Unweighted BCE on the softmax probability of the vulnerable class."""
    labels = np.asarray(vul_labels, dtype=np.float64).reshape(-1, 1)
    probs = vul_probabilities(binary_logits)
    if probs.shape != labels.shape:
        raise ag.ShapeError(f"binary logits give {probs.shape} probabilities, "
                            f"labels are {labels.shape}")
    return ag.tmean(_bce_matrix(labels, probs, cfg.prob_clamp))


def total_loss(l_vul: Tensor, l_cwe: Tensor, cfg: LossConfig) -> Tensor:
    for name, component in (("vulnerability loss", l_vul), ("CWE loss", l_cwe)):
        if not np.isfinite(component.data).all():
            raise TrainingAbortError(f"{name} is non-finite: {component.data}")
    return ag.add(ag.mul_scalar(l_vul, cfg.w1), ag.mul_scalar(l_cwe, cfg.w2))
