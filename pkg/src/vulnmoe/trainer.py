"""Staged training driver: per-stage optimizer setup with differential
learning rates, cosine schedule, augmentation, per-epoch evaluation, and
checkpoint selection by the stage's metric.

All randomness flows from one seed through named substreams (shuffle,
augmentation, dropout, head re-init), so identical configs give identical
loss curves in 64-bit single-threaded mode.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict, replace
from pathlib import Path

import numpy as np

from . import augment, autograd as ag, checkpoint, losses, optim, scoring
from .corpus import Corpus, Sample, CweVocab
from .losses import LossConfig, RankTable
from .network import VulnNet

_SUBSTREAM = {"shuffle": 0, "augment": 1, "dropout": 2, "head_reinit": 3}


def substream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng([seed, _SUBSTREAM[name]])


@dataclass
class StageConfig:
    name: str
    lr_backbone: float
    lr_head: float
    batch_size: int
    grad_accumulation: int
    epochs: int
    max_seq_len: int
    dropout: float
    checkpoint_metric: str                 # "val_f1" | "castle_score"
    datasets: list[str]
    warmup_steps: int = 500
    augment_prob: float = 0.2
    use_cwe_loss: bool = False
    reinit_cwe_head: bool = False
    target_train_accuracy: float | None = None

    def __post_init__(self):
        if self.checkpoint_metric not in ("val_f1", "castle_score"):
            raise ValueError(f"checkpoint_metric {self.checkpoint_metric!r} not "
                             "one of 'val_f1', 'castle_score'")

    @property
    def effective_batch(self) -> int:
        return self.batch_size * self.grad_accumulation


def paper_stages(datasets_by_stage: list[list[str]] | None = None) -> list[StageConfig]:
    """The three full-scale stage presets (effective batches 32/64/64)."""
    ds = datasets_by_stage or [["juliet"],
                               ["secvuleval", "formai", "vulnscout", "benchvul"],
                               ["secvuleval", "formai", "vulnscout"]]
    return [
        StageConfig("stage1", 5e-4, 5e-4, 32, 1, 5, 1024, 0.1, "val_f1", ds[0]),
        StageConfig("stage2", 1e-4, 1e-4, 32, 2, 3, 1024, 0.1, "val_f1", ds[1]),
        StageConfig("stage3", 1e-5, 5e-4, 16, 4, 5, 1024, 0.1, "castle_score",
                    ds[2], use_cwe_loss=True, reinit_cwe_head=True),
    ]


def stratified_split(corpus: Corpus, val_fraction: float = 0.1,
                     seed: int = 42) -> tuple[list[Sample], list[Sample]]:
    """Deterministic (label, cwe)-stratified split; roughly val_fraction of
    every group goes to validation."""
    groups: dict[tuple, list[Sample]] = {}
    for s in corpus:
        groups.setdefault((s.label, s.cwe or ""), []).append(s)
    rng = np.random.default_rng(seed)
    train, val = [], []
    for key in sorted(groups):
        members = groups[key]
        order = rng.permutation(len(members))
        n_val = int(math.floor(val_fraction * len(members)))
        for pos, idx in enumerate(order):
            (val if pos < n_val else train).append(members[idx])
    return train, val


def encode_batch(samples: list[str], tokenizer, max_seq_len: int):
    """Token ids plus suffix-padding masks, clipped to max_seq_len."""
    encoded = [tokenizer.encode(code)[:max_seq_len] for code in samples]
    width = max(len(e) for e in encoded)
    tokens = [e + [tokenizer.pad_id] * (width - len(e)) for e in encoded]
    mask = [[1] * len(e) + [0] * (width - len(e)) for e in encoded]
    return tokens, mask


def evaluate(model: VulnNet, samples: list[Sample], tokenizer,
             max_seq_len: int, batch_size: int = 16):
    """Eval-mode pass: per-sample vulnerability probability and top CWE
    class index."""
    probs, cwe_idx = [], []
    for start in range(0, len(samples), batch_size):
        chunk = samples[start:start + batch_size]
        tokens, mask = encode_batch([s.code for s in chunk], tokenizer, max_seq_len)
        out = model.forward(tokens, mask, training=False)
        p = losses.vul_probabilities(out.binary_logits).data[:, 0]
        probs.extend(float(x) for x in p)
        cwe_idx.extend(int(i) for i in np.argmax(out.cwe_logits.data, axis=-1))
    return np.array(probs), np.array(cwe_idx)


def model_findings(model: VulnNet, benchmark: list[Sample], tokenizer,
                   max_seq_len: int, vocab: CweVocab,
                   threshold: float = 0.5) -> tuple[dict, np.ndarray, dict]:
    """Convert model outputs to tool findings: flagged samples claim their
    argmax CWE class, silent samples claim nothing."""
    probs, cwe_idx = evaluate(model, benchmark, tokenizer, max_seq_len)
    findings = {}
    predicted_cwes = {}
    for sample, p, ci in zip(benchmark, probs, cwe_idx):
        predicted_cwes[sample.id] = vocab.cwes[ci]
        findings[sample.id] = {vocab.cwes[ci]} if p >= threshold else set()
    return findings, probs, predicted_cwes


@dataclass
class StageReport:
    stage: str
    epochs_run: int
    steps: int
    total_steps: int
    warmup_steps: int
    step_losses: list[float]
    per_epoch: list[dict]
    best_metric: float
    best_epoch: int
    checkpoint_path: str | None
    stopped_early: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _binary_labels(samples: list[Sample]) -> np.ndarray:
    return np.array([1 if s.is_vulnerable else 0 for s in samples])


def _cwe_label_matrix(samples: list[Sample], vocab: CweVocab) -> np.ndarray:
    mat = np.zeros((len(samples), len(vocab)))
    for i, s in enumerate(samples):
        if s.is_vulnerable and s.cwe:
            idx = vocab.index(s.cwe)
            if idx is not None:
                mat[i, idx] = 1.0
    return mat


def run_stage(model: VulnNet, stage: StageConfig, corpora: dict[str, Corpus],
              tokenizer, *, seed: int = 42,
              loss_cfg: LossConfig | None = None,
              rank_table: RankTable | None = None,
              vocab: CweVocab | None = None,
              benchmark: Corpus | None = None,
              bonus: scoring.BonusTable | None = None,
              hierarchy: scoring.CweHierarchy | None = None,
              out_dir=None) -> StageReport:
    """Train one stage and leave the model holding the best checkpoint."""
    loss_cfg = loss_cfg or LossConfig()
    vocab = vocab or CweVocab()

    missing = [name for name in stage.datasets if name not in corpora]
    if missing:
        raise ValueError(f"stage {stage.name}: unknown corpora {missing}")
    pool = [s for name in stage.datasets for s in corpora[name]]
    if not pool:
        raise ValueError(f"stage {stage.name}: empty training pool")
    if stage.checkpoint_metric == "castle_score":
        if benchmark is None or bonus is None or hierarchy is None:
            raise ValueError(f"stage {stage.name}: castle_score checkpointing "
                             "needs a benchmark corpus, bonus table, and hierarchy")
    if stage.use_cwe_loss:
        unannotated = [s.id for s in pool if s.is_vulnerable and not s.cwe]
        if unannotated:
            raise ValueError(f"stage {stage.name}: CWE loss needs annotated "
                             f"corpora; samples without cwe: {unannotated[:5]}")

    if stage.reinit_cwe_head:
        model.reinit_cwe_head(int(substream(seed, "head_reinit").integers(2**31)))

    class_w = (losses.class_weights(vocab.cwes, rank_table, loss_cfg.gamma)
               if rank_table is not None else np.ones(len(vocab)))

    train, val = stratified_split(Corpus(pool), seed=seed)
    if not val:
        val = list(train)

    steps_per_epoch = max(1, math.ceil(len(train) / stage.effective_batch))
    total_steps = stage.epochs * steps_per_epoch
    warmup = min(stage.warmup_steps, max(total_steps - 1, 0))

    groups = optim.differential_lr_groups(model.named_parameters(),
                                          stage.lr_backbone, stage.lr_head)
    opt = optim.AdamW(groups)
    shuffle_rng = substream(seed, "shuffle")
    augment_rng = substream(seed, "augment")
    dropout_rng = substream(seed, "dropout")
    model.cfg = replace(model.cfg, dropout=stage.dropout)

    step_losses: list[float] = []
    per_epoch: list[dict] = []
    best_metric = -np.inf
    best_epoch = -1
    best_state = None
    opt_step = 0
    stopped_early = False

    for epoch in range(stage.epochs):
        order = shuffle_rng.permutation(len(train))
        micro_since_step = 0
        epoch_losses = []
        for start in range(0, len(train), stage.batch_size):
            chunk = [train[i] for i in order[start:start + stage.batch_size]]
            codes = [augment.augment_sample(s.code, augment_rng, stage.augment_prob)
                     for s in chunk]
            tokens, mask = encode_batch(codes, tokenizer, stage.max_seq_len)
            out = model.forward(tokens, mask, training=True,
                                dropout_rng=dropout_rng)
            l_vul = losses.vul_loss(_binary_labels(chunk), out.binary_logits,
                                    loss_cfg)
            if stage.use_cwe_loss:
                l_cwe = losses.cwe_loss(_cwe_label_matrix(chunk, vocab),
                                        ag.sigmoid(out.cwe_logits),
                                        losses.vul_probabilities(out.binary_logits),
                                        class_w, loss_cfg)
            else:
                l_cwe = ag.Tensor(np.zeros(()))
            loss = losses.total_loss(l_vul, l_cwe, loss_cfg)
            scaled = loss * (1.0 / stage.grad_accumulation)
            scaled.backward()
            epoch_losses.append(loss.item())
            step_losses.append(loss.item())
            micro_since_step += 1
            if micro_since_step == stage.grad_accumulation or \
                    start + stage.batch_size >= len(train):
                optim.clip_grad_norm(groups, 1.0)
                lr_scale = optim.cosine_lr(opt_step + 1, total_steps + 1, warmup)
                opt.step(lr_scale)
                opt.zero_grad()
                opt_step += 1
                micro_since_step = 0

        record = {"epoch": epoch, "mean_loss": float(np.mean(epoch_losses))}
        val_probs, _ = evaluate(model, val, tokenizer, stage.max_seq_len)
        record["val_f1"] = scoring.binary_metrics(_binary_labels(val), val_probs,
                                                  loss_cfg.tau)["f1"]
        if stage.checkpoint_metric == "castle_score":
            findings, _, _ = model_findings(model, list(benchmark), tokenizer,
                                            stage.max_seq_len, vocab,
                                            loss_cfg.tau)
            record["castle_score"] = scoring.castle_score(list(benchmark),
                                                          findings, bonus,
                                                          hierarchy).total
        metric = record[stage.checkpoint_metric]
        if metric > best_metric:
            best_metric = metric
            best_epoch = epoch
            best_state = model.state_arrays()
        if stage.target_train_accuracy is not None:
            train_probs, _ = evaluate(model, train, tokenizer, stage.max_seq_len)
            record["train_accuracy"] = scoring.binary_metrics(
                _binary_labels(train), train_probs, loss_cfg.tau)["accuracy"]
            if record["train_accuracy"] >= stage.target_train_accuracy:
                per_epoch.append(record)
                stopped_early = True
                break
        per_epoch.append(record)

    if best_state is not None:
        model.load_state_arrays(best_state)

    ckpt_path = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        ckpt_path = str(out_dir / f"{stage.name}.ckpt")
        checkpoint.save(ckpt_path, model.cfg.to_dict(), model.state_arrays())

    return StageReport(stage=stage.name, epochs_run=len(per_epoch),
                       steps=opt_step, total_steps=total_steps,
                       warmup_steps=warmup, step_losses=step_losses,
                       per_epoch=per_epoch, best_metric=float(best_metric),
                       best_epoch=best_epoch, checkpoint_path=ckpt_path,
                       stopped_early=stopped_early)


def run_pipeline(model: VulnNet, stages: list[StageConfig],
                 corpora: dict[str, Corpus], tokenizer, **kwargs) -> list[StageReport]:
    """Run the staged curriculum in order; each stage starts from the
    previous stage's best checkpoint."""
    return [run_stage(model, stage, corpora, tokenizer, **kwargs)
            for stage in stages]
