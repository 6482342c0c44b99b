"""Command-line entry points.

Every subcommand is driven by a JSON config (unknown keys rejected) plus
--seed/--out overrides, and writes deterministic reports: anything
time-dependent lives in the report's "meta" block.
"""

from __future__ import annotations

import argparse
import json
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import autograd as ag
from . import curation, layers, losses, optim, scoring, trainer
from .checkpoint import canonical_json
from .config import ModelConfig, PRESETS, count_parameters, get_preset
from .corpus import Corpus, CweVocab
from .network import VulnNet
from .synth import SyntheticCorpusSpec, generate_benchmark, generate_corpus
from .tokenizer import build_tokenizer

PAPER_TOTAL = 693_000_000
PAPER_ACTIVE = 353_000_000


def _data_path(name: str) -> Path:
    return Path(resources.files("vulnmoe").joinpath("data", name))


def load_config(path, allowed: set[str], required: set[str]) -> dict:
    raw = json.loads(Path(path).read_text())
    if not isinstance(raw, dict):
        raise ValueError(f"{path}: config must be a JSON object")
    unknown = set(raw) - allowed
    if unknown:
        raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
    missing = required - set(raw)
    if missing:
        raise ValueError(f"{path}: missing required keys {sorted(missing)}")
    return raw


def write_report(out_dir: Path, name: str, payload: dict, meta: dict) -> Path:
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / name
    body = {"meta": {**meta, "written_at": time.strftime("%Y-%m-%dT%H:%M:%S")},
            **payload}
    path.write_text(json.dumps(body, indent=2, sort_keys=True) + "\n")
    return path


def _resolve_model(cfg: dict) -> ModelConfig:
    if "model" in cfg:
        return ModelConfig.from_dict(cfg["model"])
    return get_preset(cfg.get("preset", "paper"))


def _resolve_tokenizer(cfg: dict):
    spec = cfg.get("tokenizer", {"kind": "clex", "vocab_size": 512})
    return build_tokenizer(spec.get("kind", "clex"), spec.get("vocab_size"))


def _resolve_tables(cfg: dict):
    rank_path = cfg.get("rank_table") or _data_path("rank_table.txt")
    hier_path = cfg.get("hierarchy") or _data_path("hierarchy.txt")
    rank_table = losses.RankTable.from_file(rank_path)
    hierarchy = scoring.CweHierarchy.from_file(hier_path)
    if cfg.get("bonus"):
        bonus = scoring.BonusTable.from_file(cfg["bonus"])
    else:
        bonus = scoring.BonusTable.from_ranks(rank_table.ranks)
    return rank_table, hierarchy, bonus


# ---------------------------------------------------------------------------

def cmd_paramcount(args) -> int:
    if args.config:
        cfg = load_config(args.config, {"preset", "model"}, set())
        model_cfg = _resolve_model(cfg)
        preset = cfg.get("preset")
    else:
        preset = args.preset
        model_cfg = get_preset(preset)
    total, active = count_parameters(model_cfg)
    print(f"total parameters:  {total:,}")
    print(f"active per token:  {active:,}")
    if preset == "paper":
        dev_t = 100.0 * abs(total - PAPER_TOTAL) / PAPER_TOTAL
        dev_a = 100.0 * abs(active - PAPER_ACTIVE) / PAPER_ACTIVE
        print(f"deviation from {PAPER_TOTAL:,}: {dev_t:.3f}%")
        print(f"deviation from {PAPER_ACTIVE:,}: {dev_a:.3f}%")
    return 0


def _op_grad_checks(rng: np.random.Generator) -> list[ag.GradReport]:
    """Finite-difference checks for every differentiable primitive at small
    random shapes. Each op is pushed to a scalar through a fixed random
    cotangent so every output coordinate matters."""
    def r(*shape):
        return ag.Tensor(rng.normal(size=shape))

    def against(op, *cotangent_shape):
        cot = ag.Tensor(rng.normal(size=cotangent_shape))
        return lambda x: ag.tsum(ag.mul(op(x), cot))

    w = ag.Tensor(rng.normal(size=(4, 3)))
    b34 = ag.Tensor(rng.normal(size=(3, 4)))
    b4 = ag.Tensor(rng.normal(size=(4,)))
    tail = ag.Tensor(rng.normal(size=(2, 4)))
    gamma = ag.Tensor(rng.normal(size=(4,)))
    cases = [
        ("matmul", against(lambda x: ag.matmul(x, w), 3, 3), r(3, 4)),
        ("add", against(lambda x: ag.add(x, b34), 3, 4), r(3, 4)),
        ("add-bias", against(lambda x: ag.add(b34, x), 3, 4), r(4)),
        ("mul", against(lambda x: ag.mul(x, b34), 3, 4), r(3, 4)),
        ("mul-rowscalar", against(lambda x: ag.mul(b34, x), 3, 4), r(3, 1)),
        ("softmax", against(lambda x: ag.softmax(x, axis=-1), 3, 5), r(3, 5)),
        ("sigmoid", against(ag.sigmoid, 4), r(4)),
        ("silu", against(ag.silu, 4), r(4)),
        ("log", lambda x: ag.tsum(ag.log(ag.add_scalar(ag.mul(x, x), 1.0))), r(4)),
        ("pow", lambda x: ag.tsum(ag.pow_scalar(ag.add_scalar(ag.mul(x, x), 0.5),
                                                1.5)), r(4)),
        ("sum-axis", against(lambda x: ag.tsum(x, axis=0), 4), r(3, 4)),
        ("mean", lambda x: ag.tmean(ag.mul(x, x)), r(3, 4)),
        ("concat", against(lambda x: ag.concat([x, tail], axis=0), 5, 4), r(3, 4)),
        ("narrow", against(lambda x: ag.narrow(x, -1, 1, 2), 3, 2), r(3, 4)),
        ("transpose", against(ag.transpose, 4, 3), r(3, 4)),
        ("reshape", against(lambda x: ag.reshape(x, (4, 3)), 4, 3), r(3, 4)),
        ("embedding", against(lambda x: ag.embedding_lookup(x, [0, 2, 2, 1]),
                              4, 3), r(4, 3)),
        ("take-rows", against(lambda x: ag.take_rows(x, [2, 0, 2]), 3, 4), r(3, 4)),
        ("take-per-row", against(lambda x: ag.take_per_row(x, [1, 0, 3]), 3, 1),
         r(3, 4)),
        ("clamp", against(lambda x: ag.clamp(x, -0.75, 0.75), 4),
         ag.Tensor(np.array([-2.0, -0.3, 0.2, 1.5]))),
        ("rope", against(lambda x: layers.apply_rope(x, [0, 1, 5], 100.0), 3, 4),
         r(3, 4)),
        ("rms-norm", against(lambda x: layers.rms_norm(x, gamma, 1e-6), 3, 4),
         r(3, 4)),
    ]
    return [ag.grad_check(f, x, eps=1e-5, tol=1e-5, name=name)
            for name, f, x in cases]


def end_to_end_grad_check(seed: int = 0, eps: float = 1e-5,
                          tol: float = 1e-4) -> list[ag.GradReport]:
    """Finite-difference check of the combined training loss through the
    tiny preset, one report per parameter tensor."""
    model = VulnNet(get_preset("tiny"), seed=seed)
    tokens = [[1, 2, 3, 4], [5, 16, 7, 0]]
    mask = [[1, 1, 1, 1], [1, 1, 1, 0]]
    labels = np.array([1, 0])
    cwe_labels = np.zeros((2, 25))
    cwe_labels[0, 3] = 1.0
    cfg = losses.LossConfig()
    weights = np.ones(25)
    weights[3] = losses.rank_weight(2, cfg.gamma)

    def loss_fn() -> ag.Tensor:
        out = model.forward(tokens, mask, training=False)
        l_vul = losses.vul_loss(labels, out.binary_logits, cfg)
        l_cwe = losses.cwe_loss(cwe_labels, ag.sigmoid(out.cwe_logits),
                                losses.vul_probabilities(out.binary_logits),
                                weights, cfg)
        return losses.total_loss(l_vul, l_cwe, cfg)

    reports = []
    for name, param in list(model.named_parameters().items()):
        def f(x, _name=name):
            saved = model.params[_name]
            model.params[_name] = x
            try:
                return loss_fn()
            finally:
                model.params[_name] = saved
        reports.append(ag.grad_check(f, param, eps=eps, tol=tol,
                                     name=f"total_loss/{name}"))
    return reports


def cmd_gradcheck(args) -> int:
    rng = np.random.default_rng(args.seed)
    reports = _op_grad_checks(rng)
    if not args.ops_only:
        reports += end_to_end_grad_check(seed=args.seed)
    failures = 0
    for rep in reports:
        status = "PASS" if rep.passed else "FAIL"
        print(f"[{status}] {rep.op_name}: max rel err {rep.max_relative_error:.2e} "
              f"(tol {rep.tolerance:.0e})")
        failures += not rep.passed
    print(f"{len(reports) - failures}/{len(reports)} gradient checks passed")
    return 1 if failures else 0


def cmd_gen_synth(args) -> int:
    cfg = load_config(args.config, {"num_samples", "cwes", "vulnerable_fraction",
                                    "seed", "benchmark", "family"}, set())
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    if cfg.get("benchmark"):
        corpus = generate_benchmark(seed=seed, cwes=cfg.get("cwes"))
        name = "benchmark.jsonl"
    else:
        spec = SyntheticCorpusSpec(
            num_samples=cfg["num_samples"],
            cwes=tuple(cfg.get("cwes") or SyntheticCorpusSpec.__dataclass_fields__["cwes"].default),
            vulnerable_fraction=cfg.get("vulnerable_fraction", 0.6),
            family=cfg.get("family", "default"),
            seed=seed)
        corpus = generate_corpus(spec)
        name = "corpus.jsonl"
    path = out_dir / name
    corpus.save_jsonl(path)
    print(f"wrote {len(corpus)} samples to {path}")
    return 0


_STAGE_KEYS = {"name", "lr_backbone", "lr_head", "batch_size",
               "grad_accumulation", "epochs", "max_seq_len", "dropout",
               "checkpoint_metric", "datasets", "warmup_steps", "augment_prob",
               "use_cwe_loss", "reinit_cwe_head", "target_train_accuracy"}


def cmd_train(args) -> int:
    cfg = load_config(args.config,
                      {"seed", "preset", "model", "tokenizer", "rank_table",
                       "hierarchy", "bonus", "loss", "corpora", "benchmark",
                       "stages"},
                      {"corpora", "stages"})
    seed = args.seed if args.seed is not None else cfg.get("seed", 42)
    out_dir = Path(args.out)
    model_cfg = _resolve_model(cfg)
    tokenizer = _resolve_tokenizer(cfg)
    rank_table, hierarchy, bonus = _resolve_tables(cfg)
    loss_cfg = losses.LossConfig(**cfg.get("loss", {}))
    corpora = {name: Corpus.load_jsonl(path)
               for name, path in cfg["corpora"].items()}
    benchmark = (Corpus.load_jsonl(cfg["benchmark"], require_code=True)
                 if cfg.get("benchmark") else None)
    stages = []
    for block in cfg["stages"]:
        unknown = set(block) - _STAGE_KEYS
        if unknown:
            raise ValueError(f"stage {block.get('name', '?')}: unknown keys "
                             f"{sorted(unknown)}")
        stages.append(trainer.StageConfig(**block))

    model = VulnNet(model_cfg, seed=seed)
    reports = trainer.run_pipeline(model, stages, corpora, tokenizer,
                                   seed=seed, loss_cfg=loss_cfg,
                                   rank_table=rank_table, benchmark=benchmark,
                                   bonus=bonus, hierarchy=hierarchy,
                                   out_dir=out_dir)
    payload = {"stages": [r.to_dict() for r in reports]}
    path = write_report(out_dir, "train_report.json", payload,
                        {"command": "train", "seed": seed,
                         "config": canonical_json(cfg)})
    for rep in reports:
        print(f"{rep.stage}: best {rep.best_metric:.4f} at epoch "
              f"{rep.best_epoch} ({rep.steps} steps)")
    print(f"report: {path}")
    return 0


def cmd_eval(args) -> int:
    from . import checkpoint as ckpt
    cfg = load_config(args.config,
                      {"seed", "checkpoint", "tokenizer", "corpus", "threshold",
                       "sweep", "rank_table", "hierarchy", "bonus", "csv"},
                      {"checkpoint", "corpus"})
    seed = args.seed if args.seed is not None else cfg.get("seed", 42)
    out_dir = Path(args.out)
    manifest, arrays = ckpt.load(cfg["checkpoint"])
    model = VulnNet(ModelConfig.from_dict(manifest), seed=seed)
    model.load_state_arrays(arrays)
    tokenizer = _resolve_tokenizer(cfg)
    _, hierarchy, bonus = _resolve_tables(cfg)
    corpus = Corpus.load_jsonl(cfg["corpus"])
    vocab = CweVocab()
    threshold = cfg.get("threshold", 0.5)

    samples = list(corpus)
    findings, probs, predicted_cwes = trainer.model_findings(
        model, samples, tokenizer, model.cfg.max_seq_len, vocab, threshold)
    labels = [1 if s.is_vulnerable else 0 for s in samples]
    payload = {
        "binary": scoring.binary_metrics(labels, probs, threshold),
        "per_cwe": scoring.per_cwe_metrics(
            samples, {sid: int(len(f) > 0) for sid, f in findings.items()}),
        "castle": {
            "total": scoring.castle_score(samples, findings, bonus, hierarchy).total,
            "counts": scoring.castle_score(samples, findings, bonus, hierarchy).counts,
        },
    }
    if cfg.get("sweep", True):
        payload["threshold_sweep"] = scoring.threshold_sweep(
            labels, probs, benchmark=samples, predicted_cwes=predicted_cwes,
            bonus=bonus, hierarchy=hierarchy)
    path = write_report(out_dir, "eval_report.json", payload,
                        {"command": "eval", "seed": seed})
    if cfg.get("csv"):
        rows = ["cwe,precision,recall,f1,support"]
        for cwe, m in payload["per_cwe"]["per_cwe"].items():
            rows.append(f"{cwe},{m['precision']:.4f},{m['recall']:.4f},"
                        f"{m['f1']:.4f},{m['support']}")
        (out_dir / "per_cwe.csv").write_text("\n".join(rows) + "\n")
    print(f"binary f1 {payload['binary']['f1']:.4f}, castle "
          f"{payload['castle']['total']:.0f}")
    print(f"report: {path}")
    return 0


def cmd_score(args) -> int:
    cfg = load_config(args.config,
                      {"benchmark", "findings", "rank_table", "hierarchy",
                       "bonus"},
                      {"benchmark", "findings"})
    out_dir = Path(args.out)
    _, hierarchy, bonus = _resolve_tables(cfg)
    benchmark = list(Corpus.load_jsonl(cfg["benchmark"], require_code=False))
    findings = scoring.load_findings(cfg["findings"])
    report = scoring.castle_score(benchmark, findings, bonus, hierarchy)
    labels = [1 if s.is_vulnerable else 0 for s in benchmark]
    flagged = [1.0 if findings.get(s.id) else 0.0 for s in benchmark]
    payload = {
        "total": report.total,
        "castle_counts": report.counts,
        "binary": scoring.binary_metrics(labels, flagged),
        "per_sample": [{"id": e.sample_id, "score": e.score,
                        "category": e.category, "findings": e.findings,
                        "matched_cwe": e.matched_cwe, "bonus": e.bonus}
                       for e in report.per_sample],
    }
    path = write_report(out_dir, "score_report.json", payload,
                        {"command": "score"})
    print(f"castle score: {report.total:.0f} (counts {report.counts})")
    print(f"report: {path}")
    return 0


def cmd_dedup(args) -> int:
    cfg = load_config(args.config,
                      {"corpus", "threshold", "ngram", "num_hashes", "seed"},
                      {"corpus"})
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    corpus = Corpus.load_jsonl(cfg["corpus"])
    retained, report = curation.dedup(
        corpus, threshold=cfg.get("threshold", 0.85), n=cfg.get("ngram", 5),
        num_hashes=cfg.get("num_hashes", 128), seed=seed)
    retained.save_jsonl(out_dir / "retained.jsonl")
    payload = {"kept": report.kept, "scanned": report.scanned,
               "removed": [{"removed": r, "kept": k, "estimate": e}
                           for r, k, e in report.removed]}
    path = write_report(out_dir, "dedup_report.json", payload,
                        {"command": "dedup", "seed": seed})
    print(f"kept {report.kept}/{report.scanned}; removed "
          f"{len(report.removed)} near-duplicates")
    print(f"report: {path}")
    return 0


def cmd_leak(args) -> int:
    cfg = load_config(args.config,
                      {"train", "eval", "threshold", "ngram", "num_hashes",
                       "seed", "assert_no_leakage"},
                      {"train", "eval"})
    seed = args.seed if args.seed is not None else cfg.get("seed", 0)
    out_dir = Path(args.out)
    train = Corpus.load_jsonl(cfg["train"])
    eval_corpus = Corpus.load_jsonl(cfg["eval"])
    report = curation.leakage_check(
        train, eval_corpus, report_threshold=cfg.get("threshold", 0.35),
        n=cfg.get("ngram", 5), num_hashes=cfg.get("num_hashes", 128), seed=seed)
    payload = {"max_similarity": report.max_similarity,
               "threshold": report.threshold,
               "passed": report.passed,
               "flagged": [{"eval": e, "train": t, "estimate": j}
                           for e, t, j in report.flagged]}
    path = write_report(out_dir, "leak_report.json", payload,
                        {"command": "leak", "seed": seed})
    print(f"max similarity {report.max_similarity:.3f} "
          f"(threshold {report.threshold}); "
          f"{'no leakage' if report.passed else 'LEAKAGE FLAGGED'}")
    print(f"report: {path}")
    if cfg.get("assert_no_leakage") and not report.passed:
        return 1
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="vulnmoe",
        description="MoE transformer vulnerability-detection toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("paramcount", help="analytic parameter counts")
    p.add_argument("--preset", default="paper", choices=sorted(PRESETS))
    p.add_argument("--config", default=None)
    p.set_defaults(fn=cmd_paramcount)

    p = sub.add_parser("gradcheck", help="finite-difference gradient suite")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--ops-only", action="store_true",
                   help="skip the end-to-end model check")
    p.set_defaults(fn=cmd_gradcheck)

    for name, fn, needs_out in (("gen-synth", cmd_gen_synth, True),
                                ("train", cmd_train, True),
                                ("eval", cmd_eval, True),
                                ("score", cmd_score, True),
                                ("dedup", cmd_dedup, True),
                                ("leak", cmd_leak, True)):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--out", required=needs_out)
        p.set_defaults(fn=fn)

    args = parser.parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
