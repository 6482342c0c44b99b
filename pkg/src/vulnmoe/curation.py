"""Dataset-quality machinery: the dual-verifier agreement protocol with its
repair loop, MinHash near-duplicate detection, cross-corpus leakage
checking, and distribution reporting.

Verifiers are pluggable; tests and the CLI use scripted mocks driven by a
JSONL file of per-(sample, iteration) verdicts. Shingling runs over lexer
tokens, so renamed identifiers still collide on structure.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Callable, Optional

import numpy as np

from . import clex
from .corpus import Corpus, Sample, VULNERABLE, SAFE


class FormalVerdict(Enum):
    VIOLATION_DETECTED = "Violation Detected"
    VERIFICATION_SUCCESS = "Verification Success"
    TIMEOUT = "Timeout"
    COMPILE_ERROR = "Compile Error"


class LlmVerdict(Enum):
    VULNERABLE_VIOLATION = "Vulnerable Code: Violation Detected"
    SAFE_SUCCESS = "Safe Code: Verification Success"
    SAFE_ISSUES = "Safe Code: Issues Found"
    VULNERABLE_NO_VIOLATION = "Vulnerable Code: No Violation"


class Decision(Enum):
    ACCEPT = "accept"
    DISCARD = "discard"
    REPAIR = "repair"


@dataclass(frozen=True)
class CurationDecision:
    decision: Decision
    reason: str


class ProtocolError(ValueError):
    """The verifier pair violated the agreement protocol's contract."""


class VerifierFault(RuntimeError):
    """A verifier failed internally; the sample must be quarantined."""

    def __init__(self, sample_id: str, diagnostics: str):
        super().__init__(f"verifier fault on sample {sample_id}: {diagnostics}")
        self.sample_id = sample_id
        self.diagnostics = diagnostics


_DECISIVE = (FormalVerdict.VIOLATION_DETECTED, FormalVerdict.VERIFICATION_SUCCESS)


def agreement_decide(formal: FormalVerdict, llm: Optional[LlmVerdict],
                     intended: str) -> CurationDecision:
    """Accept only consistent verdict pairs that match the intended label;
    timeouts and compile errors go to repair; everything else is discarded."""
    if intended not in (VULNERABLE, SAFE):
        raise ValueError(f"intended label {intended!r} must be "
                         f"'{VULNERABLE}' or '{SAFE}'")
    if formal in (FormalVerdict.TIMEOUT, FormalVerdict.COMPILE_ERROR):
        return CurationDecision(Decision.REPAIR,
                                f"formal verifier returned {formal.value}")
    if llm is None:
        raise ProtocolError(f"decisive formal verdict {formal.value} requires an "
                            "LLM verdict, got none")
    if (formal is FormalVerdict.VIOLATION_DETECTED
            and llm is LlmVerdict.VULNERABLE_VIOLATION
            and intended == VULNERABLE):
        return CurationDecision(Decision.ACCEPT, "vulnerable sample accepted")
    if (formal is FormalVerdict.VERIFICATION_SUCCESS
            and llm is LlmVerdict.SAFE_SUCCESS
            and intended == SAFE):
        return CurationDecision(Decision.ACCEPT, "safe sample accepted")
    return CurationDecision(Decision.DISCARD,
                            f"verification disagreement: formal={formal.value!r}, "
                            f"llm={llm.value!r}, intended={intended}")


@dataclass
class RepairOutcome:
    decision: CurationDecision
    iterations: int            # repair transformations applied
    history: list[CurationDecision] = field(default_factory=list)


def repair_loop(sample: Sample, verifier, repairer: Optional[Callable] = None,
                max_iters: int = 5) -> RepairOutcome:
    """Run verify -> repair -> re-verify until the verdict pair is decisive
    or the iteration limit is hit.

    `verifier.verify(sample, iteration)` returns (FormalVerdict,
    LlmVerdict|None); iteration 0 is the initial check, iteration i the
    check after the i-th repair. Disagreements discard immediately (they
    are not repairable); exhausting the limit discards too.
    """
    if repairer is None:
        repairer = lambda s, i: s
    history = []
    iteration = 0
    while True:
        try:
            formal, llm = verifier.verify(sample, iteration)
        except (ProtocolError,):
            raise
        except Exception as exc:
            raise VerifierFault(sample.id, repr(exc)) from exc
        decision = agreement_decide(formal, llm, sample.label)
        history.append(decision)
        if decision.decision is not Decision.REPAIR:
            return RepairOutcome(decision, iteration, history)
        if iteration >= max_iters:
            final = CurationDecision(Decision.DISCARD,
                                     f"repair limit of {max_iters} exceeded")
            history.append(final)
            return RepairOutcome(final, iteration, history)
        iteration += 1
        sample = repairer(sample, iteration)


class ScriptedVerifier:
    """Mock verifier pair driven by {sample_id, iteration, formal, llm}
    JSONL records. Missing entries raise, which repair_loop reports as a
    verifier fault."""

    def __init__(self, script: dict[tuple[str, int], tuple[FormalVerdict,
                                                           Optional[LlmVerdict]]]):
        self.script = script

    @classmethod
    def from_file(cls, path) -> "ScriptedVerifier":
        script = {}
        for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip():
                continue
            record = json.loads(line)
            for required in ("sample_id", "iteration", "formal"):
                if required not in record:
                    raise ValueError(f"{path}:{line_no}: missing field {required!r}")
            formal = FormalVerdict(record["formal"])
            llm = LlmVerdict(record["llm"]) if record.get("llm") is not None else None
            script[(str(record["sample_id"]), int(record["iteration"]))] = (formal, llm)
        return cls(script)

    def verify(self, sample: Sample, iteration: int):
        key = (sample.id, iteration)
        if key not in self.script:
            raise KeyError(f"no scripted verdict for sample {sample.id} "
                           f"iteration {iteration}")
        return self.script[key]


# ---------------------------------------------------------------------------
# MinHash near-duplicate detection.

_MERSENNE_61 = (1 << 61) - 1


@dataclass
class MinHashSignature:
    values: np.ndarray         # (num_hashes,) uint64 permutation minima
    num_hashes: int
    seed: int


def shingle_set(text: str, n: int = 5) -> set[bytes]:
    """n-gram shingles over the lexer token stream. Texts shorter than n
    tokens collapse to a single whole-sequence shingle."""
    tokens = clex.code_tokens(text)
    if not tokens:
        raise ValueError("cannot shingle empty text (no tokens)")
    if len(tokens) < n:
        return {"\x1f".join(tokens).encode("utf-8")}
    return {"\x1f".join(tokens[i:i + n]).encode("utf-8")
            for i in range(len(tokens) - n + 1)}


def _fingerprints(shingles: set[bytes]) -> np.ndarray:
    fps = np.fromiter(
        (int.from_bytes(hashlib.blake2b(s, digest_size=8).digest(), "little")
         for s in sorted(shingles)),
        dtype=np.uint64, count=len(shingles))
    return fps


def _permutation_params(num_hashes: int, seed: int):
    rng = np.random.default_rng(seed)
    # 64-bit multiply-shift family: odd multipliers, arbitrary offsets,
    # arithmetic mod 2**64 via natural uint64 wraparound.
    a = rng.integers(1, 1 << 62, size=num_hashes, dtype=np.uint64) * np.uint64(2) + np.uint64(1)
    b = rng.integers(0, 1 << 63, size=num_hashes, dtype=np.uint64)
    return a, b


def signature_from_shingles(shingles: set[bytes], num_hashes: int = 128,
                            seed: int = 0) -> MinHashSignature:
    if not shingles:
        raise ValueError("cannot sign an empty shingle set")
    fps = _fingerprints(shingles)
    a, b = _permutation_params(num_hashes, seed)
    with np.errstate(over="ignore"):
        hashed = a[:, None] * fps[None, :] + b[:, None]
    return MinHashSignature(values=hashed.min(axis=1), num_hashes=num_hashes,
                            seed=seed)


def minhash_signature(text: str, n: int = 5, num_hashes: int = 128,
                      seed: int = 0) -> MinHashSignature:
    return signature_from_shingles(shingle_set(text, n), num_hashes, seed)


def estimate_jaccard(a: MinHashSignature, b: MinHashSignature) -> float:
    if a.num_hashes != b.num_hashes or a.seed != b.seed:
        raise ValueError("signatures come from different hash families")
    return float(np.mean(a.values == b.values))


# ---------------------------------------------------------------------------
# Dedup and leakage over corpora.

@dataclass
class DedupReport:
    removed: list[tuple[str, str, float]]   # (removed_id, kept_id, estimate)
    kept: int
    scanned: int


def dedup(corpus: Corpus, threshold: float = 0.85, n: int = 5,
          num_hashes: int = 128, seed: int = 0,
          group_by: tuple = ("cwe", "label")) -> tuple[Corpus, DedupReport]:
    """Greedy near-duplicate removal within each (cwe, label) group, in
    corpus order: a sample whose estimated Jaccard against any retained
    group member reaches the threshold is dropped."""
    retained: list[Sample] = []
    removed: list[tuple[str, str, float]] = []
    kept_sigs: dict[tuple, list[tuple[str, MinHashSignature]]] = {}
    for sample in corpus:
        key = tuple(getattr(sample, attr) for attr in group_by)
        sig = minhash_signature(sample.code, n=n, num_hashes=num_hashes, seed=seed)
        duplicate_of = None
        estimate = 0.0
        for kept_id, kept_sig in kept_sigs.get(key, ()):
            est = estimate_jaccard(sig, kept_sig)
            if est >= threshold:
                duplicate_of, estimate = kept_id, est
                break
        if duplicate_of is None:
            retained.append(sample)
            kept_sigs.setdefault(key, []).append((sample.id, sig))
        else:
            removed.append((sample.id, duplicate_of, estimate))
    return Corpus(retained), DedupReport(removed=removed, kept=len(retained),
                                         scanned=len(corpus))


@dataclass
class LeakageReport:
    flagged: list[tuple[str, str, float]]   # (eval_id, train_id, estimate)
    max_similarity: float
    per_eval_max: dict[str, float]
    threshold: float
    passed: bool                            # no eval sample exceeds threshold


def leakage_check(train: Corpus, eval_corpus: Corpus,
                  report_threshold: float = 0.35, n: int = 5,
                  num_hashes: int = 128, seed: int = 0) -> LeakageReport:
    """Max estimated Jaccard of every eval sample against the training
    corpus. Read-only: corpora are never mutated."""
    if len(train) == 0 or len(eval_corpus) == 0:
        raise ValueError("leakage check needs two non-empty corpora")
    train_sigs = [(s.id, minhash_signature(s.code, n=n, num_hashes=num_hashes,
                                           seed=seed)) for s in train]
    flagged = []
    per_eval: dict[str, float] = {}
    overall = 0.0
    for sample in eval_corpus:
        sig = minhash_signature(sample.code, n=n, num_hashes=num_hashes, seed=seed)
        best_id, best = None, 0.0
        for train_id, train_sig in train_sigs:
            est = estimate_jaccard(sig, train_sig)
            if est > best:
                best_id, best = train_id, est
        per_eval[sample.id] = best
        overall = max(overall, best)
        if best > report_threshold and best_id is not None:
            flagged.append((sample.id, best_id, best))
    return LeakageReport(flagged=flagged, max_similarity=overall,
                         per_eval_max=per_eval, threshold=report_threshold,
                         passed=overall <= report_threshold)


def cwe_distribution(corpus: Corpus, token_counter: Callable[[str], int] | None = None) -> dict:
    """Per-CWE (vulnerable, safe, total) counts plus aggregate label and
    token-length statistics."""
    if token_counter is None:
        token_counter = lambda code: len(clex.code_tokens(code))
    per_cwe: dict[str, dict[str, int]] = {}
    lengths = []
    vulnerable = 0
    for sample in corpus:
        cwe = sample.cwe or "(none)"
        row = per_cwe.setdefault(cwe, {"vulnerable": 0, "safe": 0, "total": 0})
        row[sample.label] += 1
        row["total"] += 1
        vulnerable += sample.is_vulnerable
        lengths.append(token_counter(sample.code))
    total = len(corpus)
    if total == 0:
        return {"per_cwe": {}, "total": 0, "vulnerable": 0, "safe": 0,
                "vulnerable_pct": "0.0%", "token_length": {}}
    lengths_arr = np.asarray(lengths)
    return {
        "per_cwe": {cwe: per_cwe[cwe] for cwe in sorted(per_cwe)},
        "total": total,
        "vulnerable": vulnerable,
        "safe": total - vulnerable,
        "vulnerable_pct": f"{100.0 * vulnerable / total:.1f}%",
        "token_length": {"avg": float(lengths_arr.mean()),
                         "median": float(np.median(lengths_arr)),
                         "max": int(lengths_arr.max())},
    }
