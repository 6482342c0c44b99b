"""Benchmark scoring and classification metrics.

The benchmark score rewards matched detections (5 - |findings| + 1 +
bonus), rewards silence on safe code (+2), and charges every finding on a
missed or safe sample (-|findings|). Matching is hierarchy-aware: a
predicted CWE counts if it equals the ground truth or is its one-step
parent or child.

Benchmark counts use multi-finding accounting (every finding scored
independently), which is a different quantity from the binary confusion
matrix; the two live in separate functions on purpose.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .corpus import Sample, VULNERABLE


class CweHierarchy:
    """Parent/child edges over CWE ids; match is symmetric one-step."""

    def __init__(self, edges: list[tuple[str, str]] | None = None):
        self.parents: dict[str, set[str]] = {}
        self.children: dict[str, set[str]] = {}
        self._known: set[str] = set()
        self._warned: set[str] = set()
        for parent, child in edges or []:
            self.children.setdefault(parent, set()).add(child)
            self.parents.setdefault(child, set()).add(parent)
            self._known.update((parent, child))
        self._check_acyclic()

    def _check_acyclic(self) -> None:
        state: dict[str, int] = {}

        def visit(node: str) -> None:
            state[node] = 1
            for child in self.children.get(node, ()):
                if state.get(child) == 1:
                    raise ValueError(f"hierarchy contains a cycle through {child}")
                if state.get(child) is None:
                    visit(child)
            state[node] = 2

        for node in list(self.children):
            if state.get(node) is None:
                visit(node)

    @classmethod
    def from_file(cls, path) -> "CweHierarchy":
        edges = []
        for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            parts = [p.strip() for p in line.split(",")]
            if len(parts) != 2:
                raise ValueError(f"{path}:{line_no}: expected 'parent,child', "
                                 f"got {line!r}")
            edges.append((parts[0], parts[1]))
        return cls(edges)

    def _note_unknown(self, cwe: str) -> None:
        if cwe not in self._known and cwe not in self._warned:
            self._warned.add(cwe)
            warnings.warn(f"{cwe} not in hierarchy; treating it as a leaf with "
                          "no relatives", stacklevel=3)

    def match(self, pred: str, truth: str) -> bool:
        if pred == truth:
            return True
        self._note_unknown(pred)
        self._note_unknown(truth)
        return (pred in self.parents.get(truth, ()) or
                pred in self.children.get(truth, ()))


class BonusTable:
    """CWE id -> bonus points awarded for a matched detection."""

    def __init__(self, bonuses: dict[str, float]):
        for cwe, b in bonuses.items():
            if b < 0:
                raise ValueError(f"bonus for {cwe} must be >= 0, got {b}")
        self.bonuses = dict(bonuses)

    def get(self, cwe: str) -> float:
        return self.bonuses.get(cwe, 0.0)

    @classmethod
    def from_file(cls, path) -> "BonusTable":
        bonuses: dict[str, float] = {}
        for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                cwe, b = line.split(",")
                bonuses[cwe.strip()] = float(b)
            except ValueError:
                raise ValueError(f"{path}:{line_no}: expected 'CWE-id,bonus', "
                                 f"got {line!r}") from None
        return cls(bonuses)

    @classmethod
    def from_ranks(cls, ranks: dict[str, int], scale: float = 2.0) -> "BonusTable":
        """Default schedule: bonus decreases linearly with rank,
        scale*(26-r)/25 inside the Top 25 and zero outside."""
        return cls({cwe: scale * (26 - r) / 25.0
                    for cwe, r in ranks.items() if r <= 25})


@dataclass
class SampleScore:
    sample_id: str
    score: float
    category: str               # "matched" | "silent_safe" | "penalized"
    findings: list[str]
    matched_cwe: str | None = None
    bonus: float = 0.0


@dataclass
class CastleReport:
    total: float
    per_sample: list[SampleScore]
    # Multi-finding accounting: tp = matching findings on vulnerable
    # samples, fn = vulnerable samples with no matching finding, fp = every
    # non-matching finding, tn = safe samples with no findings.
    counts: dict[str, int] = field(default_factory=dict)


def sample_score(sample: Sample, findings: set[str], bonus: BonusTable,
                 hierarchy: CweHierarchy) -> SampleScore:
    k = len(findings)
    if sample.is_vulnerable:
        truth = sample.cwe
        matches = sorted(f for f in findings if truth and hierarchy.match(f, truth))
        if matches:
            best = max(matches, key=lambda f: (bonus.get(f), f))
            b = bonus.get(best)
            return SampleScore(sample.id, 5.0 - k + 1.0 + b, "matched",
                               sorted(findings), matched_cwe=best, bonus=b)
        return SampleScore(sample.id, float(-k), "penalized", sorted(findings))
    if k == 0:
        return SampleScore(sample.id, 2.0, "silent_safe", [])
    return SampleScore(sample.id, float(-k), "penalized", sorted(findings))


def castle_score(benchmark: list[Sample], results: dict[str, set[str]],
                 bonus: BonusTable, hierarchy: CweHierarchy) -> CastleReport:
    """Score a tool's findings over a benchmark. Samples missing from
    `results` count as empty finding sets; unknown result ids are errors."""
    known = {s.id for s in benchmark}
    unknown = sorted(set(results) - known)
    if unknown:
        raise ValueError(f"findings reference unknown sample ids: {unknown}")

    per_sample = []
    tp = fn = fp = tn = 0
    for sample in benchmark:
        findings = set(results.get(sample.id, set()))
        entry = sample_score(sample, findings, bonus, hierarchy)
        per_sample.append(entry)
        if sample.is_vulnerable:
            matching = {f for f in findings
                        if sample.cwe and hierarchy.match(f, sample.cwe)}
            tp += len(matching)
            fp += len(findings) - len(matching)
            if not matching:
                fn += 1
        else:
            if findings:
                fp += len(findings)
            else:
                tn += 1
    total = float(sum(e.score for e in per_sample))
    return CastleReport(total=total, per_sample=per_sample,
                        counts={"tp": tp, "tn": tn, "fp": fp, "fn": fn})


def load_findings(path) -> dict[str, set[str]]:
    """Findings JSONL: one {"id": ..., "findings": [CWE ids]} per sample.
    Duplicate findings collapse to a set."""
    results: dict[str, set[str]] = {}
    for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{line_no}: malformed JSON ({exc.msg})") from None
        for required in ("id", "findings"):
            if required not in record:
                raise ValueError(f"{path}:{line_no}: missing field {required!r}")
        results[str(record["id"])] = set(record["findings"])
    return results


# ---------------------------------------------------------------------------
# Binary and per-CWE classification metrics (independent of benchmark
# scoring; standard confusion-matrix definitions).

def binary_metrics(labels, probabilities, threshold: float = 0.5) -> dict:
    """Accuracy/precision/recall/F1 from thresholded probabilities. Ties at
    the threshold classify as vulnerable. Zero predicted positives give
    precision 0 with a flag."""
    y = np.asarray(labels, dtype=int)
    p = np.asarray(probabilities, dtype=float)
    pred = (p >= threshold).astype(int)
    tp = int(((pred == 1) & (y == 1)).sum())
    fp = int(((pred == 1) & (y == 0)).sum())
    tn = int(((pred == 0) & (y == 0)).sum())
    fn = int(((pred == 0) & (y == 1)).sum())
    no_positive_predictions = (tp + fp) == 0
    precision = 0.0 if no_positive_predictions else tp / (tp + fp)
    recall = 0.0 if (tp + fn) == 0 else tp / (tp + fn)
    f1 = 0.0 if (precision + recall) == 0 else 2 * precision * recall / (precision + recall)
    return {
        "accuracy": (tp + tn) / max(len(y), 1),
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "confusion": {"tp": tp, "fp": fp, "tn": tn, "fn": fn},
        "no_positive_predictions": no_positive_predictions,
    }


def metrics_from_confusion(tp: int, fp: int, tn: int, fn: int) -> dict:
    precision = 0.0 if (tp + fp) == 0 else tp / (tp + fp)
    recall = 0.0 if (tp + fn) == 0 else tp / (tp + fn)
    f1 = 0.0 if (precision + recall) == 0 else 2 * precision * recall / (precision + recall)
    return {"accuracy": (tp + tn) / max(tp + fp + tn + fn, 1),
            "precision": precision, "recall": recall, "f1": f1}


def per_cwe_metrics(samples: list[Sample], predictions: dict[str, int]) -> dict:
    """Per-CWE precision/recall/F1 over each CWE's own samples, from binary
    predictions (1 = flagged vulnerable). Samples without a CWE group are
    skipped; groups with no samples are omitted with a warning upstream."""
    groups: dict[str, list[Sample]] = {}
    for s in samples:
        if s.cwe:
            groups.setdefault(s.cwe, []).append(s)
    rows = {}
    f1s = []
    for cwe in sorted(groups):
        tp = fp = tn = fn = 0
        for s in groups[cwe]:
            pred = predictions.get(s.id, 0)
            if s.is_vulnerable:
                tp += pred
                fn += 1 - pred
            else:
                fp += pred
                tn += 1 - pred
        m = metrics_from_confusion(tp, fp, tn, fn)
        m["support"] = len(groups[cwe])
        rows[cwe] = m
        f1s.append(m["f1"])
    return {"per_cwe": rows,
            "macro_f1": float(np.mean(f1s)) if f1s else 0.0}


def threshold_sweep(labels, probabilities, *, benchmark: list[Sample] | None = None,
                    predicted_cwes: dict[str, str] | None = None,
                    bonus: BonusTable | None = None,
                    hierarchy: CweHierarchy | None = None,
                    lo: float = 0.4, hi: float = 0.6, step: float = 0.05) -> dict:
    """Stability report: F1 (and benchmark score, when a benchmark plus
    per-sample predicted CWEs are supplied) at each threshold in
    [lo, hi], with the max deviation from the 0.5 operating point."""
    thresholds = []
    t = lo
    while t <= hi + 1e-9:
        thresholds.append(round(t, 10))
        t += step
    if not any(abs(t - 0.5) < 1e-9 for t in thresholds):
        raise ValueError("sweep range must include the 0.5 operating point")

    probs = np.asarray(probabilities, dtype=float)
    rows = []
    for t in thresholds:
        row = {"threshold": t, "f1": binary_metrics(labels, probs, t)["f1"]}
        if benchmark is not None:
            if predicted_cwes is None or bonus is None or hierarchy is None:
                raise ValueError("benchmark sweep needs predicted_cwes, bonus, "
                                 "and hierarchy")
            id_order = [s.id for s in benchmark]
            results = {sid: ({predicted_cwes[sid]} if probs[i] >= t and sid in predicted_cwes
                             else set())
                       for i, sid in enumerate(id_order)}
            row["castle"] = castle_score(benchmark, results, bonus, hierarchy).total
        rows.append(row)

    base = next(r for r in rows if abs(r["threshold"] - 0.5) < 1e-9)
    report = {"rows": rows,
              "max_f1_deviation": max(abs(r["f1"] - base["f1"]) for r in rows)}
    if benchmark is not None:
        report["max_castle_deviation"] = max(abs(r["castle"] - base["castle"])
                                             for r in rows)
    return report
