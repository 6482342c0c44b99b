"""Labeled sample collections and their JSONL serialization.

A corpus line is {"id", "code", "label", "cwe"?, "source"?}; a benchmark
manifest line is the same without "code" being required. Label is
"vulnerable" or "safe"; "cwe" is a "CWE-<n>" string (for benchmark
composition it is the sample's group even when the sample itself is safe).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterator, Optional

VULNERABLE = "vulnerable"
SAFE = "safe"

# The 25 benchmark CWE categories, in class-index order.
CASTLE_CWES = [
    "CWE-22", "CWE-78", "CWE-89", "CWE-125", "CWE-134", "CWE-190", "CWE-253",
    "CWE-327", "CWE-362", "CWE-369", "CWE-401", "CWE-415", "CWE-416",
    "CWE-476", "CWE-522", "CWE-617", "CWE-628", "CWE-674", "CWE-761",
    "CWE-770", "CWE-787", "CWE-798", "CWE-822", "CWE-835", "CWE-843",
]


class CweVocab:
    """Bidirectional CWE-id <-> class-index mapping."""

    def __init__(self, cwes: list[str] | None = None):
        self.cwes = list(cwes) if cwes is not None else list(CASTLE_CWES)
        self._index = {c: i for i, c in enumerate(self.cwes)}

    def __len__(self) -> int:
        return len(self.cwes)

    def index(self, cwe: str) -> Optional[int]:
        return self._index.get(cwe)

    def label_vector(self, cwes: list[str]) -> list[int]:
        vec = [0] * len(self.cwes)
        for cwe in cwes:
            idx = self.index(cwe)
            if idx is not None:
                vec[idx] = 1
        return vec


@dataclass
class Sample:
    id: str
    code: str
    label: str
    cwe: Optional[str] = None
    source: Optional[str] = None

    def __post_init__(self):
        if self.label not in (VULNERABLE, SAFE):
            raise ValueError(f"sample {self.id}: label {self.label!r} must be "
                             f"'{VULNERABLE}' or '{SAFE}'")

    @property
    def is_vulnerable(self) -> bool:
        return self.label == VULNERABLE

    def to_json(self) -> str:
        d = {k: v for k, v in asdict(self).items() if v is not None}
        return json.dumps(d, sort_keys=True)


@dataclass
class Corpus:
    samples: list[Sample] = field(default_factory=list)

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self) -> Iterator[Sample]:
        return iter(self.samples)

    def __getitem__(self, i):
        return self.samples[i]

    def save_jsonl(self, path) -> None:
        Path(path).write_text("".join(s.to_json() + "\n" for s in self.samples))

    @classmethod
    def load_jsonl(cls, path, *, require_code: bool = True) -> "Corpus":
        samples = []
        for line_no, line in enumerate(Path(path).read_text().splitlines(), 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ValueError(f"{path}:{line_no}: malformed JSON ({exc.msg})") from None
            for required in (("id", "label") + (("code",) if require_code else ())):
                if required not in record:
                    raise ValueError(f"{path}:{line_no}: missing field {required!r}")
            known = {"id", "code", "label", "cwe", "source"}
            unknown = set(record) - known
            if unknown:
                raise ValueError(f"{path}:{line_no}: unknown fields {sorted(unknown)}")
            samples.append(Sample(id=str(record["id"]),
                                  code=record.get("code", ""),
                                  label=record["label"],
                                  cwe=record.get("cwe"),
                                  source=record.get("source")))
        return cls(samples)
