"""Synthetic desk-scale corpora: small C snippets with planted
vulnerable/safe pattern pairs per CWE.

Each template family plants a discriminating idiom (missing bounds check,
use-after-free, unchecked division, ...) plus a per-CWE marker string so a
toy model can learn both the binary label and the category. Generation is
deterministic given the spec.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .corpus import Corpus, Sample, CASTLE_CWES, VULNERABLE, SAFE

_WORDS = ["count", "total", "index", "value", "entry", "record", "offset",
          "cursor", "buffer", "packet", "chunk", "slot", "width", "depth",
          "limit", "state"]

_FILLERS = [
    "    {v} = {v} + {c};\n",
    "    if ({v} > {c}) {{ {v} = {c}; }}\n",
    "    for (int step = 0; step < {c}; step++) {{ {v} += step; }}\n",
    "    {v} = {v} * 2;\n",
]


def _template_787(v: dict, vulnerable: bool) -> str:
    copy = (f"    strcpy({v['buf']}, {v['src']});\n" if vulnerable else
            f"    strncpy({v['buf']}, {v['src']}, sizeof({v['buf']}) - 1);\n"
            f"    {v['buf']}[sizeof({v['buf']}) - 1] = 0;\n")
    return (f"#include <string.h>\n"
            f"void {v['fn']}(const char *{v['src']}) {{\n"
            f"    char {v['buf']}[{v['size']}];\n"
            "@FILLER@" + copy +
            f"    puts(\"{v['marker']}\");\n"
            f"}}\n")


def _template_416(v: dict, vulnerable: bool) -> str:
    body = (f"    free({v['ptr']});\n    {v['acc']} = *{v['ptr']};\n" if vulnerable
            else f"    {v['acc']} = *{v['ptr']};\n    free({v['ptr']});\n")
    return (f"#include <stdlib.h>\n"
            f"int {v['fn']}(void) {{\n"
            f"    int *{v['ptr']} = malloc(sizeof(int));\n"
            f"    int {v['acc']} = 0;\n"
            f"    *{v['ptr']} = {v['size']};\n"
            "@FILLER@" + body +
            f"    puts(\"{v['marker']}\");\n"
            f"    return {v['acc']};\n"
            f"}}\n")


def _template_476(v: dict, vulnerable: bool) -> str:
    guard = "" if vulnerable else f"    if ({v['ptr']} == 0) {{ return -1; }}\n"
    return (f"#include <stdlib.h>\n"
            f"int {v['fn']}(void) {{\n"
            f"    int *{v['ptr']} = malloc({v['size']} * sizeof(int));\n"
            "@FILLER@" + guard +
            f"    {v['ptr']}[0] = {v['size']};\n"
            f"    puts(\"{v['marker']}\");\n"
            f"    return {v['ptr']}[0];\n"
            f"}}\n")


def _template_190(v: dict, vulnerable: bool) -> str:
    guard = ("" if vulnerable else
             f"    if ({v['a']} != 0 && {v['b']} > 2147483647 / {v['a']}) {{ return -1; }}\n")
    return (f"int {v['fn']}(int {v['a']}, int {v['b']}) {{\n"
            "@FILLER@" + guard +
            f"    int {v['acc']} = {v['a']} * {v['b']};\n"
            f"    puts(\"{v['marker']}\");\n"
            f"    return {v['acc']};\n"
            f"}}\n")


def _template_369(v: dict, vulnerable: bool) -> str:
    guard = "" if vulnerable else f"    if ({v['b']} == 0) {{ return 0; }}\n"
    return (f"int {v['fn']}(int {v['a']}, int {v['b']}) {{\n"
            "@FILLER@" + guard +
            f"    int {v['acc']} = {v['a']} / {v['b']};\n"
            f"    puts(\"{v['marker']}\");\n"
            f"    return {v['acc']};\n"
            f"}}\n")


def _template_134(v: dict, vulnerable: bool) -> str:
    call = (f"    printf({v['src']});\n" if vulnerable else
            f"    printf(\"%s\", {v['src']});\n")
    return (f"#include <stdio.h>\n"
            f"void {v['fn']}(const char *{v['src']}) {{\n"
            "@FILLER@" + call +
            f"    puts(\"{v['marker']}\");\n"
            f"}}\n")


def _template_401(v: dict, vulnerable: bool) -> str:
    release = "" if vulnerable else f"    free({v['ptr']});\n"
    return (f"#include <stdlib.h>\n"
            f"int {v['fn']}(void) {{\n"
            f"    char *{v['ptr']} = malloc({v['size']});\n"
            f"    if ({v['ptr']} == 0) {{ return -1; }}\n"
            f"    {v['ptr']}[0] = 7;\n"
            "@FILLER@" + release +
            f"    puts(\"{v['marker']}\");\n"
            f"    return 0;\n"
            f"}}\n")


def _template_generic(v: dict, vulnerable: bool) -> str:
    read = (f"    gets({v['buf']});\n" if vulnerable else
            f"    fgets({v['buf']}, sizeof({v['buf']}), stdin);\n")
    return (f"#include <stdio.h>\n"
            f"void {v['fn']}(void) {{\n"
            f"    char {v['buf']}[{v['size']}];\n"
            "@FILLER@" + read +
            f"    puts(\"{v['marker']}\");\n"
            f"}}\n")


_TEMPLATES = {
    "CWE-787": _template_787,
    "CWE-125": _template_787,   # same bounds-check family, read direction
    "CWE-416": _template_416,
    "CWE-415": _template_416,
    "CWE-476": _template_476,
    "CWE-190": _template_190,
    "CWE-369": _template_369,
    "CWE-134": _template_134,
    "CWE-401": _template_401,
}


@dataclass(frozen=True)
class SyntheticCorpusSpec:
    num_samples: int
    cwes: tuple = tuple(CASTLE_CWES)
    vulnerable_fraction: float = 0.6
    family: str = "default"
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.vulnerable_fraction <= 1.0:
            raise ValueError(f"vulnerable_fraction {self.vulnerable_fraction} "
                             "outside [0, 1]")
        if self.family != "default":
            raise ValueError(f"unknown template family {self.family!r}")


def _render(cwe: str, vulnerable: bool, rng: np.random.Generator) -> str:
    template = _TEMPLATES.get(cwe, _template_generic)
    words = rng.permutation(_WORDS)
    v = {
        "fn": f"{words[0]}_{rng.integers(10, 99)}",
        "buf": str(words[1]),
        "src": str(words[2]),
        "ptr": str(words[3]),
        "acc": str(words[4]),
        "a": str(words[5]),
        "b": str(words[6]),
        "size": int(rng.integers(8, 128)),
        "marker": f"module-{cwe.split('-')[1]}",
    }
    n_fillers = int(rng.integers(0, 4))
    filler = "".join(
        _FILLERS[int(rng.integers(0, len(_FILLERS)))].format(
            v=words[7 + i], c=int(rng.integers(2, 40)))
        for i in range(n_fillers))
    decls = "".join(f"    int {words[7 + i]} = {int(rng.integers(0, 9))};\n"
                    for i in range(n_fillers))
    return template(v, vulnerable).replace("@FILLER@", decls + filler)


def generate_corpus(spec: SyntheticCorpusSpec) -> Corpus:
    """Deterministic synthetic corpus: CWEs round-robin, labels assigned to
    hit the vulnerable fraction exactly (rounded)."""
    n_vul = round(spec.num_samples * spec.vulnerable_fraction)
    samples = []
    for i in range(spec.num_samples):
        cwe = spec.cwes[i % len(spec.cwes)]
        vulnerable = i < n_vul
        rng = np.random.default_rng([spec.seed, i])
        samples.append(Sample(
            id=f"synth-{spec.seed}-{i:05d}",
            code=_render(cwe, vulnerable, rng),
            label=VULNERABLE if vulnerable else SAFE,
            cwe=cwe,
            source="synthetic"))
    # Interleave labels so contiguous batches mix classes.
    order = np.random.default_rng(spec.seed).permutation(spec.num_samples)
    return Corpus([samples[i] for i in order])


def generate_benchmark(seed: int = 0, cwes: list[str] | None = None,
                       vulnerable_per_cwe: int = 6,
                       safe_per_cwe: int = 4) -> Corpus:
    """Benchmark-style composition: every CWE gets the same number of
    vulnerable and safe samples (standard composition: 25 x (6 + 4))."""
    cwes = list(cwes) if cwes is not None else list(CASTLE_CWES)
    samples = []
    for c_idx, cwe in enumerate(cwes):
        for i in range(vulnerable_per_cwe + safe_per_cwe):
            vulnerable = i < vulnerable_per_cwe
            rng = np.random.default_rng([seed, 7_000_000 + c_idx * 100 + i])
            samples.append(Sample(
                id=f"bench-{cwe}-{i}",
                code=_render(cwe, vulnerable, rng),
                label=VULNERABLE if vulnerable else SAFE,
                cwe=cwe,
                source="synthetic-benchmark"))
    return Corpus(samples)
