"""Pluggable tokenizers mapping source text to model token ids.

Two desk-scale tokenizers ship: a raw byte tokenizer and a C-lexer
tokenizer that reserves stable ids for keywords, libc names, and
punctuation, hashing everything else into the remaining id range. Id 0 is
always padding.
"""

from __future__ import annotations

import hashlib

from . import clex

PAD_ID = 0


def _stable_bucket(text: str, n_buckets: int) -> int:
    digest = hashlib.blake2b(text.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little") % n_buckets


class ByteTokenizer:
    """One id per byte value, offset past the pad id."""

    def __init__(self):
        self.vocab_size = 257  # pad + 256 byte values

    @property
    def pad_id(self) -> int:
        return PAD_ID

    def encode(self, text: str) -> list[int]:
        return [1 + b for b in text.encode("utf-8")]


class CLexTokenizer:
    """Lexer-token ids: reserved slots for keywords/libc/punctuation, hashed
    buckets for everything else. Whitespace and comments are dropped."""

    _PUNCT = [
        ">>=", "<<=", "...", "->", "++", "--", "<<", ">>", "<=", ">=", "==",
        "!=", "&&", "||", "-", "+", "*", "/", "%", "&", "|", "^", "~", "!",
        "<", ">", "=", "?", ":", ";", ",", ".", "(", ")", "{", "}", "[",
        "]", "#",
    ]

    def __init__(self, vocab_size: int = 512):
        reserved = sorted(clex.C_KEYWORDS) + sorted(clex.LIBC_NAMES) + self._PUNCT
        min_needed = 1 + len(reserved) + 8
        if vocab_size < min_needed:
            raise ValueError(f"vocab_size {vocab_size} below minimum {min_needed} "
                             "(pad + reserved tokens + hash buckets)")
        self.vocab_size = vocab_size
        self._reserved = {tok: 1 + i for i, tok in enumerate(reserved)}
        self._bucket_base = 1 + len(reserved)
        self._n_buckets = vocab_size - self._bucket_base

    @property
    def pad_id(self) -> int:
        return PAD_ID

    def encode(self, text: str) -> list[int]:
        ids = []
        for tok in clex.lex(text):
            if tok.kind in ("space", "comment"):
                continue
            fixed = self._reserved.get(tok.text)
            if fixed is not None:
                ids.append(fixed)
            else:
                ids.append(self._bucket_base + _stable_bucket(tok.text, self._n_buckets))
        return ids


def build_tokenizer(kind: str, vocab_size: int | None = None):
    if kind == "byte":
        return ByteTokenizer()
    if kind == "clex":
        return CLexTokenizer(vocab_size or 512)
    raise ValueError(f"unknown tokenizer kind {kind!r} (expected 'byte' or 'clex')")
