"""Source-level data augmentation: consistent identifier renaming and
equivalent-expression substitution. Both operate on the permissive lexer's
token stream, never touch string/char literal contents, and are
deterministic under a seed."""

from __future__ import annotations

import numpy as np

from . import clex
from .clex import Token

_STATEMENT_BOUNDARY = {";", "{", "}", ")"}
_STATEMENT_END = {";", ")"}


def _directive_names(tokens: list[Token]) -> set[str]:
    """Identifiers appearing in preprocessor directives. Renaming these
    (macro names, header parts) would break the code, so they are
    protected wherever they occur."""
    protected: set[str] = set()
    in_directive = False
    for tok in tokens:
        if tok.kind == "punct" and tok.text == "#":
            in_directive = True
        elif in_directive and "\n" in tok.text:
            in_directive = False
        elif in_directive and tok.kind == "identifier":
            protected.add(tok.text)
    return protected


def _rename_map(tokens: list[Token], rng: np.random.Generator) -> dict[str, str]:
    protected = _directive_names(tokens)
    names = []
    seen = set()
    for tok in tokens:
        if (tok.kind == "identifier" and tok.text not in clex.LIBC_NAMES
                and tok.text not in protected and tok.text not in seen):
            seen.add(tok.text)
            names.append(tok.text)
    fresh = [f"ident_{i}" for i in rng.permutation(max(len(names), 1))[:len(names)]]
    return dict(zip(names, fresh))


def augment_rename(code: str, seed: int) -> str:
    """Bijectively rename every non-keyword, non-libc identifier; all
    occurrences of a name map to the same fresh name. The token-kind
    sequence is unchanged."""
    rng = np.random.default_rng(seed)
    tokens = clex.lex(code)
    mapping = _rename_map(tokens, rng)
    out = []
    for tok in tokens:
        if tok.kind == "identifier" and tok.text in mapping:
            out.append(Token("identifier", mapping[tok.text]))
        else:
            out.append(tok)
    return clex.unlex(out)


def _significant(tokens: list[Token], i: int, direction: int) -> str | None:
    """Nearest non-space, non-comment token text in the given direction."""
    j = i + direction
    while 0 <= j < len(tokens):
        if tokens[j].kind not in ("space", "comment"):
            return tokens[j].text
        j += direction
    return None


def _at_statement_site(tokens: list[Token], start: int, stop: int) -> bool:
    before = _significant(tokens, start, -1)
    after = _significant(tokens, stop, +1)
    return ((before is None or before in _STATEMENT_BOUNDARY)
            and after in _STATEMENT_END)


def augment_expr_subst(code: str, seed: int, site_prob: float = 0.5) -> str:
    """Rewrite statement-position increment idioms both ways:
    i++ <-> i = i + 1, i-- <-> i = i - 1, x += k <-> x = x + k (and -=).
    Each candidate site is sampled independently."""
    rng = np.random.default_rng(seed)
    tokens = clex.lex(code)
    sig = [(i, t) for i, t in enumerate(tokens)
           if t.kind not in ("space", "comment")]
    out = list(tokens)
    consumed: set[int] = set()

    def ident(t: Token) -> bool:
        return t.kind == "identifier"

    replacements: list[tuple[int, int, list[Token]]] = []  # [start, stop) in `tokens`
    k = 0
    while k < len(sig):
        i0, t0 = sig[k]
        matched = None
        # i ++  /  i --
        if (k + 1 < len(sig) and ident(t0) and sig[k + 1][1].text in ("++", "--")
                and _at_statement_site(tokens, i0, sig[k + 1][0])):
            op = "+" if sig[k + 1][1].text == "++" else "-"
            matched = (k, k + 2, [t0, Token("punct", " = ".strip()), t0],
                       [t0, Token("space", " "), Token("punct", "="),
                        Token("space", " "), t0, Token("space", " "),
                        Token("punct", op), Token("space", " "),
                        Token("number", "1")])
        # x += k  /  x -= k
        elif (k + 2 < len(sig) and ident(t0) and sig[k + 1][1].text in ("+=", "-=")
              and sig[k + 2][1].kind in ("identifier", "number")
              and _at_statement_site(tokens, i0, sig[k + 2][0])):
            op = sig[k + 1][1].text[0]
            matched = (k, k + 3, None,
                       [t0, Token("space", " "), Token("punct", "="),
                        Token("space", " "), t0, Token("space", " "),
                        Token("punct", op), Token("space", " "), sig[k + 2][1]])
        # i = i + 1  ->  i++   (same identifier twice, literal 1)
        elif (k + 4 < len(sig) and ident(t0) and sig[k + 1][1].text == "="
              and ident(sig[k + 2][1]) and sig[k + 2][1].text == t0.text
              and sig[k + 3][1].text in ("+", "-") and sig[k + 4][1].text == "1"
              and _at_statement_site(tokens, i0, sig[k + 4][0])):
            op = "++" if sig[k + 3][1].text == "+" else "--"
            matched = (k, k + 5, None, [t0, Token("punct", op)])
        # x = x + k  ->  x += k   (k a single identifier/number, not 1)
        elif (k + 4 < len(sig) and ident(t0) and sig[k + 1][1].text == "="
              and ident(sig[k + 2][1]) and sig[k + 2][1].text == t0.text
              and sig[k + 3][1].text in ("+", "-")
              and sig[k + 4][1].kind in ("identifier", "number")
              and _at_statement_site(tokens, i0, sig[k + 4][0])):
            op = sig[k + 3][1].text + "="
            matched = (k, k + 5,
                       None, [t0, Token("space", " "), Token("punct", op),
                              Token("space", " "), sig[k + 4][1]])

        if matched is not None and rng.random() < site_prob:
            k_start, k_stop, _, new_tokens = matched
            replacements.append((sig[k_start][0], sig[k_stop - 1][0] + 1, new_tokens))
            k = k_stop
        else:
            k += 1

    for start, stop, new_tokens in reversed(replacements):
        out[start:stop] = new_tokens
    return clex.unlex(out)


def augment_sample(code: str, rng: np.random.Generator, prob: float) -> str:
    """Apply the augmentation pipeline to one sample with probability
    `prob`; when selected, renaming and expression substitution both run."""
    if rng.random() >= prob:
        return code
    rename_seed = int(rng.integers(0, 2**31 - 1))
    subst_seed = int(rng.integers(0, 2**31 - 1))
    return augment_expr_subst(augment_rename(code, rename_seed), subst_seed)
