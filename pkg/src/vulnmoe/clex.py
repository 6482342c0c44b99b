"""Permissive C lexer.

Splits source text into (kind, text) tokens without ever rejecting input:
bytes that match nothing pass through verbatim as "other" tokens, so the
concatenation of token texts always reproduces the input exactly. Good
enough for identifier renaming, expression rewrites, and shingling; not a
compiler front end.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

C_KEYWORDS = frozenset("""
    auto break case char const continue default do double else enum extern
    float for goto if inline int long register restrict return short signed
    sizeof static struct switch typedef union unsigned void volatile while
    _Bool _Complex _Imaginary NULL true false bool
""".split())

# libc and POSIX names that must survive identifier renaming.
LIBC_NAMES = frozenset("""
    malloc calloc realloc free memcpy memmove memset memcmp
    strcpy strncpy strcat strncat strcmp strncmp strlen strdup strstr strchr
    strtok strtol strtoul atoi atol atof
    printf fprintf sprintf snprintf vsnprintf scanf fscanf sscanf
    gets fgets puts fputs putchar getchar getc putc
    fopen fclose fread fwrite fseek ftell rewind fflush feof ferror
    open close read write lseek unlink remove rename
    exit abort assert perror
    main argc argv errno stdin stdout stderr
    size_t ssize_t FILE time_t int8_t int16_t int32_t int64_t uint8_t
    uint16_t uint32_t uint64_t intptr_t uintptr_t
    pthread_create pthread_join pthread_mutex_lock pthread_mutex_unlock
    system popen execl execlp execv execvp fork wait
    rand srand random time
""".split())

_TOKEN_RE = re.compile(
    r"""
      (?P<comment>//[^\n]*|/\*.*?\*/)
    | (?P<string>"(?:\\.|[^"\\\n])*")
    | (?P<char>'(?:\\.|[^'\\\n])*')
    | (?P<number>(?:0[xX][0-9a-fA-F]+|(?:\d+\.\d*|\.\d+|\d+)(?:[eE][+-]?\d+)?)[uUlLfF]*)
    | (?P<identifier>[A-Za-z_]\w*)
    | (?P<punct>>>=|<<=|\.\.\.|->|\+\+|--|<<|>>|<=|>=|==|!=|&&|\|\||[-+*/%&|^~!<>=?:;,.(){}\[\]\#])
    | (?P<space>\s+)
    """,
    re.DOTALL | re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str


def lex(text: str) -> list[Token]:
    """Tokenize C source. Unmatched bytes become single-char "other" tokens."""
    tokens: list[Token] = []
    pos = 0
    for match in _TOKEN_RE.finditer(text):
        start, end = match.span()
        for i in range(pos, start):
            tokens.append(Token("other", text[i]))
        kind = match.lastgroup
        value = match.group()
        if kind == "identifier" and value in C_KEYWORDS:
            kind = "keyword"
        tokens.append(Token(kind, value))
        pos = end
    for i in range(pos, len(text)):
        tokens.append(Token("other", text[i]))
    return tokens


def unlex(tokens: list[Token]) -> str:
    return "".join(t.text for t in tokens)


def code_tokens(text: str) -> list[str]:
    """Token texts with whitespace and comments dropped (shingling input)."""
    return [t.text for t in lex(text) if t.kind not in ("space", "comment")]


def token_kinds(text: str) -> list[str]:
    """Kind sequence with whitespace and comments dropped.

    Identifier renaming must leave this sequence unchanged.
    """
    return [t.kind for t in lex(text) if t.kind not in ("space", "comment")]
