"""Tokenizer shared by the program and policy-module parsers."""
from __future__ import annotations

import re
from dataclasses import dataclass


class ParseError(Exception):
    def __init__(self, msg: str, line: int = 0, col: int = 0):
        super().__init__(f"{line}:{col}: {msg}" if line else msg)
        self.line = line
        self.col = col


@dataclass(frozen=True)
class Token:
    kind: str  # ident | con | int | str | op | eof
    text: str
    line: int
    col: int
    end: int  # offset just past the token
    start: int
    first: bool  # first token on its line


KEYWORDS = {
    "let", "in", "if", "then", "else", "do", "module", "where", "data",
    "redact", "inline", "set", "print", "printAll", "skip",
}

_OPS = [
    "<==>", "==>", "|_", "_|", "::", "->", "<-", "==", "!=", "<=", ">=", "&&", "||", ":=",
    "\\", "(", ")", "[", "]", "{", "}", ",", ";", ".", "|", "=", "<", ">", "!", "+", ":", "@",
]

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>--[^\n]*)
  | (?P<int>\d+)
  | (?P<str>"(?:[^"\\\n]|\\.)*")
  | (?P<name>[A-Za-z_][A-Za-z0-9_']*)
  | (?P<op>"""
    + "|".join(re.escape(o) for o in _OPS)
    + r""")
    """,
    re.VERBOSE,
)


def tokenize(text: str) -> list:
    toks: list = []
    pos = 0
    line, line_start = 1, 0
    first = True
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)
        kind = m.lastgroup
        s = m.group()
        col = pos - line_start + 1
        if kind == "nl":
            line += 1
            line_start = m.end()
            first = True
        elif kind in ("ws", "comment"):
            pass
        else:
            end = m.end()
            if kind == "name":
                if s == "_" and text.startswith("|", end):
                    kind, s, end = "op", "_|", end + 1
                elif len(s) > 1 and s.endswith("_") and text.startswith("|", end):
                    # the closing downgrade bracket `_|` is not part of the name
                    s, end = s[:-1], end - 1
                    kind = "con" if s[0].isupper() else "ident"
                else:
                    kind = "con" if s[0].isupper() else "ident"
            elif kind == "str":
                s = bytes(s[1:-1], "utf-8").decode("unicode_escape")
            toks.append(Token(kind, s, line, col, end, pos, first))
            first = False
            pos = end
            continue
        pos = m.end()
    toks.append(Token("eof", "", line + 1, 0, len(text), len(text), True))
    return toks


class TokenStream:
    """Cursor over tokens with an offside column: tokens starting a line at or
    left of the current layout column are invisible to the expression parser."""

    def __init__(self, tokens: list):
        self.toks = tokens
        self.i = 0
        self.layout = [0]

    @property
    def raw(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 0) -> Token:
        t = self.toks[min(self.i + k, len(self.toks) - 1)]
        if k == 0 and self.offside(t):
            return Token("eof", "", t.line, t.col, t.start, t.start, True)
        return t

    def offside(self, t: Token) -> bool:
        return t.kind == "eof" or (t.first and t.col <= self.layout[-1])

    def at(self, text: str) -> bool:
        t = self.peek()
        return t.kind in ("op", "ident", "con") and t.text == text

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.i += 1
            return True
        return False

    def expect(self, text: str) -> Token:
        t = self.peek()
        if not self.at(text):
            raise ParseError(f"expected {text!r}, found {t.text or t.kind!r}", t.line, t.col)
        self.i += 1
        return t

    def next(self) -> Token:
        t = self.peek()
        if t.kind == "eof":
            raise ParseError("unexpected end of input", t.line, t.col)
        self.i += 1
        return t

    def push(self, col: int):
        self.layout.append(col)

    def pop(self):
        self.layout.pop()

    def error(self, msg: str):
        t = self.peek()
        return ParseError(msg, t.line, t.col)
