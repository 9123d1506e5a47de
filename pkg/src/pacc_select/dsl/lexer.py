"""Tokenizer for .rules files. Total: any input yields tokens or LexErrors."""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum


class TokKind(Enum):
    IDENT = "ident"
    NUMBER = "number"
    STRING = "string"
    PUNCT = "punct"
    EOF = "eof"


PUNCT = {
    "{", "}", "(", ")", "[", "]", ",", ":", ".",
    "<", "<=", ">", ">=", "==", "!=", "+", "-", "*", "/",
}


@dataclass(frozen=True)
class Token:
    kind: TokKind
    text: str
    line: int
    col: int


@dataclass(frozen=True)
class LexError:
    line: int
    col: int
    message: str


def tokenize(text: str) -> tuple[list[Token], list[LexError]]:
    tokens: list[Token] = []
    errors: list[LexError] = []
    line, col = 1, 1
    i, n = 0, len(text)

    def advance(k: int) -> None:
        nonlocal i, line, col
        for _ in range(k):
            if i < n and text[i] == "\n":
                line += 1
                col = 1
            else:
                col += 1
            i += 1

    while i < n:
        ch = text[i]
        if ch in " \t\r\n":
            advance(1)
            continue
        if ch == "#":
            while i < n and text[i] != "\n":
                advance(1)
            continue
        start_line, start_col = line, col
        if ch == '"':
            value, consumed, err = _scan_string(text, i)
            if err is not None:
                errors.append(LexError(start_line, start_col, err))
                advance(consumed)
                continue
            tokens.append(Token(TokKind.STRING, value, start_line, start_col))
            advance(consumed)
            continue
        if ch.isdigit() or (ch == "." and i + 1 < n and text[i + 1].isdigit()):
            j = i
            seen_dot = False
            while j < n and (text[j].isdigit() or (text[j] == "." and not seen_dot and j + 1 < n and text[j + 1].isdigit())):
                if text[j] == ".":
                    seen_dot = True
                j += 1
            tokens.append(Token(TokKind.NUMBER, text[i:j], start_line, start_col))
            advance(j - i)
            continue
        if ch.isalpha() or ch == "_":
            j = i
            while j < n and (text[j].isalnum() or text[j] == "_"):
                j += 1
            tokens.append(Token(TokKind.IDENT, text[i:j], start_line, start_col))
            advance(j - i)
            continue
        two = text[i : i + 2]
        if two in PUNCT:
            tokens.append(Token(TokKind.PUNCT, two, start_line, start_col))
            advance(2)
            continue
        if ch in PUNCT:
            tokens.append(Token(TokKind.PUNCT, ch, start_line, start_col))
            advance(1)
            continue
        if ch in "=!":
            # lone '=' or '!' is always an error; report it once
            errors.append(LexError(start_line, start_col, f"unexpected character {ch!r} (did you mean '==' or '!='?)"))
            advance(1)
            continue
        errors.append(LexError(start_line, start_col, f"unexpected character {ch!r}"))
        advance(1)
    tokens.append(Token(TokKind.EOF, "", line, col))
    return tokens, errors


def escape_string(value: str) -> str:
    """Inverse of _scan_string: escapes exactly the set the lexer decodes."""
    out = value.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n")
    return f'"{out}"'


def _scan_string(text: str, start: int) -> tuple[str, int, str | None]:
    """Scan a double-quoted string with \\\" \\\\ and \\n escapes.

    Returns (value, chars consumed, error message or None).
    """
    out: list[str] = []
    i = start + 1
    n = len(text)
    while i < n:
        ch = text[i]
        if ch == '"':
            return "".join(out), i - start + 1, None
        if ch == "\n":
            return "", i - start, "unterminated string literal"
        if ch == "\\":
            if i + 1 >= n:
                return "", i - start + 1, "unterminated escape sequence"
            esc = text[i + 1]
            if esc == "n":
                out.append("\n")
            elif esc in ('"', "\\"):
                out.append(esc)
            else:
                return "", i - start + 2, f"unknown escape sequence \\{esc}"
            i += 2
            continue
        out.append(ch)
        i += 1
    return "", n - start, "unterminated string literal"
