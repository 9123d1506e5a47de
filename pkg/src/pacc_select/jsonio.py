"""Canonical JSON writing with exact Decimal literals.

json.dumps cannot emit a Decimal as a plain JSON number, and floats would
lose cent exactness, so files we both write and reparse go through this
small writer. Reading uses json.loads(parse_float=Decimal) as usual.
"""

from __future__ import annotations

import json
from decimal import Decimal


def fmt_decimal(d: Decimal) -> str:
    """Plain decimal string, never exponent notation, no trailing zeros."""
    s = format(d, "f")
    if "." in s:
        s = s.rstrip("0").rstrip(".")
    if s in ("-0", ""):
        s = "0"
    return s


def dumps(value: object) -> str:
    """Serialize to compact JSON; Decimals become exact number literals."""
    parts: list[str] = []
    _write(value, parts)
    return "".join(parts)


def _write(value: object, parts: list[str]) -> None:
    if value is None:
        parts.append("null")
    elif value is True:
        parts.append("true")
    elif value is False:
        parts.append("false")
    elif isinstance(value, Decimal):
        parts.append(fmt_decimal(value))
    elif isinstance(value, int):
        parts.append(str(value))
    elif isinstance(value, float):
        parts.append(json.dumps(value))
    elif isinstance(value, str):
        parts.append(json.dumps(value, ensure_ascii=False))
    elif isinstance(value, dict):
        parts.append("{")
        first = True
        for k, v in value.items():
            if not first:
                parts.append(",")
            first = False
            parts.append(json.dumps(str(k), ensure_ascii=False))
            parts.append(":")
            _write(v, parts)
        parts.append("}")
    elif isinstance(value, (list, tuple)):
        parts.append("[")
        first = True
        for v in value:
            if not first:
                parts.append(",")
            first = False
            _write(v, parts)
        parts.append("]")
    else:
        raise TypeError(f"not JSON-serializable: {type(value).__name__}")
