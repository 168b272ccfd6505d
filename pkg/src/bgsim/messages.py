"""Wire messages, value encoding and ordering.

Every protocol message is a ``Message(tag, obj, body)`` where ``obj`` names
the safe agreement object it belongs to and ``body`` is a tuple of
tag-specific fields. ``None`` stands for the absent value (bottom) and is
never a proposable value.
"""
from __future__ import annotations

import json
from enum import Enum
from functools import lru_cache
from typing import Any, NamedTuple

FNV_OFFSET = 0xCBF29CE484222325
FNV_PRIME = 0x100000001B3
MASK64 = (1 << 64) - 1

BOT = None


class Tag(str, Enum):
    VALUE = "VALUE"
    READ = "READ"
    READ_ANSWER = "READ_ANSWER"
    VIEW = "VIEW"
    VALUE_VALID = "VALUE_VALID"
    VALUE_WITNESS = "VALUE_WITNESS"
    VALUE_ACK = "VALUE_ACK"
    READ_ANSWER_WITNESS = "READ_ANSWER_WITNESS"
    VIEW_WITNESS = "VIEW_WITNESS"
    VIEW_ACK = "VIEW_ACK"
    INPUT = "INPUT"
    ECHO = "ECHO"


WITNESS_TAGS = frozenset({Tag.VALUE_WITNESS, Tag.READ_ANSWER_WITNESS, Tag.VIEW_WITNESS})


class Message(NamedTuple):
    tag: Tag
    obj: Any
    body: tuple

    def __repr__(self) -> str:
        return f"{self.tag.value}{self.obj}{self.body}"


class SimulatedMessage(NamedTuple):
    """A message of the hosted algorithm: ``seq`` is its rank in the src->dst stream."""

    src: int
    dst: int
    seq: int
    payload: Any


def _default(o: Any) -> Any:
    if isinstance(o, Enum):
        return o.value
    if isinstance(o, (set, frozenset)):
        return sorted(o, key=order_key)
    raise TypeError(f"cannot encode {type(o).__name__}")


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), default=_default)


def canonical_bytes(value: Any) -> bytes:
    return canonical_json(value).encode()


def fnv1a_64(data: bytes) -> int:
    h = FNV_OFFSET
    for b in data:
        h ^= b
        h = (h * FNV_PRIME) & MASK64
    return h


@lru_cache(maxsize=1 << 16)
def _hex_fnv(data: bytes) -> str:
    return f"{fnv1a_64(data):016x}"


def digest(value: Any) -> str:
    """64-bit FNV-1a of the canonical encoding, as 16 hex digits."""
    return _hex_fnv(canonical_bytes(value))


def order_key(value: Any) -> tuple:
    """Strict total order on values: numbers, then strings, then sequences."""
    if value is None:
        raise ValueError("bottom is not an orderable value")
    if isinstance(value, bool):
        return (0, int(value))
    if isinstance(value, (int, float)):
        return (0, value)
    if isinstance(value, str):
        return (1, value)
    if isinstance(value, (tuple, list)):
        return (2, tuple(order_key(v) if v is not None else (-1,) for v in value))
    return (9, canonical_json(value))


def value_min(values):
    return min(values, key=order_key)


def freeze(value: Any) -> Any:
    """Turn decoded JSON back into hashable form (lists become tuples)."""
    if isinstance(value, list):
        return tuple(freeze(v) for v in value)
    if isinstance(value, dict):
        return tuple(sorted((k, freeze(v)) for k, v in value.items()))
    return value
