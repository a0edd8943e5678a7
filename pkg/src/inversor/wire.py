"""JSON wire format shared by the remote client and the loopback server.

Bodies are UTF-8 JSON objects. Floats are plain JSON numbers except negative
infinity, which travels as the string ``"-inf"``; NaN and +inf are rejected.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, fields
from typing import Any, ClassVar

from .errors import ProtocolError

NEG_INF_WIRE = "-inf"


def encode_float(x: float, allow_neg_inf: bool = True):
    if math.isfinite(x):
        return float(x)
    if x == -math.inf and allow_neg_inf:
        return NEG_INF_WIRE
    raise ProtocolError(f"cannot encode float {x!r}")


def decode_float(v, allow_neg_inf: bool = True) -> float:
    if v == NEG_INF_WIRE and allow_neg_inf:
        return -math.inf
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        raise ProtocolError(f"expected a number, got {v!r}")
    x = float(v)
    if not math.isfinite(x):
        raise ProtocolError(f"non-finite number {v!r}")
    return x


def _check(kind: str, v, name: str):
    if kind == "str":
        if not isinstance(v, str):
            raise ProtocolError(f"{name}: expected string")
        return v
    if kind == "bool":
        if not isinstance(v, bool):
            raise ProtocolError(f"{name}: expected boolean")
        return v
    if kind == "int":
        if isinstance(v, bool) or not isinstance(v, int):
            raise ProtocolError(f"{name}: expected integer")
        return v
    if kind == "int?":
        return None if v is None else _check("int", v, name)
    if kind == "num":
        return decode_float(v, allow_neg_inf=False)
    if kind == "ints":
        if not isinstance(v, list):
            raise ProtocolError(f"{name}: expected list of integers")
        return [_check("int", x, name) for x in v]
    if kind == "strs":
        if not isinstance(v, list):
            raise ProtocolError(f"{name}: expected list of strings")
        return [_check("str", x, name) for x in v]
    if kind == "logprobs":
        if not isinstance(v, list):
            raise ProtocolError(f"{name}: expected list of numbers")
        return [decode_float(x) for x in v]
    if kind == "vector":
        if not isinstance(v, list):
            raise ProtocolError(f"{name}: expected list of numbers")
        return [decode_float(x, allow_neg_inf=False) for x in v]
    raise AssertionError(kind)


def _emit(kind: str, v):
    if kind == "num":
        return encode_float(v, allow_neg_inf=False)
    if kind == "logprobs":
        return [encode_float(x) for x in v]
    if kind == "vector":
        return [encode_float(x, allow_neg_inf=False) for x in v]
    if kind in ("ints", "strs"):
        return list(v)
    return v


class Message:
    """Base for wire messages; ``schema`` maps field name to a type tag."""

    schema: ClassVar[dict[str, str]] = {}

    def to_json(self) -> dict:
        return {f.name: _emit(self.schema[f.name], getattr(self, f.name)) for f in fields(self)}

    @classmethod
    def from_json(cls, body: Any):
        if not isinstance(body, dict):
            raise ProtocolError(f"{cls.__name__}: body must be a JSON object")
        kwargs = {}
        for name, kind in cls.schema.items():
            if name not in body:
                if kind.endswith("?"):
                    kwargs[name] = None
                    continue
                raise ProtocolError(f"{cls.__name__}: missing field {name!r}")
            kwargs[name] = _check(kind, body[name], f"{cls.__name__}.{name}")
        return cls(**kwargs)


@dataclass
class LogprobsRequest(Message):
    model: str
    prompt_tokens: list[int]
    continuation_tokens: list[int]
    early_stop: bool
    schema = {"model": "str", "prompt_tokens": "ints", "continuation_tokens": "ints",
              "early_stop": "bool"}


@dataclass
class LogprobsResponse(Message):
    logprobs: list[float]
    stopped_at: int | None
    schema = {"logprobs": "logprobs", "stopped_at": "int?"}


@dataclass
class GenerateRequest(Message):
    model: str
    prompt_tokens: list[int]
    max_new: int
    temperature: float
    top_p: float
    top_k: int
    seed: int
    schema = {"model": "str", "prompt_tokens": "ints", "max_new": "int", "temperature": "num",
              "top_p": "num", "top_k": "int", "seed": "int"}


@dataclass
class GenerateResponse(Message):
    tokens: list[int]
    schema = {"tokens": "ints"}


@dataclass
class EmbedRequest(Message):
    text: str
    schema = {"text": "str"}


@dataclass
class EmbedResponse(Message):
    vector: list[float]
    schema = {"vector": "vector"}


@dataclass
class InvertRequest(Message):
    output_text: str
    temperature: float
    top_p: float
    top_k: int
    seed: int
    schema = {"output_text": "str", "temperature": "num", "top_p": "num", "top_k": "int",
              "seed": "int"}


@dataclass
class InvertResponse(Message):
    input_text: str
    schema = {"input_text": "str"}


@dataclass
class EncodeRequest(Message):
    text: str
    schema = {"text": "str"}


@dataclass
class EncodeResponse(Message):
    vector: list[float]
    schema = {"vector": "vector"}


@dataclass
class DecodeRequest(Message):
    vector: list[float]
    max_len: int
    temperature: float
    top_p: float
    seed: int
    schema = {"vector": "vector", "max_len": "int", "temperature": "num", "top_p": "num",
              "seed": "int"}


@dataclass
class DecodeResponse(Message):
    text: str
    schema = {"text": "str"}


@dataclass
class VocabResponse(Message):
    model: str
    size: int
    tokens: list[str]
    special: list[int]
    eos_id: int | None
    schema = {"model": "str", "size": "int", "tokens": "strs", "special": "ints",
              "eos_id": "int?"}


def dumps(message: Message) -> bytes:
    return json.dumps(message.to_json(), separators=(",", ":"), allow_nan=False).encode("utf-8")


def loads(cls, data: bytes | str):
    try:
        body = json.loads(data)
    except (ValueError, UnicodeDecodeError) as exc:
        raise ProtocolError(f"malformed JSON body: {exc}") from exc
    return cls.from_json(body)
