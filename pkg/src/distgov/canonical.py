"""Canonical JSON encoding, SHA-256 digests and self-addressing identifiers.

Every digest and signature in the package is taken over the bytes produced
by :func:`canonical_bytes`: sorted keys, no insignificant whitespace, UTF-8,
integers in base 10.  Floats are refused so that numeric values always have
exactly one encoding.
"""

from __future__ import annotations

import hashlib
import json
import re
from typing import Any

from .errors import NonCanonicalInput

DIGEST_LEN = 64
PLACEHOLDER = "0" * DIGEST_LEN

_HEX64 = re.compile(r"[0-9a-f]{64}")
_CROCKFORD = "0123456789ABCDEFGHJKMNPQRSTVWXYZ"


def _check(value: Any, path: str = "$") -> None:
    if value is None or isinstance(value, (bool, int, str)):
        return
    if isinstance(value, float):
        raise NonCanonicalInput(f"float at {path}; encode decimals as strings")
    if isinstance(value, (list, tuple)):
        for i, item in enumerate(value):
            _check(item, f"{path}[{i}]")
        return
    if isinstance(value, dict):
        for key, item in value.items():
            if not isinstance(key, str):
                raise NonCanonicalInput(f"non-string key {key!r} at {path}")
            _check(item, f"{path}.{key}")
        return
    raise NonCanonicalInput(f"unsupported type {type(value).__name__} at {path}")


def canonical_bytes(value: Any) -> bytes:
    _check(value)
    return encode_trusted(value)


def encode_trusted(value: Any) -> bytes:
    """Canonical encoding for values whose types were already validated."""
    return json.dumps(
        value, sort_keys=True, separators=(",", ":"), ensure_ascii=False
    ).encode("utf-8")


def canonical_text(value: Any) -> str:
    return canonical_bytes(value).decode("utf-8")


def sha256_hex(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def digest_of(value: Any) -> str:
    """Digest of the canonical encoding of ``value``."""
    return sha256_hex(canonical_bytes(value))


def is_digest(value: Any) -> bool:
    return isinstance(value, str) and _HEX64.fullmatch(value) is not None


def compute_said(obj: dict, field: str = "said") -> str:
    """Self-addressing digest of ``obj``.

    The digest is taken with ``obj[field]`` replaced by the 64-character zero
    placeholder, so embedding the result and recomputing is stable.
    """
    if not isinstance(obj, dict):
        raise NonCanonicalInput("self-addressing objects must be JSON objects")
    return digest_of({**obj, field: PLACEHOLDER})


def embed_said(obj: dict, field: str = "said") -> dict:
    return {**obj, field: compute_said(obj, field)}


def verify_said(obj: dict, field: str = "said") -> bool:
    return obj.get(field) == compute_said(obj, field)


def sortable_id(counter: int, salt: str) -> str:
    """ULID-shaped identifier: 48-bit counter then 80 bits derived from ``salt``.

    Lexicographic order follows ``counter``; the tail keeps ids from different
    namespaces apart without any source of nondeterminism.
    """
    if not 0 <= counter < 2**48:
        raise ValueError("counter out of range")
    tail = int.from_bytes(hashlib.sha256(f"{counter}:{salt}".encode()).digest()[:10], "big")
    value = (counter << 80) | tail
    chars = []
    for _ in range(26):
        chars.append(_CROCKFORD[value & 31])
        value >>= 5
    return "".join(reversed(chars))
