"""Self-certifying key event logs with pre-rotation, witness receipts and causal order.

A log is a hash chain of :class:`KeyEvent` values.  The inception event fixes
the identifier (its prefix is the digest of the event with a zero
placeholder in the prefix field) and commits, by digest, to the next key
set.  A rotation must reveal exactly the committed keys and is signed by
them.  Interaction events carry anchors: digests of data or of other events,
which is what makes them attributable and causally ordered.
"""

from __future__ import annotations

import enum
import functools
import json
import os
import random
import re
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from functools import cached_property
from pathlib import Path

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives import serialization
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .canonical import (
    PLACEHOLDER,
    canonical_bytes,
    digest_of,
    encode_trusted,
    is_digest,
    sha256_hex,
)
from .errors import (
    BadSignature,
    BrokenChain,
    CausalCycle,
    EmptyKeySet,
    IdenticalEvents,
    InsufficientReceipts,
    KelError,
    MalformedEvent,
    MissingKeys,
    PreRotationViolation,
    SeqGap,
    UnknownEvent,
)

__all__ = [
    "EventKind",
    "KeyPair",
    "KeyEvent",
    "KeyEventLog",
    "KeyState",
    "WitnessReceipt",
    "CausalGraph",
    "Order",
    "Keyring",
    "key_commitment",
    "incept",
    "rotate",
    "anchor_data",
    "verify_event",
    "verify_kel",
    "make_receipt",
    "happened_before",
]


class EventKind(str, enum.Enum):
    INCEPTION = "inception"
    ROTATION = "rotation"
    INTERACTION = "interaction"


# -- keys ---------------------------------------------------------------------


@functools.lru_cache(maxsize=4096)
def _load_public(public_hex: str) -> Ed25519PublicKey:
    return Ed25519PublicKey.from_public_bytes(bytes.fromhex(public_hex))


def _signature_ok(public_hex: str, signature_hex: str, data: bytes) -> bool:
    try:
        _load_public(public_hex).verify(bytes.fromhex(signature_hex), data)
    except (InvalidSignature, ValueError):
        return False
    return True


@dataclass(frozen=True)
class KeyPair:
    """Ed25519 key pair held as its 32-byte seed."""

    seed: bytes = field(repr=False)

    @classmethod
    def generate(cls, rng: random.Random | None = None) -> KeyPair:
        return cls(rng.randbytes(32) if rng is not None else os.urandom(32))

    @cached_property
    def _private(self) -> Ed25519PrivateKey:
        return Ed25519PrivateKey.from_private_bytes(self.seed)

    @cached_property
    def public(self) -> str:
        raw = self._private.public_key().public_bytes(
            serialization.Encoding.Raw, serialization.PublicFormat.Raw
        )
        return raw.hex()

    def sign(self, data: bytes) -> str:
        return self._private.sign(data).hex()


def _public_keys(keys: Iterable[KeyPair | str]) -> tuple[str, ...]:
    return tuple(k.public if isinstance(k, KeyPair) else k for k in keys)


def key_commitment(keys: Iterable[KeyPair | str]) -> str:
    """Digest committing to a key set (order-sensitive list of public keys)."""
    return digest_of(list(_public_keys(keys)))


# -- events -------------------------------------------------------------------

_REQUIRED = {"prefix", "seq", "event_kind", "signing_keys", "anchors", "signatures"}
_OPTIONAL = {"prior_digest", "next_commitment"}


_HEX = {64: re.compile(r"[0-9a-f]{64}"), 128: re.compile(r"[0-9a-f]{128}")}


def _is_hex(value: object, length: int) -> bool:
    return isinstance(value, str) and _HEX[length].fullmatch(value) is not None


@dataclass(frozen=True)
class KeyEvent:
    prefix: str
    seq: int
    event_kind: EventKind
    signing_keys: tuple[str, ...]
    prior_digest: str | None = None
    next_commitment: str | None = None
    anchors: tuple[str, ...] = ()
    signatures: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        out = {
            "prefix": self.prefix,
            "seq": self.seq,
            "event_kind": self.event_kind.value,
            "signing_keys": list(self.signing_keys),
            "anchors": list(self.anchors),
            "signatures": list(self.signatures),
        }
        if self.prior_digest is not None:
            out["prior_digest"] = self.prior_digest
        if self.next_commitment is not None:
            out["next_commitment"] = self.next_commitment
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> KeyEvent:
        if not isinstance(data, Mapping):
            raise MalformedEvent("event is not an object")
        keys = set(data)
        if not _REQUIRED <= keys or keys - _REQUIRED - _OPTIONAL:
            raise MalformedEvent(f"unexpected event fields {sorted(keys)}")
        seq = data["seq"]
        if not isinstance(seq, int) or isinstance(seq, bool) or seq < 0:
            raise MalformedEvent("seq must be a non-negative integer")
        try:
            kind = EventKind(data["event_kind"])
        except ValueError:
            raise MalformedEvent(f"unknown event kind {data['event_kind']!r}", seq) from None
        lists = {k: data[k] for k in ("signing_keys", "anchors", "signatures")}
        if not all(isinstance(v, list) for v in lists.values()):
            raise MalformedEvent("list fields must be arrays", seq)
        if not _is_hex(data["prefix"], 64):
            raise MalformedEvent("prefix must be a lowercase hex digest", seq)
        if not all(_is_hex(k, 64) for k in lists["signing_keys"]):
            raise MalformedEvent("signing keys must be 32-byte lowercase hex", seq)
        if not all(is_digest(a) for a in lists["anchors"]):
            raise MalformedEvent("anchors must be lowercase hex digests", seq)
        if not all(_is_hex(s, 128) for s in lists["signatures"]):
            raise MalformedEvent("signatures must be 64-byte lowercase hex", seq)
        for opt in _OPTIONAL:
            if opt in data and not is_digest(data[opt]):
                raise MalformedEvent(f"{opt} must be a lowercase hex digest", seq)
        return cls(
            prefix=data["prefix"],
            seq=seq,
            event_kind=kind,
            signing_keys=tuple(lists["signing_keys"]),
            prior_digest=data.get("prior_digest"),
            next_commitment=data.get("next_commitment"),
            anchors=tuple(lists["anchors"]),
            signatures=tuple(lists["signatures"]),
        )

    def to_bytes(self) -> bytes:
        return self._bytes

    @cached_property
    def _bytes(self) -> bytes:
        return encode_trusted(self.to_dict())

    @cached_property
    def digest(self) -> str:
        return sha256_hex(self._bytes)

    def signing_bytes(self) -> bytes:
        """Bytes covered by signatures: the event with an empty signature list."""
        return encode_trusted({**self.to_dict(), "signatures": []})

    def prefix_digest(self) -> str:
        """Placeholder digest that an inception's prefix must equal."""
        return sha256_hex(
            encode_trusted({**self.to_dict(), "prefix": PLACEHOLDER, "signatures": []})
        )


def _signed(event: KeyEvent, signers: Sequence[KeyPair]) -> KeyEvent:
    # single-signer threshold: the first key signs
    return replace(event, signatures=(signers[0].sign(event.signing_bytes()),))


# -- key state and verification -----------------------------------------------


@dataclass(frozen=True)
class KeyState:
    prefix: str
    signing_keys: tuple[str, ...]
    next_commitment: str
    last_seq: int
    last_digest: str


def _check_links(state: KeyState | None, event: KeyEvent) -> None:
    """Structural, chain and pre-rotation checks; no signature work."""
    seq = event.seq
    if (seq == 0) != (event.event_kind is EventKind.INCEPTION):
        raise BrokenChain("inception must be exactly the event at seq 0", seq)
    if not event.signing_keys:
        raise EmptyKeySet("event carries no signing keys", seq)
    if not event.signatures:
        raise BadSignature("event carries no signatures", seq)
    if len(event.signatures) > len(event.signing_keys):
        raise BadSignature("more signatures than signing keys", seq)
    if event.event_kind is EventKind.INTERACTION:
        if event.next_commitment is not None:
            raise MalformedEvent("interaction events carry no next commitment", seq)
    elif event.next_commitment is None:
        raise MalformedEvent("establishment events must commit to next keys", seq)

    if state is None:
        if seq != 0:
            raise SeqGap("log does not start at seq 0", seq)
        if event.prior_digest is not None:
            raise BrokenChain("inception has a prior digest", seq)
        if event.prefix_digest() != event.prefix:
            raise BrokenChain("prefix is not the self-certifying digest of inception", seq)
        return

    if event.prefix != state.prefix:
        raise BrokenChain("event prefix differs from log prefix", seq)
    if seq != state.last_seq + 1:
        raise SeqGap(f"expected seq {state.last_seq + 1}", seq)
    if event.prior_digest != state.last_digest:
        raise BrokenChain("prior digest does not match preceding event", seq)
    if event.event_kind is EventKind.ROTATION:
        if key_commitment(event.signing_keys) != state.next_commitment:
            raise PreRotationViolation("rotated keys do not match prior commitment", seq)
    elif event.signing_keys != state.signing_keys:
        raise BadSignature("interaction keys differ from current key state", seq)


def _check_signatures(event: KeyEvent) -> None:
    data = event.signing_bytes()
    for key, sig in zip(event.signing_keys, event.signatures):
        if not _signature_ok(key, sig, data):
            raise BadSignature("signature does not verify", event.seq)


def _advance(state: KeyState | None, event: KeyEvent) -> KeyState:
    if event.event_kind is EventKind.INTERACTION:
        assert state is not None
        return replace(state, last_seq=event.seq, last_digest=event.digest)
    return KeyState(
        prefix=event.prefix,
        signing_keys=event.signing_keys,
        next_commitment=event.next_commitment,
        last_seq=event.seq,
        last_digest=event.digest,
    )


def verify_event(state: KeyState | None, event: KeyEvent) -> KeyState:
    """Verify one event against the state left by its predecessors (None for inception)."""
    _check_links(state, event)
    _check_signatures(event)
    return _advance(state, event)


@dataclass(frozen=True)
class WitnessReceipt:
    witness_id: str
    event_digest: str
    signature: str

    def signed_bytes(self) -> bytes:
        return canonical_bytes({"event_digest": self.event_digest, "witness_id": self.witness_id})

    def to_dict(self) -> dict:
        return {
            "witness_id": self.witness_id,
            "event_digest": self.event_digest,
            "signature": self.signature,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> WitnessReceipt:
        return cls(data["witness_id"], data["event_digest"], data["signature"])


def make_receipt(witness_id: str, witness_key: KeyPair, event: KeyEvent | str) -> WitnessReceipt:
    digest = event if isinstance(event, str) else event.digest
    unsigned = WitnessReceipt(witness_id, digest, "")
    return replace(unsigned, signature=witness_key.sign(unsigned.signed_bytes()))


def _receipt_counts(
    receipts: Iterable[WitnessReceipt], witness_keys: Mapping[str, Sequence[str] | str]
) -> dict[str, int]:
    witnesses: dict[str, set[str]] = {}
    for r in receipts:
        keys = witness_keys.get(r.witness_id)
        if keys is None:
            continue
        key = keys if isinstance(keys, str) else keys[0]
        if _signature_ok(key, r.signature, r.signed_bytes()):
            witnesses.setdefault(r.event_digest, set()).add(r.witness_id)
    return {d: len(w) for d, w in witnesses.items()}


def verify_kel(
    kel: KeyEventLog,
    receipts: Iterable[WitnessReceipt] = (),
    threshold: int = 0,
    witness_keys: Mapping[str, Sequence[str] | str] | None = None,
) -> KeyState:
    """Verify a whole log and return its terminal key state.

    ``witness_keys`` maps a witness identifier to its current public key(s);
    receipts from unknown witnesses are ignored.  Every event needs at least
    ``threshold`` distinct valid receipts.
    """
    if threshold < 0:
        raise ValueError("threshold must be non-negative")
    if not kel.events:
        raise BrokenChain("log is empty")
    # Chain checks run over the whole log before any signature: a mutation in
    # any event but the last is caught by its successor's prior digest.
    # Errors report the position of the offending event, which equals its
    # seq in any valid log; a tampered seq field is not trusted.
    state = None
    for pos, event in enumerate(kel.events):
        try:
            _check_links(state, event)
        except KelError as exc:
            exc.seq = pos
            raise
        state = _advance(state, event)
    if kel.prefix != kel.events[0].prefix:
        raise BrokenChain("log prefix differs from inception prefix", 0)
    for pos in reversed(range(len(kel.events))):
        try:
            _check_signatures(kel.events[pos])
        except KelError as exc:
            exc.seq = pos
            raise
    if threshold:
        counts = _receipt_counts(receipts, witness_keys or {})
        for event in kel.events:
            if counts.get(event.digest, 0) < threshold:
                raise InsufficientReceipts(
                    f"{counts.get(event.digest, 0)} of {threshold} witness receipts", event.seq
                )
    return state


@dataclass(frozen=True)
class KeyEventLog:
    prefix: str
    events: tuple[KeyEvent, ...] = ()

    @classmethod
    def from_inception(cls, event: KeyEvent) -> KeyEventLog:
        return cls(event.prefix, (event,))

    @cached_property
    def state(self) -> KeyState:
        return verify_kel(self)

    def append(self, event: KeyEvent) -> KeyEventLog:
        new_state = verify_event(self.state, event)
        log = KeyEventLog(self.prefix, self.events + (event,))
        log.__dict__["state"] = new_state
        return log

    def find(self, digest: str) -> KeyEvent | None:
        for event in self.events:
            if event.digest == digest:
                return event
        return None

    def anchoring_events(self, content_digest: str) -> list[KeyEvent]:
        return [e for e in self.events if content_digest in e.anchors]

    def all_anchors(self) -> list[str]:
        return [a for e in self.events for a in e.anchors]

    def to_jsonl(self) -> bytes:
        return b"".join(e.to_bytes() + b"\n" for e in self.events)

    @classmethod
    def from_jsonl(cls, data: bytes) -> KeyEventLog:
        """Strict parser: each line must already be in canonical form."""
        if not data.endswith(b"\n"):
            raise MalformedEvent("log must end with a newline")
        events = []
        for n, line in enumerate(data[:-1].split(b"\n")):
            try:
                raw = json.loads(line.decode("utf-8"))
            except (UnicodeDecodeError, json.JSONDecodeError):
                raise MalformedEvent("line is not valid JSON", n) from None
            event = KeyEvent.from_dict(raw)
            if event.to_bytes() != line:
                raise MalformedEvent("line is not in canonical form", n)
            events.append(event)
        if not events:
            raise BrokenChain("log is empty")
        return cls(events[0].prefix, tuple(events))

    def to_dicts(self) -> list[dict]:
        return [e.to_dict() for e in self.events]

    @classmethod
    def from_dicts(cls, items: Sequence[Mapping]) -> KeyEventLog:
        events = tuple(KeyEvent.from_dict(d) for d in items)
        if not events:
            raise BrokenChain("log is empty")
        return cls(events[0].prefix, events)


# -- operations -----------------------------------------------------------------


def incept(
    signing_keys: Sequence[KeyPair], next_keys: Sequence[KeyPair | str]
) -> tuple[str, KeyEvent]:
    if not signing_keys or not next_keys:
        raise EmptyKeySet("inception needs signing keys and next keys")
    draft = KeyEvent(
        prefix=PLACEHOLDER,
        seq=0,
        event_kind=EventKind.INCEPTION,
        signing_keys=_public_keys(signing_keys),
        next_commitment=key_commitment(next_keys),
    )
    prefix = draft.prefix_digest()
    event = _signed(replace(draft, prefix=prefix), signing_keys)
    return prefix, event


def _require_valid(kel: KeyEventLog) -> KeyState:
    try:
        return kel.state
    except KelError as exc:
        if isinstance(exc, BrokenChain):
            raise
        raise BrokenChain(f"log does not verify: {exc}", exc.seq) from exc


def rotate(
    kel: KeyEventLog,
    new_signing_keys: Sequence[KeyPair],
    new_next_keys: Sequence[KeyPair | str],
) -> KeyEvent:
    state = _require_valid(kel)
    if not new_signing_keys or not new_next_keys:
        raise EmptyKeySet("rotation needs signing keys and next keys")
    if key_commitment(new_signing_keys) != state.next_commitment:
        raise PreRotationViolation("keys were not pre-committed", state.last_seq + 1)
    draft = KeyEvent(
        prefix=state.prefix,
        seq=state.last_seq + 1,
        event_kind=EventKind.ROTATION,
        signing_keys=_public_keys(new_signing_keys),
        prior_digest=state.last_digest,
        next_commitment=key_commitment(new_next_keys),
    )
    return _signed(draft, new_signing_keys)


def anchor_data(
    kel: KeyEventLog, content_digest: str | Sequence[str], signing_keys: Sequence[KeyPair]
) -> KeyEvent:
    state = _require_valid(kel)
    anchors = (content_digest,) if isinstance(content_digest, str) else tuple(content_digest)
    if not all(is_digest(a) for a in anchors):
        raise MalformedEvent("anchors must be lowercase hex digests", state.last_seq + 1)
    if not signing_keys or _public_keys(signing_keys)[0] != state.signing_keys[0]:
        raise BadSignature("signer does not hold the current signing key", state.last_seq + 1)
    draft = KeyEvent(
        prefix=state.prefix,
        seq=state.last_seq + 1,
        event_kind=EventKind.INTERACTION,
        signing_keys=state.signing_keys,
        prior_digest=state.last_digest,
        anchors=anchors,
    )
    return _signed(draft, signing_keys)


# -- causal order -----------------------------------------------------------------


class Order(str, enum.Enum):
    BEFORE = "before"
    AFTER = "after"
    INCOMPARABLE = "incomparable"


@dataclass(frozen=True)
class CausalGraph:
    """Happened-before relation over event digests.

    Edges come from prior-digest links inside a log and from anchors that
    reference another event's digest.
    """

    nodes: frozenset[str]
    edges: frozenset[tuple[str, str]]

    def __post_init__(self):
        for a, b in self.edges:
            if a not in self.nodes or b not in self.nodes:
                raise UnknownEvent(f"edge endpoint missing from nodes: {a}->{b}")
        self._assert_acyclic()

    @classmethod
    def from_logs(cls, kels: Iterable[KeyEventLog]) -> CausalGraph:
        events = [e for kel in kels for e in kel.events]
        nodes = {e.digest for e in events}
        edges = set()
        for e in events:
            if e.prior_digest is not None and e.prior_digest in nodes:
                edges.add((e.prior_digest, e.digest))
            for anchor in e.anchors:
                if anchor in nodes:
                    edges.add((anchor, e.digest))
        return cls(frozenset(nodes), frozenset(edges))

    @cached_property
    def _successors(self) -> dict[str, list[str]]:
        out: dict[str, list[str]] = {n: [] for n in self.nodes}
        for a, b in sorted(self.edges):
            out[a].append(b)
        return out

    def _assert_acyclic(self) -> None:
        indegree = {n: 0 for n in self.nodes}
        for _, b in self.edges:
            indegree[b] += 1
        ready = [n for n, d in indegree.items() if d == 0]
        seen = 0
        while ready:
            node = ready.pop()
            seen += 1
            for nxt in self._successors[node]:
                indegree[nxt] -= 1
                if indegree[nxt] == 0:
                    ready.append(nxt)
        if seen != len(self.nodes):
            raise CausalCycle("causal graph contains a cycle")

    def reaches(self, src: str, dst: str) -> bool:
        stack, seen = [src], {src}
        while stack:
            node = stack.pop()
            for nxt in self._successors[node]:
                if nxt == dst:
                    return True
                if nxt not in seen:
                    seen.add(nxt)
                    stack.append(nxt)
        return False


def happened_before(g: CausalGraph, e1: str, e2: str) -> Order:
    for e in (e1, e2):
        if e not in g.nodes:
            raise UnknownEvent(f"event {e} not in causal graph")
    if e1 == e2:
        raise IdenticalEvents("happened-before is strict; identical events have no order")
    if g.reaches(e1, e2):
        return Order.BEFORE
    if g.reaches(e2, e1):
        return Order.AFTER
    return Order.INCOMPARABLE


# -- keyring ----------------------------------------------------------------------


@dataclass
class _Slot:
    current: tuple[KeyPair, ...]
    next: tuple[KeyPair, ...]


class Keyring:
    """Secret key material per prefix; deliberately kept out of the World value."""

    def __init__(self) -> None:
        self._slots: dict[str, _Slot] = {}

    def __contains__(self, prefix: str) -> bool:
        return prefix in self._slots

    def prefixes(self) -> list[str]:
        return sorted(self._slots)

    def current(self, prefix: str) -> tuple[KeyPair, ...]:
        try:
            return self._slots[prefix].current
        except KeyError:
            raise MissingKeys(f"no keys held for {prefix}") from None

    def incept(self, rng: random.Random | None = None) -> KeyEventLog:
        signing, nxt = KeyPair.generate(rng), KeyPair.generate(rng)
        prefix, event = incept([signing], [nxt])
        self._slots[prefix] = _Slot((signing,), (nxt,))
        return KeyEventLog.from_inception(event)

    def rotate(self, kel: KeyEventLog, rng: random.Random | None = None) -> KeyEventLog:
        slot = self._slots.get(kel.prefix)
        if slot is None:
            raise MissingKeys(f"no keys held for {kel.prefix}")
        fresh = (KeyPair.generate(rng),)
        out = kel.append(rotate(kel, slot.next, fresh))
        self._slots[kel.prefix] = _Slot(slot.next, fresh)
        return out

    def anchor(self, kel: KeyEventLog, *digests: str) -> KeyEventLog:
        return kel.append(anchor_data(kel, digests, self.current(kel.prefix)))

    def receipt(self, witness_id: str, event: KeyEvent | str) -> WitnessReceipt:
        return make_receipt(witness_id, self.current(witness_id)[0], event)

    def save(self, directory: str | os.PathLike) -> None:
        path = Path(directory)
        path.mkdir(parents=True, exist_ok=True)
        for prefix, slot in self._slots.items():
            doc = {
                "current": [k.seed.hex() for k in slot.current],
                "next": [k.seed.hex() for k in slot.next],
            }
            (path / f"{prefix}.json").write_text(json.dumps(doc, sort_keys=True) + "\n")

    @classmethod
    def load(cls, directory: str | os.PathLike) -> Keyring:
        ring = cls()
        path = Path(directory)
        if path.is_dir():
            for file in sorted(path.glob("*.json")):
                doc = json.loads(file.read_text())
                ring._slots[file.stem] = _Slot(
                    tuple(KeyPair(bytes.fromhex(s)) for s in doc["current"]),
                    tuple(KeyPair(bytes.fromhex(s)) for s in doc["next"]),
                )
        return ring
