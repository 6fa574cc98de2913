"""Deterministic discrete-event harness.

Scenarios register principals and ecosystems during a setup phase (logged at
tick 0), then schedule actions.  Actions run in tick order, ties broken by
actor id and then insertion order.  Every action produces one transcript
entry; domain errors are recorded as outcomes rather than raised.
"""

from __future__ import annotations

import heapq
import json
import random
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from typing import Any

from ..authenticity import KeyEventLog, Keyring, WitnessReceipt
from ..canonical import canonical_bytes, sha256_hex
from ..core import (
    Administration,
    AuthorityDocument,
    LegitimateAuthority,
    PrincipalKind,
    World,
    create_ecosystem,
    join_population,
    lift_to_ecosystem,
    mint_ecosystem_principal,
    register_principal,
)
from ..errors import DistgovError
from ..governance import PolicyBook


@dataclass(frozen=True)
class Action:
    op: str
    args: Mapping[str, Any] = field(default_factory=dict)
    label: str | None = None


@dataclass(frozen=True)
class ScheduledEvent:
    tick: int
    actor: str
    action: Action
    order: int

    def sort_key(self) -> tuple:
        return (self.tick, self.actor, self.order)


@dataclass(frozen=True)
class TranscriptEntry:
    tick: int
    actor: str
    op: str
    args: Mapping[str, Any]
    outcome: Mapping[str, Any]
    label: str | None = None

    def to_dict(self) -> dict:
        out = {
            "tick": self.tick,
            "actor": self.actor,
            "op": self.op,
            "args": dict(self.args),
            "outcome": dict(self.outcome),
        }
        if self.label is not None:
            out["label"] = self.label
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> TranscriptEntry:
        return cls(data["tick"], data["actor"], data["op"], data["args"], data["outcome"], data.get("label"))


@dataclass(frozen=True)
class AssertionResult:
    name: str
    passed: bool
    detail: str = ""
    line: int | None = None

    def to_dict(self) -> dict:
        return {"assertion": self.name, "passed": self.passed, "detail": self.detail, "line": self.line}

    @classmethod
    def from_dict(cls, data: Mapping) -> AssertionResult:
        return cls(data["assertion"], data["passed"], data.get("detail", ""), data.get("line"))


@dataclass(frozen=True)
class Report:
    results: tuple[AssertionResult, ...] = ()

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)


@dataclass(frozen=True)
class Transcript:
    scenario: str
    seed: int
    entries: tuple[TranscriptEntry, ...]
    world_digest: str
    report: Report = Report()

    def lines(self) -> list[dict]:
        out = [{"scenario": self.scenario, "seed": self.seed}]
        out += [e.to_dict() for e in self.entries]
        out.append({"world_digest": self.world_digest})
        out += [r.to_dict() for r in self.report.results]
        return out

    def to_jsonl(self) -> bytes:
        return b"".join(canonical_bytes(line) + b"\n" for line in self.lines())

    def to_dict(self) -> dict:
        return {
            "scenario": self.scenario,
            "seed": self.seed,
            "entries": [e.to_dict() for e in self.entries],
            "world_digest": self.world_digest,
            "report": [r.to_dict() for r in self.report.results],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> Transcript:
        return cls(
            data["scenario"],
            data["seed"],
            tuple(TranscriptEntry.from_dict(e) for e in data["entries"]),
            data["world_digest"],
            Report(tuple(AssertionResult.from_dict(r) for r in data.get("report", ()))),
        )

    @classmethod
    def from_jsonl(cls, data: bytes) -> Transcript:
        lines = [json.loads(line) for line in data.decode("utf-8").splitlines() if line]
        header, rest = lines[0], lines[1:]
        split = next(i for i, line in enumerate(rest) if "world_digest" in line)
        return cls.from_dict({
            **header,
            "entries": rest[:split],
            "world_digest": rest[split]["world_digest"],
            "report": rest[split + 1:],
        })

    @property
    def digest(self) -> str:
        return sha256_hex(self.to_jsonl())

    def find(self, label: str) -> TranscriptEntry | None:
        for e in self.entries:
            if e.label == label:
                return e
        return None


# -- assertions -----------------------------------------------------------------------


def lookup(outcome: Mapping, path: str):
    """Dotted-path lookup into an outcome; integer segments index lists."""
    value: Any = outcome
    for part in path.split("."):
        if isinstance(value, Mapping) and part in value:
            value = value[part]
        elif isinstance(value, list) and part.isdigit() and int(part) < len(value):
            value = value[int(part)]
        else:
            raise KeyError(path)
    return value


@dataclass(frozen=True)
class Expect:
    """Entries selected by label or tick (and op) must have the given outcome fields."""

    name: str
    fields: Mapping[str, Any]
    label: str | None = None
    tick: int | None = None
    op: str | None = None


@dataclass(frozen=True)
class Compare:
    """Outcome field of two labelled entries must be equal (``same``) or differ."""

    name: str
    first: str
    second: str
    path: str
    same: bool = True


def _select(t: Transcript, a: Expect) -> list[tuple[int, TranscriptEntry]]:
    return [
        (i, e)
        for i, e in enumerate(t.entries, start=1)
        if (a.label is None or e.label == a.label)
        and (a.tick is None or e.tick == a.tick)
        and (a.op is None or e.op == a.op)
    ]


def _check_expect(t: Transcript, a: Expect) -> AssertionResult:
    hits = _select(t, a)
    if not hits:
        where = a.label if a.label is not None else f"tick {a.tick}"
        return AssertionResult(a.name, False, f"NotFound: no entry at {where}")
    for line, entry in hits:
        for path, want in a.fields.items():
            try:
                got = lookup(entry.outcome, path)
            except KeyError:
                return AssertionResult(a.name, False, f"NotFound: {path}", line)
            if got != want:
                return AssertionResult(a.name, False, f"{path}: expected {want!r}, got {got!r}", line)
    return AssertionResult(a.name, True)


def _check_compare(t: Transcript, a: Compare) -> AssertionResult:
    picked = []
    for label in (a.first, a.second):
        hit = next(((i, e) for i, e in enumerate(t.entries, start=1) if e.label == label), None)
        if hit is None:
            return AssertionResult(a.name, False, f"NotFound: no entry labelled {label}")
        picked.append(hit)
    try:
        values = [lookup(e.outcome, a.path) for _, e in picked]
    except KeyError:
        return AssertionResult(a.name, False, f"NotFound: {a.path}", picked[0][0])
    if (values[0] == values[1]) != a.same:
        relation = "equal" if a.same else "differ"
        return AssertionResult(a.name, False, f"{a.path} should {relation}", picked[1][0])
    return AssertionResult(a.name, True)


def assert_trace(t: Transcript, assertions: Sequence[Expect | Compare]) -> Report:
    results = []
    for a in assertions:
        if isinstance(a, Expect):
            results.append(_check_expect(t, a))
        else:
            results.append(_check_compare(t, a))
    return Report(tuple(results))


# -- simulation -----------------------------------------------------------------------


Handler = Callable[..., Mapping[str, Any]]


class Simulation:
    """Mutable driver around immutable world values.

    Principals and ecosystems are addressed by stable aliases in scripted
    arguments, so transcripts line up across seeds even though identifiers
    (digests of seed-derived keys) differ.
    """

    def __init__(self, scenario: str, seed: int):
        self.scenario = scenario
        self.seed = seed
        self.rng = random.Random(seed)
        self.world = World()
        self.keyring = Keyring()
        self.book = PolicyBook()
        self.ids: dict[str, str] = {}
        self.receipts: list[WitnessReceipt] = []
        self.state: dict[str, Any] = {}
        self._queue: list[tuple[tuple, ScheduledEvent]] = []
        self._order = 0
        self._entries: list[TranscriptEntry] = []
        self._handlers: dict[str, Handler] = {}

    # -- ids and logging --

    def id(self, alias: str) -> str:
        return self.ids[alias]

    def alias_of(self, ident: str) -> str:
        for alias, value in self.ids.items():
            if value == ident:
                return alias
        return ident

    def log(self, tick: int, actor: str, op: str, args: Mapping, outcome: Mapping, label=None) -> None:
        self._entries.append(TranscriptEntry(tick, actor, op, dict(args), dict(outcome), label))

    # -- setup helpers (tick 0) --

    def principal(self, alias: str, kind: PrincipalKind, note: str | None = None) -> str:
        kel = self.keyring.incept(self.rng)
        self.world, p = register_principal(self.world, kind, kel.events[0])
        self.ids[alias] = p.id
        outcome = {"id": p.id, "kind": p.kind.value}
        if note:
            outcome["note"] = note
        self.log(0, alias, "register_principal", {"alias": alias, "kind": p.kind.value}, outcome)
        return p.id

    def ecosystem(
        self,
        alias: str,
        founders: Sequence[str],
        admin: Sequence[str],
        admin_kel: str,
        reps: Sequence[str] = (),
        documents: Mapping[str, str] | None = None,
    ) -> str:
        docs = frozenset(AuthorityDocument(t, c) for t, c in (documents or {}).items())
        authority = LegitimateAuthority(frozenset(self.id(r) for r in reps), docs)
        administration = Administration(frozenset(self.id(a) for a in admin), self.id(admin_kel))
        self.world, eco = create_ecosystem(
            self.world, [self.id(f) for f in founders], authority, administration, self.keyring
        )
        self.ids[alias] = eco.id
        self.log(
            0,
            admin_kel,
            "create_ecosystem",
            {"alias": alias, "founders": sorted(founders), "reps": sorted(reps), "admin": sorted(admin),
             "documents": sorted(documents or {})},
            {"id": eco.id, "population": eco.size},
        )
        return eco.id

    def lift(self, alias: str, principal: str) -> str:
        self.world, eco = lift_to_ecosystem(self.world, self.id(principal))
        self.ids[alias] = eco.id
        self.log(0, principal, "lift_to_ecosystem", {"alias": alias, "principal": principal},
                 {"id": eco.id, "population": eco.size})
        return eco.id

    def ecosystem_principal(self, eco_alias: str, alias: str, kind: PrincipalKind) -> str:
        kel = self.keyring.incept(self.rng)
        self.world, eco = mint_ecosystem_principal(self.world, self.id(eco_alias), kind, kel.events[0], self.keyring)
        self.ids[alias] = eco.as_principal
        self.log(0, eco_alias, "mint_ecosystem_principal", {"ecosystem": eco_alias, "alias": alias,
                 "kind": PrincipalKind(kind).value}, {"id": eco.as_principal})
        return eco.as_principal

    def join(self, eco_alias: str, member: str) -> None:
        self.world, eco = join_population(self.world, self.id(eco_alias), self.id(member), self.keyring)
        self.log(0, member, "join_population", {"ecosystem": eco_alias, "principal": member},
                 {"population": eco.size})

    def kel(self, alias: str) -> KeyEventLog:
        return self.world.kel(self.id(alias))

    def anchor(self, alias: str, *digests: str) -> str:
        kel = self.keyring.anchor(self.kel(alias), *digests)
        self.world = self.world.with_kel(kel)
        return kel.events[-1].digest

    # -- scheduling --

    def on(self, op: str, handler: Handler) -> None:
        self._handlers[op] = handler

    def schedule(self, tick: int, actor: str, op: str, label: str | None = None, **args) -> None:
        if tick < 1:
            raise ValueError("tick 0 is reserved for setup")
        event = ScheduledEvent(tick, self.id(actor), Action(op, args, label), self._order)
        self._order += 1
        heapq.heappush(self._queue, (event.sort_key(), event))

    def run(self) -> Transcript:
        last_tick = 0
        while self._queue:
            _, event = heapq.heappop(self._queue)
            assert event.tick >= last_tick
            last_tick = event.tick
            actor = self.alias_of(event.actor)
            handler = self._handlers[event.action.op]
            try:
                outcome = dict(handler(actor, **event.action.args))
            except DistgovError as exc:
                outcome = {"error": type(exc).__name__, "detail": str(exc)}
            self.log(event.tick, actor, event.action.op, event.action.args, outcome, event.action.label)
        return Transcript(self.scenario, self.seed, tuple(self._entries), self.world.digest)


def attach_report(t: Transcript, assertions) -> Transcript:
    return replace(t, report=assert_trace(t, assertions))
