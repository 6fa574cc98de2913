"""Policy evaluation across ecosystems, treaties and assurance levels.

Rule precedence: among matching rules the most specific tier wins; inside a
tier Deny beats RequireAssurance beats Allow.  No matching rule means Deny.
Treaty rules bind an interaction only when the treaty is in force for an
ecosystem on each side, and a party's reservation or derogation removes the
named rule whenever that party is a side.
"""

from __future__ import annotations

import enum
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace

from .authenticity import KeyEventLog, Keyring, WitnessReceipt, verify_kel
from .canonical import digest_of
from .comms import ConfidentialityLevel
from .core import PrincipalKind, World, record_act
from .errors import (
    AlreadyScreened,
    AnchorFailure,
    DistgovError,
    InvalidAmendment,
    InvalidRule,
    KelError,
    UnknownParty,
)

# -- assurance ------------------------------------------------------------------------


class AssuranceLevel(enum.IntEnum):
    L0 = 0  # unverified
    L1 = 1  # valid key event log
    L2 = 2  # log plus one witness receipt per event
    L3 = 3  # log plus two witness receipts per event

    @property
    def witness_threshold(self) -> int | None:
        return None if self is AssuranceLevel.L0 else self - 1

    @classmethod
    def parse(cls, value: AssuranceLevel | str | int) -> AssuranceLevel:
        if isinstance(value, str):
            return cls[value.upper()]
        return cls(value)


class Verification(str, enum.Enum):
    MET = "met"
    NOT_MET = "not_met"


def verify_counterparty(
    world: World,
    pid: str,
    required: AssuranceLevel,
    receipts: Iterable[WitnessReceipt] = (),
) -> Verification:
    world.principal(pid)
    threshold = AssuranceLevel.parse(required).witness_threshold
    if threshold is None:
        return Verification.MET
    try:
        verify_kel(world.kel(pid), receipts, threshold, world.witness_keys())
    except KelError:
        return Verification.NOT_MET
    return Verification.MET


def achieved_assurance(world: World, pid: str, receipts: Iterable[WitnessReceipt] = ()) -> AssuranceLevel:
    receipts = list(receipts)
    best = AssuranceLevel.L0
    for level in AssuranceLevel:
        if verify_counterparty(world, pid, level, receipts) is Verification.MET:
            best = level
    return best


# -- rules ----------------------------------------------------------------------------


class EffectKind(str, enum.Enum):
    ALLOW = "allow"
    DENY = "deny"
    REQUIRE_ASSURANCE = "require_assurance"


_PRECEDENCE = {EffectKind.DENY: 0, EffectKind.REQUIRE_ASSURANCE: 1, EffectKind.ALLOW: 2}


@dataclass(frozen=True)
class Effect:
    kind: EffectKind
    level: AssuranceLevel | None = None

    def __post_init__(self):
        if (self.kind is EffectKind.REQUIRE_ASSURANCE) != (self.level is not None):
            raise InvalidRule("only RequireAssurance effects carry a level")

    def __str__(self) -> str:
        return self.kind.value if self.level is None else f"{self.kind.value}({self.level.name})"

    def to_dict(self) -> dict:
        out = {"type": self.kind.value}
        if self.level is not None:
            out["level"] = self.level.name
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> Effect:
        level = data.get("level")
        return cls(EffectKind(data["type"]), None if level is None else AssuranceLevel.parse(level))


ALLOW = Effect(EffectKind.ALLOW)
DENY = Effect(EffectKind.DENY)


def require(level: AssuranceLevel | str) -> Effect:
    return Effect(EffectKind.REQUIRE_ASSURANCE, AssuranceLevel.parse(level))


@dataclass(frozen=True)
class Context:
    sender_kind: PrincipalKind
    receiver_kind: PrincipalKind
    level: ConfidentialityLevel
    purpose: str
    sensitive: bool = False
    assurance: AssuranceLevel = AssuranceLevel.L0

    def to_dict(self) -> dict:
        return {
            "sender_kind": self.sender_kind.value,
            "receiver_kind": self.receiver_kind.value,
            "level": self.level.value,
            "purpose": self.purpose,
            "sensitive": self.sensitive,
            "assurance": self.assurance.name,
        }


@dataclass(frozen=True)
class Match:
    """Predicate over an interaction; ``None`` fields are wildcards."""

    sender_kind: PrincipalKind | None = None
    receiver_kind: PrincipalKind | None = None
    level: ConfidentialityLevel | None = None
    purpose: str | None = None
    sensitive: bool | None = None

    @property
    def specificity(self) -> int:
        return sum(
            v is not None
            for v in (self.sender_kind, self.receiver_kind, self.level, self.purpose, self.sensitive)
        )

    def covers(self, ctx: Context) -> bool:
        return (
            (self.sender_kind is None or self.sender_kind is ctx.sender_kind)
            and (self.receiver_kind is None or self.receiver_kind is ctx.receiver_kind)
            and (self.level is None or self.level is ctx.level)
            and (self.purpose is None or self.purpose == ctx.purpose)
            and (self.sensitive is None or self.sensitive == ctx.sensitive)
        )

    def covers_parties(self, sender_kind: PrincipalKind, receiver_kind: PrincipalKind, purpose: str) -> bool:
        return (
            (self.sender_kind is None or self.sender_kind is sender_kind)
            and (self.receiver_kind is None or self.receiver_kind is receiver_kind)
            and (self.purpose is None or self.purpose == purpose)
        )

    def to_dict(self) -> dict:
        return {
            "sender_kind": None if self.sender_kind is None else self.sender_kind.value,
            "receiver_kind": None if self.receiver_kind is None else self.receiver_kind.value,
            "level": None if self.level is None else self.level.value,
            "purpose": self.purpose,
            "sensitive": self.sensitive,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> Match:
        def opt(enum_type, key):
            v = data.get(key)
            return None if v is None else enum_type(v)

        return cls(
            sender_kind=opt(PrincipalKind, "sender_kind"),
            receiver_kind=opt(PrincipalKind, "receiver_kind"),
            level=opt(ConfidentialityLevel, "level"),
            purpose=data.get("purpose"),
            sensitive=data.get("sensitive"),
        )


@dataclass(frozen=True)
class PolicyRule:
    id: str
    scope: str
    match: Match
    effect: Effect
    source: str = "local"

    @property
    def specificity(self) -> int:
        return self.match.specificity

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "scope": self.scope,
            "match": self.match.to_dict(),
            "effect": self.effect.to_dict(),
            "specificity": self.specificity,
        }
        if self.source != "local":
            out["source"] = self.source
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> PolicyRule:
        rule = cls(
            data["id"],
            data["scope"],
            Match.from_dict(data.get("match", {})),
            Effect.from_dict(data["effect"]),
            data.get("source", "local"),
        )
        if "specificity" in data and data["specificity"] != rule.specificity:
            raise InvalidRule(f"rule {rule.id}: specificity {data['specificity']} disagrees with match")
        return rule


def rules_to_json(rules: Iterable[PolicyRule]) -> list[dict]:
    return [r.to_dict() for r in sorted(rules, key=lambda r: (r.source, r.id))]


def rules_from_json(items: Iterable[Mapping]) -> list[PolicyRule]:
    return [PolicyRule.from_dict(d) for d in items]


@dataclass(frozen=True)
class TraceEntry:
    rule_id: str
    source: str
    effect: str

    def to_dict(self) -> dict:
        return {"rule_id": self.rule_id, "source": self.source, "effect": self.effect}

    @classmethod
    def from_dict(cls, data: Mapping) -> TraceEntry:
        return cls(data["rule_id"], data["source"], data["effect"])


class Outcome(str, enum.Enum):
    ALLOW = "allow"
    DENY = "deny"


@dataclass(frozen=True)
class Decision:
    outcome: Outcome
    required_assurance: AssuranceLevel
    trace: tuple[TraceEntry, ...]

    def to_dict(self) -> dict:
        return {
            "outcome": self.outcome.value,
            "required_assurance": self.required_assurance.name,
            "trace": [t.to_dict() for t in self.trace],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> Decision:
        return cls(
            Outcome(data["outcome"]),
            AssuranceLevel.parse(data["required_assurance"]),
            tuple(TraceEntry.from_dict(t) for t in data["trace"]),
        )


DEFAULT_DENY = TraceEntry("default-deny", "local", "deny")


def evaluate(rules: Iterable[PolicyRule], context: Context) -> Decision:
    matching = [r for r in rules if r.match.covers(context)]
    if not matching:
        return Decision(Outcome.DENY, AssuranceLevel.L0, (DEFAULT_DENY,))
    top = max(r.specificity for r in matching)
    tier = sorted(
        (r for r in matching if r.specificity == top),
        key=lambda r: (_PRECEDENCE[r.effect.kind], r.source, r.id),
    )
    trace = tuple(TraceEntry(r.id, r.source, str(r.effect)) for r in tier)
    kinds = {r.effect.kind for r in tier}
    if EffectKind.DENY in kinds:
        return Decision(Outcome.DENY, AssuranceLevel.L0, trace)
    if EffectKind.REQUIRE_ASSURANCE in kinds:
        needed = max(r.effect.level for r in tier if r.effect.kind is EffectKind.REQUIRE_ASSURANCE)
        outcome = Outcome.ALLOW if context.assurance >= needed else Outcome.DENY
        return Decision(outcome, needed, trace)
    return Decision(Outcome.ALLOW, AssuranceLevel.L0, trace)


# -- treaties and signatory registries --------------------------------------------------


class PartyStatus(str, enum.Enum):
    SIGNED = "signed"
    RATIFIED = "ratified"
    IN_FORCE = "in_force"
    DENOUNCED = "denounced"


class AnnotationKind(str, enum.Enum):
    RESERVATION = "reservation"
    DECLARATION = "declaration"
    DEROGATION = "derogation"


@dataclass(frozen=True)
class Annotation:
    kind: AnnotationKind
    ref: str  # rule id for reservations/derogations, text digest for declarations

    @property
    def excludes_rule(self) -> bool:
        return self.kind is not AnnotationKind.DECLARATION

    def to_dict(self) -> dict:
        return {"kind": self.kind.value, "ref": self.ref}

    @classmethod
    def from_dict(cls, data: Mapping) -> Annotation:
        return cls(AnnotationKind(data["kind"]), data["ref"])


@dataclass(frozen=True)
class PartyEntry:
    status: PartyStatus
    annotations: frozenset[Annotation] = frozenset()
    dates: Mapping[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "status": self.status.value,
            "annotations": [a.to_dict() for a in sorted(self.annotations, key=lambda a: (a.kind.value, a.ref))],
            "dates": dict(sorted(self.dates.items())),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> PartyEntry:
        return cls(
            PartyStatus(data["status"]),
            frozenset(Annotation.from_dict(a) for a in data.get("annotations", ())),
            dict(data.get("dates", {})),
        )


@dataclass(frozen=True)
class Treaty:
    id: str
    administrator: str  # ecosystem whose administration publishes amendments
    parties: frozenset[str]
    scope: frozenset[str]
    rules: tuple[PolicyRule, ...] = ()

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "administrator": self.administrator,
            "parties": sorted(self.parties),
            "scope": sorted(self.scope),
            "rules": rules_to_json(self.rules),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> Treaty:
        return cls(
            data["id"],
            data["administrator"],
            frozenset(data["parties"]),
            frozenset(data["scope"]),
            tuple(rules_from_json(data.get("rules", ()))),
        )


@dataclass(frozen=True)
class Amendment:
    """Change to one party's entry: a status transition and/or annotation edits."""

    party: str
    status: PartyStatus | None = None
    add: frozenset[Annotation] = frozenset()
    remove: frozenset[Annotation] = frozenset()
    dates: Mapping[str, str] = field(default_factory=dict)

    def to_dict(self) -> dict:
        key = lambda a: (a.kind.value, a.ref)  # noqa: E731
        return {
            "party": self.party,
            "status": None if self.status is None else self.status.value,
            "add": [a.to_dict() for a in sorted(self.add, key=key)],
            "remove": [a.to_dict() for a in sorted(self.remove, key=key)],
            "dates": dict(sorted(self.dates.items())),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> Amendment:
        status = data.get("status")
        return cls(
            data["party"],
            None if status is None else PartyStatus(status),
            frozenset(Annotation.from_dict(a) for a in data.get("add", ())),
            frozenset(Annotation.from_dict(a) for a in data.get("remove", ())),
            dict(data.get("dates", {})),
        )


@dataclass(frozen=True)
class AmendmentRecord:
    version: int
    amendment: Amendment
    digest: str
    anchor_event_digest: str

    def to_dict(self) -> dict:
        return {
            "version": self.version,
            "change": self.amendment.to_dict(),
            "digest": self.digest,
            "anchor_event_digest": self.anchor_event_digest,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> AmendmentRecord:
        return cls(data["version"], Amendment.from_dict(data["change"]), data["digest"], data["anchor_event_digest"])


def apply_amendment(treaty: Treaty, entries: Mapping[str, PartyEntry], amendment: Amendment) -> dict[str, PartyEntry]:
    if amendment.party not in treaty.parties:
        raise UnknownParty(f"{amendment.party} is not a party to {treaty.id}")
    if amendment.status is None and not amendment.add and not amendment.remove and not amendment.dates:
        raise InvalidAmendment("amendment changes nothing")
    known_rules = {r.id for r in treaty.rules}
    for a in amendment.add:
        if a.excludes_rule and a.ref not in known_rules:
            raise InvalidAmendment(f"{a.kind.value} names unknown rule {a.ref}")
    entry = entries.get(amendment.party, PartyEntry(PartyStatus.SIGNED))
    entry = PartyEntry(
        amendment.status or entry.status,
        (entry.annotations - amendment.remove) | amendment.add,
        {**entry.dates, **amendment.dates},
    )
    return {**entries, amendment.party: entry}


def amendment_document(treaty_id: str, version: int, amendment: Amendment) -> dict:
    return {"treaty_id": treaty_id, "version": version, "change": amendment.to_dict()}


@dataclass(frozen=True)
class SignatoryRegistry:
    treaty: Treaty
    genesis: Mapping[str, PartyEntry]
    entries: Mapping[str, PartyEntry]
    version: int = 0
    amendment_log: tuple[AmendmentRecord, ...] = ()

    @classmethod
    def create(cls, treaty: Treaty, entries: Mapping[str, PartyEntry]) -> SignatoryRegistry:
        unknown = set(entries) - treaty.parties
        if unknown:
            raise UnknownParty(f"entries for non-parties: {sorted(unknown)}")
        rule_ids = {r.id for r in treaty.rules}
        for party, entry in entries.items():
            for a in entry.annotations:
                if a.excludes_rule and a.ref not in rule_ids:
                    raise InvalidAmendment(f"{party}: {a.kind.value} names unknown rule {a.ref}")
        return cls(treaty, dict(entries), dict(entries))

    @property
    def treaty_id(self) -> str:
        return self.treaty.id

    def status(self, party: str) -> PartyStatus | None:
        entry = self.entries.get(party)
        return None if entry is None else entry.status

    def in_force(self, party: str) -> bool:
        return self.status(party) is PartyStatus.IN_FORCE

    def excluded_rules(self, party: str) -> set[str]:
        entry = self.entries.get(party)
        if entry is None:
            return set()
        return {a.ref for a in entry.annotations if a.excludes_rule}

    def replay(self) -> dict[str, PartyEntry]:
        entries = dict(self.genesis)
        for rec in self.amendment_log:
            entries = apply_amendment(self.treaty, entries, rec.amendment)
        return entries

    def notification(self, version: int | None = None) -> dict:
        rec = self.amendment_log[(version or self.version) - 1]
        return {
            "treaty_id": self.treaty.id,
            "version": rec.version,
            "change": rec.amendment.to_dict(),
            "anchor_event_digest": rec.anchor_event_digest,
        }

    def to_dict(self) -> dict:
        return {
            "treaty": self.treaty.to_dict(),
            "genesis": {k: v.to_dict() for k, v in sorted(self.genesis.items())},
            "entries": {k: v.to_dict() for k, v in sorted(self.entries.items())},
            "version": self.version,
            "amendment_log": [r.to_dict() for r in self.amendment_log],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> SignatoryRegistry:
        reg = cls(
            Treaty.from_dict(data["treaty"]),
            {k: PartyEntry.from_dict(v) for k, v in data.get("genesis", {}).items()},
            {k: PartyEntry.from_dict(v) for k, v in data.get("entries", {}).items()},
            data.get("version", 0),
            tuple(AmendmentRecord.from_dict(r) for r in data.get("amendment_log", ())),
        )
        if reg.version != len(reg.amendment_log) or reg.replay() != dict(reg.entries):
            raise InvalidAmendment("registry entries do not match its amendment log")
        return reg


def publish_amendment(
    registry: SignatoryRegistry, amendment: Amendment, admin_kel: KeyEventLog, keyring: Keyring
) -> tuple[SignatoryRegistry, KeyEventLog]:
    """Apply an amendment and anchor its digest in the administering log."""
    entries = apply_amendment(registry.treaty, registry.entries, amendment)
    version = registry.version + 1
    doc_digest = digest_of(amendment_document(registry.treaty.id, version, amendment))
    try:
        kel = keyring.anchor(admin_kel, doc_digest)
    except DistgovError as exc:
        raise AnchorFailure(f"could not anchor amendment: {exc}") from exc
    rec = AmendmentRecord(version, amendment, doc_digest, kel.events[-1].digest)
    registry = replace(registry, entries=entries, version=version, amendment_log=registry.amendment_log + (rec,))
    return registry, kel


def registry_anchored(registry: SignatoryRegistry, admin_kel: KeyEventLog) -> bool:
    """Every amendment digest is carried by the recorded event of the administering log."""
    for rec in registry.amendment_log:
        if rec.digest != digest_of(amendment_document(registry.treaty.id, rec.version, rec.amendment)):
            return False
        event = admin_kel.find(rec.anchor_event_digest)
        if event is None or rec.digest not in event.anchors:
            return False
    return True


# -- jurisdiction resolution ---------------------------------------------------------


@dataclass(frozen=True)
class PolicyBook:
    """Local rules of every ecosystem plus the treaty registries known to a world."""

    local_rules: tuple[PolicyRule, ...] = ()
    registries: Mapping[str, SignatoryRegistry] = field(default_factory=dict)

    def with_rules(self, *rules: PolicyRule) -> PolicyBook:
        return replace(self, local_rules=self.local_rules + rules)

    def with_registry(self, registry: SignatoryRegistry) -> PolicyBook:
        return replace(self, registries={**self.registries, registry.treaty_id: registry})

    def rules_of(self, eco_id: str) -> list[PolicyRule]:
        return [r for r in self.local_rules if r.scope == eco_id]


def resolve_jurisdictions(
    world: World, book: PolicyBook, sender: str, receiver: str, purpose: str
) -> tuple[PolicyRule, ...]:
    sender_kind = world.principal(sender).kind
    receiver_kind = world.principal(receiver).kind
    sender_ecos = {e.id for e in world.ecosystems_of(sender)}
    receiver_ecos = {e.id for e in world.ecosystems_of(receiver)}
    sides = sender_ecos | receiver_ecos

    selected: dict[tuple[str, str], PolicyRule] = {}
    for rule in book.local_rules:
        if rule.scope in sides and rule.match.covers_parties(sender_kind, receiver_kind, purpose):
            selected[(rule.source, rule.id)] = rule

    for treaty_id, reg in sorted(book.registries.items()):
        treaty = reg.treaty
        if purpose not in treaty.scope:
            continue
        s_parties = {e for e in sender_ecos if e in treaty.parties and reg.in_force(e)}
        r_parties = {e for e in receiver_ecos if e in treaty.parties and reg.in_force(e)}
        if not s_parties or not r_parties:
            continue
        excluded = set()
        for party in (sides & treaty.parties):
            excluded |= reg.excluded_rules(party)
        for rule in treaty.rules:
            if rule.id in excluded or not rule.match.covers_parties(sender_kind, receiver_kind, purpose):
                continue
            rule = replace(rule, source=treaty_id)
            selected[(rule.source, rule.id)] = rule
    return tuple(selected[k] for k in sorted(selected))


# -- reputable actors and monitored requests --------------------------------------------


@dataclass(frozen=True)
class ActorRegistry:
    administration: str  # ecosystem id
    reputable: frozenset[str] = frozenset()
    revocations: tuple[str, ...] = ()

    def to_dict(self) -> dict:
        return {
            "administration": self.administration,
            "reputable": sorted(self.reputable),
            "revocations": list(self.revocations),
        }


def _admin_log(world: World, eco_id: str) -> str:
    return world.ecosystem(eco_id).administration.admin_kel


def admit_actor(world: World, actors: ActorRegistry, pid: str, keyring: Keyring) -> tuple[World, ActorRegistry]:
    world.principal(pid)
    world, _ = record_act(
        world, _admin_log(world, actors.administration), keyring,
        {"act": "admit_actor", "administration": actors.administration, "principal": pid},
    )
    return world, replace(actors, reputable=actors.reputable | {pid})


def revoke_actor(world: World, actors: ActorRegistry, pid: str, keyring: Keyring) -> tuple[World, ActorRegistry]:
    world, d = record_act(
        world, _admin_log(world, actors.administration), keyring,
        {"act": "revoke_actor", "administration": actors.administration, "principal": pid},
    )
    return world, replace(actors, reputable=actors.reputable - {pid}, revocations=actors.revocations + (d,))


class RequestState(str, enum.Enum):
    QUEUED = "queued"
    APPROVED = "approved"
    REJECTED = "rejected"


_OPS = {
    "eq": lambda a, b: a == b,
    "ne": lambda a, b: a != b,
    "lt": lambda a, b: a < b,
    "le": lambda a, b: a <= b,
    "gt": lambda a, b: a > b,
    "ge": lambda a, b: a >= b,
}


@dataclass(frozen=True)
class Criterion:
    bundle_said: str
    attribute: str
    op: str
    value: object

    def __post_init__(self):
        if self.op not in _OPS:
            raise InvalidRule(f"unknown criterion operator {self.op!r}")

    def holds(self, record) -> bool:
        if record.bundle_said != self.bundle_said or self.attribute not in record.values:
            return False
        try:
            return bool(_OPS[self.op](record.values[self.attribute], self.value))
        except TypeError:
            return False

    def to_dict(self) -> dict:
        return {"bundle_said": self.bundle_said, "attribute": self.attribute, "op": self.op, "value": self.value}


@dataclass(frozen=True)
class DataRequest:
    id: str
    requester: str
    criteria: tuple[Criterion, ...]
    purpose: str
    state: RequestState = RequestState.QUEUED
    decision: Decision | None = None
    anchor: str | None = None

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "requester": self.requester,
            "criteria": [c.to_dict() for c in self.criteria],
            "purpose": self.purpose,
            "state": self.state.value,
            "decision": None if self.decision is None else self.decision.to_dict(),
            "anchor": self.anchor,
        }


def screen_request(
    world: World,
    req: DataRequest,
    actors: ActorRegistry,
    rules: Sequence[PolicyRule],
    context: Context,
    keyring: Keyring,
) -> tuple[World, DataRequest]:
    """Approve only a reputable requester whose request the rules allow; anchor the outcome."""
    if req.state is not RequestState.QUEUED:
        raise AlreadyScreened(f"request {req.id} is already {req.state.value}")
    decision = evaluate(rules, replace(context, purpose=req.purpose))
    ok = req.requester in actors.reputable and decision.outcome is Outcome.ALLOW
    state = RequestState.APPROVED if ok else RequestState.REJECTED
    world, d = record_act(
        world, _admin_log(world, actors.administration), keyring,
        {"act": "screen_request", "request": req.id, "requester": req.requester, "state": state.value,
         "decision": decision.to_dict()},
    )
    return world, replace(req, state=state, decision=decision, anchor=d)


@dataclass(frozen=True)
class RecordStore:
    """Searchable record store held by one administration, indexed by bundle."""

    administration: str
    records: Mapping[str, tuple] = field(default_factory=dict)

    def add(self, record) -> RecordStore:
        existing = self.records.get(record.bundle_said, ())
        if any(r.said == record.said for r in existing):
            return self
        return replace(self, records={**self.records, record.bundle_said: existing + (record,)})

    def search(self, criteria: Iterable[Criterion]) -> list:
        criteria = list(criteria)
        bundles = {c.bundle_said for c in criteria} or set(self.records)
        hits = []
        for b in sorted(bundles):
            hits += [r for r in self.records.get(b, ()) if all(c.holds(r) for c in criteria if c.bundle_said == b)]
        return hits

    def answer(self, req: DataRequest) -> list:
        if req.state is not RequestState.APPROVED:
            raise AlreadyScreened(f"request {req.id} is {req.state.value}, not approved")
        return self.search(req.criteria)
