"""World registry: autonomous principals, things and ecosystems.

All values are immutable.  Operations that change the world return a new
:class:`World` together with the object they created or changed.  Acts of
governance (ecosystem creation, membership changes, controller changes) are
stored as content-addressed documents in ``World.acts`` and their digests are
anchored in the administration's key event log, so the history can be
replayed from the log alone.
"""

from __future__ import annotations

import enum
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace

from .authenticity import KeyEvent, KeyEventLog, Keyring, KeyState, verify_kel
from .canonical import canonical_bytes, digest_of, sha256_hex, sortable_id
from .errors import (
    DuplicateId,
    EmptyFounders,
    InvalidAuthority,
    InvalidInception,
    KelError,
    LastMember,
    NotAMember,
    UnknownController,
    UnknownEcosystem,
    UnknownPrincipal,
    UnknownThing,
)


class PrincipalKind(str, enum.Enum):
    INDIVIDUAL = "individual"
    ORGANISATION = "organisation"
    POLITICAL = "political"


@dataclass(frozen=True)
class Principal:
    id: str
    kind: PrincipalKind

    @property
    def kel_ref(self) -> str:
        # the log prefix and the principal id are the same self-certifying digest
        return self.id

    def to_dict(self) -> dict:
        return {"id": self.id, "kind": self.kind.value, "kel_ref": self.kel_ref}

    @classmethod
    def from_dict(cls, data: Mapping) -> Principal:
        if data.get("kel_ref", data["id"]) != data["id"]:
            raise InvalidInception("kel_ref must equal the principal id")
        return cls(data["id"], PrincipalKind(data["kind"]))


@dataclass(frozen=True)
class AuthorityDocument:
    title: str
    content: str

    @property
    def digest(self) -> str:
        return sha256_hex(self.content.encode("utf-8"))

    def to_dict(self) -> dict:
        return {"title": self.title, "content": self.content, "digest": self.digest}

    @classmethod
    def from_dict(cls, data: Mapping) -> AuthorityDocument:
        doc = cls(data["title"], data["content"])
        if "digest" in data and data["digest"] != doc.digest:
            raise InvalidAuthority(f"document {doc.title!r} digest does not match content")
        return doc


@dataclass(frozen=True)
class LegitimateAuthority:
    representatives: frozenset[str] = frozenset()
    documents: frozenset[AuthorityDocument] = frozenset()

    def to_dict(self) -> dict:
        return {
            "representatives": sorted(self.representatives),
            "documents": [d.to_dict() for d in sorted(self.documents, key=lambda d: d.digest)],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> LegitimateAuthority:
        return cls(
            frozenset(data.get("representatives", ())),
            frozenset(AuthorityDocument.from_dict(d) for d in data.get("documents", ())),
        )


@dataclass(frozen=True)
class Administration:
    entities: frozenset[str]
    admin_kel: str
    references: frozenset[AuthorityDocument] = frozenset()

    def to_dict(self) -> dict:
        return {
            "entities": sorted(self.entities),
            "admin_kel": self.admin_kel,
            "references": [d.to_dict() for d in sorted(self.references, key=lambda d: d.digest)],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> Administration:
        return cls(
            frozenset(data["entities"]),
            data["admin_kel"],
            frozenset(AuthorityDocument.from_dict(d) for d in data.get("references", ())),
        )


@dataclass(frozen=True)
class Ecosystem:
    id: str
    population: frozenset[str]
    authority: LegitimateAuthority
    administration: Administration
    as_principal: str | None = None

    @property
    def size(self) -> int:
        return len(self.population)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "population": sorted(self.population),
            "authority": self.authority.to_dict(),
            "administration": self.administration.to_dict(),
            "as_principal": self.as_principal,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> Ecosystem:
        return cls(
            data["id"],
            frozenset(data["population"]),
            LegitimateAuthority.from_dict(data["authority"]),
            Administration.from_dict(data["administration"]),
            data.get("as_principal"),
        )


@dataclass(frozen=True)
class Controller:
    """Accountable party for a thing: a principal or an ecosystem's administration."""

    kind: str  # "principal" | "administration"
    ref: str

    @classmethod
    def principal(cls, pid: str) -> Controller:
        return cls("principal", pid)

    @classmethod
    def administration(cls, eco_id: str) -> Controller:
        return cls("administration", eco_id)

    def to_dict(self) -> dict:
        return {"kind": self.kind, "ref": self.ref}

    @classmethod
    def from_dict(cls, data: Mapping) -> Controller:
        return cls(data["kind"], data["ref"])


@dataclass(frozen=True)
class Thing:
    id: str
    controller: Controller

    def to_dict(self) -> dict:
        return {"id": self.id, "controller": self.controller.to_dict()}

    @classmethod
    def from_dict(cls, data: Mapping) -> Thing:
        return cls(data["id"], Controller.from_dict(data["controller"]))


@dataclass(frozen=True)
class World:
    principals: Mapping[str, Principal] = field(default_factory=dict)
    ecosystems: Mapping[str, Ecosystem] = field(default_factory=dict)
    things: Mapping[str, Thing] = field(default_factory=dict)
    agreements: frozenset[str] = frozenset()
    kels: Mapping[str, KeyEventLog] = field(default_factory=dict)
    acts: Mapping[str, dict] = field(default_factory=dict)
    connections: Mapping[str, object] = field(default_factory=dict)
    messages: Mapping[str, object] = field(default_factory=dict)
    sender_clocks: Mapping[str, int] = field(default_factory=dict)
    clock: int = 0

    # -- lookups --

    def principal(self, pid: str) -> Principal:
        try:
            return self.principals[pid]
        except KeyError:
            raise UnknownPrincipal(f"unknown principal {pid}") from None

    def ecosystem(self, eco_id: str) -> Ecosystem:
        try:
            return self.ecosystems[eco_id]
        except KeyError:
            raise UnknownEcosystem(f"unknown ecosystem {eco_id}") from None

    def kel(self, prefix: str) -> KeyEventLog:
        try:
            return self.kels[prefix]
        except KeyError:
            raise UnknownPrincipal(f"no key event log for {prefix}") from None

    def ecosystems_of(self, pid: str) -> list[Ecosystem]:
        return [e for _, e in sorted(self.ecosystems.items()) if pid in e.population]

    def key_state(self, prefix: str) -> KeyState:
        return self.kel(prefix).state

    def witness_keys(self) -> dict[str, tuple[str, ...]]:
        """Current public keys of every principal whose log verifies."""
        out = {}
        for prefix, kel in self.kels.items():
            try:
                out[prefix] = kel.state.signing_keys
            except KelError:
                continue
        return out

    # -- functional updates --

    def _put(self, attr: str, key: str, value) -> World:
        return replace(self, **{attr: {**getattr(self, attr), key: value}})

    def with_principal(self, p: Principal) -> World:
        return self._put("principals", p.id, p)

    def with_ecosystem(self, eco: Ecosystem) -> World:
        return self._put("ecosystems", eco.id, eco)

    def with_thing(self, thing: Thing) -> World:
        return self._put("things", thing.id, thing)

    def with_kel(self, kel: KeyEventLog) -> World:
        return self._put("kels", kel.prefix, kel)

    def with_act(self, doc: dict) -> tuple[World, str]:
        d = digest_of(doc)
        return self._put("acts", d, doc), d

    def with_agreement(self, treaty_id: str) -> World:
        return replace(self, agreements=self.agreements | {treaty_id})

    def mint_id(self, namespace: str) -> tuple[World, str]:
        return replace(self, clock=self.clock + 1), sortable_id(self.clock, namespace)

    # -- serialization --

    def to_dict(self) -> dict:
        return {
            "principals": {k: v.to_dict() for k, v in self.principals.items()},
            "ecosystems": {k: v.to_dict() for k, v in self.ecosystems.items()},
            "things": {k: v.to_dict() for k, v in self.things.items()},
            "agreements": sorted(self.agreements),
            "kels": {k: v.to_dicts() for k, v in self.kels.items()},
            "acts": dict(self.acts),
            "connections": {k: v.to_dict() for k, v in self.connections.items()},
            "messages": {k: v.to_dict() for k, v in self.messages.items()},
            "sender_clocks": dict(self.sender_clocks),
            "clock": self.clock,
        }

    def to_bytes(self) -> bytes:
        return canonical_bytes(self.to_dict())

    @property
    def digest(self) -> str:
        return sha256_hex(self.to_bytes())

    @classmethod
    def from_dict(cls, data: Mapping) -> World:
        from .comms import Connection, Message

        return cls(
            principals={k: Principal.from_dict(v) for k, v in data.get("principals", {}).items()},
            ecosystems={k: Ecosystem.from_dict(v) for k, v in data.get("ecosystems", {}).items()},
            things={k: Thing.from_dict(v) for k, v in data.get("things", {}).items()},
            agreements=frozenset(data.get("agreements", ())),
            kels={k: KeyEventLog.from_dicts(v) for k, v in data.get("kels", {}).items()},
            acts=dict(data.get("acts", {})),
            connections={k: Connection.from_dict(v) for k, v in data.get("connections", {}).items()},
            messages={k: Message.from_dict(v) for k, v in data.get("messages", {}).items()},
            sender_clocks=dict(data.get("sender_clocks", {})),
            clock=data.get("clock", 0),
        )


# -- anchoring helper ---------------------------------------------------------------


def record_act(world: World, prefix: str, keyring: Keyring, doc: dict) -> tuple[World, str]:
    """Store ``doc`` and anchor its digest in the log ``prefix``; returns the act digest."""
    world, d = world.with_act(doc)
    kel = keyring.anchor(world.kel(prefix), d)
    return world.with_kel(kel), d


def replay_acts(world: World, prefix: str) -> list[dict]:
    """Governance act documents anchored in a log, in log order."""
    kel = world.kel(prefix)
    return [world.acts[a] for a in kel.all_anchors() if a in world.acts]


# -- operations ---------------------------------------------------------------------


def register_principal(world: World, kind: PrincipalKind, inception: KeyEvent) -> tuple[World, Principal]:
    kel = KeyEventLog(getattr(inception, "prefix", ""), (inception,))
    try:
        verify_kel(kel)
    except (KelError, AttributeError, TypeError) as exc:
        raise InvalidInception(f"inception does not verify: {exc}") from exc
    if inception.prefix in world.principals:
        raise DuplicateId(f"principal {inception.prefix} already registered")
    principal = Principal(inception.prefix, PrincipalKind(kind))
    return world.with_principal(principal).with_kel(kel), principal


def register_with_log(world: World, kind: PrincipalKind, kel: KeyEventLog) -> tuple[World, Principal]:
    """Register from a full log (inception plus later events); the log must verify."""
    world, principal = register_principal(world, kind, kel.events[0])
    try:
        verify_kel(kel)
    except KelError as exc:
        raise InvalidInception(f"log does not verify: {exc}") from exc
    return world.with_kel(kel), principal


def lift_to_ecosystem(world: World, pid: str) -> tuple[World, Ecosystem]:
    """Lowest-level ecosystem: the principal is its own population, authority and administration."""
    world.principal(pid)
    world, eco_id = world.mint_id(f"eco:{pid}")
    eco = Ecosystem(
        id=eco_id,
        population=frozenset({pid}),
        authority=LegitimateAuthority(representatives=frozenset({pid})),
        administration=Administration(entities=frozenset({pid}), admin_kel=pid),
    )
    return world.with_ecosystem(eco), eco


def _check_authority(world: World, authority: LegitimateAuthority, administration: Administration) -> None:
    if not authority.representatives and not authority.documents:
        raise InvalidAuthority("authority needs representatives or documents")
    for rep in authority.representatives:
        if rep not in world.principals:
            raise InvalidAuthority(f"unknown representative {rep}")
    if not administration.entities:
        raise InvalidAuthority("administration needs at least one entity")
    for ent in administration.entities:
        if ent not in world.principals:
            raise InvalidAuthority(f"unknown administrative entity {ent}")
    if administration.admin_kel not in world.kels:
        raise InvalidAuthority(f"unknown administration log {administration.admin_kel}")
    try:
        world.kels[administration.admin_kel].state
    except KelError as exc:
        raise InvalidAuthority(f"administration log does not verify: {exc}") from exc


def create_ecosystem(
    world: World,
    founders: Iterable[str],
    authority: LegitimateAuthority,
    administration: Administration,
    keyring: Keyring,
) -> tuple[World, Ecosystem]:
    founders = frozenset(founders)
    if not founders:
        raise EmptyFounders("an ecosystem needs at least one founder")
    for pid in sorted(founders):
        world.principal(pid)
    _check_authority(world, authority, administration)
    world, eco_id = world.mint_id("eco:" + ",".join(sorted(founders)))
    eco = Ecosystem(eco_id, founders, authority, administration)
    world = world.with_ecosystem(eco)
    world, _ = record_act(
        world, administration.admin_kel, keyring, {"act": "create_ecosystem", "ecosystem": eco.to_dict()}
    )
    return world, eco


def mint_ecosystem_principal(
    world: World, eco_id: str, kind: PrincipalKind, inception: KeyEvent, keyring: Keyring
) -> tuple[World, Ecosystem]:
    """Give an ecosystem its own principal identity so it can act among peers."""
    eco = world.ecosystem(eco_id)
    if PrincipalKind(kind) is PrincipalKind.INDIVIDUAL:
        raise InvalidAuthority("an ecosystem acts as an organisation or political principal")
    world, principal = register_principal(world, kind, inception)
    eco = replace(eco, as_principal=principal.id)
    world = world.with_ecosystem(eco)
    world, _ = record_act(
        world,
        eco.administration.admin_kel,
        keyring,
        {"act": "mint_principal", "ecosystem": eco.id, "principal": principal.id, "inception": inception.digest},
    )
    return world, eco


def join_population(world: World, eco_id: str, pid: str, keyring: Keyring) -> tuple[World, Ecosystem]:
    eco = world.ecosystem(eco_id)
    world.principal(pid)
    if pid in eco.population:
        return world, eco
    eco = replace(eco, population=eco.population | {pid})
    world = world.with_ecosystem(eco)
    world, _ = record_act(
        world, eco.administration.admin_kel, keyring, {"act": "join", "ecosystem": eco.id, "principal": pid}
    )
    return world, eco


def leave_population(world: World, eco_id: str, pid: str, keyring: Keyring) -> tuple[World, Ecosystem]:
    eco = world.ecosystem(eco_id)
    world.principal(pid)
    if pid not in eco.population:
        raise NotAMember(f"{pid} is not in ecosystem {eco_id}")
    if eco.size == 1:
        raise LastMember("leaving would empty the population")
    eco = replace(eco, population=eco.population - {pid})
    world = world.with_ecosystem(eco)
    world, _ = record_act(
        world, eco.administration.admin_kel, keyring, {"act": "leave", "ecosystem": eco.id, "principal": pid}
    )
    return world, eco


def _resolve_controller(world: World, controller: Controller | str) -> Controller:
    if isinstance(controller, str):
        controller = Controller.principal(controller)
    if controller.kind == "principal" and controller.ref in world.principals:
        return controller
    if controller.kind == "administration" and controller.ref in world.ecosystems:
        return controller
    raise UnknownController(f"controller {controller.kind}:{controller.ref} does not resolve")


def _controller_log(world: World, controller: Controller) -> str:
    if controller.kind == "principal":
        return controller.ref
    return world.ecosystems[controller.ref].administration.admin_kel


def register_thing(world: World, controller: Controller | str) -> tuple[World, Thing]:
    controller = _resolve_controller(world, controller)
    world, thing_id = world.mint_id(f"thing:{controller.kind}:{controller.ref}")
    thing = Thing(thing_id, controller)
    return world.with_thing(thing), thing


def reassign_controller(
    world: World, thing_id: str, controller: Controller | str, keyring: Keyring
) -> tuple[World, Thing]:
    """Move accountability for a thing; the change is anchored in the new controller's log."""
    try:
        thing = world.things[thing_id]
    except KeyError:
        raise UnknownThing(f"unknown thing {thing_id}") from None
    controller = _resolve_controller(world, controller)
    new = replace(thing, controller=controller)
    world = world.with_thing(new)
    world, _ = record_act(
        world,
        _controller_log(world, controller),
        keyring,
        {
            "act": "reassign_controller",
            "thing": thing_id,
            "from": thing.controller.to_dict(),
            "to": controller.to_dict(),
        },
    )
    return world, new


# -- invariant suite ----------------------------------------------------------------


def ecosystem_problems(world: World, eco: Ecosystem) -> list[str]:
    problems = []
    if not eco.population:
        problems.append("population is empty")
    if len(eco.population) != eco.size:
        problems.append("population size disagrees with index set")
    problems += [f"unknown member {p}" for p in sorted(eco.population) if p not in world.principals]
    if not eco.authority.representatives and not eco.authority.documents:
        problems.append("authority has neither representatives nor documents")
    problems += [
        f"unknown representative {p}"
        for p in sorted(eco.authority.representatives)
        if p not in world.principals
    ]
    if not eco.administration.entities:
        problems.append("administration has no entities")
    problems += [
        f"unknown administrative entity {p}"
        for p in sorted(eco.administration.entities)
        if p not in world.principals
    ]
    kel = world.kels.get(eco.administration.admin_kel)
    if kel is None:
        problems.append("administration log missing")
    else:
        try:
            kel.state
        except KelError as exc:
            problems.append(f"administration log does not verify: {exc}")
    if eco.as_principal is not None:
        p = world.principals.get(eco.as_principal)
        if p is None:
            problems.append("ecosystem principal is not registered")
        elif p.kind is PrincipalKind.INDIVIDUAL:
            problems.append("ecosystem principal must be organisation or political")
    return problems


def world_problems(world: World) -> list[str]:
    """Cross-reference and accountability checks over a whole world."""
    problems = []
    for pid, p in sorted(world.principals.items()):
        kel = world.kels.get(pid)
        if kel is None or kel.prefix != pid:
            problems.append(f"principal {pid} has no matching log")
    for eco_id, eco in sorted(world.ecosystems.items()):
        problems += [f"ecosystem {eco_id}: {msg}" for msg in ecosystem_problems(world, eco)]
    for thing_id, thing in sorted(world.things.items()):
        c = thing.controller
        if c.kind == "principal" and c.ref not in world.principals:
            problems.append(f"thing {thing_id}: dangling principal controller")
        elif c.kind == "administration":
            eco = world.ecosystems.get(c.ref)
            if eco is None:
                problems.append(f"thing {thing_id}: dangling administration controller")
            elif not all(e in world.principals for e in eco.administration.entities):
                problems.append(f"thing {thing_id}: administration entities unresolved")
        elif c.kind not in ("principal", "administration"):
            problems.append(f"thing {thing_id}: unknown controller kind {c.kind}")
    return problems
