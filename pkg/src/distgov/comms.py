"""Messages, connections and confidentiality spheres between principals.

The sender alone sets a message's confidentiality level, once, when the
message is created.  A connection has its own level, fixed by the initiator;
messages inside it may carry any level.  Spheres are never stored: they are
recomputed from the open connections of the world.
"""

from __future__ import annotations

import enum
from collections.abc import Mapping
from dataclasses import dataclass, replace

from .core import World
from .errors import (
    ConnectionTerminated,
    NotAParty,
    SelfConnection,
    SenderOnlyAttribute,
    UnknownConnection,
)


class ConfidentialityLevel(str, enum.Enum):
    INTIMATE = "intimate"
    PRIVATE = "private"
    PUBLIC = "public"

    @property
    def symbol(self) -> str:
        return {"intimate": "⊵", "private": "▷", "public": "≫"}[self.value]


LEVELS = tuple(ConfidentialityLevel)


class Mode(str, enum.Enum):
    ACTIVE = "active"
    PASSIVE = "passive"


class Status(str, enum.Enum):
    OPEN = "open"
    TERMINATED = "terminated"


@dataclass(frozen=True)
class Message:
    id: str
    sender: str
    receiver: str | None
    mode: Mode
    level: ConfidentialityLevel
    payload_digest: str
    logical_time: int
    connection: str | None = None
    context: str | None = None

    def __post_init__(self):
        if (self.mode is Mode.ACTIVE) != (self.receiver is not None):
            raise ValueError("active messages have a receiver, passive messages have none")

    def to_dict(self) -> dict:
        out = {
            "id": self.id,
            "sender": self.sender,
            "receiver": self.receiver,
            "mode": self.mode.value,
            "level": self.level.value,
            "payload_digest": self.payload_digest,
            "logical_time": self.logical_time,
            "connection": self.connection,
        }
        if self.context is not None:
            out["context"] = self.context
        return out

    @classmethod
    def from_dict(cls, data: Mapping) -> Message:
        return cls(
            id=data["id"],
            sender=data["sender"],
            receiver=data.get("receiver"),
            mode=Mode(data["mode"]),
            level=ConfidentialityLevel(data["level"]),
            payload_digest=data["payload_digest"],
            logical_time=data["logical_time"],
            connection=data.get("connection"),
            context=data.get("context"),
        )


@dataclass(frozen=True)
class Connection:
    id: str
    parties: frozenset[str]
    level: ConfidentialityLevel
    initiator: str
    messages: tuple[str, ...] = ()
    status: Status = Status.OPEN

    def other(self, pid: str) -> str:
        (peer,) = self.parties - {pid}
        return peer

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "parties": sorted(self.parties),
            "level": self.level.value,
            "initiator": self.initiator,
            "messages": list(self.messages),
            "status": self.status.value,
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> Connection:
        return cls(
            id=data["id"],
            parties=frozenset(data["parties"]),
            level=ConfidentialityLevel(data["level"]),
            initiator=data["initiator"],
            messages=tuple(data.get("messages", ())),
            status=Status(data.get("status", "open")),
        )


@dataclass(frozen=True)
class ConfidentialitySphere:
    owner: str
    level: ConfidentialityLevel
    counterparts: frozenset[str]
    connections: frozenset[str]


def _connection(world: World, conn_id: str) -> Connection:
    try:
        return world.connections[conn_id]
    except KeyError:
        raise UnknownConnection(f"unknown connection {conn_id}") from None


def open_connection(
    world: World, a: str, b: str, level: ConfidentialityLevel
) -> tuple[World, Connection]:
    """Open (or return the existing open) connection between two principals at ``level``."""
    if a == b:
        raise SelfConnection("a connection needs two distinct principals")
    world.principal(a)
    world.principal(b)
    level = ConfidentialityLevel(level)
    parties = frozenset({a, b})
    for conn in world.connections.values():
        if conn.parties == parties and conn.level is level and conn.status is Status.OPEN:
            return world, conn
    world, conn_id = world.mint_id(f"conn:{min(a, b)}:{max(a, b)}:{level.value}")
    conn = Connection(conn_id, parties, level, initiator=a)
    return world._put("connections", conn_id, conn), conn


def terminate_connection(world: World, conn_id: str, by: str) -> World:
    conn = _connection(world, conn_id)
    if by not in conn.parties:
        raise NotAParty(f"{by} is not a party to {conn_id}")
    return world._put("connections", conn_id, replace(conn, status=Status.TERMINATED))


def _next_time(world: World, sender: str) -> tuple[World, int]:
    t = world.sender_clocks.get(sender, 0) + 1
    return world._put("sender_clocks", sender, t), t


def send_message(
    world: World,
    conn_id: str,
    sender: str,
    level: ConfidentialityLevel,
    payload_digest: str,
    mode: Mode = Mode.ACTIVE,
) -> tuple[World, Message]:
    conn = _connection(world, conn_id)
    if sender not in conn.parties:
        raise NotAParty(f"{sender} is not a party to {conn_id}")
    if conn.status is Status.TERMINATED:
        raise ConnectionTerminated(f"connection {conn_id} is terminated")
    mode = Mode(mode)
    world, t = _next_time(world, sender)
    world, msg_id = world.mint_id(f"msg:{sender}:{t}")
    msg = Message(
        id=msg_id,
        sender=sender,
        receiver=conn.other(sender) if mode is Mode.ACTIVE else None,
        mode=mode,
        level=ConfidentialityLevel(level),
        payload_digest=payload_digest,
        logical_time=t,
        connection=conn_id,
    )
    world = world._put("messages", msg_id, msg)
    world = world._put("connections", conn_id, replace(conn, messages=conn.messages + (msg_id,)))
    return world, msg


def emit_passive(
    world: World, sender: str, context: str, level: ConfidentialityLevel, payload_digest: str
) -> tuple[World, Message]:
    """Emission controlled by the ecosystem context rather than addressed to a receiver."""
    world.principal(sender)
    world.ecosystem(context)
    world, t = _next_time(world, sender)
    world, msg_id = world.mint_id(f"msg:{sender}:{t}")
    msg = Message(
        id=msg_id,
        sender=sender,
        receiver=None,
        mode=Mode.PASSIVE,
        level=ConfidentialityLevel(level),
        payload_digest=payload_digest,
        logical_time=t,
        context=context,
    )
    return world._put("messages", msg_id, msg), msg


def delivery_set(world: World, msg: Message) -> frozenset[str]:
    """Principals that may receive a message."""
    if msg.mode is Mode.ACTIVE:
        return frozenset({msg.receiver})
    if msg.context is None:
        conn = _connection(world, msg.connection)
        return conn.parties - {msg.sender}
    members = world.ecosystem(msg.context).population - {msg.sender}
    if msg.level is ConfidentialityLevel.PUBLIC:
        return members
    return members & compute_sphere(world, msg.sender, msg.level).counterparts


def compute_sphere(world: World, owner: str, level: ConfidentialityLevel) -> ConfidentialitySphere:
    world.principal(owner)
    level = ConfidentialityLevel(level)
    counterparts, conns = set(), set()
    for conn in world.connections.values():
        if owner in conn.parties and conn.level is level and conn.status is Status.OPEN:
            counterparts.add(conn.other(owner))
            conns.add(conn.id)
    return ConfidentialitySphere(owner, level, frozenset(counterparts), frozenset(conns))


def attempt_receiver_relevel(msg: Message, actor: str, new_level: ConfidentialityLevel) -> None:
    """Confidentiality is set by the sender at creation; nobody may change it afterwards."""
    who = "receiver" if actor == msg.receiver else "sender" if actor == msg.sender else actor
    raise SenderOnlyAttribute(
        f"{who} cannot change level of message {msg.id} from {msg.level.value} "
        f"to {ConfidentialityLevel(new_level).value}"
    )
