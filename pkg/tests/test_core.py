from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from distgov.authenticity import KeyEvent, Keyring
from distgov.canonical import canonical_bytes
from distgov.core import (
    Administration,
    AuthorityDocument,
    Controller,
    LegitimateAuthority,
    PrincipalKind,
    World,
    create_ecosystem,
    ecosystem_problems,
    join_population,
    leave_population,
    lift_to_ecosystem,
    mint_ecosystem_principal,
    reassign_controller,
    register_principal,
    register_thing,
    replay_acts,
    world_problems,
)
from distgov.errors import (
    DuplicateId,
    EmptyFounders,
    InvalidAuthority,
    InvalidInception,
    LastMember,
    MalformedEvent,
    NotAMember,
    UnknownController,
    UnknownPrincipal,
)

from _support import add_principals, simple_ecosystem


@pytest.fixture
def ring():
    return Keyring()


def test_register_first_principal(ring):
    kel = ring.incept(random.Random(1))
    world, p = register_principal(World(), PrincipalKind.INDIVIDUAL, kel.events[0])
    assert list(world.principals) == [p.id]
    assert p.id == kel.prefix == p.kel_ref


def test_duplicate_inception_rejected(ring):
    kel = ring.incept(random.Random(1))
    world, _ = register_principal(World(), PrincipalKind.INDIVIDUAL, kel.events[0])
    with pytest.raises(DuplicateId):
        register_principal(world, PrincipalKind.ORGANISATION, kel.events[0])


def test_every_flipped_inception_byte_is_refused(ring):
    inception = ring.incept(random.Random(2)).events[0]
    raw = bytearray(inception.to_bytes())
    refused = 0
    for i in range(len(raw)):
        raw[i] ^= 0x01
        try:
            candidate = KeyEvent.from_dict(json.loads(bytes(raw)))
            if candidate.to_bytes() != bytes(raw):
                raise MalformedEvent("not canonical")
            register_principal(World(), PrincipalKind.POLITICAL, candidate)
        except (MalformedEvent, InvalidInception, UnicodeDecodeError, json.JSONDecodeError):
            refused += 1
        raw[i] ^= 0x01
    assert refused == len(raw)


def test_flipped_signature_is_invalid_inception(ring):
    inception = ring.incept(random.Random(3)).events[0]
    sig = inception.signatures[0]
    bad = sig[:10] + ("0" if sig[10] != "0" else "1") + sig[11:]
    data = {**inception.to_dict(), "signatures": [bad]}
    with pytest.raises(InvalidInception):
        register_principal(World(), PrincipalKind.POLITICAL, KeyEvent.from_dict(data))


# -- ecosystems ---------------------------------------------------------------------


def test_lift_is_the_principal_itself(ring):
    world, (a,) = add_principals(World(), ring, random.Random(4), ["individual"])
    world, eco = lift_to_ecosystem(world, a)
    assert eco.population == eco.authority.representatives == eco.administration.entities == {a}
    assert eco.administration.admin_kel == a
    assert eco.size == 1
    assert ecosystem_problems(world, eco) == []


def test_two_lifts_are_disjoint(ring):
    world, (a, b) = add_principals(World(), ring, random.Random(5), ["individual", "individual"])
    world, ea = lift_to_ecosystem(world, a)
    world, eb = lift_to_ecosystem(world, b)
    assert ea.id != eb.id
    assert not ea.population & eb.population


def test_lift_unknown_principal():
    with pytest.raises(UnknownPrincipal):
        lift_to_ecosystem(World(), "f" * 64)


def test_create_ecosystem_and_anchor(ring):
    world, (a, b) = add_principals(World(), ring, random.Random(6), ["political", "individual"])
    world, eco = simple_ecosystem(world, ring, [a, b], a)
    assert eco.population == {a, b}
    assert ecosystem_problems(world, eco) == []
    acts = replay_acts(world, a)
    assert acts[-1]["act"] == "create_ecosystem" and acts[-1]["ecosystem"]["id"] == eco.id


def test_empty_founders(ring):
    world, (a,) = add_principals(World(), ring, random.Random(7), ["political"])
    with pytest.raises(EmptyFounders):
        simple_ecosystem(world, ring, [], a)


def test_authority_must_resolve(ring):
    world, (a,) = add_principals(World(), ring, random.Random(8), ["political"])
    with pytest.raises(InvalidAuthority):
        create_ecosystem(world, [a], LegitimateAuthority(), Administration(frozenset([a]), a), ring)
    with pytest.raises(InvalidAuthority):
        create_ecosystem(world, [a], LegitimateAuthority(frozenset(["e" * 64])),
                         Administration(frozenset([a]), a), ring)


def test_documents_alone_can_legitimate(ring):
    world, (a,) = add_principals(World(), ring, random.Random(9), ["organisation"])
    doc = AuthorityDocument("Charter", "We exist.")
    world, eco = create_ecosystem(world, [a], LegitimateAuthority(documents=frozenset([doc])),
                                  Administration(frozenset([a]), a), ring)
    assert ecosystem_problems(world, eco) == []


def test_ecosystem_of_ecosystems(ring):
    rng = random.Random(10)
    world, (a, b) = add_principals(World(), ring, rng, ["political", "political"])
    world, ea = simple_ecosystem(world, ring, [a], a)
    world, eb = simple_ecosystem(world, ring, [b], b)
    world, ea = mint_ecosystem_principal(world, ea.id, PrincipalKind.POLITICAL, ring.incept(rng).events[0], ring)
    world, eb = mint_ecosystem_principal(world, eb.id, PrincipalKind.POLITICAL, ring.incept(rng).events[0], ring)
    world, ec = simple_ecosystem(world, ring, [ea.as_principal, eb.as_principal], ea.as_principal)
    assert ec.population == {ea.as_principal, eb.as_principal}
    assert world_problems(world) == []


def test_individual_cannot_stand_for_ecosystem(ring):
    rng = random.Random(11)
    world, (a,) = add_principals(World(), ring, rng, ["political"])
    world, ea = simple_ecosystem(world, ring, [a], a)
    with pytest.raises(InvalidAuthority):
        mint_ecosystem_principal(world, ea.id, PrincipalKind.INDIVIDUAL, ring.incept(rng).events[0], ring)


# -- population ---------------------------------------------------------------------


def test_join_leave_round_trip(ring):
    world, (a, b) = add_principals(World(), ring, random.Random(12), ["political", "individual"])
    world, eco = simple_ecosystem(world, ring, [a], a)
    world, joined = join_population(world, eco.id, b, ring)
    world, left = leave_population(world, eco.id, b, ring)
    assert left.population == eco.population


def test_join_is_idempotent(ring):
    world, (a,) = add_principals(World(), ring, random.Random(13), ["political"])
    world, eco = simple_ecosystem(world, ring, [a], a)
    world2, again = join_population(world, eco.id, a, ring)
    assert again == eco and world2 == world


def test_last_member_cannot_leave(ring):
    world, (a,) = add_principals(World(), ring, random.Random(14), ["political"])
    world, eco = simple_ecosystem(world, ring, [a], a)
    with pytest.raises(LastMember):
        leave_population(world, eco.id, a, ring)


def test_leave_non_member(ring):
    world, (a, b) = add_principals(World(), ring, random.Random(15), ["political", "individual"])
    world, eco = simple_ecosystem(world, ring, [a], a)
    with pytest.raises(NotAMember):
        leave_population(world, eco.id, b, ring)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.tuples(st.booleans(), st.integers(0, 3)), max_size=12))
def test_population_never_empties(ops):
    ring = Keyring()
    world, ids = add_principals(World(), ring, random.Random(16), ["political"] + ["individual"] * 3)
    world, eco = simple_ecosystem(world, ring, [ids[0]], ids[0])
    expected = {ids[0]}
    for join, i in ops:
        pid = ids[i]
        try:
            if join:
                world, eco = join_population(world, eco.id, pid, ring)
                expected.add(pid)
            else:
                world, eco = leave_population(world, eco.id, pid, ring)
                expected.discard(pid)
        except (LastMember, NotAMember):
            pass
        assert eco.population == expected and eco.size >= 1
    assert ecosystem_problems(world, eco) == []


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**32), st.integers(0, 4))
def test_registration_is_once_only(seed, noise):
    rng = random.Random(seed)
    ring = Keyring()
    kel = ring.incept(rng)
    world, _ = register_principal(World(), PrincipalKind.INDIVIDUAL, kel.events[0])
    world, _ = add_principals(world, ring, rng, ["organisation"] * noise)
    with pytest.raises(DuplicateId):
        register_principal(world, PrincipalKind.INDIVIDUAL, kel.events[0])


# -- things -------------------------------------------------------------------------


def test_register_thing(ring):
    world, (a,) = add_principals(World(), ring, random.Random(17), ["individual"])
    world, thing = register_thing(world, a)
    assert thing.controller == Controller.principal(a)


def test_unknown_controller():
    with pytest.raises(UnknownController):
        register_thing(World(), "d" * 64)


def test_reassign_history_replays_from_anchors(ring):
    world, (a, g) = add_principals(World(), ring, random.Random(18), ["individual", "political"])
    world, eco = simple_ecosystem(world, ring, [a, g], g)
    world, thing = register_thing(world, a)
    world, thing = reassign_controller(world, thing.id, Controller.administration(eco.id), ring)
    world, thing = reassign_controller(world, thing.id, Controller.principal(a), ring)
    assert thing.controller == Controller.principal(a)

    # rebuild the controller history by chaining the anchored from/to records
    moves = [
        act for prefix in sorted(world.kels) for act in replay_acts(world, prefix)
        if act["act"] == "reassign_controller" and act["thing"] == thing.id
    ]
    history = [Controller.principal(a)]
    while moves:
        (step,) = [m for m in moves if Controller.from_dict(m["from"]) == history[-1]]
        moves.remove(step)
        history.append(Controller.from_dict(step["to"]))
    assert history == [Controller.principal(a), Controller.administration(eco.id), Controller.principal(a)]
    assert history[-1] == world.things[thing.id].controller
    assert world_problems(world) == []


def test_world_round_trip(ring):
    rng = random.Random(19)
    world, ids = add_principals(World(), ring, rng, ["individual", "political"])
    world, eco = simple_ecosystem(world, ring, ids, ids[1])
    world, _ = register_thing(world, Controller.administration(eco.id))
    back = World.from_dict(json.loads(world.to_bytes()))
    assert back.to_bytes() == world.to_bytes() == canonical_bytes(back.to_dict())
