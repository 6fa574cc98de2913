"""Acceptance suite: ten end-to-end criteria, each reported as one PASS/FAIL line."""

from __future__ import annotations

import itertools
import json
import random
import time
from dataclasses import replace
from pathlib import Path

import pytest

from distgov.authenticity import (
    CausalGraph,
    KeyEventLog,
    KeyPair,
    Keyring,
    Order,
    happened_before,
    incept,
    rotate,
    verify_kel,
)
from distgov.canonical import compute_said, embed_said, sha256_hex, verify_said
from distgov.comms import LEVELS, Status, compute_sphere, open_connection, terminate_connection
from distgov.core import PrincipalKind, World, ecosystem_problems, lift_to_ecosystem
from distgov.errors import KelError, PreRotationViolation
from distgov.governance import (
    ALLOW,
    DENY,
    Amendment,
    Annotation,
    AnnotationKind,
    AssuranceLevel,
    Context,
    Match,
    Outcome,
    PartyEntry,
    PartyStatus,
    PolicyRule,
    SignatoryRegistry,
    Treaty,
    apply_amendment,
    evaluate,
    publish_amendment,
    registry_anchored,
    require,
)
from distgov.semantics import AttrType, CaptureBase
from distgov.simulator import run_scenario, run_simulation

from _support import add_principals, random_kel, simple_ecosystem

GOLDEN = Path(__file__).parent / "golden"
RESULTS: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture(scope="module", autouse=True)
def summary(request):
    yield
    reporter = request.config.pluginmanager.getplugin("terminalreporter")
    lines = ["", "acceptance criteria:"]
    for n in range(1, 11):
        name, ok, detail = RESULTS.get(n, (f"criterion {n}", False, "not run"))
        lines.append(f"  [{n:2d}] {'PASS' if ok else 'FAIL'}  {name}: {detail}")
    text = "\n".join(lines)
    if reporter is not None:
        reporter.write_line(text)
    else:
        print(text)


def record(n: int, name: str, ok: bool, detail: str) -> None:
    RESULTS[n] = (name, ok, detail)
    print(f"[{n}] {'PASS' if ok else 'FAIL'} {name}: {detail}")
    assert ok, detail


# -- 1 ------------------------------------------------------------------------------------------


def test_01_tamper_evidence():
    rng = random.Random(1001)
    start = time.perf_counter()
    caught = total = 0
    for _ in range(20):
        kel, _ = random_kel(rng, rng.randint(3, 5))
        verify_kel(kel)
        raw = bytearray(kel.to_jsonl())
        for i in range(len(raw)):
            raw[i] ^= 0x01
            total += 1
            try:
                verify_kel(KeyEventLog.from_jsonl(bytes(raw)))
            except KelError:
                caught += 1
            raw[i] ^= 0x01
    elapsed = time.perf_counter() - start
    record(1, "tamper evidence", caught == total and elapsed < 10,
           f"{caught}/{total} single-byte flips rejected in {elapsed:.2f}s (limit 10s)")


# -- 2 ------------------------------------------------------------------------------------------


def test_02_pre_rotation_enforcement():
    rng = random.Random(1002)
    rejected = accepted = 0
    for _ in range(100):
        current, committed, rogue = (KeyPair.generate(rng) for _ in range(3))
        kel = KeyEventLog.from_inception(incept([current], [committed])[1])
        nxt = [KeyPair.generate(rng)]
        try:
            rotate(kel, [rogue], nxt)
        except PreRotationViolation:
            # the verifier must refuse a hand-built rotation too
            forged = replace(rotate(kel, [committed], nxt), signing_keys=(rogue.public,), signatures=())
            forged = replace(forged, signatures=(rogue.sign(forged.signing_bytes()),))
            try:
                kel.append(forged)
            except PreRotationViolation:
                rejected += 1
        try:
            verify_kel(kel.append(rotate(kel, [committed], nxt)))
            accepted += 1
        except KelError:
            pass
    record(2, "pre-rotation enforcement", rejected == 100 and accepted == 100,
           f"{rejected}/100 uncommitted rotations rejected, {accepted}/100 committed accepted")


# -- 3 ------------------------------------------------------------------------------------------


def test_03_said_determinism():
    rng = random.Random(1003)
    types = [t.value for t in AttrType]
    stable = idempotent = 0
    for s in range(100):
        names = [f"a{s}_{i}" for i in range(rng.randint(1, 8))]
        attrs = [(n, rng.choice(types)) for n in names]
        flagged = [n for n in names if rng.random() < 0.3]
        saids = set()
        for _ in range(10):
            rng.shuffle(attrs)
            rng.shuffle(flagged)
            saids.add(CaptureBase.create(dict(attrs), list(flagged)).said)
        stable += len(saids) == 1
        base = CaptureBase.create(dict(attrs), flagged)
        doc = base.to_dict()
        idempotent += (
            verify_said(doc)
            and compute_said(doc) == base.said
            and embed_said(doc) == doc
            and CaptureBase.from_dict(doc) == base
        )
    record(3, "SAID determinism", stable == 100 and idempotent == 100,
           f"{stable}/100 schemas stable over 10 orderings, {idempotent}/100 idempotent")


# -- 4 ------------------------------------------------------------------------------------------


def _naive_sphere(world, owner, level):
    counterparts, conns = set(), set()
    for conn in world.connections.values():
        if conn.status is Status.OPEN and conn.level is level and owner in conn.parties:
            (other,) = conn.parties - {owner}
            counterparts.add(other)
            conns.add(conn.id)
    return counterparts, conns


def test_04_sphere_equivalence():
    rng = random.Random(1004)
    ring = Keyring()
    pool_world, pool = add_principals(World(), ring, rng, ["individual"] * 5)
    start = time.perf_counter()
    mismatches = checks = 0
    for _ in range(1000):
        people = rng.sample(pool, rng.randint(2, 5))
        world = pool_world
        for _ in range(rng.randint(0, 8)):
            a, b = rng.sample(people, 2)
            world, conn = open_connection(world, a, b, rng.choice(LEVELS))
            if rng.random() < 0.3:
                world = terminate_connection(world, conn.id, rng.choice([a, b]))
        for owner, level in itertools.product(people, LEVELS):
            sphere = compute_sphere(world, owner, level)
            checks += 1
            mismatches += (sphere.counterparts, sphere.connections) != _naive_sphere(world, owner, level)
    elapsed = time.perf_counter() - start
    record(4, "sphere equals brute force", mismatches == 0 and elapsed < 5,
           f"{checks} (owner, level) checks over 1000 worlds, {mismatches} mismatches, {elapsed:.2f}s (limit 5s)")


# -- 5 ------------------------------------------------------------------------------------------


def test_05_autonomous_lift():
    rng = random.Random(1005)
    ring = Keyring()
    world, ids = add_principals(World(), ring, rng, [rng.choice(list(PrincipalKind)).value for _ in range(100)])
    good = 0
    for pid in ids:
        world, eco = lift_to_ecosystem(world, pid)
        good += (
            ecosystem_problems(world, eco) == []
            and eco.population == eco.authority.representatives == eco.administration.entities == {pid}
            and eco.administration.admin_kel == pid
        )
    record(5, "lift of a principal is the principal itself", good == 100, f"{good}/100 lifts satisfy every invariant")


# -- 6 ------------------------------------------------------------------------------------------


def _random_rule(rng, rid):
    def maybe(values):
        return None if rng.random() < 0.5 else rng.choice(values)

    match = Match(maybe(list(PrincipalKind)), maybe(list(PrincipalKind)), maybe(LEVELS), maybe(["p", "q"]),
                  maybe([True, False]))
    effect = rng.choice([ALLOW, DENY, require("L1"), require("L2"), require("L3")])
    return PolicyRule(rid, "S", match, effect)


def test_06_policy_properties():
    rng = random.Random(1006)
    violations = 0
    for case in range(1000):
        rules = [_random_rule(rng, f"r{i}") for i in range(rng.randint(0, 6))]
        ctx = Context(rng.choice(list(PrincipalKind)), rng.choice(list(PrincipalKind)), rng.choice(LEVELS),
                      rng.choice(["p", "q"]), rng.random() < 0.5, rng.choice(list(AssuranceLevel)))
        first = evaluate(rules, ctx)
        shuffled = rules[:]
        rng.shuffle(shuffled)
        violations += first != evaluate(rules, ctx) or first.to_dict() != evaluate(shuffled, ctx).to_dict()
        violations += evaluate([], ctx).outcome is not Outcome.DENY
        extra = replace(_random_rule(rng, f"deny{case}"), effect=DENY)
        if first.outcome is Outcome.DENY:
            violations += evaluate(rules + [extra], ctx).outcome is not Outcome.DENY
    record(6, "policy determinism, default deny, monotone denial", violations == 0,
           f"1000 random cases, {violations} violations")


# -- 7 ------------------------------------------------------------------------------------------


def _random_amendment(rng, parties, rule_ids, entries):
    party = rng.choice(parties)
    current = entries.get(party, PartyEntry(PartyStatus.SIGNED)).annotations
    status = rng.choice([None, *PartyStatus])
    add = frozenset(
        Annotation(rng.choice([AnnotationKind.RESERVATION, AnnotationKind.DEROGATION]), rng.choice(rule_ids))
        for _ in range(rng.randint(0, 2))
    ) | (frozenset([Annotation(AnnotationKind.DECLARATION, sha256_hex(rng.randbytes(4)))])
         if rng.random() < 0.2 else frozenset())
    remove = frozenset(a for a in current if rng.random() < 0.3)
    if status is None and not add and not remove:
        status = PartyStatus.RATIFIED
    return Amendment(party, status, add, remove, {"notified": f"2026-{rng.randint(1, 12):02d}-01"})


def test_07_registry_replay():
    rng = random.Random(1007)
    ring = Keyring()
    world, (g1, g2, g3, admin) = add_principals(World(), ring, rng, ["political"] * 4)
    ecos = []
    for g in (g1, g2, g3):
        world, eco = simple_ecosystem(world, ring, [g], g)
        ecos.append(eco.id)
    world, treaty_eco = simple_ecosystem(world, ring, [admin], admin)
    rules = tuple(PolicyRule(f"T{i}", treaty_eco.id, Match(purpose="p"), ALLOW) for i in range(3))
    treaty = Treaty("T", treaty_eco.id, frozenset(ecos), frozenset(["p"]), rules)
    good = 0
    for _ in range(50):
        genesis = {e: PartyEntry(PartyStatus.SIGNED) for e in ecos if rng.random() < 0.7}
        reg = SignatoryRegistry.create(treaty, genesis)
        kel = world.kel(admin)
        incremental = dict(genesis)
        for _ in range(rng.randint(0, 10)):
            amendment = _random_amendment(rng, ecos, [r.id for r in rules], reg.entries)
            reg, kel = publish_amendment(reg, amendment, kel, ring)
            incremental = apply_amendment(treaty, incremental, amendment)
        findable = all(kel.find(r.anchor_event_digest) is not None and kel.anchoring_events(r.digest)
                       for r in reg.amendment_log)
        good += (
            reg.replay() == incremental == dict(reg.entries)
            and reg.version == len(reg.amendment_log)
            and registry_anchored(reg, kel)
            and findable
            and verify_kel(kel).last_seq == len(kel.events) - 1
        )
    record(7, "registry replay and anchoring", good == 50, f"{good}/50 amendment sequences consistent and anchored")


# -- 8 ------------------------------------------------------------------------------------------


def test_08_passport_golden():
    t = run_scenario("passport", 42)
    golden = (GOLDEN / "passport-42.transcript.jsonl").read_bytes()
    before, after, alpha = (t.find(x).outcome["decision"] for x in ("beta_before", "beta_after", "alpha_view"))
    ok = (
        t.to_jsonl() == golden
        and t.report.passed
        and before["outcome"] == "deny"
        and (after["outcome"], after["required_assurance"]) == ("allow", "L2")
        and after["trace"] != alpha["trace"]
    )
    record(8, "passport scenario", ok,
           f"deny before, {after['outcome']} at {after['required_assurance']} after; "
           f"golden byte match {t.to_jsonl() == golden}")


# -- 9 ------------------------------------------------------------------------------------------


def test_09_birth_attestation():
    polarity = 0
    for seed in range(10):
        sim, t = run_simulation("birth_attestation", seed)
        out = t.find("issuance").outcome
        g = CausalGraph.from_logs(sim.world.kels.values())
        forward = t.report.passed and happened_before(g, out["attestation_event"], out["issuance_event"]) is Order.BEFORE
        _, rt = run_simulation("birth_attestation", seed, reverse_order=True)
        backward = not rt.report.passed and rt.find("issuance").outcome.get("error") == "CausalityViolation"
        polarity += forward and backward
    hsim, ht = run_simulation("birth_attestation_humanitarian", 42)
    stateless = (
        ht.report.passed
        and ht.find("issuance").outcome["state_ecosystems"] == 0
        and not any(p.kind is PrincipalKind.POLITICAL for p in hsim.world.principals.values())
    )
    record(9, "birth attestation causality", polarity == 10 and stateless,
           f"{polarity}/10 seeds pass both polarities; humanitarian variant without a state: {stateless}")


# -- 10 -----------------------------------------------------------------------------------------


def test_10_multi_jurisdiction():
    frozen = json.loads((GOLDEN / "multi_jurisdiction.digests.json").read_text())
    split = reproducible = 0
    for seed in range(10):
        t = run_scenario("multi_jurisdiction", seed)
        a, b = t.find("country_a").outcome, t.find("country_b").outcome
        split += (
            a["payload_digest"] == b["payload_digest"]
            and (a["decision"]["outcome"], b["decision"]["outcome"]) == ("allow", "deny")
        )
        reproducible += t.digest == run_scenario("multi_jurisdiction", seed).digest == frozen[str(seed)]
    record(10, "multi-jurisdiction split decision", split == 10 and reproducible == 10,
           f"{split}/10 seeds allow in A and deny in B on one payload; {reproducible}/10 match frozen goldens")
