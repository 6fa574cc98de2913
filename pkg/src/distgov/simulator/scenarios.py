"""Scripted scenarios: cross-border travel, birth registration, data flows."""

from __future__ import annotations

import os
from collections.abc import Callable, Iterable
from pathlib import Path

from ..authenticity import CausalGraph, KeyEvent, KeyEventLog, Order, happened_before
from ..canonical import canonical_bytes
from ..comms import ConfidentialityLevel, open_connection, send_message
from ..core import PrincipalKind, World
from ..errors import CausalityViolation, UnknownScenario
from ..governance import (
    ALLOW,
    DENY,
    Amendment,
    Annotation,
    AnnotationKind,
    AssuranceLevel,
    Context,
    Match,
    PartyEntry,
    PartyStatus,
    PolicyRule,
    SignatoryRegistry,
    Treaty,
    achieved_assurance,
    evaluate,
    publish_amendment,
    require,
    resolve_jurisdictions,
    rules_to_json,
)
from ..semantics import (
    CaptureBase,
    OverlayKind,
    Overlay,
    Record,
    SemanticBundle,
    effective_flags,
    harmonize,
    issue_credential,
    verify_credential,
)
from .engine import Compare, Expect, Simulation, Transcript, attach_report

IND = PrincipalKind.INDIVIDUAL
ORG = PrincipalKind.ORGANISATION
POL = PrincipalKind.POLITICAL

PRIVATE = ConfidentialityLevel.PRIVATE
INTIMATE = ConfidentialityLevel.INTIMATE


# -- shared steps ---------------------------------------------------------------------


def _message(sim: Simulation, sender: str, receiver: str, level: ConfidentialityLevel, payload: str):
    sim.world, conn = open_connection(sim.world, sim.id(sender), sim.id(receiver), level)
    sim.world, msg = send_message(sim.world, conn.id, sim.id(sender), level, payload)
    return msg


def _decide(sim: Simulation, sender: str, receiver: str, purpose: str, level, sensitive: bool) -> dict:
    world = sim.world
    s, r = sim.id(sender), sim.id(receiver)
    rules = resolve_jurisdictions(world, sim.book, s, r, purpose)
    ctx = Context(
        world.principal(s).kind,
        world.principal(r).kind,
        level,
        purpose,
        sensitive,
        achieved_assurance(world, s, sim.receipts),
    )
    decision = evaluate(rules, ctx)
    return {
        "assurance": ctx.assurance.name,
        "decision": decision.to_dict(),
        "candidates": [f"{x.source}/{x.id}" for x in rules],
    }


def _witness_all(sim: Simulation, actor: str, subject: str) -> dict:
    events = sim.kel(subject).events
    for e in events:
        sim.receipts.append(sim.keyring.receipt(sim.id(actor), e))
    return {
        "receipted": len(events),
        "assurance": achieved_assurance(sim.world, sim.id(subject), sim.receipts).name,
    }


def check_issuance(kels: Iterable[KeyEventLog], candidate: KeyEvent, attestation_said: str) -> str:
    """Return the attestation event digest if it causally precedes ``candidate``.

    Raises :class:`CausalityViolation` when no event attests the record, or
    when no attesting event happened before the candidate issuance.
    """
    kels = list(kels)
    attesting = [e.digest for k in kels for e in k.anchoring_events(attestation_said)]
    if not attesting:
        raise CausalityViolation(f"no event attests record {attestation_said}")
    logs = [k.append(candidate) if k.prefix == candidate.prefix else k for k in kels]
    graph = CausalGraph.from_logs(logs)
    for a in attesting:
        if happened_before(graph, a, candidate.digest) is Order.BEFORE:
            return a
    raise CausalityViolation("issuance does not follow the attestation")


def _issue_after_attestation(sim: Simulation, issuer: str, subject: str, attestation: Record, cert: Record) -> dict:
    kel = sim.kel(issuer)
    attesting = [e.digest for k in sim.world.kels.values() for e in k.anchoring_events(attestation.said)]
    candidate = sim.keyring.anchor(kel, cert.said, *attesting).events[-1]
    a = check_issuance(sim.world.kels.values(), candidate, attestation.said)
    sim.world = sim.world.with_kel(kel.append(candidate))
    return {
        "issued": True,
        "certificate": cert.said,
        "attestation_event": a,
        "issuance_event": candidate.digest,
        "subject": subject,
    }


def _state_ecosystems(world: World) -> int:
    political = {p.id for p in world.principals.values() if p.kind is POL}
    return sum(1 for e in world.ecosystems.values() if e.authority.representatives & political)


# -- passport ------------------------------------------------------------------------


def passport(sim: Simulation, **_opts) -> list:
    for alias, kind in [
        ("citizen", IND), ("alpha_gov", POL), ("alpha_office", ORG), ("beta_gov", POL),
        ("beta_border", ORG), ("icao", ORG), ("witness", ORG),
    ]:
        sim.principal(alias, kind)
    sim.ecosystem("E_alpha", ["citizen", "alpha_gov", "alpha_office"], ["alpha_office"], "alpha_office",
                  reps=["alpha_gov"], documents={"Constitution of Alpha": "Alpha is a state."})
    sim.ecosystem("E_beta", ["beta_gov", "beta_border"], ["beta_border"], "beta_border",
                  reps=["beta_gov"], documents={"Constitution of Beta": "Beta is a state."})
    sim.ecosystem("E_gamma", ["icao"], ["icao"], "icao",
                  documents={"Convention on Civil Aviation": "Contracting states cooperate on travel documents."})
    sim.ecosystem_principal("E_alpha", "alpha_state", POL)
    sim.ecosystem_principal("E_beta", "beta_state", POL)
    sim.join("E_gamma", "alpha_state")
    sim.join("E_gamma", "beta_state")

    base = CaptureBase.create(
        {"name": "text", "nationality": "text", "birth_date": "date", "passport_no": "text",
         "travel_history": "text"},
        flagged=["travel_history"],
    )
    conformance = Overlay.create(OverlayKind.CONFORMANCE, base, {
        "name": "required", "nationality": "required", "birth_date": "required", "passport_no": "required",
        "travel_history": "optional"})
    bundle = SemanticBundle.create(base, [conformance])
    sim.log(0, "icao", "publish_schema", {"schema": "passport"}, {"bundle_said": bundle.bundle_said})

    alpha, beta, gamma = sim.id("E_alpha"), sim.id("E_beta"), sim.id("E_gamma")
    sim.book = sim.book.with_rules(
        PolicyRule("alpha.protect", alpha, Match(sender_kind=IND, purpose="citizen_protection"), ALLOW),
        PolicyRule("beta.history", beta, Match(purpose="border_control", sensitive=True), DENY),
    )
    treaty = Treaty(
        "icao.travel-documents", gamma, frozenset({alpha, beta}), frozenset({"border_control"}),
        (PolicyRule("passport.check", gamma, Match(sender_kind=IND, receiver_kind=ORG, purpose="border_control"),
                    require(AssuranceLevel.L2)),),
    )
    sim.book = sim.book.with_registry(SignatoryRegistry.create(treaty, {
        alpha: PartyEntry(PartyStatus.IN_FORCE), beta: PartyEntry(PartyStatus.RATIFIED)}))
    sim.log(0, "icao", "register_treaty", {"treaty": treaty.id},
            {"parties": {"E_alpha": "in_force", "E_beta": "ratified"}})

    def issue_passport(actor, subject):
        rec = Record.create(bundle, {
            "name": "Ada Alpha", "nationality": "ALPHA", "birth_date": "1990-04-01",
            "passport_no": "A1234567", "travel_history": "GAMMA 2024; DELTA 2025"})
        claims = {k: v for k, v in rec.values.items() if k not in base.flagged}
        cred, kel = issue_credential(sim.kel(actor), sim.keyring, rec, sim.id(subject), claims)
        sim.world = sim.world.with_kel(kel)
        sim.state.update(record=rec, credential=cred)
        msg = _message(sim, actor, subject, INTIMATE, cred.digest)
        return {"record": rec.said, "credential": cred.digest, "anchor_event": cred.anchor_event,
                "message": msg.id, "level": msg.level.value}

    def accept(actor):
        d = sim.anchor(actor, sim.state["credential"].digest)
        return {"anchor_event": d}

    def present(actor, verifier, purpose):
        cred, rec = sim.state["credential"], sim.state["record"]
        verify_credential(cred, sim.world.kel(cred.issuer), rec)
        disclosed = set(cred.claims)
        sensitive = bool(disclosed & effective_flags(rec, bundle))
        msg = _message(sim, actor, verifier, PRIVATE, rec.said)
        out = _decide(sim, actor, verifier, purpose, PRIVATE, sensitive)
        return {"payload_digest": msg.payload_digest, "message": msg.id, **out}

    def amend(actor, party, status):
        reg = sim.book.registries[treaty.id]
        reg, kel = publish_amendment(reg, Amendment(sim.id(party), PartyStatus(status)),
                                     sim.kel(actor), sim.keyring)
        sim.world = sim.world.with_kel(kel)
        sim.book = sim.book.with_registry(reg)
        return {"notification": reg.notification()}

    sim.on("issue_passport", issue_passport)
    sim.on("accept_credential", accept)
    sim.on("witness", lambda actor, subject: _witness_all(sim, actor, subject))
    sim.on("present", present)
    sim.on("publish_amendment", amend)

    sim.schedule(1, "alpha_office", "issue_passport", subject="citizen")
    sim.schedule(2, "citizen", "accept_credential")
    sim.schedule(3, "witness", "witness", subject="citizen")
    sim.schedule(4, "citizen", "present", label="beta_before", verifier="beta_border", purpose="border_control")
    sim.schedule(5, "icao", "publish_amendment", label="amendment", party="E_beta", status="in_force")
    sim.schedule(6, "citizen", "present", label="beta_after", verifier="beta_border", purpose="border_control")
    sim.schedule(6, "citizen", "present", label="alpha_view", verifier="alpha_office",
                 purpose="citizen_protection")

    return [
        Expect("beta denies before ratification takes effect", {
            "decision.outcome": "deny", "decision.trace.0.rule_id": "default-deny"}, label="beta_before"),
        Expect("amendment is version 1", {"notification.version": 1}, label="amendment"),
        Expect("beta allows at L2 after entry into force", {
            "decision.outcome": "allow", "decision.required_assurance": "L2", "assurance": "L2"},
            label="beta_after"),
        Expect("alpha allows under its own purpose", {"decision.outcome": "allow"}, label="alpha_view"),
        Compare("same record presented on both sides", "beta_after", "alpha_view", "payload_digest"),
        Compare("the two sides decide through different rules", "beta_after", "alpha_view",
                "decision.trace", same=False),
    ]


# -- birth attestation ---------------------------------------------------------------


def _birth_schemas():
    attestation = SemanticBundle.create(CaptureBase.create(
        {"child_name": "text", "birth_date": "date", "birth_time": "text", "mother": "text"},
        flagged=["mother"],
    ))
    certificate = SemanticBundle.create(CaptureBase.create(
        {"child_name": "text", "birth_date": "date", "registration_no": "text", "attestation": "digest-reference"},
    ))
    return attestation, certificate


def birth_attestation(sim: Simulation, reverse_order: bool = False, **_opts) -> list:
    for alias, kind in [("mother", IND), ("clinic", ORG), ("registrar", ORG), ("state_gov", POL)]:
        sim.principal(alias, kind)
    sim.ecosystem("E_state", ["mother", "clinic", "registrar", "state_gov"], ["registrar"], "registrar",
                  reps=["state_gov"], documents={"Civil Registration Act": "Births are registered."})
    att_bundle, cert_bundle = _birth_schemas()
    attestation = Record.create(att_bundle, {"child_name": "Bo", "birth_date": "2026-03-14",
                                             "birth_time": "04:10", "mother": sim.id("mother")})
    certificate = Record.create(cert_bundle, {"child_name": "Bo", "birth_date": "2026-03-14",
                                              "registration_no": "R-0001", "attestation": attestation.said})
    sim.log(0, "clinic", "prepare_records", {}, {"attestation": attestation.said, "certificate": certificate.said})

    def attest(actor):
        d = sim.anchor(actor, attestation.said)
        msg = _message(sim, actor, "mother", INTIMATE, attestation.said)
        return {"attestation_event": d, "message": msg.id}

    def issue(actor, subject):
        return _issue_after_attestation(sim, actor, sim.id(subject), attestation, certificate)

    sim.on("attest_birth", attest)
    sim.on("issue_certificate", issue)
    attest_tick, issue_tick = (3, 1) if reverse_order else (1, 3)
    sim.schedule(attest_tick, "clinic", "attest_birth", label="attestation")
    sim.schedule(issue_tick, "registrar", "issue_certificate", label="issuance", subject="mother")
    return [
        Expect("attestation recorded", {}, label="attestation"),
        Expect("certificate issued after attestation", {"issued": True}, label="issuance"),
    ]


def birth_attestation_humanitarian(sim: Simulation, **_opts) -> list:
    sim.principal("mother", IND, note="inception keys stand in for biometric binding")
    sim.principal("clinic", ORG)
    sim.ecosystem("E_relief", ["clinic"], ["clinic"], "clinic",
                  documents={"Humanitarian Charter": "Relief is given on need alone."})
    sim.lift("E_mother", "mother")
    att_bundle, cert_bundle = _birth_schemas()
    attestation = Record.create(att_bundle, {"child_name": "Cy", "birth_date": "2026-05-02",
                                             "birth_time": "22:45", "mother": sim.id("mother")})
    certificate = Record.create(cert_bundle, {"child_name": "Cy", "birth_date": "2026-05-02",
                                              "registration_no": "SELF-0001", "attestation": attestation.said})
    sim.log(0, "clinic", "prepare_records", {}, {"attestation": attestation.said, "certificate": certificate.said})

    def attest(actor):
        d = sim.anchor(actor, attestation.said)
        msg = _message(sim, actor, "mother", INTIMATE, attestation.said)
        return {"attestation_event": d, "message": msg.id}

    def issue(actor):
        out = _issue_after_attestation(sim, actor, sim.id(actor), attestation, certificate)
        out["root_of_trust"] = sim.id("E_mother")
        out["state_ecosystems"] = _state_ecosystems(sim.world)
        return out

    sim.on("attest_birth", attest)
    sim.on("issue_certificate", issue)
    sim.schedule(1, "clinic", "attest_birth", label="attestation")
    sim.schedule(2, "mother", "issue_certificate", label="issuance")
    return [
        Expect("certificate issued by the mother's own log", {"issued": True}, label="issuance"),
        Expect("no state ecosystem involved", {"state_ecosystems": 0}, label="issuance"),
    ]


# -- multi-jurisdiction --------------------------------------------------------------


def multi_jurisdiction(sim: Simulation, **_opts) -> list:
    for alias, kind in [
        ("gov_a", POL), ("gov_b", POL), ("board", ORG), ("hq", ORG), ("sub_a", ORG), ("sub_b", ORG), ("coe", ORG),
    ]:
        sim.principal(alias, kind)
    sim.ecosystem("E_A", ["gov_a", "hq", "sub_a"], ["gov_a"], "gov_a", reps=["gov_a"],
                  documents={"Constitution of A": "A is a state."})
    sim.ecosystem("E_B", ["gov_b", "sub_b"], ["gov_b"], "gov_b", reps=["gov_b"],
                  documents={"Constitution of B": "B is a state."})
    sim.ecosystem("E_corp", ["board", "hq"], ["hq"], "hq", reps=["board"],
                  documents={"Articles of Association": "The group is run by its board."})
    sim.ecosystem("E_corp_A", ["hq", "sub_a"], ["sub_a"], "sub_a", reps=["board"])
    sim.ecosystem("E_corp_B", ["hq", "sub_b"], ["sub_b"], "sub_b", reps=["board"])
    sim.ecosystem("E_coe", ["coe"], ["coe"], "coe",
                  documents={"Convention 108+": "Personal data is processed fairly."})

    a, b, corp, coe = sim.id("E_A"), sim.id("E_B"), sim.id("E_corp"), sim.id("E_coe")
    sim.book = sim.book.with_rules(
        PolicyRule("A.analytics", a, Match(purpose="analytics"), ALLOW),
        PolicyRule("B.health-export", b, Match(sender_kind=ORG, purpose="analytics", sensitive=True), DENY),
        PolicyRule("corp.group-sharing", corp, Match(sender_kind=ORG, receiver_kind=ORG, purpose="analytics"), ALLOW),
    )
    treaty = Treaty(
        "coe.c108", coe, frozenset({a, b}), frozenset({"analytics"}),
        (PolicyRule("c108.flow", coe, Match(sender_kind=ORG, receiver_kind=ORG, purpose="analytics",
                                            sensitive=True), ALLOW),),
    )
    sim.book = sim.book.with_registry(SignatoryRegistry.create(treaty, {
        a: PartyEntry(PartyStatus.IN_FORCE),
        b: PartyEntry(PartyStatus.IN_FORCE, frozenset({Annotation(AnnotationKind.DEROGATION, "c108.flow")})),
    }))
    sim.log(0, "coe", "register_treaty", {"treaty": treaty.id},
            {"parties": {"E_A": "in_force", "E_B": "in_force"}, "derogations": {"E_B": ["c108.flow"]}})

    corp_bundle = SemanticBundle.create(CaptureBase.create(
        {"patient_count": "integer", "region": "text", "diagnosis_stats": "text"}, flagged=["diagnosis_stats"]))
    local = {
        "sub_a": SemanticBundle.create(CaptureBase.create(
            {"patients": "integer", "area": "text", "dx": "text"}, flagged=["dx"])),
        "sub_b": SemanticBundle.create(CaptureBase.create(
            {"n_patients": "integer", "region_name": "text", "diagnoses": "text"}, flagged=["diagnoses"])),
    }
    mappings = {
        "sub_a": Overlay.create(OverlayKind.MAPPING, corp_bundle.base,
                                {"patient_count": "patients", "region": "area", "diagnosis_stats": "dx"}),
        "sub_b": Overlay.create(OverlayKind.MAPPING, corp_bundle.base,
                                {"patient_count": "n_patients", "region": "region_name",
                                 "diagnosis_stats": "diagnoses"}),
    }
    raw = {
        "sub_a": {"patients": 1200, "area": "north", "dx": "J45:310;E11:95"},
        "sub_b": {"n_patients": 1200, "region_name": "north", "diagnoses": "J45:310;E11:95"},
    }

    def share(actor, receiver, purpose):
        src = local[actor]
        rec = Record.create(src, raw[actor])
        out = harmonize(rec, src, corp_bundle, mappings[actor])
        sensitive = bool(set(out.values) & effective_flags(out, corp_bundle))
        msg = _message(sim, actor, receiver, PRIVATE, out.said)
        decision = _decide(sim, actor, receiver, purpose, PRIVATE, sensitive)
        return {"local_record": rec.said, "payload_digest": msg.payload_digest, "sensitive": sensitive,
                "message": msg.id, **decision}

    sim.on("share", share)
    sim.schedule(1, "sub_a", "share", label="country_a", receiver="hq", purpose="analytics")
    sim.schedule(2, "sub_b", "share", label="country_b", receiver="hq", purpose="analytics")
    return [
        Expect("flow from country A allowed", {"decision.outcome": "allow"}, label="country_a"),
        Expect("flow from country B denied", {"decision.outcome": "deny"}, label="country_b"),
        Compare("identical harmonized payload", "country_a", "country_b", "payload_digest"),
    ]


SCENARIOS: dict[str, Callable[..., list]] = {
    "passport": passport,
    "birth_attestation": birth_attestation,
    "birth_attestation_humanitarian": birth_attestation_humanitarian,
    "multi_jurisdiction": multi_jurisdiction,
}


def build(name: str, seed: int, **options) -> tuple[Simulation, list]:
    try:
        script = SCENARIOS[name]
    except KeyError:
        raise UnknownScenario(f"unknown scenario {name!r}; known: {', '.join(sorted(SCENARIOS))}") from None
    sim = Simulation(name, seed)
    assertions = script(sim, **options)
    return sim, assertions


def run_simulation(name: str, seed: int, **options) -> tuple[Simulation, Transcript]:
    sim, assertions = build(name, seed, **options)
    return sim, attach_report(sim.run(), assertions)


def run_scenario(name: str, seed: int, **options) -> Transcript:
    return run_simulation(name, seed, **options)[1]


def export_fixtures(sim: Simulation, directory: str | os.PathLike) -> list[Path]:
    """Write the final world, local policy, registries and keys of a finished run."""
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    stem = sim.scenario
    written = [out / f"{stem}.world.json", out / f"{stem}.policy.json"]
    written[0].write_bytes(sim.world.to_bytes() + b"\n")
    written[1].write_bytes(canonical_bytes(rules_to_json(sim.book.local_rules)) + b"\n")
    for treaty_id, reg in sorted(sim.book.registries.items()):
        suffix = "" if len(sim.book.registries) == 1 else f".{treaty_id}"
        path = out / f"{stem}{suffix}.registry.json"
        path.write_bytes(canonical_bytes(reg.to_dict()) + b"\n")
        written.append(path)
    sim.keyring.save(out / f"{stem}.keys")
    return written
