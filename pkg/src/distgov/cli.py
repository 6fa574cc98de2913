"""Command-line interface.

Exit codes: 0 success, 1 domain error, 2 usage error.  ``--json`` prints a
canonical JSON document on stdout; diagnostics always go to stderr.  Signing
commands keep secret keys in the directory named by ``DISTGOV_KEYDIR``.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import sys
from collections.abc import Sequence
from pathlib import Path

from .authenticity import Keyring, KeyEventLog, KeyState, WitnessReceipt, verify_kel
from .canonical import canonical_bytes, canonical_text, compute_said
from .comms import ConfidentialityLevel, Mode, open_connection, send_message
from .core import (
    Administration,
    AuthorityDocument,
    LegitimateAuthority,
    PrincipalKind,
    World,
    create_ecosystem,
    register_principal,
)
from .errors import BrokenChain, DistgovError, ValidationFailure
from .governance import (
    Amendment,
    Annotation,
    AnnotationKind,
    AssuranceLevel,
    Context,
    PartyStatus,
    PolicyBook,
    SignatoryRegistry,
    evaluate,
    publish_amendment,
    registry_anchored,
    resolve_jurisdictions,
    rules_from_json,
)
from .semantics import Overlay, Record, SemanticBundle, add_overlay, harmonize, validate_record

KEYDIR_ENV = "DISTGOV_KEYDIR"


class UsageError(Exception):
    """Bad invocation that argparse cannot detect on its own."""


# -- io helpers -----------------------------------------------------------------------


def _read_json(path: str):
    try:
        return json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise DistgovError(f"{path}: not valid JSON ({exc})") from None


def _write_json(path: str | Path, doc) -> None:
    Path(path).write_bytes(canonical_bytes(doc) + b"\n")


def _read_kel(path: str) -> KeyEventLog:
    return KeyEventLog.from_jsonl(Path(path).read_bytes())


def _read_world(path: str) -> World:
    return World.from_dict(_read_json(path))


def _write_world(path: str, world: World) -> None:
    Path(path).write_bytes(world.to_bytes() + b"\n")


def _keydir() -> Path:
    value = os.environ.get(KEYDIR_ENV)
    if not value:
        raise UsageError(f"{KEYDIR_ENV} must name the key directory for signing commands")
    return Path(value)


def _rng(args) -> random.Random | None:
    return None if args.seed is None else random.Random(args.seed)


def _emit(args, human: str, doc) -> None:
    if args.json:
        sys.stdout.write(canonical_text(doc) + "\n")
    else:
        sys.stdout.write(human + "\n")


def _state_dict(state: KeyState) -> dict:
    return {
        "prefix": state.prefix,
        "signing_keys": list(state.signing_keys),
        "next_commitment": state.next_commitment,
        "last_seq": state.last_seq,
        "last_digest": state.last_digest,
    }


# -- key ------------------------------------------------------------------------------


def cmd_key_incept(args) -> int:
    keydir = _keydir()
    ring = Keyring.load(keydir)
    kel = ring.incept(_rng(args))
    Path(args.out).write_bytes(kel.to_jsonl())
    ring.save(keydir)
    _emit(args, kel.prefix, {"prefix": kel.prefix, "event": kel.events[-1].to_dict()})
    return 0


def cmd_key_rotate(args) -> int:
    keydir = _keydir()
    ring = Keyring.load(keydir)
    kel = ring.rotate(_read_kel(args.kel), _rng(args))
    Path(args.kel).write_bytes(kel.to_jsonl())
    ring.save(keydir)
    ev = kel.events[-1]
    _emit(args, f"{kel.prefix} seq {ev.seq}", {"prefix": kel.prefix, "event": ev.to_dict()})
    return 0


def cmd_key_anchor(args) -> int:
    ring = Keyring.load(_keydir())
    kel = ring.anchor(_read_kel(args.kel), *args.digest)
    Path(args.kel).write_bytes(kel.to_jsonl())
    ev = kel.events[-1]
    _emit(args, ev.digest, {"prefix": kel.prefix, "event": ev.to_dict()})
    return 0


def cmd_key_verify(args) -> int:
    kel = _read_kel(args.kel)
    receipts = []
    if args.receipts:
        text = Path(args.receipts).read_text(encoding="utf-8")
        receipts = [WitnessReceipt.from_dict(json.loads(line)) for line in text.splitlines() if line]
    if args.threshold and not args.world:
        raise UsageError("--threshold needs --world to look up witness keys")
    witness_keys = _read_world(args.world).witness_keys() if args.world else None
    state = verify_kel(kel, receipts, args.threshold, witness_keys)
    _emit(args, f"valid {state.prefix} seq {state.last_seq}", _state_dict(state))
    return 0


# -- schema ---------------------------------------------------------------------------


def cmd_schema_said(args) -> int:
    doc = _read_json(args.file)
    if isinstance(doc, dict) and "capture_base" in doc:
        said = SemanticBundle.from_dict(doc).bundle_said
    elif isinstance(doc, dict):
        said = compute_said(doc)
    else:
        raise DistgovError(f"{args.file}: expected a JSON object")
    _emit(args, said, {"said": said})
    return 0


def cmd_schema_add_overlay(args) -> int:
    bundle = SemanticBundle.from_dict(_read_json(args.bundle))
    spec = _read_json(args.overlay)
    ov = Overlay.create(spec["kind"], bundle.base, spec["content"], spec.get("language"))
    bundle = add_overlay(bundle, ov)
    _write_json(args.out or args.bundle, bundle.to_dict())
    _emit(args, bundle.bundle_said, bundle.to_dict())
    return 0


def cmd_schema_validate(args) -> int:
    rec = Record.from_dict(_read_json(args.record))
    bundle = SemanticBundle.from_dict(_read_json(args.bundle))
    problems = validate_record(rec, bundle)
    if problems:
        raise ValidationFailure("record does not validate", problems)
    _emit(args, "valid", {"valid": True, "record": rec.said, "bundle": bundle.bundle_said})
    return 0


def cmd_schema_harmonize(args) -> int:
    rec = Record.from_dict(_read_json(args.record))
    source = SemanticBundle.from_dict(_read_json(args.source))
    target = SemanticBundle.from_dict(_read_json(args.target))
    mapping = Overlay.from_dict(_read_json(args.mapping))
    out = harmonize(rec, source, target, mapping)
    if args.out:
        _write_json(args.out, out.to_dict())
    _emit(args, out.said, out.to_dict())
    return 0


# -- world ----------------------------------------------------------------------------


def cmd_world_init(args) -> int:
    if Path(args.world).exists() and not args.force:
        raise DistgovError(f"{args.world} exists; pass --force to overwrite")
    world = World()
    _write_world(args.world, world)
    _emit(args, world.digest, world.to_dict())
    return 0


def cmd_world_add_principal(args) -> int:
    keydir = _keydir()
    ring = Keyring.load(keydir)
    world = _read_world(args.world)
    kel = ring.incept(_rng(args))
    world, p = register_principal(world, PrincipalKind(args.kind), kel.events[0])
    _write_world(args.world, world)
    ring.save(keydir)
    _emit(args, p.id, p.to_dict())
    return 0


def _document(spec: str) -> AuthorityDocument:
    title, sep, path = spec.partition("=")
    if not sep:
        raise UsageError(f"--document expects TITLE=PATH, got {spec!r}")
    return AuthorityDocument(title, Path(path).read_text(encoding="utf-8"))


def cmd_world_create_ecosystem(args) -> int:
    ring = Keyring.load(_keydir())
    world = _read_world(args.world)
    authority = LegitimateAuthority(frozenset(args.rep), frozenset(_document(d) for d in args.document))
    administration = Administration(frozenset(args.admin), args.admin_kel)
    world, eco = create_ecosystem(world, args.founder, authority, administration, ring)
    _write_world(args.world, world)
    _emit(args, eco.id, eco.to_dict())
    return 0


def cmd_world_connect(args) -> int:
    world = _read_world(args.world)
    world, conn = open_connection(world, args.a, args.b, ConfidentialityLevel(args.level))
    _write_world(args.world, world)
    _emit(args, conn.id, conn.to_dict())
    return 0


def cmd_world_send(args) -> int:
    world = _read_world(args.world)
    world, msg = send_message(
        world, args.connection, args.sender, ConfidentialityLevel(args.level), args.payload, Mode(args.mode)
    )
    _write_world(args.world, world)
    _emit(args, msg.id, msg.to_dict())
    return 0


# -- policy ---------------------------------------------------------------------------


def cmd_policy_eval(args) -> int:
    doc = _read_json(args.policy)
    if not isinstance(doc, list):
        raise DistgovError(f"{args.policy}: expected a JSON list of rules")
    rules = rules_from_json(doc)
    assurance = AssuranceLevel.parse(args.assurance)
    if args.world:
        if not (args.sender and args.receiver):
            raise UsageError("--world needs --sender and --receiver")
        world = _read_world(args.world)
        book = PolicyBook(tuple(rules))
        for path in args.registry:
            book = book.with_registry(SignatoryRegistry.from_dict(_read_json(path)))
        rules = resolve_jurisdictions(world, book, args.sender, args.receiver, args.purpose)
        sender_kind = world.principal(args.sender).kind
        receiver_kind = world.principal(args.receiver).kind
    else:
        if not (args.sender_kind and args.receiver_kind):
            raise UsageError("without --world, --sender-kind and --receiver-kind are required")
        sender_kind, receiver_kind = PrincipalKind(args.sender_kind), PrincipalKind(args.receiver_kind)
    ctx = Context(sender_kind, receiver_kind, ConfidentialityLevel(args.level), args.purpose,
                  args.sensitive, assurance)
    decision = evaluate(rules, ctx)
    human = decision.outcome.value + "".join(f"\n  {t.source}/{t.rule_id}: {t.effect}" for t in decision.trace)
    _emit(args, human, decision.to_dict())
    return 0


# -- registry -------------------------------------------------------------------------


def _annotations(args) -> frozenset[Annotation]:
    out = set()
    for kind, refs in (
        (AnnotationKind.RESERVATION, args.reservation),
        (AnnotationKind.DEROGATION, args.derogation),
        (AnnotationKind.DECLARATION, args.declaration),
    ):
        out |= {Annotation(kind, r) for r in refs}
    return frozenset(out)


def cmd_registry_amend(args) -> int:
    ring = Keyring.load(_keydir())
    registry = SignatoryRegistry.from_dict(_read_json(args.registry))
    world = _read_world(args.world)
    admin_kel = world.ecosystem(registry.treaty.administrator).administration.admin_kel
    amendment = Amendment(
        args.party,
        None if args.status is None else PartyStatus(args.status),
        _annotations(args),
        frozenset(),
        dict(d.split("=", 1) for d in args.date),
    )
    registry, kel = publish_amendment(registry, amendment, world.kel(admin_kel), ring)
    _write_json(args.registry, registry.to_dict())
    _write_world(args.world, world.with_kel(kel))
    note = registry.notification()
    _emit(args, f"{note['treaty_id']} v{note['version']} anchored in {note['anchor_event_digest']}", note)
    return 0


def cmd_registry_query(args) -> int:
    registry = SignatoryRegistry.from_dict(_read_json(args.registry))
    if args.world:
        world = _read_world(args.world)
        admin_kel = world.kel(world.ecosystem(registry.treaty.administrator).administration.admin_kel)
        if not registry_anchored(registry, admin_kel):
            raise DistgovError("registry amendments are not anchored in the administering log")
    entries = registry.entries
    if args.party:
        if args.party not in entries:
            raise DistgovError(f"{args.party} has no entry in {registry.treaty_id}")
        entries = {args.party: entries[args.party]}
    doc = {
        "treaty_id": registry.treaty_id,
        "version": registry.version,
        "entries": {k: v.to_dict() for k, v in sorted(entries.items())},
    }
    human = "\n".join(f"{k} {v.status.value}" for k, v in sorted(entries.items()))
    _emit(args, human, doc)
    return 0


# -- sim ------------------------------------------------------------------------------


def cmd_sim_run(args) -> int:
    from .simulator import export_fixtures, run_simulation

    options = {"reverse_order": True} if args.reverse_order else {}
    sim, transcript = run_simulation(args.scenario, args.seed, **options)
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_bytes(transcript.to_jsonl())
    if args.export:
        export_fixtures(sim, args.export)
    lines = [f"{'PASS' if r.passed else 'FAIL'} {r.name}" + ("" if r.passed else f" (line {r.line}: {r.detail})")
             for r in transcript.report.results]
    lines.append(f"transcript {transcript.digest}")
    _emit(args, "\n".join(lines), transcript.to_dict())
    if not transcript.report.passed:
        sys.stderr.write("scenario assertions failed\n")
        return 1
    return 0


# -- parser ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--json", action="store_true", default=argparse.SUPPRESS,
                        help="emit canonical JSON on stdout")

    parser = argparse.ArgumentParser(prog="distgov", description="Distributed governance toolkit")
    parser.add_argument("--json", action="store_true", help="emit canonical JSON on stdout")
    groups = parser.add_subparsers(dest="group", required=True)

    def leaf(sub, name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        return p

    key = groups.add_parser("key", help="key event logs").add_subparsers(dest="cmd", required=True)
    p = leaf(key, "incept", cmd_key_incept, "create a new key event log")
    p.add_argument("out", help="path of the new .kel.jsonl")
    p.add_argument("--seed", type=int, help="deterministic key generation")
    p = leaf(key, "rotate", cmd_key_rotate, "rotate to the pre-committed keys")
    p.add_argument("kel")
    p.add_argument("--seed", type=int)
    p = leaf(key, "anchor", cmd_key_anchor, "anchor digests in an interaction event")
    p.add_argument("kel")
    p.add_argument("digest", nargs="+")
    p = leaf(key, "verify", cmd_key_verify, "verify a key event log")
    p.add_argument("kel")
    p.add_argument("--receipts", help="witness receipts, one JSON object per line")
    p.add_argument("--threshold", type=int, default=0)
    p.add_argument("--world", help="world file supplying witness keys")

    schema = groups.add_parser("schema", help="capture bases, overlays, records").add_subparsers(
        dest="cmd", required=True)
    p = leaf(schema, "said", cmd_schema_said, "self-addressing identifier of a JSON object or bundle")
    p.add_argument("file")
    p = leaf(schema, "add-overlay", cmd_schema_add_overlay, "add an overlay to a bundle")
    p.add_argument("bundle")
    p.add_argument("overlay", help="JSON object with kind, content and optional language")
    p.add_argument("--out")
    p = leaf(schema, "validate", cmd_schema_validate, "validate a record against a bundle")
    p.add_argument("record")
    p.add_argument("bundle")
    p = leaf(schema, "harmonize", cmd_schema_harmonize, "re-express a record in another bundle")
    for name in ("record", "source", "target", "mapping"):
        p.add_argument(name)
    p.add_argument("--out")

    world = groups.add_parser("world", help="principals, ecosystems, messages").add_subparsers(
        dest="cmd", required=True)
    p = leaf(world, "init", cmd_world_init, "create an empty world file")
    p.add_argument("world")
    p.add_argument("--force", action="store_true")
    p = leaf(world, "add-principal", cmd_world_add_principal, "incept keys and register a principal")
    p.add_argument("world")
    p.add_argument("--kind", required=True, choices=[k.value for k in PrincipalKind])
    p.add_argument("--seed", type=int)
    p = leaf(world, "create-ecosystem", cmd_world_create_ecosystem, "create an ecosystem")
    p.add_argument("world")
    p.add_argument("--founder", action="append", required=True)
    p.add_argument("--admin", action="append", required=True)
    p.add_argument("--admin-kel", required=True)
    p.add_argument("--rep", action="append", default=[])
    p.add_argument("--document", action="append", default=[], help="TITLE=PATH")
    p = leaf(world, "connect", cmd_world_connect, "open a connection")
    p.add_argument("world")
    p.add_argument("a")
    p.add_argument("b")
    p.add_argument("--level", required=True, choices=[lv.value for lv in ConfidentialityLevel])
    p = leaf(world, "send", cmd_world_send, "send a message over a connection")
    p.add_argument("world")
    p.add_argument("connection")
    p.add_argument("--sender", required=True)
    p.add_argument("--level", required=True, choices=[lv.value for lv in ConfidentialityLevel])
    p.add_argument("--payload", required=True, help="payload digest")
    p.add_argument("--mode", default="active", choices=[m.value for m in Mode])

    policy = groups.add_parser("policy", help="policy evaluation").add_subparsers(dest="cmd", required=True)
    p = leaf(policy, "eval", cmd_policy_eval, "evaluate rules for an interaction")
    p.add_argument("policy")
    p.add_argument("--purpose", required=True)
    p.add_argument("--level", required=True, choices=[lv.value for lv in ConfidentialityLevel])
    p.add_argument("--sensitive", action="store_true")
    p.add_argument("--assurance", default="L0", choices=[a.name for a in AssuranceLevel])
    p.add_argument("--sender-kind", choices=[k.value for k in PrincipalKind])
    p.add_argument("--receiver-kind", choices=[k.value for k in PrincipalKind])
    p.add_argument("--world")
    p.add_argument("--sender")
    p.add_argument("--receiver")
    p.add_argument("--registry", action="append", default=[])

    registry = groups.add_parser("registry", help="treaty signatory registries").add_subparsers(
        dest="cmd", required=True)
    p = leaf(registry, "amend", cmd_registry_amend, "publish an anchored amendment")
    p.add_argument("registry")
    p.add_argument("--world", required=True)
    p.add_argument("--party", required=True)
    p.add_argument("--status", choices=[s.value for s in PartyStatus])
    p.add_argument("--reservation", action="append", default=[])
    p.add_argument("--derogation", action="append", default=[])
    p.add_argument("--declaration", action="append", default=[])
    p.add_argument("--date", action="append", default=[], help="EVENT=YYYY-MM-DD")
    p = leaf(registry, "query", cmd_registry_query, "show party entries")
    p.add_argument("registry")
    p.add_argument("--party")
    p.add_argument("--world", help="also check amendment anchors against this world")

    sim = groups.add_parser("sim", help="scenario simulator").add_subparsers(dest="cmd", required=True)
    p = leaf(sim, "run", cmd_sim_run, "run a scenario")
    p.add_argument("scenario")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", help="write the .transcript.jsonl here")
    p.add_argument("--export", help="write world, policy, registry and key fixtures to this directory")
    p.add_argument("--reverse-order", action="store_true", help="inject scripted events in reverse order")
    return parser


def _error_name(exc: Exception) -> str:
    name = type(exc).__name__
    if isinstance(exc, BrokenChain) and type(exc) is not BrokenChain:
        return f"BrokenChain ({name})"
    return name


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # argparse reports usage errors with code 2
        return int(exc.code or 0)
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        sys.stderr.write(f"distgov: error: {exc}\n")
        return 2
    except ValidationFailure as exc:
        sys.stderr.write(f"ValidationFailure: {exc}\n")
        for v in exc.violations:
            sys.stderr.write(f"  {v.kind} {v.attribute}: {v.detail}\n")
        return 1
    except DistgovError as exc:
        sys.stderr.write(f"{_error_name(exc)}: {exc}\n")
        return 1
    except (OSError, KeyError, ValueError) as exc:
        sys.stderr.write(f"{type(exc).__name__}: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
