from __future__ import annotations

import json
import subprocess
import sys
from pathlib import Path

import pytest

from distgov.authenticity import KeyEvent, KeyEventLog, KeyState, verify_kel
from distgov.canonical import canonical_text, sha256_hex
from distgov.cli import main
from distgov.comms import Connection, Message
from distgov.core import Ecosystem, Principal, World
from distgov.governance import Amendment, Decision, PartyEntry, SignatoryRegistry
from distgov.semantics import CaptureBase, Overlay, Record, SemanticBundle
from distgov.simulator import Transcript

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture
def keydir(tmp_path, monkeypatch):
    path = tmp_path / "keys"
    monkeypatch.setenv("DISTGOV_KEYDIR", str(path))
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def run_json(capsys, *argv):
    code, out, err = run(capsys, "--json", *argv)
    assert code == 0, err
    doc = json.loads(out)
    assert out == canonical_text(doc) + "\n"
    return doc


# -- usage ------------------------------------------------------------------------------------


def test_no_arguments_is_usage_error(capsys):
    assert run(capsys)[0] == 2


def test_bad_choice_names_flag(capsys, tmp_path):
    code, _, err = run(capsys, "world", "connect", tmp_path / "w.json", "a", "b", "--level", "secret")
    assert code == 2 and "--level" in err


def test_missing_required_flag(capsys):
    code, _, err = run(capsys, "sim", "run", "passport")
    assert code == 2 and "--seed" in err


def test_signing_without_keydir(capsys, tmp_path, monkeypatch):
    monkeypatch.delenv("DISTGOV_KEYDIR", raising=False)
    code, _, err = run(capsys, "key", "incept", tmp_path / "a.kel.jsonl")
    assert code == 2 and "DISTGOV_KEYDIR" in err


def test_policy_eval_needs_kinds(capsys, tmp_path):
    (tmp_path / "p.policy.json").write_text("[]")
    code, _, err = run(capsys, "policy", "eval", tmp_path / "p.policy.json", "--purpose", "x", "--level", "public")
    assert code == 2 and "--sender-kind" in err


# -- key ----------------------------------------------------------------------------------------


def test_key_lifecycle(capsys, keydir, tmp_path):
    kel_path = tmp_path / "a.kel.jsonl"
    doc = run_json(capsys, "key", "incept", kel_path, "--seed", 1)
    assert KeyEvent.from_dict(doc["event"]).prefix == doc["prefix"]
    rotated = run_json(capsys, "key", "rotate", kel_path, "--seed", 2)
    assert KeyEvent.from_dict(rotated["event"]).seq == 1
    anchored = run_json(capsys, "key", "anchor", kel_path, sha256_hex(b"doc"))
    assert KeyEvent.from_dict(anchored["event"]).anchors == (sha256_hex(b"doc"),)
    state = run_json(capsys, "key", "verify", kel_path)
    kel = KeyEventLog.from_jsonl(kel_path.read_bytes())
    assert KeyState(**{**state, "signing_keys": tuple(state["signing_keys"])}) == verify_kel(kel)


def test_incept_is_byte_stable(capsys, keydir, tmp_path):
    run(capsys, "key", "incept", tmp_path / "a.kel.jsonl", "--seed", 9)
    run(capsys, "key", "incept", tmp_path / "b.kel.jsonl", "--seed", 9)
    assert (tmp_path / "a.kel.jsonl").read_bytes() == (tmp_path / "b.kel.jsonl").read_bytes()


def test_broken_log_names_error_and_position(capsys, keydir, tmp_path):
    kel_path = tmp_path / "broken.kel.jsonl"
    run(capsys, "key", "incept", kel_path, "--seed", 3)
    for n in range(3):
        run(capsys, "key", "anchor", kel_path, sha256_hex(bytes([n])))
    lines = kel_path.read_bytes().splitlines(keepends=True)
    kel_path.write_bytes(b"".join(lines[:2] + lines[3:]))  # drop seq 2
    code, out, err = run(capsys, "key", "verify", kel_path)
    assert code == 1 and out == ""
    assert "BrokenChain" in err and "seq 2" in err


def test_flipped_byte_fails_verify(capsys, keydir, tmp_path):
    kel_path = tmp_path / "a.kel.jsonl"
    run(capsys, "key", "incept", kel_path, "--seed", 4)
    raw = bytearray(kel_path.read_bytes())
    raw[40] ^= 0x01
    kel_path.write_bytes(bytes(raw))
    assert run(capsys, "key", "verify", kel_path)[0] == 1


# -- schema -------------------------------------------------------------------------------------


@pytest.fixture
def schema_files(tmp_path):
    base = CaptureBase.create({"name": "text", "dob": "date"})
    bundle = SemanticBundle.create(base, [Overlay.create("conformance", base, {"name": "required", "dob": "optional"})])
    (tmp_path / "base.json").write_text(json.dumps(base.to_dict()))
    (tmp_path / "bundle.json").write_text(json.dumps(bundle.to_dict()))
    (tmp_path / "fr.json").write_text(json.dumps({"kind": "label", "content": {"name": "Nom"}, "language": "fr"}))
    (tmp_path / "good.json").write_text(json.dumps(Record.create(bundle, {"name": "Ann"}).to_dict()))
    (tmp_path / "bad.json").write_text(json.dumps(Record.create(bundle, {"dob": "2000-01-01"}).to_dict()))
    return tmp_path, base, bundle


def test_schema_said_twice(capsys, schema_files):
    path, base, bundle = schema_files
    first = run(capsys, "schema", "said", path / "base.json")
    assert first == run(capsys, "schema", "said", path / "base.json")
    assert first[1].strip() == base.said
    assert run(capsys, "schema", "said", path / "bundle.json")[1].strip() == bundle.bundle_said


def test_schema_add_overlay(capsys, schema_files):
    path, base, bundle = schema_files
    doc = run_json(capsys, "schema", "add-overlay", path / "bundle.json", path / "fr.json", "--out", path / "b2.json")
    after = SemanticBundle.from_dict(doc)
    assert after.base.said == base.said and after.bundle_said != bundle.bundle_said
    assert SemanticBundle.from_dict(json.loads((path / "b2.json").read_text())) == after


def test_schema_validate(capsys, schema_files):
    path, _, _ = schema_files
    assert run_json(capsys, "schema", "validate", path / "good.json", path / "bundle.json")["valid"] is True
    code, _, err = run(capsys, "schema", "validate", path / "bad.json", path / "bundle.json")
    assert code == 1 and "RequiredMissing name" in err


def test_schema_harmonize(capsys, schema_files):
    path, _, bundle = schema_files
    target = SemanticBundle.create(CaptureBase.create({"full_name": "text"}))
    mapping = Overlay.create("mapping", target.base, {"full_name": "name"})
    (path / "target.json").write_text(json.dumps(target.to_dict()))
    (path / "map.json").write_text(json.dumps(mapping.to_dict()))
    doc = run_json(capsys, "schema", "harmonize", path / "good.json", path / "bundle.json", path / "target.json",
                   path / "map.json")
    assert Record.from_dict(doc).values == {"full_name": "Ann"}


# -- world --------------------------------------------------------------------------------------


def test_world_flow(capsys, keydir, tmp_path):
    w = tmp_path / "w.json"
    assert World.from_dict(run_json(capsys, "world", "init", w)) == World()
    assert run(capsys, "world", "init", w)[0] == 1
    ids = []
    for seed, kind in enumerate(["political", "individual"]):
        p = Principal.from_dict(run_json(capsys, "world", "add-principal", w, "--kind", kind, "--seed", seed))
        ids.append(p.id)
    gov, person = ids
    (tmp_path / "charter.txt").write_text("We govern.")
    eco = Ecosystem.from_dict(run_json(
        capsys, "world", "create-ecosystem", w, "--founder", gov, "--founder", person, "--admin", gov,
        "--admin-kel", gov, "--rep", gov, "--document", f"Charter={tmp_path / 'charter.txt'}"))
    assert eco.population == {gov, person}
    conn = Connection.from_dict(run_json(capsys, "world", "connect", w, gov, person, "--level", "private"))
    msg = Message.from_dict(run_json(capsys, "world", "send", w, conn.id, "--sender", person, "--level",
                                     "intimate", "--payload", sha256_hex(b"hi")))
    world = World.from_dict(json.loads(w.read_text()))
    assert world.messages[msg.id] == msg and world.ecosystems[eco.id] == eco


# -- policy and registry on exported fixtures -------------------------------------------------------


def test_policy_eval_by_kinds(capsys, tmp_path):
    rules = [{"id": "r", "scope": "S", "match": {"purpose": "x"}, "effect": {"type": "allow"}}]
    (tmp_path / "p.policy.json").write_text(json.dumps(rules))
    common = ["policy", "eval", tmp_path / "p.policy.json", "--level", "public",
              "--sender-kind", "individual", "--receiver-kind", "organisation"]
    assert Decision.from_dict(run_json(capsys, *common, "--purpose", "x")).outcome.value == "allow"
    denied = Decision.from_dict(run_json(capsys, *common, "--purpose", "y"))
    assert denied.trace[0].rule_id == "default-deny"
    (tmp_path / "p.policy.json").write_text(json.dumps({"rules": rules}))
    assert run(capsys, *common, "--purpose", "x")[0] == 1


def test_registry_amendment_flips_passport_decision(capsys, tmp_path, monkeypatch):
    fx = tmp_path / "fx"
    code, _, _ = run(capsys, "sim", "run", "passport", "--seed", 42, "--export", fx,
                     "--out", tmp_path / "t.jsonl")
    assert code == 0
    monkeypatch.setenv("DISTGOV_KEYDIR", str(fx / "passport.keys"))
    t = Transcript.from_jsonl((tmp_path / "t.jsonl").read_bytes())
    ids = {e.args["alias"]: e.outcome["id"] for e in t.entries if "alias" in e.args and "id" in e.outcome}
    world, reg = fx / "passport.world.json", fx / "passport.registry.json"

    # the exported world already holds the in-force amendment; start over from the genesis entries
    registry = SignatoryRegistry.from_dict(json.loads(reg.read_text()))
    genesis = SignatoryRegistry.create(registry.treaty, registry.genesis)
    reg.write_text(json.dumps(genesis.to_dict()))

    ask = ["policy", "eval", fx / "passport.policy.json", "--world", world, "--registry", reg,
           "--sender", ids["citizen"], "--receiver", ids["beta_border"], "--purpose", "border_control",
           "--level", "private", "--assurance", "L2"]
    assert run_json(capsys, *ask)["outcome"] == "deny"
    note = run_json(capsys, "registry", "amend", reg, "--world", world, "--party", ids["E_beta"],
                    "--status", "in_force", "--date", "in_force=2026-01-01")
    assert note["version"] == 1 and Amendment.from_dict(note["change"]).party == ids["E_beta"]
    after = run_json(capsys, *ask)
    assert (after["outcome"], after["required_assurance"]) == ("allow", "L2")

    query = run_json(capsys, "registry", "query", reg, "--party", ids["E_beta"], "--world", world)
    assert PartyEntry.from_dict(query["entries"][ids["E_beta"]]).status.value == "in_force"
    assert run(capsys, "registry", "amend", reg, "--world", world, "--party", "nobody", "--status", "signed")[0] == 1


# -- sim ----------------------------------------------------------------------------------------------


def test_sim_run_json_round_trips(capsys, tmp_path):
    doc = run_json(capsys, "sim", "run", "passport", "--seed", 42, "--out", tmp_path / "p.jsonl")
    t = Transcript.from_dict(doc)
    assert t.to_jsonl() == (GOLDEN / "passport-42.transcript.jsonl").read_bytes()
    assert (tmp_path / "p.jsonl").read_bytes() == t.to_jsonl()


def test_sim_run_human_output(capsys):
    code, out, _ = run(capsys, "sim", "run", "multi_jurisdiction", "--seed", 1)
    assert code == 0 and out.count("PASS") == 3 and "transcript " in out


def test_failed_assertions_exit_one(capsys):
    code, out, err = run(capsys, "sim", "run", "birth_attestation", "--seed", 1, "--reverse-order")
    assert code == 1 and "FAIL certificate issued after attestation" in out and "failed" in err


def test_unknown_scenario_exit_one(capsys):
    code, _, err = run(capsys, "sim", "run", "nowhere", "--seed", 1)
    assert code == 1 and "UnknownScenario" in err


def test_installed_module_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "distgov.cli", "--json", "sim", "run", "passport", "--seed", "42"],
        capture_output=True, check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert Transcript.from_dict(json.loads(proc.stdout)).to_jsonl() == (
        GOLDEN / "passport-42.transcript.jsonl"
    ).read_bytes()
