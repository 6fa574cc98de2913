"""Content-addressed capture bases, overlays, records and harmonization.

A capture base fixes attribute names and types, plus the attributes flagged
sensitive at capture time.  Overlays decorate a base for one task (labels,
formats, conformance, mappings) without touching its identifier.  Every
object carries a self-addressing ``said`` computed over its canonical bytes.
"""

from __future__ import annotations

import datetime as _dt
import enum
import re
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field

from .authenticity import KeyEventLog, Keyring
from .canonical import compute_said, digest_of, is_digest
from .errors import (
    BaseMismatch,
    BundleMismatch,
    InvalidCredential,
    InvalidSchema,
    KelError,
    UnknownAttribute,
    UnmappedAttribute,
    ValidationFailure,
)


class AttrType(str, enum.Enum):
    TEXT = "text"
    INTEGER = "integer"
    DECIMAL = "decimal"
    BOOLEAN = "boolean"
    DATE = "date"
    DIGEST = "digest-reference"


class OverlayKind(str, enum.Enum):
    MEANING = "meaning"
    LABEL = "label"
    FORMAT = "format"
    ENCODING = "encoding"
    CONFORMANCE = "conformance"
    MAPPING = "mapping"


_DECIMAL = re.compile(r"-?\d+(\.\d+)?")
_DATE = re.compile(r"\d{4}-\d{2}-\d{2}")


def _is_int(value) -> bool:
    return isinstance(value, int) and not isinstance(value, bool)


def _date_ok(value) -> bool:
    if not isinstance(value, str) or not _DATE.fullmatch(value):
        return False
    try:
        _dt.date.fromisoformat(value)
    except ValueError:
        return False
    return True


_TYPE_CHECKS = {
    AttrType.TEXT: lambda v: isinstance(v, str),
    AttrType.INTEGER: _is_int,
    AttrType.DECIMAL: lambda v: _is_int(v) or (isinstance(v, str) and bool(_DECIMAL.fullmatch(v))),
    AttrType.BOOLEAN: lambda v: isinstance(v, bool),
    AttrType.DATE: _date_ok,
    AttrType.DIGEST: is_digest,
}


def conforms(attr_type: AttrType, value) -> bool:
    return _TYPE_CHECKS[AttrType(attr_type)](value)


@dataclass(frozen=True)
class CaptureBase:
    attributes: Mapping[str, AttrType]
    flagged: frozenset[str]
    said: str

    @classmethod
    def create(cls, attributes: Mapping[str, AttrType | str], flagged: Iterable[str] = ()) -> CaptureBase:
        attrs = {name: AttrType(t) for name, t in attributes.items()}
        flagged = frozenset(flagged)
        if not flagged <= attrs.keys():
            raise InvalidSchema(f"flagged attributes not in base: {sorted(flagged - attrs.keys())}")
        body = cls._body(attrs, flagged)
        return cls(attrs, flagged, compute_said(body))

    @staticmethod
    def _body(attrs: Mapping[str, AttrType], flagged: frozenset[str]) -> dict:
        return {
            "type": "capture_base",
            "attributes": {k: v.value for k, v in attrs.items()},
            "flagged": sorted(flagged),
        }

    def to_dict(self) -> dict:
        return {**self._body(self.attributes, self.flagged), "said": self.said}

    @classmethod
    def from_dict(cls, data: Mapping) -> CaptureBase:
        base = cls.create(data.get("attributes", {}), data.get("flagged", ()))
        if "said" in data and data["said"] != base.said:
            raise InvalidSchema("capture base said does not match its content")
        return base


@dataclass(frozen=True, eq=False)
class Overlay:
    kind: OverlayKind
    base_said: str
    content: Mapping[str, object]
    said: str
    language: str | None = None

    @classmethod
    def create(
        cls,
        kind: OverlayKind | str,
        base: CaptureBase | str,
        content: Mapping[str, object],
        language: str | None = None,
    ) -> Overlay:
        kind = OverlayKind(kind)
        base_said = base if isinstance(base, str) else base.said
        if not isinstance(base, str):
            unknown = set(content) - base.attributes.keys()
            if unknown:
                raise UnknownAttribute(f"overlay names attributes missing from base: {sorted(unknown)}")
        if kind is OverlayKind.CONFORMANCE and not all(v in ("required", "optional") for v in content.values()):
            raise InvalidSchema("conformance values must be 'required' or 'optional'")
        if kind is OverlayKind.MAPPING and not all(isinstance(v, str) for v in content.values()):
            raise InvalidSchema("mapping values must name source attributes")
        body = cls._body(kind, base_said, dict(content), language)
        return cls(kind, base_said, dict(content), compute_said(body), language)

    @staticmethod
    def _body(kind, base_said, content, language) -> dict:
        body = {"type": "overlay", "kind": kind.value, "base_said": base_said, "content": content}
        if language is not None:
            body["language"] = language
        return body

    def to_dict(self) -> dict:
        return {**self._body(self.kind, self.base_said, dict(self.content), self.language), "said": self.said}

    @classmethod
    def from_dict(cls, data: Mapping) -> Overlay:
        ov = cls.create(data["kind"], data["base_said"], data.get("content", {}), data.get("language"))
        if "said" in data and data["said"] != ov.said:
            raise InvalidSchema("overlay said does not match its content")
        return ov

    def __eq__(self, other):
        return isinstance(other, Overlay) and other.said == self.said

    def __hash__(self):
        return hash(self.said)


def _bundle_said(base: CaptureBase, overlays: Iterable[Overlay]) -> str:
    return digest_of(sorted([base.said, *(o.said for o in overlays)]))


@dataclass(frozen=True)
class SemanticBundle:
    base: CaptureBase
    overlays: frozenset[Overlay] = frozenset()
    bundle_said: str = ""

    @classmethod
    def create(cls, base: CaptureBase, overlays: Iterable[Overlay] = ()) -> SemanticBundle:
        bundle = cls(base, frozenset(), _bundle_said(base, ()))
        for ov in overlays:
            bundle = add_overlay(bundle, ov)
        return bundle

    def overlays_of(self, kind: OverlayKind | str) -> list[Overlay]:
        kind = OverlayKind(kind)
        return sorted((o for o in self.overlays if o.kind is kind), key=lambda o: o.said)

    def to_dict(self) -> dict:
        return {
            "capture_base": self.base.to_dict(),
            "overlays": [o.to_dict() for o in sorted(self.overlays, key=lambda o: o.said)],
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> SemanticBundle:
        base = CaptureBase.from_dict(data["capture_base"])
        return cls.create(base, (Overlay.from_dict(o) for o in data.get("overlays", ())))


def add_overlay(bundle: SemanticBundle, ov: Overlay) -> SemanticBundle:
    if ov.base_said != bundle.base.said:
        raise BaseMismatch(f"overlay decorates {ov.base_said}, bundle base is {bundle.base.said}")
    unknown = set(ov.content) - bundle.base.attributes.keys()
    if unknown:
        raise UnknownAttribute(f"overlay names attributes missing from base: {sorted(unknown)}")
    overlays = bundle.overlays | {ov}
    return SemanticBundle(bundle.base, overlays, _bundle_said(bundle.base, overlays))


def form_view(bundle: SemanticBundle) -> SemanticBundle:
    """Capture form: the bundle restricted to label and format overlays."""
    keep = (o for o in bundle.overlays if o.kind in (OverlayKind.LABEL, OverlayKind.FORMAT))
    return SemanticBundle.create(bundle.base, keep)


@dataclass(frozen=True)
class Record:
    bundle_said: str
    values: Mapping[str, object]
    said: str
    flagged: frozenset[str] = frozenset()

    @classmethod
    def create(
        cls, bundle: SemanticBundle | str, values: Mapping[str, object], flagged: Iterable[str] = ()
    ) -> Record:
        bundle_said = bundle if isinstance(bundle, str) else bundle.bundle_said
        flagged = frozenset(flagged)
        body = cls._body(bundle_said, dict(values), flagged)
        return cls(bundle_said, dict(values), compute_said(body), flagged)

    @staticmethod
    def _body(bundle_said, values, flagged) -> dict:
        body = {"type": "record", "bundle_said": bundle_said, "values": values}
        if flagged:
            body["flagged"] = sorted(flagged)
        return body

    def to_dict(self) -> dict:
        return {**self._body(self.bundle_said, dict(self.values), self.flagged), "said": self.said}

    @classmethod
    def from_dict(cls, data: Mapping) -> Record:
        rec = cls.create(data["bundle_said"], data.get("values", {}), data.get("flagged", ()))
        if "said" in data and data["said"] != rec.said:
            raise InvalidSchema("record said does not match its content")
        return rec


@dataclass(frozen=True)
class Violation:
    kind: str  # TypeViolation | RequiredMissing | UnknownAttribute
    attribute: str
    detail: str = ""

    def to_dict(self) -> dict:
        return {"kind": self.kind, "attribute": self.attribute, "detail": self.detail}


def validate_record(rec: Record, bundle: SemanticBundle) -> list[Violation]:
    if rec.bundle_said != bundle.bundle_said:
        raise BundleMismatch(f"record belongs to bundle {rec.bundle_said}")
    attrs = bundle.base.attributes
    out = []
    for name in sorted(rec.values):
        value = rec.values[name]
        if name not in attrs:
            out.append(Violation("UnknownAttribute", name, "not in capture base"))
        elif value is not None and not conforms(attrs[name], value):
            out.append(Violation("TypeViolation", name, f"expected {attrs[name].value}"))
    required = set()
    for ov in bundle.overlays_of(OverlayKind.CONFORMANCE):
        required |= {k for k, v in ov.content.items() if v == "required"}
    for name in sorted(required):
        if rec.values.get(name) is None:
            out.append(Violation("RequiredMissing", name, "required by conformance overlay"))
    return out


def harmonize(rec: Record, source: SemanticBundle, target: SemanticBundle, mapping: Overlay) -> Record:
    """Re-express a record in the target bundle, driven by a mapping overlay.

    The mapping decorates the target base: each target attribute names the
    source attribute it is taken from.  Sensitivity flags carried by a source
    attribute travel with its value.
    """
    problems = validate_record(rec, source)
    if problems:
        raise ValidationFailure("record does not validate against source bundle", problems)
    if mapping.kind is not OverlayKind.MAPPING:
        raise InvalidSchema("harmonization needs a mapping overlay")
    if mapping.base_said != target.base.said:
        raise BaseMismatch("mapping overlay does not decorate the target base")
    for name in sorted(target.base.attributes):
        src = mapping.content.get(name)
        if src is None or src not in source.base.attributes:
            raise UnmappedAttribute(f"target attribute {name!r} has no source attribute")
    values = {}
    flagged = set()
    source_flags = source.base.flagged | rec.flagged
    for name in sorted(target.base.attributes):
        src = mapping.content[name]
        if src in rec.values:
            values[name] = rec.values[src]
        if src in source_flags:
            flagged.add(name)
    out = Record.create(target, values, flagged - target.base.flagged)
    problems = validate_record(out, target)
    if problems:
        raise ValidationFailure("harmonized record does not validate against target", problems)
    return out


def effective_flags(rec: Record, bundle: SemanticBundle) -> frozenset[str]:
    """Sensitive attributes of a record: base flags plus flags carried by the record."""
    return bundle.base.flagged | rec.flagged


# -- credentials ----------------------------------------------------------------------


@dataclass(frozen=True)
class Credential:
    record_said: str
    issuer: str
    subject: str
    anchor_event: str
    claims: Mapping[str, object] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "record_said": self.record_said,
            "issuer": self.issuer,
            "subject": self.subject,
            "anchor_event": self.anchor_event,
            "claims": dict(self.claims),
        }

    @classmethod
    def from_dict(cls, data: Mapping) -> Credential:
        return cls(data["record_said"], data["issuer"], data["subject"], data["anchor_event"], data.get("claims", {}))

    @property
    def digest(self) -> str:
        return digest_of(self.to_dict())


def issue_credential(
    kel: KeyEventLog,
    keyring: Keyring,
    record: Record,
    subject: str,
    claims: Mapping[str, object] | None = None,
) -> tuple[Credential, KeyEventLog]:
    claims = dict(claims if claims is not None else record.values)
    for k, v in claims.items():
        if record.values.get(k) != v:
            raise InvalidCredential(f"claim {k!r} is not backed by the record")
    kel = keyring.anchor(kel, record.said)
    cred = Credential(record.said, kel.prefix, subject, kel.events[-1].digest, claims)
    return cred, kel


def verify_credential(cred: Credential, issuer_kel: KeyEventLog, record: Record | None = None) -> None:
    """Raise :class:`InvalidCredential` unless the issuer's verified log anchors the record."""
    if issuer_kel.prefix != cred.issuer:
        raise InvalidCredential("log does not belong to the issuer")
    try:
        issuer_kel.state
    except KelError as exc:
        raise InvalidCredential(f"issuer log does not verify: {exc}") from exc
    event = issuer_kel.find(cred.anchor_event)
    if event is None or cred.record_said not in event.anchors:
        raise InvalidCredential("anchor event does not carry the record digest")
    if record is not None:
        if record.said != cred.record_said:
            raise InvalidCredential("record does not match credential")
        for k, v in cred.claims.items():
            if record.values.get(k) != v:
                raise InvalidCredential(f"claim {k!r} not backed by record")
