"""Exception hierarchy shared by every distgov module."""

from __future__ import annotations


class DistgovError(Exception):
    """Base class for all domain errors raised by distgov."""


class NonCanonicalInput(DistgovError):
    """Value cannot be represented in the canonical JSON encoding."""


# -- authenticity -------------------------------------------------------------


class KelError(DistgovError):
    """Key event log verification or construction failed."""

    def __init__(self, message: str, seq: int | None = None):
        super().__init__(message)
        self.seq = seq

    def __str__(self) -> str:
        base = super().__str__()
        return base if self.seq is None else f"{base} (seq {self.seq})"


class EmptyKeySet(KelError):
    pass


class BrokenChain(KelError):
    pass


class SeqGap(BrokenChain):
    pass


class MalformedEvent(BrokenChain):
    pass


class BadSignature(KelError):
    pass


class PreRotationViolation(KelError):
    pass


class InsufficientReceipts(KelError):
    pass


class UnknownEvent(DistgovError):
    pass


class IdenticalEvents(DistgovError):
    pass


class CausalCycle(DistgovError):
    pass


# -- core model ---------------------------------------------------------------


class InvalidInception(DistgovError):
    pass


class DuplicateId(DistgovError):
    pass


class UnknownPrincipal(DistgovError):
    pass


class UnknownEcosystem(DistgovError):
    pass


class UnknownController(DistgovError):
    pass


class UnknownThing(DistgovError):
    pass


class EmptyFounders(DistgovError):
    pass


class InvalidAuthority(DistgovError):
    pass


class LastMember(DistgovError):
    pass


class NotAMember(DistgovError):
    pass


class MissingKeys(DistgovError):
    """The keyring holds no secret material for the requested prefix."""


# -- comms --------------------------------------------------------------------


class SelfConnection(DistgovError):
    pass


class UnknownConnection(DistgovError):
    pass


class NotAParty(DistgovError):
    pass


class ConnectionTerminated(DistgovError):
    pass


class SenderOnlyAttribute(DistgovError):
    pass


# -- semantics ----------------------------------------------------------------


class BaseMismatch(DistgovError):
    pass


class BundleMismatch(DistgovError):
    pass


class UnknownAttribute(DistgovError):
    pass


class UnmappedAttribute(DistgovError):
    pass


class ValidationFailure(DistgovError):
    def __init__(self, message: str, violations=()):
        super().__init__(message)
        self.violations = tuple(violations)


class InvalidSchema(DistgovError):
    pass


class InvalidCredential(DistgovError):
    pass


# -- governance ---------------------------------------------------------------


class UnknownParty(DistgovError):
    pass


class AnchorFailure(DistgovError):
    pass


class AlreadyScreened(DistgovError):
    pass


class InvalidRule(DistgovError):
    pass


class InvalidAmendment(DistgovError):
    pass


# -- simulator ----------------------------------------------------------------


class UnknownScenario(DistgovError):
    pass


class CausalityViolation(DistgovError):
    pass
