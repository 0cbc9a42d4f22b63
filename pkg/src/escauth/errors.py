"""Exception hierarchy.

Every failure the toolkit can report has its own class; the class name is
what ends up in the ``failure`` field of a verification report.
"""
from __future__ import annotations


class EscError(Exception):
    """Base class for all toolkit errors."""

    @property
    def code(self) -> str:
        return type(self).__name__


# ledger / contracts

class LedgerError(EscError):
    pass


class UnknownSender(LedgerError):
    pass


class UnknownTarget(LedgerError):
    pass


class ContractRevert(LedgerError):
    """Raised inside a contract to abort the current transaction."""


class UnknownContract(ContractRevert):
    pass


class NotOwner(ContractRevert):
    pass


class EmptySignature(ContractRevert):
    pass


class MalformedDomain(EscError, ValueError):
    pass


class BadHashLength(EscError, ValueError):
    pass


# endorsement

class EndorsementError(EscError):
    pass


class KeyCertMismatch(EndorsementError):
    pass


class UnsupportedKeyType(EndorsementError):
    pass


# pki test kit

class UnknownSerial(EscError):
    pass


# verification, grouped by the pipeline step that raises them

class VerificationError(EscError):
    step = 0


class NotEscContract(VerificationError):
    step = 1


class NoSignaturePresent(VerificationError):
    step = 1


class DomainUnknown(VerificationError):
    step = 1


class DomainMismatch(VerificationError):
    step = 1


class ConnectionFailed(VerificationError):
    step = 2


class NameMismatch(VerificationError):
    step = 2


class SignatureMismatch(VerificationError):
    step = 3


class UnsupportedAlgorithm(VerificationError):
    step = 3


class MalformedSignature(VerificationError):
    step = 3


class PathValidationError(VerificationError):
    step = 4


class UntrustedRoot(PathValidationError):
    pass


class CertificateExpired(PathValidationError):
    pass


class CertificateNotYetValid(PathValidationError):
    pass


class CertificateRevoked(PathValidationError):
    pass


class BrokenChain(PathValidationError):
    pass
