"""Off-chain authentication of a contract's claimed web identity.

The pipeline has four steps and stops at the first failure:

1. read the domain and endorsement stored in the contract,
2. obtain the certificate chain the domain presents,
3. check the endorsement against the leaf certificate's public key,
4. validate the certification path up to a root the user trusts.

When the ledger has a registry, a failed authentication also looks for other
contracts registered for the same domain that do verify (a downgrade).
"""
from __future__ import annotations

import json
import logging
import select
import socket
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Optional, Protocol, Union

from cryptography import x509
from cryptography.exceptions import InvalidSignature
from cryptography.exceptions import UnsupportedAlgorithm as _CryptoUnsupported
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.asymmetric import ec, padding, rsa

from . import registry as _registry
from .contracts import ESC_INTERFACE_ID, Fqdn, as_fqdn, supports_interface
from .endorsement import ECDSA_P256, RSA_PKCS1, RSA_PSS, Endorsement, canonical_payload, dns_names
from .errors import (
    BrokenChain,
    CertificateExpired,
    CertificateNotYetValid,
    CertificateRevoked,
    ConnectionFailed,
    DomainMismatch,
    DomainUnknown,
    EscError,
    NameMismatch,
    NoSignaturePresent,
    NotEscContract,
    SignatureMismatch,
    UntrustedRoot,
    VerificationError,
)
from .ledger import Address, Ledger

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
PASS, FAIL = "PASS", "FAIL"
STEP_NAMES = {
    1: "fetch_contract_data",
    2: "fetch_certificate",
    3: "verify_endorsement",
    4: "validate_path",
}
MAX_PATH_LENGTH = 8

_KNOWN_CRITICAL = {
    x509.BasicConstraints.oid,
    x509.KeyUsage.oid,
    x509.ExtendedKeyUsage.oid,
    x509.SubjectAlternativeName.oid,
}


# --- inputs ----------------------------------------------------------------

def load_pem_certs(path: Union[str, Path]) -> list:
    return x509.load_pem_x509_certificates(Path(path).read_bytes())


def load_crls(paths) -> list:
    crls = []
    for path in paths:
        data = Path(path).read_bytes()
        for block in data.split(b"-----END X509 CRL-----"):
            if b"-----BEGIN X509 CRL-----" in block:
                crls.append(x509.load_pem_x509_crl(block + b"-----END X509 CRL-----\n"))
    return crls


@dataclass
class TrustStore:
    roots: list
    source: Optional[str] = None

    def __post_init__(self):
        if not self.roots:
            raise ValueError("trust store is empty")

    @classmethod
    def from_dir(cls, path: Union[str, Path]) -> "TrustStore":
        path = Path(path)
        roots = []
        for f in sorted(path.iterdir()):
            if f.suffix in (".pem", ".crt"):
                roots.extend(load_pem_certs(f))
        return cls(roots, str(path))

    def __contains__(self, cert: x509.Certificate) -> bool:
        return any(cert == r for r in self.roots)

    def without(self, cert: x509.Certificate) -> "TrustStore":
        return TrustStore([r for r in self.roots if r != cert], self.source)


class CertificateSource(Protocol):
    mode: str

    def fetch(self, domain: Fqdn) -> list: ...


@dataclass
class FixtureSource:
    """Certificate chains read from PEM files instead of a TLS handshake.

    ``path`` is either one chain file served for every domain or a directory
    holding ``<domain>.pem`` files; ``chains`` maps domains to in-memory
    chains and takes precedence.
    """

    path: Optional[Union[str, Path]] = None
    chains: dict = field(default_factory=dict)
    mode: str = "fixture"

    def fetch(self, domain: Fqdn) -> list:
        if domain.dotted in self.chains:
            return list(self.chains[domain.dotted])
        if self.path is not None:
            p = Path(self.path)
            if p.is_dir():
                p = p / f"{domain.dotted}.pem"
            if p.is_file():
                return load_pem_certs(p)
        raise ConnectionFailed(f"no certificate fixture for {domain}")


@dataclass
class LiveTlsSource:
    """Chain presented by a real server, fetched with a TLS handshake.

    Nothing is verified during the handshake; all checks happen afterwards.
    ``host`` defaults to the domain itself.
    """

    host: Optional[str] = None
    port: int = 443
    timeout: float = 5.0
    mode: str = "live-tls"

    def fetch(self, domain: Fqdn) -> list:
        from OpenSSL import SSL

        host = self.host or domain.dotted
        try:
            sock = socket.create_connection((host, self.port), timeout=self.timeout)
        except OSError as exc:
            raise ConnectionFailed(f"cannot connect to {host}:{self.port}: {exc}") from None
        ctx = SSL.Context(SSL.TLS_CLIENT_METHOD)
        ctx.set_verify(SSL.VERIFY_NONE, lambda *a: True)
        conn = SSL.Connection(ctx, sock)
        conn.set_tlsext_host_name(domain.dotted.encode("ascii"))
        conn.set_connect_state()
        try:
            while True:
                try:
                    conn.do_handshake()
                    break
                except SSL.WantReadError:
                    if not select.select([sock], [], [], self.timeout)[0]:
                        raise ConnectionFailed(f"TLS handshake with {host}:{self.port} timed out")
            chain = conn.get_peer_cert_chain(as_cryptography=True) or []
        except (SSL.Error, OSError) as exc:
            raise ConnectionFailed(f"TLS handshake with {host}:{self.port} failed: {exc}") from None
        finally:
            sock.close()
        if not chain:
            raise ConnectionFailed(f"{host}:{self.port} presented no certificate")
        return chain


@dataclass
class VerifierConfig:
    trust_store: TrustStore
    source: CertificateSource
    clock: Optional[datetime] = None
    crls: list = field(default_factory=list)
    check_crl: Optional[bool] = None
    registry_address: Optional[Address] = None
    downgrade_check: bool = True

    def now(self) -> datetime:
        if self.clock is None:
            return datetime.now(timezone.utc)
        return self.clock if self.clock.tzinfo else self.clock.replace(tzinfo=timezone.utc)

    @property
    def crl_enabled(self) -> bool:
        # CRLs are opt-in for live servers and on by default for fixtures
        if self.check_crl is not None:
            return self.check_crl
        return getattr(self.source, "mode", "") != "live-tls"


# --- reports ---------------------------------------------------------------

@dataclass
class DowngradeFinding:
    domain: Fqdn
    alternative_contracts: list
    severity: str = "warning"

    def to_dict(self) -> dict:
        return {
            "domain": self.domain.dotted,
            "alternative_contracts": [a.hex for a in self.alternative_contracts],
            "severity": self.severity,
            "message": ("the contract offered for this domain has no endorsement that verifies, "
                        "but other contracts registered for the domain do"),
        }


@dataclass
class StepOutcome:
    step: int
    outcome: str
    detail: str = ""

    def to_dict(self) -> dict:
        return {"step": self.step, "name": STEP_NAMES[self.step], "outcome": self.outcome,
                "detail": self.detail}


@dataclass
class VerificationReport:
    contract: Address
    domain_used: Optional[Fqdn] = None
    binding: Optional[str] = None
    steps: list = field(default_factory=list)
    result: str = FAIL
    failure: Optional[str] = None
    checked_at: Optional[datetime] = None
    downgrade: Optional[DowngradeFinding] = None
    downgrade_checked: bool = False

    @property
    def passed(self) -> bool:
        return self.result == PASS

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "contract": self.contract.hex,
            "domain_used": self.domain_used.dotted if self.domain_used else None,
            "binding": self.binding,
            "steps": [s.to_dict() for s in self.steps],
            "result": self.result,
            "failure": self.failure,
            "checked_at": self.checked_at.isoformat() if self.checked_at else None,
            "downgrade_checked": self.downgrade_checked,
            "downgrade": self.downgrade.to_dict() if self.downgrade else None,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2)


# --- step 1 ----------------------------------------------------------------

def fetch_contract_data(ledger: Ledger, addr: Address):
    """``(fqdn or None, endorsement text)`` exactly as stored on-chain."""
    if ledger.kind_of(addr) is None:
        raise NotEscContract(f"no contract at {addr}")
    contract = ledger.contract(addr)
    if not supports_interface(contract, ESC_INTERFACE_ID):
        raise NotEscContract(f"{addr} does not implement the authenticated-contract interface")
    labels = ledger.call(addr, "getFQDN")
    signature = ledger.call(addr, "getSignature")
    if not signature:
        raise NoSignaturePresent(f"{addr} holds no endorsement")
    fqdn = Fqdn.from_labels(labels) if labels is not None else None
    return fqdn, signature


def resolve_domain(fqdn_onchain: Optional[Fqdn], expected: Optional[Fqdn]) -> Fqdn:
    """Pick the domain to authenticate against.

    Two-way contracts name their own domain, which must agree with
    ``expected`` if the caller has one.  One-way contracts can only be
    checked against a domain supplied from outside.
    """
    if fqdn_onchain is None:
        if expected is None:
            raise DomainUnknown("contract stores no domain and none was supplied")
        return expected
    if expected is not None and expected != fqdn_onchain:
        raise DomainMismatch(f"contract claims {fqdn_onchain}, expected {expected}")
    return fqdn_onchain


# --- step 2 ----------------------------------------------------------------

def fetch_certificate(source: CertificateSource, domain: Fqdn) -> list:
    """Leaf plus presented intermediates; the leaf must name ``domain`` exactly."""
    chain = source.fetch(domain)
    if not chain:
        raise ConnectionFailed(f"no certificate presented for {domain}")
    names = dns_names(chain[0])
    if domain.dotted not in names:
        raise NameMismatch(f"certificate is for {', '.join(names) or 'no DNS name'}, not {domain}")
    return chain


# --- step 3 ----------------------------------------------------------------

def verify_endorsement(public_key, addr: Address, sig: Union[Endorsement, str]) -> bool:
    """True iff ``sig`` is a valid signature by ``public_key`` over ``addr``.

    Text that is not an endorsement at all raises MalformedSignature or
    UnsupportedAlgorithm; a well-formed endorsement that does not check out,
    including one made for a different key type, is simply False.
    """
    if isinstance(sig, str):
        sig = Endorsement.parse(sig)
    payload = canonical_payload(addr)
    try:
        if sig.algorithm == ECDSA_P256:
            if not isinstance(public_key, ec.EllipticCurvePublicKey) or not isinstance(public_key.curve, ec.SECP256R1):
                return False
            public_key.verify(sig.signature, payload, ec.ECDSA(hashes.SHA256()))
        elif sig.algorithm in (RSA_PKCS1, RSA_PSS):
            if not isinstance(public_key, rsa.RSAPublicKey):
                return False
            if sig.algorithm == RSA_PKCS1:
                pad = padding.PKCS1v15()
            else:
                pad = padding.PSS(mgf=padding.MGF1(hashes.SHA256()), salt_length=padding.PSS.AUTO)
            public_key.verify(sig.signature, payload, pad, hashes.SHA256())
        else:
            return False
    except (InvalidSignature, ValueError):
        return False
    return True


# --- step 4 ----------------------------------------------------------------

@dataclass
class PathResult:
    path: list
    anchor: x509.Certificate

    @property
    def depth(self) -> int:
        return len(self.path)


def _issued_by(cert: x509.Certificate, issuer: x509.Certificate) -> bool:
    try:
        cert.verify_directly_issued_by(issuer)
    except (ValueError, TypeError, InvalidSignature, _CryptoUnsupported):
        return False
    return True


def _is_ca(cert: x509.Certificate) -> bool:
    try:
        return cert.extensions.get_extension_for_class(x509.BasicConstraints).value.ca
    except x509.ExtensionNotFound:
        return False


def _label(cert: x509.Certificate) -> str:
    return cert.subject.rfc4514_string()


def _build_path(chain: list, store: TrustStore) -> PathResult:
    leaf, pool = chain[0], list(chain[1:])
    path, current = [leaf], leaf
    for _ in range(MAX_PATH_LENGTH):
        if current in store:
            return PathResult(path, current)
        anchors = [r for r in store.roots if r.subject == current.issuer]
        for root in anchors:
            if _issued_by(current, root):
                path.append(root)
                return PathResult(path, root)
        named = [c for c in pool if c.subject == current.issuer and c not in path]
        good = [c for c in named if _issued_by(current, c)]
        if good:
            current = good[0]
            path.append(current)
            continue
        if named or anchors:
            raise BrokenChain(f"signature on {_label(current)} does not verify under its named issuer")
        if current.subject == current.issuer and _issued_by(current, current):
            raise UntrustedRoot(f"self-signed {_label(current)} is not in the trust store")
        if not _is_ca(current):
            raise BrokenChain(f"issuer {current.issuer.rfc4514_string()} of {_label(current)} was not presented")
        raise UntrustedRoot(f"chain ends at {_label(current)}, whose issuer "
                            f"{current.issuer.rfc4514_string()} is not trusted")
    raise BrokenChain(f"no path within {MAX_PATH_LENGTH} certificates")


def _check_structure(path: list) -> None:
    for cert in path:
        for ext in cert.extensions:
            if ext.critical and ext.oid not in _KNOWN_CRITICAL:
                raise BrokenChain(f"{_label(cert)} carries unsupported critical extension {ext.oid.dotted_string}")
    for below, issuer in enumerate(path[1:]):
        try:
            bc = issuer.extensions.get_extension_for_class(x509.BasicConstraints).value
        except x509.ExtensionNotFound:
            bc = None
        if bc is None or not bc.ca:
            raise BrokenChain(f"{_label(issuer)} issued a certificate but is not a CA")
        try:
            ku = issuer.extensions.get_extension_for_class(x509.KeyUsage).value
            if not ku.key_cert_sign:
                raise BrokenChain(f"{_label(issuer)} may not sign certificates")
        except x509.ExtensionNotFound:
            pass
        # intermediates strictly between this issuer and the leaf
        if bc.path_length is not None and below > bc.path_length:
            raise BrokenChain(f"path length constraint of {_label(issuer)} exceeded")


def _check_validity(path: list, at: datetime) -> None:
    for cert in path:
        if at < cert.not_valid_before_utc:
            raise CertificateNotYetValid(f"{_label(cert)} is valid only from {cert.not_valid_before_utc.isoformat()}")
        if at > cert.not_valid_after_utc:
            raise CertificateExpired(f"{_label(cert)} expired {cert.not_valid_after_utc.isoformat()}")


def _check_revocation(path: list, crls: list, at: datetime) -> None:
    for cert, issuer in zip(path, path[1:]):
        for crl in crls:
            if crl.issuer != issuer.subject:
                continue
            try:
                trusted = crl.is_signature_valid(issuer.public_key())
            except (TypeError, _CryptoUnsupported):
                trusted = False
            if not trusted:
                logger.info("ignoring CRL for %s with bad signature", _label(issuer))
                continue
            entry = crl.get_revoked_certificate_by_serial_number(cert.serial_number)
            if entry is not None and entry.revocation_date_utc <= at:
                raise CertificateRevoked(f"{_label(cert)} (serial {cert.serial_number}) was revoked "
                                         f"{entry.revocation_date_utc.isoformat()}")


def validate_path(chain: list, store: TrustStore, at: datetime,
                  crls: Optional[list] = None) -> PathResult:
    """Certification path validation from the leaf to a trusted root.

    Covers path building by name and signature, CA and key-usage
    constraints, validity windows at ``at`` and, when ``crls`` is given,
    revocation.  Name constraints and policies are not processed.
    """
    if not chain:
        raise BrokenChain("empty chain")
    if at.tzinfo is None:
        at = at.replace(tzinfo=timezone.utc)
    result = _build_path(chain, store)
    _check_structure(result.path)
    _check_validity(result.path, at)
    if crls is not None:
        _check_revocation(result.path, crls, at)
    return result


# --- pipeline --------------------------------------------------------------

def _run_steps(ledger: Ledger, addr: Address, expected: Optional[Fqdn],
               config: VerifierConfig) -> VerificationReport:
    at = config.now()
    report = VerificationReport(contract=addr, checked_at=at)
    state: dict = {}

    def step1():
        fqdn, signature = fetch_contract_data(ledger, addr)
        report.binding = "two-way" if fqdn is not None else "one-way"
        report.domain_used = resolve_domain(fqdn, expected)
        state["signature"] = signature
        return f"{report.binding} binding, domain {report.domain_used}"

    def step2():
        state["chain"] = fetch_certificate(config.source, report.domain_used)
        return f"leaf {state['chain'][0].subject.rfc4514_string()} via {config.source.mode}"

    def step3():
        leaf = state["chain"][0]
        if not verify_endorsement(leaf.public_key(), addr, state["signature"]):
            raise SignatureMismatch(f"endorsement does not verify for {addr} under the {report.domain_used} certificate")
        return "endorsement verifies"

    def step4():
        result = validate_path(state["chain"], config.trust_store, at,
                               config.crls if config.crl_enabled else None)
        return f"path of {result.depth} to {_label(result.anchor)}"

    failed = False
    for number, run in ((1, step1), (2, step2), (3, step3), (4, step4)):
        if failed:
            report.steps.append(StepOutcome(number, "skipped"))
            continue
        try:
            report.steps.append(StepOutcome(number, "success", run()))
        except VerificationError as exc:
            report.steps.append(StepOutcome(number, "failure", str(exc)))
            report.failure = exc.code
            failed = True
    report.result = FAIL if failed else PASS
    return report


def _registry_for(ledger: Ledger, config: VerifierConfig) -> Optional[Address]:
    return config.registry_address or ledger.registry_address


def _candidates(ledger: Ledger, domain: Fqdn, registry_address: Address) -> set:
    found = set(_registry.lookup_by_domain(ledger, domain, registry_address))
    found |= _registry.lookup_by_hash(ledger, domain.hash, registry_address)
    return found


def check_downgrade(website_contract: Address, domain: Union[Fqdn, str], ledger: Ledger,
                    config: VerifierConfig, registry_address: Optional[Address] = None,
                    website_report: Optional[VerificationReport] = None) -> Optional[DowngradeFinding]:
    """Warn when the offered contract is unprotected but a verifying one exists.

    All registered candidates for ``domain`` (plain and hashed entries) are
    authenticated; only those that pass are reported, in address order, so
    registry spam cannot raise a warning on its own.
    """
    domain = as_fqdn(domain)
    if website_report is None:
        website_report = _run_steps(ledger, website_contract, domain, config)
    if website_report.passed:
        return None
    reg = registry_address or _registry_for(ledger, config)
    if reg is None:
        return None
    try:
        candidates = _candidates(ledger, domain, reg)
    except EscError as exc:
        logger.warning("registry lookup for %s failed: %s", domain, exc)
        return None
    candidates.discard(website_contract)
    passing = sorted(c for c in candidates if _run_steps(ledger, c, domain, config).passed)
    if not passing:
        return None
    return DowngradeFinding(domain, passing)


def authenticate(ledger: Ledger, addr: Address, expected_domain: Optional[Union[Fqdn, str]] = None,
                 config: Optional[VerifierConfig] = None) -> VerificationReport:
    """Run the four-step pipeline and, with a registry available, the downgrade check."""
    if config is None:
        raise ValueError("a VerifierConfig is required")
    expected = as_fqdn(expected_domain) if expected_domain is not None else None
    report = _run_steps(ledger, addr, expected, config)
    reg = _registry_for(ledger, config)
    if config.downgrade_check and reg is not None:
        domain = expected or report.domain_used
        if domain is not None:
            report.downgrade = check_downgrade(addr, domain, ledger, config, reg, website_report=report)
            report.downgrade_checked = True
    return report
