"""Deterministic test PKI: root and intermediate CAs, leaf certificates, CRLs.

Everything, keys included, is derived from a seed, so a fixture tree is
byte-for-byte reproducible.  Nothing here reads the wall clock; validity
windows are anchored at :data:`FIXTURE_EPOCH` unless given explicitly.
"""
from __future__ import annotations

import functools
import hashlib
import json
import random
from dataclasses import dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Optional, Union

import sympy
from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, rsa
from cryptography.x509.oid import ExtendedKeyUsageOID, NameOID

from .contracts import Fqdn, as_fqdn
from .endorsement import SigningIdentity
from .errors import UnknownSerial, UnsupportedKeyType

FIXTURE_EPOCH = datetime(2020, 3, 1, tzinfo=timezone.utc)

EC_P256 = "ecdsa-p256"
RSA_2048 = "rsa-2048"
KEY_ALGORITHMS = (EC_P256, RSA_2048)

_P256_ORDER = 0xFFFFFFFF00000000FFFFFFFFFFFFFFFFBCE6FAADA7179E84F3B9CAC2FC632551
_ORG = "escauth test PKI"


def _material(*parts) -> bytes:
    return hashlib.sha256("\x1f".join(str(p) for p in parts).encode()).digest()


def derive_private_key(key_alg: str, material: bytes):
    """Private key that is a pure function of ``material``."""
    if key_alg == EC_P256:
        scalar = int.from_bytes(hashlib.sha256(b"ec" + material).digest(), "big") % (_P256_ORDER - 1) + 1
        return ec.derive_private_key(scalar, ec.SECP256R1())
    if key_alg == RSA_2048:
        return _derive_rsa(material, 2048)
    raise UnsupportedKeyType(f"unsupported key algorithm {key_alg!r}")


@functools.lru_cache(maxsize=64)
def _derive_rsa(material: bytes, bits: int):
    rng = random.Random(material)
    e = 65537
    half = bits // 2
    while True:
        p = sympy.nextprime(rng.getrandbits(half) | (3 << (half - 2)))
        q = sympy.nextprime(rng.getrandbits(half) | (3 << (half - 2)))
        phi = (p - 1) * (q - 1)
        if p != q and sympy.gcd(e, phi) == 1 and (p * q).bit_length() == bits:
            break
    d = pow(e, -1, phi)
    numbers = rsa.RSAPrivateNumbers(
        p=p, q=q, d=d,
        dmp1=rsa.rsa_crt_dmp1(d, p),
        dmq1=rsa.rsa_crt_dmq1(d, q),
        iqmp=rsa.rsa_crt_iqmp(p, q),
        public_numbers=rsa.RSAPublicNumbers(e, p * q),
    )
    return numbers.private_key()


def _sign_kwargs(key) -> dict:
    return {"ecdsa_deterministic": True} if isinstance(key, ec.EllipticCurvePrivateKey) else {}


def _ski(key) -> x509.SubjectKeyIdentifier:
    return x509.SubjectKeyIdentifier.from_public_key(key.public_key())


def _aki(issuer_key) -> x509.AuthorityKeyIdentifier:
    return x509.AuthorityKeyIdentifier.from_issuer_public_key(issuer_key.public_key())


def _ca_name(name: str) -> x509.Name:
    return x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, name),
                      x509.NameAttribute(NameOID.ORGANIZATION_NAME, _ORG)])


@dataclass
class CertAuthority:
    name: str
    key: object
    certificate: x509.Certificate
    material: bytes
    key_alg: str = EC_P256
    parent: Optional["CertAuthority"] = None
    issued: dict = field(default_factory=dict)
    revoked: dict = field(default_factory=dict)
    crl: Optional[x509.CertificateRevocationList] = None
    next_serial: int = 1

    @property
    def chain_to_root(self) -> list:
        """This CA's certificate followed by its ancestors, root last."""
        out, ca = [], self
        while ca is not None:
            out.append(ca.certificate)
            ca = ca.parent
        return out

    @property
    def intermediates(self) -> list:
        """Certificates a server would present above its leaf (no root)."""
        return self.chain_to_root[:-1]

    def _take_serial(self) -> int:
        serial = self.next_serial
        self.next_serial += 1
        return serial


def _default_window(not_before, not_after, days):
    nb = not_before or FIXTURE_EPOCH - timedelta(days=365)
    na = not_after or nb + timedelta(days=days)
    if na <= nb:
        raise ValueError("validity window is empty")
    return nb, na


def make_root(name: str, key_alg: str = EC_P256, seed: int = 0,
              not_before: Optional[datetime] = None,
              not_after: Optional[datetime] = None) -> CertAuthority:
    """Self-signed root CA.  Same arguments, same bytes."""
    material = _material("root", seed, name, key_alg)
    key = derive_private_key(key_alg, material)
    nb, na = _default_window(not_before, not_after, 20 * 365)
    subject = _ca_name(name)
    cert = (
        x509.CertificateBuilder()
        .subject_name(subject)
        .issuer_name(subject)
        .public_key(key.public_key())
        .serial_number(int.from_bytes(material[:8], "big") >> 1 or 1)
        .not_valid_before(nb)
        .not_valid_after(na)
        .add_extension(x509.BasicConstraints(ca=True, path_length=None), critical=True)
        .add_extension(_key_usage(ca=True), critical=True)
        .add_extension(_ski(key), critical=False)
        .sign(key, hashes.SHA256(), **_sign_kwargs(key))
    )
    return CertAuthority(name, key, cert, material, key_alg)


def _key_usage(ca: bool) -> x509.KeyUsage:
    return x509.KeyUsage(
        digital_signature=not ca, content_commitment=False, key_encipherment=False,
        data_encipherment=False, key_agreement=False, key_cert_sign=ca, crl_sign=ca,
        encipher_only=False, decipher_only=False,
    )


def issue_intermediate(parent: CertAuthority, name: str, key_alg: Optional[str] = None,
                       not_before: Optional[datetime] = None,
                       not_after: Optional[datetime] = None) -> CertAuthority:
    key_alg = key_alg or parent.key_alg
    serial = parent._take_serial()
    material = _material("intermediate", parent.material.hex(), name, key_alg, serial)
    key = derive_private_key(key_alg, material)
    nb, na = _default_window(not_before, not_after, 10 * 365)
    cert = (
        x509.CertificateBuilder()
        .subject_name(_ca_name(name))
        .issuer_name(parent.certificate.subject)
        .public_key(key.public_key())
        .serial_number(serial)
        .not_valid_before(nb)
        .not_valid_after(na)
        .add_extension(x509.BasicConstraints(ca=True, path_length=None), critical=True)
        .add_extension(_key_usage(ca=True), critical=True)
        .add_extension(_ski(key), critical=False)
        .add_extension(_aki(parent.key), critical=False)
        .sign(parent.key, hashes.SHA256(), **_sign_kwargs(parent.key))
    )
    parent.issued[serial] = cert
    return CertAuthority(name, key, cert, material, key_alg, parent=parent)


def issue_leaf(issuer: CertAuthority, fqdn: Union[Fqdn, str],
               validity: Optional[tuple] = None, key_alg: str = EC_P256) -> SigningIdentity:
    """Server certificate for ``fqdn`` with its key and the presented chain.

    ``validity`` is ``(not_before, not_after)``; by default the certificate
    is valid for a year starting 30 days before :data:`FIXTURE_EPOCH`.
    """
    domain = as_fqdn(fqdn).dotted
    if validity is None:
        validity = (FIXTURE_EPOCH - timedelta(days=30), FIXTURE_EPOCH + timedelta(days=335))
    nb, na = validity
    if na <= nb:
        raise ValueError("validity window is empty")
    serial = issuer._take_serial()
    key = derive_private_key(key_alg, _material("leaf", issuer.material.hex(), domain, key_alg, serial))
    cert = (
        x509.CertificateBuilder()
        .subject_name(x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, domain)]))
        .issuer_name(issuer.certificate.subject)
        .public_key(key.public_key())
        .serial_number(serial)
        .not_valid_before(nb)
        .not_valid_after(na)
        .add_extension(x509.BasicConstraints(ca=False, path_length=None), critical=True)
        .add_extension(_key_usage(ca=False), critical=True)
        .add_extension(x509.ExtendedKeyUsage([ExtendedKeyUsageOID.SERVER_AUTH]), critical=False)
        .add_extension(x509.SubjectAlternativeName([x509.DNSName(domain)]), critical=False)
        .add_extension(_ski(key), critical=False)
        .add_extension(_aki(issuer.key), critical=False)
        .sign(issuer.key, hashes.SHA256(), **_sign_kwargs(issuer.key))
    )
    issuer.issued[serial] = cert
    return SigningIdentity(key, cert, issuer.intermediates)


def make_crl(issuer: CertAuthority, this_update: Optional[datetime] = None) -> x509.CertificateRevocationList:
    """Sign a CRL listing everything ``issuer`` has revoked so far."""
    this_update = this_update or FIXTURE_EPOCH
    builder = (
        x509.CertificateRevocationListBuilder()
        .issuer_name(issuer.certificate.subject)
        .last_update(this_update)
        .next_update(this_update + timedelta(days=30))
        .add_extension(_aki(issuer.key), critical=False)
        .add_extension(x509.CRLNumber(len(issuer.revoked)), critical=False)
    )
    for serial, when in sorted(issuer.revoked.items()):
        builder = builder.add_revoked_certificate(
            x509.RevokedCertificateBuilder().serial_number(serial).revocation_date(when).build())
    issuer.crl = builder.sign(issuer.key, hashes.SHA256(), **_sign_kwargs(issuer.key))
    return issuer.crl


def revoke(issuer: CertAuthority, serial: int, at: Optional[datetime] = None) -> x509.CertificateRevocationList:
    """Add ``serial`` to the issuer's revocation list and re-sign it."""
    if serial not in issuer.issued:
        raise UnknownSerial(f"{issuer.name} never issued serial {serial}")
    issuer.revoked.setdefault(serial, at or FIXTURE_EPOCH)
    return make_crl(issuer, at)


# --- fixture matrix --------------------------------------------------------

def pem(cert_or_crl) -> bytes:
    return cert_or_crl.public_bytes(serialization.Encoding.PEM)


def key_pem(key) -> bytes:
    return key.private_bytes(serialization.Encoding.PEM, serialization.PrivateFormat.PKCS8,
                             serialization.NoEncryption())


@dataclass
class FixtureRole:
    domain: str
    identity: SigningIdentity
    presented: list  # chain the "web server" hands out

    @property
    def serial(self) -> int:
        return self.identity.certificate.serial_number


@dataclass
class FixturePki:
    seed: int
    root: CertAuthority
    intermediate: CertAuthority
    rogue_root: CertAuthority
    roles: dict
    crls: list
    clock: datetime = FIXTURE_EPOCH

    @property
    def trust_store(self) -> list:
        return [self.root.certificate]

    def manifest(self) -> dict:
        roles = {name: {"domain": r.domain, "key": f"leaves/{name}.key.pem",
                        "chain": f"leaves/{name}.chain.pem", "serial": r.serial}
                 for name, r in sorted(self.roles.items())}
        return {
            "seed": self.seed,
            "clock": self.clock.isoformat(),
            "trust_store": "truststore",
            "root": "truststore/root.pem",
            "intermediate": "ca/intermediate.pem",
            "rogue_root": "ca/rogue-root.pem",
            "crls": ["crls/intermediate.crl.pem"],
            "roles": roles,
        }

    def write(self, outdir: Union[str, Path]) -> dict:
        """Write PEM files plus ``manifest.json`` (role → path) under ``outdir``."""
        out = Path(outdir)
        for sub in ("truststore", "ca", "leaves", "crls"):
            (out / sub).mkdir(parents=True, exist_ok=True)
        (out / "truststore/root.pem").write_bytes(pem(self.root.certificate))
        (out / "ca/intermediate.pem").write_bytes(pem(self.intermediate.certificate))
        (out / "ca/rogue-root.pem").write_bytes(pem(self.rogue_root.certificate))
        (out / "crls/intermediate.crl.pem").write_bytes(b"".join(pem(c) for c in self.crls))
        for name, role in self.roles.items():
            (out / f"leaves/{name}.key.pem").write_bytes(key_pem(role.identity.private_key))
            (out / f"leaves/{name}.chain.pem").write_bytes(b"".join(pem(c) for c in role.presented))
        manifest = self.manifest()
        (out / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
        return manifest


def build_fixture_pki(seed: int = 0, domain: str = "hq.example.org") -> FixturePki:
    """The standard matrix: one fixture per verification outcome.

    Roles: ``valid``, ``expired``, ``not_yet_valid``, ``revoked``,
    ``name_mismatch`` (a good certificate for another host), ``untrusted``
    (right name, rogue root), ``broken_chain`` (intermediate left out) and
    ``rsa`` (RSA-2048 leaf for algorithm coverage).
    """
    root = make_root("escauth Test Root", seed=seed)
    inter = issue_intermediate(root, "escauth Test Intermediate")
    rogue = make_root("Rogue Root", seed=seed + 1)
    rogue_inter = issue_intermediate(rogue, "Rogue Intermediate")
    day = timedelta(days=1)
    e = FIXTURE_EPOCH

    def role(issuer, name, **kw):
        ident = issue_leaf(issuer, name, **kw)
        return FixtureRole(name, ident, ident.full_chain)

    roles = {
        "valid": role(inter, domain),
        "expired": role(inter, f"expired.{_parent(domain)}", validity=(e - 730 * day, e - 365 * day)),
        "not_yet_valid": role(inter, f"future.{_parent(domain)}", validity=(e + 365 * day, e + 730 * day)),
        "revoked": role(inter, f"revoked.{_parent(domain)}"),
        "name_mismatch": role(inter, "other.org"),
        "untrusted": role(rogue_inter, domain),
        "rsa": role(inter, f"rsa.{_parent(domain)}", key_alg=RSA_2048),
    }
    broken = issue_leaf(inter, f"broken.{_parent(domain)}")
    roles["broken_chain"] = FixtureRole(f"broken.{_parent(domain)}", broken, [broken.certificate, root.certificate])
    crl = revoke(inter, roles["revoked"].serial)
    return FixturePki(seed, root, inter, rogue, roles, [crl], clock=e)


def _parent(domain: str) -> str:
    labels = domain.split(".")
    return ".".join(labels[1:]) if len(labels) > 2 else domain
