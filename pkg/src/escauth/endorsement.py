"""Endorsing a contract address with a TLS certificate's private key.

The signed payload is the ASCII text of the address as people copy it from a
website: ``0x`` followed by 40 lowercase hex digits.  The result is stored
on-chain as ``"<algorithm>:<base64 signature>"``.
"""
from __future__ import annotations

import base64
import binascii
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

from cryptography import x509
from cryptography.hazmat.primitives import hashes, serialization
from cryptography.hazmat.primitives.asymmetric import ec, padding, rsa
from cryptography.x509.oid import NameOID

from .errors import (
    EndorsementError,
    KeyCertMismatch,
    MalformedSignature,
    UnsupportedAlgorithm,
    UnsupportedKeyType,
)
from .ledger import Address, predict_address

ECDSA_P256 = "ecdsa-p256-sha256"
RSA_PKCS1 = "rsa-pkcs1-sha256"
RSA_PSS = "rsa-pss-sha256"
ALGORITHMS = (ECDSA_P256, RSA_PKCS1, RSA_PSS)


def canonical_payload(addr: Address) -> bytes:
    return addr.hex.encode("ascii")


@dataclass(frozen=True)
class Endorsement:
    algorithm: str
    signature: bytes

    @property
    def encoded(self) -> str:
        return f"{self.algorithm}:{base64.b64encode(self.signature).decode('ascii')}"

    def __str__(self) -> str:
        return self.encoded

    @classmethod
    def parse(cls, text: str) -> "Endorsement":
        if not isinstance(text, str) or ":" not in text:
            raise MalformedSignature("endorsement must look like 'algorithm:base64'")
        algorithm, _, b64 = text.partition(":")
        if algorithm not in ALGORITHMS:
            raise UnsupportedAlgorithm(f"unsupported endorsement algorithm {algorithm!r}")
        try:
            raw = base64.b64decode(b64, validate=True)
        except (binascii.Error, ValueError):
            raise MalformedSignature("signature is not valid base64") from None
        if not raw:
            raise MalformedSignature("empty signature")
        return cls(algorithm, raw)


def dns_names(cert: x509.Certificate) -> list[str]:
    """DNS names a certificate is issued for: SAN entries, else the subject CN."""
    try:
        san = cert.extensions.get_extension_for_class(x509.SubjectAlternativeName)
        return [n.lower() for n in san.value.get_values_for_type(x509.DNSName)]
    except x509.ExtensionNotFound:
        return [a.value.lower() for a in cert.subject.get_attributes_for_oid(NameOID.COMMON_NAME)
                if isinstance(a.value, str)]


def algorithm_for_key(key) -> str:
    if isinstance(key, (ec.EllipticCurvePrivateKey, ec.EllipticCurvePublicKey)):
        if not isinstance(key.curve, ec.SECP256R1):
            raise UnsupportedKeyType(f"only P-256 EC keys are supported, got {key.curve.name}")
        return ECDSA_P256
    if isinstance(key, (rsa.RSAPrivateKey, rsa.RSAPublicKey)):
        return RSA_PKCS1
    raise UnsupportedKeyType(f"unsupported key type {type(key).__name__}")


def _spki(public_key) -> bytes:
    return public_key.public_bytes(serialization.Encoding.DER,
                                   serialization.PublicFormat.SubjectPublicKeyInfo)


@dataclass
class SigningIdentity:
    """A TLS certificate together with its private key and intermediates."""

    private_key: object
    certificate: x509.Certificate
    chain: list = field(default_factory=list)

    def __post_init__(self):
        algorithm_for_key(self.private_key)
        if _spki(self.private_key.public_key()) != _spki(self.certificate.public_key()):
            raise KeyCertMismatch("private key does not match the certificate's public key")
        if not dns_names(self.certificate):
            raise EndorsementError("certificate names no DNS host")

    @property
    def names(self) -> list[str]:
        return dns_names(self.certificate)

    @property
    def full_chain(self) -> list:
        return [self.certificate, *self.chain]

    @classmethod
    def load(cls, key_path: Union[str, Path], cert_path: Union[str, Path],
             chain_path: Optional[Union[str, Path]] = None,
             password: Optional[bytes] = None) -> "SigningIdentity":
        """Load PEM files.  ``cert_path`` may hold the leaf followed by its chain."""
        key = serialization.load_pem_private_key(Path(key_path).read_bytes(), password=password)
        certs = x509.load_pem_x509_certificates(Path(cert_path).read_bytes())
        if chain_path is not None:
            certs += x509.load_pem_x509_certificates(Path(chain_path).read_bytes())
        return cls(key, certs[0], certs[1:])


def _sign(key, algorithm: str, payload: bytes) -> bytes:
    if algorithm == ECDSA_P256:
        return key.sign(payload, ec.ECDSA(hashes.SHA256(), deterministic_signing=True))
    if algorithm == RSA_PKCS1:
        return key.sign(payload, padding.PKCS1v15(), hashes.SHA256())
    if algorithm == RSA_PSS:
        pss = padding.PSS(mgf=padding.MGF1(hashes.SHA256()), salt_length=padding.PSS.DIGEST_LENGTH)
        return key.sign(payload, pss, hashes.SHA256())
    raise UnsupportedAlgorithm(algorithm)


def sign_address(identity: SigningIdentity, addr: Address,
                 algorithm: Optional[str] = None) -> Endorsement:
    """Endorse exactly one contract address.

    ``algorithm`` defaults to the key's natural scheme; RSA keys may ask for
    ``rsa-pss-sha256`` instead of PKCS#1 v1.5.
    """
    default = algorithm_for_key(identity.private_key)
    algorithm = algorithm or default
    if algorithm not in ALGORITHMS:
        raise UnsupportedAlgorithm(f"unsupported endorsement algorithm {algorithm!r}")
    if (default == ECDSA_P256) != (algorithm == ECDSA_P256):
        raise UnsupportedKeyType(f"{algorithm} cannot be produced with this key")
    return Endorsement(algorithm, _sign(identity.private_key, algorithm, canonical_payload(addr)))


def predeploy_sign(identity: SigningIdentity, sender: Address, nonce: int,
                   algorithm: Optional[str] = None):
    """Sign the address ``sender`` will create at ``nonce`` before deploying.

    Any other transaction ``sender`` sends first moves the nonce and
    invalidates the prediction.
    """
    predicted = predict_address(sender, nonce)
    return predicted, sign_address(identity, predicted, algorithm)


def rotate(identity_new: SigningIdentity, addr: Address,
           algorithm: Optional[str] = None) -> Endorsement:
    """Fresh endorsement after a certificate renewal; upload it with setSignature."""
    return sign_address(identity_new, addr, algorithm)
