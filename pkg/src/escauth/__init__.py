"""Bind web identities to smart contracts with TLS certificates.

Contract owners endorse a contract address with the private key of their
domain's certificate; anyone can later check that endorsement against the
domain's certificate chain and their own trust store.
"""
from .errors import EscError
from .ledger import Address, GasSchedule, Ledger, Receipt, Transaction, cost_usd, keccak256, predict_address
from .contracts import ESC_INTERFACE_ID, EscContract, Fqdn, PlainContract
from .registry import domain_hash, lookup_by_domain, lookup_by_hash, register
from .endorsement import Endorsement, SigningIdentity, canonical_payload, predeploy_sign, rotate, sign_address
from .verifier import (
    FixtureSource,
    LiveTlsSource,
    TrustStore,
    VerificationReport,
    VerifierConfig,
    authenticate,
    check_downgrade,
    validate_path,
    verify_endorsement,
)

__version__ = "0.1.0"

__all__ = [
    "Address", "GasSchedule", "Ledger", "Receipt", "Transaction", "cost_usd", "keccak256",
    "predict_address", "ESC_INTERFACE_ID", "EscContract", "Fqdn", "PlainContract",
    "domain_hash", "lookup_by_domain", "lookup_by_hash", "register", "Endorsement",
    "SigningIdentity", "canonical_payload", "predeploy_sign", "rotate", "sign_address",
    "FixtureSource", "LiveTlsSource", "TrustStore", "VerificationReport", "VerifierConfig",
    "authenticate", "check_downgrade", "validate_path", "verify_endorsement", "EscError",
]
