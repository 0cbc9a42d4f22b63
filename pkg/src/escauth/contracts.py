"""Authenticated contract interface and the contract kinds built on it.

An authenticated contract stores two things: an optional domain name (as a
TLD-first label list) and an opaque endorsement string.  Only the owner may
change either, and the contract never checks the endorsement cryptographically;
that is the off-chain verifier's job.
"""
from __future__ import annotations

import re
from dataclasses import dataclass
from functools import reduce
from typing import Iterable, Optional, Union

from .errors import EmptySignature, EscError, MalformedDomain, NotOwner
from .ledger import Address, CallContext, Contract, contract_kind, keccak256

_LABEL = re.compile(r"^[a-z0-9](?:[a-z0-9-]{0,61}[a-z0-9])?$")
MAX_DOMAIN_LENGTH = 253


@dataclass(frozen=True)
class Fqdn:
    """Domain name held TLD first, e.g. ``("org", "example", "hq")``."""

    labels: tuple

    def __post_init__(self):
        labels = tuple(self.labels)
        object.__setattr__(self, "labels", labels)
        if not labels:
            raise MalformedDomain("empty domain")
        for label in labels:
            if not isinstance(label, str) or not label:
                raise MalformedDomain(f"empty label in {labels!r}")
            if not label.isascii():
                raise MalformedDomain(f"non-ASCII label {label!r}; encode it as punycode first")
            if not _LABEL.match(label):
                raise MalformedDomain(f"bad label {label!r}")
        if len(self.dotted) > MAX_DOMAIN_LENGTH:
            raise MalformedDomain(f"domain longer than {MAX_DOMAIN_LENGTH} chars")

    @classmethod
    def parse(cls, dotted: str) -> "Fqdn":
        if not isinstance(dotted, str) or not dotted:
            raise MalformedDomain("empty domain")
        if not dotted.isascii():
            raise MalformedDomain(f"non-ASCII domain {dotted!r}; encode it as punycode first")
        return cls(tuple(reversed(dotted.lower().split("."))))

    @classmethod
    def from_labels(cls, labels: Iterable[str]) -> "Fqdn":
        return cls(tuple(labels))

    @property
    def dotted(self) -> str:
        return ".".join(reversed(self.labels))

    @property
    def hash(self) -> bytes:
        """keccak256 of the dotted lowercase form; the registry's hash key."""
        return keccak256(self.dotted.encode("ascii"))

    def __str__(self) -> str:
        return self.dotted


def as_fqdn(value: Union[Fqdn, str, Iterable[str]]) -> Fqdn:
    if isinstance(value, Fqdn):
        return value
    if isinstance(value, str):
        return Fqdn.parse(value)
    return Fqdn.from_labels(value)


def selector(signature: str) -> bytes:
    return keccak256(signature.encode("ascii"))[:4]


def _xor(a: bytes, b: bytes) -> bytes:
    return bytes(x ^ y for x, y in zip(a, b))


# interface detection follows the ERC-165 convention: XOR of the selectors
ERC165_INTERFACE_ID = selector("supportsInterface(bytes4)")
ESC_FUNCTIONS = (
    "getFQDN()",
    "getSignature()",
    "setFQDN(string[])",
    "setSignature(string)",
)
ESC_INTERFACE_ID = reduce(_xor, (selector(f) for f in ESC_FUNCTIONS))
INVALID_INTERFACE_ID = b"\xff\xff\xff\xff"


def _interface_bytes(interface_id: Union[bytes, str]) -> bytes:
    if isinstance(interface_id, str):
        text = interface_id[2:] if interface_id.startswith("0x") else interface_id
        interface_id = bytes.fromhex(text)
    return interface_id


@contract_kind
class EscContract(Contract):
    """Authenticated contract.

    Constructor parameters: ``owner`` (defaults to the deployer), optional
    ``fqdn`` (dotted text or label list; omit it for one-way binding) and
    optional ``signature`` for the pre-signed two-step deployment.
    """

    kind = "esc"
    views = frozenset({"getFQDN", "getSignature", "supportsInterface", "owner"})
    mutators = {"setFQDN": "set_fqdn", "setSignature": "set_signature"}

    @classmethod
    def construct(cls, ctx: CallContext, init: dict) -> dict:
        owner = Address.parse(init["owner"]) if init.get("owner") else ctx.caller
        fqdn = init.get("fqdn")
        state = {"owner": owner.hex, "fqdn": None, "signature": None}
        if fqdn is not None:
            state["fqdn"] = list(as_fqdn(fqdn).labels)
            ctx.emit("FQDNChanged", {"FQDN": state["fqdn"]})
        signature = init.get("signature")
        if signature is not None:
            if not signature:
                raise EmptySignature("signature must be nonempty")
            state["signature"] = str(signature)
            ctx.emit("SignatureChanged", {"signature": state["signature"]})
        return state

    def _only_owner(self, ctx: CallContext) -> None:
        if ctx.caller.hex != self.state["owner"]:
            raise NotOwner(f"{ctx.caller} is not the owner of {self.address}")

    def owner(self) -> str:
        return self.state["owner"]

    def getFQDN(self) -> Optional[list]:
        return self.state["fqdn"]

    def getSignature(self) -> Optional[str]:
        return self.state["signature"]

    def setFQDN(self, ctx: CallContext, FQDN) -> None:
        self._only_owner(ctx)
        labels = list(as_fqdn(FQDN).labels)
        self.state["fqdn"] = labels
        ctx.emit("FQDNChanged", {"FQDN": labels})

    def setSignature(self, ctx: CallContext, signature: str) -> None:
        self._only_owner(ctx)
        if not isinstance(signature, str) or not signature:
            raise EmptySignature("signature must be nonempty")
        self.state["signature"] = signature
        ctx.emit("SignatureChanged", {"signature": signature})

    def supportsInterface(self, interfaceId) -> bool:
        iid = _interface_bytes(interfaceId)
        return iid in (ESC_INTERFACE_ID, ERC165_INTERFACE_ID)


@contract_kind
class PlainContract(Contract):
    """Any contract that does not implement the authenticated interface.

    Stands in for token sales and the like; it answers interface detection
    for ERC-165 only.
    """

    kind = "plain"
    views = frozenset({"supportsInterface", "owner", "label"})
    mutators = {}

    @classmethod
    def construct(cls, ctx: CallContext, init: dict) -> dict:
        return {"owner": ctx.caller.hex, "label": str(init.get("label", ""))}

    def owner(self) -> str:
        return self.state["owner"]

    def label(self) -> str:
        return self.state["label"]

    def supportsInterface(self, interfaceId) -> bool:
        return _interface_bytes(interfaceId) == ERC165_INTERFACE_ID


# --- pure helpers over stored state ----------------------------------------

def get_fqdn(state: dict) -> Optional[Fqdn]:
    labels = state.get("fqdn")
    return Fqdn.from_labels(labels) if labels is not None else None


def get_signature(state: dict) -> Optional[str]:
    return state.get("signature")


def supports_interface(contract: Contract, interface_id) -> bool:
    try:
        return bool(contract.dispatch(None, "supportsInterface", {"interfaceId": interface_id}))
    except (EscError, ValueError):
        return False
