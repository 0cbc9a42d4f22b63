"""Registry of authenticated contracts, keyed by domain and by domain hash.

Anyone may insert.  Bogus entries are harmless because every returned
candidate still has to pass off-chain verification.
"""
from __future__ import annotations

from typing import Optional, Union

from .contracts import Fqdn, as_fqdn
from .errors import BadHashLength, ContractRevert, UnknownContract
from .ledger import Address, CallContext, Contract, Ledger, Receipt, contract_kind, keccak256

DomainEntry = Union[str, Fqdn, bytes]


def domain_hash(domain: Union[str, Fqdn]) -> bytes:
    """keccak256 over the canonical dotted lowercase name, no trailing dot."""
    return keccak256(as_fqdn(domain).dotted.encode("ascii"))


def _hash_bytes(h: Union[bytes, str]) -> bytes:
    if isinstance(h, str):
        text = h[2:] if h.lower().startswith("0x") else h
        try:
            h = bytes.fromhex(text)
        except ValueError:
            raise BadHashLength(f"not a hex digest: {text!r}") from None
    if len(h) != 32:
        raise BadHashLength(f"domain hash must be 32 bytes, got {len(h)}")
    return h


def _add(table: dict, key: str, addr: str) -> None:
    members = set(table.get(key, []))
    members.add(addr)
    table[key] = sorted(members)


@contract_kind
class RegistryContract(Contract):
    kind = "registry"
    views = frozenset({"lookupByDomain", "lookupByHash"})
    mutators = {"register": "registry_insert"}

    @staticmethod
    def empty_state() -> dict:
        return {"by_hash": {}, "by_domain": {}}

    @classmethod
    def construct(cls, ctx: CallContext, init: dict) -> dict:
        return cls.empty_state()

    def register(self, ctx: CallContext, contract: str, domain: Optional[str] = None,
                 hash: Optional[str] = None) -> None:
        target = Address.parse(contract)
        if not ctx.contract_exists(target):
            raise UnknownContract(f"no contract at {target}")
        if (domain is None) == (hash is None):
            raise ContractRevert("register needs exactly one of domain or hash")
        if domain is not None:
            name = as_fqdn(domain).dotted
            digest = domain_hash(name)
            _add(self.state["by_domain"], name, target.hex)
        else:
            name = None
            digest = _hash_bytes(hash)
        _add(self.state["by_hash"], "0x" + digest.hex(), target.hex)
        ctx.emit("ContractRegistered", {"contract": target.hex, "domain": name,
                                        "hash": "0x" + digest.hex()})

    def lookupByDomain(self, domain: str) -> list:
        return list(self.state["by_domain"].get(as_fqdn(domain).dotted, []))

    def lookupByHash(self, hash: str) -> list:
        return list(self.state["by_hash"].get("0x" + _hash_bytes(hash).hex(), []))


def _registry(ledger: Ledger, registry_address: Optional[Address]) -> Address:
    addr = registry_address or ledger.registry_address
    if addr is None:
        raise UnknownContract("ledger has no registry")
    return addr


def register(ledger: Ledger, caller: Address, entry: DomainEntry, contract_addr: Address,
             registry_address: Optional[Address] = None, raise_on_revert: bool = True) -> Receipt:
    """Insert ``contract_addr`` under a plain domain or, for bytes, a bare hash.

    A plain domain also lands in the hash map; a bare hash never reveals the
    domain.
    """
    args = {"contract": contract_addr.hex}
    if isinstance(entry, bytes):
        args["hash"] = "0x" + _hash_bytes(entry).hex()
    else:
        args["domain"] = as_fqdn(entry).dotted
    return ledger.transact(caller, _registry(ledger, registry_address), "register", args,
                           raise_on_revert=raise_on_revert)


def lookup_by_domain(ledger: Ledger, domain: Union[str, Fqdn],
                     registry_address: Optional[Address] = None) -> set:
    name = as_fqdn(domain).dotted
    found = ledger.call(_registry(ledger, registry_address), "lookupByDomain", {"domain": name})
    return {Address.parse(a) for a in found}


def lookup_by_hash(ledger: Ledger, h: Union[bytes, str],
                   registry_address: Optional[Address] = None) -> set:
    digest = _hash_bytes(h)
    found = ledger.call(_registry(ledger, registry_address), "lookupByHash", {"hash": digest.hex()})
    return {Address.parse(a) for a in found}
