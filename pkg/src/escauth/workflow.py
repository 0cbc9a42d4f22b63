"""The owner-side identity assertion flow in one call."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

from .endorsement import SigningIdentity, predeploy_sign, sign_address
from .ledger import Address, Ledger, Receipt
from .registry import domain_hash, register


@dataclass
class Assertion:
    address: Address
    domain: str
    receipts: list = field(default_factory=list)

    @property
    def gas_used(self) -> int:
        return sum(r.gas_used for r in self.receipts)


def assert_identity(ledger: Ledger, owner: Address, identity: SigningIdentity,
                    domain: Optional[str] = None, two_way: bool = True,
                    registry: Optional[str] = "auto", predeploy: bool = False,
                    algorithm: Optional[str] = None) -> Assertion:
    """Deploy, endorse and (optionally) register an authenticated contract.

    ``registry`` is ``"domain"`` (plain entry, discoverable), ``"hash"``
    (privacy-preserving entry) or ``None``; ``"auto"`` picks ``"domain"`` for
    two-way and ``"hash"`` for one-way binding.  With ``predeploy`` the
    endorsement is computed for the predicted address and passed to the
    constructor, saving the separate upload transaction.
    """
    domain = domain or identity.names[0]
    init = {"fqdn": domain} if two_way else {}
    receipts: list[Receipt] = []
    if predeploy:
        predicted, endorsement = predeploy_sign(identity, owner, ledger.nonce(owner), algorithm)
        init["signature"] = endorsement.encoded
        addr, receipt = ledger.deploy_contract(owner, "esc", init)
        receipts.append(receipt)
        if addr != predicted:
            raise RuntimeError(f"predicted {predicted} but deployed at {addr}")
    else:
        addr, receipt = ledger.deploy_contract(owner, "esc", init)
        receipts.append(receipt)
        endorsement = sign_address(identity, addr, algorithm)
        receipts.append(ledger.transact(owner, addr, "setSignature",
                                        {"signature": endorsement.encoded}, raise_on_revert=True))
    if registry == "auto":
        registry = "domain" if two_way else "hash"
    if registry == "domain":
        receipts.append(register(ledger, owner, domain, addr))
    elif registry == "hash":
        receipts.append(register(ledger, owner, domain_hash(domain), addr))
    return Assertion(addr, domain, receipts)
