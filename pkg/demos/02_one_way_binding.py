"""One-way binding: the contract keeps its domain to itself.

Only the website points at the contract, and the registry holds just the
keccak256 of the domain.  A verifier that does not know the domain cannot
authenticate the contract; one that came from the website can.
"""
from __future__ import annotations

from _common import ALICE, config_for, fixture_world, show
from escauth import Ledger, authenticate, domain_hash, lookup_by_domain, lookup_by_hash
from escauth.workflow import assert_identity


def main() -> None:
    pki = fixture_world()
    ledger = Ledger([ALICE])
    assertion = assert_identity(ledger, ALICE, pki.roles["valid"].identity, two_way=False)
    addr = assertion.address
    print(f"contract {addr}, stored domain: {ledger.call(addr, 'getFQDN')}")
    print(f"registry by domain: {sorted(map(str, lookup_by_domain(ledger, 'hq.example.org')))}")
    print(f"registry by hash:   {sorted(map(str, lookup_by_hash(ledger, domain_hash('hq.example.org'))))}")

    print("without the domain:")
    show(authenticate(ledger, addr, config=config_for(pki)))
    print("with the domain the address was found on:")
    show(authenticate(ledger, addr, "hq.example.org", config=config_for(pki)))


if __name__ == "__main__":
    main()
