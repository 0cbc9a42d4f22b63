"""Assert a web identity for a contract, then authenticate it.

The owner of hq.example.org deploys a contract that names the domain, signs
the contract address with the TLS key, uploads the signature and registers
the contract.  A wallet then runs the four verification steps.
"""
from __future__ import annotations

from _common import ALICE, config_for, fixture_world, show
from escauth import Ledger, authenticate, register, sign_address


def main() -> None:
    pki = fixture_world()
    identity = pki.roles["valid"].identity
    ledger = Ledger([ALICE])

    addr, receipt = ledger.deploy_contract(ALICE, "esc", {"fqdn": "hq.example.org"})
    print(f"deployed {addr} storing {ledger.call(addr, 'getFQDN')} ({receipt.gas_used} gas)")

    endorsement = sign_address(identity, addr)
    print(f"endorsement: {endorsement.encoded[:48]}...")
    ledger.transact(ALICE, addr, "setSignature", {"signature": endorsement.encoded}, raise_on_revert=True)
    register(ledger, ALICE, "hq.example.org", addr)

    print("authenticating with only the contract address:")
    report = authenticate(ledger, addr, config=config_for(pki))
    show(report)


if __name__ == "__main__":
    main()
