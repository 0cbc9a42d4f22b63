"""Address swap on a compromised website, caught by the registry.

The legitimate owner registered an authenticated contract.  An attacker
replaces the address on the website with a plain contract and floods the
registry with bogus entries.  The verifier rejects the swapped address and
points at the one registered contract that really verifies.
"""
from __future__ import annotations

from _common import ALICE, MALLORY, config_for, fixture_world, show
from escauth import Ledger, authenticate, register, sign_address
from escauth.workflow import assert_identity


def main() -> None:
    pki = fixture_world()
    ledger = Ledger([ALICE, MALLORY])
    legit = assert_identity(ledger, ALICE, pki.roles["valid"].identity).address
    print(f"legitimate contract: {legit}")

    scam, _ = ledger.deploy_contract(MALLORY, "plain", {"label": "token sale"})
    register(ledger, MALLORY, "hq.example.org", scam)
    rogue = pki.roles["untrusted"].identity  # right name, untrusted root
    for _ in range(10):
        bogus, _ = ledger.deploy_contract(MALLORY, "esc", {"fqdn": "hq.example.org"})
        ledger.transact(MALLORY, bogus, "setSignature", {"signature": sign_address(rogue, bogus).encoded})
        register(ledger, MALLORY, "hq.example.org", bogus)
    print(f"address shown on the hacked website: {scam} (plus 10 bogus registry entries)")

    report = authenticate(ledger, scam, "hq.example.org", config=config_for(pki))
    show(report)
    if report.downgrade:
        alts = ", ".join(str(a) for a in report.downgrade.alternative_contracts)
        print(f"  WARNING: verified contracts exist for {report.downgrade.domain}: {alts}")


if __name__ == "__main__":
    main()
