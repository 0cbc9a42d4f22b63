"""Certificate renewal invalidates the stored endorsement until it is redone.

After the server switches to a renewed certificate with a fresh key, the old
signature no longer verifies.  Re-signing the same address and uploading the
new signature restores a passing result without redeploying.
"""
from __future__ import annotations

from _common import ALICE, config_for, fixture_world, show
from escauth import Ledger, authenticate, rotate
from escauth.pki import issue_leaf
from escauth.workflow import assert_identity


def main() -> None:
    pki = fixture_world()
    ledger = Ledger([ALICE])
    addr = assert_identity(ledger, ALICE, pki.roles["valid"].identity).address
    renewed = issue_leaf(pki.intermediate, "hq.example.org")
    config = config_for(pki, **{"hq.example.org": renewed.full_chain})

    print("server now presents the renewed certificate:")
    show(authenticate(ledger, addr, config=config))

    ledger.transact(ALICE, addr, "setSignature", {"signature": rotate(renewed, addr).encoded},
                    raise_on_revert=True)
    print("after re-signing and uploading:")
    show(authenticate(ledger, addr, config=config))


if __name__ == "__main__":
    main()
