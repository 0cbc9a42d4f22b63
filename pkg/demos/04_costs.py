"""What asserting an identity costs, at two gas prices.

Gas units come from receipts of an actual run; USD figures use 233 USD/ETH.
"""
from __future__ import annotations

from _common import ALICE, fixture_world
from escauth import Ledger, cost_usd
from escauth.workflow import assert_identity

ETH_USD = 233


def main() -> None:
    ledger = Ledger([ALICE])
    assertion = assert_identity(ledger, ALICE, fixture_world().roles["valid"].identity, registry=None)
    deploy, upload = assertion.receipts
    print(f"{'operation':<16}{'gas':>10}{'1 GWei':>10}{'8 GWei':>10}")
    for name, receipt in (("deployment", deploy), ("signature upload", upload)):
        low, high = (cost_usd(receipt.gas_used, g, ETH_USD) for g in (1, 8))
        print(f"{name:<16}{receipt.gas_used:>10,}{low:>10}{high:>10}")


if __name__ == "__main__":
    main()
