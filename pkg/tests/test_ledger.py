import json
import random
from decimal import Decimal
from fractions import Fraction

import pytest
from hypothesis import given, strategies as st

from escauth import Address, GasSchedule, Ledger, Transaction, cost_usd, keccak256, predict_address
from escauth.errors import ContractRevert, NotOwner, UnknownSender, UnknownTarget
from escauth.ledger import DEPLOY, ZERO_ADDRESS

from conftest import ALICE, BOB
from oracles import contract_address_reference, cost_reference, keccak256_reference

SENDER = Address.parse("0x6ac7ea33f8831ea9dcc53393aaa88b25a785dbf0")

# frozen from oracles.contract_address_reference (pure-Python Keccak)
PREDICTED = {
    0: "0x0db6892f242f147943dedcc515c26f91277d0c14",
    1: "0x344f50a4677bc84b36c8f7a9cc44effe1a794b34",
    7: "0x7a24e7bf1bf745b9e9f905f3cd85f91e0fbd7a83",
    255: "0x9f9066f0daac7734cd960ed1cb5803a767fabcf8",
    256: "0x92974b4ce011e2ac234b169c226f7d4ed5c1c22e",
}


def test_keccak_matches_published_vectors():
    assert keccak256(b"").hex() == "c5d2460186f7233c927e7db2dcc703c0e500b653ca82273b7bfad8045d85a470"
    assert keccak256(b"supportsInterface(bytes4)")[:4].hex() == "01ffc9a7"


@given(st.binary(max_size=400))
def test_keccak_agrees_with_reference(data):
    assert keccak256(data) == keccak256_reference(data)


def test_address_round_trip():
    a = Address.from_label("alice")
    assert Address.parse(str(a)) == a
    assert str(a) == str(a).lower() and len(str(a)) == 42
    assert Address.parse(str(a).upper().replace("0X", "0x")) == a
    with pytest.raises(ValueError):
        Address(b"\x00" * 19)
    with pytest.raises(ValueError):
        Address.parse("0x1234")


@pytest.mark.parametrize("nonce,expected", sorted(PREDICTED.items()))
def test_predict_address_frozen(nonce, expected):
    assert predict_address(SENDER, nonce).hex == expected


def test_predict_then_deploy(ledger):
    predicted = predict_address(ALICE, ledger.nonce(ALICE))
    addr, receipt = ledger.deploy_contract(ALICE, "esc", {"fqdn": "example.org"})
    assert addr == predicted == receipt.created_address
    assert predict_address(ALICE, 0) != predict_address(ALICE, 1)


def test_deploy_twice_distinct_and_nonce(ledger):
    a1, _ = ledger.deploy_contract(ALICE, "esc")
    a2, _ = ledger.deploy_contract(ALICE, "esc")
    assert a1 != a2
    assert ledger.nonce(ALICE) == 2
    assert a1.hex == contract_address_reference(ALICE.raw, 0)
    assert a2.hex == contract_address_reference(ALICE.raw, 1)


def test_deploy_gas_matches_table(ledger):
    _, receipt = ledger.deploy_contract(ALICE, "esc", {"fqdn": "hq.example.org"})
    assert receipt.gas_used == 1_000_000


def test_unknown_sender_and_target(ledger):
    stranger = Address.from_label("stranger")
    with pytest.raises(UnknownSender):
        ledger.deploy_contract(stranger, "esc")
    with pytest.raises(UnknownTarget):
        ledger.transact(ALICE, Address.from_label("nowhere"), "setSignature", {"signature": "x"})
    assert ledger.transactions == []


def test_set_signature_emits_event(ledger):
    addr, _ = ledger.deploy_contract(ALICE, "esc")
    receipt = ledger.transact(ALICE, addr, "setSignature", {"signature": "ecdsa-p256-sha256:AAAA"})
    assert receipt.ok and receipt.gas_used == 120_000
    assert [(e.name, e.payload) for e in receipt.events] == [
        ("SignatureChanged", {"signature": "ecdsa-p256-sha256:AAAA"})]
    assert ledger.get_logs(addr, "SignatureChanged")[0].payload["signature"] == "ecdsa-p256-sha256:AAAA"


def test_revert_keeps_storage_but_consumes_nonce(ledger):
    addr, _ = ledger.deploy_contract(ALICE, "esc")
    ledger.transact(ALICE, addr, "setSignature", {"signature": "first"})
    before = ledger.call(addr, "getSignature")
    nonce = ledger.nonce(BOB)
    receipt = ledger.transact(BOB, addr, "setSignature", {"signature": "evil"})
    assert receipt.status == "revert" and receipt.events == []
    assert ledger.call(addr, "getSignature") == before == "first"
    assert ledger.nonce(BOB) == nonce + 1
    with pytest.raises(NotOwner) as info:
        ledger.transact(BOB, addr, "setSignature", {"signature": "evil"}, raise_on_revert=True)
    assert info.value.receipt.status == "revert"


def test_unknown_operation_reverts(ledger):
    addr, _ = ledger.deploy_contract(ALICE, "esc")
    receipt = ledger.transact(ALICE, addr, "selfDestruct")
    assert receipt.status == "revert"
    with pytest.raises(ContractRevert):
        ledger.call(addr, "setSignature", {"signature": "x"})


def test_read_only_calls_cost_nothing(ledger):
    addr, _ = ledger.deploy_contract(ALICE, "esc")
    n = len(ledger.transactions)
    assert ledger.call(addr, "getSignature") is None
    assert len(ledger.transactions) == n


def test_persistence_round_trip(ledger, tmp_path):
    addr, _ = ledger.deploy_contract(ALICE, "esc", {"fqdn": "hq.example.org"})
    ledger.transact(ALICE, addr, "setSignature", {"signature": "sig"})
    path = tmp_path / "ledger.json"
    ledger.save(path)
    data = json.loads(path.read_text())
    assert set(data) >= {"accounts", "contracts", "transactions", "gas_schedule", "registry_address"}
    assert list(data) == sorted(data)
    loaded = Ledger.load(path)
    assert loaded.dumps() == ledger.dumps()
    assert loaded.call(addr, "getFQDN") == ["org", "example", "hq"]
    assert len(loaded.get_logs(addr)) == 2


def test_replay_is_bit_identical(ledger):
    addr, _ = ledger.deploy_contract(ALICE, "esc", {"fqdn": "hq.example.org"})
    ledger.transact(BOB, addr, "setSignature", {"signature": "nope"})
    ledger.transact(ALICE, addr, "setSignature", {"signature": "sig"})
    ledger.deploy_contract(BOB, "plain", {"label": "token"})
    assert ledger.replay().dumps() == ledger.dumps()


def test_transaction_serialization():
    tx = Transaction(ALICE, DEPLOY, "esc", {"fqdn": "a.org"}, Fraction(3, 2))
    assert Transaction.from_dict(json.loads(json.dumps(tx.to_dict()))) == tx


def test_address_injectivity_brute_force():
    rng = random.Random(1234)
    seen = {}
    senders = [Address(rng.randbytes(20)) for _ in range(100)]
    for i in range(10_000):
        pair = (senders[i % 100], rng.randrange(0, 1 << 20) if i >= 100 * 20 else i // 100)
        addr = predict_address(*pair)
        assert seen.setdefault(addr, pair) == pair
    assert len(seen) >= 9_900


def test_gas_schedule_invariants():
    g = GasSchedule()
    assert 900_000 <= g.deploy_esc <= 1_000_000
    assert 0.08 <= g.set_signature / g.deploy_esc <= 0.12


@pytest.mark.parametrize("gas,gwei,eth,expected", [
    (1_000_000, 1, 233, "0.233"),
    (120_000, 8, 233, "0.224"),
    (120_000, 1, 233, "0.028"),
    (1_000_000, 8, 233, "1.864"),
])
def test_cost_table(gas, gwei, eth, expected):
    assert cost_reference(gas, gwei, eth) == expected
    assert cost_usd(gas, gwei, eth) == Decimal(expected)


def test_cost_zero_gas():
    assert cost_usd(0, 57, 9999) == 0


def test_cost_rejects_negative():
    with pytest.raises(ValueError):
        cost_usd(-1, 1, 1)


@given(st.integers(0, 10**8), st.fractions(0, 500), st.fractions(0, 10**5))
def test_cost_linear(gas, gwei, eth):
    exact = cost_usd(gas, gwei, eth, places=None)
    assert cost_usd(2 * gas, gwei, eth, places=None) == 2 * exact
    assert cost_usd(gas, 2 * gwei, eth, places=None) == 2 * exact
    assert cost_usd(gas, gwei, 2 * eth, places=None) == 2 * exact


@given(st.integers(0, 10**7), st.integers(0, 100), st.integers(0, 5000))
def test_cost_rounding_matches_integer_reference(gas, gwei, eth):
    assert str(cost_usd(gas, gwei, eth)) == cost_reference(gas, gwei, eth)


def test_snapshot_is_independent(ledger):
    addr, _ = ledger.deploy_contract(ALICE, "esc")
    snap = ledger.snapshot()
    ledger.transact(ALICE, addr, "setSignature", {"signature": "later"})
    assert snap.call(addr, "getSignature") is None


def test_registry_at_genesis(ledger):
    assert ledger.registry_address == predict_address(ZERO_ADDRESS, 0)
    assert ledger.kind_of(ledger.registry_address) == "registry"
