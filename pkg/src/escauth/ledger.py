"""Simulated ledger with Ethereum-compatible addressing and a static gas schedule.

The ledger hosts small contract state machines (see :mod:`escauth.contracts`
and :mod:`escauth.registry`), applies transactions strictly one at a time and
records every transaction with its receipt so that the whole state can be
replayed from genesis.  There is no EVM, no balances and no consensus.
"""
from __future__ import annotations

import copy
import json
import logging
import threading
from dataclasses import dataclass, field, asdict
from decimal import ROUND_HALF_UP, Decimal
from fractions import Fraction
from pathlib import Path
from typing import Any, ClassVar, Iterable, Optional, Union

from Crypto.Hash import keccak

from .errors import (
    BadHashLength,
    ContractRevert,
    MalformedDomain,
    UnknownSender,
    UnknownTarget,
)

logger = logging.getLogger(__name__)

Number = Union[int, str, Fraction, Decimal]

# Contract code raises these to abort; anything else is a bug and propagates.
REVERTING = (ContractRevert, MalformedDomain, BadHashLength)


def keccak256(data: bytes) -> bytes:
    """Ethereum's SHA3 (the original Keccak padding, not FIPS-202)."""
    return keccak.new(digest_bits=256, data=data).digest()


@dataclass(frozen=True, order=True)
class Address:
    raw: bytes

    def __post_init__(self):
        if not isinstance(self.raw, bytes) or len(self.raw) != 20:
            raise ValueError(f"address must be 20 bytes, got {self.raw!r}")

    @classmethod
    def parse(cls, text: str) -> "Address":
        text = text.strip()
        if not text.lower().startswith("0x") or len(text) != 42:
            raise ValueError(f"not a 0x-prefixed 40 hex char address: {text!r}")
        try:
            return cls(bytes.fromhex(text[2:]))
        except ValueError:
            raise ValueError(f"not a hex address: {text!r}") from None

    @classmethod
    def from_label(cls, label: str) -> "Address":
        """Stable test address for a human label such as ``"alice"``."""
        return cls(keccak256(label.encode("utf-8"))[12:])

    @property
    def hex(self) -> str:
        return "0x" + self.raw.hex()

    def __str__(self) -> str:
        return self.hex

    def __repr__(self) -> str:
        return f"Address({self.hex})"


ZERO_ADDRESS = Address(bytes(20))


def as_address(value: Union[Address, str, bytes]) -> Address:
    if isinstance(value, Address):
        return value
    if isinstance(value, bytes):
        return Address(value)
    return Address.parse(value)


def _nonce_bytes(nonce: int) -> bytes:
    # minimal big-endian; nonce 0 encodes as the empty string
    return nonce.to_bytes((nonce.bit_length() + 7) // 8, "big")


def predict_address(sender: Address, nonce: int) -> Address:
    """Address a contract deployed by ``sender`` at ``nonce`` will receive.

    ``keccak256(sender ‖ minimal_be(nonce))[12:]``.  The sender part has a
    fixed width and the nonce encoding is minimal, so distinct
    ``(sender, nonce)`` pairs hash distinct preimages.
    """
    if nonce < 0:
        raise ValueError("nonce must be non-negative")
    return Address(keccak256(sender.raw + _nonce_bytes(nonce))[12:])


@dataclass
class GasSchedule:
    deploy_esc: int = 1_000_000
    set_signature: int = 120_000
    set_fqdn: int = 120_000
    registry_insert: int = 100_000

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "GasSchedule":
        return cls(**{k: int(v) for k, v in data.items()})


def cost_usd(gas_used: int, gas_price_gwei: Number, eth_usd: Number,
             places: Optional[int] = 3) -> Union[Decimal, Fraction]:
    """USD cost of ``gas_used`` at a gas price in GWei and an ETH/USD rate.

    Rounded half-up to ``places`` decimals; ``places=None`` returns the exact
    :class:`~fractions.Fraction`.

    >>> cost_usd(1_000_000, 1, 233)
    Decimal('0.233')
    """
    gas = Fraction(gas_used)
    price = Fraction(str(gas_price_gwei)) if isinstance(gas_price_gwei, float) else Fraction(gas_price_gwei)
    rate = Fraction(str(eth_usd)) if isinstance(eth_usd, float) else Fraction(eth_usd)
    if gas < 0 or price < 0 or rate < 0:
        raise ValueError("cost inputs must be non-negative")
    exact = gas * price * rate / 10**9
    if places is None:
        return exact
    quantum = Decimal(1).scaleb(-places)
    value = Decimal(exact.numerator) / Decimal(exact.denominator)
    return value.quantize(quantum, rounding=ROUND_HALF_UP)


@dataclass
class Account:
    address: Address
    nonce: int = 0
    is_contract: bool = False


@dataclass
class Event:
    address: Address
    name: str
    payload: dict

    def to_dict(self) -> dict:
        return {"address": self.address.hex, "name": self.name, "payload": self.payload}

    @classmethod
    def from_dict(cls, data: dict) -> "Event":
        return cls(Address.parse(data["address"]), data["name"], data["payload"])


@dataclass
class Receipt:
    status: str
    gas_used: int
    events: list = field(default_factory=list)
    created_address: Optional[Address] = None
    revert_reason: Optional[str] = None

    @property
    def ok(self) -> bool:
        return self.status == "success"

    def to_dict(self) -> dict:
        return {
            "status": self.status,
            "gas_used": self.gas_used,
            "events": [e.to_dict() for e in self.events],
            "created_address": self.created_address.hex if self.created_address else None,
            "revert_reason": self.revert_reason,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Receipt":
        created = data.get("created_address")
        return cls(
            status=data["status"],
            gas_used=data["gas_used"],
            events=[Event.from_dict(e) for e in data["events"]],
            created_address=Address.parse(created) if created else None,
            revert_reason=data.get("revert_reason"),
        )


DEPLOY = None


@dataclass
class Transaction:
    """A call from ``sender`` to ``target``; ``target=DEPLOY`` creates a contract.

    For deployments ``op`` is the contract kind and ``args`` the constructor
    parameters.
    """

    sender: Address
    target: Optional[Address]
    op: str
    args: dict = field(default_factory=dict)
    gas_price_gwei: Fraction = Fraction(1)

    def to_dict(self) -> dict:
        return {
            "sender": self.sender.hex,
            "target": self.target.hex if self.target is not None else "DEPLOY",
            "op": self.op,
            "args": self.args,
            "gas_price_gwei": str(Fraction(self.gas_price_gwei)),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Transaction":
        target = None if data["target"] == "DEPLOY" else Address.parse(data["target"])
        return cls(Address.parse(data["sender"]), target, data["op"], data.get("args", {}),
                   Fraction(data.get("gas_price_gwei", "1")))


class CallContext:
    """What contract code may see and do while executing."""

    def __init__(self, ledger: "Ledger", caller: Address, address: Address):
        self.ledger = ledger
        self.caller = caller
        self.address = address
        self.events: list[Event] = []

    def emit(self, name: str, payload: dict) -> None:
        self.events.append(Event(self.address, name, copy.deepcopy(payload)))

    def contract_exists(self, address: Address) -> bool:
        return address in self.ledger.contracts


CONTRACT_KINDS: dict[str, type] = {}


def contract_kind(cls):
    CONTRACT_KINDS[cls.kind] = cls
    return cls


class Contract:
    """Base for contract state machines.

    Subclasses list their read-only operations in ``views`` and their state
    changing ones in ``mutators`` (operation name → GasSchedule field).
    State lives in ``self.state`` and must stay JSON-serializable.
    """

    kind: ClassVar[str] = ""
    views: ClassVar[frozenset] = frozenset()
    mutators: ClassVar[dict] = {}

    def __init__(self, address: Address, state: dict):
        self.address = address
        self.state = state

    @classmethod
    def construct(cls, ctx: CallContext, init: dict) -> dict:
        return {}

    def dispatch(self, ctx: Optional[CallContext], op: str, args: dict):
        if op not in self.views and op not in self.mutators:
            raise ContractRevert(f"{self.kind} contract has no operation {op!r}")
        if op in self.mutators and ctx is None:
            raise ContractRevert(f"{op} needs a transaction")
        method = getattr(self, op)
        if op in self.views:
            return method(**args)
        return method(ctx, **args)


@dataclass
class ContractRecord:
    kind: str
    state: dict

    def bind(self, address: Address) -> Contract:
        return CONTRACT_KINDS[self.kind](address, self.state)


class Ledger:
    """In-memory ledger; a single writer applies transactions in order."""

    def __init__(self, accounts: Iterable[Union[Address, str]] = (),
                 gas_schedule: Optional[GasSchedule] = None, with_registry: bool = True):
        self.gas_schedule = gas_schedule or GasSchedule()
        self.accounts: dict[Address, Account] = {}
        self.contracts: dict[Address, ContractRecord] = {}
        self.transactions: list[dict] = []
        self.events: list[Event] = []
        self.registry_address: Optional[Address] = None
        self._lock = threading.RLock()
        self._genesis_accounts = sorted(as_address(a) for a in accounts)
        for addr in self._genesis_accounts:
            self.accounts[addr] = Account(addr)
        if with_registry:
            self._install_registry()

    def _install_registry(self) -> None:
        # the registry is part of genesis: the zero address "deploys" it at nonce 0
        from .registry import RegistryContract

        addr = predict_address(ZERO_ADDRESS, 0)
        self.contracts[addr] = ContractRecord(RegistryContract.kind, RegistryContract.empty_state())
        self.accounts[addr] = Account(addr, 0, True)
        self.registry_address = addr

    # --- reads -----------------------------------------------------------

    def nonce(self, address: Address) -> int:
        return self.accounts[address].nonce

    def contract(self, address: Address) -> Contract:
        try:
            return self.contracts[address].bind(address)
        except KeyError:
            raise UnknownTarget(f"no contract at {address}") from None

    def kind_of(self, address: Address) -> Optional[str]:
        rec = self.contracts.get(address)
        return rec.kind if rec else None

    def call(self, target: Address, op: str, args: Optional[dict] = None):
        """Read-only call; costs nothing and changes nothing."""
        contract = self.contract(target)
        result = contract.dispatch(None, op, dict(args or {}))
        return copy.deepcopy(result)

    def get_logs(self, address: Optional[Address] = None, name: Optional[str] = None) -> list[Event]:
        return [e for e in self.events
                if (address is None or e.address == address) and (name is None or e.name == name)]

    # --- writes ----------------------------------------------------------

    def send_transaction(self, tx: Transaction, raise_on_revert: bool = False) -> Receipt:
        with self._lock:
            if tx.sender not in self.accounts or self.accounts[tx.sender].is_contract:
                raise UnknownSender(f"unknown sender {tx.sender}")
            if tx.target is not None and tx.target not in self.contracts:
                raise UnknownTarget(f"no contract at {tx.target}")
            receipt, error = self._apply(tx)
            self.transactions.append({"tx": tx.to_dict(), "receipt": receipt.to_dict()})
            self.events.extend(receipt.events)
        if error is not None and raise_on_revert:
            error.receipt = receipt
            raise error
        return receipt

    def _apply(self, tx: Transaction):
        sender = self.accounts[tx.sender]
        nonce = sender.nonce
        sender.nonce += 1
        if tx.target is None:
            return self._apply_deploy(tx, nonce)
        record = self.contracts[tx.target]
        contract = record.bind(tx.target)
        gas = getattr(self.gas_schedule, contract.mutators[tx.op]) if tx.op in contract.mutators else 0
        saved = copy.deepcopy(record.state)
        ctx = CallContext(self, tx.sender, tx.target)
        try:
            if tx.op not in contract.mutators:
                raise ContractRevert(f"{record.kind} contract has no mutating operation {tx.op!r}")
            contract.dispatch(ctx, tx.op, copy.deepcopy(tx.args))
        except REVERTING as exc:
            record.state.clear()
            record.state.update(saved)
            logger.debug("transaction reverted: %s", exc)
            return Receipt("revert", gas, [], None, f"{exc.code}: {exc}"), exc
        except (TypeError, ValueError, KeyError) as exc:
            record.state.clear()
            record.state.update(saved)
            err = ContractRevert(f"bad arguments for {tx.op}: {exc}")
            return Receipt("revert", gas, [], None, f"{err.code}: {err}"), err
        return Receipt("success", gas, ctx.events), None

    def _apply_deploy(self, tx: Transaction, nonce: int):
        gas = self.gas_schedule.deploy_esc
        cls = CONTRACT_KINDS.get(tx.op)
        if cls is None:
            err = ContractRevert(f"unknown contract kind {tx.op!r}")
            return Receipt("revert", gas, [], None, f"{err.code}: {err}"), err
        addr = predict_address(tx.sender, nonce)
        ctx = CallContext(self, tx.sender, addr)
        try:
            state = cls.construct(ctx, copy.deepcopy(tx.args))
        except REVERTING as exc:
            return Receipt("revert", gas, [], None, f"{exc.code}: {exc}"), exc
        except (TypeError, ValueError, KeyError) as exc:
            err = ContractRevert(f"bad constructor arguments: {exc}")
            return Receipt("revert", gas, [], None, f"{err.code}: {err}"), err
        self.contracts[addr] = ContractRecord(cls.kind, state)
        self.accounts[addr] = Account(addr, 0, True)
        return Receipt("success", gas, ctx.events, addr), None

    def deploy_contract(self, sender: Address, kind: str, init: Optional[dict] = None,
                        gas_price_gwei: Number = 1):
        """Deploy a contract; returns ``(address, receipt)``.  Reverts raise."""
        receipt = self.send_transaction(
            Transaction(sender, DEPLOY, kind, dict(init or {}), Fraction(gas_price_gwei)),
            raise_on_revert=True)
        return receipt.created_address, receipt

    def transact(self, sender: Address, target: Address, op: str, args: Optional[dict] = None,
                 gas_price_gwei: Number = 1, raise_on_revert: bool = False) -> Receipt:
        return self.send_transaction(
            Transaction(sender, target, op, dict(args or {}), Fraction(gas_price_gwei)),
            raise_on_revert=raise_on_revert)

    # --- persistence -----------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "accounts": {a.hex: {"nonce": acc.nonce, "is_contract": acc.is_contract}
                         for a, acc in self.accounts.items()},
            "contracts": {a.hex: {"kind": rec.kind, "state": rec.state}
                          for a, rec in self.contracts.items()},
            "transactions": self.transactions,
            "gas_schedule": self.gas_schedule.to_dict(),
            "registry_address": self.registry_address.hex if self.registry_address else None,
            "genesis": {"accounts": [a.hex for a in self._genesis_accounts]},
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def from_dict(cls, data: dict) -> "Ledger":
        ledger = cls.__new__(cls)
        ledger.gas_schedule = GasSchedule.from_dict(data["gas_schedule"])
        ledger.accounts = {}
        for hexaddr, acc in data["accounts"].items():
            addr = Address.parse(hexaddr)
            ledger.accounts[addr] = Account(addr, acc["nonce"], acc["is_contract"])
        ledger.contracts = {Address.parse(h): ContractRecord(rec["kind"], rec["state"])
                            for h, rec in data["contracts"].items()}
        ledger.transactions = list(data["transactions"])
        ledger.events = [Event.from_dict(e) for t in ledger.transactions for e in t["receipt"]["events"]]
        reg = data.get("registry_address")
        ledger.registry_address = Address.parse(reg) if reg else None
        ledger._genesis_accounts = [Address.parse(a) for a in data["genesis"]["accounts"]]
        ledger._lock = threading.RLock()
        return ledger

    @classmethod
    def loads(cls, text: str) -> "Ledger":
        return cls.from_dict(json.loads(text))

    @classmethod
    def load(cls, path: Union[str, Path]) -> "Ledger":
        return cls.loads(Path(path).read_text())

    def snapshot(self) -> "Ledger":
        """Independent copy of the committed state, safe to hand to readers."""
        with self._lock:
            return Ledger.from_dict(copy.deepcopy(self.to_dict()))

    def replay(self) -> "Ledger":
        """Rebuild state from genesis by re-applying the recorded transactions."""
        fresh = Ledger(self._genesis_accounts, GasSchedule(**self.gas_schedule.to_dict()),
                       with_registry=self.registry_address is not None)
        for entry in self.transactions:
            fresh.send_transaction(Transaction.from_dict(entry["tx"]))
        return fresh
