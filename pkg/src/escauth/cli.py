"""``escauth`` command line.

stdout carries only the machine-readable result (an address, an endorsement
or JSON); progress and explanations go to stderr.

Exit codes: 0 success / PASS, 1 protocol failure (revert, FAIL),
2 operational error.
"""
from __future__ import annotations

import argparse
import configparser
import contextlib
import fcntl
import json
import logging
import os
import sys
import tempfile
from dataclasses import dataclass
from datetime import datetime, timezone
from decimal import Decimal
from pathlib import Path
from typing import Optional

from .contracts import as_fqdn
from .endorsement import ALGORITHMS, SigningIdentity, predeploy_sign, sign_address
from .errors import ContractRevert, EscError
from .ledger import Address, Ledger, cost_usd
from .pki import build_fixture_pki
from .registry import domain_hash, lookup_by_domain, lookup_by_hash, register
from .verifier import (
    FixtureSource,
    LiveTlsSource,
    TrustStore,
    VerifierConfig,
    authenticate,
    load_crls,
)

log = logging.getLogger("escauth")

EXIT_OK, EXIT_FAIL, EXIT_ERROR = 0, 1, 2

ENV = {
    "ledger": "ESC_LEDGER",
    "trust_store": "ESC_TRUST_STORE",
    "registry": "ESC_REGISTRY",
    "clock": "ESC_CLOCK",
}
DEFAULTS = {
    "ledger": "ledger.json",
    "trust_store": None,
    "registry": None,
    "clock": None,
    "eth_usd": "233",
    "gas_price_gwei": "1",
}
DEFAULT_CONFIG_FILE = "escauth.conf"


class UsageError(Exception):
    pass


@dataclass
class CliConfig:
    ledger_path: Path
    trust_store_dir: Optional[Path]
    registry_address: Optional[Address]
    clock_override: Optional[datetime]
    eth_usd: Decimal
    gas_price_gwei: Decimal


def _read_config_file(path: Optional[str]) -> dict:
    """``key = value`` lines; an optional ``[section]`` header is ignored."""
    if path is None:
        path = os.environ.get("ESC_CONFIG") or DEFAULT_CONFIG_FILE
        if not Path(path).is_file():
            return {}
    text = Path(path).read_text()
    parser = configparser.ConfigParser()
    if not text.lstrip().startswith("["):
        text = "[escauth]\n" + text
    parser.read_string(text)
    out = {}
    for section in parser.sections():
        out.update({k.replace("-", "_"): v.strip() for k, v in parser[section].items()})
    return out


def parse_clock(text: Optional[str]) -> Optional[datetime]:
    if not text:
        return None
    value = datetime.fromisoformat(text.replace("Z", "+00:00"))
    return value if value.tzinfo else value.replace(tzinfo=timezone.utc)


def resolve_config(args: argparse.Namespace, env=None) -> CliConfig:
    """flag > environment > config file > default."""
    env = os.environ if env is None else env
    filed = _read_config_file(getattr(args, "config", None))

    def pick(key):
        flag = getattr(args, key, None)
        if flag is not None:
            return flag
        if key in ENV and env.get(ENV[key]):
            return env[ENV[key]]
        if key in filed:
            return filed[key]
        return DEFAULTS[key]

    registry = pick("registry")
    trust = pick("trust_store")
    return CliConfig(
        ledger_path=Path(pick("ledger")),
        trust_store_dir=Path(trust) if trust else None,
        registry_address=Address.parse(registry) if registry else None,
        clock_override=parse_clock(pick("clock")),
        eth_usd=Decimal(str(pick("eth_usd"))),
        gas_price_gwei=Decimal(str(pick("gas_price_gwei"))),
    )


def account(text: str) -> Address:
    """A 0x address, or a label such as ``alice`` mapped to a stable address."""
    return Address.parse(text) if text.lower().startswith("0x") else Address.from_label(text)


def emit(payload) -> None:
    if isinstance(payload, str):
        print(payload)
    else:
        print(json.dumps(payload, sort_keys=True, indent=2))


@contextlib.contextmanager
def locked_ledger(path: Path, create: bool = False):
    """Exclusive advisory lock around a load-modify-save cycle."""
    lock_path = path.with_name(path.name + ".lock")
    with open(lock_path, "a") as lock:
        fcntl.flock(lock, fcntl.LOCK_EX)
        try:
            ledger = None if create else Ledger.load(path)
            box = {"ledger": ledger}
            yield box
            if box["ledger"] is not None:
                _atomic_write(path, box["ledger"].dumps())
        finally:
            fcntl.flock(lock, fcntl.LOCK_UN)


def _atomic_write(path: Path, text: str) -> None:
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _receipt_json(receipt, cfg: CliConfig) -> dict:
    out = receipt.to_dict()
    out["cost_usd"] = str(cost_usd(receipt.gas_used, cfg.gas_price_gwei, cfg.eth_usd))
    return out


def _registry(cfg: CliConfig, ledger: Ledger) -> Address:
    reg = cfg.registry_address or ledger.registry_address
    if reg is None:
        raise UsageError("no registry address configured")
    return reg


# --- commands --------------------------------------------------------------

def cmd_init(args, cfg: CliConfig) -> int:
    if cfg.ledger_path.exists() and not args.force:
        raise UsageError(f"{cfg.ledger_path} exists; pass --force to overwrite")
    accounts = [account(a) for a in args.account]
    with locked_ledger(cfg.ledger_path, create=True) as box:
        box["ledger"] = Ledger(accounts, with_registry=not args.no_registry)
        ledger = box["ledger"]
    emit({"ledger": str(cfg.ledger_path), "accounts": [a.hex for a in sorted(accounts)],
          "registry_address": ledger.registry_address.hex if ledger.registry_address else None})
    return EXIT_OK


def cmd_deploy(args, cfg: CliConfig) -> int:
    if args.one_way and args.domain:
        raise UsageError("--one-way contracts store no domain; drop --domain")
    owner = account(args.owner)
    sender = account(args.sender) if args.sender else owner
    init = {"owner": owner.hex}
    if args.domain:
        init["fqdn"] = as_fqdn(args.domain).dotted
    if args.signature:
        init["signature"] = args.signature
    with locked_ledger(cfg.ledger_path) as box:
        addr, receipt = box["ledger"].deploy_contract(sender, "esc", init, cfg.gas_price_gwei)
    out = _receipt_json(receipt, cfg)
    out["address"] = addr.hex
    out["binding"] = "two-way" if args.domain else "one-way"
    log.info("deployed %s: %d gas, %s USD at %s GWei and %s USD/ETH", addr, receipt.gas_used,
             out["cost_usd"], cfg.gas_price_gwei, cfg.eth_usd)
    emit(out)
    return EXIT_OK


def cmd_sign(args, cfg: CliConfig) -> int:
    identity = SigningIdentity.load(args.key, args.cert, args.chain)
    if args.address:
        emit(sign_address(identity, Address.parse(args.address), args.algorithm).encoded)
        return EXIT_OK
    if not args.sender:
        raise UsageError("give --address, or --sender (and --nonce) for a not yet deployed contract")
    sender = account(args.sender)
    nonce = args.nonce
    if nonce is None:
        nonce = Ledger.load(cfg.ledger_path).nonce(sender)
    predicted, endorsement = predeploy_sign(identity, sender, nonce, args.algorithm)
    log.info("predicted address of %s at nonce %d", sender, nonce)
    emit(predicted.hex)
    emit(endorsement.encoded)
    return EXIT_OK


def _transact(cfg: CliConfig, sender: Address, target: Address, op: str, payload: dict) -> int:
    with locked_ledger(cfg.ledger_path) as box:
        receipt = box["ledger"].transact(sender, target, op, payload, cfg.gas_price_gwei)
    emit(_receipt_json(receipt, cfg))
    if not receipt.ok:
        log.error("transaction reverted: %s", receipt.revert_reason)
        return EXIT_FAIL
    for event in receipt.events:
        log.info("%s %s", event.name, json.dumps(event.payload, sort_keys=True))
    return EXIT_OK


def cmd_upload(args, cfg: CliConfig) -> int:
    return _transact(cfg, account(args.sender), Address.parse(args.address), "setSignature",
                     {"signature": args.signature})


def cmd_set_fqdn(args, cfg: CliConfig) -> int:
    return _transact(cfg, account(args.sender), Address.parse(args.address), "setFQDN",
                     {"FQDN": list(as_fqdn(args.domain).labels)})


def cmd_register(args, cfg: CliConfig) -> int:
    contract = Address.parse(args.address)
    entry = bytes.fromhex(args.hash[2:] if args.hash.startswith("0x") else args.hash) if args.hash else args.domain
    if args.hash_only and args.domain:
        entry = domain_hash(args.domain)
    with locked_ledger(cfg.ledger_path) as box:
        receipt = register(box["ledger"], account(args.sender), entry, contract,
                           _registry(cfg, box["ledger"]), raise_on_revert=False)
    emit(_receipt_json(receipt, cfg))
    if not receipt.ok:
        log.error("registration reverted: %s", receipt.revert_reason)
        return EXIT_FAIL
    return EXIT_OK


def cmd_lookup(args, cfg: CliConfig) -> int:
    ledger = Ledger.load(cfg.ledger_path)
    reg = _registry(cfg, ledger)
    if args.domain:
        found = lookup_by_domain(ledger, args.domain, reg)
    else:
        found = lookup_by_hash(ledger, args.hash, reg)
    emit(sorted(a.hex for a in found))
    return EXIT_OK


def cmd_verify(args, cfg: CliConfig) -> int:
    if cfg.trust_store_dir is None:
        raise UsageError("no trust store: pass --trust-store or set ESC_TRUST_STORE")
    ledger = Ledger.load(cfg.ledger_path)
    if args.cert_file:
        source = FixtureSource(args.cert_file)
    else:
        source = LiveTlsSource(args.host, args.port)
    check_crl = False if args.no_crl else (True if args.crl else None)
    config = VerifierConfig(
        trust_store=TrustStore.from_dir(cfg.trust_store_dir),
        source=source,
        clock=cfg.clock_override,
        crls=load_crls(args.crl or []),
        check_crl=check_crl,
        registry_address=cfg.registry_address,
        downgrade_check=not args.no_downgrade,
    )
    report = authenticate(ledger, Address.parse(args.address), args.domain, config)
    emit(report.to_json())
    if report.downgrade:
        log.warning("WARNING: %s offers no verifiable endorsement, but these registered contracts "
                    "for %s do: %s", report.contract, report.downgrade.domain.dotted,
                    ", ".join(a.hex for a in report.downgrade.alternative_contracts))
    return EXIT_OK if report.passed else EXIT_FAIL


def cmd_ca_init(args, cfg: CliConfig) -> int:
    pki = build_fixture_pki(args.seed, args.domain)
    manifest = pki.write(args.out)
    emit(manifest)
    return EXIT_OK


def cmd_costs(args, cfg: CliConfig) -> int:
    gas = args.gas if args.gas is not None else args.gas_pos
    gwei = args.gwei if args.gwei is not None else (args.gwei_pos if args.gwei_pos is not None else cfg.gas_price_gwei)
    eth = args.ethusd if args.ethusd is not None else (args.ethusd_pos if args.ethusd_pos is not None else cfg.eth_usd)
    if gas is None:
        raise UsageError("give the amount of gas")
    emit(f"{cost_usd(int(gas), Decimal(str(gwei)), Decimal(str(eth)))} USD")
    return EXIT_OK


# --- parser ----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    # SUPPRESS keeps a subcommand's unset options from clobbering global ones
    common = argparse.ArgumentParser(add_help=False, argument_default=argparse.SUPPRESS)
    common.add_argument("--config", help="key=value config file")
    common.add_argument("--ledger", help="ledger state file (env ESC_LEDGER)")
    common.add_argument("--trust-store", dest="trust_store", help="directory of trusted root PEMs (env ESC_TRUST_STORE)")
    common.add_argument("--registry", help="registry contract address (env ESC_REGISTRY)")
    common.add_argument("--clock", help="ISO-8601 validation time (env ESC_CLOCK)")
    common.add_argument("--eth-usd", dest="eth_usd", help="USD per ETH for cost lines")
    common.add_argument("--gas-price-gwei", dest="gas_price_gwei", help="gas price in GWei")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="escauth", description=__doc__.splitlines()[0], parents=[common])
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("init", parents=[common], help="create a ledger file")
    p.add_argument("--account", action="append", default=[], help="genesis account (0x address or label)")
    p.add_argument("--no-registry", action="store_true")
    p.add_argument("--force", action="store_true")
    p.set_defaults(func=cmd_init)

    p = sub.add_parser("deploy", parents=[common], help="deploy an authenticated contract")
    p.add_argument("--owner", required=True)
    p.add_argument("--from", dest="sender", help="deploying account (default: owner)")
    p.add_argument("--domain", help="store this domain (two-way binding)")
    p.add_argument("--one-way", action="store_true", help="store no domain")
    p.add_argument("--signature", help="endorsement made in advance for the predicted address")
    p.set_defaults(func=cmd_deploy)

    p = sub.add_parser("sign", parents=[common], help="endorse a contract address")
    p.add_argument("--key", required=True)
    p.add_argument("--cert", required=True)
    p.add_argument("--chain")
    p.add_argument("--address")
    p.add_argument("--sender")
    p.add_argument("--nonce", type=int)
    p.add_argument("--algorithm", choices=ALGORITHMS)
    p.set_defaults(func=cmd_sign)

    p = sub.add_parser("upload", parents=[common], help="store an endorsement in its contract")
    p.add_argument("--address", required=True)
    p.add_argument("--signature", required=True)
    p.add_argument("--from", dest="sender", required=True)
    p.set_defaults(func=cmd_upload)

    p = sub.add_parser("set-fqdn", parents=[common], help="store or change the contract's domain")
    p.add_argument("--address", required=True)
    p.add_argument("--domain", required=True)
    p.add_argument("--from", dest="sender", required=True)
    p.set_defaults(func=cmd_set_fqdn)

    p = sub.add_parser("register", parents=[common], help="add a contract to the registry")
    p.add_argument("--address", required=True)
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--domain")
    group.add_argument("--hash", help="0x keccak256 of the domain")
    p.add_argument("--hash-only", action="store_true", help="with --domain: insert only its hash")
    p.add_argument("--from", dest="sender", required=True)
    p.set_defaults(func=cmd_register)

    p = sub.add_parser("verify", parents=[common], help="authenticate a contract")
    p.add_argument("--address", required=True)
    p.add_argument("--domain", help="domain the address was obtained from")
    p.add_argument("--cert-file", help="PEM chain file, or directory of <domain>.pem files")
    p.add_argument("--host", help="TLS host to contact (default: the domain)")
    p.add_argument("--port", type=int, default=443)
    p.add_argument("--crl", action="append", help="PEM CRL file (repeatable)")
    p.add_argument("--no-crl", action="store_true")
    p.add_argument("--no-downgrade", action="store_true", help="skip the registry downgrade check")
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("lookup", parents=[common], help="registry lookup")
    group = p.add_mutually_exclusive_group(required=True)
    group.add_argument("--domain")
    group.add_argument("--hash")
    p.set_defaults(func=cmd_lookup)

    p = sub.add_parser("ca", parents=[common], help="test PKI fixtures")
    ca_sub = p.add_subparsers(dest="ca_command", required=True)
    q = ca_sub.add_parser("init", parents=[common], help="write the fixture PKI")
    q.add_argument("--seed", type=int, default=0)
    q.add_argument("--out", required=True)
    q.add_argument("--domain", default="hq.example.org")
    q.set_defaults(func=cmd_ca_init)

    p = sub.add_parser("costs", parents=[common], help="USD cost of an amount of gas")
    p.add_argument("gas_pos", nargs="?", type=int)
    p.add_argument("gwei_pos", nargs="?", type=Decimal)
    p.add_argument("ethusd_pos", nargs="?", type=Decimal)
    p.add_argument("--gas", type=int)
    p.add_argument("--gwei", type=Decimal)
    p.add_argument("--ethusd", type=Decimal)
    p.set_defaults(func=cmd_costs)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if getattr(args, "verbose", False) else logging.INFO,
                        format="%(message)s", stream=sys.stderr, force=True)
    try:
        cfg = resolve_config(args)
        return args.func(args, cfg)
    except ContractRevert as exc:
        log.error("%s: %s", exc.code, exc)
        return EXIT_FAIL
    except EscError as exc:
        log.error("%s: %s", exc.code, exc)
        return EXIT_ERROR
    except (UsageError, OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        log.error("error: %s", exc)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
