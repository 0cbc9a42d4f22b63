import pytest

from escauth import Address, FixtureSource, Ledger, TrustStore, VerifierConfig
from escauth.pki import build_fixture_pki

ALICE = Address.from_label("alice")
BOB = Address.from_label("bob")
MALLORY = Address.from_label("mallory")


def serve(pki, **overrides):
    """Domain → presented chain, as the fixture "web servers" would answer."""
    chains = {role.domain: role.presented for name, role in pki.roles.items() if name != "untrusted"}
    chains.update(overrides)
    return chains


def make_config(pki, chains=None, **kw):
    kw.setdefault("clock", pki.clock)
    kw.setdefault("crls", pki.crls)
    store = kw.pop("trust_store", None) or TrustStore(pki.trust_store)
    return VerifierConfig(store, FixtureSource(chains=chains if chains is not None else serve(pki)), **kw)


@pytest.fixture(scope="session")
def pki():
    return build_fixture_pki(0)


@pytest.fixture
def ledger():
    return Ledger([ALICE, BOB, MALLORY])


@pytest.fixture
def config(pki):
    return make_config(pki)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
