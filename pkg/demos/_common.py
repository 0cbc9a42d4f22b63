"""Shared setup for the demo scripts: a fixture PKI and a verifier config."""
from __future__ import annotations

from escauth import Address, FixtureSource, TrustStore, VerifierConfig
from escauth.pki import FixturePki, build_fixture_pki

ALICE = Address.from_label("alice")
MALLORY = Address.from_label("mallory")


def fixture_world(seed: int = 0) -> FixturePki:
    return build_fixture_pki(seed)


def config_for(pki: FixturePki, **served) -> VerifierConfig:
    """Verifier that trusts the fixture root; ``served`` overrides domain → chain."""
    chains = {r.domain: r.presented for name, r in pki.roles.items() if name != "untrusted"}
    chains.update(served)
    return VerifierConfig(TrustStore(pki.trust_store), FixtureSource(chains=chains),
                          clock=pki.clock, crls=pki.crls)


def show(report) -> None:
    for step in report.steps:
        print(f"  step {step.step} {step.outcome:8s} {step.detail}")
    print(f"  result: {report.result}" + (f" ({report.failure})" if report.failure else ""))
