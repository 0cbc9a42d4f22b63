import json
import socket
import ssl
import threading

import pytest

from escauth import (Address, FixtureSource, Fqdn, Ledger, LiveTlsSource, TrustStore, authenticate,
                     check_downgrade, domain_hash, register, sign_address, validate_path, verify_endorsement)
from escauth.endorsement import Endorsement
from escauth.errors import (BrokenChain, CertificateExpired, CertificateNotYetValid, CertificateRevoked,
                            ConnectionFailed, DomainMismatch, DomainUnknown, NameMismatch, NoSignaturePresent,
                            NotEscContract, UntrustedRoot)
from escauth.pki import key_pem, pem
from escauth.verifier import fetch_certificate, fetch_contract_data, resolve_domain
from escauth.workflow import assert_identity

from conftest import ALICE, BOB, MALLORY, make_config, serve


def _steps(report):
    return [s.outcome for s in report.steps]


# --- step 1 ---------------------------------------------------------------

def test_fetch_contract_data(ledger):
    two, _ = ledger.deploy_contract(ALICE, "esc", {"fqdn": "example.org", "signature": "s1"})
    one, _ = ledger.deploy_contract(ALICE, "esc", {"signature": "s2"})
    plain, _ = ledger.deploy_contract(ALICE, "plain")
    empty, _ = ledger.deploy_contract(ALICE, "esc", {"fqdn": "example.org"})
    assert fetch_contract_data(ledger, two) == (Fqdn.parse("example.org"), "s1")
    assert fetch_contract_data(ledger, one) == (None, "s2")
    with pytest.raises(NotEscContract):
        fetch_contract_data(ledger, plain)
    with pytest.raises(NotEscContract):
        fetch_contract_data(ledger, Address.from_label("nothing"))
    with pytest.raises(NotEscContract):
        fetch_contract_data(ledger, ledger.registry_address)
    with pytest.raises(NoSignaturePresent):
        fetch_contract_data(ledger, empty)


def test_resolve_domain():
    ex = Fqdn.parse("example.org")
    assert resolve_domain(None, ex) == ex
    assert resolve_domain(ex, None) == ex
    assert resolve_domain(ex, ex) == ex
    with pytest.raises(DomainMismatch):
        resolve_domain(ex, Fqdn.parse("evil.org"))
    with pytest.raises(DomainUnknown):
        resolve_domain(None, None)


# --- step 2 ---------------------------------------------------------------

def test_fetch_certificate(pki):
    source = FixtureSource(chains=serve(pki))
    chain = fetch_certificate(source, Fqdn.parse("hq.example.org"))
    assert chain == pki.roles["valid"].presented
    with pytest.raises(NameMismatch):
        fetch_certificate(FixtureSource(chains={"example.org": pki.roles["name_mismatch"].presented}),
                          Fqdn.parse("example.org"))
    with pytest.raises(ConnectionFailed):
        fetch_certificate(source, Fqdn.parse("unknown.example"))


def test_fixture_source_from_files(pki, tmp_path):
    single = tmp_path / "chain.pem"
    single.write_bytes(b"".join(pem(c) for c in pki.roles["valid"].presented))
    assert FixtureSource(single).fetch(Fqdn.parse("anything.org")) == pki.roles["valid"].presented
    d = tmp_path / "certs"
    d.mkdir()
    (d / "hq.example.org.pem").write_bytes(single.read_bytes())
    assert FixtureSource(d).fetch(Fqdn.parse("hq.example.org")) == pki.roles["valid"].presented
    with pytest.raises(ConnectionFailed):
        FixtureSource(d).fetch(Fqdn.parse("other.org"))


# --- step 3 ---------------------------------------------------------------

def test_verify_endorsement_bit_flip(pki):
    ident = pki.roles["valid"].identity
    sig = sign_address(ident, ALICE)
    pub = ident.certificate.public_key()
    assert verify_endorsement(pub, ALICE, sig)
    for i in range(len(sig.signature) * 8):
        raw = bytearray(sig.signature)
        raw[i // 8] ^= 1 << (i % 8)
        assert not verify_endorsement(pub, ALICE, Endorsement(sig.algorithm, bytes(raw)))


def test_verify_endorsement_key_type_mismatch(pki):
    ec_sig = sign_address(pki.roles["valid"].identity, ALICE)
    rsa_pub = pki.roles["rsa"].identity.certificate.public_key()
    assert not verify_endorsement(rsa_pub, ALICE, ec_sig)
    rsa_sig = sign_address(pki.roles["rsa"].identity, ALICE)
    assert not verify_endorsement(pki.roles["valid"].identity.certificate.public_key(), ALICE, rsa_sig)


# --- step 4 ---------------------------------------------------------------

@pytest.mark.parametrize("name,error", [
    ("expired", CertificateExpired),
    ("not_yet_valid", CertificateNotYetValid),
    ("revoked", CertificateRevoked),
    ("untrusted", UntrustedRoot),
    ("broken_chain", BrokenChain),
])
def test_validate_path_errors(pki, name, error):
    with pytest.raises(error):
        validate_path(pki.roles[name].presented, TrustStore(pki.trust_store), pki.clock, pki.crls)


def test_validate_path_success_and_revocation_toggle(pki):
    store = TrustStore(pki.trust_store)
    result = validate_path(pki.roles["valid"].presented, store, pki.clock, pki.crls)
    assert result.anchor == pki.root.certificate and result.depth == 3
    assert validate_path(pki.roles["revoked"].presented, store, pki.clock)  # CRLs off


def test_forged_crl_is_ignored(pki):
    from escauth.pki import make_root, revoke
    # a CRL under the intermediate's name but signed by another key
    fake = make_root(pki.intermediate.name, seed=777)
    fake.issued[pki.roles["valid"].serial] = None
    forged = revoke(fake, pki.roles["valid"].serial)
    assert forged.issuer == pki.intermediate.certificate.subject
    assert validate_path(pki.roles["valid"].presented, TrustStore(pki.trust_store), pki.clock, [forged])


def test_trust_store_sensitivity(pki, ledger):
    a = assert_identity(ledger, ALICE, pki.roles["valid"].identity)
    store = TrustStore([pki.root.certificate, pki.rogue_root.certificate])
    assert authenticate(ledger, a.address, config=make_config(pki, trust_store=store)).passed
    report = authenticate(ledger, a.address, config=make_config(pki, trust_store=store.without(pki.root.certificate)))
    assert report.failure == "UntrustedRoot"
    assert _steps(report) == ["success", "success", "success", "failure"]


def test_trust_store_must_be_nonempty():
    with pytest.raises(ValueError):
        TrustStore([])


def test_trust_store_from_dir(pki, tmp_path):
    pki.write(tmp_path)
    store = TrustStore.from_dir(tmp_path / "truststore")
    assert pki.root.certificate in store and pki.rogue_root.certificate not in store


# --- authenticate ------------------------------------------------------------

def test_happy_path(pki, ledger, config):
    a = assert_identity(ledger, ALICE, pki.roles["valid"].identity)
    report = authenticate(ledger, a.address, config=config)
    assert report.passed and report.failure is None
    assert _steps(report) == ["success"] * 4
    assert report.binding == "two-way" and report.domain_used.dotted == "hq.example.org"
    assert report.downgrade_checked and report.downgrade is None
    data = json.loads(report.to_json())
    assert data["schema_version"] == 1 and data["result"] == "PASS"
    assert [s["step"] for s in data["steps"]] == [1, 2, 3, 4]


def test_one_way(pki, ledger, config):
    a = assert_identity(ledger, ALICE, pki.roles["valid"].identity, two_way=False)
    assert ledger.call(a.address, "getFQDN") is None
    assert authenticate(ledger, a.address, "hq.example.org", config=config).passed
    report = authenticate(ledger, a.address, config=config)
    assert report.failure == "DomainUnknown"
    assert _steps(report) == ["failure", "skipped", "skipped", "skipped"]


def test_domain_mismatch(pki, ledger, config):
    a = assert_identity(ledger, ALICE, pki.roles["valid"].identity)
    assert authenticate(ledger, a.address, "evil.org", config=config).failure == "DomainMismatch"


def test_signature_invalid_skips_step_four(pki, ledger, config):
    a = assert_identity(ledger, ALICE, pki.roles["valid"].identity)
    wrong = sign_address(pki.roles["valid"].identity, BOB)
    ledger.transact(ALICE, a.address, "setSignature", {"signature": wrong.encoded})
    report = authenticate(ledger, a.address, config=config)
    assert report.failure == "SignatureMismatch"
    assert _steps(report) == ["success", "success", "failure", "skipped"]


def test_garbage_signature_fails_at_step_three(pki, ledger, config):
    addr, _ = ledger.deploy_contract(ALICE, "esc", {"fqdn": "hq.example.org", "signature": "not an endorsement"})
    report = authenticate(ledger, addr, config=config)
    assert report.failure == "MalformedSignature" and report.steps[2].outcome == "failure"
    addr2, _ = ledger.deploy_contract(ALICE, "esc", {"fqdn": "hq.example.org", "signature": "md5:AAAA"})
    assert authenticate(ledger, addr2, config=config).failure == "UnsupportedAlgorithm"


def test_cross_domain_endorsement(pki, ledger, config):
    """Endorsed by a trusted cert for another domain: the name check catches it."""
    other = pki.roles["name_mismatch"].identity
    addr, _ = ledger.deploy_contract(MALLORY, "esc", {"fqdn": "hq.example.org",
                                                      "signature": sign_address(other, predict(ledger)).encoded})
    cfg = make_config(pki, serve(pki, **{"hq.example.org": pki.roles["name_mismatch"].presented}))
    report = authenticate(ledger, addr, config=cfg)
    assert report.failure == "NameMismatch" and report.steps[1].outcome == "failure"


def predict(ledger):
    from escauth import predict_address
    return predict_address(MALLORY, ledger.nonce(MALLORY))


@pytest.mark.parametrize("role,error", [
    ("expired", "CertificateExpired"),
    ("not_yet_valid", "CertificateNotYetValid"),
    ("revoked", "CertificateRevoked"),
    ("untrusted", "UntrustedRoot"),
    ("broken_chain", "BrokenChain"),
    ("rsa", None),
])
def test_completeness_matrix(pki, role, error):
    ledger = Ledger([ALICE])
    r = pki.roles[role]
    chains = serve(pki, **{r.domain: r.presented})
    a = assert_identity(ledger, ALICE, r.identity)
    report = authenticate(ledger, a.address, config=make_config(pki, chains))
    assert report.failure == error
    if error:
        assert _steps(report) == ["success", "success", "success", "failure"]


def test_revoked_passes_with_crl_off(pki):
    ledger = Ledger([ALICE])
    a = assert_identity(ledger, ALICE, pki.roles["revoked"].identity)
    assert authenticate(ledger, a.address, config=make_config(pki, check_crl=False)).passed


def test_clock_is_an_input(pki):
    from datetime import timedelta
    ledger = Ledger([ALICE])
    a = assert_identity(ledger, ALICE, pki.roles["valid"].identity)
    late = make_config(pki, clock=pki.clock + timedelta(days=400))
    assert authenticate(ledger, a.address, config=late).failure == "CertificateExpired"


def test_authenticate_is_deterministic(pki, ledger, config):
    a = assert_identity(ledger, ALICE, pki.roles["valid"].identity)
    assert authenticate(ledger, a.address, config=config).to_json() == \
        authenticate(ledger.replay(), a.address, config=make_config(pki)).to_json()


def test_authenticate_requires_config(ledger):
    with pytest.raises(ValueError):
        authenticate(ledger, ALICE)


# --- downgrade ---------------------------------------------------------------

def _coindash(pki, legit_registered=True, spam=0, hashed=False):
    ledger = Ledger([ALICE, MALLORY])
    legit = assert_identity(ledger, ALICE, pki.roles["valid"].identity,
                            registry=("hash" if hashed else "domain") if legit_registered else None)
    scam, _ = ledger.deploy_contract(MALLORY, "plain", {"label": "token sale"})
    for i in range(spam):
        kind = ("esc", {"fqdn": "hq.example.org", "signature": f"ecdsa-p256-sha256:{'QUJD' * (i + 1)}"}) \
            if i % 2 else ("plain", {})
        bogus, _ = ledger.deploy_contract(MALLORY, *kind)
        register(ledger, MALLORY, "hq.example.org" if i % 3 else domain_hash("hq.example.org"), bogus)
    register(ledger, MALLORY, "hq.example.org", scam)
    return ledger, legit.address, scam


def test_coindash_finding(pki, config):
    ledger, legit, scam = _coindash(pki, spam=4)
    report = authenticate(ledger, scam, "hq.example.org", config=config)
    assert report.failure == "NotEscContract"
    assert report.downgrade is not None and report.downgrade.alternative_contracts == [legit]
    assert json.loads(report.to_json())["downgrade"]["alternative_contracts"] == [legit.hex]


def test_coindash_finding_via_hash_entry(pki, config):
    ledger, legit, scam = _coindash(pki, hashed=True)
    finding = check_downgrade(scam, "hq.example.org", ledger, config)
    assert finding is not None and finding.alternative_contracts == [legit]


def test_dos_spam_gives_no_finding(pki, config):
    ledger, legit, scam = _coindash(pki, legit_registered=False, spam=12)
    report = authenticate(ledger, scam, "hq.example.org", config=config)
    assert not report.passed and report.downgrade is None and report.downgrade_checked


def test_verifying_website_contract_no_finding(pki, config):
    ledger, legit, _ = _coindash(pki, spam=3)
    report = authenticate(ledger, legit, config=config)
    assert report.passed and report.downgrade is None


def test_multiple_verifying_alternatives_sorted(pki, config):
    ledger, legit, scam = _coindash(pki)
    second = assert_identity(ledger, ALICE, pki.roles["valid"].identity).address
    finding = check_downgrade(scam, "hq.example.org", ledger, config)
    assert finding.alternative_contracts == sorted([legit, second])


def test_downgrade_can_be_disabled(pki, config):
    from dataclasses import replace
    ledger, _, scam = _coindash(pki)
    report = authenticate(ledger, scam, "hq.example.org", config=replace(config, downgrade_check=False))
    assert report.downgrade is None and not report.downgrade_checked


# --- live TLS ----------------------------------------------------------------

def _serve_once(pki, tmp_path, role="valid"):
    r = pki.roles[role]
    cert, key = tmp_path / "chain.pem", tmp_path / "key.pem"
    cert.write_bytes(b"".join(pem(c) for c in r.presented))
    key.write_bytes(key_pem(r.identity.private_key))
    ctx = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
    ctx.load_cert_chain(cert, key)
    listener = socket.create_server(("127.0.0.1", 0))
    port = listener.getsockname()[1]

    def run():
        conn, _ = listener.accept()
        try:
            with ctx.wrap_socket(conn, server_side=True) as tls:
                tls.recv(1)
        except (ssl.SSLError, OSError):
            pass
        finally:
            listener.close()

    thread = threading.Thread(target=run, daemon=True)
    thread.start()
    return port, thread


def test_live_tls_matches_fixture(pki, tmp_path):
    port, thread = _serve_once(pki, tmp_path)
    chain = LiveTlsSource("127.0.0.1", port, timeout=5).fetch(Fqdn.parse("hq.example.org"))
    thread.join(5)
    assert chain == pki.roles["valid"].presented

    ledger = Ledger([ALICE])
    a = assert_identity(ledger, ALICE, pki.roles["valid"].identity)
    port, thread = _serve_once(pki, tmp_path)
    live = make_config(pki, clock=pki.clock)
    live.source = LiveTlsSource("127.0.0.1", port, timeout=5)
    report = authenticate(ledger, a.address, config=live)
    thread.join(5)
    assert report.passed
    assert not live.crl_enabled


def test_live_tls_unreachable():
    sock = socket.socket()
    sock.bind(("127.0.0.1", 0))
    port = sock.getsockname()[1]
    sock.close()
    with pytest.raises(ConnectionFailed):
        LiveTlsSource("127.0.0.1", port, timeout=2).fetch(Fqdn.parse("hq.example.org"))
