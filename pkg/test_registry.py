#!/usr/bin/env python3
"""
Filename: test_registry.py
Description: Agent lifecycle, EndpointRecord signing, integrity and challenge tests
"""

import copy
import json
import os
import sys
import uuid
from logging.handlers import TimedRotatingFileHandler

import pytest

import agent_requests
from ans_errors import (
    AdapterRejection,
    BadProof,
    ChallengeTimeout,
    DuplicateName,
    InactiveAgent,
    InvalidCSR,
    RevokedAgent,
    SchemaViolation,
    TamperedRecord,
    UnknownAgent,
    UnknownProtocol,
)
from ansname import parse_ansname
from capability_challenge import CallableChallengeClient
from capability_challenge import logger as challenge_logger
from config import ServiceConfig
from conftest import MCP_SENTIMENT, SENTIMENT_ENDPOINT, mcp_extensions
from pki import (
    CertificateBundle,
    build_subject,
    create_csr,
    csr_pem,
    generate_keypair,
    verify_signature,
)
from registry import (
    ACTIVE,
    DEREGISTERED,
    EXPIRED,
    QUARANTINED,
    REVOKED,
    AgentRegistry,
    attach_proof,
    derive_agent_uuid,
)

SENTIMENT = "mcp://sentimentAnalyzer.textAnalysis.ExampleCorp.v1.0.0"
DAY = 86400


@pytest.fixture
def sentiment(agents):
    key, response = agents.register(SENTIMENT, extensions=mcp_extensions())
    return key, response


# ----------------------------------------------------------------- register
def test_register_mcp_agent(registry, sentiment, clock):
    key, response = sentiment
    assert response["status"] == "registered"
    assert response["ansName"] == SENTIMENT
    assert response["endpoint"] == SENTIMENT_ENDPOINT
    assert response["agentUUID"] == derive_agent_uuid(key.public_key())
    assert response["expiresAt"] == int(clock()) + 90 * DAY

    bundle = CertificateBundle.from_pem(response["certificate"]["pem"])
    assert format(bundle.serial, "x") == response["certificate"]["serial"]
    assert bundle.certificate.subject == build_subject(parse_ansname(SENTIMENT))

    record = registry.get_record(response["agentUUID"])
    assert record.status == ACTIVE
    assert record.metadata["mcp.description"] == MCP_SENTIMENT["description"]
    found = registry.lookup("mcp", "sentimentAnalyzer", "textAnalysis", "ExampleCorp")
    assert [r.agent_uuid for r in found] == [response["agentUUID"]]


def test_register_other_protocols(agents, registry):
    _, a2a = agents.register("a2a://translatorBot.DocumentTranslation.exampleCorp.v1.2.3.secure")
    _, acp = agents.register("acp://planner.orchestration.Initech.v2.0.0")
    assert registry.get_record(a2a["agentUUID"]).name.extension == "secure"
    assert registry.get_record(acp["agentUUID"]).metadata["acp.role"] == "worker"


def test_duplicate_name_rejected(agents, sentiment):
    with pytest.raises(DuplicateName):
        agents.register(SENTIMENT, extensions=mcp_extensions())


def test_same_key_cannot_hold_two_names(registry, sentiment):
    key, _ = sentiment
    body = agent_requests.registration_request(
        "mcp://sentimentAnalyzer.textAnalysis.ExampleCorp.v2.0.0", key, mcp_extensions()
    )
    with pytest.raises(DuplicateName):
        registry.register(body)


def test_other_versions_coexist(agents, registry, sentiment):
    agents.register("mcp://sentimentAnalyzer.textAnalysis.ExampleCorp.v1.2.0", extensions=mcp_extensions())
    assert len(registry.lookup("mcp", "sentimentAnalyzer", "textAnalysis", "ExampleCorp")) == 2


def test_unknown_protocol(agents, registry):
    _, body = agents.request(SENTIMENT, extensions=mcp_extensions())
    body["protocol"] = "agentnet"
    with pytest.raises(UnknownProtocol):
        registry.register(body)


def test_schema_violation(agents, registry):
    _, body = agents.request(SENTIMENT, extensions=mcp_extensions())
    del body["certificate"]
    with pytest.raises(SchemaViolation) as info:
        registry.register(body)
    assert {"path": "/certificate", "message": "'certificate' is a required property"} in info.value.details
    with pytest.raises(SchemaViolation):
        registry.register(["not", "an", "object"])


def test_csr_for_another_name_rejected(agents, registry):
    key, body = agents.request(SENTIMENT, extensions=mcp_extensions())
    body["certificate"]["pem"] = csr_pem(create_csr(key, parse_ansname("mcp://impostor.textAnalysis.ExampleCorp.v1")))
    with pytest.raises(InvalidCSR):
        registry.register(body)


def test_declared_subject_must_match_csr(agents, registry):
    _, body = agents.request(SENTIMENT, extensions=mcp_extensions())
    body["certificate"]["subject"] = "CN=someoneElse"
    with pytest.raises(InvalidCSR):
        registry.register(body)


def test_adapter_rejection(agents, registry):
    _, body = agents.request(SENTIMENT, extensions=mcp_extensions("http://sentiment.example.com/analyze"))
    with pytest.raises(AdapterRejection) as info:
        registry.register(body)
    assert any("https://" in v for v in info.value.details)
    assert registry.store.count() == 0


def test_vault_reference(tmp_path, clock):
    vault = tmp_path / "vault"
    vault.mkdir()
    cfg = ServiceConfig(store_dir=str(tmp_path / "store"), dev_no_tls=True, vault_dir=str(vault))
    reg = AgentRegistry.open(cfg, None, clock=clock, challenge_client=CallableChallengeClient(lambda e, i: ("", 0)))
    key, _ = generate_keypair()
    body = agent_requests.registration_request(SENTIMENT, key, mcp_extensions())
    (vault / "sentiment.csr").write_text(body["certificate"]["pem"])

    escaping = copy.deepcopy(body)
    escaping["certificate"]["pem"] = "vault:../outside.csr"
    with pytest.raises(InvalidCSR):
        reg.register(escaping)

    body["certificate"]["pem"] = "vault:sentiment.csr"
    assert reg.register(body)["status"] == "registered"
    reg.store.close()


# -------------------------------------------------------------------- renew
def test_renew_reissues_and_revokes(registry, sentiment, clock):
    key, registered = sentiment
    clock.advance(60)
    response = registry.renew(agent_requests.renewal_request(SENTIMENT, key, int(clock())))
    assert response["status"] == "renewed"
    assert response["revokedSerial"] == registered["certificate"]["serial"]
    assert response["certificate"]["serial"] != registered["certificate"]["serial"]
    assert int(registered["certificate"]["serial"], 16) in registry.crl.revoked
    assert response["expiresAt"] == int(clock()) + 90 * DAY
    assert registry.get_record(registered["agentUUID"]).renewed_at == int(clock())


def test_renew_replay_rejected(registry, sentiment, clock):
    key, _ = sentiment
    clock.advance(10)
    request = agent_requests.renewal_request(SENTIMENT, key, int(clock()))
    registry.renew(copy.deepcopy(request))
    clock.advance(10)
    with pytest.raises(BadProof):
        registry.renew(request)


def test_renew_stale_timestamp_rejected(registry, sentiment, clock):
    key, _ = sentiment
    with pytest.raises(BadProof):
        registry.renew(agent_requests.renewal_request(SENTIMENT, key, int(clock()) - 301))


def test_renew_with_wrong_key_rejected(registry, sentiment, clock):
    other_key, _ = generate_keypair()
    with pytest.raises(BadProof):
        registry.renew(agent_requests.renewal_request(SENTIMENT, other_key, int(clock())))


def test_renew_csr_must_carry_registered_key(registry, sentiment, clock):
    key, _ = sentiment
    other_key, _ = generate_keypair()
    body = {
        "requestType": "renew",
        "ansName": SENTIMENT,
        "csr": csr_pem(create_csr(other_key, parse_ansname(SENTIMENT))),
        "timestamp": int(clock()),
    }
    with pytest.raises(InvalidCSR):
        registry.renew(attach_proof(body, key))


def test_expiry_and_renewal(registry, sentiment, clock):
    key, registered = sentiment
    clock.advance(90 * DAY + 1)
    assert registry.lookup("mcp", "sentimentAnalyzer", "textAnalysis", "ExampleCorp") == []
    assert registry.get_record(registered["agentUUID"]).status == EXPIRED
    with pytest.raises(InactiveAgent):
        registry.get_agent_endpoint_record(registered["agentUUID"])

    registry.renew(agent_requests.renewal_request(SENTIMENT, key, int(clock())))
    assert registry.get_record(registered["agentUUID"]).status == ACTIVE
    assert len(registry.lookup("mcp", "sentimentAnalyzer", "textAnalysis", "ExampleCorp")) == 1


def test_expiry_does_not_undo_concurrent_renewal(registry, sentiment, clock, monkeypatch):
    key, registered = sentiment
    agent_uuid = registered["agentUUID"]
    clock.advance(90 * DAY + 1)
    read_records = registry._records

    def renew_after_read(texts):
        snapshot = read_records(texts)
        monkeypatch.setattr(registry, "_records", read_records)
        registry.renew(agent_requests.renewal_request(SENTIMENT, key, int(clock())))
        return snapshot

    monkeypatch.setattr(registry, "_records", renew_after_read)
    found = registry.lookup("mcp", "sentimentAnalyzer", "textAnalysis", "ExampleCorp")

    record = registry.get_record(agent_uuid)
    assert record.status == ACTIVE
    assert record.certificate.serial != int(registered["certificate"]["serial"], 16)
    assert [r.agent_uuid for r in found] == [agent_uuid]
    assert "expire" not in [e.op for e in registry.audit.entries(agent_uuid)]


def test_sweep_expired(agents, registry, clock):
    for i in range(3):
        agents.register(f"mcp://agent{i}.textAnalysis.ExampleCorp.v1", extensions=mcp_extensions())
    assert registry.sweep_expired() == 0
    clock.advance(91 * DAY)
    assert registry.sweep_expired() == 3
    assert registry.sweep_expired() == 0


# --------------------------------------------------------------- deregister
def test_deregister_by_agent(registry, sentiment, clock):
    key, registered = sentiment
    ack = registry.deregister_request(agent_requests.deregistration_request(SENTIMENT, key, int(clock())))
    assert ack["status"] == DEREGISTERED
    assert ack["alreadyApplied"] is False
    assert int(registered["certificate"]["serial"], 16) in registry.crl.revoked
    assert registry.lookup("mcp", "sentimentAnalyzer", "textAnalysis", "ExampleCorp") == []
    with pytest.raises(InactiveAgent):
        registry.get_agent_endpoint_record(registered["agentUUID"])

    clock.advance(1)
    again = registry.deregister_request(agent_requests.deregistration_request(SENTIMENT, key, int(clock())))
    assert again["alreadyApplied"] is True


def test_deregister_by_operator(registry, sentiment, clock):
    ack = registry.deregister_request(
        agent_requests.deregistration_request(SENTIMENT, registry.signing_key, int(clock()))
    )
    assert ack["status"] == DEREGISTERED
    _, registered = sentiment
    assert registry.get_record(registered["agentUUID"]).status_reason == "deregistered by operator"


def test_deregister_bad_proof(registry, sentiment, clock):
    stranger, _ = generate_keypair()
    with pytest.raises(BadProof):
        registry.deregister_request(agent_requests.deregistration_request(SENTIMENT, stranger, int(clock())))


def test_deregister_unknown(registry, clock):
    key, _ = generate_keypair()
    with pytest.raises(UnknownAgent):
        registry.deregister_request(agent_requests.deregistration_request(SENTIMENT, key, int(clock())))


def test_name_reusable_after_deregistration(registry, agents, sentiment, clock):
    key, registered = sentiment
    registry.deregister_request(agent_requests.deregistration_request(SENTIMENT, key, int(clock())))
    _, again = agents.register(SENTIMENT, extensions=mcp_extensions())
    assert again["agentUUID"] != registered["agentUUID"]


# ------------------------------------------------------------------- revoke
def test_revoke_requires_operator(registry, sentiment, clock):
    key, registered = sentiment
    with pytest.raises(BadProof):
        registry.revoke_request(agent_requests.revocation_request(SENTIMENT, "keyCompromise", key, int(clock())))

    ack = registry.revoke_request(
        agent_requests.revocation_request(SENTIMENT, "keyCompromise", registry.signing_key, int(clock()))
    )
    assert ack["status"] == REVOKED
    record = registry.get_record(registered["agentUUID"])
    assert record.status_reason == "keyCompromise"

    clock.advance(1)
    with pytest.raises(RevokedAgent):
        registry.renew(agent_requests.renewal_request(SENTIMENT, key, int(clock())))


# ---------------------------------------------------------- endpoint record
def test_endpoint_record_is_signed(registry, sentiment, clock):
    _, registered = sentiment
    record = registry.get_agent_endpoint_record(registered["agentUUID"])
    assert verify_signature(record.data, record.signature, registry.signing_bundle.public_key)
    payload = record.payload
    assert payload["endpoint"] == SENTIMENT_ENDPOINT
    assert payload["ansName"] == SENTIMENT
    assert payload["issuedAt"] == int(clock())
    assert payload["ttlSeconds"] == record.ttl_seconds == 300
    response = record.to_response()
    assert response["Endpoint"] == payload["endpoint"]
    assert response["ttl"] == 300


def test_endpoint_record_unknown_agent(registry):
    with pytest.raises(UnknownAgent):
        registry.get_agent_endpoint_record(str(uuid.uuid4()))


def test_tampered_record_refused(registry, sentiment):
    _, registered = sentiment
    agent_uuid = registered["agentUUID"]
    doc = json.loads(registry.store.get(agent_uuid))
    doc["endpoint"] = "https://evil.example.com/steal"
    registry.store.update(agent_uuid, doc["status"], json.dumps(doc))
    with pytest.raises(TamperedRecord):
        registry.get_agent_endpoint_record(agent_uuid)


def test_linked_agents(agents, registry):
    _, helper = agents.register("mcp://tokenizer.textAnalysis.ExampleCorp.v1.0.0", extensions=mcp_extensions())
    _, main = agents.register(
        "mcp://summarizer.textAnalysis.ExampleCorp.v1.0.0",
        extensions=mcp_extensions(dependsOn=["mcp://tokenizer.textAnalysis.ExampleCorp.v1.0.0"]),
    )
    payload = registry.get_agent_endpoint_record(main["agentUUID"]).payload
    assert [link["agentUUID"] for link in payload["linkedAgents"]] == [helper["agentUUID"]]


def test_discovery_document(registry, sentiment):
    _, registered = sentiment
    doc = registry.discovery_document(registered["agentUUID"])
    assert doc["protocol"] == "mcp"
    assert doc["tool"]["description"] == MCP_SENTIMENT["description"]


# --------------------------------------------------------------- challenges
CHALLENGE = {"input": {"text": "I love this product"}, "expected": "positive", "claimed_accuracy": 0.9}


def test_challenge_pass_resets_failures(registry, sentiment, challenge_answers):
    _, registered = sentiment
    agent_uuid = registered["agentUUID"]
    challenge_answers[SENTIMENT_ENDPOINT] = ("negative", 0.95)
    assert not registry.run_capability_challenge(agent_uuid, CHALLENGE).passed
    assert registry.get_record(agent_uuid).consecutive_failures == 1

    challenge_answers[SENTIMENT_ENDPOINT] = ("positive", 0.95)
    assert registry.run_capability_challenge(agent_uuid, CHALLENGE).passed
    assert registry.get_record(agent_uuid).consecutive_failures == 0
    assert len(registry.challenge_history(agent_uuid)) == 2


def test_low_confidence_fails(registry, sentiment, challenge_answers):
    _, registered = sentiment
    challenge_answers[SENTIMENT_ENDPOINT] = ("positive", 0.5)
    assert not registry.run_capability_challenge(registered["agentUUID"], CHALLENGE).passed


def test_three_failures_quarantine(registry, sentiment, challenge_answers, clock):
    key, registered = sentiment
    agent_uuid = registered["agentUUID"]
    challenge_answers[SENTIMENT_ENDPOINT] = ("neutral", 0.99)
    for _ in range(3):
        registry.run_capability_challenge(agent_uuid, CHALLENGE)
    record = registry.get_record(agent_uuid)
    assert record.status == QUARANTINED
    assert record.consecutive_failures == 3
    with pytest.raises(InactiveAgent):
        registry.get_agent_endpoint_record(agent_uuid)
    with pytest.raises(InactiveAgent):
        registry.run_capability_challenge(agent_uuid, CHALLENGE)
    clock.advance(1)
    with pytest.raises(InactiveAgent):
        registry.renew(agent_requests.renewal_request(SENTIMENT, key, int(clock())))
    assert [e.op for e in registry.audit.entries(agent_uuid)][-1] == "quarantine"


def test_challenge_timeout_counts_as_failure(registry, sentiment):
    _, registered = sentiment

    def silent(endpoint, challenge_input):
        raise ChallengeTimeout(f"agent at {endpoint} did not answer")

    registry.challenge_client = CallableChallengeClient(silent)
    with pytest.raises(ChallengeTimeout):
        registry.run_capability_challenge(registered["agentUUID"], CHALLENGE)
    assert registry.get_record(registered["agentUUID"]).consecutive_failures == 1
    assert registry.challenge_history(registered["agentUUID"])[0].error


def test_challenge_traffic_has_its_own_log():
    files = [os.path.basename(h.baseFilename) for h in challenge_logger.handlers
             if isinstance(h, TimedRotatingFileHandler)]
    assert files == ["ans_challenge.log"]


def test_challenge_endpoint_extension(agents, registry, challenge_answers):
    _, registered = agents.register(
        SENTIMENT, extensions=mcp_extensions(challengeEndpoint="https://sentiment.example.com/challenge")
    )
    challenge_answers["https://sentiment.example.com/challenge"] = ("positive", 0.97)
    assert registry.run_capability_challenge(registered["agentUUID"], CHALLENGE).passed


def test_challenge_request_requires_operator(registry, sentiment, challenge_answers, clock):
    key, registered = sentiment
    challenge_answers[SENTIMENT_ENDPOINT] = ("positive", 0.95)
    with pytest.raises(BadProof):
        registry.challenge_request(agent_requests.challenge_request(
            registered["agentUUID"], "I love it", "positive", 0.9, key, int(clock())))
    outcome = registry.challenge_request(agent_requests.challenge_request(
        registered["agentUUID"], "I love it", "positive", 0.9, registry.signing_key, int(clock())))
    assert outcome["passed"] is True


def test_challenge_request_replay_rejected(registry, sentiment, challenge_answers, clock):
    _, registered = sentiment
    agent_uuid = registered["agentUUID"]
    challenge_answers[SENTIMENT_ENDPOINT] = ("positive", 0.95)
    failing = agent_requests.challenge_request(
        agent_uuid, "I love it", "negative", 0.9, registry.signing_key, int(clock()))
    assert registry.challenge_request(failing)["passed"] is False

    with pytest.raises(BadProof):
        registry.challenge_request(failing)
    clock.advance(30 * DAY)
    for _ in range(3):
        with pytest.raises(BadProof):
            registry.challenge_request(failing)

    record = registry.get_record(agent_uuid)
    assert record.status == ACTIVE
    assert record.consecutive_failures == 1
    assert len(registry.challenge_history(agent_uuid)) == 1

    fresh = agent_requests.challenge_request(
        agent_uuid, "I love it", "positive", 0.9, registry.signing_key, int(clock()))
    assert registry.challenge_request(fresh)["passed"] is True


# ------------------------------------------------------------------- misc
def test_audit_chain_after_lifecycle(registry, sentiment, clock):
    key, _ = sentiment
    clock.advance(5)
    registry.renew(agent_requests.renewal_request(SENTIMENT, key, int(clock())))
    clock.advance(5)
    registry.deregister_request(agent_requests.deregistration_request(SENTIMENT, key, int(clock())))
    assert registry.audit.verify().valid
    assert [e.op for e in registry.audit.entries()] == ["register", "renew", "deregister"]


def test_registry_reopens_from_disk(service_config, clock, sentiment):
    _, registered = sentiment
    reopened = AgentRegistry.open(service_config, None, clock=clock,
                                  challenge_client=CallableChallengeClient(lambda e, i: ("", 0)))
    assert reopened.get_record(registered["agentUUID"]).status == ACTIVE
    assert reopened.get_agent_endpoint_record(registered["agentUUID"])
    reopened.store.close()


def test_health(registry, sentiment):
    health = registry.health()
    assert health == {"store": True, "ca": True, "crl": True, "agents": 1}


if __name__ == "__main__":
    sys.exit(pytest.main([__file__]))
