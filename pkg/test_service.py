#!/usr/bin/env python3
"""
Filename: test_service.py
Description: Registry HTTP API tests, in-process and over a live socket
"""

import json
import socket
import sys
import uuid

import pytest
import requests
from cryptography import x509
from cryptography.x509.oid import NameOID

import agent_requests
from ans_errors import DuplicateName, InvalidEndpoint
from ans_service import PEM_TYPE, ANSService, ServiceRunner
from capability_challenge import CallableChallengeClient
from config import ServiceConfig
from conftest import SENTIMENT_ENDPOINT, mcp_extensions
from pki import CertificateAuthority, create_csr, generate_keypair, save_private_key
from rate_limiter import RateLimiter
from registry import AgentRegistry
from resolver import HttpRegistryClient, Resolver
from schemas import validate

SENTIMENT = "mcp://sentimentAnalyzer.textAnalysis.ExampleCorp.v1.0.0"
LOOKUP = "/v1/agents?protocol=mcp&agentID=sentimentAnalyzer&capability=textAnalysis&provider=ExampleCorp"


@pytest.fixture
def service(registry, clock):
    return ANSService(registry, RateLimiter(clock=clock))


@pytest.fixture
def registered(service, agents):
    key, body = agents.request(SENTIMENT, extensions=mcp_extensions())
    response = service.handle("POST", "/v1/register", body)
    assert response.status == 201, response.body
    return key, response.body


def test_register_returns_201(registered):
    _, body = registered
    assert body["status"] == "registered"
    assert validate("RegistrationResponse", body)


def test_duplicate_register_is_409(service, agents, registered):
    _, body = agents.request(SENTIMENT, extensions=mcp_extensions())
    response = service.handle("POST", "/v1/register", body)
    assert response.status == 409
    assert response.body["code"] == "DuplicateName"


def test_schema_violation_envelope(service):
    response = service.handle("POST", "/v1/register", {"protocol": "mcp"})
    assert response.status == 400
    assert response.body["code"] == "SchemaViolation"
    assert {"path": "/agentID", "message": "'agentID' is a required property"} in response.body["details"]


def test_non_finite_body_rejected(service):
    response = service.handle("POST", "/v1/register", b'{"protocol": "mcp", "version": NaN}')
    assert response.status == 400
    assert response.body["code"] == "SchemaViolation"


def test_unreadable_body_rejected(service):
    assert service.handle("POST", "/v1/renew", b"{not json").status == 400
    assert service.handle("POST", "/v1/renew", b"").status == 400


def test_unknown_route_and_wrong_method(service):
    assert service.handle("GET", "/v1/teleport").status == 404
    assert service.handle("GET", "/v1/register").status == 405
    assert service.handle("POST", "/v1/crl", {}).status == 405


def test_lookup(service, registered):
    _, body = registered
    response = service.handle("GET", LOOKUP)
    assert response.status == 200
    assert response.body["agents"] == [{"ansName": SENTIMENT, "agentUUID": body["agentUUID"]}]
    assert service.handle("GET", "/v1/agents?protocol=mcp").status == 400


def test_endpoint_record_route(service, registered):
    _, body = registered
    response = service.handle("GET", f"/v1/agents/{body['agentUUID']}/record")
    assert response.status == 200
    assert response.headers["X-ANS-TTL"] == "300"
    assert response.body["Endpoint"] == SENTIMENT_ENDPOINT
    assert validate("CapabilityResponse", json.loads(response.encoded()))


def test_endpoint_record_unknown_agent(service):
    response = service.handle("GET", f"/v1/agents/{uuid.uuid4()}/record")
    assert response.status == 404
    assert response.body["code"] == "UnknownAgent"


def test_server_side_resolve(service, registered, agents):
    agents.register("mcp://sentimentAnalyzer.textAnalysis.ExampleCorp.v1.3.0",
                    endpoint="https://sentiment.example.com/v13")
    response = service.handle("POST", "/v1/resolve", agent_requests.capability_request(SENTIMENT, "^1.0.0"))
    assert response.status == 200
    assert response.body["Endpoint"] == "https://sentiment.example.com/v13"

    missing = service.handle("POST", "/v1/resolve",
                             agent_requests.capability_request("mcp://ghost.textAnalysis.ExampleCorp.v1"))
    assert missing.status == 404
    assert missing.body["code"] == "AgentNotFound"

    incompatible = service.handle("POST", "/v1/resolve", agent_requests.capability_request(SENTIMENT, "^9"))
    assert incompatible.status == 409


def test_renew_and_deregister_routes(service, registered, clock):
    key, body = registered
    clock.advance(5)
    renewed = service.handle("POST", "/v1/renew", agent_requests.renewal_request(SENTIMENT, key, int(clock())))
    assert renewed.status == 200
    assert renewed.body["revokedSerial"] == body["certificate"]["serial"]

    clock.advance(5)
    ack = service.handle("POST", "/v1/deregister",
                         agent_requests.deregistration_request(SENTIMENT, key, int(clock())))
    assert ack.status == 200
    assert ack.body["status"] == "deregistered"
    gone = service.handle("GET", f"/v1/agents/{body['agentUUID']}/record")
    assert gone.status == 410


def test_revoke_route_needs_operator(service, registry, registered, clock):
    key, _ = registered
    refused = service.handle("POST", "/v1/revoke",
                             agent_requests.revocation_request(SENTIMENT, "keyCompromise", key, int(clock())))
    assert refused.status == 403
    accepted = service.handle("POST", "/v1/revoke", agent_requests.revocation_request(
        SENTIMENT, "keyCompromise", registry.signing_key, int(clock())))
    assert accepted.status == 200


def test_challenge_routes(service, registry, registered, challenge_answers, clock):
    _, body = registered
    challenge_answers[SENTIMENT_ENDPOINT] = ("positive", 0.93)
    outcome = service.handle("POST", "/v1/challenge", agent_requests.challenge_request(
        body["agentUUID"], {"text": "great"}, "positive", 0.9, registry.signing_key, int(clock())))
    assert outcome.status == 200
    assert outcome.body["passed"] is True
    history = service.handle("GET", f"/v1/agents/{body['agentUUID']}/challenges")
    assert len(history.body["challenges"]) == 1


def test_discovery_route(service, registered):
    _, body = registered
    response = service.handle("GET", f"/v1/agents/{body['agentUUID']}/discovery")
    assert response.body["tool"]["endpoint"] == SENTIMENT_ENDPOINT


def test_crl_and_health(service, registered):
    crl = service.handle("GET", "/v1/crl")
    assert crl.status == 200
    assert crl.content_type == PEM_TYPE
    assert crl.body.startswith("-----BEGIN X509 CRL-----")
    assert "X-CRL-Next-Update" in crl.headers

    health = service.handle("GET", "/v1/healthz")
    assert health.status == 200
    assert health.body["status"] == "ok"
    assert health.body["agents"] == 1


def test_rate_limited_requests_get_429(registry, clock, registered):
    service = ANSService(registry, RateLimiter(capacity=2, refill_rate=1, clock=clock))
    assert service.handle("GET", LOOKUP, client_id="10.0.0.9").status == 200
    assert service.handle("GET", LOOKUP, client_id="10.0.0.9").status == 200
    limited = service.handle("GET", LOOKUP, client_id="10.0.0.9")
    assert limited.status == 429
    assert limited.headers["Retry-After"] == "1"
    assert service.handle("GET", LOOKUP, client_id="10.0.0.10").status == 200
    clock.advance(1)
    assert service.handle("GET", LOOKUP, client_id="10.0.0.9").status == 200


def test_drain_when_idle(service):
    assert service.drain(timeout=0.1)


# ------------------------------------------------------------ live socket
@pytest.fixture
def live(tmp_path, challenge_answers):
    cfg = ServiceConfig(store_dir=str(tmp_path / "live"), dev_no_tls=True, listen="127.0.0.1:0")
    registry = AgentRegistry.open(cfg, None, challenge_client=CallableChallengeClient(
        lambda endpoint, challenge_input: challenge_answers.get(endpoint, ("", 0.0))))
    runner = ServiceRunner(cfg, registry).start()
    host, port = runner.address
    yield registry, HttpRegistryClient(f"http://{host}:{port}", verify=False, timeout=5)
    runner.stop()


def test_http_round_trip(live):
    registry, client = live
    key, _ = generate_keypair()
    body = agent_requests.registration_request(SENTIMENT, key, mcp_extensions())
    registered = client.post("/v1/register", body)
    assert registered["status"] == "registered"

    with pytest.raises(DuplicateName):
        client.post("/v1/register", body)

    resolver = Resolver(client, registry.trust_anchor)
    resolved = resolver.resolve(SENTIMENT, "^1.0.0")
    assert resolved.endpoint == SENTIMENT_ENDPOINT
    assert resolved.agent_uuid == registered["agentUUID"]
    assert client.get("/v1/healthz").json()["status"] == "ok"


def test_http_resolver_rejects_foreign_anchor(live):
    registry, client = live
    key, _ = generate_keypair()
    client.post("/v1/register", agent_requests.registration_request(SENTIMENT, key, mcp_extensions()))
    foreign = CertificateAuthority.create_root(common_name="Other Root")
    resolver = Resolver(client, foreign.certificate, crl_issuers=(registry.ca.certificate,))
    with pytest.raises(InvalidEndpoint):
        resolver.resolve(SENTIMENT)


@pytest.fixture
def tls_live(tmp_path):
    issuer = CertificateAuthority.create_root(common_name="Service Test Root",
                                              algorithm="ecdsa-p256-sha256")
    key, _ = generate_keypair("ecdsa-p256-sha256")
    subject = x509.Name([x509.NameAttribute(NameOID.COMMON_NAME, "127.0.0.1")])
    bundle = issuer.issue_certificate(create_csr(key, subject))
    save_private_key(key, str(tmp_path / "server.key"), None)
    (tmp_path / "server.pem").write_text(bundle.pem)

    cfg = ServiceConfig(store_dir=str(tmp_path / "tls"), listen="127.0.0.1:0",
                        tls_cert=str(tmp_path / "server.pem"), tls_key=str(tmp_path / "server.key"))
    runner = ServiceRunner(cfg, AgentRegistry.open(cfg, None)).start()
    host, port = runner.address
    yield host, port
    runner.stop()


def test_silent_tls_client_does_not_block_accept(tls_live):
    host, port = tls_live
    # connects but never starts the handshake
    with socket.create_connection((host, port)):
        response = requests.get(f"https://{host}:{port}/v1/healthz", verify=False, timeout=5)
    assert response.status_code == 200
    assert response.json()["status"] == "ok"


if __name__ == "__main__":
    sys.exit(pytest.main([__file__]))
