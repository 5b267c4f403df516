#!/usr/bin/env python3
"""
Filename: agent_requests.py
Description: Builders for the signed request documents agents and operators send

Proofs are signatures over the canonical request without its ``proof``
member (see registry.attach_proof).
"""

import time
from typing import Any, Dict, Optional

from ansname import ANSName, parse_ansname
from pki import PrivateKey, build_subject, create_csr, csr_pem, subject_text
from registry import attach_proof
from schemas import require_valid

DEFAULT_ISSUER = "CN=ANS Root CA,O=Agent Name Service"


def _name(name: Any) -> ANSName:
    return parse_ansname(name) if isinstance(name, str) else name


def registration_request(
    name: Any,
    key: PrivateKey,
    protocol_extensions: Optional[Dict[str, Any]] = None,
    endpoint: Optional[str] = None,
    issuer: str = DEFAULT_ISSUER,
) -> Dict[str, Any]:
    """RegistrationRequest carrying a fresh CSR for ``key``."""
    n = _name(name)
    csr = create_csr(key, n)
    body: Dict[str, Any] = {
        "requestType": "register",
        "protocol": n.protocol,
        "agentID": n.agent_id,
        "agentCapability": n.capability,
        "provider": n.provider,
        "version": n.version_text,
        "certificate": {
            "subject": subject_text(build_subject(n)),
            "issuer": issuer,
            "pem": csr_pem(csr),
        },
        "protocolExtensions": protocol_extensions or {},
    }
    if n.extension:
        body["extension"] = n.extension
    if endpoint:
        body["endpoint"] = endpoint
    return require_valid("RegistrationRequest", body)


def renewal_request(name: Any, key: PrivateKey, timestamp: Optional[int] = None) -> Dict[str, Any]:
    n = _name(name)
    body = {
        "requestType": "renew",
        "ansName": str(n),
        "csr": csr_pem(create_csr(key, n)),
        "timestamp": int(time.time()) if timestamp is None else int(timestamp),
    }
    return require_valid("RenewalRequest", attach_proof(body, key))


def deregistration_request(name: Any, key: PrivateKey, timestamp: Optional[int] = None) -> Dict[str, Any]:
    """Signed by the agent key or by the registry operator key."""
    body = {
        "requestType": "deregister",
        "ansName": str(_name(name)),
        "timestamp": int(time.time()) if timestamp is None else int(timestamp),
    }
    return require_valid("DeregistrationRequest", attach_proof(body, key))


def revocation_request(name: Any, reason: str, operator_key: PrivateKey,
                       timestamp: Optional[int] = None) -> Dict[str, Any]:
    body = {
        "requestType": "revoke",
        "ansName": str(_name(name)),
        "reason": reason,
        "timestamp": int(time.time()) if timestamp is None else int(timestamp),
    }
    return require_valid("RevocationRequest", attach_proof(body, operator_key))


def challenge_request(agent_uuid: str, challenge_input: Any, expected: str, claimed_accuracy: float,
                      operator_key: PrivateKey, timestamp: Optional[int] = None) -> Dict[str, Any]:
    body = {
        "requestType": "challenge",
        "agentUUID": agent_uuid,
        "input": challenge_input,
        "expected": expected,
        "claimedAccuracy": claimed_accuracy,
        "timestamp": int(time.time()) if timestamp is None else int(timestamp),
    }
    return require_valid("ChallengeRequest", attach_proof(body, operator_key))


def capability_request(name: Any, version_range: Optional[str] = None) -> Dict[str, Any]:
    """CapabilityRequest for server-side resolution (``POST /v1/resolve``)."""
    n = _name(name)
    body = {
        "requestType": "resolve",
        "protocol": n.protocol,
        "agentID": n.agent_id,
        "agentCapability": n.capability,
        "provider": n.provider,
        "version": version_range or n.version_text,
    }
    if n.extension:
        body["extension"] = n.extension
    return require_valid("CapabilityRequest", body)
