#!/usr/bin/env python3
"""
Filename: registry.py
Description: Agent Registry and Registration Authority

Handles the agent lifecycle (register, renew, deregister, revoke), answers
lookups, signs EndpointRecords at read time, derives agent UUIDs and runs
capability challenges. Every mutation is written to the agent store and
appended to the hash-chained audit log; a stored record whose hash no
longer matches the audit log is refused at resolution time.

Status transitions: active -> expired | revoked | deregistered | quarantined,
and expired -> active through renewal only.
"""

import hashlib
import json
import os
import threading
import time
import uuid
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional

from cryptography import x509
from cryptography.x509.oid import NameOID

from adapters import AdapterRegistry, default_adapters
from agent_store import AgentStore
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
from ansname import KNOWN_PROTOCOLS, ANSName, is_ansname, parse_ansname
from audit_log import AuditLog
from capability_challenge import ChallengeClient, HttpChallengeClient
from config import (
    AUDIT_LOG_FILENAME,
    CA_DIRNAME,
    CERT_VALIDITY_DAYS,
    CHALLENGE_FAILURE_THRESHOLD,
    DEFAULT_TTL_SECONDS,
    REGISTRY_CERT_VALIDITY_DAYS,
    RENEWAL_MAX_SKEW_SECONDS,
    STORE_DB_FILENAME,
    ServiceConfig,
)
from logging_config import setup_registry_logger
from pki import (
    CertificateAuthority,
    CertificateBundle,
    PrivateKey,
    PublicKey,
    RevocationList,
    Signature,
    build_subject,
    create_csr,
    generate_keypair,
    load_certificates,
    load_csr,
    load_private_key,
    not_after,
    public_key_der,
    same_public_key,
    save_private_key,
    sign,
    subject_text,
    verify_csr,
    verify_signature,
)
from schemas import canonical_digest, canonicalize, require_valid, signing_bytes

logger = setup_registry_logger()

# Fixed namespace for agent UUIDv5 derivation
ANS_NAMESPACE = uuid.UUID("5c6b1f0e-3d2a-4e8b-9f71-a4c2d8e6b913")

ACTIVE = "active"
EXPIRED = "expired"
REVOKED = "revoked"
DEREGISTERED = "deregistered"
QUARANTINED = "quarantined"
STATUSES = (ACTIVE, EXPIRED, REVOKED, DEREGISTERED, QUARANTINED)
# Records in these states no longer hold their name
_RELEASED = (DEREGISTERED, REVOKED)


def derive_agent_uuid(public_key: PublicKey) -> str:
    """UUIDv5(ANS namespace, sha256 hex of the DER SubjectPublicKeyInfo)."""
    digest = hashlib.sha256(public_key_der(public_key)).hexdigest()
    return str(uuid.uuid5(ANS_NAMESPACE, digest))


def record_hash(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def attach_proof(body: Dict[str, Any], key: PrivateKey) -> Dict[str, Any]:
    """Return ``body`` with ``proof`` = signature over its canonical form."""
    unsigned = {k: v for k, v in body.items() if k != "proof"}
    return {**unsigned, "proof": sign(signing_bytes(unsigned), key).to_text()}


# ================================ RECORDS ================================== #
@dataclass
class AgentRecord:
    name: ANSName
    agent_uuid: str
    certificate: CertificateBundle
    endpoint: str
    protocol_extensions: Dict[str, Any]
    registered_at: int
    expires_at: int
    renewed_at: Optional[int] = None
    status: str = ACTIVE
    status_reason: Optional[str] = None
    consecutive_failures: int = 0
    last_proof_at: Optional[int] = None
    last_challenge_at: Optional[int] = None
    metadata: Dict[str, Any] = field(default_factory=dict)

    def to_json(self) -> Dict[str, Any]:
        return {
            "ansName": str(self.name),
            "agentUUID": self.agent_uuid,
            "certificate": self.certificate.pem,
            "endpoint": self.endpoint,
            "protocolExtensions": self.protocol_extensions,
            "normalizedMetadata": self.metadata,
            "registeredAt": self.registered_at,
            "renewedAt": self.renewed_at,
            "expiresAt": self.expires_at,
            "status": self.status,
            "statusReason": self.status_reason,
            "consecutiveFailures": self.consecutive_failures,
            "lastProofAt": self.last_proof_at,
            "lastChallengeAt": self.last_challenge_at,
        }

    @classmethod
    def from_json(cls, doc: Dict[str, Any]) -> "AgentRecord":
        return cls(
            name=parse_ansname(doc["ansName"]),
            agent_uuid=doc["agentUUID"],
            certificate=CertificateBundle.from_pem(doc["certificate"]),
            endpoint=doc["endpoint"],
            protocol_extensions=doc.get("protocolExtensions") or {},
            registered_at=int(doc["registeredAt"]),
            expires_at=int(doc["expiresAt"]),
            renewed_at=doc.get("renewedAt"),
            status=doc.get("status", ACTIVE),
            status_reason=doc.get("statusReason"),
            consecutive_failures=int(doc.get("consecutiveFailures", 0)),
            last_proof_at=doc.get("lastProofAt"),
            last_challenge_at=doc.get("lastChallengeAt"),
            metadata=doc.get("normalizedMetadata") or {},
        )

    @property
    def public_key(self) -> PublicKey:
        return self.certificate.public_key


@dataclass(frozen=True)
class EndpointRecord:
    """Registry-signed resolution payload."""

    data: bytes
    signature: Signature
    cert: CertificateBundle
    ttl_seconds: int

    @property
    def payload(self) -> Dict[str, Any]:
        return json.loads(self.data.decode("utf-8"))

    def to_response(self) -> Dict[str, Any]:
        """CapabilityResponse document."""
        payload = self.payload
        return {
            "Endpoint": payload["endpoint"],
            "signature": self.signature.to_text(),
            "cert": self.cert.pem,
            "data": payload,
            "ttl": self.ttl_seconds,
        }

    @classmethod
    def from_response(cls, doc: Dict[str, Any]) -> "EndpointRecord":
        """Rebuild from a CapabilityResponse; signed bytes are the canonical ``data``."""
        return cls(
            data=canonicalize(doc["data"]),
            signature=Signature.from_text(doc["signature"]),
            cert=CertificateBundle.from_pem(doc["cert"]),
            ttl_seconds=int(doc.get("ttl") or doc["data"]["ttlSeconds"]),
        )


@dataclass(frozen=True)
class ChallengeOutcome:
    agent_uuid: str
    challenge_id: str
    expected: str
    received: str
    confidence: float
    claimed_accuracy: float
    passed: bool
    at: int
    error: Optional[str] = None

    def to_json(self) -> Dict[str, Any]:
        return {
            "agentUUID": self.agent_uuid,
            "challengeId": self.challenge_id,
            "expected": self.expected,
            "received": self.received,
            "confidence": self.confidence,
            "claimedAccuracy": self.claimed_accuracy,
            "passed": self.passed,
            "at": self.at,
            "error": self.error,
        }

    @classmethod
    def from_json(cls, doc: Dict[str, Any]) -> "ChallengeOutcome":
        return cls(
            agent_uuid=doc["agentUUID"],
            challenge_id=doc["challengeId"],
            expected=doc["expected"],
            received=doc["received"],
            confidence=float(doc["confidence"]),
            claimed_accuracy=float(doc["claimedAccuracy"]),
            passed=bool(doc["passed"]),
            at=int(doc["at"]),
            error=doc.get("error"),
        )


# ================================ REGISTRY ================================= #
class AgentRegistry:
    """Authoritative agent store plus Registration Authority duties."""

    def __init__(
        self,
        store: AgentStore,
        ca: CertificateAuthority,
        signing_key: PrivateKey,
        signing_bundle: CertificateBundle,
        audit: AuditLog,
        adapters: Optional[AdapterRegistry] = None,
        clock: Callable[[], float] = time.time,
        ttl_seconds: int = DEFAULT_TTL_SECONDS,
        cert_validity_days: int = CERT_VALIDITY_DAYS,
        challenge_client: Optional[ChallengeClient] = None,
        challenge_threshold: int = CHALLENGE_FAILURE_THRESHOLD,
        renewal_skew_seconds: int = RENEWAL_MAX_SKEW_SECONDS,
        vault_dir: Optional[str] = None,
    ):
        if ttl_seconds <= 0:
            raise ValueError("ttl_seconds must be > 0")
        self.store = store
        self.ca = ca
        self.signing_key = signing_key
        self.signing_bundle = signing_bundle
        self.audit = audit
        self.adapters = adapters or default_adapters()
        self.clock = clock
        self.ttl_seconds = ttl_seconds
        self.cert_validity_days = cert_validity_days
        self.challenge_client = challenge_client or HttpChallengeClient()
        self.challenge_threshold = challenge_threshold
        self.renewal_skew_seconds = renewal_skew_seconds
        self.vault_dir = vault_dir
        self._lock = threading.RLock()

    @classmethod
    def open(
        cls,
        config: ServiceConfig,
        passphrase: Optional[bytes],
        clock: Callable[[], float] = time.time,
        challenge_client: Optional[ChallengeClient] = None,
    ) -> "AgentRegistry":
        """Bootstrap CA, registry signing identity, store and audit log under ``config.store_dir``."""
        ca_dir = os.path.join(config.store_dir, CA_DIRNAME)
        ca = CertificateAuthority.load_or_create(ca_dir, passphrase, clock=clock)
        signing_key, signing_bundle = _load_or_issue_signing_identity(ca, ca_dir, passphrase, clock)
        return cls(
            store=AgentStore(os.path.join(config.store_dir, STORE_DB_FILENAME)),
            ca=ca,
            signing_key=signing_key,
            signing_bundle=signing_bundle,
            audit=AuditLog(os.path.join(config.store_dir, AUDIT_LOG_FILENAME), clock=clock),
            adapters=default_adapters(
                config.enabled_protocols, config.acp_roles, config.require_tls_endpoints
            ),
            clock=clock,
            ttl_seconds=config.default_ttl_seconds,
            cert_validity_days=config.cert_validity_days,
            challenge_client=challenge_client,
            challenge_threshold=config.challenge_failure_threshold,
            vault_dir=config.vault_dir,
        )

    # ---------------------------------------------------------- properties
    @property
    def trust_anchor(self) -> x509.Certificate:
        """Root certificate clients pin to verify resolutions."""
        return self.ca.chain[-1] if self.ca.chain else self.ca.certificate

    @property
    def crl(self) -> RevocationList:
        return self.ca.crl

    def _now(self) -> int:
        return int(self.clock())

    # ---------------------------------------------------------- persistence
    def _save(self, record: AgentRecord, op: str, insert: bool = False) -> None:
        text = canonicalize(record.to_json()).decode("utf-8")
        if insert:
            if not self.store.insert(record.agent_uuid, record.name.lookup_key,
                                     record.name.version_text, record.status, text):
                raise DuplicateName(f"agent key already registered as {record.agent_uuid}")
        else:
            self.store.update(record.agent_uuid, record.status, text)
        self.audit.append(op, record.agent_uuid, record_hash(text))

    def _load(self, agent_uuid: str, check_integrity: bool = False) -> AgentRecord:
        text = self.store.get(agent_uuid)
        if text is None:
            raise UnknownAgent(f"no agent with UUID {agent_uuid}")
        if check_integrity and record_hash(text) != self.audit.last_record_hash(agent_uuid):
            logger.critical(f"[Registry] Stored record {agent_uuid} does not match the audit log")
            raise TamperedRecord(f"record {agent_uuid} was modified outside the registry")
        return AgentRecord.from_json(json.loads(text))

    def _records(self, texts: List[str]) -> List[AgentRecord]:
        return [AgentRecord.from_json(json.loads(t)) for t in texts]

    def _expire_if_due(self, record: AgentRecord) -> AgentRecord:
        if record.status != ACTIVE or record.expires_at > self._now():
            return record
        with self._lock:
            # the snapshot may predate a renewal that committed since it was read
            current = self._load(record.agent_uuid)
            if current.status != ACTIVE or current.expires_at > self._now():
                return current
            current.status = EXPIRED
            current.status_reason = "certificate expired"
            self._save(current, "expire")
        logger.info(f"[Registry] {current.name} expired")
        return current

    def find_by_name(self, name: ANSName, include_released: bool = False) -> List[AgentRecord]:
        """Records with the same 5-tuple as ``name`` (extension ignored)."""
        records = [
            r for r in self._records(self.store.find(name.lookup_key))
            if r.name.version.compare(name.version) == 0
        ]
        if not include_released:
            records = [r for r in records if r.status not in _RELEASED]
        return records

    def _one_by_name(self, name: ANSName) -> AgentRecord:
        records = self.find_by_name(name, include_released=True)
        if not records:
            raise UnknownAgent(f"no agent registered as {name}")
        held = [r for r in records if r.status not in _RELEASED]
        pool = held or records
        return max(pool, key=lambda r: (r.registered_at, r.agent_uuid))

    def _resolve_pem(self, value: str) -> str:
        if not value.startswith("vault:"):
            return value
        if not self.vault_dir:
            raise InvalidCSR("vault references are not configured on this registry")
        root = os.path.realpath(self.vault_dir)
        path = os.path.realpath(os.path.join(root, value[len("vault:"):]))
        if not path.startswith(root + os.sep):
            raise InvalidCSR(f"vault reference {value!r} escapes the vault")
        try:
            with open(path, "r", encoding="ascii") as f:
                return f.read()
        except OSError as e:
            raise InvalidCSR(f"cannot read vault reference {value!r}: {e}")

    def _check_timestamp(self, timestamp: int, last_accepted: Optional[int]) -> None:
        now = self._now()
        if abs(now - int(timestamp)) > self.renewal_skew_seconds:
            raise BadProof(f"request timestamp {timestamp} outside the accepted window")
        if last_accepted is not None and int(timestamp) <= last_accepted:
            raise BadProof("request timestamp not newer than the last accepted request")

    def _operator_signed(self, body: Dict[str, Any]) -> bool:
        proof = body.get("proof")
        return bool(proof) and verify_signature(
            signing_bytes(body), proof, self.signing_bundle.public_key
        )

    # ------------------------------------------------------------- register
    def register(self, request: Dict[str, Any]) -> Dict[str, Any]:
        """
        Validate a registration request, issue the agent certificate and
        persist an active record.

        Returns:
            dict: RegistrationResponse

        Raises:
            SchemaViolation, UnknownProtocol, MalformedName, InvalidCSR,
            AdapterRejection, DuplicateName
        """
        if not isinstance(request, dict):
            raise SchemaViolation("registration request must be a JSON object")
        protocol = request.get("protocol")
        if isinstance(protocol, str) and protocol.lower() not in KNOWN_PROTOCOLS:
            raise UnknownProtocol(f"protocol {protocol!r} is not supported")
        require_valid("RegistrationRequest", request)

        name = ANSName(
            protocol=request["protocol"].lower(),
            agent_id=request["agentID"],
            capability=request["agentCapability"],
            provider=request["provider"],
            version=request["version"],
            extension=request.get("extension"),
        )
        adapter = self.adapters.get(name.protocol)

        csr = load_csr(self._resolve_pem(request["certificate"]["pem"]))
        if not verify_csr(csr):
            raise InvalidCSR("CSR self-signature does not verify")
        if csr.subject != build_subject(name):
            raise InvalidCSR(
                f"CSR subject {subject_text(csr.subject)} does not match "
                f"{subject_text(build_subject(name))}"
            )
        if request["certificate"]["subject"] != subject_text(csr.subject):
            raise InvalidCSR("certificate.subject does not match the CSR subject")

        extensions = request.get("protocolExtensions") or {}
        metadata = adapter.parse_metadata(extensions)
        verdict = adapter.validate_registration(request)
        if not verdict:
            raise AdapterRejection(f"{name.protocol} adapter rejected {name}", list(verdict.violations))
        endpoint = request.get("endpoint") or adapter.endpoint_from(metadata)

        agent_uuid = derive_agent_uuid(csr.public_key())
        with self._lock:
            if self.find_by_name(name):
                raise DuplicateName(f"{name} is already registered")
            if self.store.get(agent_uuid) is not None:
                raise DuplicateName(f"agent key already registered as {agent_uuid}")
            bundle = self.ca.issue_certificate(csr, self.cert_validity_days)
            now = self._now()
            record = AgentRecord(
                name=name,
                agent_uuid=agent_uuid,
                certificate=bundle,
                endpoint=endpoint,
                protocol_extensions=extensions,
                registered_at=now,
                expires_at=bundle.not_after,
                metadata=metadata,
            )
            self._save(record, "register", insert=True)
        logger.info(f"[Registry] Registered {name} as {agent_uuid} -> {endpoint}")

        return require_valid("RegistrationResponse", {
            "status": "registered",
            "ansName": str(name),
            "agentUUID": agent_uuid,
            "endpoint": endpoint,
            "certificate": {
                "pem": bundle.pem,
                "serial": format(bundle.serial, "x"),
                "notAfter": bundle.not_after,
            },
            "registeredAt": record.registered_at,
            "expiresAt": record.expires_at,
        })

    # ---------------------------------------------------------------- renew
    def renew(self, request: Dict[str, Any]) -> Dict[str, Any]:
        """
        Re-issue an agent certificate for the same key and revoke the old one.

        Raises:
            SchemaViolation, UnknownAgent, RevokedAgent, InactiveAgent, BadProof, InvalidCSR
        """
        require_valid("RenewalRequest", request)
        name = parse_ansname(request["ansName"])
        with self._lock:
            record = self._one_by_name(name)
            if record.status == REVOKED:
                raise RevokedAgent(f"{name} has been revoked")
            if record.status == DEREGISTERED:
                raise UnknownAgent(f"{name} has been deregistered")
            if record.status == QUARANTINED:
                raise InactiveAgent(f"{name} is quarantined")
            if not verify_signature(signing_bytes(request), request["proof"], record.public_key):
                logger.warning(f"[Registry] Renewal for {name} carried a bad proof")
                raise BadProof("renewal proof does not verify under the registered key")
            self._check_timestamp(request["timestamp"], record.last_proof_at)

            csr = load_csr(self._resolve_pem(request["csr"]))
            if not verify_csr(csr):
                raise InvalidCSR("CSR self-signature does not verify")
            if not same_public_key(csr.public_key(), record.public_key):
                raise InvalidCSR("renewal CSR must carry the registered key")
            if csr.subject != build_subject(record.name):
                raise InvalidCSR("renewal CSR subject does not match the agent name")

            old_serial = record.certificate.serial
            bundle = self.ca.issue_certificate(csr, self.cert_validity_days)
            self.ca.revoke_certificate(old_serial)
            now = self._now()
            record.certificate = bundle
            record.renewed_at = now
            record.expires_at = bundle.not_after
            record.status = ACTIVE
            record.status_reason = None
            record.last_proof_at = int(request["timestamp"])
            self._save(record, "renew")
        logger.info(f"[Registry] Renewed {record.name}; revoked serial {old_serial:x}")

        return require_valid("RenewalResponse", {
            "status": "renewed",
            "ansName": str(record.name),
            "agentUUID": record.agent_uuid,
            "certificate": {
                "pem": bundle.pem,
                "serial": format(bundle.serial, "x"),
                "notAfter": bundle.not_after,
            },
            "revokedSerial": format(old_serial, "x"),
            "renewedAt": now,
            "expiresAt": record.expires_at,
        })

    # ----------------------------------------------------------- deregister
    def deregister(self, name: ANSName, proof: Any, timestamp: Optional[int] = None) -> Dict[str, Any]:
        """
        Withdraw an agent; the proof is by the agent key or the operator key.

        The signed message is the canonical
        ``{"requestType": "deregister", "ansName", "timestamp"}`` object.

        Raises:
            UnknownAgent, BadProof
        """
        if isinstance(name, str):
            name = parse_ansname(name)
        with self._lock:
            record = self._one_by_name(name)
            if not proof:
                raise BadProof("deregistration requires a proof")
            timestamp = self._now() if timestamp is None else int(timestamp)
            body = {"requestType": "deregister", "ansName": str(name),
                    "timestamp": timestamp, "proof": proof}
            message = signing_bytes(body)
            by_agent = verify_signature(message, proof, record.public_key)
            if not by_agent and not self._operator_signed(body):
                logger.warning(f"[Registry] Deregistration for {name} carried a bad proof")
                raise BadProof("deregistration proof does not verify")
            if record.status in _RELEASED:
                return self._ack(record, already=True)
            self._check_timestamp(timestamp, record.last_proof_at)

            self.ca.revoke_certificate(record.certificate.serial)
            record.status = DEREGISTERED
            record.status_reason = "deregistered by agent" if by_agent else "deregistered by operator"
            record.last_proof_at = timestamp
            self._save(record, "deregister")
        logger.info(f"[Registry] Deregistered {record.name} ({record.status_reason})")
        return self._ack(record)

    def deregister_request(self, request: Dict[str, Any]) -> Dict[str, Any]:
        require_valid("DeregistrationRequest", request)
        return self.deregister(parse_ansname(request["ansName"]), request["proof"], request["timestamp"])

    # --------------------------------------------------------------- revoke
    def revoke(self, name: ANSName, reason: str, proof: Any, timestamp: Optional[int] = None) -> Dict[str, Any]:
        """
        Operator revocation (e.g. key compromise). Proof must be by the registry key.

        Raises:
            UnknownAgent, BadProof
        """
        if isinstance(name, str):
            name = parse_ansname(name)
        timestamp = self._now() if timestamp is None else int(timestamp)
        body = {"requestType": "revoke", "ansName": str(name), "reason": reason,
                "timestamp": timestamp, "proof": proof}
        with self._lock:
            record = self._one_by_name(name)
            if not self._operator_signed(body):
                logger.warning(f"[Registry] Revocation of {name} carried a bad operator proof")
                raise BadProof("revocation requires the registry operator key")
            if record.status in _RELEASED:
                return self._ack(record, already=True)
            self._check_timestamp(timestamp, record.last_proof_at)
            self.ca.revoke_certificate(record.certificate.serial)
            record.status = REVOKED
            record.status_reason = reason
            record.last_proof_at = timestamp
            self._save(record, "revoke")
        logger.warning(f"[Registry] Revoked {record.name}: {reason}")
        return self._ack(record)

    def revoke_request(self, request: Dict[str, Any]) -> Dict[str, Any]:
        require_valid("RevocationRequest", request)
        return self.revoke(parse_ansname(request["ansName"]), request["reason"],
                           request["proof"], request["timestamp"])

    def _ack(self, record: AgentRecord, already: bool = False) -> Dict[str, Any]:
        return {
            "status": record.status,
            "ansName": str(record.name),
            "agentUUID": record.agent_uuid,
            "revokedSerial": format(record.certificate.serial, "x"),
            "alreadyApplied": already,
        }

    # --------------------------------------------------------------- lookup
    def lookup(self, protocol: str, agent_id: str, capability: str, provider: str) -> List[AgentRecord]:
        """All active records matching the four keys exactly (expiry applied lazily)."""
        key = (str(protocol).lower(), agent_id, capability, provider)
        records = self._records(self.store.find(key, statuses=(ACTIVE,)))
        return [r for r in (self._expire_if_due(r) for r in records) if r.status == ACTIVE]

    def sweep_expired(self) -> int:
        """Mark every overdue active record expired. Returns the number changed."""
        changed = 0
        for record in self._records(self.store.with_status(ACTIVE)):
            if self._expire_if_due(record).status == EXPIRED:
                changed += 1
        return changed

    def get_record(self, agent_uuid: str) -> AgentRecord:
        return self._load(agent_uuid)

    # ------------------------------------------------------ endpoint record
    def _linked_agents(self, record: AgentRecord) -> List[Dict[str, str]]:
        names = set()

        def walk(value: Any) -> None:
            if isinstance(value, str):
                if is_ansname(value):
                    names.add(value)
            elif isinstance(value, dict):
                for v in value.values():
                    walk(v)
            elif isinstance(value, list):
                for v in value:
                    walk(v)

        walk(record.protocol_extensions)
        linked = []
        for text in sorted(names):
            target = parse_ansname(text)
            for other in self.find_by_name(target):
                if other.agent_uuid != record.agent_uuid and other.status == ACTIVE:
                    linked.append({"ansName": str(other.name), "agentUUID": other.agent_uuid,
                                   "endpoint": other.endpoint})
        return linked

    def get_agent_endpoint_record(self, agent_uuid: str, ttl_seconds: Optional[int] = None) -> EndpointRecord:
        """
        Sign a fresh EndpointRecord for an active agent.

        Raises:
            UnknownAgent, InactiveAgent, TamperedRecord
        """
        record = self._expire_if_due(self._load(agent_uuid, check_integrity=True))
        if record.status != ACTIVE:
            raise InactiveAgent(f"{record.name} is {record.status}")
        ttl = ttl_seconds or self.ttl_seconds
        data = canonicalize({
            "ansName": str(record.name),
            "agentUUID": record.agent_uuid,
            "endpoint": record.endpoint,
            "agentCertificate": record.certificate.leaf_pem,
            "protocolExtensionsDigest": canonical_digest(record.protocol_extensions),
            "issuedAt": self._now(),
            "ttlSeconds": ttl,
            "linkedAgents": self._linked_agents(record),
        })
        return EndpointRecord(data, sign(data, self.signing_key), self.signing_bundle, ttl)

    def discovery_document(self, agent_uuid: str) -> Dict[str, Any]:
        """Protocol-shaped discovery document for an active agent."""
        record = self._load(agent_uuid)
        if record.status != ACTIVE:
            raise InactiveAgent(f"{record.name} is {record.status}")
        return self.adapters.get(record.name.protocol).create_discovery_response(record)

    # ----------------------------------------------------------- challenges
    def run_capability_challenge(
        self, agent_uuid: str, challenge: Dict[str, Any], timestamp: Optional[int] = None
    ) -> ChallengeOutcome:
        """
        Send a known-answer challenge and record the outcome.

        ``challenge`` holds ``input``, ``expected`` and ``claimed_accuracy``.
        Consecutive failures reaching the threshold quarantine the agent.
        A timeout counts as a failure and is re-raised. When ``timestamp``
        is given it must fall inside the accepted window and be newer than
        the last challenge request accepted for this agent.

        Raises:
            UnknownAgent, InactiveAgent, BadProof, ChallengeTimeout
        """
        record = self._load(agent_uuid)
        if record.status != ACTIVE:
            raise InactiveAgent(f"{record.name} is {record.status}")
        if timestamp is not None:
            self._check_timestamp(timestamp, record.last_challenge_at)
        endpoint = record.protocol_extensions.get("challengeEndpoint") or record.endpoint
        challenge_id = uuid.uuid4().hex
        expected = str(challenge["expected"])
        claimed = float(challenge["claimed_accuracy"])

        timeout: Optional[ChallengeTimeout] = None
        try:
            reply = self.challenge_client.send(endpoint, challenge_id, challenge["input"])
            received, confidence = reply.received, reply.confidence
        except ChallengeTimeout as e:
            timeout, received, confidence = e, "", 0.0

        outcome = ChallengeOutcome(
            agent_uuid=agent_uuid,
            challenge_id=challenge_id,
            expected=expected,
            received=received,
            confidence=confidence,
            claimed_accuracy=claimed,
            passed=timeout is None and received == expected and confidence >= claimed,
            at=self._now(),
            error=timeout.message if timeout else None,
        )
        with self._lock:
            record = self._load(agent_uuid)
            if timestamp is not None:
                # a concurrent request with the same timestamp may have committed first
                if record.last_challenge_at is not None and int(timestamp) <= record.last_challenge_at:
                    raise BadProof("request timestamp not newer than the last accepted request")
                record.last_challenge_at = int(timestamp)
            self.store.append_challenge(agent_uuid, canonicalize(outcome.to_json()).decode("utf-8"))
            if outcome.passed:
                record.consecutive_failures = 0
                op = "challenge-pass"
            else:
                record.consecutive_failures += 1
                op = "challenge-fail"
                if record.status == ACTIVE and record.consecutive_failures >= self.challenge_threshold:
                    record.status = QUARANTINED
                    record.status_reason = (
                        f"{record.consecutive_failures} consecutive capability challenge failures"
                    )
                    op = "quarantine"
                    logger.warning(f"[Registry] Quarantined {record.name}: {record.status_reason}")
            self._save(record, op)
        logger.info(
            f"[Registry] Challenge {challenge_id} for {record.name}: "
            f"{'passed' if outcome.passed else 'failed'} "
            f"(got {received!r} @ {confidence:.2f}, expected {expected!r} @ {claimed:.2f})"
        )
        if timeout:
            raise timeout
        return outcome

    def challenge_request(self, request: Dict[str, Any]) -> Dict[str, Any]:
        """Operator-signed challenge trigger; returns the outcome document."""
        require_valid("ChallengeRequest", request)
        if not self._operator_signed(request):
            raise BadProof("challenges require the registry operator key")
        outcome = self.run_capability_challenge(request["agentUUID"], {
            "input": request["input"],
            "expected": request["expected"],
            "claimed_accuracy": request["claimedAccuracy"],
        }, timestamp=int(request["timestamp"]))
        return outcome.to_json()

    def challenge_history(self, agent_uuid: str) -> List[ChallengeOutcome]:
        return [ChallengeOutcome.from_json(json.loads(t)) for t in self.store.challenges(agent_uuid)]

    # --------------------------------------------------------------- health
    def health(self) -> Dict[str, Any]:
        store_ok = self.store.ping()
        try:
            sample = b"ans-health"
            ca_ok = verify_signature(sample, sign(sample, self.ca.private_key),
                                     self.ca.certificate.public_key())
            crl_ok = bool(self.ca.crl.pem)
        except Exception as e:
            logger.error(f"[Registry] CA health check failed: {e}")
            ca_ok = crl_ok = False
        return {"store": store_ok, "ca": ca_ok, "crl": crl_ok, "agents": self.store.count()}


def _load_or_issue_signing_identity(ca: CertificateAuthority, directory: str,
                                    passphrase: Optional[bytes], clock: Callable[[], float]):
    """Registry EndpointRecord signing key + certificate, issued by the CA."""
    key_path = os.path.join(directory, "registry_key.pem")
    cert_path = os.path.join(directory, "registry_cert.pem")
    if os.path.exists(key_path) and os.path.exists(cert_path):
        key = load_private_key(key_path, passphrase)
        with open(cert_path, "rb") as f:
            certs = load_certificates(f.read())
        cert = certs[0]
        if (clock() < not_after(cert) and not ca.is_revoked(cert.serial_number)
                and same_public_key(cert.public_key(), key.public_key())):
            return key, CertificateBundle(cert, tuple(certs[1:]))
        logger.warning("[Registry] Registry signing certificate expired or revoked; re-issuing")
    else:
        key, _ = generate_keypair()
        save_private_key(key, key_path, passphrase)

    subject = x509.Name([
        x509.NameAttribute(NameOID.COMMON_NAME, "ANS Registry"),
        x509.NameAttribute(NameOID.ORGANIZATION_NAME, "Agent Name Service"),
    ])
    bundle = ca.issue_certificate(create_csr(key, subject), REGISTRY_CERT_VALIDITY_DAYS)
    with open(cert_path, "w", encoding="ascii") as f:
        f.write(bundle.pem)
    logger.info(f"[Registry] Issued registry signing certificate serial={bundle.serial:x}")
    return key, bundle
