#!/usr/bin/env python3
"""
Filename: resolver.py
Description: Client-side ANS resolution with verification and TTL caching

Resolution steps: parse the ANSName, look up candidates on the registry,
negotiate the version, fetch the registry-signed EndpointRecord, verify
the signature and the registry certificate chain (CRL included), then
hand back the endpoint. Verified results are cached until their TTL runs
out. Anything that does not verify fails closed with InvalidEndpoint.
"""

import threading
import time
from abc import ABC, abstractmethod
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Callable, Dict, Iterable, List, Optional, Tuple, Union

import requests
from cryptography import x509

from ans_errors import (
    AgentNotFound,
    ANSError,
    InactiveAgent,
    InvalidCertificate,
    InvalidEndpoint,
    TamperedRecord,
    TransportError,
    UnknownAgent,
    error_from_envelope,
)
from ansname import ANSName, VersionRange, exact_range, parse_ansname, parse_range, version_negotiation
from config import HTTP_TIMEOUT_SECONDS
from logging_config import setup_resolver_logger
from pki import (
    CertificateBundle,
    ChainVerdict,
    RevocationList,
    load_certificates,
    verify_cert_chain,
    verify_signature,
)
from registry import AgentRegistry, EndpointRecord
from schemas import validate

logger = setup_resolver_logger()

INVALID_SIGNATURE = "InvalidSignature"
RECORD_MISMATCH = "RecordMismatch"
STALE_RECORD = "StaleRecord"
# Tolerated registry/resolver clock difference for issuedAt
CLOCK_SKEW_SECONDS = 60

CacheKey = Tuple[Tuple[str, str, str, str], str]


@dataclass(frozen=True)
class Candidate:
    name: ANSName
    agent_uuid: str


@dataclass(frozen=True)
class ResolvedEndpoint:
    endpoint: str
    agent_certificate: CertificateBundle
    verified_at: float
    expires_at: float
    ans_name: str = ""
    agent_uuid: str = ""
    linked_agents: Tuple[Dict[str, str], ...] = ()

    def __post_init__(self):
        if not self.endpoint:
            raise ValueError("endpoint must be non-empty")
        if self.expires_at <= self.verified_at:
            raise ValueError("expires_at must be after verified_at")

    def to_json(self) -> Dict[str, Any]:
        return {
            "ansName": self.ans_name,
            "agentUUID": self.agent_uuid,
            "endpoint": self.endpoint,
            "agentCertificateSerial": format(self.agent_certificate.serial, "x"),
            "verifiedAt": int(self.verified_at),
            "expiresAt": int(self.expires_at),
            "linkedAgents": list(self.linked_agents),
        }


@dataclass(frozen=True)
class RecordVerdict:
    valid: bool
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.valid


def verify_agent_endpoint_record(
    record: EndpointRecord,
    trusted_ca: x509.Certificate,
    crl: Union[None, RevocationList, Iterable[RevocationList]] = None,
    now: Optional[float] = None,
) -> RecordVerdict:
    """
    Check the registry signature over ``record.data`` and the registry
    certificate chain up to ``trusted_ca``. Never raises.

    Returns:
        RecordVerdict: invalid with InvalidSignature or a chain reason
    """
    try:
        if not verify_signature(record.data, record.signature, record.cert.public_key):
            return RecordVerdict(False, INVALID_SIGNATURE)
        chain: ChainVerdict = verify_cert_chain(record.cert, trusted_ca, crl, now)
    except Exception as e:
        logger.error(f"[Resolver] Verification error: {e}")
        return RecordVerdict(False, INVALID_SIGNATURE)
    if not chain:
        return RecordVerdict(False, chain.reason)
    return RecordVerdict(True)


# ================================= CACHE =================================== #
class ResolverCache:
    """
    Verified endpoints keyed by (4-tuple, negotiated version).

    A side table remembers which version a (4-tuple, range) pair negotiated
    to, so a repeated query is answered without touching the network.
    """

    def __init__(self, clock: Callable[[], float] = time.time):
        self.clock = clock
        self._entries: Dict[CacheKey, ResolvedEndpoint] = {}
        self._ranges: Dict[Tuple[Tuple[str, str, str, str], str], CacheKey] = {}
        self._lock = threading.Lock()

    def cache_get(self, key: CacheKey) -> Optional[ResolvedEndpoint]:
        with self._lock:
            entry = self._entries.get(key)
            if entry is None:
                return None
            if self.clock() < entry.expires_at:
                return entry
            del self._entries[key]
            return None

    def get_for_range(self, lookup_key, range_text: str) -> Optional[ResolvedEndpoint]:
        with self._lock:
            key = self._ranges.get((lookup_key, range_text))
        return self.cache_get(key) if key else None

    def remember_range(self, key: CacheKey, range_text: str) -> None:
        with self._lock:
            self._ranges[(key[0], range_text)] = key

    def put(self, key: CacheKey, range_text: str, entry: ResolvedEndpoint) -> None:
        with self._lock:
            self._entries[key] = entry
            self._ranges[(key[0], range_text)] = key

    def clear(self) -> None:
        with self._lock:
            self._entries.clear()
            self._ranges.clear()

    def __len__(self) -> int:
        with self._lock:
            return len(self._entries)


# =============================== TRANSPORTS ================================ #
class RegistryClient(ABC):
    """How a resolver talks to a registry."""

    @abstractmethod
    def lookup(self, protocol: str, agent_id: str, capability: str, provider: str) -> List[Candidate]:
        pass

    @abstractmethod
    def endpoint_record(self, agent_uuid: str) -> EndpointRecord:
        pass

    @abstractmethod
    def crl_pem(self) -> str:
        pass


class InProcessRegistryClient(RegistryClient):
    """Talks to an AgentRegistry object directly, passing records through their wire form."""

    def __init__(self, registry: AgentRegistry):
        self.registry = registry

    def lookup(self, protocol, agent_id, capability, provider):
        return [Candidate(r.name, r.agent_uuid)
                for r in self.registry.lookup(protocol, agent_id, capability, provider)]

    def endpoint_record(self, agent_uuid):
        return self.decode(self.registry.get_agent_endpoint_record(agent_uuid).to_response())

    def decode(self, document: Dict[str, Any]) -> EndpointRecord:
        return _record_from_document(document)

    def crl_pem(self):
        return self.registry.crl.pem


class HttpRegistryClient(RegistryClient):
    """
    requests-based client for the registry HTTP API.

    ``verify`` is passed to requests: a CA bundle path, True, or False for
    development servers without TLS.
    """

    def __init__(
        self,
        base_url: str,
        verify: Any = True,
        timeout: float = HTTP_TIMEOUT_SECONDS,
        client_cert: Optional[Tuple[str, str]] = None,
        session: Optional[requests.Session] = None,
    ):
        self.base_url = base_url.rstrip("/")
        self.verify = verify
        self.timeout = timeout
        self.client_cert = client_cert
        self.session = session or requests.Session()

    def request(self, method: str, path: str, **kwargs) -> requests.Response:
        """
        Send one request; non-2xx answers are raised as their ANSError.

        Raises:
            TransportError: connection problems or unreadable error bodies
        """
        url = f"{self.base_url}{path}"
        try:
            response = self.session.request(
                method, url, timeout=self.timeout, verify=self.verify,
                cert=self.client_cert, **kwargs,
            )
        except requests.exceptions.RequestException as e:
            logger.error(f"[Resolver] {method} {url} failed: {e}")
            raise TransportError(f"cannot reach registry at {self.base_url}: {e}")
        if response.ok:
            return response
        try:
            envelope = response.json()
        except ValueError:
            raise TransportError(f"registry answered HTTP {response.status_code} without an error body")
        raise error_from_envelope(envelope)

    def post(self, path: str, body: Dict[str, Any]) -> Dict[str, Any]:
        return self.request("POST", path, json=body).json()

    def get(self, path: str, **params) -> requests.Response:
        return self.request("GET", path, params=params or None)

    def lookup(self, protocol, agent_id, capability, provider):
        doc = self.get("/v1/agents", protocol=protocol, agentID=agent_id,
                       capability=capability, provider=provider).json()
        candidates = []
        for item in doc.get("agents", []):
            try:
                candidates.append(Candidate(parse_ansname(item["ansName"]), item["agentUUID"]))
            except (ANSError, KeyError, TypeError):
                logger.warning(f"[Resolver] Ignoring malformed lookup entry {item!r}")
        return candidates

    def endpoint_record(self, agent_uuid):
        try:
            document = self.get(f"/v1/agents/{agent_uuid}/record").json()
        except ValueError:
            raise InvalidEndpoint("registry sent an unreadable EndpointRecord")
        return _record_from_document(document)

    def crl_pem(self):
        return self.get("/v1/crl").text


def _record_from_document(document: Any) -> EndpointRecord:
    report = validate("CapabilityResponse", document)
    if not report:
        raise InvalidEndpoint("EndpointRecord does not match its schema", report.details())
    try:
        if document["Endpoint"] != document["data"]["endpoint"]:
            raise InvalidEndpoint("Endpoint differs from the signed endpoint", [RECORD_MISMATCH])
        return EndpointRecord.from_response(document)
    except InvalidEndpoint:
        raise
    except (ANSError, ValueError, TypeError, KeyError) as e:
        raise InvalidEndpoint(f"unreadable EndpointRecord: {e}")


# ================================ RESOLVER ================================= #
class Resolver:
    """
    Resolve ANSNames to verified endpoints.

    Args:
        client: registry transport
        trust_anchor: registry root CA certificate
        clock: time source shared by the TTL cache and verification
        crl_issuers: extra certificates allowed to sign the CRL (intermediate CAs)
    """

    def __init__(
        self,
        client: RegistryClient,
        trust_anchor: x509.Certificate,
        clock: Callable[[], float] = time.time,
        crl_issuers: Iterable[x509.Certificate] = (),
    ):
        self.client = client
        self.trust_anchor = trust_anchor
        self.clock = clock
        self.crl_issuers = (trust_anchor, *crl_issuers)
        self.cache = ResolverCache(clock)
        self.fetch_count = 0
        self._crl: Optional[RevocationList] = None
        self._crl_lock = threading.Lock()
        # (lock, holders) per (4-tuple, range); removed when the last holder leaves
        self._flights: Dict[Tuple[Any, str], List[Any]] = {}
        self._flights_lock = threading.Lock()

    @classmethod
    def from_anchor_file(cls, client: RegistryClient, path: str, **kwargs) -> "Resolver":
        with open(path, "rb") as f:
            certs = load_certificates(f.read())
        return cls(client, certs[0], **kwargs)

    # ------------------------------------------------------------------ CRL
    def refresh_crl(self) -> RevocationList:
        """
        Fetch the registry CRL and check it was signed by a trusted issuer.

        Raises:
            InvalidEndpoint: the CRL signature does not verify
            TransportError: the registry is unreachable
        """
        pem = self.client.crl_pem()
        try:
            crl = RevocationList.from_pem(pem)
        except InvalidCertificate as e:
            raise InvalidEndpoint(f"unreadable CRL: {e.message}")
        if not any(crl.is_signed_by(issuer) for issuer in self.crl_issuers):
            logger.critical("[Resolver] CRL is not signed by the trust anchor")
            raise InvalidEndpoint("CRL signature does not verify against the trust anchor")
        with self._crl_lock:
            self._crl = crl
        logger.info(f"[Resolver] CRL refreshed: {len(crl.revoked)} revoked, next update {crl.next_update}")
        return crl

    def current_crl(self) -> RevocationList:
        """Cached CRL, refreshed after half its validity has passed."""
        crl = self._crl
        now = self.clock()
        if crl is not None and now < crl.issued_at + (crl.next_update - crl.issued_at) / 2:
            return crl
        try:
            return self.refresh_crl()
        except TransportError:
            if crl is not None and now < crl.next_update:
                logger.warning("[Resolver] CRL refresh failed; using the previous CRL")
                return crl
            raise

    # ------------------------------------------------------------- resolve
    @contextmanager
    def _flight(self, key):
        """Single-flight section for one (4-tuple, range) query."""
        with self._flights_lock:
            slot = self._flights.setdefault(key, [threading.Lock(), 0])
            slot[1] += 1
        try:
            with slot[0]:
                yield
        finally:
            with self._flights_lock:
                slot[1] -= 1
                if slot[1] == 0:
                    del self._flights[key]

    def _count_fetch(self) -> None:
        with self._flights_lock:
            self.fetch_count += 1

    def resolve(self, name: str, version_range: Optional[str] = None) -> ResolvedEndpoint:
        """
        Resolve ``name`` to a verified endpoint.

        Args:
            name: ANSName string; its version is the exact request unless ``version_range`` is set
            version_range: SemVer range such as ``"*"`` or ``"^1.0.0"``

        Raises:
            MalformedName, MalformedRange, AgentNotFound, IncompatibleVersion,
            InvalidEndpoint, TransportError
        """
        target = parse_ansname(name) if isinstance(name, str) else name
        rng: VersionRange = (
            parse_range(version_range) if version_range is not None else exact_range(target.version)
        )
        lookup_key = target.lookup_key

        hit = self.cache.get_for_range(lookup_key, rng.raw)
        if hit is not None:
            return hit
        with self._flight((lookup_key, rng.raw)):
            hit = self.cache.get_for_range(lookup_key, rng.raw)
            if hit is not None:
                return hit
            return self._resolve_uncached(target, rng)

    def _resolve_uncached(self, target: ANSName, rng: VersionRange) -> ResolvedEndpoint:
        candidates = self.client.lookup(*target.lookup_key)
        if not candidates:
            raise AgentNotFound(f"Agent not found: {target.protocol}://{target.agent_id}."
                                f"{target.capability}.{target.provider}")
        chosen: Candidate = version_negotiation(candidates, rng)

        # another range may already have verified this exact version
        version_key = (target.lookup_key, chosen.name.version_text)
        shared = self.cache.cache_get(version_key)
        if shared is not None:
            self.cache.remember_range(version_key, rng.raw)
            return shared

        self._count_fetch()
        try:
            record = self.client.endpoint_record(chosen.agent_uuid)
        except (UnknownAgent, InactiveAgent, AgentNotFound) as e:
            raise AgentNotFound(f"Agent not found: {chosen.name} ({e.message})")
        except TamperedRecord as e:
            raise InvalidEndpoint(f"registry refused a tampered record: {e.message}", [e.code])

        now = self.clock()
        verdict = verify_agent_endpoint_record(record, self.trust_anchor, self.current_crl(), now)
        if not verdict:
            logger.warning(f"[Resolver] Rejected EndpointRecord for {chosen.name}: {verdict.reason}")
            raise InvalidEndpoint(f"Invalid Endpoint: {verdict.reason}", [verdict.reason])
        resolved = self._check_payload(record, chosen, now)
        self.cache.put(version_key, rng.raw, resolved)
        logger.info(f"[Resolver] {chosen.name} -> {resolved.endpoint} (ttl {record.ttl_seconds}s)")
        return resolved

    def _check_payload(self, record: EndpointRecord, chosen: Candidate, now: float) -> ResolvedEndpoint:
        try:
            payload = record.payload
            signed_name = parse_ansname(payload["ansName"])
            agent_certs = load_certificates(payload["agentCertificate"])
            issued_at = int(payload["issuedAt"])
            ttl = int(payload["ttlSeconds"])
        except (ANSError, KeyError, TypeError, ValueError) as e:
            raise InvalidEndpoint(f"Invalid Endpoint: unreadable signed data ({e})", [RECORD_MISMATCH])

        if (signed_name.lookup_key != chosen.name.lookup_key
                or signed_name.version.compare(chosen.name.version) != 0
                or payload.get("agentUUID") != chosen.agent_uuid):
            raise InvalidEndpoint("Invalid Endpoint: signed record names a different agent",
                                  [RECORD_MISMATCH])
        if issued_at > now + CLOCK_SKEW_SECONDS or issued_at + ttl <= now:
            raise InvalidEndpoint("Invalid Endpoint: EndpointRecord is stale or from the future",
                                  [STALE_RECORD])

        leaf = agent_certs[0]
        chain = record.cert.chain if record.cert.chain and leaf.issuer == record.cert.chain[0].subject else ()
        agent_bundle = CertificateBundle(leaf, chain)
        agent_chain = verify_cert_chain(agent_bundle, self.trust_anchor, self.current_crl(), now)
        if not agent_chain:
            raise InvalidEndpoint(f"Invalid Endpoint: agent certificate {agent_chain.reason}",
                                  [agent_chain.reason])

        return ResolvedEndpoint(
            endpoint=payload["endpoint"],
            agent_certificate=agent_bundle,
            verified_at=now,
            expires_at=now + ttl,
            ans_name=payload["ansName"],
            agent_uuid=payload["agentUUID"],
            linked_agents=tuple(payload.get("linkedAgents") or ()),
        )

