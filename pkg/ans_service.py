#!/usr/bin/env python3
"""
Filename: ans_service.py
Description: HTTP/JSON front end of the Agent Name Service registry

Routes:
    POST /v1/register              RegistrationRequest -> 201 RegistrationResponse
    POST /v1/renew                 RenewalRequest -> RenewalResponse
    POST /v1/deregister            DeregistrationRequest -> ack
    POST /v1/revoke                RevocationRequest (operator) -> ack
    POST /v1/resolve               CapabilityRequest -> CapabilityResponse
    POST /v1/challenge             ChallengeRequest (operator) -> outcome
    GET  /v1/agents?protocol=&agentID=&capability=&provider=
    GET  /v1/agents/<uuid>/record  signed EndpointRecord (CapabilityResponse)
    GET  /v1/agents/<uuid>/discovery
    GET  /v1/agents/<uuid>/challenges
    GET  /v1/crl                   CRL PEM
    GET  /v1/healthz

Errors use the envelope {"code", "message", "details"} with the status
carried by the error class.
"""

import json
import re
import signal
import socketserver
import ssl
import threading
import time
from dataclasses import dataclass, field
from http import server
from typing import Any, Callable, Dict, Optional, Tuple, Union
from urllib.parse import parse_qs, urlsplit

import schedule

from ans_errors import (
    AgentNotFound,
    ANSError,
    InactiveAgent,
    RateLimited,
    SchemaViolation,
    UnknownAgent,
)
from ansname import parse_range, version_negotiation
from config import (
    EXPIRY_SWEEP_INTERVAL_SECONDS,
    SHUTDOWN_GRACE_SECONDS,
    TLS_HANDSHAKE_TIMEOUT_SECONDS,
    ServiceConfig,
    config_summary,
)
from logging_config import setup_service_logger
from pki import passphrase_from_env
from rate_limiter import RateLimiter
from registry import AgentRegistry
from schemas import require_valid

logger = setup_service_logger()

JSON_TYPE = "application/json"
PEM_TYPE = "application/x-pem-file"
MAX_BODY_BYTES = 1024 * 1024

_AGENT_PATH = re.compile(r"^/v1/agents/([0-9a-fA-F-]{36})/(record|discovery|challenges)$")


@dataclass
class ServiceResponse:
    status: int
    body: Union[Dict[str, Any], list, str]
    headers: Dict[str, str] = field(default_factory=dict)

    @property
    def content_type(self) -> str:
        return JSON_TYPE if not isinstance(self.body, str) else PEM_TYPE

    def encoded(self) -> bytes:
        if isinstance(self.body, str):
            return self.body.encode("ascii")
        return json.dumps(self.body, sort_keys=True).encode("utf-8")


def _reject_constant(token: str) -> Any:
    raise SchemaViolation(f"non-finite number {token} in request body")


def parse_body(raw: Union[bytes, str, dict, None]) -> Any:
    if isinstance(raw, (dict, list)):
        return raw
    if not raw:
        raise SchemaViolation("request body is empty")
    try:
        return json.loads(raw, parse_constant=_reject_constant)
    except (ValueError, UnicodeDecodeError) as e:
        raise SchemaViolation(f"request body is not valid JSON: {e}")


# ================================ SERVICE ================================== #
class ANSService:
    """
    Transport-independent request dispatcher.

    ``handle`` is what the HTTP handler calls; tests call it directly.
    """

    def __init__(self, registry: AgentRegistry, rate_limiter: Optional[RateLimiter] = None):
        self.registry = registry
        self.rate_limiter = rate_limiter or RateLimiter()
        self._inflight = 0
        self._idle = threading.Condition()
        self._routes: Dict[Tuple[str, str], Callable[[Any], ServiceResponse]] = {
            ("POST", "/v1/register"): self.http_register,
            ("POST", "/v1/renew"): self.http_renew,
            ("POST", "/v1/deregister"): self.http_deregister,
            ("POST", "/v1/revoke"): self.http_revoke,
            ("POST", "/v1/resolve"): self.http_resolve,
            ("POST", "/v1/challenge"): self.http_challenge,
        }

    # ------------------------------------------------------------ dispatch
    def handle(self, method: str, path: str, body: Any = None, client_id: str = "local") -> ServiceResponse:
        """Route one request and render errors as envelopes."""
        with self._idle:
            self._inflight += 1
        try:
            return self._dispatch(method.upper(), path, body, client_id)
        except ANSError as e:
            level = logger.warning if e.http_status in (403, 429) or e.http_status >= 500 else logger.info
            level(f"[Service] {method} {path} from {client_id}: {e.code} {e.message}")
            headers = {}
            if e.code == "RateLimited" and e.details:
                headers["Retry-After"] = str(max(1, int(round(float(e.details[0])))))
            return ServiceResponse(e.http_status, e.to_envelope(), headers)
        except Exception as e:
            logger.exception(f"[Service] {method} {path} failed: {e}")
            return ServiceResponse(
                500, {"code": "InternalError", "message": "internal error", "details": []}
            )
        finally:
            with self._idle:
                self._inflight -= 1
                self._idle.notify_all()

    def _dispatch(self, method: str, path: str, body: Any, client_id: str) -> ServiceResponse:
        parts = urlsplit(path)
        route = self._routes.get((method, parts.path))
        if route is not None:
            doc = parse_body(body)
            self._admit(client_id, doc.get("agentCapability") if isinstance(doc, dict) else None,
                        parts.path)
            return route(doc)

        if method == "GET":
            if parts.path == "/v1/crl":
                return self.http_crl()
            if parts.path == "/v1/healthz":
                return self.http_health()
            query = {k: v[0] for k, v in parse_qs(parts.query).items()}
            if parts.path == "/v1/agents":
                self._admit(client_id, query.get("capability"), parts.path)
                return self.http_lookup(query)
            m = _AGENT_PATH.match(parts.path)
            if m:
                self._admit(client_id, None, parts.path)
                agent_uuid, what = m.group(1).lower(), m.group(2)
                if what == "record":
                    return self.http_endpoint_record(agent_uuid)
                if what == "discovery":
                    return ServiceResponse(200, self.registry.discovery_document(agent_uuid))
                return ServiceResponse(200, {
                    "agentUUID": agent_uuid,
                    "challenges": [o.to_json() for o in self.registry.challenge_history(agent_uuid)],
                })

        known = {p for _, p in self._routes} | {"/v1/crl", "/v1/healthz", "/v1/agents"}
        if parts.path in known or _AGENT_PATH.match(parts.path):
            return ServiceResponse(405, {"code": "MethodNotAllowed",
                                         "message": f"{method} not allowed on {parts.path}",
                                         "details": []})
        return ServiceResponse(404, {"code": "NotFound", "message": f"no route {parts.path}",
                                     "details": []})

    def _admit(self, client_id: str, capability: Optional[str], path: str) -> None:
        decision = self.rate_limiter.rate_limit_check(client_id, capability or path)
        if not decision:
            raise RateLimited(f"rate limit exceeded for {client_id}", [round(decision.retry_after, 3)])

    # ------------------------------------------------------------- routes
    def http_register(self, doc: Any) -> ServiceResponse:
        return ServiceResponse(201, self.registry.register(doc))

    def http_renew(self, doc: Any) -> ServiceResponse:
        return ServiceResponse(200, self.registry.renew(doc))

    def http_deregister(self, doc: Any) -> ServiceResponse:
        return ServiceResponse(200, self.registry.deregister_request(doc))

    def http_revoke(self, doc: Any) -> ServiceResponse:
        return ServiceResponse(200, self.registry.revoke_request(doc))

    def http_challenge(self, doc: Any) -> ServiceResponse:
        return ServiceResponse(200, self.registry.challenge_request(doc))

    def http_resolve(self, doc: Any) -> ServiceResponse:
        """Server-side lookup + negotiation for clients that send a CapabilityRequest."""
        require_valid("CapabilityRequest", doc)
        rng = parse_range(doc["version"])
        records = self.registry.lookup(doc["protocol"], doc["agentID"],
                                       doc["agentCapability"], doc["provider"])
        if not records:
            raise AgentNotFound(
                f"Agent not found: {doc['protocol']}://{doc['agentID']}."
                f"{doc['agentCapability']}.{doc['provider']}"
            )
        chosen = version_negotiation(records, rng)
        return self.http_endpoint_record(chosen.agent_uuid, missing=AgentNotFound)

    def http_endpoint_record(self, agent_uuid: str, missing=None) -> ServiceResponse:
        try:
            record = self.registry.get_agent_endpoint_record(agent_uuid)
        except (UnknownAgent, InactiveAgent) as e:
            if missing is None:
                raise
            raise missing(e.message)
        body = require_valid("CapabilityResponse", record.to_response())
        return ServiceResponse(200, body, {
            "X-ANS-TTL": str(record.ttl_seconds),
            "Cache-Control": f"max-age={record.ttl_seconds}",
        })

    def http_lookup(self, query: Dict[str, str]) -> ServiceResponse:
        missing = [k for k in ("protocol", "agentID", "capability", "provider") if not query.get(k)]
        if missing:
            raise SchemaViolation("lookup needs protocol, agentID, capability and provider",
                                  [{"path": f"/{k}", "message": "required"} for k in missing])
        records = self.registry.lookup(query["protocol"], query["agentID"],
                                       query["capability"], query["provider"])
        return ServiceResponse(200, {"agents": [
            {"ansName": str(r.name), "agentUUID": r.agent_uuid} for r in records
        ]})

    def http_crl(self) -> ServiceResponse:
        crl = self.registry.crl
        return ServiceResponse(200, crl.pem, {"X-CRL-Next-Update": str(crl.next_update)})

    def http_health(self) -> ServiceResponse:
        health = self.registry.health()
        ok = health["store"] and health["ca"] and health["crl"]
        return ServiceResponse(200 if ok else 503, {"status": "ok" if ok else "degraded", **health})

    # ------------------------------------------------------------ draining
    def drain(self, timeout: float = SHUTDOWN_GRACE_SECONDS) -> bool:
        """Wait for in-flight requests. Returns False if the grace period ran out."""
        deadline = time.monotonic() + timeout
        with self._idle:
            while self._inflight > 0:
                remaining = deadline - time.monotonic()
                if remaining <= 0:
                    return False
                self._idle.wait(remaining)
        return True


# ============================== HTTP LAYER ================================= #
class ANSRequestHandler(server.BaseHTTPRequestHandler):
    """Hands each HTTP request to the server's ANSService."""

    server_version = "ANS/1.0"
    protocol_version = "HTTP/1.1"

    def _client_id(self) -> str:
        getpeercert = getattr(self.connection, "getpeercert", None)
        if getpeercert is not None:
            try:
                cert = getpeercert()
            except (ValueError, ssl.SSLError):
                cert = None
            if cert and cert.get("subject"):
                return ",".join(f"{k}={v}" for rdn in cert["subject"] for k, v in rdn)
        return self.client_address[0]

    def _read_body(self) -> bytes:
        length = int(self.headers.get("Content-Length") or 0)
        if length > MAX_BODY_BYTES:
            raise SchemaViolation(f"request body larger than {MAX_BODY_BYTES} bytes")
        return self.rfile.read(length) if length > 0 else b""

    def _send(self, response: ServiceResponse) -> None:
        payload = response.encoded()
        self.send_response(response.status)
        self.send_header("Content-Type", response.content_type)
        self.send_header("Content-Length", str(len(payload)))
        for name, value in response.headers.items():
            self.send_header(name, value)
        self.end_headers()
        self.wfile.write(payload)

    def _handle(self, method: str) -> None:
        service: ANSService = self.server.service
        try:
            body = self._read_body() if method == "POST" else None
        except (ValueError, SchemaViolation) as e:
            error = e if isinstance(e, ANSError) else SchemaViolation(str(e))
            self._send(ServiceResponse(error.http_status, error.to_envelope()))
            return
        self._send(service.handle(method, self.path, body, self._client_id()))

    def do_GET(self):
        self._handle("GET")

    def do_POST(self):
        self._handle("POST")

    def log_message(self, format, *args):
        logger.debug(f"[HTTP] {self.client_address[0]} {format % args}")


class ANSServer(socketserver.ThreadingMixIn, server.HTTPServer):
    """Threaded HTTP(S) server; one thread per connection."""

    allow_reuse_address = True
    daemon_threads = True
    block_on_close = False

    def __init__(self, address, service: ANSService, ssl_context: Optional[ssl.SSLContext] = None):
        super().__init__(address, ANSRequestHandler)
        self.service = service
        self.ssl_context = ssl_context

    def finish_request(self, request, client_address):
        """Runs on the connection's own thread; the TLS handshake happens here, not in accept."""
        if self.ssl_context is None:
            super().finish_request(request, client_address)
            return
        request.settimeout(TLS_HANDSHAKE_TIMEOUT_SECONDS)
        try:
            tls = self.ssl_context.wrap_socket(request, server_side=True)
        except (ssl.SSLError, OSError) as e:
            logger.warning(f"[Service] TLS handshake with {client_address[0]} failed: {e}")
            return
        tls.settimeout(None)
        try:
            super().finish_request(tls, client_address)
        finally:
            self.shutdown_request(tls)


def build_ssl_context(cfg: ServiceConfig) -> ssl.SSLContext:
    context = ssl.SSLContext(ssl.PROTOCOL_TLS_SERVER)
    context.minimum_version = ssl.TLSVersion.TLSv1_2
    context.load_cert_chain(cfg.tls_cert, cfg.tls_key)
    if cfg.mtls:
        context.verify_mode = ssl.CERT_REQUIRED
        context.load_verify_locations(cfg.client_ca)
    return context


# =============================== LIFECYCLE ================================= #
class ServiceRunner:
    """
    Owns the server thread, the periodic expiry sweep and shutdown.

    SIGTERM, SIGINT and SIGHUP stop accepting connections, then in-flight
    requests get SHUTDOWN_GRACE_SECONDS to finish.
    """

    def __init__(self, cfg: ServiceConfig, registry: AgentRegistry,
                 rate_limiter: Optional[RateLimiter] = None):
        self.cfg = cfg
        self.registry = registry
        self.service = ANSService(registry, rate_limiter or RateLimiter(
            capacity=cfg.rate_limit_capacity,
            refill_rate=cfg.rate_limit_refill_rate,
            per_capability=cfg.rate_limit_per_capability,
        ))
        context = None if cfg.dev_no_tls else build_ssl_context(cfg)
        self.httpd = ANSServer((cfg.host, cfg.port), self.service, context)
        self.scheduler = schedule.Scheduler()
        self.stopping = threading.Event()
        self.stopping.set()

    @property
    def address(self) -> Tuple[str, int]:
        return self.httpd.server_address[:2]

    def _sweep(self) -> None:
        try:
            changed = self.registry.sweep_expired()
            if changed:
                logger.info(f"[Service] Expiry sweep marked {changed} agents expired")
        except Exception as e:
            logger.error(f"[Service] Expiry sweep failed: {e}")

    def _sweep_loop(self) -> None:
        self.scheduler.every(EXPIRY_SWEEP_INTERVAL_SECONDS).seconds.do(self._sweep)
        while not self.stopping.wait(1):
            self.scheduler.run_pending()

    def start(self) -> "ServiceRunner":
        """Serve in background threads (used by tests and by ``serve``)."""
        self.stopping.clear()
        threading.Thread(target=self.httpd.serve_forever, name="ans-http", daemon=True).start()
        threading.Thread(target=self._sweep_loop, name="ans-sweep", daemon=True).start()
        scheme = "http" if self.cfg.dev_no_tls else "https"
        host, port = self.address
        logger.info(f"[Service] Listening on {scheme}://{host}:{port}")
        return self

    def stop(self) -> None:
        if self.stopping.is_set():
            return
        self.stopping.set()
        self.scheduler.clear()
        logger.info("[Service] Stopping: no new connections accepted")
        self.httpd.shutdown()
        if not self.service.drain(SHUTDOWN_GRACE_SECONDS):
            logger.warning("[Service] Grace period over with requests still in flight")
        self.httpd.server_close()
        self.registry.store.close()
        logger.info("[Service] Stopped")

    def _signal_handler(self, signum, frame):
        logger.info(f"[Service] Received {signal.Signals(signum).name}, shutting down")
        # shutdown() blocks until serve_forever returns, so it cannot run on this thread
        threading.Thread(target=self.stop, name="ans-stop").start()

    def install_signal_handlers(self) -> None:
        for name in ("SIGTERM", "SIGINT", "SIGHUP"):
            signum = getattr(signal, name, None)
            if signum is not None:
                signal.signal(signum, self._signal_handler)

    def serve_until_stopped(self) -> None:
        self.install_signal_handlers()
        self.start()
        try:
            while not self.stopping.wait(0.5):
                pass
        except KeyboardInterrupt:
            self.stop()


def run_service(cfg: ServiceConfig, passphrase: Optional[bytes] = None) -> int:
    """Entry point for ``ans_cli.py serve``. Returns the process exit code."""
    cfg.validate()
    if cfg.dev_no_tls:
        logger.warning("[Service] TLS DISABLED (--dev-no-tls). Never use this outside development.")
    if passphrase is None:
        passphrase = passphrase_from_env(required=not cfg.dev_no_tls)
    logger.info(f"[Service] Configuration: {config_summary(cfg)}")
    registry = AgentRegistry.open(cfg, passphrase)
    runner = ServiceRunner(cfg, registry)
    runner.serve_until_stopped()
    return 0
