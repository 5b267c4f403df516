"""
Configuration file for the Agent Name Service registry
Centralizes all configurable parameters for easy maintenance

Module-level constants are the defaults. A deployment overrides them with
a JSON file (``ans_config.json``) loaded through ``load_config``; CLI flags
override the file.
"""

import json
import os
from dataclasses import dataclass, field, fields
from typing import Any, Dict, FrozenSet, Optional

from ans_errors import ConfigError

# ------------------------- SERVICE CONFIGURATION -------------------------- #
DEFAULT_LISTEN = "0.0.0.0:8443"  # host:port the registry listens on
DEFAULT_TTL_SECONDS = 300  # EndpointRecord cache lifetime
EXPIRY_SWEEP_INTERVAL_SECONDS = 60  # periodic expiry sweep inside `serve`
SHUTDOWN_GRACE_SECONDS = 10  # time allowed for in-flight requests on stop
TLS_HANDSHAKE_TIMEOUT_SECONDS = 10  # per connection, on the handler thread
CONFIG_ENV = "ANS_CONFIG"  # default config file path

# -------------------------- RATE LIMIT SETTINGS --------------------------- #
RATE_LIMIT_CAPACITY = 500  # burst capacity, tokens
RATE_LIMIT_REFILL_RATE = 100.0  # tokens per second
RATE_LIMIT_PER_CAPABILITY = True  # bucket per (client, capability)
RATE_LIMIT_IDLE_PRUNE_SECONDS = 600  # drop buckets idle this long

# ---------------------------- PKI SETTINGS -------------------------------- #
DEFAULT_SIGNATURE_ALGORITHM = "ed25519"
SUPPORTED_ALGORITHMS = ("ed25519", "ecdsa-p256-sha256")
CERT_VALIDITY_DAYS = 90  # agent certificates
CA_VALIDITY_DAYS = 3650  # root CA
REGISTRY_CERT_VALIDITY_DAYS = 365  # registry signing certificate
CRL_VALIDITY_SECONDS = 3600  # next_update - issued_at
KEY_PASSPHRASE_ENV = "ANS_KEY_PASSPHRASE"
KEY_FILE_MODE = 0o600

# ------------------------- REGISTRY SETTINGS ------------------------------ #
DEFAULT_STORE_DIR = os.path.join(
    os.path.dirname(os.path.abspath(__file__)), "ans_store"
)
STORE_DB_FILENAME = "agents.db"
AUDIT_LOG_FILENAME = "audit.ndjson"
CA_DIRNAME = "ca"
CHALLENGE_FAILURE_THRESHOLD = 3  # consecutive failures before quarantine
CHALLENGE_TIMEOUT_SECONDS = 10
RENEWAL_MAX_SKEW_SECONDS = 300  # accepted age of a signed renewal request
REQUIRE_TLS_ENDPOINTS = True  # agent endpoints must be https://

# --------------------------- ADAPTER SETTINGS ----------------------------- #
ENABLED_PROTOCOLS = ("a2a", "mcp", "acp")
ACP_ROLES = frozenset({"orchestrator", "worker", "observer", "broker"})

# ---------------------------- CLIENT SETTINGS ----------------------------- #
HTTP_TIMEOUT_SECONDS = 10
DEFAULT_SERVER_URL = "https://localhost:8443"


@dataclass
class ServiceConfig:
    """Runtime configuration for the registry service and its clients."""

    listen: str = DEFAULT_LISTEN
    tls_cert: Optional[str] = None
    tls_key: Optional[str] = None
    mtls: bool = False
    client_ca: Optional[str] = None
    trust_anchor: Optional[str] = None
    default_ttl_seconds: int = DEFAULT_TTL_SECONDS
    rate_limit_capacity: int = RATE_LIMIT_CAPACITY
    rate_limit_refill_rate: float = RATE_LIMIT_REFILL_RATE
    rate_limit_per_capability: bool = RATE_LIMIT_PER_CAPABILITY
    store_dir: str = DEFAULT_STORE_DIR
    vault_dir: Optional[str] = None
    enabled_protocols: tuple = ENABLED_PROTOCOLS
    acp_roles: FrozenSet[str] = field(default_factory=lambda: ACP_ROLES)
    cert_validity_days: int = CERT_VALIDITY_DAYS
    challenge_failure_threshold: int = CHALLENGE_FAILURE_THRESHOLD
    require_tls_endpoints: bool = REQUIRE_TLS_ENDPOINTS
    dev_no_tls: bool = False
    server_url: str = DEFAULT_SERVER_URL

    @property
    def host(self) -> str:
        return self.listen.rsplit(":", 1)[0] or "0.0.0.0"

    @property
    def port(self) -> int:
        try:
            return int(self.listen.rsplit(":", 1)[1])
        except (IndexError, ValueError):
            raise ConfigError(f"listen address must be host:port, got {self.listen!r}")

    def validate(self) -> "ServiceConfig":
        """
        Check cross-field constraints.

        Returns:
            ServiceConfig: self, for chaining

        Raises:
            ConfigError: on any invalid setting
        """
        if self.default_ttl_seconds <= 0:
            raise ConfigError("default_ttl_seconds must be > 0")
        if self.rate_limit_capacity <= 0 or self.rate_limit_refill_rate <= 0:
            raise ConfigError("rate limit capacity and refill rate must be > 0")
        if self.cert_validity_days <= 0:
            raise ConfigError("cert_validity_days must be > 0")
        if self.challenge_failure_threshold <= 0:
            raise ConfigError("challenge_failure_threshold must be > 0")
        unknown = set(self.enabled_protocols) - set(ENABLED_PROTOCOLS)
        if unknown:
            raise ConfigError(f"unknown protocols enabled: {sorted(unknown)}")
        if not self.dev_no_tls and not (self.tls_cert and self.tls_key):
            raise ConfigError(
                "TLS certificate and key are required (use --dev-no-tls for local testing)"
            )
        if self.mtls and not self.client_ca:
            raise ConfigError("mTLS requires a client CA bundle")
        self.port  # raises on malformed listen address
        return self


# Maps "section.key" in the JSON file to ServiceConfig attributes.
_FILE_KEYS = {
    ("service", "listen"): "listen",
    ("service", "default_ttl_seconds"): "default_ttl_seconds",
    ("service", "server_url"): "server_url",
    ("service", "dev_no_tls"): "dev_no_tls",
    ("tls", "cert"): "tls_cert",
    ("tls", "key"): "tls_key",
    ("tls", "mtls"): "mtls",
    ("tls", "client_ca"): "client_ca",
    ("tls", "trust_anchor"): "trust_anchor",
    ("registry", "store_dir"): "store_dir",
    ("registry", "vault_dir"): "vault_dir",
    ("registry", "cert_validity_days"): "cert_validity_days",
    ("registry", "challenge_failure_threshold"): "challenge_failure_threshold",
    ("registry", "require_tls_endpoints"): "require_tls_endpoints",
    ("rate_limit", "capacity"): "rate_limit_capacity",
    ("rate_limit", "refill_rate"): "rate_limit_refill_rate",
    ("rate_limit", "per_capability"): "rate_limit_per_capability",
    ("adapters", "enabled"): "enabled_protocols",
    ("adapters", "acp_roles"): "acp_roles",
}


def _coerce(attr: str, value: Any) -> Any:
    if attr == "enabled_protocols":
        return tuple(str(p).lower() for p in value)
    if attr == "acp_roles":
        return frozenset(str(r) for r in value)
    if attr == "rate_limit_refill_rate":
        # Accept "100/s" as written in rate-limit policy documents
        if isinstance(value, str):
            value = value.split("/", 1)[0]
        return float(value)
    if attr in ("default_ttl_seconds", "rate_limit_capacity",
                "cert_validity_days", "challenge_failure_threshold"):
        return int(value)
    return value


def load_config(path: Optional[str] = None, **overrides: Any) -> ServiceConfig:
    """
    Load a ServiceConfig from a hierarchical JSON file plus overrides.

    Args:
        path (str, optional): JSON config file. Falls back to $ANS_CONFIG.
        **overrides: ServiceConfig attributes; None values are ignored

    Returns:
        ServiceConfig: merged configuration (not yet validated)

    Raises:
        ConfigError: unreadable file, bad JSON, or unknown keys
    """
    cfg = ServiceConfig()
    path = path or os.environ.get(CONFIG_ENV)
    if path:
        try:
            with open(path, "r", encoding="utf-8") as f:
                doc = json.load(f)
        except (OSError, json.JSONDecodeError) as e:
            raise ConfigError(f"cannot read config {path}: {e}")
        if not isinstance(doc, dict):
            raise ConfigError(f"config {path} must be a JSON object")
        for section, values in doc.items():
            if not isinstance(values, dict):
                raise ConfigError(f"config section {section!r} must be an object")
            for key, value in values.items():
                attr = _FILE_KEYS.get((section, key))
                if attr is None:
                    raise ConfigError(f"unknown config key {section}.{key}")
                try:
                    setattr(cfg, attr, _coerce(attr, value))
                except (TypeError, ValueError) as e:
                    raise ConfigError(f"bad value for {section}.{key}: {e}")

    valid = {f.name for f in fields(ServiceConfig)}
    for attr, value in overrides.items():
        if value is None:
            continue
        if attr not in valid:
            raise ConfigError(f"unknown config override {attr}")
        setattr(cfg, attr, _coerce(attr, value))
    return cfg


def config_summary(cfg: ServiceConfig) -> Dict[str, Any]:
    """Flat dict of the effective settings, used for startup logging."""
    return {f.name: getattr(cfg, f.name) for f in fields(ServiceConfig)
            if f.name not in ("tls_key",)}
