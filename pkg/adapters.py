#!/usr/bin/env python3
"""
Filename: adapters.py
Description: Protocol Adapter Layer for A2A, MCP and ACP agents

Each adapter turns an untrusted ``protocolExtensions`` blob into a flat,
protocol-namespaced metadata map, checks protocol-specific registration
rules, and shapes discovery documents. Adapters are stateless after
construction and registered in-process at startup.
"""

import copy
from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Dict, FrozenSet, Iterable, List, Optional, Tuple

from jsonschema import Draft7Validator
from jsonschema.exceptions import SchemaError

from ans_errors import (
    AdapterRejection,
    MalformedExtension,
    MissingRequiredKey,
    NonFiniteNumber,
    UnknownProtocol,
)
from config import ACP_ROLES, ENABLED_PROTOCOLS, REQUIRE_TLS_ENDPOINTS
from logging_config import setup_registry_logger
from schemas import canonical_digest, canonicalize

logger = setup_registry_logger()

NormalizedMetadata = Dict[str, Any]


@dataclass(frozen=True)
class AdapterDescriptor:
    protocol: str
    required_extension_keys: FrozenSet[str]
    version: str


@dataclass(frozen=True)
class AdapterVerdict:
    """Registration check result; falsy with violations when rejected."""

    valid: bool
    violations: Tuple[str, ...] = ()

    def __bool__(self) -> bool:
        return self.valid


class ProtocolAdapter(ABC):
    """Base class for all protocol adapters."""

    # Key under which discovery documents carry the protocol payload
    container_key = "payload"
    required_keys: FrozenSet[str] = frozenset()
    adapter_version = "1.0"

    def __init__(self, require_tls_endpoints: bool = REQUIRE_TLS_ENDPOINTS, **kwargs):
        self.require_tls_endpoints = require_tls_endpoints
        self.config = kwargs

    @property
    @abstractmethod
    def protocol_name(self) -> str:
        """Lower-case protocol scheme handled by this adapter."""
        raise NotImplementedError

    @property
    def descriptor(self) -> AdapterDescriptor:
        return AdapterDescriptor(self.protocol_name, self.required_keys, self.adapter_version)

    # ------------------------------------------------------------- parsing
    @abstractmethod
    def _normalize(self, extensions: Dict[str, Any]) -> NormalizedMetadata:
        """Extract the protocol's known keys; raise MalformedExtension on bad values."""

    def parse_metadata(self, extensions: Any) -> NormalizedMetadata:
        """
        Normalize ``protocolExtensions`` into namespaced metadata.

        Unknown keys are kept under ``<protocol>.raw.<key>``.

        Raises:
            MissingRequiredKey: a protocol-required key is absent
            MalformedExtension: wrong value types or non-JSON content
        """
        p = self.protocol_name
        if not isinstance(extensions, dict):
            raise MalformedExtension(f"{p} protocolExtensions must be an object")
        missing = sorted(self.required_keys - set(extensions))
        if missing:
            raise MissingRequiredKey(
                f"{p} protocolExtensions missing {', '.join(missing)}", missing
            )
        try:
            normalized = self._normalize(extensions)
        except AdapterRejection:
            raise
        except Exception as e:
            raise MalformedExtension(f"{p} protocolExtensions unreadable: {e}")
        for key, value in extensions.items():
            if key not in self.required_keys:
                normalized[f"{p}.raw.{key}"] = copy.deepcopy(value)
        try:
            canonicalize(normalized)
        except (TypeError, NonFiniteNumber) as e:
            raise MalformedExtension(f"{p} protocolExtensions are not plain JSON: {e}")
        return normalized

    def endpoint_from(self, metadata: NormalizedMetadata) -> Optional[str]:
        value = metadata.get(f"{self.protocol_name}.endpoint")
        return value if isinstance(value, str) and value else None

    # ---------------------------------------------------------- validation
    def _validate(self, extensions: Dict[str, Any], metadata: NormalizedMetadata) -> List[str]:
        return []

    def validate_registration(self, request: Dict[str, Any]) -> AdapterVerdict:
        """Protocol-specific registration rules. Never raises for bad input."""
        extensions = request.get("protocolExtensions", {})
        try:
            metadata = self.parse_metadata(extensions)
        except AdapterRejection as e:
            return AdapterVerdict(False, (e.message,))

        violations = list(self._validate(extensions, metadata))
        endpoint = request.get("endpoint") or self.endpoint_from(metadata)
        if not endpoint:
            violations.append(f"no endpoint given and none found in {self.protocol_name} metadata")
        elif self.require_tls_endpoints and not str(endpoint).startswith("https://"):
            violations.append(f"endpoint {endpoint!r} must use https://")
        if violations:
            logger.info(
                f"[Adapter:{self.protocol_name}] Rejected {request.get('agentID')!r}: {violations}"
            )
        return AdapterVerdict(not violations, tuple(violations))

    # ----------------------------------------------------------- discovery
    def _to_container(self, extensions: Dict[str, Any], record: Any) -> Dict[str, Any]:
        return copy.deepcopy(extensions)

    def _from_container(self, container: Dict[str, Any]) -> Dict[str, Any]:
        return copy.deepcopy(container)

    def create_discovery_response(self, record: Any) -> Dict[str, Any]:
        """Protocol-shaped discovery document embedding the ANSName and endpoint."""
        doc = {
            "ansName": str(record.name),
            "protocol": self.protocol_name,
            "endpoint": record.endpoint,
        }
        extensions = record.protocol_extensions or {}
        if extensions:
            doc[self.container_key] = self._to_container(extensions, record)
        return doc

    def extensions_from_discovery(self, document: Dict[str, Any]) -> Dict[str, Any]:
        """Recover the original ``protocolExtensions`` from a discovery document."""
        container = document.get(self.container_key)
        return self._from_container(container) if isinstance(container, dict) else {}

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}(protocol={self.protocol_name!r})"


def _require_type(p: str, extensions: Dict[str, Any], key: str, types: tuple, label: str) -> Any:
    value = extensions[key]
    if not isinstance(value, types):
        raise MalformedExtension(f"{p} '{key}' must be {label}")
    return value


# ================================== MCP ==================================== #
class MCPAdapter(ProtocolAdapter):
    """Model Context Protocol tools: description, endpoint and I/O schemas."""

    container_key = "tool"
    required_keys = frozenset({"description", "mcpEndpoint", "input_schema", "output_schema"})

    @property
    def protocol_name(self) -> str:
        return "mcp"

    def _normalize(self, extensions):
        description = _require_type("mcp", extensions, "description", (str,), "a string")
        endpoint = _require_type("mcp", extensions, "mcpEndpoint", (str,), "a string")
        input_schema = _require_type("mcp", extensions, "input_schema", (dict, bool), "a JSON Schema")
        output_schema = _require_type("mcp", extensions, "output_schema", (dict, bool), "a JSON Schema")
        return {
            "mcp.description": description,
            "mcp.endpoint": endpoint,
            "mcp.inputSchemaDigest": canonical_digest(input_schema),
            "mcp.outputSchemaDigest": canonical_digest(output_schema),
        }

    def _validate(self, extensions, metadata):
        violations = []
        for key in ("input_schema", "output_schema"):
            try:
                Draft7Validator.check_schema(extensions[key])
            except SchemaError as e:
                violations.append(f"mcp {key} is not a valid JSON Schema: {e.message}")
        return violations

    def _to_container(self, extensions, record):
        tool = {
            "name": record.name.agent_id,
            "description": extensions["description"],
            "inputSchema": copy.deepcopy(extensions["input_schema"]),
            "outputSchema": copy.deepcopy(extensions["output_schema"]),
            "endpoint": extensions["mcpEndpoint"],
        }
        extra = {k: copy.deepcopy(v) for k, v in extensions.items() if k not in self.required_keys}
        if extra:
            tool["annotations"] = extra
        return tool

    def _from_container(self, container):
        if "description" not in container:
            return copy.deepcopy(container)
        extensions = {
            "description": container["description"],
            "mcpEndpoint": container.get("endpoint"),
            "input_schema": copy.deepcopy(container.get("inputSchema")),
            "output_schema": copy.deepcopy(container.get("outputSchema")),
        }
        extensions.update(copy.deepcopy(container.get("annotations", {})))
        return extensions


# ================================== A2A ==================================== #
class A2AAdapter(ProtocolAdapter):
    """Agent-to-Agent agents described by an Agent Card plus its digest."""

    container_key = "agentCardEnvelope"
    required_keys = frozenset({"agentCard", "cardDigest"})

    @property
    def protocol_name(self) -> str:
        return "a2a"

    def _normalize(self, extensions):
        card = _require_type("a2a", extensions, "agentCard", (dict,), "an object")
        digest = _require_type("a2a", extensions, "cardDigest", (str,), "a string")
        metadata = {"a2a.cardDigest": digest}
        if isinstance(card.get("name"), str):
            metadata["a2a.name"] = card["name"]
        if isinstance(card.get("url"), str):
            metadata["a2a.endpoint"] = card["url"]
        skills = card.get("skills")
        if isinstance(skills, list):
            metadata["a2a.skills"] = sorted(
                str(s.get("id")) for s in skills if isinstance(s, dict) and "id" in s
            )
        return metadata

    def _validate(self, extensions, metadata):
        declared = extensions["cardDigest"]
        if not declared.startswith("sha256:"):
            declared = f"sha256:{declared}"
        actual = canonical_digest(extensions["agentCard"])
        if declared.lower() != actual:
            return [f"a2a agent card digest mismatch (declared {declared}, computed {actual})"]
        return []

    def _to_container(self, extensions, record):
        envelope = {
            "agentCard": copy.deepcopy(extensions["agentCard"]),
            "cardDigest": extensions["cardDigest"],
        }
        extra = {k: copy.deepcopy(v) for k, v in extensions.items() if k not in self.required_keys}
        if extra:
            envelope["extensions"] = extra
        return envelope

    def _from_container(self, container):
        extensions = {k: copy.deepcopy(v) for k, v in container.items() if k != "extensions"}
        extensions.update(copy.deepcopy(container.get("extensions", {})))
        return extensions


# ================================== ACP ==================================== #
class ACPAdapter(ProtocolAdapter):
    """Agent Communication Protocol agents with a declared role and profile."""

    container_key = "agentProfile"
    required_keys = frozenset({"role", "profile"})

    def __init__(self, roles: Iterable[str] = ACP_ROLES, **kwargs):
        super().__init__(**kwargs)
        self.roles = frozenset(roles)

    @property
    def protocol_name(self) -> str:
        return "acp"

    def _normalize(self, extensions):
        role = _require_type("acp", extensions, "role", (str,), "a string")
        profile = _require_type("acp", extensions, "profile", (dict,), "an object")
        metadata = {"acp.role": role, "acp.profileDigest": canonical_digest(profile)}
        endpoint = profile.get("endpoint") or profile.get("url")
        if isinstance(endpoint, str):
            metadata["acp.endpoint"] = endpoint
        return metadata

    def _validate(self, extensions, metadata):
        role = extensions["role"]
        if role not in self.roles:
            return [f"acp role {role!r} not in configured roles {sorted(self.roles)}"]
        return []


# ============================ ADAPTER REGISTRY ============================ #
class AdapterRegistry:
    """Protocol -> adapter lookup, populated once at startup."""

    def __init__(self, adapters: Iterable[ProtocolAdapter] = ()):
        self._adapters: Dict[str, ProtocolAdapter] = {}
        for adapter in adapters:
            self.register(adapter)

    def register(self, adapter: ProtocolAdapter) -> None:
        protocol = adapter.protocol_name
        if protocol in self._adapters:
            raise ValueError(f"adapter for {protocol!r} already registered")
        self._adapters[protocol] = adapter
        logger.info(f"[Adapter] Registered {adapter!r}")

    def get(self, protocol: str) -> ProtocolAdapter:
        adapter = self._adapters.get(str(protocol).lower())
        if adapter is None:
            raise UnknownProtocol(f"no adapter for protocol {protocol!r}")
        return adapter

    @property
    def protocols(self) -> Tuple[str, ...]:
        return tuple(sorted(self._adapters))


_ADAPTER_CLASSES = {"a2a": A2AAdapter, "mcp": MCPAdapter, "acp": ACPAdapter}


def default_adapters(
    enabled: Iterable[str] = ENABLED_PROTOCOLS,
    acp_roles: Iterable[str] = ACP_ROLES,
    require_tls_endpoints: bool = REQUIRE_TLS_ENDPOINTS,
) -> AdapterRegistry:
    """Build the adapter set named by configuration."""
    registry = AdapterRegistry()
    for protocol in enabled:
        cls = _ADAPTER_CLASSES.get(protocol)
        if cls is None:
            raise UnknownProtocol(f"no adapter implementation for {protocol!r}")
        kwargs = {"require_tls_endpoints": require_tls_endpoints}
        if cls is ACPAdapter:
            kwargs["roles"] = acp_roles
        registry.register(cls(**kwargs))
    return registry


_DEFAULT: Optional[AdapterRegistry] = None


def get_adapter(protocol: str, registry: Optional[AdapterRegistry] = None) -> ProtocolAdapter:
    """
    Return the adapter for ``protocol``.

    Raises:
        UnknownProtocol: no adapter registered for it
    """
    global _DEFAULT
    if registry is None:
        if _DEFAULT is None:
            _DEFAULT = default_adapters()
        registry = _DEFAULT
    return registry.get(protocol)


def parse_metadata(adapter: ProtocolAdapter, extensions: Any) -> NormalizedMetadata:
    return adapter.parse_metadata(extensions)


def validate_registration(adapter: ProtocolAdapter, request: Dict[str, Any]) -> bool:
    return bool(adapter.validate_registration(request))


def create_discovery_response(adapter: ProtocolAdapter, record: Any) -> Dict[str, Any]:
    return adapter.create_discovery_response(record)
