#!/usr/bin/env python3
"""
Filename: test_adapters.py
Description: Protocol adapter normalization, validation and discovery tests
"""

import sys
from types import SimpleNamespace

import pytest

from adapters import (
    A2AAdapter,
    ACPAdapter,
    AdapterRegistry,
    MCPAdapter,
    create_discovery_response,
    default_adapters,
    get_adapter,
    parse_metadata,
    validate_registration,
)
from ans_errors import MalformedExtension, MissingRequiredKey, UnknownProtocol
from ansname import parse_ansname
from conftest import MCP_SENTIMENT, SENTIMENT_ENDPOINT, a2a_extensions, acp_extensions
from schemas import canonical_digest


def _request(extensions, endpoint=None, protocol="mcp"):
    body = {"protocol": protocol, "agentID": "sentimentAnalyzer", "protocolExtensions": extensions}
    if endpoint:
        body["endpoint"] = endpoint
    return body


def _record(name, extensions, endpoint):
    return SimpleNamespace(name=parse_ansname(name), protocol_extensions=extensions, endpoint=endpoint)


# ---------------------------------------------------------------------- MCP
def test_mcp_normalizes_tool_description():
    metadata = parse_metadata(MCPAdapter(), MCP_SENTIMENT)
    assert metadata["mcp.description"] == "Analyzes sentiment of text input."
    assert metadata["mcp.endpoint"] == SENTIMENT_ENDPOINT
    assert metadata["mcp.inputSchemaDigest"] == canonical_digest(MCP_SENTIMENT["input_schema"])
    assert metadata["mcp.outputSchemaDigest"] == canonical_digest(MCP_SENTIMENT["output_schema"])


def test_mcp_missing_endpoint():
    blob = {k: v for k, v in MCP_SENTIMENT.items() if k != "mcpEndpoint"}
    with pytest.raises(MissingRequiredKey) as info:
        MCPAdapter().parse_metadata(blob)
    assert info.value.details == ["mcpEndpoint"]


def test_mcp_wrong_type_is_malformed():
    with pytest.raises(MalformedExtension):
        MCPAdapter().parse_metadata(dict(MCP_SENTIMENT, description=42))
    with pytest.raises(MalformedExtension):
        MCPAdapter().parse_metadata(["not", "an", "object"])


def test_unknown_keys_kept_under_raw_namespace():
    metadata = MCPAdapter().parse_metadata(dict(MCP_SENTIMENT, pricing={"perCall": 0.01}))
    assert metadata["mcp.raw.pricing"] == {"perCall": 0.01}


def test_mcp_rejects_invalid_json_schema():
    verdict = MCPAdapter().validate_registration(
        _request(dict(MCP_SENTIMENT, input_schema={"type": "not-a-type"}))
    )
    assert not verdict
    assert any("input_schema" in v for v in verdict.violations)


def test_mcp_discovery_round_trip():
    adapter = get_adapter("mcp")
    record = _record("mcp://sentimentAnalyzer.textAnalysis.ExampleCorp.v1.0",
                     dict(MCP_SENTIMENT, pricing="free"), SENTIMENT_ENDPOINT)
    doc = create_discovery_response(adapter, record)
    assert doc["ansName"] == "mcp://sentimentAnalyzer.textAnalysis.ExampleCorp.v1.0.0"
    assert doc["tool"]["name"] == "sentimentAnalyzer"
    assert doc["tool"]["inputSchema"] == MCP_SENTIMENT["input_schema"]
    assert adapter.extensions_from_discovery(doc) == record.protocol_extensions


# ---------------------------------------------------------------------- A2A
def test_a2a_card_digest_checked():
    ext = a2a_extensions("https://translate.example.com/a2a")
    assert A2AAdapter().validate_registration(_request(ext, protocol="a2a"))
    ext["agentCard"]["url"] = "https://evil.example.com"
    verdict = A2AAdapter().validate_registration(_request(ext, protocol="a2a"))
    assert not verdict
    assert "digest mismatch" in verdict.violations[0]


def test_a2a_metadata_and_discovery():
    ext = a2a_extensions("https://translate.example.com/a2a", note="beta")
    adapter = A2AAdapter()
    metadata = adapter.parse_metadata(ext)
    assert metadata["a2a.endpoint"] == "https://translate.example.com/a2a"
    assert metadata["a2a.skills"] == ["translate"]
    record = _record("a2a://translatorBot.DocumentTranslation.exampleCorp.v1.2.3.secure",
                     ext, "https://translate.example.com/a2a")
    doc = adapter.create_discovery_response(record)
    assert doc["agentCardEnvelope"]["agentCard"] == ext["agentCard"]
    assert adapter.extensions_from_discovery(doc) == ext


# ---------------------------------------------------------------------- ACP
def test_acp_role_must_be_configured():
    ext = acp_extensions("https://planner.example.com/acp", role="orchestrator")
    assert ACPAdapter().validate_registration(_request(ext, protocol="acp"))
    narrow = ACPAdapter(roles={"worker"})
    verdict = narrow.validate_registration(_request(ext, protocol="acp"))
    assert not verdict
    assert "orchestrator" in verdict.violations[0]


def test_acp_missing_profile():
    with pytest.raises(MissingRequiredKey):
        ACPAdapter().parse_metadata({"role": "worker"})


# ------------------------------------------------------------ common rules
def test_endpoint_must_use_tls_by_default():
    ext = dict(MCP_SENTIMENT, mcpEndpoint="http://sentiment.example.com/analyze")
    verdict = MCPAdapter().validate_registration(_request(ext))
    assert not verdict
    assert any("https://" in v for v in verdict.violations)
    assert MCPAdapter(require_tls_endpoints=False).validate_registration(_request(ext))


def test_explicit_endpoint_overrides_metadata():
    ext = dict(MCP_SENTIMENT, mcpEndpoint="http://sentiment.example.com/analyze")
    assert validate_registration(MCPAdapter(), _request(ext, endpoint="https://gateway.example.com/s"))


def test_validate_registration_never_raises():
    verdict = MCPAdapter().validate_registration(_request({"description": "x"}))
    assert not verdict
    assert verdict.violations


def test_adapter_registry():
    registry = default_adapters()
    assert registry.protocols == ("a2a", "acp", "mcp")
    assert isinstance(registry.get("MCP"), MCPAdapter)
    with pytest.raises(UnknownProtocol):
        registry.get("agentnet")
    with pytest.raises(ValueError):
        registry.register(MCPAdapter())
    only_mcp = default_adapters(enabled=("mcp",))
    with pytest.raises(UnknownProtocol):
        only_mcp.get("a2a")
    assert AdapterRegistry().protocols == ()


def test_descriptor():
    descriptor = MCPAdapter().descriptor
    assert descriptor.protocol == "mcp"
    assert "mcpEndpoint" in descriptor.required_extension_keys


if __name__ == "__main__":
    sys.exit(pytest.main([__file__]))
