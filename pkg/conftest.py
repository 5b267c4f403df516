#!/usr/bin/env python3
"""
Filename: conftest.py
Description: Shared pytest fixtures for the Agent Name Service tests

Everything runs on a FakeClock so TTLs, token buckets and certificate
lifetimes can be stepped deterministically.
"""

import os
import sys
import tempfile

# Keep test runs from writing into the project's logs/ directory
os.environ.setdefault("ANS_LOG_DIR", tempfile.mkdtemp(prefix="ans-test-logs-"))
sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pytest

from ansname import parse_ansname
from capability_challenge import CallableChallengeClient
from config import ServiceConfig
from pki import generate_keypair
from registry import AgentRegistry
from resolver import InProcessRegistryClient, Resolver
from schemas import canonical_digest
import agent_requests

START = 1_760_000_000  # mid-October 2025, epoch seconds

SENTIMENT_ENDPOINT = "https://sentiment.example.com/analyze"

# MCP tool description as an agent would publish it
MCP_SENTIMENT = {
    "description": "Analyzes sentiment of text input.",
    "mcpEndpoint": SENTIMENT_ENDPOINT,
    "input_schema": {
        "type": "object",
        "properties": {"text": {"type": "string"}},
        "required": ["text"],
    },
    "output_schema": {
        "type": "object",
        "properties": {
            "sentiment": {"type": "string", "enum": ["positive", "negative", "neutral"]},
            "confidence": {"type": "number"},
        },
    },
}


class FakeClock:
    """Callable clock; only moves when told to."""

    def __init__(self, now: float = START):
        self.now = float(now)

    def __call__(self) -> float:
        return self.now

    def advance(self, seconds: float) -> float:
        self.now += seconds
        return self.now


def mcp_extensions(endpoint: str = SENTIMENT_ENDPOINT, **extra):
    ext = dict(MCP_SENTIMENT, mcpEndpoint=endpoint)
    ext.update(extra)
    return ext


def a2a_extensions(endpoint: str, name: str = "translatorBot", **extra):
    card = {
        "name": name,
        "url": endpoint,
        "version": "1.0",
        "skills": [{"id": "translate", "name": "Translate documents"}],
    }
    ext = {"agentCard": card, "cardDigest": canonical_digest(card)}
    ext.update(extra)
    return ext


def acp_extensions(endpoint: str, role: str = "worker", **extra):
    ext = {"role": role, "profile": {"endpoint": endpoint, "languages": ["en", "de"]}}
    ext.update(extra)
    return ext


EXTENSION_BUILDERS = {"mcp": mcp_extensions, "a2a": a2a_extensions, "acp": acp_extensions}


class AgentFactory:
    """Creates keys and registration requests; optionally registers them."""

    def __init__(self, registry: AgentRegistry):
        self.registry = registry
        self.keys = {}

    def request(self, name: str, endpoint: str = None, extensions=None, algorithm: str = "ed25519"):
        n = parse_ansname(name)
        endpoint = endpoint or f"https://{n.agent_id.lower()}.{n.provider.lower()}.example.com/v{n.version.major}"
        if extensions is None:
            extensions = EXTENSION_BUILDERS[n.protocol](endpoint)
        key, _ = generate_keypair(algorithm)
        self.keys[str(n)] = key
        return key, agent_requests.registration_request(n, key, extensions)

    def register(self, name: str, **kwargs):
        key, body = self.request(name, **kwargs)
        response = self.registry.register(body)
        return key, response


@pytest.fixture
def clock():
    return FakeClock()


@pytest.fixture
def challenge_answers():
    """endpoint -> (output, confidence) for the scripted challenge agent."""
    return {}


@pytest.fixture
def service_config(tmp_path):
    return ServiceConfig(store_dir=str(tmp_path / "store"), dev_no_tls=True)


@pytest.fixture
def registry(service_config, clock, challenge_answers):
    client = CallableChallengeClient(
        lambda endpoint, challenge_input: challenge_answers.get(endpoint, ("", 0.0))
    )
    reg = AgentRegistry.open(service_config, None, clock=clock, challenge_client=client)
    yield reg
    reg.store.close()


@pytest.fixture
def agents(registry):
    return AgentFactory(registry)


@pytest.fixture
def resolver(registry, clock):
    return Resolver(InProcessRegistryClient(registry), registry.trust_anchor, clock=clock)
