#!/usr/bin/env python3
"""
Filename: test_ansname.py
Description: ANSName grammar, version comparison and version negotiation tests
"""

import random
import sys

import pytest

from ans_errors import IncompatibleVersion, MalformedName, MalformedRange
from ansname import (
    ANSName,
    compare_versions,
    format_ansname,
    is_ansname,
    is_version_compatible,
    parse_ansname,
    parse_range,
    version_negotiation,
)
from resolver import Candidate


# ------------------------------------------------------------------ parsing
@pytest.mark.parametrize("text, expected", [
    ("a2a://textProcessor.DocumentTranslation.AcmeCorp.v2.1.hipaa",
     ("a2a", "textProcessor", "DocumentTranslation", "AcmeCorp", "2.1.0", "hipaa")),
    ("mcp://sentimentAnalyzer.textAnalysis.ExampleCorp.v1.0",
     ("mcp", "sentimentAnalyzer", "textAnalysis", "ExampleCorp", "1.0.0", None)),
    ("acp://planner.orchestration.Initech.v3",
     ("acp", "planner", "orchestration", "Initech", "3.0.0", None)),
    ("mcp://a.b.c.v1.0.0-rc1",
     ("mcp", "a", "b", "c", "1.0.0-rc1", None)),
    ("a2a://a.b.c.v1.2.3+build7.eu.west",
     ("a2a", "a", "b", "c", "1.2.3+build7", "eu.west")),
])
def test_parse_examples(text, expected):
    n = parse_ansname(text)
    assert (n.protocol, n.agent_id, n.capability, n.provider, n.version_text, n.extension) == expected


@pytest.mark.parametrize("text", [
    "a2a://broken",
    "textProcessor.DocumentTranslation.AcmeCorp.v2.1",
    "a2a://textProcessor.DocumentTranslation.AcmeCorp",
    "a2a://textProcessor..AcmeCorp.v2.1",
    "a2a://textProcessor.DocumentTranslation.AcmeCorp.v2.1.",
    "a2a://v1.DocumentTranslation.AcmeCorp.v2",
    "://textProcessor.DocumentTranslation.AcmeCorp.v2.1",
    "a2a://text processor.DocumentTranslation.AcmeCorp.v2.1",
])
def test_malformed_names(text):
    with pytest.raises(MalformedName):
        parse_ansname(text)
    assert not is_ansname(text)


def test_unknown_protocol_is_extensible_not_an_error():
    n = parse_ansname("agentnet://scheduler.calendar.Globex.v1.0.0")
    assert n.is_extensible
    assert n.protocol_kind == "extensible"
    assert not parse_ansname("mcp://a.b.c.v1").is_extensible


def test_protocol_is_case_insensitive():
    assert parse_ansname("MCP://a.b.c.v1").protocol == "mcp"


def test_format_examples():
    n = ANSName("a2a", "translatorBot", "DocumentTranslation", "exampleCorp", "1.2.3", "secure")
    assert format_ansname(n) == "a2a://translatorBot.DocumentTranslation.exampleCorp.v1.2.3.secure"
    assert str(ANSName("mcp", "a", "b", "c", "0.0.0")) == "mcp://a.b.c.v0.0.0"
    assert str(ANSName("mcp", "a", "b", "c", "1.0.0-rc1")) == "mcp://a.b.c.v1.0.0-rc1"


def test_format_is_canonical():
    short = parse_ansname("a2a://textProcessor.DocumentTranslation.AcmeCorp.v2.1.hipaa")
    assert str(short) == "a2a://textProcessor.DocumentTranslation.AcmeCorp.v2.1.0.hipaa"


def test_dotted_prerelease_rejected_in_names():
    with pytest.raises(MalformedName):
        ANSName("mcp", "a", "b", "c", "1.0.0-rc.1")


@pytest.mark.parametrize("labels", [
    ("v2", "textAnalysis", "ExampleCorp"),
    ("sentimentAnalyzer", "v1-beta", "ExampleCorp"),
    ("sentimentAnalyzer", "textAnalysis", "v10+b7"),
])
def test_version_shaped_labels_rejected(labels):
    with pytest.raises(MalformedName):
        ANSName("mcp", *labels, "1.0.0")


def test_version_like_words_are_ordinary_labels():
    n = ANSName("mcp", "vault", "v2x", "V3", "1.0.0")
    assert parse_ansname(format_ansname(n)) == n


_ALPHABET = "abcdefghijklmnopqrstuwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789_-"
_FIRST = "abcdefghijklmnopqrstuwxyzABCDEFGHIJKLMNOPQRSTUWXYZ"


def _label(rng: random.Random) -> str:
    return rng.choice(_FIRST) + "".join(rng.choice(_ALPHABET) for _ in range(rng.randint(0, 11)))


def _random_name(rng: random.Random) -> ANSName:
    version = f"{rng.randint(0, 40)}.{rng.randint(0, 40)}.{rng.randint(0, 40)}"
    if rng.random() < 0.2:
        version += "-" + rng.choice(["rc1", "beta", "alpha2", "0"])
    if rng.random() < 0.1:
        version += "+" + rng.choice(["b7", "sha5", "20250101"])
    extension = None
    if rng.random() < 0.4:
        extension = ".".join(_label(rng) for _ in range(rng.randint(1, 3)))
    protocol = rng.choice(["a2a", "mcp", "acp", "agentnet", "x-proto"])
    return ANSName(protocol, _label(rng), _label(rng), _label(rng), version, extension)


def test_parse_format_round_trip_fuzz():
    rng = random.Random(20251018)
    for _ in range(10_000):
        n = _random_name(rng)
        text = format_ansname(n)
        back = parse_ansname(text)
        assert back == n, text
        assert back.version.build == n.version.build
        assert format_ansname(back) == text


# ----------------------------------------------------------------- versions
def test_compare_versions():
    assert compare_versions("1.0.0", "1.0.1") == -1
    assert compare_versions("1.0.0-rc1", "1.0.0") == -1
    assert compare_versions("2.0.0", "1.9.9") == 1
    assert compare_versions("1.0.0+build1", "1.0.0+build2") == 0


@pytest.mark.parametrize("version, rng, ok", [
    ("1.4.0", "^1.2.0", True),
    ("2.0.0", "^1.2.0", False),
    ("1.2.9", "~1.2.0", True),
    ("1.3.0", "~1.2.0", False),
    ("0.2.5", "^0.2.0", True),
    ("0.3.0", "^0.2.0", False),
    ("1.5.0", ">=1.0.0 <2.0.0", True),
    ("3.1.0", "1.x || >=3.0.0", True),
    ("1.0.0-rc2", ">=1.0.0-rc1", True),
    ("1.1.0-rc1", ">=1.0.0-rc1", False),
    ("1.0.0-rc1", "*", False),
])
def test_is_version_compatible(version, rng, ok):
    assert is_version_compatible(version, rng) is ok


@pytest.mark.parametrize("bad", ["banana", "^", ">=1.0.0 ||", "1.0.0 - "])
def test_malformed_range(bad):
    with pytest.raises(MalformedRange):
        parse_range(bad)


REGISTERED = ["1.0.0", "1.2.3", "1.0.0-rc1", "2.0.0"]

# Worked out by hand from SemVer precedence and the prerelease rule
NEGOTIATION_TABLE = {
    "*": "2.0.0",
    "1.0.0": "1.0.0",
    "^1.0.0": "1.2.3",
    "~1.2.0": "1.2.3",
    "^3.0.0": None,
}


def _candidates(versions):
    return [
        Candidate(ANSName("mcp", "agent", "cap", "prov", v), f"uuid-{i}")
        for i, v in enumerate(versions)
    ]


@pytest.mark.parametrize("range_text, expected", sorted(NEGOTIATION_TABLE.items()))
def test_version_negotiation_table(range_text, expected):
    candidates = _candidates(REGISTERED)
    if expected is None:
        with pytest.raises(IncompatibleVersion):
            version_negotiation(candidates, range_text)
        return
    assert version_negotiation(candidates, range_text).name.version_text == expected


def test_negotiation_prefers_release_over_prerelease():
    chosen = version_negotiation(_candidates(["1.0.0-rc1", "1.0.0"]), "*")
    assert chosen.name.version_text == "1.0.0"


def test_negotiation_is_deterministic_under_permutation():
    rng = random.Random(7)
    versions = REGISTERED + ["1.2.3+b1", "1.2.3+b2"]
    candidates = _candidates(versions)
    expected = version_negotiation(candidates, "^1.0.0")
    for _ in range(50):
        rng.shuffle(candidates)
        assert version_negotiation(candidates, "^1.0.0") == expected


if __name__ == "__main__":
    sys.exit(pytest.main([__file__]))
