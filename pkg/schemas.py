#!/usr/bin/env python3
"""
Filename: schemas.py
Description: Pinned JSON Schema (draft-07) validation for every registry
message, plus canonical JSON encoding for signatures.

Schema files live in ``schemas/`` next to this module and are checked
against ``schemas/manifest.json`` (sha256 per file) when the module is
imported. A hash mismatch stops the import.
"""

import hashlib
import json
import math
import os
from dataclasses import dataclass
from decimal import Decimal
from typing import Any, Dict, Iterable, List, NamedTuple, Tuple

from jsonschema import Draft7Validator
from jsonschema.exceptions import SchemaError

from ans_errors import ConfigError, NonFiniteNumber, SchemaViolation, UnknownKind

SCHEMA_DIR = os.path.join(os.path.dirname(os.path.abspath(__file__)), "schemas")
MANIFEST_FILENAME = "manifest.json"

KIND_FILES: Dict[str, str] = {
    "RegistrationRequest": "agent_registration_request_schema.json",
    "RegistrationResponse": "agent_registration_response_schema.json",
    "RenewalRequest": "agent_renewal_request_schema.json",
    "RenewalResponse": "agent_renewal_response_schema.json",
    "CapabilityRequest": "agent_capability_request.schema.json",
    "CapabilityResponse": "agent_capability_response.schema.json",
    # Operator and lifecycle messages
    "DeregistrationRequest": "agent_deregistration_request_schema.json",
    "RevocationRequest": "agent_revocation_request_schema.json",
    "ChallengeRequest": "capability_challenge_request_schema.json",
}
KINDS = tuple(KIND_FILES)


def load_validators(directory: str = SCHEMA_DIR) -> Dict[str, Draft7Validator]:
    """
    Load and hash-check all schema files.

    Args:
        directory (str): folder holding the schema files and manifest

    Returns:
        dict: kind -> compiled Draft7Validator

    Raises:
        ConfigError: missing file, hash mismatch, or invalid schema
    """
    try:
        with open(os.path.join(directory, MANIFEST_FILENAME), "r", encoding="utf-8") as f:
            manifest = json.load(f)
    except (OSError, ValueError) as e:
        raise ConfigError(f"cannot read schema manifest in {directory}: {e}")

    validators: Dict[str, Draft7Validator] = {}
    for kind, filename in KIND_FILES.items():
        path = os.path.join(directory, filename)
        try:
            with open(path, "rb") as f:
                raw = f.read()
        except OSError as e:
            raise ConfigError(f"missing schema {filename}: {e}")
        digest = hashlib.sha256(raw).hexdigest()
        if manifest.get(filename) != digest:
            raise ConfigError(f"schema {filename} does not match its pinned hash")
        schema = json.loads(raw.decode("utf-8"))
        try:
            Draft7Validator.check_schema(schema)
        except SchemaError as e:
            raise ConfigError(f"schema {filename} is not valid draft-07: {e.message}")
        validators[kind] = Draft7Validator(schema)
    return validators


_VALIDATORS = load_validators()


class Violation(NamedTuple):
    path: str  # JSON pointer
    message: str


@dataclass(frozen=True)
class ValidationReport:
    kind: str
    violations: Tuple[Violation, ...] = ()

    @property
    def valid(self) -> bool:
        return not self.violations

    def __bool__(self) -> bool:
        return self.valid

    def details(self) -> List[Dict[str, str]]:
        return [{"path": v.path, "message": v.message} for v in self.violations]

    def raise_for_violations(self) -> None:
        if self.violations:
            first = self.violations[0]
            raise SchemaViolation(
                f"{self.kind} invalid at {first.path or '/'}: {first.message}",
                self.details(),
            )


def _pointer(parts: Iterable[Any]) -> str:
    return "".join(
        "/" + str(p).replace("~", "~0").replace("/", "~1") for p in parts
    )


def validate(kind: str, body: Any) -> ValidationReport:
    """
    Validate ``body`` against the pinned schema for ``kind``.

    Missing required properties are reported at the pointer of the missing
    property (e.g. ``/certificate``). Input is never mutated.

    Raises:
        UnknownKind: ``kind`` is not a known message kind
    """
    validator = _VALIDATORS.get(kind)
    if validator is None:
        raise UnknownKind(f"unknown message kind {kind!r}")

    found = set()
    for error in validator.iter_errors(body):
        base = list(error.absolute_path)
        if error.validator == "required" and isinstance(error.instance, dict):
            for prop in error.validator_value:
                if prop not in error.instance:
                    found.add(Violation(_pointer(base + [prop]), f"'{prop}' is a required property"))
        else:
            found.add(Violation(_pointer(base), error.message))
    return ValidationReport(kind, tuple(sorted(found)))


def require_valid(kind: str, body: Any) -> Any:
    """Validate and return ``body``; raises SchemaViolation when invalid."""
    validate(kind, body).raise_for_violations()
    return body


# =========================== CANONICAL JSON =============================== #
def _format_float(value: float) -> str:
    """ECMAScript Number-to-string on the shortest round-trip digits."""
    if value == 0:
        return "0"
    sign = "-" if value < 0 else ""
    _, digit_tuple, exponent = Decimal(repr(abs(value))).as_tuple()
    digits = "".join(str(d) for d in digit_tuple)
    while len(digits) > 1 and digits.endswith("0"):
        digits = digits[:-1]
        exponent += 1
    k = len(digits)
    n = k + exponent
    if k <= n <= 21:
        text = digits + "0" * (n - k)
    elif 0 < n <= 21:
        text = digits[:n] + "." + digits[n:]
    elif -6 < n <= 0:
        text = "0." + "0" * (-n) + digits
    else:
        e = n - 1
        mantissa = digits[0] + ("." + digits[1:] if k > 1 else "")
        text = f"{mantissa}e{'+' if e > 0 else '-'}{abs(e)}"
    return sign + text


def _encode(value: Any, out: List[str]) -> None:
    if value is None:
        out.append("null")
    elif value is True:
        out.append("true")
    elif value is False:
        out.append("false")
    elif isinstance(value, int):
        out.append(str(value))
    elif isinstance(value, float):
        if not math.isfinite(value):
            raise NonFiniteNumber(f"non-finite number {value!r} cannot be canonicalized")
        out.append(_format_float(value))
    elif isinstance(value, str):
        out.append(json.dumps(value, ensure_ascii=False))
    elif isinstance(value, dict):
        out.append("{")
        # JCS orders keys by UTF-16 code units
        for i, key in enumerate(sorted(value, key=lambda k: str(k).encode("utf-16-be"))):
            if not isinstance(key, str):
                raise TypeError(f"object keys must be strings, got {type(key).__name__}")
            if i:
                out.append(",")
            out.append(json.dumps(key, ensure_ascii=False))
            out.append(":")
            _encode(value[key], out)
        out.append("}")
    elif isinstance(value, (list, tuple)):
        out.append("[")
        for i, item in enumerate(value):
            if i:
                out.append(",")
            _encode(item, out)
        out.append("]")
    else:
        raise TypeError(f"{type(value).__name__} is not JSON serializable")


def canonicalize(body: Any) -> bytes:
    """
    Deterministic UTF-8 JSON: sorted keys, no whitespace, shortest numbers.

    Integral floats encode like integers, so ``{"x": 1.0}`` and ``{"x": 1}``
    produce identical bytes.

    Raises:
        NonFiniteNumber: NaN or infinity anywhere in ``body``
    """
    out: List[str] = []
    _encode(body, out)
    return "".join(out).encode("utf-8")


def canonical_digest(body: Any) -> str:
    """``sha256:<hex>`` of the canonical encoding."""
    return "sha256:" + hashlib.sha256(canonicalize(body)).hexdigest()


def signing_bytes(body: Dict[str, Any], exclude: Tuple[str, ...] = ("proof",)) -> bytes:
    """Canonical bytes of a request minus its proof field(s)."""
    return canonicalize({k: v for k, v in body.items() if k not in exclude})
