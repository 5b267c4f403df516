#!/usr/bin/env python3
"""
Filename: ans_errors.py
Description: Error taxonomy shared by every Agent Name Service module.

Each error carries a stable ``code`` (used in the JSON error envelope),
the HTTP status the service answers with, and the exit code the CLI
returns. Exit codes: 1 usage, 2 schema, 3 network, 4 verification
failure, 5 not found.
"""

from typing import Any, Dict, List, Optional

EXIT_USAGE = 1
EXIT_SCHEMA = 2
EXIT_NETWORK = 3
EXIT_VERIFICATION = 4
EXIT_NOT_FOUND = 5


class ANSError(Exception):
    """Base class for all registry, resolver and service errors."""

    code = "InternalError"
    http_status = 500
    exit_code = EXIT_USAGE

    def __init__(self, message: str = "", details: Optional[List[Any]] = None):
        super().__init__(message or self.code)
        self.message = message or self.code
        self.details: List[Any] = list(details or [])

    def to_envelope(self) -> Dict[str, Any]:
        """
        Render the fixed error payload.

        Returns:
            dict: ``{"code", "message", "details"}``
        """
        return {"code": self.code, "message": self.message, "details": self.details}

    def __repr__(self) -> str:
        return f"{self.__class__.__name__}({self.message!r})"


# ------------------------------ NAMING ERRORS ----------------------------- #
class MalformedName(ANSError):
    code = "MalformedName"
    http_status = 400
    exit_code = EXIT_SCHEMA


class MalformedRange(ANSError):
    code = "MalformedRange"
    http_status = 400
    exit_code = EXIT_SCHEMA


class UnknownProtocol(ANSError):
    code = "UnknownProtocol"
    http_status = 400
    exit_code = EXIT_SCHEMA


class IncompatibleVersion(ANSError):
    code = "IncompatibleVersion"
    http_status = 409
    exit_code = EXIT_NOT_FOUND


# ------------------------------ SCHEMA ERRORS ----------------------------- #
class SchemaViolation(ANSError):
    code = "SchemaViolation"
    http_status = 400
    exit_code = EXIT_SCHEMA


class UnknownKind(ANSError):
    code = "UnknownKind"
    http_status = 400
    exit_code = EXIT_SCHEMA


class NonFiniteNumber(ANSError):
    code = "NonFiniteNumber"
    http_status = 400
    exit_code = EXIT_SCHEMA


# ----------------------------- ADAPTER ERRORS ----------------------------- #
class AdapterRejection(ANSError):
    code = "AdapterRejection"
    http_status = 422
    exit_code = EXIT_SCHEMA


class MissingRequiredKey(AdapterRejection):
    code = "MissingRequiredKey"


class MalformedExtension(AdapterRejection):
    code = "MalformedExtension"


# ------------------------------- PKI ERRORS ------------------------------- #
class InvalidCSR(ANSError):
    code = "InvalidCSR"
    http_status = 400
    exit_code = EXIT_SCHEMA


class UnsupportedAlgorithm(ANSError):
    code = "UnsupportedAlgorithm"
    http_status = 400
    exit_code = EXIT_USAGE


class UnknownSerial(ANSError):
    code = "UnknownSerial"
    http_status = 404
    exit_code = EXIT_NOT_FOUND


class InvalidCertificate(ANSError):
    code = "InvalidCertificate"
    http_status = 400
    exit_code = EXIT_VERIFICATION


# ---------------------------- REGISTRY ERRORS ----------------------------- #
class DuplicateName(ANSError):
    code = "DuplicateName"
    http_status = 409
    exit_code = EXIT_USAGE


class UnknownAgent(ANSError):
    code = "UnknownAgent"
    http_status = 404
    exit_code = EXIT_NOT_FOUND


class AgentNotFound(ANSError):
    code = "AgentNotFound"
    http_status = 404
    exit_code = EXIT_NOT_FOUND


class InactiveAgent(ANSError):
    code = "InactiveAgent"
    http_status = 410
    exit_code = EXIT_NOT_FOUND


class RevokedAgent(ANSError):
    code = "RevokedAgent"
    http_status = 403
    exit_code = EXIT_VERIFICATION


class BadProof(ANSError):
    code = "BadProof"
    http_status = 403
    exit_code = EXIT_VERIFICATION


class TamperedRecord(ANSError):
    code = "TamperedRecord"
    http_status = 500
    exit_code = EXIT_VERIFICATION


class ChallengeTimeout(ANSError):
    code = "ChallengeTimeout"
    http_status = 504
    exit_code = EXIT_NETWORK


# ---------------------------- RESOLVER ERRORS ----------------------------- #
class InvalidEndpoint(ANSError):
    code = "InvalidEndpoint"
    http_status = 502
    exit_code = EXIT_VERIFICATION


# ----------------------------- SERVICE ERRORS ----------------------------- #
class RateLimited(ANSError):
    code = "RateLimited"
    http_status = 429
    exit_code = EXIT_NETWORK


class TransportError(ANSError):
    code = "TransportError"
    http_status = 503
    exit_code = EXIT_NETWORK


class ConfigError(ANSError):
    code = "ConfigError"
    http_status = 500
    exit_code = EXIT_USAGE


# Lookup used by clients rebuilding errors from an envelope.
ERRORS_BY_CODE: Dict[str, type] = {
    cls.code: cls
    for cls in (
        MalformedName, MalformedRange, UnknownProtocol, IncompatibleVersion,
        SchemaViolation, UnknownKind, NonFiniteNumber, AdapterRejection,
        MissingRequiredKey, MalformedExtension, InvalidCSR, UnsupportedAlgorithm,
        UnknownSerial, InvalidCertificate, DuplicateName, UnknownAgent, AgentNotFound, InactiveAgent,
        RevokedAgent, BadProof, TamperedRecord, ChallengeTimeout, InvalidEndpoint,
        RateLimited, TransportError, ConfigError,
    )
}


def error_from_envelope(envelope: Dict[str, Any]) -> ANSError:
    """Rebuild an ANSError from a ``{code, message, details}`` payload."""
    cls = ERRORS_BY_CODE.get(str(envelope.get("code")), ANSError)
    return cls(str(envelope.get("message", "")), envelope.get("details") or [])
