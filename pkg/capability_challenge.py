#!/usr/bin/env python3
"""
Filename: capability_challenge.py
Description: Transport for known-answer capability challenges

The registry sends an agent an input whose correct answer it already
knows (e.g. a sentence with known sentiment) and compares the agent's
answer and self-reported confidence with the claimed accuracy.

Agents answer POST requests with ``{"output": <str>, "confidence": <0..1>}``.
"""

from abc import ABC, abstractmethod
from dataclasses import dataclass
from typing import Any, Callable, Optional, Tuple

import requests

from ans_errors import ChallengeTimeout
from config import CHALLENGE_TIMEOUT_SECONDS
from logging_config import get_logger

logger = get_logger("ans_challenge", enable_console=False)


@dataclass(frozen=True)
class ChallengeReply:
    received: str
    confidence: float


class ChallengeClient(ABC):
    """Delivers one challenge to an agent endpoint."""

    @abstractmethod
    def send(self, endpoint: str, challenge_id: str, challenge_input: Any) -> ChallengeReply:
        """Raises ChallengeTimeout when the agent does not answer in time."""


def _reply_from(doc: Any) -> ChallengeReply:
    # A malformed answer is a failed challenge, not a transport error
    if not isinstance(doc, dict):
        return ChallengeReply("", 0.0)
    output = doc.get("output")
    try:
        confidence = float(doc.get("confidence", 0.0))
    except (TypeError, ValueError):
        confidence = 0.0
    if not 0.0 <= confidence <= 1.0:
        confidence = 0.0
    return ChallengeReply(output if isinstance(output, str) else "", confidence)


class HttpChallengeClient(ChallengeClient):
    """POSTs the challenge to the agent over HTTP(S)."""

    def __init__(self, timeout: float = CHALLENGE_TIMEOUT_SECONDS, session: Optional[requests.Session] = None):
        self.timeout = timeout
        self.session = session or requests.Session()

    def send(self, endpoint, challenge_id, challenge_input):
        try:
            response = self.session.post(
                endpoint,
                json={"challengeId": challenge_id, "input": challenge_input},
                timeout=self.timeout,
            )
        except requests.exceptions.Timeout:
            raise ChallengeTimeout(f"agent at {endpoint} did not answer within {self.timeout}s")
        except requests.exceptions.RequestException as e:
            raise ChallengeTimeout(f"agent at {endpoint} unreachable: {e}")

        if response.status_code != requests.codes.ok:
            logger.warning(
                f"[Challenge] {endpoint} answered HTTP {response.status_code} to {challenge_id}"
            )
            return ChallengeReply("", 0.0)
        try:
            return _reply_from(response.json())
        except ValueError:
            return ChallengeReply("", 0.0)


class CallableChallengeClient(ChallengeClient):
    """In-process agent stand-in: ``responder(endpoint, input) -> (output, confidence)``."""

    def __init__(self, responder: Callable[[str, Any], Tuple[str, float]]):
        self.responder = responder

    def send(self, endpoint, challenge_id, challenge_input):
        output, confidence = self.responder(endpoint, challenge_input)
        return _reply_from({"output": output, "confidence": confidence})
