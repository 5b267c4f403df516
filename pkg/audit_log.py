#!/usr/bin/env python3
"""
Filename: audit_log.py
Description: Append-only, hash-chained registry audit trail

Every registry mutation appends one JSON line (op, agent UUID, hash of the
stored record, hash of the previous entry). A sidecar ``<log>.head`` file
holds the index and hash of the newest entry so truncating the log is
detected as well as editing it.
"""

import hashlib
import json
import os
import threading
import time
from dataclasses import asdict, dataclass
from typing import Callable, Dict, Iterator, List, Optional

from logging_config import setup_registry_logger
from schemas import canonicalize

logger = setup_registry_logger()

GENESIS_HASH = hashlib.sha256(b"ANS-AUDIT-GENESIS").hexdigest()


@dataclass
class AuditEntry:
    index: int
    timestamp: int
    op: str
    agent_uuid: str
    record_hash: str
    prev_hash: str
    entry_hash: str = ""

    def compute_hash(self) -> str:
        content = canonicalize({
            "index": self.index,
            "timestamp": self.timestamp,
            "op": self.op,
            "agentUUID": self.agent_uuid,
            "recordHash": self.record_hash,
            "prevHash": self.prev_hash,
        })
        return hashlib.sha256(content).hexdigest()


@dataclass(frozen=True)
class AuditVerdict:
    valid: bool
    entries: int
    reason: Optional[str] = None

    def __bool__(self) -> bool:
        return self.valid


class AuditLog:
    """NDJSON audit trail with a single writer lock."""

    def __init__(self, path: str, clock: Callable[[], float] = time.time):
        self.path = path
        self.head_path = f"{path}.head"
        self.clock = clock
        self._lock = threading.Lock()
        self._count = 0
        self._last_hash = GENESIS_HASH
        self._record_hashes: Dict[str, str] = {}
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self._load()

    def _load(self) -> None:
        for entry in self._read_entries():
            self._count = entry.index + 1
            self._last_hash = entry.entry_hash
            self._record_hashes[entry.agent_uuid] = entry.record_hash
        if not os.path.exists(self.head_path) and self._count == 0:
            self._write_head()

    def _read_entries(self) -> Iterator[AuditEntry]:
        if not os.path.exists(self.path):
            return
        with open(self.path, "r", encoding="utf-8") as f:
            for line in f:
                line = line.strip()
                if line:
                    yield AuditEntry(**json.loads(line))

    def _write_head(self) -> None:
        tmp = f"{self.head_path}.tmp"
        with open(tmp, "w", encoding="utf-8") as f:
            json.dump({"count": self._count, "entry_hash": self._last_hash}, f)
        os.replace(tmp, self.head_path)

    def append(self, op: str, agent_uuid: str, record_hash: str) -> AuditEntry:
        """Append one entry chained to the previous one."""
        with self._lock:
            entry = AuditEntry(
                index=self._count,
                timestamp=int(self.clock()),
                op=op,
                agent_uuid=agent_uuid,
                record_hash=record_hash,
                prev_hash=self._last_hash,
            )
            entry.entry_hash = entry.compute_hash()
            with open(self.path, "a", encoding="utf-8") as f:
                f.write(json.dumps(asdict(entry), sort_keys=True) + "\n")
                f.flush()
                os.fsync(f.fileno())
            self._count += 1
            self._last_hash = entry.entry_hash
            self._record_hashes[agent_uuid] = record_hash
            self._write_head()
        return entry

    def last_record_hash(self, agent_uuid: str) -> Optional[str]:
        """Hash of the record as of its latest logged mutation."""
        return self._record_hashes.get(agent_uuid)

    def entries(self, agent_uuid: Optional[str] = None, op: Optional[str] = None) -> List[AuditEntry]:
        return [
            e for e in self._read_entries()
            if (agent_uuid is None or e.agent_uuid == agent_uuid) and (op is None or e.op == op)
        ]

    def __len__(self) -> int:
        return self._count

    def verify(self) -> AuditVerdict:
        """
        Re-hash the whole log and compare against the head file.

        Returns:
            AuditVerdict: invalid with a reason on edit, reordering or truncation
        """
        prev = GENESIS_HASH
        count = 0
        try:
            for i, entry in enumerate(self._read_entries()):
                if entry.index != i:
                    return AuditVerdict(False, count, f"entry {i} has index {entry.index}")
                if entry.prev_hash != prev:
                    return AuditVerdict(False, count, f"chain broken at entry {i}")
                if entry.compute_hash() != entry.entry_hash:
                    return AuditVerdict(False, count, f"entry {i} was modified")
                prev = entry.entry_hash
                count += 1
        except (ValueError, TypeError) as e:
            return AuditVerdict(False, count, f"unreadable entry after {count}: {e}")

        try:
            with open(self.head_path, "r", encoding="utf-8") as f:
                head = json.load(f)
        except (OSError, ValueError):
            return AuditVerdict(False, count, "head file missing or unreadable")
        if head.get("count") != count or head.get("entry_hash") != prev:
            return AuditVerdict(
                False, count, f"log truncated or rewritten (head expects {head.get('count')} entries)"
            )
        return AuditVerdict(True, count)
