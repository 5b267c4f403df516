#!/usr/bin/env python3
"""
Filename: agent_store.py
Description: Embedded transactional store for agent records

Records are kept as canonical JSON text keyed by agent UUID, with a
secondary index on the (protocol, agentID, capability, provider) tuple.
Challenge outcomes go to an append-only table.
"""

import os
import sqlite3
import threading
from typing import List, Optional, Tuple

from logging_config import setup_registry_logger

logger = setup_registry_logger()

_SCHEMA = (
    """
    CREATE TABLE IF NOT EXISTS agents(
        agent_uuid TEXT PRIMARY KEY,
        protocol TEXT NOT NULL,
        agent_id TEXT NOT NULL,
        capability TEXT NOT NULL,
        provider TEXT NOT NULL,
        version TEXT NOT NULL,
        status TEXT NOT NULL,
        value TEXT NOT NULL
    );
    """,
    "CREATE INDEX IF NOT EXISTS idx_agents_tuple ON agents(protocol, agent_id, capability, provider);",
    "CREATE INDEX IF NOT EXISTS idx_agents_status ON agents(status);",
    """
    CREATE TABLE IF NOT EXISTS challenges(
        id INTEGER PRIMARY KEY AUTOINCREMENT,
        agent_uuid TEXT NOT NULL,
        value TEXT NOT NULL
    );
    """,
    "CREATE INDEX IF NOT EXISTS idx_challenges_agent ON challenges(agent_uuid);",
    # Challenge history is append-only
    """
    CREATE TRIGGER IF NOT EXISTS challenges_no_update BEFORE UPDATE ON challenges
    BEGIN SELECT RAISE(ABORT, 'challenge history is append-only'); END;
    """,
    """
    CREATE TRIGGER IF NOT EXISTS challenges_no_delete BEFORE DELETE ON challenges
    BEGIN SELECT RAISE(ABORT, 'challenge history is append-only'); END;
    """,
)

LookupKey = Tuple[str, str, str, str]


class AgentStore:
    """
    sqlite-backed key-value store.

    Each thread gets its own connection; writes serialize on one lock.
    """

    def __init__(self, path: str):
        self.path = path
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        self._local = threading.local()
        self._write_lock = threading.Lock()
        conn = self._conn()
        with self._write_lock, conn:
            for statement in _SCHEMA:
                conn.execute(statement)
        logger.info(f"[Store] Opened agent store {path}")

    def _conn(self) -> sqlite3.Connection:
        conn = getattr(self._local, "conn", None)
        if conn is None:
            conn = sqlite3.connect(self.path, timeout=30)
            conn.execute("PRAGMA journal_mode=WAL;")
            conn.execute("PRAGMA foreign_keys=ON;")
            self._local.conn = conn
        return conn

    # ----------------------------------------------------------- agents
    def insert(self, agent_uuid: str, key: LookupKey, version: str, status: str, value: str) -> bool:
        """Insert a new record. Returns False when the UUID already exists."""
        conn = self._conn()
        with self._write_lock:
            try:
                with conn:
                    conn.execute(
                        "INSERT INTO agents(agent_uuid, protocol, agent_id, capability, provider,"
                        " version, status, value) VALUES (?, ?, ?, ?, ?, ?, ?, ?);",
                        (agent_uuid, *key, version, status, value),
                    )
            except sqlite3.IntegrityError:
                return False
        return True

    def update(self, agent_uuid: str, status: str, value: str) -> None:
        conn = self._conn()
        with self._write_lock, conn:
            conn.execute(
                "UPDATE agents SET status = ?, value = ? WHERE agent_uuid = ?;",
                (status, value, agent_uuid),
            )

    def get(self, agent_uuid: str) -> Optional[str]:
        row = self._conn().execute(
            "SELECT value FROM agents WHERE agent_uuid = ?;", (agent_uuid,)
        ).fetchone()
        return row[0] if row else None

    def find(self, key: LookupKey, statuses: Optional[Tuple[str, ...]] = None) -> List[str]:
        sql = ("SELECT value FROM agents WHERE protocol = ? AND agent_id = ?"
               " AND capability = ? AND provider = ?")
        params: list = list(key)
        if statuses:
            sql += f" AND status IN ({','.join('?' * len(statuses))})"
            params += list(statuses)
        rows = self._conn().execute(sql + " ORDER BY agent_uuid;", params).fetchall()
        return [r[0] for r in rows]

    def with_status(self, status: str) -> List[str]:
        rows = self._conn().execute(
            "SELECT value FROM agents WHERE status = ? ORDER BY agent_uuid;", (status,)
        ).fetchall()
        return [r[0] for r in rows]

    def count(self) -> int:
        return int(self._conn().execute("SELECT COUNT(*) FROM agents;").fetchone()[0])

    # ------------------------------------------------------- challenges
    def append_challenge(self, agent_uuid: str, value: str) -> None:
        conn = self._conn()
        with self._write_lock, conn:
            conn.execute(
                "INSERT INTO challenges(agent_uuid, value) VALUES (?, ?);", (agent_uuid, value)
            )

    def challenges(self, agent_uuid: str) -> List[str]:
        rows = self._conn().execute(
            "SELECT value FROM challenges WHERE agent_uuid = ? ORDER BY id;", (agent_uuid,)
        ).fetchall()
        return [r[0] for r in rows]

    def ping(self) -> bool:
        try:
            self._conn().execute("SELECT 1;").fetchone()
            return True
        except sqlite3.Error:
            return False

    def close(self) -> None:
        conn = getattr(self._local, "conn", None)
        if conn is not None:
            conn.close()
            self._local.conn = None
