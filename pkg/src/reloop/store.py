"""Durable event-sourced persistence for sessions.

On-disk layout per session::

    <root>/<session_id>/events.jsonl      append-only, checksum-chained
    <root>/<session_id>/blobs/<sha256>    content-addressed artifacts
    <root>/<session_id>/snapshots/<seq>.json   state snapshot every N events

Every event line carries a checksum chained to the previous line, so torn
writes and interior corruption are detectable. Appending through a store
that is (re)opened on an existing log recovers by truncating a torn tail;
plain reads surface :class:`CorruptLog` instead.

There is a single writer per session log; concurrent readers see a
consistent prefix. Monetary amounts are kept as integer micro-dollars so
ledger sums are exact.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Callable, Iterator

SNAPSHOT_EVERY = 200


class StoreUnavailable(RuntimeError):
    """The store cannot accept writes; fatal to the session."""


class UnknownSession(KeyError):
    pass


class CorruptLog(RuntimeError):
    def __init__(self, session_id: str, last_good_seq: int, detail: str):
        super().__init__(
            f"corrupt event log for {session_id} after seq {last_good_seq}: {detail}"
        )
        self.session_id = session_id
        self.last_good_seq = last_good_seq


@dataclass(frozen=True)
class SessionEvent:
    seq: int
    timestamp: str
    kind: str
    payload: dict[str, Any]

    def to_dict(self) -> dict[str, Any]:
        return {
            "seq": self.seq,
            "timestamp": self.timestamp,
            "kind": self.kind,
            "payload": self.payload,
        }


def usd_to_micro(usd: float) -> int:
    return round(usd * 1_000_000)


def micro_to_usd(micro: int) -> float:
    return micro / 1_000_000


def _canonical(obj: Any) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def _chain_checksum(prev: str, seq: int, timestamp: str, kind: str, payload: Any) -> str:
    body = _canonical({"seq": seq, "timestamp": timestamp, "kind": kind, "payload": payload})
    return hashlib.sha256((prev + body).encode("utf-8")).hexdigest()


class SessionStore:
    """Append-only event log plus blob and snapshot storage."""

    def __init__(self, root: str | os.PathLike[str]):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        # Cached chain tail per session: (last_seq, last_checksum).
        self._tails: dict[str, tuple[int, str]] = {}

    # -- session lifecycle -------------------------------------------------

    def create_session(self, session_id: str) -> str:
        session_dir = self._dir(session_id)
        if session_dir.exists():
            raise StoreUnavailable(f"session {session_id} already exists")
        (session_dir / "blobs").mkdir(parents=True)
        (session_dir / "snapshots").mkdir()
        (session_dir / "events.jsonl").touch()
        self._tails[session_id] = (0, "")
        return session_id

    def exists(self, session_id: str) -> bool:
        return self._events_path(session_id).exists()

    def list_sessions(self) -> list[str]:
        if not self.root.exists():
            return []
        return sorted(
            p.name for p in self.root.iterdir() if (p / "events.jsonl").exists()
        )

    def _dir(self, session_id: str) -> Path:
        return self.root / session_id

    def _events_path(self, session_id: str) -> Path:
        return self._dir(session_id) / "events.jsonl"

    # -- event log ---------------------------------------------------------

    def append(
        self, session_id: str, kind: str, payload: dict[str, Any], timestamp: str
    ) -> int:
        if not self.exists(session_id):
            raise UnknownSession(session_id)
        last_seq, last_check = self._tail(session_id)
        seq = last_seq + 1
        check = _chain_checksum(last_check, seq, timestamp, kind, payload)
        line = _canonical(
            {
                "seq": seq,
                "timestamp": timestamp,
                "kind": kind,
                "payload": payload,
                "check": check,
            }
        )
        try:
            with open(self._events_path(session_id), "a", encoding="utf-8") as fh:
                fh.write(line + "\n")
                fh.flush()
                os.fsync(fh.fileno())
        except OSError as exc:
            raise StoreUnavailable(f"append failed: {exc}") from exc
        self._tails[session_id] = (seq, check)
        return seq

    def _tail(self, session_id: str) -> tuple[int, str]:
        """Chain tail for appends; recovers a torn final line by truncation."""
        cached = self._tails.get(session_id)
        if cached is not None:
            return cached
        tail = self._scan(session_id, recover_tail=True)
        self._tails[session_id] = tail
        return tail

    def _scan(self, session_id: str, recover_tail: bool) -> tuple[int, str]:
        path = self._events_path(session_id)
        last_seq, last_check = 0, ""
        good_bytes = 0
        with open(path, "rb") as fh:
            raw = fh.read()
        offset = 0
        while offset < len(raw):
            newline = raw.find(b"\n", offset)
            torn = newline < 0
            line = raw[offset:] if torn else raw[offset:newline]
            try:
                record = json.loads(line.decode("utf-8"))
                seq = record["seq"]
                check = _chain_checksum(
                    last_check, seq, record["timestamp"], record["kind"], record["payload"]
                )
                if check != record["check"] or seq != last_seq + 1:
                    raise ValueError("checksum or sequence mismatch")
            except (ValueError, KeyError, UnicodeDecodeError) as exc:
                if recover_tail and (torn or newline == len(raw) - 1):
                    with open(path, "r+b") as fh:
                        fh.truncate(good_bytes)
                    return last_seq, last_check
                raise CorruptLog(session_id, last_seq, str(exc)) from exc
            last_seq, last_check = seq, check
            offset = len(raw) if torn else newline + 1
            good_bytes = offset
        return last_seq, last_check

    def events(self, session_id: str, since: int = 0) -> Iterator[SessionEvent]:
        """Yield verified events with seq > ``since``; raises CorruptLog."""
        if not self.exists(session_id):
            raise UnknownSession(session_id)
        last_seq, last_check = 0, ""
        with open(self._events_path(session_id), "r", encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    record = json.loads(line)
                    seq = record["seq"]
                    check = _chain_checksum(
                        last_check,
                        seq,
                        record["timestamp"],
                        record["kind"],
                        record["payload"],
                    )
                    if check != record["check"] or seq != last_seq + 1:
                        raise ValueError("checksum or sequence mismatch")
                except (ValueError, KeyError) as exc:
                    raise CorruptLog(session_id, last_seq, str(exc)) from exc
                last_seq, last_check = seq, check
                if seq > since:
                    yield SessionEvent(seq, record["timestamp"], record["kind"], record["payload"])

    def last_seq(self, session_id: str) -> int:
        return self._tail(session_id)[0]

    # -- blobs ---------------------------------------------------------------

    def put_blob(self, session_id: str, data: bytes) -> str:
        if not self.exists(session_id):
            raise UnknownSession(session_id)
        digest = hashlib.sha256(data).hexdigest()
        path = self._dir(session_id) / "blobs" / digest
        if not path.exists():
            tmp = path.with_suffix(".tmp")
            tmp.write_bytes(data)
            tmp.rename(path)
        return digest

    def get_blob(self, session_id: str, digest: str) -> bytes:
        path = self._dir(session_id) / "blobs" / digest
        if not path.exists():
            raise KeyError(f"blob {digest} not found in session {session_id}")
        return path.read_bytes()

    # -- snapshots -----------------------------------------------------------

    def write_snapshot(self, session_id: str, seq: int, state: dict[str, Any]) -> None:
        path = self._dir(session_id) / "snapshots" / f"{seq}.json"
        path.write_text(_canonical({"seq": seq, "state": state}), encoding="utf-8")

    def latest_snapshot(self, session_id: str) -> tuple[int, dict[str, Any]] | None:
        snap_dir = self._dir(session_id) / "snapshots"
        if not snap_dir.exists():
            return None
        best: tuple[int, Path] | None = None
        for path in snap_dir.glob("*.json"):
            try:
                seq = int(path.stem)
            except ValueError:
                continue
            if best is None or seq > best[0]:
                best = (seq, path)
        if best is None:
            return None
        record = json.loads(best[1].read_text(encoding="utf-8"))
        return record["seq"], record["state"]

    # -- cost ledger -----------------------------------------------------------

    def ledger_total(self, session_id: str, group_by: str = "role") -> dict[str, float]:
        """Exact per-group cost totals, summed in integer micro-dollars."""
        if group_by not in ("role", "phase"):
            raise ValueError(f"group_by must be 'role' or 'phase', got {group_by!r}")
        totals: dict[str, int] = {}
        for event in self.events(session_id):
            if event.kind != "cost":
                continue
            key = str(event.payload.get(group_by, "unknown"))
            totals[key] = totals.get(key, 0) + int(event.payload["cost_micro"])
        return {key: micro_to_usd(micro) for key, micro in sorted(totals.items())}

    def ledger_entries(self, session_id: str) -> list[dict[str, Any]]:
        return [e.payload for e in self.events(session_id) if e.kind == "cost"]

    # -- replay ---------------------------------------------------------------

    def replay(self, session_id: str):
        """Fold the event log into the session view (state + artifacts)."""
        from .view import fold_events

        return fold_events(session_id, self.events(session_id))


EventSink = Callable[[str, dict[str, Any]], int]
