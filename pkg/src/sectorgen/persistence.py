"""Line-oriented file stores: append-only logs and atomically replaced snapshots.

Log framing is ``<seq>\\t<json>\\n``.  Snapshots carry a one-line schema header
and are replaced by writing a temporary file and renaming it over the target.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from pathlib import Path
from typing import Iterable

log = logging.getLogger(__name__)


class CorruptLogError(IOError):
    pass


class SchemaMismatch(ValueError):
    pass


class AppendLog:
    """Append-only JSON-lines log with strictly increasing sequence numbers."""

    def __init__(self, path: str | os.PathLike):
        self.path = Path(path)
        self.truncated = False
        self._next_seq: int | None = None

    def exists(self) -> bool:
        return self.path.exists()

    def replay(self) -> list[dict]:
        """All complete records in order, each with its ``seq`` key.

        A partial trailing line (or any unparsable line) ends the replay; the
        condition is reported through ``self.truncated`` and a warning.
        """
        if not self.path.exists():
            raise FileNotFoundError(self.path)
        raw = self.path.read_bytes()
        records: list[dict] = []
        self.truncated = False
        last = 0
        for line in raw.split(b"\n")[:-1] if raw.endswith(b"\n") else raw.split(b"\n"):
            if not line:
                continue
            try:
                seq_text, payload = line.decode("utf-8").split("\t", 1)
                seq = int(seq_text)
                record = json.loads(payload)
                if seq <= last or not isinstance(record, dict):
                    raise ValueError("out of order")
            except (ValueError, UnicodeDecodeError):
                self.truncated = True
                break
            record["seq"] = seq
            records.append(record)
            last = seq
        if raw and not raw.endswith(b"\n") and not self.truncated:
            # last line had no newline: it was written partially
            records.pop()
            self.truncated = True
        if self.truncated:
            log.warning("%s: replay stopped after seq %d (truncated record)", self.path, records[-1]["seq"] if records else 0)
        self._next_seq = (records[-1]["seq"] if records else 0) + 1
        return records

    def _tail_ok(self) -> bool:
        if not self.path.exists() or self.path.stat().st_size == 0:
            return True
        with self.path.open("rb") as fh:
            fh.seek(-1, os.SEEK_END)
            return fh.read(1) == b"\n"

    def append(self, record: dict) -> int:
        return self.extend([record])[0]

    def extend(self, records: Iterable[dict]) -> list[int]:
        records = list(records)
        if not records:
            return []
        if self._next_seq is None:
            if self.path.exists():
                self.replay()
            else:
                self._next_seq = 1
        if self.truncated or not self._tail_ok():
            raise CorruptLogError(f"{self.path} ends with a partial record; refusing to append")
        self.path.parent.mkdir(parents=True, exist_ok=True)
        seqs = []
        lines = []
        for rec in records:
            seq = self._next_seq
            self._next_seq += 1
            body = {k: v for k, v in rec.items() if k != "seq"}
            lines.append(f"{seq}\t{json.dumps(body, sort_keys=True, ensure_ascii=False)}\n")
            seqs.append(seq)
        with self.path.open("a", encoding="utf-8") as fh:
            fh.write("".join(lines))
            fh.flush()
            os.fsync(fh.fileno())
        return seqs


def atomic_write_text(path: str | os.PathLike, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=f".{path.name}.", dir=path.parent)
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


class SnapshotStore:
    """Whole-file snapshot of text lines behind a ``#schema <name> <version>`` header."""

    def __init__(self, path: str | os.PathLike, schema: str, version: int = 1):
        self.path = Path(path)
        self.schema = schema
        self.version = version

    @property
    def header(self) -> str:
        return f"#schema {self.schema} {self.version}"

    def exists(self) -> bool:
        return self.path.exists()

    def write(self, lines: Iterable[str]) -> None:
        body = "".join(f"{line}\n" for line in lines)
        atomic_write_text(self.path, f"{self.header}\n{body}")

    def read(self) -> list[str]:
        if not self.path.exists():
            return []
        lines = self.path.read_text(encoding="utf-8").splitlines()
        if not lines:
            return []
        if lines[0] != self.header:
            raise SchemaMismatch(f"{self.path}: expected '{self.header}', found '{lines[0]}'")
        return lines[1:]


def escape_field(value: str) -> str:
    return value.replace("\\", "\\\\").replace("\t", "\\t").replace("\n", "\\n")


def unescape_field(value: str) -> str:
    out = []
    it = iter(value)
    for ch in it:
        if ch == "\\":
            nxt = next(it, "")
            out.append({"t": "\t", "n": "\n", "\\": "\\"}.get(nxt, nxt))
        else:
            out.append(ch)
    return "".join(out)
