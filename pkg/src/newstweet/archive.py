"""Embedded append-only record store with content-addressed blobs.

Layout under the data directory::

    archive/records/<kind>.log    one line per record version
    archive/blobs/<xx>/<digest>   raw bytes, named by SHA-256
    archive/meta/seed             scheduler seed
    archive/meta/*.json           small state documents

Each log line is ``<crc32 hex> <json>\\n`` where the JSON object is
``{"k": key, "v": payload}``. The last line for a key wins. A process killed
mid-write leaves at most one torn line at the tail of a log; it fails its
checksum and is truncated away on the next open, so every record is either
fully present or absent.

One writer at a time: a writable archive holds an exclusive ``flock`` on
``archive/LOCK`` and serializes all writes through an in-process lock.
Read-only handles take no lock and see the state as of opening.
"""

from __future__ import annotations

import fcntl
import hashlib
import json
import logging
import os
import re
import threading
import zlib
from pathlib import Path
from typing import Callable, Iterator

from newstweet.errors import (
    ArchiveCorrupt,
    ArchiveUnavailable,
    ImmutableConflict,
    ValidationFailed,
)

log = logging.getLogger(__name__)

KINDS = ("article", "embed", "tweet", "tombstone", "user", "queue_item")
IMMUTABLE = frozenset({"tweet", "blob"})

INSERTED = "inserted"
UNCHANGED = "unchanged"
UPDATED = "updated"

_DIGITS = re.compile(r"^[0-9]+$")
_HEX64 = re.compile(r"^[0-9a-f]{64}$")


def embed_key(article_id: str, position: int) -> str:
    return f"{article_id}:{position:06d}"


def _dumps(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def _require(payload, *fields):
    missing = [f for f in fields if payload.get(f) in (None, "")]
    if missing:
        raise ValidationFailed(f"missing fields: {', '.join(missing)}")


def _validate_article(key, p):
    _require(p, "id", "canonical_url", "domain", "section", "classification")
    if p["id"] != key:
        raise ValidationFailed("article id must equal its key")
    status = p.get("http_status")
    if not isinstance(status, int):
        raise ValidationFailed("http_status must be an integer")
    if (p.get("html_ref") is not None) != (200 <= status <= 299):
        raise ValidationFailed("html_ref present iff 2xx status")
    if p["classification"] not in ("publisher_page", "youtube_page", "fetch_failed"):
        raise ValidationFailed(f"bad classification {p['classification']!r}")


def _validate_embed(key, p):
    _require(p, "article_id", "platform")
    pos = p.get("position")
    if not isinstance(pos, int) or pos < 0:
        raise ValidationFailed("position must be a non-negative integer")
    if key != embed_key(p["article_id"], pos):
        raise ValidationFailed("embed key must be (article_id, position)")
    if p["platform"] not in ("twitter", "youtube", "instagram", "facebook", "reddit", "tiktok"):
        raise ValidationFailed(f"bad platform {p['platform']!r}")
    tid = p.get("tweet_id")
    if tid is not None and (p["platform"] != "twitter" or not _DIGITS.match(tid)):
        raise ValidationFailed("tweet_id must be digits on a twitter embed")


def _validate_tweet(key, p):
    _require(p, "id", "user_id", "created_at", "raw_ref")
    if p["id"] != key or not _DIGITS.match(key):
        raise ValidationFailed("tweet id must be digits and equal its key")


def _validate_tombstone(key, p):
    _require(p, "id", "reason")


def _validate_user(key, p):
    _require(p, "user_id")
    if p["user_id"] != key:
        raise ValidationFailed("user_id must equal its key")
    newest, oldest = p.get("newest_tweet_id"), p.get("oldest_tweet_id")
    if newest and oldest and int(newest) < int(oldest):
        raise ValidationFailed("newest_tweet_id < oldest_tweet_id")


def _validate_queue_item(key, p):
    _require(p, "link", "section", "status")


_VALIDATORS = {
    "article": _validate_article,
    "embed": _validate_embed,
    "tweet": _validate_tweet,
    "tombstone": _validate_tombstone,
    "user": _validate_user,
    "queue_item": _validate_queue_item,
}


class Archive:
    """Durable key/value records per kind, plus a blob store.

    Use as a context manager, or call :meth:`close`.
    """

    def __init__(self, data_dir, read_only: bool = False):
        self.root = Path(data_dir) / "archive"
        self.read_only = read_only
        self._lock = threading.RLock()
        self._index: dict[str, dict[str, str]] = {k: {} for k in KINDS}
        self._fds: dict[str, int] = {}
        self._lock_fd = None
        if read_only:
            if not self.root.exists():
                raise ArchiveUnavailable(f"no archive at {self.root}")
        else:
            try:
                for sub in ("records", "blobs", "meta"):
                    (self.root / sub).mkdir(parents=True, exist_ok=True)
                self._lock_fd = os.open(self.root / "LOCK", os.O_RDWR | os.O_CREAT, 0o644)
            except OSError as exc:
                raise ArchiveUnavailable(f"cannot open archive at {self.root}: {exc}") from exc
            try:
                fcntl.flock(self._lock_fd, fcntl.LOCK_EX | fcntl.LOCK_NB)
            except OSError:
                os.close(self._lock_fd)
                self._lock_fd = None
                raise ArchiveUnavailable(f"archive {self.root} is locked by another writer")
        for kind in KINDS:
            self._load(kind)

    # -- lifecycle ---------------------------------------------------------

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def close(self):
        with self._lock:
            self.sync()
            for fd in self._fds.values():
                os.close(fd)
            self._fds.clear()
            if self._lock_fd is not None:
                fcntl.flock(self._lock_fd, fcntl.LOCK_UN)
                os.close(self._lock_fd)
                self._lock_fd = None

    def sync(self):
        for fd in self._fds.values():
            os.fsync(fd)

    # -- records -----------------------------------------------------------

    def _log_path(self, kind):
        return self.root / "records" / f"{kind}.log"

    def _load(self, kind):
        path = self._log_path(kind)
        if not path.exists():
            return
        data = path.read_bytes()
        index = self._index[kind]
        good_end = 0
        pos = 0
        bad_at = None
        while pos < len(data):
            nl = data.find(b"\n", pos)
            if nl < 0:
                bad_at = pos
                break
            rec = _parse_line(data[pos:nl])
            if rec is None:
                bad_at = pos
                break
            index[rec[0]] = _dumps(rec[1])
            pos = nl + 1
            good_end = pos
        if bad_at is not None:
            rest = data[bad_at:]
            if rest.count(b"\n") > 1 or (rest.count(b"\n") == 1 and not rest.endswith(b"\n")):
                raise ArchiveCorrupt(f"{path}: damaged record at byte {bad_at}")
            if self.read_only:
                log.warning("%s: ignoring torn tail at byte %d", path, bad_at)
            else:
                log.warning("%s: truncating torn tail at byte %d", path, bad_at)
                with open(path, "r+b") as fh:
                    fh.truncate(good_end)

    def _fd(self, kind):
        fd = self._fds.get(kind)
        if fd is None:
            fd = os.open(self._log_path(kind), os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
            self._fds[kind] = fd
        return fd

    def _append(self, kind, key, text):
        body = _dumps({"k": key, "v": json.loads(text)}).encode("utf-8")
        line = b"%08x " % zlib.crc32(body) + body + b"\n"
        os.write(self._fd(kind), line)

    def upsert(self, kind: str, key: str, payload, overwrite: bool = True) -> str:
        """Insert or replace the record ``(kind, key)``.

        Returns ``"inserted"``, ``"unchanged"`` or ``"updated"``. With
        ``overwrite=False`` an existing record is left as is and reported
        ``"unchanged"``. Blobs are routed to the blob store.
        """
        if kind == "blob":
            return self._upsert_blob(key, payload)
        if self.read_only:
            raise ArchiveUnavailable("archive opened read-only")
        if kind not in _VALIDATORS:
            raise ValidationFailed(f"unknown kind {kind!r}")
        if not isinstance(key, str) or not key:
            raise ValidationFailed("key must be a non-empty string")
        if not isinstance(payload, dict):
            raise ValidationFailed("payload must be a mapping")
        _VALIDATORS[kind](key, payload)
        try:
            text = _dumps(payload)
        except (TypeError, ValueError) as exc:
            raise ValidationFailed(f"payload not serializable: {exc}") from exc
        with self._lock:
            index = self._index[kind]
            old = index.get(key)
            if old == text:
                return UNCHANGED
            if old is not None:
                if not overwrite:
                    return UNCHANGED
                if kind in IMMUTABLE:
                    raise ImmutableConflict(f"{kind} {key} already stored with other content")
            self._append(kind, key, text)
            index[key] = text
            return INSERTED if old is None else UPDATED

    def get(self, kind: str, key: str):
        with self._lock:
            text = self._index[kind].get(key)
        return None if text is None else json.loads(text)

    def __contains__(self, kind_key):
        kind, key = kind_key
        if kind == "blob":
            return self.has_blob(key)
        return key in self._index[kind]

    def count(self, kind: str) -> int:
        if kind == "blob":
            return sum(1 for _ in self._blob_paths())
        return len(self._index[kind])

    def keys(self, kind: str) -> list[str]:
        with self._lock:
            return sorted(self._index[kind])

    def scan(self, kind: str, where: Callable[[dict], bool] | None = None,
             **equals) -> Iterator[dict]:
        """Iterate records of ``kind`` in key order over a snapshot.

        Keyword arguments filter on payload equality, e.g.
        ``scan("embed", platform="twitter")``.
        """
        with self._lock:
            snapshot = sorted(self._index[kind].items())
        for _, text in snapshot:
            rec = json.loads(text)
            if any(rec.get(f) != v for f, v in equals.items()):
                continue
            if where is not None and not where(rec):
                continue
            yield rec

    # -- blobs -------------------------------------------------------------

    def _blob_path(self, digest: str) -> Path:
        return self.root / "blobs" / digest[:2] / digest

    def _blob_paths(self):
        yield from (p for p in (self.root / "blobs").glob("*/*") if _HEX64.match(p.name))

    def _upsert_blob(self, digest: str, data: bytes) -> str:
        if self.read_only:
            raise ArchiveUnavailable("archive opened read-only")
        if not isinstance(data, (bytes, bytearray)):
            raise ValidationFailed("blob payload must be bytes")
        if not isinstance(digest, str) or not _HEX64.match(digest):
            raise ValidationFailed(f"bad blob digest {digest!r}")
        path = self._blob_path(digest)
        with self._lock:
            if path.exists():
                if path.read_bytes() == bytes(data):
                    return UNCHANGED
                raise ImmutableConflict(f"blob {digest} already stored with other content")
            if hashlib.sha256(data).hexdigest() != digest:
                raise ValidationFailed(f"blob bytes do not hash to {digest}")
            path.parent.mkdir(exist_ok=True)
            tmp = path.with_name(f".{digest}.{os.getpid()}.{threading.get_ident()}.tmp")
            tmp.write_bytes(data)
            os.replace(tmp, path)
            return INSERTED

    def put_blob(self, data: bytes) -> str:
        digest = hashlib.sha256(data).hexdigest()
        self._upsert_blob(digest, data)
        return digest

    def get_blob(self, digest: str) -> bytes:
        return self._blob_path(digest).read_bytes()

    def has_blob(self, digest: str) -> bool:
        return bool(_HEX64.match(digest or "")) and self._blob_path(digest).exists()

    # -- meta --------------------------------------------------------------

    def read_meta(self, name: str, default=None):
        path = self.root / "meta" / name
        return path.read_text(encoding="utf-8") if path.exists() else default

    def write_meta(self, name: str, text: str):
        if self.read_only:
            raise ArchiveUnavailable("archive opened read-only")
        path = self.root / "meta" / name
        tmp = path.with_name(f".{name}.tmp")
        tmp.write_text(text, encoding="utf-8")
        os.replace(tmp, path)

    # -- maintenance -------------------------------------------------------

    def export(self, kind: str, fh) -> int:
        """Write records of ``kind`` as NDJSON (UTF-8, one per line, key order)."""
        n = 0
        if kind == "blob":
            for path in sorted(self._blob_paths(), key=lambda p: p.name):
                fh.write(_dumps({"digest": path.name, "size": path.stat().st_size}) + "\n")
                n += 1
            return n
        for rec in self.scan(kind):
            fh.write(_dumps(rec) + "\n")
            n += 1
        return n

    def compact(self) -> dict[str, int]:
        """Rewrite each log keeping only the latest version of every key."""
        if self.read_only:
            raise ArchiveUnavailable("archive opened read-only")
        dropped = {}
        with self._lock:
            for kind in KINDS:
                path = self._log_path(kind)
                if not path.exists():
                    continue
                before = sum(1 for _ in open(path, "rb"))
                fd = self._fds.pop(kind, None)
                if fd is not None:
                    os.close(fd)
                tmp = path.with_suffix(".compact")
                with open(tmp, "wb") as fh:
                    for key, text in sorted(self._index[kind].items()):
                        body = _dumps({"k": key, "v": json.loads(text)}).encode("utf-8")
                        fh.write(b"%08x " % zlib.crc32(body) + body + b"\n")
                    fh.flush()
                    os.fsync(fh.fileno())
                os.replace(tmp, path)
                dropped[kind] = before - len(self._index[kind])
        return dropped

    def verify(self) -> list[str]:
        """Check checksums, blob digests and cross-record references.

        Returns a list of problems; empty means the archive is consistent.
        """
        problems = []
        for kind in KINDS:
            path = self._log_path(kind)
            if not path.exists():
                continue
            for n, line in enumerate(path.read_bytes().split(b"\n")[:-1]):
                if _parse_line(line) is None:
                    problems.append(f"{kind}.log line {n}: bad checksum")
        for path in self._blob_paths():
            if hashlib.sha256(path.read_bytes()).hexdigest() != path.name:
                problems.append(f"blob {path.name}: digest mismatch")
        articles = self._index["article"]
        for rec in self.scan("article"):
            if rec.get("html_ref") and not self.has_blob(rec["html_ref"]):
                problems.append(f"article {rec['id']}: missing blob {rec['html_ref']}")
        for rec in self.scan("embed"):
            if rec["article_id"] not in articles:
                problems.append(f"embed {rec['article_id']}:{rec['position']}: dangling article")
        users = self._index["user"]
        for rec in self.scan("tweet"):
            if not self.has_blob(rec["raw_ref"]):
                problems.append(f"tweet {rec['id']}: missing raw blob")
            if rec["user_id"] not in users:
                problems.append(f"tweet {rec['id']}: no user record {rec['user_id']}")
        return problems


def _parse_line(line: bytes):
    if len(line) < 10 or line[8:9] != b" ":
        return None
    body = line[9:]
    try:
        if int(line[:8], 16) != zlib.crc32(body):
            return None
        obj = json.loads(body)
        return obj["k"], obj["v"]
    except (ValueError, KeyError, TypeError):
        return None
