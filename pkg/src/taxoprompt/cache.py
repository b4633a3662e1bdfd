"""Append-only score cache.

On disk the cache is a sequence of records, each written as::

    <payload length in bytes>\\n<JSON payload>\\n

with payload fields ``key_hash, backend, text, mode, k_char, k_end,
log_score, token_count``. A torn or corrupt record at the end of the file
(e.g. after a crash) is cut off on load with a warning.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import threading
import warnings
from dataclasses import dataclass

logger = logging.getLogger(__name__)

CACHE_ENV = "TAXO_CACHE"


class CacheCorruptionWarning(UserWarning):
    pass


@dataclass(frozen=True)
class ScoreCacheKey:
    backend_id: str
    text: str
    mode: str
    k_char: int | None = None
    k_end: int | None = None

    def hash(self) -> str:
        blob = json.dumps([self.backend_id, self.text, self.mode, self.k_char, self.k_end],
                          ensure_ascii=False, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class ScoreCache:
    """Thread-safe score cache, in memory and optionally persisted to ``path``."""

    def __init__(self, path: str | os.PathLike | None = None):
        self.path = None if path is None else os.fspath(path)
        self._data: dict[str, tuple[float, int]] = {}
        self._lock = threading.Lock()
        self._fh = None
        self.hits = 0
        self.misses = 0
        if self.path is not None:
            self._load()
            self._fh = open(self.path, "ab")

    def _load(self) -> None:
        if not os.path.exists(self.path):
            return
        with open(self.path, "rb") as f:
            blob = f.read()
        pos = 0
        while pos < len(blob):
            record = _parse_record(blob, pos)
            if record is None:
                break
            payload, end = record
            self._data[payload["key_hash"]] = (float(payload["log_score"]), int(payload["token_count"]))
            pos = end
        if pos < len(blob):
            warnings.warn(f"{self.path}: dropping {len(blob) - pos} bytes of corrupt trailing cache data",
                          CacheCorruptionWarning, stacklevel=3)
            with open(self.path, "r+b") as f:
                f.truncate(pos)

    def get(self, key: ScoreCacheKey) -> float | None:
        with self._lock:
            hit = self._data.get(key.hash())
            if hit is None:
                self.misses += 1
                return None
            self.hits += 1
            return hit[0]

    def put(self, key: ScoreCacheKey, log_score: float, token_count: int) -> None:
        h = key.hash()
        with self._lock:
            if h in self._data:
                return
            self._data[h] = (log_score, token_count)
            if self._fh is not None:
                payload = json.dumps({
                    "key_hash": h, "backend": key.backend_id, "text": key.text, "mode": key.mode,
                    "k_char": key.k_char, "k_end": key.k_end, "log_score": log_score,
                    "token_count": token_count,
                }, ensure_ascii=False, separators=(",", ":")).encode("utf-8")
                self._fh.write(b"%d\n%s\n" % (len(payload), payload))
                self._fh.flush()

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, key: ScoreCacheKey) -> bool:
        return key.hash() in self._data

    def close(self) -> None:
        with self._lock:
            if self._fh is not None:
                self._fh.close()
                self._fh = None

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def _parse_record(blob: bytes, pos: int):
    nl = blob.find(b"\n", pos)
    if nl < 0 or nl - pos > 20:
        return None
    try:
        size = int(blob[pos:nl])
    except ValueError:
        return None
    start, end = nl + 1, nl + 1 + size
    if size < 0 or end >= len(blob) or blob[end:end + 1] != b"\n":
        return None
    try:
        payload = json.loads(blob[start:end].decode("utf-8"))
        key = ScoreCacheKey(payload["backend"], payload["text"], payload["mode"],
                            payload["k_char"], payload.get("k_end"))
        if key.hash() != payload["key_hash"]:
            return None
        float(payload["log_score"]), int(payload["token_count"])
    except (ValueError, KeyError, TypeError):
        return None
    return payload, end + 1
