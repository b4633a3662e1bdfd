"""Scoring backends: tokenize a text and return per-token conditional log-probs.

Three backends are provided:

* ``HttpBackend`` talks to a completions endpoint that echoes prompt logprobs.
* ``TableBackend`` looks up ``(context, token) -> logprob`` in a JSON table.
* ``UniformBackend`` assigns ``-ln(V)`` to every whitespace-split token.

The table and uniform backends are deterministic and exist for fixtures and
tests. All backends are safe to call from several threads at once.
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
import os
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import requests

logger = logging.getLogger(__name__)

CONTEXT_SEP = "␞"
TOKEN_ENV = "TAXO_BACKEND_TOKEN"

_WS_TOKEN = re.compile(r"\s*\S+\s*$|\s*\S+")


class BackendError(Exception):
    """Base class for scoring backend failures."""


class TransportError(BackendError):
    """Network or protocol failure talking to a remote backend.

    ``retriable`` is True for failures worth retrying (connection errors,
    timeouts, 5xx and 429 responses).
    """

    def __init__(self, message: str, retriable: bool = True):
        super().__init__(message)
        self.retriable = retriable


class MissingEntryError(BackendError, KeyError):
    """A table backend has no log-prob for ``token`` after ``context``."""

    def __init__(self, token: str, context: str):
        self.token = token
        self.context = context
        super().__init__(f"no table entry for token {token!r} after context {context!r}")

    def __str__(self) -> str:
        return self.args[0]


@dataclass(frozen=True)
class Token:
    text: str
    char_start: int
    char_end: int
    logprob: float | None = None


@dataclass(frozen=True)
class ScoredSequenceRaw:
    text: str
    tokens: tuple[Token, ...]

    @property
    def scored_tokens(self) -> list[Token]:
        return [t for t in self.tokens if t.logprob is not None]


@dataclass(frozen=True)
class BackendDescriptor:
    kind: str
    model_name: str = ""
    endpoint: str | None = None
    params: Mapping[str, str] = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in ("http", "table", "uniform"):
            raise ValueError(f"unknown backend kind {self.kind!r}")
        if self.kind == "http" and not self.endpoint:
            raise ValueError("http backend requires an endpoint")


def _bool_param(params: Mapping[str, str], name: str, default: bool) -> bool:
    value = params.get(name)
    if value is None:
        return default
    value = str(value).strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"parameter {name} must be a boolean, got {value!r}")


def whitespace_spans(text: str) -> list[tuple[int, int]]:
    """Split ``text`` into whitespace-delimited chunks that tile the string.

    Leading whitespace attaches to the following word (GPT-style), trailing
    whitespace to the last word, so the spans concatenate back to ``text``.
    """
    spans = [m.span() for m in _WS_TOKEN.finditer(text)]
    if not spans and text:
        # whitespace-only text
        spans = [(0, len(text))]
    return spans


class Backend:
    """Common surface of all backends.

    Subclasses implement :meth:`_score` and set :attr:`backend_id`, a string
    that changes whenever the backend could return different numbers.
    """

    backend_id: str = ""

    def __init__(self):
        self._lock = threading.Lock()
        self.calls = 0

    def score_text(self, text: str) -> ScoredSequenceRaw:
        if not isinstance(text, str) or not text:
            raise ValueError("text must be a non-empty string")
        with self._lock:
            self.calls += 1
        return self._score(text)

    def _score(self, text: str) -> ScoredSequenceRaw:
        raise NotImplementedError

    def score_batch(self, texts: Sequence[str], parallelism: int = 1) -> "BatchResult":
        return score_batch(self, texts, parallelism)


class UniformBackend(Backend):
    """Every whitespace token gets log(1/V).

    Params: ``vocab_size`` (V, default 50257) and ``score_first`` (default
    true; when false the first token carries no log-prob).
    """

    def __init__(self, vocab_size: int = 50257, score_first: bool = True, model_name: str = "uniform"):
        super().__init__()
        if vocab_size < 1:
            raise ValueError("vocab_size must be positive")
        self.vocab_size = int(vocab_size)
        self.score_first = score_first
        self.backend_id = f"uniform:{model_name}:V={self.vocab_size}:first={int(score_first)}"

    def _score(self, text: str) -> ScoredSequenceRaw:
        lp = -math.log(self.vocab_size)
        tokens = []
        for i, (s, e) in enumerate(whitespace_spans(text)):
            scored = i > 0 or self.score_first
            tokens.append(Token(text[s:e], s, e, lp if scored else None))
        return ScoredSequenceRaw(text, tuple(tokens))


class TableBackend(Backend):
    """Looks up log-probs in a ``{(context, token): logprob}`` table.

    Tokenization at each position is the longest token that has an entry for
    the exact preceding context; if none matches, the next whitespace chunk is
    used and its lookup raises :class:`MissingEntryError` (unless ``default``
    is set, in which case unknown tokens get that log-prob).
    """

    def __init__(self, table: Mapping[tuple[str, str], float], default: float | None = None,
                 score_first: bool = True, model_name: str = "table"):
        super().__init__()
        self.table = {}
        by_context: dict[str, set[str]] = {}
        for (context, token), lp in table.items():
            lp = float(lp)
            if not token:
                raise ValueError(f"empty token in table entry for context {context!r}")
            if lp > 0 or math.isnan(lp):
                raise ValueError(f"log-prob must be <= 0, got {lp} for {token!r}")
            self.table[(context, token)] = lp
            by_context.setdefault(context, set()).add(token)
        # longest first so the first hit is the longest match
        self._tokens_by_context = {
            c: sorted(toks, key=lambda t: (-len(t), t)) for c, toks in by_context.items()
        }
        self.default = default
        self.score_first = score_first
        digest = hashlib.sha256(
            json.dumps(sorted((c, t, lp) for (c, t), lp in self.table.items())).encode()
        ).hexdigest()[:16]
        self.backend_id = f"table:{model_name}:{digest}:default={default}:first={int(score_first)}"

    @classmethod
    def from_file(cls, path, **kwargs) -> "TableBackend":
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
        table = {}
        for key, lp in raw.items():
            if CONTEXT_SEP not in key:
                raise ValueError(f"table key {key!r} lacks the U+241E context separator")
            context, token = key.split(CONTEXT_SEP, 1)
            table[(context, token)] = lp
        return cls(table, **kwargs)

    @classmethod
    def from_sequences(cls, sequences: Mapping[str, Sequence[tuple[str, float]]], **kwargs) -> "TableBackend":
        """Build a table from ``{text: [(token, logprob), ...]}``."""
        table = {}
        for text, toks in sequences.items():
            if "".join(t for t, _ in toks) != text:
                raise ValueError(f"tokens do not reassemble {text!r}")
            pos = 0
            for tok, lp in toks:
                key = (text[:pos], tok)
                if key in table and table[key] != lp:
                    raise ValueError(f"conflicting entries for {key!r}")
                table[key] = lp
                pos += len(tok)
        return cls(table, **kwargs)

    def to_json(self) -> dict[str, float]:
        return {f"{c}{CONTEXT_SEP}{t}": lp for (c, t), lp in sorted(self.table.items())}

    def _score(self, text: str) -> ScoredSequenceRaw:
        tokens = []
        pos = 0
        while pos < len(text):
            context = text[:pos]
            tok = next((t for t in self._tokens_by_context.get(context, ())
                        if text.startswith(t, pos)), None)
            if tok is None:
                end = next(e for s, e in whitespace_spans(text[pos:]))
                tok = text[pos:pos + end]
            lp = self.table.get((context, tok), self.default)
            if lp is None:
                raise MissingEntryError(tok, context)
            if pos == 0 and not self.score_first:
                lp = None
            tokens.append(Token(tok, pos, pos + len(tok), lp))
            pos += len(tok)
        return ScoredSequenceRaw(text, tuple(tokens))


class HttpBackend(Backend):
    """Completions endpoint with ``echo=true, max_tokens=0, logprobs=1``.

    Transport failures are retried ``retries`` times with exponential backoff
    starting at ``backoff`` seconds.
    """

    def __init__(self, endpoint: str, model_name: str, retries: int = 3, backoff: float = 0.25,
                 timeout: float = 60.0, token: str | None = None):
        super().__init__()
        self.url = endpoint.rstrip("/") + "/completions"
        self.model_name = model_name
        self.retries = retries
        self.backoff = backoff
        self.timeout = timeout
        self.token = token if token is not None else os.environ.get(TOKEN_ENV)
        self.backend_id = f"http:{self.url}:{model_name}"
        self._local = threading.local()

    def _session(self) -> requests.Session:
        session = getattr(self._local, "session", None)
        if session is None:
            session = self._local.session = requests.Session()
        return session

    def _post(self, text: str) -> dict:
        body = {"model": self.model_name, "prompt": text, "max_tokens": 0, "echo": True, "logprobs": 1}
        headers = {"Authorization": f"Bearer {self.token}"} if self.token else {}
        try:
            resp = self._session().post(self.url, json=body, headers=headers, timeout=self.timeout)
        except requests.RequestException as exc:
            raise TransportError(f"request to {self.url} failed: {exc}") from exc
        if resp.status_code >= 500 or resp.status_code == 429:
            raise TransportError(f"{self.url} returned HTTP {resp.status_code}")
        if resp.status_code != 200:
            raise TransportError(f"{self.url} returned HTTP {resp.status_code}: {resp.text[:200]}",
                                 retriable=False)
        try:
            return resp.json()
        except ValueError as exc:
            raise TransportError(f"{self.url} returned invalid JSON") from exc

    def _score(self, text: str) -> ScoredSequenceRaw:
        delay = self.backoff
        for attempt in range(self.retries + 1):
            try:
                return parse_completion(text, self._post(text))
            except TransportError as exc:
                if not exc.retriable or attempt == self.retries:
                    raise
                logger.warning("%s; retrying in %.2fs", exc, delay)
                time.sleep(delay)
                delay *= 2
        raise AssertionError("unreachable")


def parse_completion(text: str, payload: dict) -> ScoredSequenceRaw:
    """Turn an echoed-logprobs completion response into a scored sequence."""
    try:
        lp = payload["choices"][0]["logprobs"]
        toks, lps, offsets = lp["tokens"], lp["token_logprobs"], lp["text_offset"]
    except (KeyError, IndexError, TypeError) as exc:
        raise TransportError(f"malformed completion response: missing {exc}", retriable=False) from exc
    if not (len(toks) == len(lps) == len(offsets)) or not toks:
        raise TransportError("malformed completion response: ragged logprob arrays", retriable=False)
    bounds = list(offsets) + [len(text)]
    tokens = []
    for i, tok in enumerate(toks):
        s, e = bounds[i], bounds[i + 1]
        if text[s:e] != tok:
            raise TransportError(f"token {tok!r} does not match text at offset {s}", retriable=False)
        tokens.append(Token(tok, s, e, None if lps[i] is None else float(lps[i])))
    if tokens[0].char_start != 0 or tokens[-1].char_end != len(text):
        raise TransportError("echoed tokens do not cover the prompt", retriable=False)
    return ScoredSequenceRaw(text, tuple(tokens))


def load_backend(desc: BackendDescriptor) -> Backend:
    params = dict(desc.params)
    if desc.kind == "uniform":
        return UniformBackend(int(params.get("vocab_size", 50257)),
                              _bool_param(params, "score_first", True),
                              model_name=desc.model_name or "uniform")
    if desc.kind == "table":
        if "path" not in params:
            raise ValueError("table backend requires a 'path' parameter")
        default = params.get("default")
        return TableBackend.from_file(params["path"],
                                      default=None if default is None else float(default),
                                      score_first=_bool_param(params, "score_first", True),
                                      model_name=desc.model_name or "table")
    return HttpBackend(desc.endpoint, desc.model_name,
                       retries=int(params.get("retries", 3)),
                       backoff=float(params.get("backoff", 0.25)),
                       timeout=float(params.get("timeout", 60)))


def _resolve(backend) -> Backend:
    return load_backend(backend) if isinstance(backend, BackendDescriptor) else backend


def score_text(backend: Backend | BackendDescriptor, text: str) -> ScoredSequenceRaw:
    return _resolve(backend).score_text(text)


@dataclass
class BatchError:
    index: int
    text: str
    error: Exception


@dataclass
class BatchResult:
    """Per-item results in input order; failed items are ``None``."""

    results: list[ScoredSequenceRaw | None]
    errors: list[BatchError]

    @property
    def ok(self) -> bool:
        return not self.errors

    def __len__(self) -> int:
        return len(self.results)

    def __iter__(self):
        return iter(self.results)

    def __getitem__(self, i):
        return self.results[i]


def score_batch(backend: Backend | BackendDescriptor, texts: Sequence[str], parallelism: int = 1) -> BatchResult:
    if parallelism < 1:
        raise ValueError("parallelism must be >= 1")
    backend = _resolve(backend)
    results: list[ScoredSequenceRaw | None] = [None] * len(texts)
    errors: list[BatchError] = []

    def run(i: int):
        try:
            results[i] = backend.score_text(texts[i])
        except Exception as exc:  # reported per item
            errors.append(BatchError(i, texts[i], exc))

    if parallelism == 1 or len(texts) <= 1:
        for i in range(len(texts)):
            run(i)
    else:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            list(pool.map(run, range(len(texts))))
    errors.sort(key=lambda e: e.index)
    return BatchResult(results, errors)
