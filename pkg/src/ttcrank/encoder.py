"""Frozen-encoder abstraction with cost metering.

Every call to :meth:`Encoder.encode` is charged to a :class:`CostMeter`
under a phase label. The baseline phase holds the single-pass encoding of
queries and documents (``T_base``); everything else is program overhead
(``T_prog``). Index-time work can be excluded to get the amortized,
query-time-only ratio.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import struct
import threading
import time
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Optional, Protocol, Sequence

import numpy as np

from .embedding import normalize_rows
from .errors import EncodeUnavailable, NoBaseline
from .text import tokenize

logger = logging.getLogger(__name__)

ENDPOINT_ENV = "TTC_ENCODER_ENDPOINT"


class Adapter(str, Enum):
    QUERY = "retrieval.query"
    PASSAGE = "retrieval.passage"
    CLASSIFICATION = "classification"
    MATCHING = "text-matching"

    @classmethod
    def parse(cls, value) -> "Adapter":
        return value if isinstance(value, cls) else cls(str(value))


# order used by the multi-adapter expansion programs
EXPANSION_ADAPTERS = (Adapter.QUERY, Adapter.MATCHING, Adapter.CLASSIFICATION, Adapter.PASSAGE)


class Phase(str, Enum):
    BASELINE = "baseline"
    QUERY_TIME = "query-time"
    INDEX_TIME = "index-time"


@dataclass(frozen=True)
class EncodeRequest:
    texts: tuple[str, ...]
    adapter: Adapter = Adapter.PASSAGE
    target_dim: Optional[int] = None
    max_input_tokens: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "texts", tuple(self.texts))
        object.__setattr__(self, "adapter", Adapter.parse(self.adapter))
        if not self.texts:
            raise ValueError("EncodeRequest needs at least one text")
        if self.target_dim is not None and self.target_dim <= 0:
            raise ValueError("target_dim must be positive")
        if self.max_input_tokens is not None and self.max_input_tokens <= 0:
            raise ValueError("max_input_tokens must be positive")


class CostMeter:
    """Thread-safe counters of encoded texts per phase."""

    def __init__(self, baseline_texts: int = 0):
        self._lock = threading.Lock()
        self.per_phase: dict[str, int] = {p.value: 0 for p in Phase}
        if baseline_texts:
            self.per_phase[Phase.BASELINE.value] = int(baseline_texts)

    def add(self, phase: Phase | str, n: int) -> None:
        if n < 0:
            raise ValueError("meter counts are monotone")
        key = Phase(phase).value
        with self._lock:
            self.per_phase[key] += int(n)

    @property
    def baseline_texts(self) -> int:
        return self.per_phase[Phase.BASELINE.value]

    @property
    def program_texts(self) -> int:
        with self._lock:
            return sum(v for k, v in self.per_phase.items() if k != Phase.BASELINE.value)

    def snapshot(self) -> dict[str, int]:
        with self._lock:
            return dict(self.per_phase)

    def merge(self, other: "CostMeter") -> None:
        for k, v in other.snapshot().items():
            self.add(k, v)

    def cost_ratio(self, amortized: bool = False) -> float:
        return cost_ratio(self, amortized=amortized)


def cost_ratio(meter: CostMeter, amortized: bool = False) -> float:
    """``(T_base + T_prog) / T_base``; with ``amortized`` index-time work is excluded."""
    base = meter.baseline_texts
    if base <= 0:
        raise NoBaseline("cost ratio needs baseline_texts > 0")
    extra = meter.program_texts
    if amortized:
        extra -= meter.per_phase[Phase.INDEX_TIME.value]
    return (base + extra) / base


@dataclass(frozen=True)
class ProviderConfig:
    backend: str = "synthetic"  # synthetic | file-cache | http
    native_dim: int = 384
    seed: int = 0
    endpoint: Optional[str] = None
    cache_path: Optional[str] = None
    has_adapters: bool = True
    # backend that fills a file cache on misses
    inner_backend: str = "synthetic"
    timeout: float = 30.0
    retries: int = 3
    backoff: float = 0.05
    hard_token_limit: int = 8192
    # seconds slept per encoded text by the synthetic backend (benchmarks only)
    latency_per_text: float = 0.0
    # cache hits are free when set; otherwise every logical call is charged
    amortized: bool = False

    def __post_init__(self):
        if self.backend not in ("synthetic", "file-cache", "http"):
            raise ValueError(f"unknown backend {self.backend!r}")
        if self.native_dim <= 0:
            raise ValueError("native_dim must be positive")
        uses_http = self.backend == "http" or (
            self.backend == "file-cache" and self.inner_backend == "http")
        if uses_http and not self.endpoint:
            raise ValueError("http backend requires an endpoint")
        if self.backend == "file-cache" and not self.cache_path:
            raise ValueError("file-cache backend requires cache_path")

    @classmethod
    def from_env(cls, **kwargs) -> "ProviderConfig":
        if os.environ.get(ENDPOINT_ENV):
            kwargs["endpoint"] = os.environ[ENDPOINT_ENV]
        return cls(**kwargs)


class Backend(Protocol):
    dim: int

    def embed(self, texts: Sequence[str], adapter: Adapter,
              max_input_tokens: Optional[int]) -> np.ndarray: ...


def _hash_int(*parts) -> int:
    h = hashlib.blake2b("\x00".join(map(str, parts)).encode("utf-8"), digest_size=8)
    return int.from_bytes(h.digest(), "little")


class SyntheticBackend:
    """Deterministic bag-of-hashed-words encoder.

    A text embeds as the normalized sum of seeded random unit vectors, one
    per word token, so lexical overlap drives cosine similarity. Each
    adapter then applies its own fixed rotation: disjoint coordinate pairs
    are rotated by ``angle`` radians, which is orthogonal by construction.
    Without adapters every view is the identity.
    """

    angle = 0.35

    def __init__(self, dim: int = 384, seed: int = 0, has_adapters: bool = True,
                 hard_token_limit: int = 8192, latency_per_text: float = 0.0):
        self.dim = dim
        self.seed = seed
        self.has_adapters = has_adapters
        self.hard_token_limit = hard_token_limit
        self.latency_per_text = latency_per_text
        self._vectors: dict[str, np.ndarray] = {}
        self._rotations: dict[Adapter, tuple[np.ndarray, np.ndarray]] = {}

    def token_vector(self, token: str) -> np.ndarray:
        v = self._vectors.get(token)
        if v is None:
            rng = np.random.default_rng(_hash_int("tok", self.seed, token))
            v = rng.standard_normal(self.dim)
            v /= np.linalg.norm(v)
            v = self._vectors.setdefault(token, v)
        return v

    def _pairs(self, adapter: Adapter) -> tuple[np.ndarray, np.ndarray]:
        got = self._rotations.get(adapter)
        if got is None:
            rng = np.random.default_rng(_hash_int("adapter", self.seed, adapter.value))
            perm = rng.permutation(self.dim)
            half = self.dim // 2
            got = self._rotations.setdefault(adapter, (perm[:half], perm[half : 2 * half]))
        return got

    def rotate(self, x: np.ndarray, adapter: Adapter) -> np.ndarray:
        if not self.has_adapters:
            return x
        i, j = self._pairs(adapter)
        c, s = np.cos(self.angle), np.sin(self.angle)
        y = x.copy()
        y[..., i] = c * x[..., i] - s * x[..., j]
        y[..., j] = s * x[..., i] + c * x[..., j]
        return y

    def embed_one(self, text: str, adapter: Adapter,
                  max_input_tokens: Optional[int] = None) -> np.ndarray:
        toks = tokenize(text)[: self.hard_token_limit]
        if max_input_tokens is not None:
            toks = toks[:max_input_tokens]
        if not toks:
            return np.zeros(self.dim)
        v = np.array([self.token_vector(t) for t in toks]).sum(axis=0)
        norm = np.linalg.norm(v)
        if norm < 1e-12:
            return np.zeros(self.dim)
        v = self.rotate(v / norm, Adapter.parse(adapter))
        return v / np.linalg.norm(v)

    def embed(self, texts, adapter, max_input_tokens=None) -> np.ndarray:
        if self.latency_per_text:
            time.sleep(self.latency_per_text * len(texts))
        out = np.zeros((len(texts), self.dim))
        for r, text in enumerate(texts):
            out[r] = self.embed_one(text, adapter, max_input_tokens)
        return out


def synthetic_encode(text: str, adapter=Adapter.PASSAGE, seed: int = 0, dim: int = 384,
                     has_adapters: bool = True) -> np.ndarray:
    return SyntheticBackend(dim, seed, has_adapters).embed_one(text, Adapter.parse(adapter))


class HttpBackend:
    """Batch client for ``POST {endpoint}/encode``."""

    def __init__(self, endpoint: str, dim: int, timeout: float = 30.0, retries: int = 3,
                 backoff: float = 0.05):
        import httpx

        self.url = endpoint.rstrip("/") + "/encode"
        self.dim = dim
        self.retries = retries
        self.backoff = backoff
        self._client = httpx.Client(timeout=timeout)
        self._httpx = httpx

    def _post(self, body: dict) -> dict:
        last: Exception | None = None
        for attempt in range(self.retries + 1):
            try:
                resp = self._client.post(self.url, json=body)
                if resp.status_code >= 500:
                    raise EncodeUnavailable(f"server error {resp.status_code}")
                resp.raise_for_status()
                return resp.json()
            except (self._httpx.TransportError, EncodeUnavailable) as e:
                last = e
                logger.warning("encode attempt %d failed: %s", attempt + 1, e)
                if attempt < self.retries:
                    time.sleep(self.backoff * 2**attempt)
            except (self._httpx.HTTPStatusError, ValueError) as e:
                raise EncodeUnavailable(f"bad response from {self.url}: {e}") from e
        raise EncodeUnavailable(f"{self.url} unreachable after {self.retries + 1} attempts: {last}")

    def embed(self, texts, adapter, max_input_tokens=None, target_dim=None) -> np.ndarray:
        body = {"texts": list(texts), "adapter": Adapter.parse(adapter).value,
                "dim": target_dim, "max_tokens": max_input_tokens}
        data = self._post(body)
        try:
            arr = np.asarray(data["embeddings"], dtype=np.float64)
        except (KeyError, TypeError, ValueError) as e:
            raise EncodeUnavailable(f"malformed encode response: {e}") from e
        if arr.ndim != 2 or arr.shape[0] != len(texts) or not np.all(np.isfinite(arr)):
            raise EncodeUnavailable(f"malformed encode response with shape {arr.shape}")
        return normalize_rows(arr)


class FileCache:
    """Write-through vector cache in one directory.

    ``vectors.bin`` holds appended records: 16-byte key, little-endian
    uint32 dim, then ``dim`` little-endian float32 values. ``index.tsv``
    maps hex keys to record offsets, one ``key<TAB>offset`` line per
    write; the last line for a key wins.
    """

    _HEAD = struct.Struct("<16sI")

    def __init__(self, path: str | os.PathLike):
        self.root = Path(path)
        self.root.mkdir(parents=True, exist_ok=True)
        self.data_path = self.root / "vectors.bin"
        self.index_path = self.root / "index.tsv"
        self._lock = threading.Lock()
        self._index: dict[bytes, int] = {}
        self.data_path.touch()
        if self.index_path.exists():
            for line in self.index_path.read_text().splitlines():
                parts = line.split("\t")
                if len(parts) == 2:
                    try:
                        self._index[bytes.fromhex(parts[0])] = int(parts[1])
                    except ValueError:
                        continue

    @staticmethod
    def key(text: str, adapter, target_dim: Optional[int], max_input_tokens: Optional[int]) -> bytes:
        payload = json.dumps([text, Adapter.parse(adapter).value, target_dim, max_input_tokens])
        return hashlib.blake2b(payload.encode("utf-8"), digest_size=16).digest()

    def lookup(self, key: bytes) -> Optional[np.ndarray]:
        off = self._index.get(key)
        if off is None:
            return None
        with open(self.data_path, "rb") as fh:
            fh.seek(off)
            head = fh.read(self._HEAD.size)
            if len(head) < self._HEAD.size:
                return None
            got_key, dim = self._HEAD.unpack(head)
            raw = fh.read(4 * dim)
        if got_key != key or len(raw) != 4 * dim:
            logger.warning("cache record for %s is corrupt; rebuilding", key.hex())
            return None
        vec = np.frombuffer(raw, dtype="<f4").astype(np.float64)
        if not np.all(np.isfinite(vec)):
            return None
        return vec

    def store(self, key: bytes, vec: np.ndarray) -> None:
        vec32 = np.asarray(vec, dtype="<f4")
        with self._lock:
            with open(self.data_path, "ab") as fh:
                off = fh.tell()
                fh.write(self._HEAD.pack(key, vec32.shape[0]))
                fh.write(vec32.tobytes())
            with open(self.index_path, "a") as fh:
                fh.write(f"{key.hex()}\t{off}\n")
            self._index[key] = off


def _make_backend(config: ProviderConfig, kind: str):
    if kind == "synthetic":
        return SyntheticBackend(config.native_dim, config.seed, config.has_adapters,
                                config.hard_token_limit, config.latency_per_text)
    if kind == "http":
        return HttpBackend(config.endpoint, config.native_dim, config.timeout,
                           config.retries, config.backoff)
    raise ValueError(f"unknown backend {kind!r}")


class Encoder:
    """``encode_fn``: the only way programs reach the frozen model."""

    def __init__(self, config: ProviderConfig | None = None, meter: CostMeter | None = None,
                 _backend=None, _cache=None):
        self.config = config or ProviderConfig()
        self.meter = meter if meter is not None else CostMeter()
        if _backend is None:
            kind = self.config.inner_backend if self.config.backend == "file-cache" else self.config.backend
            _backend = _make_backend(self.config, kind)
        if _cache is None and self.config.backend == "file-cache":
            _cache = FileCache(self.config.cache_path)
        self.backend = _backend
        self.cache = _cache

    @property
    def has_adapters(self) -> bool:
        return self.config.has_adapters

    @property
    def dim(self) -> int:
        return self.config.native_dim

    def with_meter(self, meter: CostMeter) -> "Encoder":
        """Same backend and cache, charged to a different meter."""
        return Encoder(self.config, meter, _backend=self.backend, _cache=self.cache)

    def _compute(self, texts, req: EncodeRequest) -> np.ndarray:
        if isinstance(self.backend, HttpBackend):
            M = self.backend.embed(texts, req.adapter, req.max_input_tokens, req.target_dim)
        else:
            M = self.backend.embed(texts, req.adapter, req.max_input_tokens)
        if req.target_dim is not None:
            if req.target_dim > M.shape[1]:
                raise ValueError(f"target_dim {req.target_dim} exceeds native dim {M.shape[1]}")
            M = normalize_rows(M[:, : req.target_dim])
        return M

    def encode(self, request: EncodeRequest, phase: Phase | str = Phase.QUERY_TIME) -> np.ndarray:
        if request.target_dim is not None and request.target_dim > self.dim:
            raise ValueError(f"target_dim {request.target_dim} exceeds native dim {self.dim}")
        if self.cache is None:
            out = self._compute(request.texts, request)
            self.meter.add(phase, len(request.texts))
            return out
        keys = [FileCache.key(t, request.adapter, request.target_dim, request.max_input_tokens)
                for t in request.texts]
        rows: list[Optional[np.ndarray]] = [self.cache.lookup(k) for k in keys]
        miss = [i for i, r in enumerate(rows) if r is None]
        if miss:
            fresh = self._compute([request.texts[i] for i in miss], request)
            for i, vec in zip(miss, fresh):
                self.cache.store(keys[i], vec)
                rows[i] = np.asarray(vec, dtype="<f4").astype(np.float64)
        charged = len(miss) if self.config.amortized else len(request.texts)
        self.meter.add(phase, charged)
        return np.vstack(rows)

    def encode_texts(self, texts: Sequence[str], adapter=Adapter.PASSAGE,
                     phase: Phase | str = Phase.QUERY_TIME, target_dim: Optional[int] = None,
                     max_input_tokens: Optional[int] = None) -> np.ndarray:
        return self.encode(EncodeRequest(tuple(texts), Adapter.parse(adapter), target_dim,
                                         max_input_tokens), phase)
