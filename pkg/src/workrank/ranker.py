"""Target-space embedding cache and query-time ranking.

A :class:`TargetCache` holds the raw token matrices of every target, stored
as float32 exactly as they are written to disk. Ranking a query costs one
encoder pass plus one batched scoring call against the cache.

Cache file layout (little-endian)::

    b"UWEC" | version u32 | entry count u32 | dim u32
    per entry: id length u16 | id UTF-8 | token count u32 | token_count*dim f32
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np

from .corpus import TaskSpec, TextSpace
from .encoder import EncoderParams, encode, tokenize
from .interaction import InteractionConfig, batch_scores, l2_normalize_rows, pad, score_pair

CACHE_MAGIC = b"UWEC"
CACHE_VERSION = 1
EXCLUDED_SCORE = float("-inf")


class CacheError(ValueError):
    pass


class TargetCache:
    def __init__(self, space_name: str, dim: int, ids, matrices):
        ids = list(ids)
        if len(set(ids)) != len(ids):
            raise CacheError(f"cache {space_name!r}: duplicate target ids")
        mats = []
        for tid, m in zip(ids, matrices):
            m = np.asarray(m, dtype=np.float32)
            if m.ndim != 2 or m.shape[1] != dim or m.shape[0] < 1:
                raise CacheError(f"cache {space_name!r}: entry {tid!r} has shape {m.shape}, expected (n>=1, {dim})")
            mats.append(m)
        if len(mats) != len(ids):
            raise CacheError("ids and matrices differ in length")
        self.space_name = space_name
        self.dim = dim
        self.ids = ids
        self.matrices = mats
        self._index = {t: i for i, t in enumerate(ids)}
        self._prepared = None

    def __len__(self):
        return len(self.ids)

    def __contains__(self, tid):
        return tid in self._index

    def index(self, tid) -> int:
        return self._index[tid]

    def prepared(self):
        """Padded raw and normalized copies, built once."""
        if self._prepared is None:
            y, mask = pad([m.astype(np.float64) for m in self.matrices])
            id_rank = np.empty(len(self.ids), dtype=np.int64)
            id_rank[np.argsort(np.array(self.ids, dtype=object), kind="stable")] = np.arange(len(self.ids))
            self._prepared = (y, mask, l2_normalize_rows(y), id_rank)
        return self._prepared

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(CACHE_MAGIC)
            fh.write(struct.pack("<III", CACHE_VERSION, len(self.ids), self.dim))
            for tid, m in zip(self.ids, self.matrices):
                raw = tid.encode("utf-8")
                if len(raw) > 0xFFFF:
                    raise CacheError(f"id too long: {tid[:40]!r}...")
                fh.write(struct.pack("<H", len(raw)))
                fh.write(raw)
                fh.write(struct.pack("<I", m.shape[0]))
                fh.write(np.ascontiguousarray(m, dtype="<f4").tobytes())

    @classmethod
    def load(cls, path, space_name: str | None = None) -> "TargetCache":
        with open(path, "rb") as fh:
            data = fh.read()
        if data[:4] != CACHE_MAGIC:
            raise CacheError(f"{path}: not a cache file (bad magic)")
        try:
            version, count, dim = struct.unpack_from("<III", data, 4)
            if version != CACHE_VERSION:
                raise CacheError(f"{path}: unsupported cache version {version}")
            off = 16
            ids, mats = [], []
            for _ in range(count):
                (n_id,) = struct.unpack_from("<H", data, off)
                off += 2
                ids.append(data[off: off + n_id].decode("utf-8"))
                off += n_id
                (n_tok,) = struct.unpack_from("<I", data, off)
                off += 4
                n_bytes = 4 * n_tok * dim
                if off + n_bytes > len(data):
                    raise CacheError(f"{path}: truncated entry {ids[-1]!r}")
                mats.append(np.frombuffer(data, dtype="<f4", count=n_tok * dim, offset=off)
                            .reshape(n_tok, dim).astype(np.float32))
                off += n_bytes
        except struct.error as exc:
            raise CacheError(f"{path}: truncated cache file ({exc})") from None
        if off != len(data):
            raise CacheError(f"{path}: {len(data) - off} trailing bytes")
        return cls(space_name or str(path), dim, ids, mats)

    def aligned_to(self, space: TextSpace) -> "TargetCache":
        """Reorder to ``space`` order; every space item must be present."""
        missing = [t for t in space.ids if t not in self]
        if missing:
            raise CacheError(f"cache lacks {len(missing)} targets of space {space.name!r}, e.g. {missing[:3]}")
        return TargetCache(space.name, self.dim, space.ids, [self.matrices[self._index[t]] for t in space.ids])


def build_cache(source, target_space: TextSpace, dim: int | None = None,
                max_tokens: int | None = None) -> TargetCache:
    """Cache from encoder params, or from a mapping ``target_id -> (n, h) matrix``."""
    if isinstance(source, EncoderParams):
        mats = [encode(source, tokenize(t, max_tokens, source.vocab_size)) for t in target_space.texts]
        h = source.dim
    elif isinstance(source, TargetCache):
        cache = source.aligned_to(target_space)
        mats, h = cache.matrices, cache.dim
    else:
        missing = [t for t in target_space.ids if t not in source]
        if missing:
            raise CacheError(f"external embeddings lack targets {missing[:3]}")
        mats = [np.asarray(source[t]) for t in target_space.ids]
        h = mats[0].shape[1] if mats else (dim or 0)
    if dim is not None and h != dim:
        raise CacheError(f"dimension mismatch: embeddings have dim {h}, expected {dim}")
    return TargetCache(target_space.name, h, target_space.ids, mats)


@dataclass
class RankedOutput:
    query_id: str | None
    target_ids: list[str]
    scores: np.ndarray
    ranking: np.ndarray = field(default=None)

    @property
    def ranked_ids(self) -> list[str]:
        return [self.target_ids[i] for i in self.ranking]

    def top(self, k: int | None = None):
        idx = self.ranking if k is None else self.ranking[:k]
        return [(self.target_ids[i], float(self.scores[i]), r + 1) for r, i in enumerate(idx)]


def order_scores(scores: np.ndarray, id_rank: np.ndarray) -> np.ndarray:
    """Descending score, ties by ascending target id."""
    return np.lexsort((id_rank, -scores))


class Ranker:
    """Query-side encoder plus target caches.

    ``encode_calls`` counts query encodes, one per ranked query.
    """

    def __init__(self, params: EncoderParams | None, config: InteractionConfig = InteractionConfig(),
                 caches: dict[str, TargetCache] | None = None, max_tokens: int | None = None):
        self.params = params
        self.config = config
        self.caches = dict(caches or {})
        self.max_tokens = max_tokens
        self.encode_calls = 0

    def encode_query(self, text: str) -> np.ndarray:
        if self.params is None:
            raise CacheError("no encoder params available for query encoding")
        self.encode_calls += 1
        return encode(self.params, tokenize(text, self.max_tokens, self.params.vocab_size))

    def rank_query(self, query, cache: TargetCache, query_id: str | None = None,
                   exclude_self: bool = False) -> RankedOutput:
        e_q = np.asarray(query, dtype=np.float64) if isinstance(query, np.ndarray) else self.encode_query(query)
        if e_q.shape[1] != cache.dim:
            raise CacheError(f"dimension mismatch: query dim {e_q.shape[1]}, cache dim {cache.dim}")
        y, y_mask, y_hat, id_rank = cache.prepared()
        q, q_mask = pad([e_q])
        scores, _ = batch_scores(q, q_mask, y, y_mask, self.config, y_hat=y_hat)
        scores = scores[0]
        if exclude_self:
            if query_id is None or query_id not in cache:
                raise CacheError(f"cannot exclude unknown query id {query_id!r} from {cache.space_name!r}")
            scores[cache.index(query_id)] = EXCLUDED_SCORE
        return RankedOutput(query_id, cache.ids, scores, order_scores(scores, id_rank))

    def rank_task(self, task: TaskSpec, query_ids=None) -> dict[str, RankedOutput]:
        cache = self.caches.get(task.target_space.name)
        if cache is None:
            raise CacheError(f"no cache for target space {task.target_space.name!r}")
        if cache.ids != task.target_space.ids:
            cache = cache.aligned_to(task.target_space)
        qids = task.query_ids if query_ids is None else list(query_ids)
        return {qid: self.rank_query(task.query_space.text(qid), cache, qid, task.exclude_self)
                for qid in qids}


def rank_query(query, params, cache: TargetCache, config: InteractionConfig = InteractionConfig(),
               query_id: str | None = None, exclude_self: bool = False) -> RankedOutput:
    return Ranker(params, config).rank_query(query, cache, query_id, exclude_self)


def rank_task(task: TaskSpec, params, caches: dict[str, TargetCache],
              config: InteractionConfig = InteractionConfig()) -> dict[str, RankedOutput]:
    return Ranker(params, config, caches).rank_task(task)


def score_matrix(outputs: dict[str, RankedOutput]) -> np.ndarray:
    return np.vstack([o.scores for o in outputs.values()])


def direct_scores(query_text: str, target_space: TextSpace, params: EncoderParams,
                  config: InteractionConfig, max_tokens: int | None = None) -> np.ndarray:
    """Uncached path: encode every target afresh and score pair by pair."""
    e_q = encode(params, tokenize(query_text, max_tokens, params.vocab_size))
    return np.array([score_pair(e_q, encode(params, tokenize(t, max_tokens, params.vocab_size)), config)
                     for t in target_space.texts])
