"""Brute-force cosine retrieval and top-k scoring."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, DegenerateInputError, ParameterError, ShapeError

BLOCK = 1024
# cosines are snapped to this many decimals so rounding noise cannot split a true tie
TIE_DECIMALS = 12


@dataclass(frozen=True)
class EmbeddingSet:
    vectors: np.ndarray
    ids: np.ndarray = None
    normalized: bool = False

    def __post_init__(self):
        vec = np.asarray(self.vectors, dtype=np.float64)
        if vec.ndim != 2:
            raise ShapeError(f"embeddings must be (n, d), got {vec.shape}")
        ids = np.arange(len(vec)) if self.ids is None else np.asarray(self.ids, dtype=np.int64).reshape(-1)
        if len(ids) != len(vec):
            raise ShapeError("one id per embedding row is required")
        if len(np.unique(ids)) != len(ids):
            raise DataError("embedding ids must be unique")
        if not np.all(np.isfinite(vec)):
            raise DegenerateInputError("embeddings contain non-finite values")
        if self.normalized and len(vec):
            norms = np.linalg.norm(vec, axis=1)
            if np.max(np.abs(norms - 1.0)) > 1e-9:
                raise ParameterError("rows flagged as normalized are not unit length")
        object.__setattr__(self, "vectors", vec)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return len(self.vectors)

    @property
    def dim(self):
        return self.vectors.shape[1]

    def concat(self, other):
        return EmbeddingSet(np.vstack([self.vectors, other.vectors]), np.concatenate([self.ids, other.ids]))


@dataclass
class RetrievalReport:
    ks: list
    correct: dict  # k -> number of queries with the true id in the top k
    n_queries: int
    database_size: int
    ranked: list = field(default_factory=list)  # per query, truncated to max(ks)
    true_ids: list = field(default_factory=list)

    @property
    def accuracy(self):
        if not self.n_queries:
            return {k: 0.0 for k in self.ks}
        return {k: self.correct[k] / self.n_queries for k in self.ks}

    def to_dict(self):
        return {"ks": list(self.ks), "correct": {str(k): int(v) for k, v in self.correct.items()},
                "n_queries": self.n_queries, "database_size": self.database_size,
                "accuracy": {str(k): v for k, v in self.accuracy.items()}}


def _unit_rows(vectors, ids):
    norms = np.sqrt(np.sum(vectors * vectors, axis=1))
    bad = np.flatnonzero(norms == 0)
    if bad.size:
        raise DegenerateInputError(f"zero-norm embedding for ids {ids[bad].tolist()}")
    return vectors / norms[:, None]


class Index:
    """Immutable store of L2-normalised candidate embeddings."""

    def __init__(self, images):
        if len(images) < 1:
            raise ParameterError("an index needs at least one embedding")
        unit = _unit_rows(images.vectors, images.ids)
        # identical rows share one similarity column so exact ties stay exact
        uniq, inverse = np.unique(unit, axis=0, return_inverse=True)
        if len(uniq) == len(unit):
            self._unique, self._inverse = unit, None
        else:
            self._unique, self._inverse = np.ascontiguousarray(uniq), inverse.reshape(-1)
        self.vectors = unit
        self.vectors.setflags(write=False)
        self.ids = images.ids.copy()
        self.ids.setflags(write=False)
        self._pos = {int(i): r for r, i in enumerate(self.ids.tolist())}

    def __len__(self):
        return len(self.ids)

    @property
    def dim(self):
        return self.vectors.shape[1]

    def position(self, id_):
        try:
            return self._pos[int(id_)]
        except KeyError:
            raise DataError(f"id {id_} is not in the index") from None

    def similarities(self, queries):
        """Cosine similarity of each query row against every indexed row."""
        q = np.atleast_2d(np.asarray(queries, dtype=np.float64))
        if q.shape[1] != self.dim:
            raise ShapeError(f"query width {q.shape[1]} does not match index width {self.dim}")
        qn = _unit_rows(q, np.arange(len(q)))
        out = np.empty((len(q), len(self)))
        for s in range(0, len(q), BLOCK):
            sims = qn[s:s + BLOCK] @ self._unique.T
            out[s:s + BLOCK] = sims if self._inverse is None else sims[:, self._inverse]
        return np.round(out, TIE_DECIMALS, out=out)


def build_index(images):
    return Index(images)


def _order(sims, ids):
    # descending similarity, ties by ascending id
    return np.lexsort((ids, -sims))


def rank(index, query):
    """Index ids sorted by descending cosine similarity to ``query``."""
    q = np.asarray(query, dtype=np.float64).reshape(1, -1)
    sims = index.similarities(q)[0]
    return index.ids[_order(sims, index.ids)]


def _top(sims, ids, k):
    if k >= len(ids):
        return ids[_order(sims, ids)]
    cut = np.partition(sims, len(sims) - k)[len(sims) - k]
    cand = np.flatnonzero(sims >= cut)
    return ids[cand[_order(sims[cand], ids[cand])]][:k]


def topk_accuracy(index, queries, true_ids, ks=(1, 5), keep_ranked=True):
    """Fraction of queries whose true id lands within the first ``k`` ranked ids."""
    ks = sorted({int(k) for k in ks})
    if not ks or ks[0] < 1 or ks[-1] > len(index):
        raise ParameterError(f"ks must lie in [1, {len(index)}], got {ks}")
    qv = queries.vectors if isinstance(queries, EmbeddingSet) else np.atleast_2d(queries)
    true_ids = np.asarray(true_ids, dtype=np.int64).reshape(-1)
    if len(true_ids) != len(qv):
        raise ShapeError("one true id per query is required")
    cols = np.array([index.position(t) for t in true_ids], dtype=np.int64)
    positions = np.empty(len(qv), dtype=np.int64)
    ranked = []
    kmax = ks[-1]
    for s in range(0, len(qv), BLOCK):
        sims = index.similarities(qv[s:s + BLOCK])
        rows = np.arange(len(sims))
        c = cols[s:s + BLOCK]
        own = sims[rows, c][:, None]
        pos = np.count_nonzero(sims > own, axis=1)
        # ties with the true image only matter for the few rows that have them
        tied = np.flatnonzero(np.count_nonzero(sims == own, axis=1) > 1)
        for r in tied:
            pos[r] += np.count_nonzero((sims[r] == own[r]) & (index.ids < true_ids[s + r]))
        positions[s:s + BLOCK] = pos
        if keep_ranked:
            ranked.extend(_top(row, index.ids, kmax).tolist() for row in sims)
    correct = {k: int(np.sum(positions < k)) for k in ks}
    return RetrievalReport(ks, correct, len(qv), len(index), ranked, true_ids.tolist())


def extended_search(index_train_plus_test, queries, true_ids, ks=(1, 5), keep_ranked=True):
    """Top-k scoring against an enlarged database (e.g. train plus test images)."""
    return topk_accuracy(index_train_plus_test, queries, true_ids, ks, keep_ranked)
