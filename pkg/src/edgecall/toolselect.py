"""Query-to-tool retrieval and selection.

The pipeline: split a query into sentences, embed them, rank catalog
tools by best-sentence cosine similarity, re-rank lexically, then keep
an adaptive subset and patch in entity-mapped tools. Everything here is
deterministic for a fixed embedder seed, so runs are reproducible
offline.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import requests

from .errors import ConfigError, RetrievalError

_WORD_RE = re.compile(r"[a-z0-9]+")
# Sentence boundary: terminal punctuation followed by whitespace, or any newline.
_SENTENCE_RE = re.compile(r"(?<=[.!?])\s+|\n+")


def tokenize(text: str) -> list[str]:
    """Lowercase alphanumeric tokens, in order of appearance."""
    return _WORD_RE.findall(text.lower())


@dataclass(frozen=True)
class Tool:
    id: str
    description: str
    entity_keywords: tuple[str, ...] = ()


@dataclass(frozen=True)
class QuerySplit:
    original: str
    sentences: tuple[str, ...]


@dataclass(frozen=True)
class ScoredTool:
    tool_id: str
    score: float


@dataclass(frozen=True)
class SelectionConfig:
    k: int = 8
    gap_delta: float = 0.10
    max_selected: int | None = None  # defaults to k

    def __post_init__(self) -> None:
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 0.0 <= self.gap_delta <= 2.0:
            raise ValueError(f"gap_delta must be in [0, 2], got {self.gap_delta}")
        if self.max_selected is None:
            object.__setattr__(self, "max_selected", self.k)
        if not 1 <= self.max_selected <= self.k:
            raise ValueError(
                f"max_selected must be in [1, k={self.k}], got {self.max_selected}"
            )


def split_sentences(text: str) -> QuerySplit:
    """Split on sentence-ending punctuation and newlines.

    Text without a terminator is a single sentence. Joining the parts
    preserves every non-whitespace character of the input.
    """
    if not text or not text.strip():
        raise ValueError("cannot split empty or whitespace-only text")
    parts = [p.strip() for p in _SENTENCE_RE.split(text)]
    sentences = tuple(p for p in parts if p)
    return QuerySplit(original=text, sentences=sentences)


class HashedEmbedder:
    """Hermetic bag-of-words embedder.

    Each token hashes into one of `dim` buckets with a keyed blake2b, the
    bucket counts are L2-normalized, and the same text always produces
    the same unit vector regardless of process or platform.
    """

    def __init__(self, dim: int = 64, seed: int = 7) -> None:
        if dim < 1:
            raise ValueError(f"dim must be >= 1, got {dim}")
        self.dim = dim
        self.seed = seed
        self._key = seed.to_bytes(8, "little", signed=False)

    def _bucket(self, token: str) -> int:
        digest = hashlib.blake2b(
            token.encode("utf-8"), digest_size=8, key=self._key
        ).digest()
        return int.from_bytes(digest, "big") % self.dim

    def embed(self, text: str) -> np.ndarray:
        tokens = tokenize(text)
        if not tokens:
            raise ValueError(f"no tokens to embed in {text!r}")
        vec = np.zeros(self.dim, dtype=np.float64)
        for tok in tokens:
            vec[self._bucket(tok)] += 1.0
        return vec / np.linalg.norm(vec)

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        return [self.embed(t) for t in texts]


class RemoteEmbedder:
    """Client for an HTTP embedding service, with optional hermetic fallback.

    Transport failures (timeouts, connection errors, non-200 responses)
    fall back to the local embedder when one is configured and raise
    RetrievalError otherwise. A response with the wrong shape or
    dimension is never silently patched over.
    """

    def __init__(
        self,
        base_url: str,
        dim: int,
        timeout_s: float = 5.0,
        fallback: HashedEmbedder | None = None,
    ) -> None:
        self.base_url = base_url.rstrip("/")
        self.dim = dim
        self.timeout_s = timeout_s
        self.fallback = fallback
        if fallback is not None and fallback.dim != dim:
            raise ValueError(
                f"fallback dim {fallback.dim} does not match remote dim {dim}"
            )

    def embed_batch(self, texts: list[str]) -> list[np.ndarray]:
        try:
            resp = requests.post(
                f"{self.base_url}/embed",
                json={"texts": list(texts)},
                timeout=self.timeout_s,
            )
        except requests.RequestException as exc:
            if self.fallback is not None:
                return self.fallback.embed_batch(texts)
            raise RetrievalError(f"embedding service unreachable: {exc}") from exc
        if resp.status_code != 200:
            if self.fallback is not None:
                return self.fallback.embed_batch(texts)
            raise RetrievalError(
                f"embedding service returned HTTP {resp.status_code}"
            )
        try:
            vectors = resp.json()["vectors"]
        except (ValueError, KeyError) as exc:
            raise RetrievalError(f"malformed embedding response: {exc}") from exc
        if len(vectors) != len(texts):
            raise RetrievalError(
                f"expected {len(texts)} vectors, got {len(vectors)}"
            )
        out: list[np.ndarray] = []
        for raw in vectors:
            vec = np.asarray(raw, dtype=np.float64)
            if vec.shape != (self.dim,):
                raise RetrievalError(
                    f"embedding dimension {vec.shape} does not match index ({self.dim},)"
                )
            norm = np.linalg.norm(vec)
            if norm == 0.0:
                raise RetrievalError("embedding service returned a zero vector")
            out.append(vec / norm)
        return out

    def embed(self, text: str) -> np.ndarray:
        return self.embed_batch([text])[0]


class ToolCatalog:
    """Validated collection of tools, addressable by id."""

    def __init__(self, tools: list[Tool]) -> None:
        self.tools = list(tools)
        self.by_id: dict[str, Tool] = {}
        for tool in self.tools:
            if not tool.id:
                raise ConfigError("tool id must be non-empty")
            if not tool.description:
                raise ConfigError(f"tool {tool.id!r} has an empty description")
            if tool.id in self.by_id:
                raise ConfigError(f"duplicate tool id {tool.id!r}")
            self.by_id[tool.id] = tool

    def __len__(self) -> int:
        return len(self.tools)

    def __iter__(self):
        return iter(self.tools)

    @classmethod
    def from_json(cls, path: str | Path) -> "ToolCatalog":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(raw, list):
            raise ConfigError(f"{path}: expected a JSON array of tools")
        tools = []
        for i, entry in enumerate(raw):
            if not isinstance(entry, dict) or "id" not in entry or "description" not in entry:
                raise ConfigError(f"{path}: entry {i} missing id or description")
            keywords = entry.get("entity_keywords", [])
            if not isinstance(keywords, list):
                raise ConfigError(f"{path}: entry {i} entity_keywords must be a list")
            tools.append(
                Tool(
                    id=str(entry["id"]),
                    description=str(entry["description"]),
                    entity_keywords=tuple(str(k) for k in keywords),
                )
            )
        return cls(tools)


class EntityMap:
    """Ordered mapping from entity keyword to the tool ids it implies."""

    def __init__(self, rules: dict[str, tuple[str, ...]], catalog: ToolCatalog) -> None:
        for entity, tool_ids in rules.items():
            for tid in tool_ids:
                if tid not in catalog.by_id:
                    raise ConfigError(
                        f"entity {entity!r} references unknown tool id {tid!r}"
                    )
        self.rules = {k: tuple(v) for k, v in rules.items()}
        self._patterns = {
            entity: re.compile(
                rf"(?<![a-z0-9]){re.escape(entity.lower())}(?![a-z0-9])"
            )
            for entity in self.rules
        }

    def match(self, query: str) -> list[str]:
        """Tool ids implied by whole-word entity mentions, deduplicated, in rule order."""
        lowered = query.lower()
        seen: set[str] = set()
        out: list[str] = []
        for entity, tool_ids in self.rules.items():
            if self._patterns[entity].search(lowered):
                for tid in tool_ids:
                    if tid not in seen:
                        seen.add(tid)
                        out.append(tid)
        return out

    @classmethod
    def from_json(cls, path: str | Path, catalog: ToolCatalog) -> "EntityMap":
        path = Path(path)
        try:
            raw = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        if not isinstance(raw, dict):
            raise ConfigError(f"{path}: expected a JSON object of entity -> tool ids")
        rules = {}
        for entity, tool_ids in raw.items():
            if not isinstance(tool_ids, list):
                raise ConfigError(f"{path}: entity {entity!r} must map to a list")
            rules[str(entity)] = tuple(str(t) for t in tool_ids)
        return cls(rules, catalog)

    @classmethod
    def from_catalog(cls, catalog: ToolCatalog) -> "EntityMap":
        """Build rules from each tool's own entity keywords."""
        rules: dict[str, list[str]] = {}
        for tool in catalog:
            for keyword in tool.entity_keywords:
                rules.setdefault(keyword, []).append(tool.id)
        return cls({k: tuple(v) for k, v in rules.items()}, catalog)


class VectorIndex:
    """Tool-description embeddings with exact cosine lookup."""

    def __init__(self, ids: list[str], vectors: list[np.ndarray], embedder) -> None:
        if len(ids) != len(vectors):
            raise ValueError("ids and vectors must align")
        if len(set(ids)) != len(ids):
            raise ValueError("tool ids in an index must be unique")
        self.embedder = embedder
        self.dim = embedder.dim
        for tid, vec in zip(ids, vectors):
            if vec.shape != (self.dim,):
                raise ValueError(f"vector for {tid!r} has dimension {vec.shape}")
            if abs(float(np.linalg.norm(vec)) - 1.0) > 1e-6:
                raise ValueError(f"vector for {tid!r} is not unit-norm")
        self.ids = list(ids)
        self.vectors = {tid: vec for tid, vec in zip(ids, vectors)}

    def __len__(self) -> int:
        return len(self.ids)

    @classmethod
    def build(cls, catalog: ToolCatalog, embedder) -> "VectorIndex":
        ids = sorted(t.id for t in catalog)
        vectors = embedder.embed_batch([catalog.by_id[tid].description for tid in ids])
        return cls(ids, vectors, embedder)


def cosine_sim(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity, clamped into [-1, 1]."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"dimension mismatch: {a.shape} vs {b.shape}")
    na = float(np.linalg.norm(a))
    nb = float(np.linalg.norm(b))
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity is undefined for a zero vector")
    return max(-1.0, min(1.0, float(np.dot(a, b)) / (na * nb)))


def score_tool(sentence_vecs: list[np.ndarray], tool_vec: np.ndarray) -> float:
    """Best cosine similarity over the query's sentences."""
    if not sentence_vecs:
        raise ValueError("need at least one sentence vector")
    return max(cosine_sim(vec, tool_vec) for vec in sentence_vecs)


def _canonical(scored: list[ScoredTool]) -> list[ScoredTool]:
    # Descending score; equal scores resolve by tool id so output is total-ordered.
    return sorted(scored, key=lambda s: (-s.score, s.tool_id))


def retrieve_topk(index: VectorIndex, split: QuerySplit, k: int) -> list[ScoredTool]:
    """The k best tools for the query, scored sentence-by-sentence.

    Scoring is exact: every tool is compared against every sentence, so
    the result matches a full sort of the whole index.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    if len(index) == 0:
        raise ValueError("cannot retrieve from an empty index")
    sentence_vecs = index.embedder.embed_batch(list(split.sentences))
    scored = [
        ScoredTool(tid, score_tool(sentence_vecs, index.vectors[tid]))
        for tid in index.ids
    ]
    return _canonical(scored)[:k]


def lexical_overlap(a: str, b: str) -> float:
    """Jaccard overlap of the two texts' token sets, in [0, 1]."""
    ta, tb = set(tokenize(a)), set(tokenize(b))
    if not ta or not tb:
        return 0.0
    return len(ta & tb) / len(ta | tb)


def blended_scorer(query: str, tool: Tool, score: float) -> float:
    """Default pairwise re-ranker: half lexical overlap, half retrieval score."""
    return 0.5 * lexical_overlap(query, tool.description) + 0.5 * score


def passthrough_scorer(query: str, tool: Tool, score: float) -> float:
    return score


def rerank(
    query: str,
    candidates: list[ScoredTool],
    catalog: ToolCatalog,
    scorer=blended_scorer,
) -> list[ScoredTool]:
    """Re-score candidates pairwise against the query and re-sort.

    The candidate set is preserved exactly; only scores and order change.
    """
    rescored = []
    for cand in candidates:
        tool = catalog.by_id.get(cand.tool_id)
        if tool is None:
            raise ConfigError(f"candidate tool id {cand.tool_id!r} not in catalog")
        rescored.append(ScoredTool(cand.tool_id, scorer(query, tool, cand.score)))
    return _canonical(rescored)


def adaptive_select(ranked: list[ScoredTool], cfg: SelectionConfig) -> list[ScoredTool]:
    """Keep the leader alone when it is clearly ahead, otherwise the close pack.

    A top-1/top-2 gap of at least gap_delta collapses the selection to a
    single tool; otherwise every tool within gap_delta of the leader
    stays, capped at max_selected.
    """
    if not ranked:
        raise ValueError("cannot select from an empty ranking")
    for prev, cur in zip(ranked, ranked[1:]):
        if cur.score > prev.score:
            raise ValueError("ranking must be sorted by descending score")
    if len(ranked) == 1:
        return list(ranked)
    lead = ranked[0].score
    if lead - ranked[1].score >= cfg.gap_delta:
        return [ranked[0]]
    band = [s for s in ranked if s.score >= lead - cfg.gap_delta]
    return band[: cfg.max_selected]


def entity_augment(
    query: str,
    entity_map: EntityMap,
    selected: list[ScoredTool],
    catalog: ToolCatalog,
) -> list[ScoredTool]:
    """Append tools implied by entity mentions that selection missed.

    Appended tools take the current minimum selected score, keeping the
    list ordered. The entity pass sits outside the max_selected cap.
    """
    matched = entity_map.match(query)
    if not matched:
        return list(selected)
    floor = min((s.score for s in selected), default=0.0)
    have = {s.tool_id for s in selected}
    out = list(selected)
    for tid in matched:
        if tid not in have:
            if tid not in catalog.by_id:
                raise ConfigError(f"entity map references unknown tool id {tid!r}")
            out.append(ScoredTool(tid, floor))
            have.add(tid)
    return out


def select_tools(
    query: str,
    catalog: ToolCatalog,
    index: VectorIndex,
    cfg: SelectionConfig,
    entity_map: EntityMap | None = None,
) -> list[Tool]:
    """Full selection pipeline from raw query text to concrete tools."""
    split = split_sentences(query)
    candidates = retrieve_topk(index, split, cfg.k)
    ranked = rerank(query, candidates, catalog)
    selected = adaptive_select(ranked, cfg)
    if entity_map is not None:
        selected = entity_augment(query, entity_map, selected, catalog)
    return [catalog.by_id[s.tool_id] for s in selected]
