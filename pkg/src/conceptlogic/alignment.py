"""Concept/image alignment: cosine heatmaps, pooled scores, pseudo-labels, filters."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

LABEL_THRESHOLD = 0.65
PRUNE_FLOOR = 0.45
MAX_NAME_LENGTH = 30
CLASS_SIMILARITY_MAX = 0.85
PAIRWISE_SIMILARITY_MAX = 0.9

KEPT = "kept"
BY_LENGTH = "length"
BY_CLASS_SIMILARITY = "class_similarity"
BY_PAIRWISE = "pairwise"
BY_PROJECTION = "projection"


@dataclass
class ConceptSet:
    """Ordered concept names with their text embeddings (one row per concept)."""

    names: List[str]
    embeddings: np.ndarray
    provenance: Dict[str, str] = field(default_factory=dict)

    def __post_init__(self):
        self.names = list(self.names)
        self.embeddings = np.atleast_2d(np.asarray(self.embeddings, dtype=np.float64))
        if self.embeddings.shape[0] != len(self.names):
            raise ValueError(
                f"{len(self.names)} concept names but {self.embeddings.shape[0]} embeddings"
            )
        if any(not n for n in self.names):
            raise ValueError("concept names must be non-empty")
        if len(set(self.names)) != len(self.names):
            raise ValueError("concept names must be unique")

    def __len__(self) -> int:
        return len(self.names)

    @property
    def dim(self) -> int:
        return self.embeddings.shape[1]

    def subset(self, indices: Sequence[int]) -> "ConceptSet":
        idx = list(indices)
        return replace(
            self,
            names=[self.names[i] for i in idx],
            embeddings=self.embeddings[idx].reshape(len(idx), self.dim),
            provenance=dict(self.provenance),
        )


def _unit_rows(x: np.ndarray) -> np.ndarray:
    # rescale by the largest entry first so tiny or huge rows do not under/overflow the norm
    peak = np.abs(x).max(axis=-1, keepdims=True)
    scaled = np.divide(x, peak, out=np.zeros_like(x), where=peak > 0)
    norm = np.linalg.norm(scaled, axis=-1, keepdims=True)
    return np.divide(scaled, norm, out=np.zeros_like(x), where=norm > 0)


def cosine_matrix(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Pairwise cosine between rows of ``a`` and rows of ``b``; zero-norm rows give 0."""
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape[-1] != b.shape[-1]:
        raise ValueError(f"embedding dimension mismatch: {a.shape[-1]} vs {b.shape[-1]}")
    out = _unit_rows(a) @ _unit_rows(b).T
    return np.clip(out, -1.0, 1.0)


def compute_heatmaps(feature_map: np.ndarray, text_embeddings: np.ndarray) -> np.ndarray:
    """Cosine similarity of every grid position with every concept.

    ``feature_map`` is ``H x W x D`` and ``text_embeddings`` is ``N x D``;
    the result is ``H x W x N``.
    """
    V = np.asarray(feature_map, dtype=np.float64)
    if V.ndim != 3 or min(V.shape) < 1:
        raise ValueError(f"feature map must be H x W x D, got shape {V.shape}")
    T = np.atleast_2d(np.asarray(text_embeddings, dtype=np.float64))
    if T.shape[1] != V.shape[2]:
        raise ValueError(f"embedding dimension mismatch: feature map D={V.shape[2]}, text D={T.shape[1]}")
    h, w, d = V.shape
    return cosine_matrix(V.reshape(h * w, d), T).reshape(h, w, T.shape[0])


def compute_heatmap(feature_map: np.ndarray, text_embedding: np.ndarray) -> np.ndarray:
    return compute_heatmaps(feature_map, np.reshape(text_embedding, (1, -1)))[:, :, 0]


def pool_scores(heatmap: np.ndarray) -> float | np.ndarray:
    """Average-pool a ``P x K`` heatmap (or ``P x K x N`` stack) over the grid."""
    H = np.asarray(heatmap, dtype=np.float64)
    if H.ndim < 2 or H.shape[0] == 0 or H.shape[1] == 0:
        raise ValueError(f"cannot pool an empty heatmap of shape {H.shape}")
    pooled = H.mean(axis=(0, 1))
    return float(pooled) if pooled.ndim == 0 else pooled


def concept_scores(feature_maps: Sequence[np.ndarray], text_embeddings: np.ndarray) -> np.ndarray:
    """``M x N`` matrix of pooled similarity scores, one row per image."""
    return np.stack([pool_scores(compute_heatmaps(V, text_embeddings)) for V in feature_maps])


def threshold_labels(scores: np.ndarray, tau: float = LABEL_THRESHOLD) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    return (s >= tau).astype(np.int64)


def prune_low_similarity(scores: np.ndarray, floor: float = PRUNE_FLOOR) -> List[int]:
    """Indices of concepts whose best score over all images reaches ``floor``."""
    s = np.atleast_2d(np.asarray(scores, dtype=np.float64))
    if s.shape[0] < 1:
        raise ValueError("need at least one image")
    return [int(i) for i in np.flatnonzero(s.max(axis=0) >= floor)]


@dataclass
class FilterConfig:
    max_length: int = MAX_NAME_LENGTH
    class_similarity: float = CLASS_SIMILARITY_MAX
    pairwise_similarity: float = PAIRWISE_SIMILARITY_MAX
    prune_floor: float = PRUNE_FLOOR
    use_length: bool = True
    use_class_similarity: bool = True
    use_pairwise: bool = True
    use_projection: bool = True


def filter_concepts(
    concepts: ConceptSet,
    class_embeddings: Optional[np.ndarray] = None,
    scores: Optional[np.ndarray] = None,
    config: Optional[FilterConfig] = None,
) -> ConceptSet:
    """Run the length, class-similarity, pairwise and projection filters in order.

    ``scores`` holds one column per input concept. Each input name is tagged
    in the returned provenance with ``"kept"`` or the filter that removed it.
    Skipped filters (disabled, or with no data to work on) never remove
    anything.
    """
    cfg = config or FilterConfig()
    provenance = {name: KEPT for name in concepts.names}
    alive = list(range(len(concepts)))

    if cfg.use_length:
        for i in list(alive):
            if len(concepts.names[i]) > cfg.max_length:
                alive.remove(i)
                provenance[concepts.names[i]] = BY_LENGTH

    if cfg.use_class_similarity and class_embeddings is not None and len(alive):
        sims = cosine_matrix(concepts.embeddings[alive], class_embeddings)
        for i, row in zip(list(alive), sims):
            if np.any(row >= cfg.class_similarity):
                alive.remove(i)
                provenance[concepts.names[i]] = BY_CLASS_SIMILARITY

    if cfg.use_pairwise and alive:
        kept: List[int] = []
        for i in alive:
            if kept and np.any(
                cosine_matrix(concepts.embeddings[[i]], concepts.embeddings[kept])[0]
                >= cfg.pairwise_similarity
            ):
                provenance[concepts.names[i]] = BY_PAIRWISE
            else:
                kept.append(i)
        alive = kept

    if cfg.use_projection and scores is not None and alive:
        s = np.atleast_2d(np.asarray(scores, dtype=np.float64))
        if s.shape[1] != len(concepts):
            raise ValueError(f"scores have {s.shape[1]} columns for {len(concepts)} concepts")
        survivors = set(prune_low_similarity(s[:, alive], cfg.prune_floor))
        for pos, i in enumerate(list(alive)):
            if pos not in survivors:
                provenance[concepts.names[i]] = BY_PROJECTION
        alive = [i for pos, i in enumerate(alive) if pos in survivors]

    out = concepts.subset(alive)
    out.provenance = provenance
    return out


def heatmap_to_pgm(heatmap: np.ndarray) -> bytes:
    """8-bit binary PGM, min-max normalized; a constant map renders black."""
    H = np.asarray(heatmap, dtype=np.float64)
    lo, hi = float(H.min()), float(H.max())
    span = hi - lo
    norm = (H - lo) / span if span > 0 else np.zeros_like(H)
    pixels = np.rint(norm * 255.0).astype(np.uint8)
    rows, cols = pixels.shape
    return f"P5\n{cols} {rows}\n255\n".encode("ascii") + pixels.tobytes()
