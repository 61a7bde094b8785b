"""Planted-rule synthetic datasets with known ground-truth concept rules."""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .alignment import ConceptSet
from .formats import Dataset
from .fuzzy import ConjunctiveRule, Literal, eval_rule


def default_rules() -> List[ConjunctiveRule]:
    return [
        ConjunctiveRule(0, (Literal(0, False), Literal(1, True))),
        ConjunctiveRule(1, (Literal(0, True), Literal(1, False))),
    ]


@dataclass
class SyntheticSpec:
    num_concepts: int = 4
    num_classes: int = 2
    rules: List[ConjunctiveRule] = field(default_factory=default_rules)
    samples_per_class: int = 200
    feature_dim: int = 16
    noise: float = 0.05
    seed: int = 0
    map_size: int = 0  # side of the square feature maps; 0 disables them
    text_dim: int = 16


def check_rules(spec: SyntheticSpec) -> None:
    if len(spec.rules) != spec.num_classes:
        raise ValueError(f"need one planted rule per class, got {len(spec.rules)} for {spec.num_classes}")
    if sorted(r.class_index for r in spec.rules) != list(range(spec.num_classes)):
        raise ValueError("planted rules must cover each class exactly once")
    for r in spec.rules:
        if any(lit.index >= spec.num_concepts for lit in r.literals):
            raise ValueError(f"rule for class {r.class_index} references an unknown concept")
    # exhaustive over the 2^N assignments: no assignment may satisfy two rules
    for bits in itertools.product((0, 1), repeat=spec.num_concepts):
        hits = [r.class_index for r in spec.rules if eval_rule(r, bits) == 1.0]
        if len(hits) > 1:
            raise ValueError(f"planted rules are not mutually exclusive: {bits} satisfies classes {hits}")


def planted_label(rules: Sequence[ConjunctiveRule], bits) -> Optional[int]:
    for r in rules:
        if eval_rule(r, bits) == 1.0:
            return r.class_index
    return None


def concept_text_embeddings(num_concepts: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Near-orthogonal unit vectors (orthonormal when ``dim >= num_concepts``)."""
    raw = rng.normal(size=(max(dim, num_concepts), max(dim, num_concepts)))
    q, _ = np.linalg.qr(raw)
    return q[:num_concepts, :dim] / np.linalg.norm(q[:num_concepts, :dim], axis=1, keepdims=True)


def gen_synthetic(spec: SyntheticSpec):
    """Returns ``(dataset, concept_set, planted_rules)``.

    Concept bits for a class-``j`` sample fix the literals of rule ``j`` and
    draw the other concepts uniformly. Features are a seeded random affine
    image of the bits plus Gaussian noise.
    """
    check_rules(spec)
    rng = np.random.default_rng(spec.seed)
    N, F = spec.num_concepts, spec.feature_dim
    mixing = rng.normal(size=(N, F))
    offset = rng.normal(scale=0.1, size=F)
    bits, labels = [], []
    for rule in sorted(spec.rules, key=lambda r: r.class_index):
        fixed = {lit.index: int(lit.positive) for lit in rule.literals}
        for _ in range(spec.samples_per_class):
            row = rng.integers(0, 2, size=N)
            for i, v in fixed.items():
                row[i] = v
            bits.append(row)
            labels.append(rule.class_index)
    C = np.array(bits, dtype=np.int64).reshape(-1, N)
    y = np.array(labels, dtype=np.int64)
    X = C @ mixing + offset + spec.noise * rng.normal(size=(len(y), F))

    text = concept_text_embeddings(N, spec.text_dim, rng)
    fmaps = None
    if spec.map_size > 0:
        s = spec.map_size
        # each grid cell mixes the text vectors of the concepts present, plus noise
        cells = np.einsum("mn,nd->md", C.astype(np.float64), text)[:, None, None, :]
        fmaps = np.broadcast_to(cells, (len(y), s, s, spec.text_dim)).copy()
        fmaps += spec.noise * rng.normal(size=fmaps.shape)

    names = [f"c_{i}" for i in range(N)]
    dataset = Dataset(
        features=X,
        labels=y,
        concept_labels=C,
        concept_names=names,
        class_names=[f"y_{j}" for j in range(spec.num_classes)],
        feature_maps=fmaps,
    )
    return dataset, ConceptSet(names, text), sorted(spec.rules, key=lambda r: r.class_index)
