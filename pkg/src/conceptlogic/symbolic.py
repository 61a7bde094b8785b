"""Per-class polarity/relevance networks, min-max rule aggregation, rule extraction."""

from __future__ import annotations

from collections import Counter
from typing import Dict, List, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .fuzzy import ConjunctiveRule, Literal, RuleSet, booleanize, rule_error_rate

LITERAL = "literal"
FILTERED = "filtered"
SEMANTICS = (LITERAL, FILTERED)


def init_indicator_nets(embed_dim: int, num_classes: int, hidden: int = 32, seed=0) -> Dict[str, np.ndarray]:
    """One polarity net (``phi``) and one relevance net (``psi``) per class."""
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params = {}
    for j in range(num_classes):
        for kind in ("phi", "psi"):
            p = f"{kind}.{j}"
            params[p + ".W1"] = ad.glorot_uniform(rng, embed_dim, hidden)
            params[p + ".b1"] = np.zeros(hidden)
            params[p + ".W2"] = ad.glorot_uniform(rng, hidden, 1)
            params[p + ".b2"] = np.zeros(1)
    return params


def _mlp(E: ad.Node, nodes: Dict[str, ad.Node], prefix: str) -> ad.Node:
    if E.shape[-1] != nodes[prefix + ".W1"].shape[0]:
        raise ad.ShapeError(prefix, E.shape, nodes[prefix + ".W1"].shape, "embedding width")
    h = ad.relu(ad.add(ad.matmul(E, nodes[prefix + ".W1"]), nodes[prefix + ".b1"]))
    out = ad.sigmoid(ad.add(ad.matmul(h, nodes[prefix + ".W2"]), nodes[prefix + ".b2"]))
    return ad.reshape(out, E.shape[:-1] + (1,))


def indicators_graph(E: ad.Node, nodes: Dict[str, ad.Node], num_classes: int) -> Tuple[ad.Node, ad.Node]:
    """Polarity and relevance indicators, each ``B x N x C``, from ``B x N x m`` embeddings."""
    polarity = ad.concat([_mlp(E, nodes, f"phi.{j}") for j in range(num_classes)], axis=-1)
    relevance = ad.concat([_mlp(E, nodes, f"psi.{j}") for j in range(num_classes)], axis=-1)
    return polarity, relevance


def aggregate_graph(polarity: ad.Node, relevance: ad.Node, semantics: str = LITERAL) -> ad.Node:
    """Class truth degrees ``min_i max(1 - a_i, b_i)`` reduced over the concept axis.

    ``literal`` takes ``a`` = polarity and ``b`` = relevance; ``filtered`` swaps
    them so that irrelevant concepts are the ones forced to 1.
    """
    if semantics == LITERAL:
        terms = ad.maximum(ad.neg_affine(polarity), relevance)
    elif semantics == FILTERED:
        terms = ad.maximum(ad.neg_affine(relevance), polarity)
    else:
        raise ValueError(f"unknown semantics {semantics!r}")
    return ad.reduce_min(terms, axis=-2)


def compute_indicators(embeddings: np.ndarray, params: Dict[str, np.ndarray]) -> Tuple[np.ndarray, np.ndarray]:
    E = np.asarray(embeddings, dtype=np.float64)
    num_classes = sum(1 for k in params if k.startswith("phi.") and k.endswith(".W1"))
    nodes = {k: ad.leaf(v, k) for k, v in params.items() if k.startswith(("phi.", "psi."))}
    polarity, relevance = indicators_graph(ad.leaf(E), nodes, num_classes)
    return polarity.value, relevance.value


def aggregate_eq1(polarity: np.ndarray, relevance: np.ndarray, semantics: str = LITERAL) -> np.ndarray:
    """Numeric version of :func:`aggregate_graph` on ``... x N x C`` arrays."""
    Io = np.asarray(polarity, dtype=np.float64)
    Ir = np.asarray(relevance, dtype=np.float64)
    if Io.shape != Ir.shape or Io.ndim < 2 or Io.shape[-2] < 1:
        raise ValueError(f"indicator shapes {Io.shape} and {Ir.shape} are not matching N x C arrays")
    if semantics == LITERAL:
        terms = np.maximum(1.0 - Io, Ir)
    elif semantics == FILTERED:
        terms = np.maximum(1.0 - Ir, Io)
    else:
        raise ValueError(f"unknown semantics {semantics!r}")
    return terms.min(axis=-2)


def extract_local_rule(polarity: np.ndarray, relevance: np.ndarray, class_index: int, tau: float = 0.5) -> ConjunctiveRule:
    """Rule for one sample: relevant concepts become literals, signed by polarity.

    ``polarity`` and ``relevance`` are the ``N x C`` indicator matrices of a
    single sample.
    """
    Io = np.asarray(polarity)
    Ir = np.asarray(relevance)
    if not 0 <= class_index < Io.shape[1]:
        raise IndexError(f"class {class_index} out of range for {Io.shape[1]} classes")
    lits = tuple(
        Literal(i, bool(booleanize(Io[i, class_index], tau)))
        for i in range(Io.shape[0])
        if booleanize(Ir[i, class_index], tau)
    )
    return ConjunctiveRule(class_index, lits)


def booleanized_predictions(polarity: np.ndarray, relevance: np.ndarray, semantics: str = LITERAL, tau: float = 0.5) -> np.ndarray:
    """Classical evaluation of the rule formula on thresholded indicators."""
    return aggregate_eq1(booleanize(polarity, tau), booleanize(relevance, tau), semantics).astype(np.int64)


def aggregate_global_rules(
    rules: Sequence[ConjunctiveRule],
    boolean_preds: np.ndarray,
    fuzzy_preds: np.ndarray,
    num_classes: int,
) -> RuleSet:
    """Count identical per-sample rules per class and attach the fidelity error.

    ``boolean_preds`` and ``fuzzy_preds`` are ``B x C`` bit matrices; a sample
    counts as a disagreement when any class bit differs.
    """
    if not rules:
        raise ValueError("need at least one sample rule")
    counts = Counter(r.key for r in rules)
    grouped: Dict[int, List[ConjunctiveRule]] = {}
    for (j, lits), n in counts.items():
        grouped.setdefault(j, []).append(ConjunctiveRule(j, tuple(Literal(i, s) for i, s in lits), n))
    for j in grouped:
        grouped[j].sort(key=lambda r: (-r.support, r.key))
    a = np.asarray(boolean_preds).reshape(len(rules), -1)
    b = np.asarray(fuzzy_preds).reshape(len(rules), -1)
    mean, sem = rule_error_rate(np.zeros(len(rules), dtype=int), np.any(a != b, axis=1))
    return RuleSet(grouped, mean, sem, num_classes)
