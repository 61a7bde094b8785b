"""Concept encoder: feature vector -> concept probabilities and mixed concept embeddings.

Each concept owns a positive and a negative embedding head. A scoring head
shared by all concepts reads both embeddings and produces the concept
probability ``p``, which gates a convex mixture ``p * e_pos + (1 - p) * e_neg``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from . import autodiff as ad


def _pos(i: int) -> str:
    return f"enc.pos.{i}"


def _neg(i: int) -> str:
    return f"enc.neg.{i}"


def init_encoder(feature_dim: int, num_concepts: int, embed_dim: int = 16, seed=0) -> Dict[str, np.ndarray]:
    if min(feature_dim, num_concepts, embed_dim) < 1:
        raise ValueError("encoder dimensions must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    params: Dict[str, np.ndarray] = {}
    for i in range(num_concepts):
        for prefix in (_pos(i), _neg(i)):
            params[prefix + ".W"] = ad.glorot_uniform(rng, feature_dim, embed_dim)
            params[prefix + ".b"] = np.zeros(embed_dim)
    params["enc.score.W"] = ad.glorot_uniform(rng, 2 * embed_dim, 1)
    params["enc.score.b"] = np.zeros(1)
    return params


def encoder_param_count(feature_dim: int, num_concepts: int, embed_dim: int) -> int:
    per_head = feature_dim * embed_dim + embed_dim
    return num_concepts * 2 * per_head + 2 * embed_dim + 1


def encoder_dims(params: Dict[str, np.ndarray]) -> tuple[int, int, int]:
    """``(feature_dim, num_concepts, embed_dim)`` read off the parameter shapes."""
    feature_dim, embed_dim = params["enc.pos.0.W"].shape
    n = sum(1 for k in params if k.startswith("enc.pos.") and k.endswith(".W"))
    return feature_dim, n, embed_dim


@dataclass
class EncoderGraph:
    probs: ad.Node  # B x N
    embeddings: ad.Node  # B x N x m
    context: ad.Node  # B x (N*m)


def encode_graph(x: ad.Node, nodes: Dict[str, ad.Node], num_concepts: int) -> EncoderGraph:
    """Build the encoder on ``x`` (``B x feature_dim``) from parameter nodes."""
    feature_dim = nodes["enc.pos.0.W"].shape[0]
    if x.value.ndim != 2 or x.shape[1] != feature_dim:
        raise ad.ShapeError("encode", x.shape, nodes["enc.pos.0.W"].shape, "feature length")
    batch = x.shape[0]
    W_s, b_s = nodes["enc.score.W"], nodes["enc.score.b"]
    probs, mixed = [], []
    for i in range(num_concepts):
        e_pos = ad.relu(ad.add(ad.matmul(x, nodes[_pos(i) + ".W"]), nodes[_pos(i) + ".b"]))
        e_neg = ad.relu(ad.add(ad.matmul(x, nodes[_neg(i) + ".W"]), nodes[_neg(i) + ".b"]))
        p = ad.sigmoid(ad.add(ad.matmul(ad.concat([e_pos, e_neg], axis=1), W_s), b_s))  # B x 1
        mix = ad.add(ad.mul(p, e_pos), ad.mul(ad.neg_affine(p), e_neg))
        probs.append(p)
        mixed.append(mix)
    m = mixed[0].shape[1]
    embeddings = ad.concat([ad.reshape(e, (batch, 1, m)) for e in mixed], axis=1)
    return EncoderGraph(
        probs=ad.concat(probs, axis=1),
        embeddings=embeddings,
        context=ad.concat(mixed, axis=1),
    )


@dataclass
class EncoderOutput:
    probs: np.ndarray
    embeddings: np.ndarray
    context: np.ndarray


def encode(features: np.ndarray, params: Dict[str, np.ndarray]) -> EncoderOutput:
    """Numeric forward pass; accepts a single feature vector or a batch."""
    f = np.asarray(features, dtype=np.float64)
    single = f.ndim == 1
    x = ad.leaf(f.reshape(1, -1) if single else f)
    nodes = {k: ad.leaf(v, k) for k, v in params.items()}
    out = encode_graph(x, nodes, encoder_dims(params)[1])
    probs, emb, ctx = out.probs.value, out.embeddings.value, out.context.value
    if single:
        return EncoderOutput(probs[0], emb[0], ctx[0])
    return EncoderOutput(probs, emb, ctx)
