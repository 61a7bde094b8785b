"""Full model: encoder, neural-symbolic head, fused classifier, loss and loops."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Dict, List, Optional

import numpy as np

from . import autodiff as ad
from .encoder import encode_graph, encoder_param_count, init_encoder
from .formats import Dataset, load_tensor, read_json, save_tensor, write_json
from .fuzzy import RuleSet, booleanize
from .metrics import MetricsBundle, multiclass_metrics
from .symbolic import (
    LITERAL,
    SEMANTICS,
    aggregate_global_rules,
    aggregate_graph,
    booleanized_predictions,
    extract_local_rule,
    indicators_graph,
    init_indicator_nets,
)

logger = logging.getLogger(__name__)

CHECKPOINT_FILE = "checkpoint.json"


class TrainingDivergedError(RuntimeError):
    pass


@dataclass
class Hyperparams:
    lambda_concept: float = 0.1
    lambda_neural: float = 0.1
    lr: float = 5e-5
    epochs: int = 100
    batch_size: int = 32
    seed: int = 0
    semantics: str = LITERAL
    hidden: int = 32
    embed_dim: int = 16

    def __post_init__(self):
        if self.lambda_concept < 0 or self.lambda_neural < 0:
            raise ValueError("loss weights must be non-negative")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch size must be >= 1 and epochs >= 0")
        if self.semantics not in SEMANTICS:
            raise ValueError(f"semantics must be one of {SEMANTICS}")


@dataclass
class ModelConfig:
    feature_dim: int
    num_concepts: int
    num_classes: int
    embed_dim: int = 16
    hidden: int = 32
    semantics: str = LITERAL


@dataclass
class Model:
    config: ModelConfig
    params: Dict[str, np.ndarray]
    adam: ad.AdamState = field(default_factory=ad.AdamState)

    def param_count(self) -> int:
        return int(sum(p.size for p in self.params.values()))

    def copy(self) -> "Model":
        adam = ad.AdamState(
            self.adam.lr, self.adam.beta1, self.adam.beta2, self.adam.eps, self.adam.step,
            {k: v.copy() for k, v in self.adam.m.items()},
            {k: v.copy() for k, v in self.adam.v.items()},
        )
        return Model(ModelConfig(**asdict(self.config)), {k: v.copy() for k, v in self.params.items()}, adam)


def init_model(config: ModelConfig, seed: int = 0) -> Model:
    """Glorot-initialized parameters; identical for identical ``(config, seed)``."""
    rng = np.random.default_rng(seed)
    params = init_encoder(config.feature_dim, config.num_concepts, config.embed_dim, rng)
    params.update(init_indicator_nets(config.embed_dim, config.num_classes, config.hidden, rng))
    fused_in = config.feature_dim + config.num_concepts * config.embed_dim
    params["fuse.W"] = ad.glorot_uniform(rng, fused_in, config.num_classes)
    params["fuse.b"] = np.zeros(config.num_classes)
    return Model(config, params)


def parameter_report(config: ModelConfig) -> Dict[str, int]:
    enc = encoder_param_count(config.feature_dim, config.num_concepts, config.embed_dim)
    per_net = config.embed_dim * config.hidden + config.hidden + config.hidden + 1
    fused = (config.feature_dim + config.num_concepts * config.embed_dim + 1) * config.num_classes
    indicators = 2 * config.num_classes * per_net
    return {"encoder": enc, "indicator_nets": indicators, "fusion_head": fused, "total": enc + indicators + fused}


@dataclass
class ForwardGraph:
    logits: ad.Node  # B x C
    neural: ad.Node  # B x C
    concept_probs: ad.Node  # B x N
    polarity: ad.Node  # B x N x C
    relevance: ad.Node  # B x N x C
    context: ad.Node  # B x N*m


def forward_graph(x: ad.Node, nodes: Dict[str, ad.Node], config: ModelConfig) -> ForwardGraph:
    enc = encode_graph(x, nodes, config.num_concepts)
    polarity, relevance = indicators_graph(enc.embeddings, nodes, config.num_classes)
    neural = aggregate_graph(polarity, relevance, config.semantics)
    fused_in = ad.concat([x, enc.context], axis=1)
    if fused_in.shape[1] != nodes["fuse.W"].shape[0]:
        raise ad.ShapeError("fuse", fused_in.shape, nodes["fuse.W"].shape)
    logits = ad.add(ad.matmul(fused_in, nodes["fuse.W"]), nodes["fuse.b"])
    return ForwardGraph(logits, neural, enc.probs, polarity, relevance, enc.context)


@dataclass
class ForwardOutput:
    logits: np.ndarray
    neural: np.ndarray
    concept_probs: np.ndarray
    polarity: np.ndarray
    relevance: np.ndarray
    context: np.ndarray


def forward_full(features: np.ndarray, model: Model) -> ForwardOutput:
    x = np.atleast_2d(np.asarray(features, dtype=np.float64))
    if x.shape[1] != model.config.feature_dim:
        raise ad.ShapeError("forward", x.shape, (model.config.feature_dim,), "feature length")
    nodes = {k: ad.leaf(v, k) for k, v in model.params.items()}
    g = forward_graph(ad.leaf(x), nodes, model.config)
    return ForwardOutput(
        g.logits.value, g.neural.value, g.concept_probs.value, g.polarity.value, g.relevance.value, g.context.value
    )


def loss_graph(g: ForwardGraph, labels, concept_labels, hyper: Hyperparams) -> tuple[ad.Node, Dict[str, ad.Node]]:
    """Task CE + weighted concept BCE + weighted neural-head loss.

    With two classes the neural head is scored by BCE against one-hot
    targets; with more it uses cross-entropy over its outputs renormalized
    to sum to one.
    """
    y = np.asarray(labels, dtype=np.int64)
    neural = g.neural.value
    if np.any(neural < 0.0) or np.any(neural > 1.0) or not np.all(np.isfinite(neural)):
        raise ValueError("neural-head outputs left [0, 1]")
    num_classes = g.neural.shape[1]
    task = ad.ce(g.logits, y)
    concept = ad.bce(g.concept_probs, concept_labels)
    if num_classes == 2:
        neural_loss = ad.bce(g.neural, np.eye(num_classes)[y])
    else:
        neural_loss = ad.ce_prob(g.neural, y)
    total = ad.add(
        ad.add(task, ad.scale(concept, hyper.lambda_concept)), ad.scale(neural_loss, hyper.lambda_neural)
    )
    return total, {"task": task, "concept": concept, "neural": neural_loss}


def total_loss(outputs: ForwardOutput, batch: Dataset, hyper: Hyperparams) -> Dict[str, float]:
    """Loss breakdown for already-computed outputs (no gradients)."""
    g = ForwardGraph(*(ad.leaf(v) for v in (
        outputs.logits, outputs.neural, outputs.concept_probs, outputs.polarity, outputs.relevance, outputs.context
    )))
    total, parts = loss_graph(g, batch.labels, batch.concept_labels, hyper)
    return {"task": float(parts["task"].value), "concept": float(parts["concept"].value),
            "neural": float(parts["neural"].value), "total": float(total.value)}


def _check_dataset(dataset: Dataset, config: ModelConfig) -> None:
    if len(dataset) == 0:
        raise ValueError("empty dataset")
    if dataset.concept_labels is None:
        raise ValueError("training needs concept labels")
    if dataset.features.shape[1] != config.feature_dim or dataset.concept_labels.shape[1] != config.num_concepts:
        raise ad.ShapeError(
            "dataset", dataset.features.shape, (config.feature_dim, config.num_concepts), "feature/concept dims"
        )
    if dataset.labels.max() >= config.num_classes or dataset.labels.min() < 0:
        raise ValueError("labels out of range for the configured number of classes")


def loss_and_grads(model: Model, batch: Dataset, hyper: Hyperparams):
    nodes = {k: ad.leaf(v, k) for k, v in model.params.items()}
    g = forward_graph(ad.leaf(batch.features), nodes, model.config)
    total, parts = loss_graph(g, batch.labels, batch.concept_labels, hyper)
    grads = ad.backward(total)
    return float(total.value), {k: float(v.value) for k, v in parts.items()}, grads


def config_for(dataset: Dataset, hyper: Hyperparams) -> ModelConfig:
    return ModelConfig(
        feature_dim=dataset.features.shape[1],
        num_concepts=dataset.num_concepts,
        num_classes=max(dataset.num_classes, int(dataset.labels.max()) + 1),
        embed_dim=hyper.embed_dim,
        hidden=hyper.hidden,
        semantics=hyper.semantics,
    )


def train(dataset: Dataset, hyper: Hyperparams, model: Optional[Model] = None):
    """Minibatch Adam training; returns ``(model, curve)``.

    ``curve`` holds one row per epoch with the full-dataset loss components
    measured after that epoch's updates.
    """
    model = model.copy() if model is not None else init_model(config_for(dataset, hyper), hyper.seed)
    _check_dataset(dataset, model.config)
    model.adam.lr = hyper.lr
    shuffle_rng = np.random.default_rng([hyper.seed, 1])
    n = len(dataset)
    curve: List[Dict[str, float]] = []
    for epoch in range(1, hyper.epochs + 1):
        order = shuffle_rng.permutation(n)
        for b, start in enumerate(range(0, n, hyper.batch_size)):
            batch = dataset.subset(order[start:start + hyper.batch_size])
            loss, _, grads = loss_and_grads(model, batch, hyper)
            if not math.isfinite(loss):
                raise TrainingDivergedError(f"non-finite loss {loss} at epoch {epoch}, batch {b}")
            ad.adam_step(model.params, grads, model.adam)
        row = {"epoch": epoch, **total_loss(forward_full(dataset.features, model), dataset, hyper)}
        if not math.isfinite(row["total"]):
            raise TrainingDivergedError(f"non-finite loss at the end of epoch {epoch}")
        curve.append(row)
        logger.debug("epoch %d total %.6f", epoch, row["total"])
    return model, curve


def predict_rules(out: ForwardOutput, tau: float = 0.5):
    """Per-sample local rules for the class the neural head predicts."""
    predicted = np.argmax(out.neural, axis=1)
    return [extract_local_rule(out.polarity[i], out.relevance[i], int(predicted[i]), tau) for i in range(len(predicted))]


def ruleset_for(out: ForwardOutput, semantics: str, tau: float = 0.5) -> RuleSet:
    rules = predict_rules(out, tau)
    bool_preds = booleanized_predictions(out.polarity, out.relevance, semantics, tau)
    return aggregate_global_rules(rules, bool_preds, booleanize(out.neural, tau), out.neural.shape[1])


def softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


@dataclass
class Evaluation:
    fused: MetricsBundle
    neural: MetricsBundle
    rules: RuleSet
    concept_accuracy: Optional[float] = None

    def to_json(self, concept_names) -> dict:
        return {
            "fused": self.fused.to_json(),
            "neural": self.neural.to_json(),
            "concept_accuracy": self.concept_accuracy,
            "rule_error_rate": {"mean": self.rules.error_mean, "sem": self.rules.error_sem},
            "ruleset": self.rules.to_json(concept_names),
        }


def evaluate(dataset: Dataset, model: Model) -> Evaluation:
    out = forward_full(dataset.features, model)
    C = model.config.num_classes
    fused = multiclass_metrics(out.logits.argmax(axis=1), dataset.labels, softmax(out.logits), C)
    neural = multiclass_metrics(out.neural.argmax(axis=1), dataset.labels, out.neural, C)
    concept_acc = None
    if dataset.concept_labels is not None:
        concept_acc = float(np.mean(booleanize(out.concept_probs) == dataset.concept_labels))
    return Evaluation(fused, neural, ruleset_for(out, model.config.semantics), concept_acc)


# --- checkpoints ------------------------------------------------------------------


def _tensor_name(name: str) -> str:
    return name.replace(".", "_") + ".micn"


def save_checkpoint(directory, model: Model) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    entries = {}
    for name, value in model.params.items():
        entry = {"file": _tensor_name(name), "shape": list(value.shape)}
        save_tensor(d / entry["file"], value)
        if name in model.adam.m:
            entry["adam_m"] = "adam_m_" + entry["file"]
            entry["adam_v"] = "adam_v_" + entry["file"]
            save_tensor(d / entry["adam_m"], model.adam.m[name])
            save_tensor(d / entry["adam_v"], model.adam.v[name])
        entries[name] = entry
    a = model.adam
    doc = {
        "config": asdict(model.config),
        "adam": {"lr": a.lr, "beta1": a.beta1, "beta2": a.beta2, "eps": a.eps, "step": a.step},
        "params": entries,
    }
    write_json(d / CHECKPOINT_FILE, doc)
    return d / CHECKPOINT_FILE


def load_checkpoint(directory) -> Model:
    d = Path(directory)
    doc = read_json(d / CHECKPOINT_FILE)
    config = ModelConfig(**doc["config"])
    adam = ad.AdamState(**doc["adam"])
    params = {}
    for name, entry in doc["params"].items():
        value = load_tensor(d / entry["file"])
        if list(value.shape) != entry["shape"]:
            raise ValueError(f"checkpoint tensor {name} has shape {value.shape}, manifest says {entry['shape']}")
        params[name] = value
        if "adam_m" in entry:
            adam.m[name] = load_tensor(d / entry["adam_m"])
            adam.v[name] = load_tensor(d / entry["adam_v"])
    return Model(config, params, adam)
