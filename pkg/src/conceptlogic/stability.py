"""Random L-infinity perturbation stability of predictions, indicators and rules.

Perturbations are drawn in feature space, not pixel space.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np

from .symbolic import extract_local_rule
from .training import Model, forward_full


@dataclass
class PerturbationConfig:
    epsilon: float = 0.05
    draws: int = 8
    seed: int = 0

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")
        if self.draws < 1:
            raise ValueError("need at least one draw")


@dataclass
class StabilityReport:
    epsilon: float
    draws: int
    seed: int
    class_flip_fraction: float
    max_indicator_change: float
    rule_change_fraction: float

    def to_json(self) -> dict:
        return asdict(self)


def _rule_keys(out, i):
    C = out.polarity.shape[2]
    return tuple(extract_local_rule(out.polarity[i], out.relevance[i], j).key for j in range(C))


def perturb_stability(model: Model, features: np.ndarray, cfg: PerturbationConfig) -> StabilityReport:
    """Fractions of samples whose class or rules change under any of ``cfg.draws`` draws.

    Draws are ``epsilon * u`` with ``u`` uniform in ``[-1, 1]``, so reports at
    different radii with the same seed share their directions.
    """
    X = np.atleast_2d(np.asarray(features, dtype=np.float64))
    rng = np.random.default_rng(cfg.seed)
    base = forward_full(X, model)
    base_class = base.logits.argmax(axis=1)
    base_rules = [_rule_keys(base, i) for i in range(len(X))]
    flipped = np.zeros(len(X), dtype=bool)
    rule_changed = np.zeros(len(X), dtype=bool)
    max_change = 0.0
    for _ in range(cfg.draws):
        delta = cfg.epsilon * rng.uniform(-1.0, 1.0, size=X.shape)
        out = forward_full(X + delta, model)
        flipped |= out.logits.argmax(axis=1) != base_class
        change = np.maximum(np.abs(out.polarity - base.polarity), np.abs(out.relevance - base.relevance))
        max_change = max(max_change, float(change.max()))
        rule_changed |= np.array([_rule_keys(out, i) != base_rules[i] for i in range(len(X))])
    return StabilityReport(
        epsilon=cfg.epsilon,
        draws=cfg.draws,
        seed=cfg.seed,
        class_flip_fraction=float(flipped.mean()),
        max_indicator_change=max_change,
        rule_change_fraction=float(rule_changed.mean()),
    )
