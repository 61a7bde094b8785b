"""Fuzzy truth values, conjunctive rules and rule fidelity."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence, Tuple

import numpy as np

GODEL = "godel"
PRODUCT = "product"


class TruthValueError(ValueError):
    pass


def check_truth(v: float) -> float:
    v = float(v)
    if not (0.0 <= v <= 1.0):
        raise TruthValueError(f"truth value {v!r} outside [0, 1]")
    return v


def neg(a: float) -> float:
    return 1.0 - check_truth(a)


def conj(a: float, b: float, semantics: str = GODEL) -> float:
    a, b = check_truth(a), check_truth(b)
    if semantics == GODEL:
        return min(a, b)
    if semantics == PRODUCT:
        return a * b
    raise ValueError(f"unknown semantics {semantics!r}")


def disj(a: float, b: float, semantics: str = GODEL) -> float:
    a, b = check_truth(a), check_truth(b)
    if semantics == GODEL:
        return max(a, b)
    if semantics == PRODUCT:
        return a + b - a * b
    raise ValueError(f"unknown semantics {semantics!r}")


def fuzzy_ops(a: float, b: float, semantics: str = GODEL) -> Dict[str, float]:
    return {"neg": neg(a), "and": conj(a, b, semantics), "or": disj(a, b, semantics)}


def booleanize(v, threshold: float = 0.5):
    """1 where ``v >= threshold``; works on scalars and arrays."""
    if np.ndim(v) == 0:
        return int(float(v) >= threshold)
    return (np.asarray(v) >= threshold).astype(np.int64)


@dataclass(frozen=True, order=True)
class Literal:
    index: int
    positive: bool = True


@dataclass(frozen=True)
class ConjunctiveRule:
    class_index: int
    literals: Tuple[Literal, ...] = ()
    support: int = 0

    def __post_init__(self):
        lits = tuple(sorted(self.literals, key=lambda lit: lit.index))
        indices = [lit.index for lit in lits]
        if len(set(indices)) != len(indices):
            raise ValueError(f"duplicate concept index in rule literals {indices}")
        if any(i < 0 for i in indices):
            raise ValueError("negative concept index")
        if self.support < 0:
            raise ValueError("support must be non-negative")
        object.__setattr__(self, "literals", lits)

    @property
    def key(self) -> Tuple[int, Tuple[Tuple[int, bool], ...]]:
        """Identity of the rule ignoring its support count."""
        return self.class_index, tuple((lit.index, lit.positive) for lit in self.literals)

    def with_support(self, support: int) -> "ConjunctiveRule":
        return ConjunctiveRule(self.class_index, self.literals, support)


def eval_rule(rule: ConjunctiveRule, truths: Sequence[float], semantics: str = GODEL) -> float:
    """Fuzzy truth of the conjunction of ``rule``'s literals; an empty rule is 1."""
    truths = [check_truth(t) for t in truths]
    value = 1.0
    for lit in rule.literals:
        if lit.index >= len(truths):
            raise IndexError(f"literal index {lit.index} out of range for {len(truths)} concepts")
        t = truths[lit.index]
        value = conj(value, t if lit.positive else 1.0 - t, semantics)
    return value


def rule_error_rate(boolean_preds, fuzzy_preds) -> Tuple[float, float]:
    """Disagreement rate between two bit vectors as ``(mean, standard error)``.

    The standard error uses the sample standard deviation (ddof=1); a single
    observation has standard error 0.
    """
    a = np.asarray(boolean_preds).astype(np.int64).reshape(-1)
    b = np.asarray(fuzzy_preds).astype(np.int64).reshape(-1)
    if a.size == 0 or b.size == 0:
        raise ValueError("rule_error_rate needs at least one prediction")
    if a.shape != b.shape:
        raise ValueError(f"length mismatch: {a.size} vs {b.size}")
    miss = (a != b).astype(np.float64)
    n = miss.size
    sem = float(miss.std(ddof=1) / math.sqrt(n)) if n > 1 else 0.0
    return float(miss.mean()), sem


def format_rule(rule: ConjunctiveRule, names: Sequence[str]) -> str:
    head = f"y_{rule.class_index} ⇐ "
    if not rule.literals:
        return head + "⊤"
    parts = []
    for lit in rule.literals:
        if lit.index >= len(names):
            raise IndexError(f"literal index {lit.index} out of range for {len(names)} concepts")
        parts.append(names[lit.index] if lit.positive else "¬" + names[lit.index])
    return head + " ∧ ".join(parts)


@dataclass
class RuleSet:
    """Rules grouped by class, each list sorted by descending support."""

    rules: Dict[int, List[ConjunctiveRule]] = field(default_factory=dict)
    error_mean: float = 0.0
    error_sem: float = 0.0
    num_classes: int = 0

    def __post_init__(self):
        for j in self.rules:
            if self.num_classes and not (0 <= j < self.num_classes):
                raise ValueError(f"class index {j} out of range for {self.num_classes} classes")

    def top(self, class_index: int) -> ConjunctiveRule | None:
        ranked = self.rules.get(class_index) or []
        return ranked[0] if ranked else None

    def to_json(self, names: Sequence[str]) -> dict:
        out = {
            "num_classes": self.num_classes,
            "fidelity_error": {"mean": self.error_mean, "sem": self.error_sem},
            "rules": [],
        }
        for j in sorted(self.rules):
            for rule in self.rules[j]:
                out["rules"].append(
                    {
                        "class": j,
                        "literals": [
                            {"concept": names[lit.index], "index": lit.index, "positive": lit.positive}
                            for lit in rule.literals
                        ],
                        "support": rule.support,
                        "text": format_rule(rule, names),
                    }
                )
        return out

    @classmethod
    def from_json(cls, doc: dict) -> "RuleSet":
        grouped: Dict[int, List[ConjunctiveRule]] = {}
        for item in doc["rules"]:
            lits = tuple(Literal(int(l["index"]), bool(l["positive"])) for l in item["literals"])
            grouped.setdefault(int(item["class"]), []).append(
                ConjunctiveRule(int(item["class"]), lits, int(item["support"]))
            )
        fid = doc.get("fidelity_error", {})
        return cls(grouped, float(fid.get("mean", 0.0)), float(fid.get("sem", 0.0)), int(doc.get("num_classes", 0)))
