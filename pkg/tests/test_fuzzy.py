import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conceptlogic.fuzzy import (
    GODEL,
    PRODUCT,
    ConjunctiveRule,
    Literal,
    RuleSet,
    TruthValueError,
    booleanize,
    conj,
    disj,
    eval_rule,
    format_rule,
    fuzzy_ops,
    neg,
    rule_error_rate,
)

COVID_CONCEPTS = [
    "Peripheral ground-glass opacities",
    "Bilateral involvement",
    "Multilobar distribution",
    "Crazy-paving pattern",
    "Absence of lobar consolidation",
    "Localized or diffuse persentation",
    "lncreased density in the lung",
    "Ground-glass appearance",
]

truth = st.floats(0.0, 1.0)


def test_negation():
    assert neg(0.3) == pytest.approx(0.7)


@given(truth)
def test_identity_elements(x):
    for sem in (GODEL, PRODUCT):
        assert conj(1.0, x, sem) == x
        assert disj(0.0, x, sem) == x


def test_de_morgan_example():
    assert neg(conj(0.2, 0.9)) == pytest.approx(0.8)
    assert disj(neg(0.2), neg(0.9)) == pytest.approx(0.8)


def test_out_of_range_rejected():
    with pytest.raises(TruthValueError):
        fuzzy_ops(1.2, 0.5)
    with pytest.raises(TruthValueError):
        neg(-0.01)


def test_boolean_inputs_match_classical_logic():
    for sem in (GODEL, PRODUCT):
        for a, b in itertools.product((0, 1), repeat=2):
            ops = fuzzy_ops(a, b, sem)
            assert ops == {"neg": float(not a), "and": float(a and b), "or": float(a or b)}


@given(truth, truth, truth)
def test_godel_algebra(a, b, c):
    assert conj(a, b) == conj(b, a)
    assert disj(a, b) == disj(b, a)
    assert conj(conj(a, b), c) == conj(a, conj(b, c))
    assert disj(disj(a, b), c) == disj(a, disj(b, c))
    assert neg(neg(a)) == pytest.approx(a, abs=1e-15)
    if a <= b:
        assert conj(a, c) <= conj(b, c)
        assert disj(a, c) <= disj(b, c)


@given(truth, truth, truth)
def test_product_algebra(a, b, c):
    assert conj(a, b, PRODUCT) == conj(b, a, PRODUCT)
    assert conj(conj(a, b, PRODUCT), c, PRODUCT) == pytest.approx(conj(a, conj(b, c, PRODUCT), PRODUCT))
    assert disj(disj(a, b, PRODUCT), c, PRODUCT) == pytest.approx(disj(a, disj(b, c, PRODUCT), PRODUCT))


@pytest.mark.parametrize("v, bit", [(0.8, 1), (0.5, 1), (0.49, 0)])
def test_booleanize(v, bit):
    assert booleanize(v) == bit


class TestRules:
    rule = ConjunctiveRule(0, (Literal(0, True), Literal(1, False)))

    def test_exact_satisfaction(self):
        assert eval_rule(self.rule, [1, 0]) == 1.0

    def test_violated(self):
        assert eval_rule(self.rule, [1, 1]) == 0.0

    def test_fuzzy(self):
        assert eval_rule(self.rule, [0.9, 0.3]) == pytest.approx(0.7)

    def test_empty_rule_is_true(self):
        assert eval_rule(ConjunctiveRule(0), [0.1]) == 1.0

    def test_index_out_of_range(self):
        with pytest.raises(IndexError):
            eval_rule(ConjunctiveRule(0, (Literal(3),)), [0.1, 0.2])

    def test_duplicate_index_rejected(self):
        with pytest.raises(ValueError):
            ConjunctiveRule(0, (Literal(1), Literal(1, False)))

    def test_boolean_evaluation_matches_classical_conjunction(self):
        for n in range(1, 5):
            for signs in itertools.product((True, False, None), repeat=n):
                lits = tuple(Literal(i, s) for i, s in enumerate(signs) if s is not None)
                rule = ConjunctiveRule(0, lits)
                for bits in itertools.product((0, 1), repeat=n):
                    expected = all(bool(bits[l.index]) == l.positive for l in lits)
                    assert eval_rule(rule, bits) == float(expected)


class TestErrorRate:
    def test_identical(self):
        assert rule_error_rate([1, 0, 1], [1, 0, 1]) == (0.0, 0.0)

    def test_one_disagreement_in_four(self):
        # disagreements {0,1,0,0}: mean 1/4, sample std sqrt(3/16 * 4/3) = 1/2, sem = 1/2 / 2
        mean, sem = rule_error_rate([1, 0, 1, 0], [1, 1, 1, 0])
        assert mean == 0.25
        assert sem == pytest.approx(0.25)

    def test_complementary(self):
        assert rule_error_rate([1, 0, 1], [0, 1, 0]) == (1.0, 0.0)

    def test_empty(self):
        with pytest.raises(ValueError):
            rule_error_rate([], [])


class TestFormat:
    def test_covid_rule(self):
        rule = ConjunctiveRule(0, (Literal(0, True), Literal(4, False)))
        assert (
            format_rule(rule, COVID_CONCEPTS)
            == "y_0 ⇐ Peripheral ground-glass opacities ∧ ¬Absence of lobar consolidation"
        )

    def test_empty(self):
        assert format_rule(ConjunctiveRule(3), COVID_CONCEPTS) == "y_3 ⇐ ⊤"

    def test_single_positive(self):
        assert format_rule(ConjunctiveRule(1, (Literal(3),)), COVID_CONCEPTS) == "y_1 ⇐ Crazy-paving pattern"

    def test_literal_order_is_by_index(self):
        rule = ConjunctiveRule(1, (Literal(2, False), Literal(0)))
        assert format_rule(rule, ["a", "b", "c"]) == "y_1 ⇐ a ∧ ¬c"


def test_ruleset_json_round_trip():
    rs = RuleSet(
        {0: [ConjunctiveRule(0, (Literal(0), Literal(1, False)), 7)], 1: [ConjunctiveRule(1, (), 3)]},
        0.1,
        0.02,
        2,
    )
    doc = rs.to_json(["a", "b"])
    back = RuleSet.from_json(doc)
    assert back.to_json(["a", "b"]) == doc
    assert doc["rules"][0]["text"] == "y_0 ⇐ a ∧ ¬b"


def test_ruleset_rejects_bad_class():
    with pytest.raises(ValueError):
        RuleSet({5: []}, num_classes=2)
