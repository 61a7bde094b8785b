import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conceptlogic import autodiff as ad
from conceptlogic.fuzzy import ConjunctiveRule, Literal, booleanize, format_rule
from conceptlogic.symbolic import (
    FILTERED,
    LITERAL,
    aggregate_eq1,
    aggregate_global_rules,
    aggregate_graph,
    booleanized_predictions,
    compute_indicators,
    extract_local_rule,
    indicators_graph,
    init_indicator_nets,
)

unit = st.floats(0.0, 1.0)


def tie_free_indicators(rng, shape, semantics=LITERAL, gap=1e-3):
    """Random indicators whose max and min comparisons are all separated by ``gap``."""
    while True:
        Io, Ir = rng.uniform(0.02, 0.98, size=(2, *shape))
        a, b = (Io, Ir) if semantics == LITERAL else (Ir, Io)
        terms = np.maximum(1.0 - a, b)
        ordered = np.sort(terms, axis=-2)
        if np.abs((1.0 - a) - b).min() > gap and np.diff(ordered, axis=-2).min() > gap:
            return Io, Ir


def classical(Io, Ir):
    """AND over concepts of (NOT polarity OR relevance) on 0/1 entries."""
    return int(all((not o) or r for o, r in zip(Io, Ir)))


class TestIndicators:
    def test_zero_weight_nets(self):
        params = {k: np.zeros_like(v) for k, v in init_indicator_nets(4, 3, 5).items()}
        Io, Ir = compute_indicators(np.random.default_rng(0).normal(size=(2, 6, 4)), params)
        assert Io.shape == Ir.shape == (2, 6, 3)
        assert np.all(Io == 0.5) and np.all(Ir == 0.5)

    def test_bias_sets_constant(self):
        params = {k: np.zeros_like(v) for k, v in init_indicator_nets(4, 1, 5).items()}
        params["phi.0.b2"][:] = np.log(0.8 / 0.2)
        params["psi.0.b2"][:] = np.log(0.2 / 0.8)
        Io, Ir = compute_indicators(np.ones((1, 2, 4)), params)
        # a polarity of 0.8 is a positive role; a relevance of 0.2 is weakly relevant
        np.testing.assert_allclose(Io, 0.8)
        np.testing.assert_allclose(Ir, 0.2)

    def test_width_mismatch(self):
        with pytest.raises(ad.ShapeError):
            compute_indicators(np.ones((1, 2, 3)), init_indicator_nets(4, 1, 5))

    def test_outputs_in_open_unit_interval(self):
        Io, Ir = compute_indicators(np.random.default_rng(1).normal(size=(5, 3, 4)), init_indicator_nets(4, 2, 8, 1))
        assert np.all((Io > 0) & (Io < 1) & (Ir > 0) & (Ir < 1))


class TestAggregation:
    def test_single_concept(self):
        assert aggregate_eq1([[0.8]], [[0.2]], LITERAL)[0] == pytest.approx(0.2)

    def test_filtered_term(self):
        # a concept with polarity 1 and relevance 1 contributes 1 and never wins the min
        Io = np.array([[1.0], [0.9]])
        Ir = np.array([[1.0], [0.3]])
        assert aggregate_eq1(Io, Ir)[0] == pytest.approx(0.3)
        assert aggregate_eq1(Io[:1], Ir[:1])[0] == 1.0

    def test_filtered_semantics(self):
        assert aggregate_eq1([[0.8]], [[0.2]], FILTERED)[0] == pytest.approx(0.8)

    @pytest.mark.parametrize("n", [1, 2, 3, 4])
    def test_boolean_equivalence(self, n):
        for bits in itertools.product((0, 1), repeat=2 * n):
            Io = np.array(bits[:n], dtype=float).reshape(n, 1)
            Ir = np.array(bits[n:], dtype=float).reshape(n, 1)
            assert aggregate_eq1(Io, Ir)[0] == classical(Io[:, 0], Ir[:, 0])

    @given(arrays(np.float64, (4, 2), elements=unit), arrays(np.float64, (4, 2), elements=unit), st.permutations(range(4)))
    def test_permutation_invariant(self, Io, Ir, perm):
        np.testing.assert_array_equal(aggregate_eq1(Io, Ir), aggregate_eq1(Io[list(perm)], Ir[list(perm)]))

    @given(
        arrays(np.float64, (3, 2), elements=unit),
        arrays(np.float64, (3, 2), elements=unit),
        st.integers(0, 2),
        st.integers(0, 1),
        st.floats(0, 1),
    )
    def test_monotonicity(self, Io, Ir, i, j, bump):
        base = aggregate_eq1(Io, Ir)
        Ir2 = Ir.copy()
        Ir2[i, j] = min(1.0, Ir2[i, j] + bump)
        assert np.all(aggregate_eq1(Io, Ir2) >= base)
        Io2 = Io.copy()
        Io2[i, j] = min(1.0, Io2[i, j] + bump)
        assert np.all(aggregate_eq1(Io2, Ir) <= base)

    def test_graph_matches_numeric(self):
        rng = np.random.default_rng(0)
        Io, Ir = rng.uniform(size=(2, 5, 4, 3))
        for sem in (LITERAL, FILTERED):
            out = aggregate_graph(ad.leaf(Io), ad.leaf(Ir), sem).value
            np.testing.assert_array_equal(out, aggregate_eq1(Io, Ir, sem))

    @pytest.mark.parametrize("semantics", [LITERAL, FILTERED])
    def test_gradients_away_from_ties(self, semantics):
        rng = np.random.default_rng(12)
        Io, Ir = tie_free_indicators(rng, (3, 4, 2), semantics)
        target = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 1.0]])

        def build(n):
            return ad.bce(aggregate_graph(n["Io"], n["Ir"], semantics), target)

        report = ad.check_gradients(build, {"Io": Io, "Ir": Ir})
        assert report.passed, report.errors

    def test_indicator_net_gradients(self):
        rng = np.random.default_rng(3)
        params = init_indicator_nets(3, 2, 4, rng)
        target = rng.integers(0, 2, size=(2, 2)).astype(float)
        inputs = {"E": rng.normal(size=(2, 3, 3)), **params}

        def build(n):
            Io, Ir = indicators_graph(n["E"], n, 2)
            return ad.bce(aggregate_graph(Io, Ir), target)

        report = ad.check_gradients(build, inputs)
        assert report.passed, report.errors


class TestRuleExtraction:
    def test_single_relevant_positive(self):
        Io = np.array([[1.0], [0.2], [0.9]])
        Ir = np.array([[1.0], [0.0], [0.0]])
        rule = extract_local_rule(Io, Ir, 0)
        assert format_rule(rule, ["c_0", "c_1", "c_2"]) == "y_0 ⇐ c_0"

    def test_covid_form(self):
        rule = extract_local_rule(np.array([[1.0], [0.0]]), np.array([[1.0], [1.0]]), 0)
        assert rule.literals == (Literal(0, True), Literal(1, False))
        assert format_rule(rule, ["c_GO", "c_LC"]) == "y_0 ⇐ c_GO ∧ ¬c_LC"

    def test_nothing_relevant(self):
        rule = extract_local_rule(np.full((3, 2), 0.9), np.full((3, 2), 0.4), 1)
        assert rule == ConjunctiveRule(1)

    def test_class_out_of_range(self):
        with pytest.raises(IndexError):
            extract_local_rule(np.ones((2, 2)), np.ones((2, 2)), 2)


class TestGlobalRules:
    def test_same_rule_everywhere(self):
        r = ConjunctiveRule(0, (Literal(1),))
        rs = aggregate_global_rules([r] * 5, np.ones((5, 1)), np.ones((5, 1)), 1)
        assert rs.rules[0] == [r.with_support(5)]
        assert (rs.error_mean, rs.error_sem) == (0.0, 0.0)

    def test_ordering_by_support(self):
        a = ConjunctiveRule(0, (Literal(0),))
        b = ConjunctiveRule(0, (Literal(1, False),))
        rs = aggregate_global_rules([b] * 3 + [a] * 7, np.zeros((10, 1)), np.zeros((10, 1)), 1)
        assert [r.support for r in rs.rules[0]] == [7, 3]
        assert rs.top(0).key == a.key

    def test_fidelity_counts_sample_disagreements(self):
        r = ConjunctiveRule(0)
        bools = np.array([[1, 0], [0, 1], [1, 1], [0, 0]])
        fuzzy = np.array([[1, 0], [1, 1], [1, 1], [0, 0]])
        rs = aggregate_global_rules([r] * 4, bools, fuzzy, 2)
        assert rs.error_mean == 0.25
        assert rs.error_sem == pytest.approx(0.25)

    @settings(max_examples=50)
    @given(arrays(np.float64, (6, 4, 2), elements=unit), arrays(np.float64, (6, 4, 2), elements=unit))
    def test_godel_booleanization_agrees_off_the_threshold(self, Io, Ir):
        # thresholding commutes with min/max except for polarity exactly at 0.5
        Io = np.where(Io == 0.5, 0.51, Io)
        np.testing.assert_array_equal(booleanized_predictions(Io, Ir), booleanize(aggregate_eq1(Io, Ir)))
