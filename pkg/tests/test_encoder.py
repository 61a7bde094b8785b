import numpy as np
import pytest

from conceptlogic import autodiff as ad
from conceptlogic.encoder import encode, encode_graph, encoder_param_count, init_encoder


def test_same_seed_same_params():
    a = init_encoder(10, 3, 4, seed=11)
    b = init_encoder(10, 3, 4, seed=11)
    assert a.keys() == b.keys()
    for k in a:
        np.testing.assert_array_equal(a[k], b[k])


def test_shapes_and_param_count():
    params = init_encoder(64, 8, 16, seed=0)
    out = encode(np.random.default_rng(0).normal(size=64), params)
    assert out.probs.shape == (8,)
    assert out.embeddings.shape == (8, 16)
    assert out.context.shape == (128,)
    # per concept: two affine heads 64->16; shared scorer 32->1
    assert sum(p.size for p in params.values()) == encoder_param_count(64, 8, 16) == 8 * (2 * (64 * 16 + 16)) + 33


def test_context_is_row_major_concat_of_embeddings():
    params = init_encoder(5, 3, 4, seed=2)
    out = encode(np.random.default_rng(1).normal(size=(6, 5)), params)
    np.testing.assert_array_equal(out.context, out.embeddings.reshape(6, -1))


def _heads(params, f, i):
    pos = np.maximum(f @ params[f"enc.pos.{i}.W"] + params[f"enc.pos.{i}.b"], 0)
    neg = np.maximum(f @ params[f"enc.neg.{i}.W"] + params[f"enc.neg.{i}.b"], 0)
    return pos, neg


def test_probability_one_selects_positive_embedding():
    params = init_encoder(4, 2, 3, seed=0)
    params["enc.score.W"][:] = 0.0
    params["enc.score.b"][:] = 1000.0
    f = np.random.default_rng(0).normal(size=4)
    out = encode(f, params)
    assert np.all(out.probs == 1.0)
    for i in range(2):
        np.testing.assert_array_equal(out.embeddings[i], _heads(params, f, i)[0])


def test_probability_half_gives_midpoint():
    params = init_encoder(4, 2, 3, seed=0)
    params["enc.score.W"][:] = 0.0
    f = np.random.default_rng(5).normal(size=4)
    out = encode(f, params)
    for i in range(2):
        pos, neg = _heads(params, f, i)
        np.testing.assert_allclose(out.embeddings[i], (pos + neg) / 2, atol=1e-15)


def test_probabilities_strictly_inside_unit_interval():
    params = init_encoder(8, 5, 4, seed=3)
    out = encode(np.random.default_rng(3).normal(size=(20, 8)), params)
    assert np.all((out.probs > 0) & (out.probs < 1))


def test_dimension_mismatch():
    with pytest.raises(ad.ShapeError):
        encode(np.ones(7), init_encoder(8, 2, 4))


def test_encode_is_pure():
    params = init_encoder(6, 3, 4, seed=1)
    snapshot = {k: v.copy() for k, v in params.items()}
    f = np.random.default_rng(0).normal(size=(3, 6))
    a = encode(f, params)
    b = encode(f, params)
    np.testing.assert_array_equal(a.context, b.context)
    for k in params:
        np.testing.assert_array_equal(params[k], snapshot[k])


def test_concept_bce_gradients():
    rng = np.random.default_rng(4)
    params = init_encoder(5, 3, 4, seed=rng)
    target = rng.integers(0, 2, size=(4, 3))
    inputs = {"x": rng.normal(size=(4, 5)), **params}

    def build(n):
        return ad.bce(encode_graph(n["x"], n, 3).probs, target)

    report = ad.check_gradients(build, inputs, wrt=list(params), tol=1e-4)
    assert report.passed, report.errors
