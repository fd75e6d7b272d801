import json
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gaminet import model as gm
from gaminet.data import FeatureMeta, IngestionError
from gaminet.model import (CategoricalEffect, GamiNetModel, center_effects, clarity_loss, effect_variance,
                           evaluate_effect, invert_link, loss, loss_grad, predict)
from gaminet.nn_core import ShapeError, subnet_forward

from conftest import affine_net, numeric_meta, random_inputs, random_model


def test_intercept_only():
    m = GamiNetModel(numeric_meta(3), intercept=0.7)
    eta, contrib = predict(m, np.random.default_rng(0).random((5, 3)))
    assert np.all(eta == 0.7) and contrib.shape == (5, 0)


def test_affine_main_effect():
    m = GamiNetModel(numeric_meta(1), main_effects={0: affine_net([[2.0]], -1.0)})
    eta, contrib = predict(m, [[0.75]])
    assert contrib[0, 0] == 0.5 and eta[0] == 0.5


def test_hand_built_sum():
    rng = np.random.default_rng(1)
    m = random_model(rng, p=3, n_pairs=1, hidden=(4,))
    x = random_inputs(rng, m, 3)
    eta, contrib = predict(m, x)
    parts = [subnet_forward(m.main_effects[j], x[:, [j]])[0] for j in range(3)]
    (j, k), = m.interactions
    parts.append(subnet_forward(m.interactions[(j, k)], x[:, [j, k]])[0])
    assert np.array_equal(contrib, np.column_stack(parts))
    assert np.allclose(eta, m.intercept + sum(parts), rtol=0, atol=1e-12)


def test_contribution_column_order():
    rng = np.random.default_rng(2)
    m = random_model(rng, p=4, n_pairs=3)
    keys = m.effect_keys()
    mains = [k for k in keys if not isinstance(k, tuple)]
    pairs = [k for k in keys if isinstance(k, tuple)]
    assert keys == mains + pairs and mains == sorted(mains) and pairs == sorted(pairs)


def test_interaction_key_order_enforced():
    with pytest.raises(ValueError):
        GamiNetModel(numeric_meta(2), interactions={(1, 0): affine_net([[1.0, 1.0]], 0.0, 2)})


def test_schema_mismatch():
    with pytest.raises(ShapeError):
        predict(GamiNetModel(numeric_meta(2)), np.zeros((3, 4)))


def test_unseen_level_code():
    meta = [FeatureMeta("c", "categorical", levels=["a", "b"])]
    m = GamiNetModel(meta, main_effects={0: CategoricalEffect([0.1, 0.2])})
    with pytest.raises(IngestionError):
        predict(m, [[2.0]])


def test_categorical_interaction_uses_one_hot():
    rng = np.random.default_rng(3)
    m = random_model(rng, p=2, n_pairs=1, categorical=(1,))
    net = m.interactions[(0, 1)]
    assert net.in_dim == 1 + 3
    x = np.array([[0.2, 2.0]])
    out = evaluate_effect(m, (0, 1), x)
    ref, _ = subnet_forward(net, np.array([[0.2, 0.0, 0.0, 1.0]]))
    assert out[0] == ref[0]


# -- links and losses -------------------------------------------------------------

def test_links():
    assert invert_link("logit", np.array([0.0]))[0] == 0.5
    assert invert_link("identity", np.array([3.2]))[0] == 3.2
    p = invert_link("logit", np.array([-40.0, 40.0]))
    assert np.all((p > 0) & (p < 1))
    for y in (0.0, 1.0):
        v = loss("logit", np.array([y, y]), np.array([-40.0, 40.0]))
        assert np.isfinite(v)


def test_logit_loss_matches_direct_formula():
    eta = np.linspace(-30, 30, 61)
    y = (np.arange(61) % 2).astype(float)
    # log(1 + e^eta) - y * eta, one row at a time in plain floats
    ref = np.mean([math.log1p(math.exp(e)) - t * e for e, t in zip(eta.tolist(), y.tolist())])
    assert loss("logit", y, eta) == pytest.approx(ref, rel=1e-14)


@pytest.mark.parametrize("link", ["identity", "logit"])
def test_loss_grad_finite_difference(link):
    rng = np.random.default_rng(4)
    eta = rng.normal(size=6)
    y = (rng.random(6) > 0.5).astype(float) if link == "logit" else rng.normal(size=6)
    g = loss_grad(link, y, eta)
    for i in range(6):
        e = np.zeros(6)
        e[i] = 1e-6
        num = (loss(link, y, eta + e) - loss(link, y, eta - e)) / 2e-6
        assert g[i] == pytest.approx(num, rel=1e-6, abs=1e-9)


def test_apply_invert_round_trip():
    mu = np.array([0.01, 0.5, 0.93])
    assert np.allclose(invert_link("logit", gm.apply_link("logit", mu)), mu)


# -- centering ---------------------------------------------------------------------

def test_centering_constant_effect():
    m = GamiNetModel(numeric_meta(1), intercept=1.0, main_effects={0: affine_net([[0.0]], 3.0)})
    x = np.random.default_rng(5).random((10, 1))
    center_effects(m, x)
    assert np.all(evaluate_effect(m, 0, x) == 0.0) and m.intercept == 4.0


def test_centering_idempotent():
    rng = np.random.default_rng(6)
    m = random_model(rng)
    x = random_inputs(rng, m, 200)
    center_effects(m, x)
    before = gm.to_dict(m)
    center_effects(m, x)
    after = gm.to_dict(m)
    assert after["intercept"] == pytest.approx(before["intercept"], abs=1e-12)
    for a, b in zip(before["main_effects"] + before["interactions"], after["main_effects"] + after["interactions"]):
        off = "offset" if a["type"] == "categorical" else "output_offset"
        assert a[off] == pytest.approx(b[off], abs=1e-12)


@given(st.integers(0, 10_000), st.integers(2, 300))
def test_centering_invariance(seed, n):
    rng = np.random.default_rng(seed)
    m = random_model(rng, p=3, categorical=(2,) if seed % 2 else ())
    x = random_inputs(rng, m, n)
    before, _ = predict(m, x)
    center_effects(m, x)
    after, contrib = predict(m, x)
    assert np.max(np.abs(before - after)) < 1e-9
    assert np.all(np.abs(contrib.mean(axis=0)) < 1e-9)


# -- variance and clarity ------------------------------------------------------------

def _values_model(h, f=None):
    """Model whose effects on rows x_i = i return the given values (via categorical lookups)."""
    n = len(h)
    meta = [FeatureMeta("r", "categorical", levels=[str(i) for i in range(n)]),
            FeatureMeta("s", "numerical", 0.0, 1.0)]
    mains = {0: CategoricalEffect(np.asarray(h, dtype=float))}
    pairs = {}
    if f is not None:
        # identity layer on the one-hot input of r reads out f directly
        pairs[(0, 1)] = affine_net([list(f) + [0.0]], 0.0, 2)
    x = np.column_stack([np.arange(n, dtype=float), np.zeros(n)])
    return GamiNetModel(meta, main_effects=mains, interactions=pairs), x


def test_variance_hand_computation():
    m, x = _values_model([1.0, -1.0, 1.0, -1.0])
    assert effect_variance(m, x).values["r"] == pytest.approx(4 / 3, abs=1e-15)


def test_variance_zero_and_total():
    m, x = _values_model([0.0, 0.0])
    t = effect_variance(m, x)
    assert t.values["r"] == 0.0 and t.total == 0.0
    assert gm.EffectVarianceTable.from_values({"a": 3.0, "b": 1.0}).total == 4.0


def test_variance_needs_two_rows():
    m, x = _values_model([1.0])
    with pytest.raises(ValueError):
        effect_variance(m, x)


def test_clarity_examples():
    m, x = _values_model([1.0, -1.0], [1.0, 1.0])
    assert clarity_loss(m, x)[1] == 0.0
    m, x = _values_model([1.0, 1.0], [1.0, 1.0])
    per, total = clarity_loss(m, x)
    assert total == 1.0 and per == {(0, (0, 1)): 1.0}


def test_clarity_without_interactions():
    m, x = _values_model([1.0, 2.0])
    assert clarity_loss(m, x) == ({}, 0.0)


def test_clarity_only_active_parents():
    assert gm.clarity_pairs([0], [(0, 1), (1, 2)]) == [(0, (0, 1))]
    assert gm.clarity_pairs([0, 1], [(0, 1)]) == [(0, (0, 1)), (1, (0, 1))]


@given(st.lists(st.floats(-5, 5), min_size=2, max_size=20), st.integers(0, 1000))
def test_clarity_nonnegative(h, seed):
    f = np.random.default_rng(seed).normal(size=len(h))
    m, x = _values_model(h, f)
    total = clarity_loss(m, x)[1]
    assert total >= 0
    assert total == pytest.approx(abs(np.dot(h, f)) / len(h), rel=1e-12, abs=1e-15)


# -- serialization -----------------------------------------------------------------------

def test_round_trip_bit_exact(tmp_path):
    rng = np.random.default_rng(7)
    m = random_model(rng, p=4, n_pairs=3, categorical=(1,))
    x = random_inputs(rng, m, 50)
    m.variance = effect_variance(m, x)
    path = tmp_path / "m.json"
    gm.save(m, path)
    back = gm.load(path)
    assert np.array_equal(predict(m, x)[0], predict(back, x)[0])
    assert gm.dumps(back) == gm.dumps(m)
    doc = json.loads(path.read_text())
    assert doc["format"] == "gaminet-model" and "effect_variance" in doc


def test_load_rejects_foreign_document():
    with pytest.raises(ValueError):
        gm.from_dict({"format": "other"})
