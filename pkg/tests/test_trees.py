import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freightmode.dataset import FEATURE_NAMES, SyntheticSpec, synthetic_dataset
from freightmode.errors import ValidationError
from freightmode.evaluation import holdout_split, weighted_accuracy
from freightmode.learners import (
    BoostedModel,
    Family,
    LearnerSpec,
    Tree,
    best_split,
    fit,
    fit_bagging,
    fit_cart,
    fit_gradient_boosting,
    fit_mnl,
    fit_random_forest,
    impurity_importance,
    model_from_dict,
)
from freightmode.learners.core import softmax
from freightmode.learners.trees import _grow, _prepare, _regression_tree, boosting_deviance, presort

from conftest import make_data, random_data
from oracles import boosting_stage_by_hand, brute_force_split, brute_force_tree, same_tree


# ---------------------------------------------------------------- best_split


def test_best_split_unit_weights():
    s = best_split([[0.0], [1.0]], [0, 1])
    assert (s.feature, s.threshold) == (0, 0.5)
    assert s.gini_decrease == pytest.approx(0.5, abs=1e-15)


def test_best_split_weighted():
    s = best_split([[0.0], [1.0]], [0, 1], [1.0, 3.0])
    assert s.gini_decrease == pytest.approx(0.375, abs=1e-15)


def test_best_split_pure_and_constant_nodes():
    assert best_split([[0.0], [1.0], [2.0]], [2, 2, 2]) is None
    assert best_split([[1.0], [1.0]], [0, 1]) is None


def test_best_split_ties_prefer_lowest_feature_then_threshold():
    # both features separate the classes perfectly
    X = [[0.0, 0.0], [1.0, 1.0]]
    assert best_split(X, [0, 1]).feature == 0
    # two thresholds with equal decrease on one feature
    X = [[0.0], [1.0], [2.0], [3.0]]
    s = best_split(X, [0, 1, 1, 0])
    assert s.threshold == 0.5


def test_best_split_candidate_features():
    X = [[0.0, 5.0], [1.0, 5.0], [0.0, 6.0], [1.0, 6.0]]
    assert best_split(X, [0, 1, 0, 1], candidate_features=[1]) is None
    assert best_split(X, [0, 1, 0, 1], candidate_features=[0]).feature == 0


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000))
def test_best_split_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    n = rng.integers(2, 15)
    X = rng.integers(0, 4, size=(n, 3)).astype(float)
    y = rng.integers(0, 3, size=n)
    w = rng.integers(1, 4, size=n).astype(float)
    got = best_split(X, y, w)
    want = brute_force_split(X, y, w)
    if want is None:
        assert got is None
    else:
        assert (got.feature, got.threshold) == want[:2]
        assert got.gini_decrease == pytest.approx(want[2], abs=1e-12)


# ---------------------------------------------------------------- CART


def test_cart_single_class_is_one_leaf():
    m = fit_cart(make_data([[0.0], [1.0], [2.0]], [4, 4, 4]))
    assert m.tree.n_nodes == 1
    np.testing.assert_array_equal(m.predict_proba([[7.0]]), [[0, 0, 0, 0, 1]])


def test_cart_crafted_8_points_equals_oracle():
    X = np.array([[1, 1], [2, 1], [3, 2], [4, 2], [1, 3], [2, 4], [3, 3], [4, 4]], dtype=float)
    y = np.array([0, 0, 1, 1, 2, 2, 1, 0])
    m = fit_cart(make_data(X, y))
    assert same_tree(m.tree.to_nested(), brute_force_tree(X, y, np.ones(8)))


@pytest.mark.parametrize("seed", range(10))
def test_cart_random_equals_oracle(seed):
    rng = np.random.default_rng(100 + seed)
    n = rng.integers(8, 13)
    X = np.round(rng.normal(size=(n, 3)), 1)
    y = rng.integers(0, 3, n)
    w = rng.integers(1, 3, n).astype(float)
    for depth in (None, 2):
        m = fit_cart(make_data(X, y, w), max_depth=depth)
        assert same_tree(m.tree.to_nested(), brute_force_tree(X, y, w, max_depth=depth))


def test_cart_depth_limits():
    rng = np.random.default_rng(1)
    data = random_data(rng, n=80)
    assert fit_cart(data, max_depth=1).tree.n_internal <= 1
    assert fit_cart(data, max_depth=3).tree.depth <= 3


def test_cart_min_samples_split():
    rng = np.random.default_rng(2)
    data = random_data(rng, n=80)
    data = data.with_weights(np.ones(80))
    tree = fit_cart(data, min_samples_split=30).tree
    # unit weights: node weight is the number of rows reaching it
    assert np.all(tree.weight[~tree.is_leaf] >= 30)
    assert tree.n_internal < fit_cart(data).tree.n_internal


def test_cart_fits_duplicate_free_data_exactly():
    rng = np.random.default_rng(3)
    data = random_data(rng, n=100)
    m = fit_cart(data)
    assert np.all(m.predict(data.features) == data.labels)
    assert np.all(m.tree.decrease[~m.tree.is_leaf] > 0)


def test_cart_leaf_probability_is_weighted_fraction():
    data = make_data([[0.0], [0.0], [0.0]], [0, 1, 1], [3.0, 1.0, 2.0])
    np.testing.assert_allclose(fit_cart(data).predict_proba([[0.0]])[0], [0.5, 0.5, 0, 0, 0])


def test_tree_nested_roundtrip():
    rng = np.random.default_rng(4)
    data = random_data(rng, n=50)
    tree = fit_cart(data).tree
    back = Tree.from_nested(json.loads(json.dumps(tree.to_nested())), 5)
    for name in ("feature", "threshold", "left", "right", "value", "weight", "decrease"):
        np.testing.assert_array_equal(getattr(back, name), getattr(tree, name))


# ---------------------------------------------------------------- forests


def _queries(rng, data, m=1000):
    lo, hi = data.features.min(axis=0), data.features.max(axis=0)
    return rng.uniform(lo - 1, hi + 1, size=(m, data.n_features))


def test_rf_degenerates_to_cart(synth_small):
    cart = fit_cart(synth_small)
    rf = fit_random_forest(synth_small, n_trees=1, mtry=synth_small.n_features, bootstrap="none")
    Q = _queries(np.random.default_rng(0), synth_small)
    np.testing.assert_array_equal(rf.predict(Q), cart.predict(Q))


def test_bagging_degenerates_to_cart(synth_small):
    cart = fit_cart(synth_small)
    bag = fit_bagging(synth_small, n_estimators=1, bootstrap="none")
    Q = _queries(np.random.default_rng(1), synth_small)
    np.testing.assert_array_equal(bag.predict(Q), cart.predict(Q))


def test_forest_averages_tree_probabilities():
    rng = np.random.default_rng(5)
    data = random_data(rng, n=60)
    rf = fit_random_forest(data, n_trees=3, mtry=2, seed=1)
    Q = rng.normal(size=(20, 4))
    mean = np.mean([t.leaf_proba()[t.apply(Q)] for t in rf.trees], axis=0)
    np.testing.assert_allclose(rf.predict_proba(Q), mean, atol=1e-15)
    # averaging is commutative
    rf.trees.reverse()
    np.testing.assert_allclose(rf.predict_proba(Q), mean, atol=1e-15)


def test_forest_seed_reproducibility(synth_small):
    a = fit_random_forest(synth_small, seed=7)
    b = fit_random_forest(synth_small, seed=7)
    c = fit_random_forest(synth_small, seed=8)
    assert json.dumps(a.to_dict()) == json.dumps(b.to_dict())
    assert json.dumps(a.to_dict()) != json.dumps(c.to_dict())


def test_rf_mtry_above_d():
    with pytest.raises(ValidationError):
        fit_random_forest(make_data([[0.0, 1.0], [1.0, 0.0]], [0, 1]), mtry=3)


@pytest.mark.parametrize("mode", ["weighted", "uniform", "none"])
def test_bootstrap_modes_fit(mode, synth_small):
    m = fit_random_forest(synth_small, n_trees=3, bootstrap=mode)
    assert m.predict(synth_small.features).shape == (synth_small.n_samples,)


def test_weighted_bootstrap_follows_weights():
    # one row carries almost all weight: weighted bootstrap trees see mostly that row
    X = np.arange(10, dtype=float)[:, None]
    y = np.array([0] * 9 + [1])
    w = np.array([1.0] * 9 + [1e6])
    rf = fit_random_forest(make_data(X, y, w), n_trees=5, mtry=1, seed=0)
    assert np.all(rf.predict(X) == 1)


def test_every_forest_split_decreases_impurity(synth_small):
    for model in (fit_random_forest(synth_small), fit_bagging(synth_small)):
        for t in model.trees:
            assert np.all(t.decrease[~t.is_leaf] > 0)


def test_forest_beats_cart_on_synthetic_data():
    wins, gaps = 0, []
    for seed in range(10):
        data = synthetic_dataset(SyntheticSpec(20000, seed=seed, noise_level=0.3))
        train, test = holdout_split(data, 0.3, seed)
        acc = {}
        for fam in (Family.CART, Family.RF, Family.BAG):
            m = fit(LearnerSpec(fam, seed=seed), train)
            acc[fam] = weighted_accuracy(test.labels, m.predict(test.features), test.weights)
        wins += acc[Family.RF] >= acc[Family.CART]
        gaps.append(abs(acc[Family.BAG] - acc[Family.RF]))
    assert wins >= 8
    assert max(gaps) <= 0.05


# ---------------------------------------------------------------- boosting


def test_boost_zero_stages_is_prior_argmax():
    rng = np.random.default_rng(6)
    data = random_data(rng, n=50)
    m = fit_gradient_boosting(data, n_stages=0)
    prior = np.bincount(data.labels, weights=data.weights, minlength=5)
    Q = rng.normal(size=(1000, 4))
    assert np.all(m.predict(Q) == np.argmax(prior))
    np.testing.assert_allclose(m.predict_proba(Q[:1])[0], prior / prior.sum(), atol=1e-15)


def test_pseudo_residual_at_uniform_scores():
    r = np.eye(5)[2] - softmax(np.zeros((1, 5)))[0]
    np.testing.assert_allclose(r, [-0.2, -0.2, 0.8, -0.2, -0.2], atol=1e-15)


@pytest.mark.parametrize("case", [
    ([[0.0, 1.0], [1.0, 0.0], [2.0, 1.0], [3.0, 0.0]], [0, 1, 1, 2], [1.0, 2.0, 1.0, 1.0]),
    ([[0.0], [1.0], [2.0], [3.0]], [0, 0, 1, 1], [1.0, 1.0, 1.0, 1.0]),
    ([[5.0, 2.0], [1.0, 2.0], [3.0, 7.0], [3.0, 1.0]], [3, 0, 3, 1], [0.5, 2.0, 1.0, 1.5]),
])
def test_boost_one_stage_matches_hand_computation(case):
    X, y, w = (np.asarray(a, dtype=float) for a in case)
    y = y.astype(int)
    m = fit_gradient_boosting(make_data(X, y, w), n_stages=1, learning_rate=0.5, max_depth=1)
    want = boosting_stage_by_hand(X, y, w, 0.5)
    got = m.decision_function(X)
    finite = np.isfinite(want)
    np.testing.assert_array_equal(np.isfinite(got), finite)
    np.testing.assert_allclose(got[finite], want[finite], atol=1e-9)


def test_boost_deviance_non_increasing(synth_small):
    m = fit_gradient_boosting(synth_small, n_stages=30, learning_rate=0.1)
    dev = [boosting_deviance(m, synth_small, s) for s in range(31)]
    assert np.all(np.diff(dev) <= 1e-12)


def test_boost_serialization_keeps_absent_classes():
    rng = np.random.default_rng(7)
    X = rng.normal(size=(40, 2))
    y = np.where(X[:, 0] > 0, 0, 2)
    m = fit_gradient_boosting(make_data(X, y), n_stages=5)
    doc = json.loads(json.dumps(m.to_dict()))
    assert doc["params"]["initial_scores"][1] is None
    back = model_from_dict(doc)
    assert isinstance(back, BoostedModel)
    np.testing.assert_array_equal(back.predict_proba(X), m.predict_proba(X))


@pytest.mark.parametrize("seed", range(4))
def test_levelwise_regression_tree_matches_depth_first(seed):
    rng = np.random.default_rng(seed)
    n = 300
    X = np.column_stack([rng.integers(0, 6, n), rng.normal(size=n), rng.integers(0, 300, n)]).astype(float)
    r = rng.normal(size=n)
    w = rng.uniform(0.5, 2.0, n)
    hp = {"max_depth": 3, "min_samples_split": 2}
    fast, leaf_fast = _regression_tree(_prepare(X), r, w, hp, 1.0)
    slow, leaf_slow = _grow(X, presort(X), w, r=r, max_depth=3)
    for name in ("feature", "threshold", "left", "right"):
        np.testing.assert_array_equal(getattr(fast, name), getattr(slow, name))
    np.testing.assert_allclose(fast.decrease, slow.decrease, rtol=1e-9, atol=1e-15)
    np.testing.assert_array_equal(leaf_fast, leaf_slow)


# ---------------------------------------------------------------- importance


def _distance_only_data(n=3000, seed=0):
    base = synthetic_dataset(SyntheticSpec(n, seed=seed))
    j = FEATURE_NAMES.index("distance_band")
    y = np.array([0, 0, 1, 1, 2, 2, 2, 2])[base.features[:, j].astype(int)]
    return make_data(base.features, y, base.weights, FEATURE_NAMES), j


def test_importance_recovers_the_label_feature():
    data, j = _distance_only_data()
    for model in (fit_random_forest(data), fit_gradient_boosting(data, n_stages=20), fit_cart(data),
                  fit_bagging(data)):
        imp = impurity_importance(model)
        assert np.argmax(imp) == j
        assert abs(imp.sum() - 1) < 1e-9 and np.all(imp >= 0)


def test_unused_feature_has_zero_importance():
    rng = np.random.default_rng(8)
    X = np.column_stack([rng.normal(size=60), np.zeros(60), rng.normal(size=60)])
    y = (X[:, 0] > 0).astype(int)
    imp = impurity_importance(fit_cart(make_data(X, y)))
    assert imp[1] == 0 and imp[2] == 0 and imp[0] == 1


def test_all_leaf_model_gets_uniform_importance():
    m = fit_cart(make_data(np.zeros((4, 3)), [1, 1, 1, 1]))
    np.testing.assert_allclose(impurity_importance(m), 1 / 3)


def test_importance_of_non_tree_model_is_type_error():
    with pytest.raises(TypeError):
        impurity_importance(fit_mnl(make_data([[0.0], [1.0]], [0, 1])))
