import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from freightmode.dataset import SyntheticSpec, synthetic_dataset, weighted_mode_shares
from freightmode.errors import ShapeError, ValidationError
from freightmode.evaluation import (
    RESULT_COLUMNS,
    FoldError,
    GridConfig,
    SplitRatio,
    compute_metrics,
    cross_validate,
    cv_folds_csv,
    derive_seed,
    holdout_split,
    kfold_partition,
    per_mode_csv,
    results_csv,
    results_jsonl,
    run_experiment_grid,
    size_accuracy_csv,
    weighted_accuracy,
)
from freightmode.learners import Family, LearnerSpec, fit

from conftest import make_data, random_data
from oracles import all_partitions_cover


def labelled(n, seed=0):
    rng = np.random.default_rng(seed)
    return make_data(rng.normal(size=(n, 2)), rng.integers(0, 3, n), rng.uniform(0.5, 2.0, n))


def worked_example(scale_a=1.0):
    """Two classes: 40 A->A, 20 A->B, 10 B->A, 30 B->B."""
    y_true = np.array([0] * 60 + [1] * 40)
    y_pred = np.array([0] * 40 + [1] * 20 + [0] * 10 + [1] * 30)
    w = np.where(y_true == 0, scale_a, 1.0)
    return y_true, y_pred, w


# ---------------------------------------------------------------- holdout


def test_split_ratio_bounds():
    assert SplitRatio(0.3).ratio == 0.3
    for bad in (0.0, 1.0, 1.5, -0.1, float("nan")):
        with pytest.raises(ValidationError):
            SplitRatio(bad)


def test_holdout_70_30():
    train, test = holdout_split(labelled(100), 0.3, seed=1)
    assert (train.n_samples, test.n_samples) == (70, 30)


def test_holdout_ratio_one_is_rejected():
    with pytest.raises(ValidationError):
        holdout_split(labelled(10), 1.0, seed=0)


def test_holdout_degenerate_sizes():
    with pytest.raises(ValidationError):
        holdout_split(labelled(1), 0.5, seed=0)
    with pytest.raises(ValidationError):
        holdout_split(labelled(3), 0.1, seed=0)  # rounds to an empty test set


def test_holdout_is_seeded():
    data = labelled(50)
    a = holdout_split(data, 0.4, seed=3)[1].row_ids
    b = holdout_split(data, 0.4, seed=3)[1].row_ids
    c = holdout_split(data, 0.4, seed=4)[1].row_ids
    np.testing.assert_array_equal(a, b)
    assert not np.array_equal(a, c)


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 300), st.floats(0.01, 0.99), st.integers(0, 2**31), st.booleans())
def test_holdout_is_a_partition(n, ratio, seed, stratify):
    data = labelled(n, seed % 7)
    n_test = math.floor(ratio * n + 0.5)
    if not 1 <= n_test <= n - 1:
        with pytest.raises(ValidationError):
            holdout_split(data, ratio, seed, stratify)
        return
    train, test = holdout_split(data, ratio, seed, stratify)
    assert test.n_samples == n_test
    assert all_partitions_cover(n, [train.row_ids, test.row_ids])


def test_stratified_holdout_keeps_class_proportions():
    y = np.array([0] * 80 + [1] * 20)
    data = make_data(np.arange(100.0), y)
    _, test = holdout_split(data, 0.3, seed=5, stratify=True)
    assert np.bincount(test.labels).tolist() == [24, 6]


# ---------------------------------------------------------------- k-fold


def test_kfold_even_sizes():
    assert kfold_partition(100, 10, seed=0).sizes.tolist() == [10] * 10


def test_kfold_remainder_rule():
    sizes = kfold_partition(101, 10, seed=0).sizes
    assert sorted(sizes.tolist()) == [10] * 9 + [11]


@pytest.mark.parametrize("k", [10, 20, 30])
def test_kfold_default_fold_counts_accepted(k):
    assert kfold_partition(600, k, seed=1).k == k


@pytest.mark.parametrize("n, k", [(5, 6), (10, 1), (10, 0), (10, 2.5)])
def test_kfold_invalid(n, k):
    with pytest.raises(ValidationError):
        kfold_partition(n, k, seed=0)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 400), st.integers(2, 40), st.integers(0, 2**31))
def test_kfold_partition_properties(n, k, seed):
    if k > n:
        return
    folds = kfold_partition(n, k, seed)
    groups = [folds.test_rows(f) for f in range(k)]
    assert all_partitions_cover(n, groups)
    assert np.ptp(folds.sizes) <= 1
    for f in range(k):
        assert np.intersect1d(folds.train_rows(f), folds.test_rows(f)).size == 0
        assert folds.train_rows(f).size + folds.test_rows(f).size == n


# ---------------------------------------------------------------- metrics


def test_worked_example():
    r = compute_metrics(*worked_example(), n_classes=2)
    assert r.accuracy == pytest.approx(0.7, abs=1e-12)
    assert r.precision[0] == pytest.approx(0.8, abs=1e-12)
    assert r.recall[0] == pytest.approx(2 / 3, abs=1e-12)
    assert r.f1[0] == pytest.approx(2 * 0.8 * (2 / 3) / (0.8 + 2 / 3), abs=1e-12)
    assert r.f1[0] == pytest.approx(0.7273, abs=1e-4)


def test_worked_example_with_class_a_doubled():
    r = compute_metrics(*worked_example(scale_a=2.0), n_classes=2)
    np.testing.assert_array_equal(r.confusion, [[80, 40], [10, 30]])
    assert r.accuracy == pytest.approx(110 / 160, abs=1e-15)
    assert r.accuracy == pytest.approx(0.6875, abs=1e-15)


def test_perfect_predictions():
    y = np.array([0, 1, 2, 2, 4])
    r = compute_metrics(y, y)
    assert r.accuracy == 1.0
    defined = r.support > 0
    assert np.all(r.precision[defined] == 1) and np.all(r.recall[defined] == 1) and np.all(r.f1[defined] == 1)


def test_undefined_markers():
    r = compute_metrics([0, 0, 1], [0, 1, 1])
    # class 3 never occurs and is never predicted
    assert math.isnan(r.recall[3]) and math.isnan(r.f1[3])
    assert r.precision[3] == 0 and r.precision_undefined[3]
    assert not r.precision_undefined[0]
    doc = r.to_dict()
    assert doc["recall"][3] is None and len(doc["confusion"]) == 25
    json.dumps(doc, allow_nan=False)


def test_predicted_but_absent_class_has_zero_precision():
    r = compute_metrics([0, 0], [0, 2])
    assert r.precision[2] == 0 and not r.precision_undefined[2]
    assert math.isnan(r.recall[2])


def test_metric_errors():
    with pytest.raises(ShapeError):
        compute_metrics([0, 1], [0])
    with pytest.raises(ShapeError):
        compute_metrics([0, 1], [0, 1], [1.0])
    with pytest.raises(ValidationError):
        compute_metrics([], [])
    with pytest.raises(ValidationError):
        compute_metrics([0, 1], [0, 1], [1.0, 0.0])
    with pytest.raises(ValidationError):
        compute_metrics([0, 5], [0, 1])


labels = st.integers(0, 4)


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(labels, labels, st.floats(1e-3, 1e3)), min_size=1, max_size=60))
def test_metric_identities(rows):
    y, p, w = (np.array(a) for a in zip(*rows))
    r = compute_metrics(y, p, w)
    M = r.confusion
    assert np.all(M >= 0)
    assert M.sum() == pytest.approx(w.sum(), rel=1e-12)
    assert r.accuracy == pytest.approx(np.trace(M) / M.sum(), abs=1e-12)
    assert 0 <= r.accuracy <= 1
    has = r.support > 0
    # accuracy is the support-weighted mean of per-class recall
    assert r.accuracy == pytest.approx(np.sum(r.support[has] * r.recall[has]) / r.support.sum(), abs=1e-12)
    assert r.accuracy == pytest.approx(weighted_accuracy(y, p, w), abs=1e-12)
    both = has & (r.precision + np.nan_to_num(r.recall) > 0)
    hm = 2 * r.precision[both] * r.recall[both] / (r.precision[both] + r.recall[both])
    np.testing.assert_allclose(r.f1[both], hm, atol=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(labels, labels, st.floats(1e-3, 1e3)), min_size=1, max_size=60),
       st.floats(1e-3, 1e3))
def test_metrics_invariant_to_weight_scale(rows, c):
    y, p, w = (np.array(a) for a in zip(*rows))
    a, b = compute_metrics(y, p, w), compute_metrics(y, p, w * c)
    assert b.accuracy == pytest.approx(a.accuracy, abs=1e-12)
    for name in ("precision", "recall", "f1"):
        np.testing.assert_allclose(getattr(b, name), getattr(a, name), atol=1e-12)
    np.testing.assert_array_equal(a.precision_undefined, b.precision_undefined)


# ---------------------------------------------------------------- cross validation


def test_constant_predictor_scores_majority_share():
    # 5585 parcel rows out of 10000, unit weights: the weighted majority share is 0.5585
    counts = [1658, 2606, 5585, 136, 15]
    y = np.repeat(np.arange(5), counts)
    data = make_data(np.random.default_rng(0).normal(size=(y.size, 3)), y)
    assert weighted_mode_shares(data).max() == pytest.approx(0.5585, abs=1e-12)
    # zero boosting stages always predicts the weighted training majority
    cv = cross_validate(LearnerSpec("BOOST", {"n_stages": 0}), data, 10, seed=2)
    assert len(cv.accuracies) == 10
    for f, acc in enumerate(cv.accuracies):
        fold = data.labels[cv.folds.test_rows(f)]
        assert acc == pytest.approx(np.mean(fold == 2), abs=1e-12)
        assert acc == pytest.approx(0.5585, abs=0.05)
    # equal fold sizes and unit weights: the mean is the overall share exactly
    assert cv.mean == pytest.approx(0.5585, abs=1e-12)


def test_cross_validate_is_deterministic(synth_small):
    spec = LearnerSpec("CART", {"max_depth": 4})
    a = cross_validate(spec, synth_small, 10, seed=5)
    b = cross_validate(spec, synth_small, 10, seed=5)
    assert a.accuracies == b.accuracies
    np.testing.assert_array_equal(a.folds.fold_of, b.folds.fold_of)
    assert len(a.accuracies) == 10 and a.std >= 0
    assert a.std == pytest.approx(np.std(a.accuracies, ddof=1), abs=1e-15)


def test_cross_validate_unweighted_modes(synth_small):
    spec = LearnerSpec("NB")
    a = cross_validate(spec, synth_small, 5, seed=1, weighted_eval=False)
    folds = kfold_partition(synth_small.n_samples, 5, 1)
    for f in range(5):
        model = fit(spec, synth_small.subset(folds.train_rows(f)))
        part = synth_small.subset(folds.test_rows(f))
        assert a.accuracies[f] == pytest.approx(np.mean(model.predict(part.features) == part.labels), abs=1e-15)
    b = cross_validate(spec, synth_small, 5, seed=1, fit_weights=False)
    assert len(b.accuracies) == 5


def test_fold_models_never_see_their_fold(monkeypatch, synth_small):
    import freightmode.evaluation as ev

    seen = []
    real_fit = ev.fit

    def spy(spec, data):
        seen.append(data.row_ids.copy())
        return real_fit(spec, data)

    monkeypatch.setattr(ev, "fit", spy)
    cv = cross_validate(LearnerSpec("NB"), synth_small, 10, seed=0)
    for f, ids in enumerate(seen):
        held = synth_small.row_ids[cv.folds.test_rows(f)]
        assert np.intersect1d(ids, held).size == 0
        assert ids.size + held.size == synth_small.n_samples


def test_fold_error_names_the_fold():
    # each training part has two rows, fewer than the three neighbours asked for
    X = np.arange(4.0)
    data = make_data(X, [0, 1, 0, 1])
    with pytest.raises(FoldError) as exc:
        cross_validate(LearnerSpec("KNN", {"k": 3}), data, 2, seed=0)
    assert exc.value.fold in (0, 1)
    assert "fold" in str(exc.value)


# ---------------------------------------------------------------- grid


def test_derive_seed_is_stable_and_key_sensitive():
    a = derive_seed(1, "holdout", None, 0.3)
    assert a == derive_seed(1, "holdout", None, 0.3)
    assert a != derive_seed(2, "holdout", None, 0.3)
    assert a != derive_seed(1, "holdout", None, 0.4)
    assert 0 <= a < 2**63


def test_grid_config_validation():
    with pytest.raises(ValidationError):
        GridConfig(families=("XGB",))
    with pytest.raises(ValidationError):
        GridConfig(ratios=(1.5,))
    with pytest.raises(ValidationError):
        GridConfig(folds=(1,))
    with pytest.raises(ValidationError):
        GridConfig(sample_sizes=(1,))


def test_default_grid_has_162_cells():
    cfg = GridConfig()
    assert len(cfg.cells()) == 162
    assert cfg.ratios == (0.1, 0.2, 0.3, 0.4, 0.5, 0.6) and cfg.folds == (10, 20, 30)
    assert len({c for c in cfg.cells()}) == 162


def test_single_cell_grid(synth_small):
    cfg = GridConfig(families=("NB",), ratios=(0.3,), folds=(5,), seed=4)
    res = run_experiment_grid(cfg, synth_small)
    assert len(res.rows) == 1 and res.n_errors == 0
    row = res.rows[0]
    assert row["n_train"] + row["n_test"] == synth_small.n_samples == row["n_rows"]
    assert len(row["cv_accuracies"]) == 5 and row["cv_std"] >= 0
    assert row["test_accuracy"] == row["metrics"]["accuracy"]


def grid_text(data, **kw):
    cfg = GridConfig(**{"families": ("NB", "CART"), "ratios": (0.2, 0.4), "folds": (2, 3), "seed": 9, **kw})
    res = run_experiment_grid(cfg, data)
    return res, results_csv(res.rows) + results_jsonl(res.rows)


def test_grid_shape_and_determinism(synth_small):
    res, text = grid_text(synth_small)
    assert len(res.rows) == 8
    keys = [(r["family"], r["split_ratio"], r["n_folds"], r["sample_size"]) for r in res.rows]
    assert len(set(keys)) == 8
    assert text == grid_text(synth_small)[1]
    assert text != grid_text(synth_small, seed=10)[1]
    assert results_csv(res.rows).splitlines()[0].split(",") == RESULT_COLUMNS


def test_families_share_rows_within_a_cell(synth_small):
    res, _ = grid_text(synth_small)
    by = {}
    for r in res.rows:
        by.setdefault((r["split_ratio"], r["n_folds"]), set()).add((r["n_train"], round(r["metrics"]["support"][2], 6)))
    assert all(len(v) == 1 for v in by.values())


def test_oversized_sample_is_a_cell_error(synth_small):
    cfg = GridConfig(families=("NB",), ratios=(0.3,), folds=(2,), sample_sizes=(100, 10**6))
    sunk = []
    res = run_experiment_grid(cfg, synth_small, sink=sunk.append)
    assert [r["status"] for r in res.rows] == ["ok", "error"]
    assert "exceeds" in res.rows[1]["error"] and res.n_errors == 1
    assert len(sunk) == 2
    assert res.rows[0]["n_rows"] == 100


def test_parallel_grid_matches_serial(synth_small):
    cfg = GridConfig(families=("NB", "KNN"), ratios=(0.3,), folds=(2, 3), seed=1)
    serial = run_experiment_grid(cfg, synth_small)
    par = run_experiment_grid(cfg, synth_small, workers=2)
    assert results_jsonl(serial.rows) == results_jsonl(par.rows)


def test_keep_models(synth_small):
    cfg = GridConfig(families=("CART",), ratios=(0.3,), folds=(2,))
    res = run_experiment_grid(cfg, synth_small, keep_models=True)
    assert list(res.models) == [("CART", 0.3, 2, None)]


def test_derived_tables(synth_small):
    res, _ = grid_text(synth_small)
    assert len(cv_folds_csv(res.rows).splitlines()) == 1 + 4 * (2 + 3)
    assert len(per_mode_csv(res.rows).splitlines()) == 1 + 8 * 5
    assert len(size_accuracy_csv(res.rows).splitlines()) == 1 + 8


def test_weight_scale_leaves_grid_unchanged(synth_small):
    cfg = GridConfig(families=("CART", "NB"), ratios=(0.3,), folds=(3,), seed=2)
    a = run_experiment_grid(cfg, synth_small).rows
    b = run_experiment_grid(cfg, synth_small.with_weights(synth_small.weights * 7)).rows
    for ra, rb in zip(a, b):
        np.testing.assert_allclose(ra["cv_accuracies"], rb["cv_accuracies"], atol=1e-12)
        assert rb["test_accuracy"] == pytest.approx(ra["test_accuracy"], abs=1e-12)


# ---------------------------------------------------------------- sanity


def test_noise_free_data_beats_the_majority_share():
    data = synthetic_dataset(SyntheticSpec(3000, seed=5, noise_level=0.0))
    train, test = holdout_split(data, 0.3, seed=0)
    majority = weighted_mode_shares(test).max()
    for fam in Family:
        model = fit(LearnerSpec(fam, seed=0), train)
        acc = weighted_accuracy(test.labels, model.predict(test.features), test.weights)
        assert acc >= majority, fam


def test_random_labels_do_not_leak_into_cv():
    # labels independent of features: CV accuracy stays near chance for a memorising learner
    rng = np.random.default_rng(3)
    data = random_data(rng, n=600, n_classes=2)
    cv = cross_validate(LearnerSpec("KNN", {"k": 1}), data, 10, seed=0, weighted_eval=False)
    assert cv.mean < 0.6
