import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import lakecause.classify as classify_mod
from lakecause.causal import CausalGraph, ParentLink
from lakecause.classify import (
    DEFAULT_ALPHAS,
    ClassifyError,
    LeakageError,
    PipelineConfig,
    RidgeModel,
    fit_pipeline,
    load_model,
    loo_errors,
    predict,
    ridge_fit,
    ridge_predict,
    ridge_solve,
    run_pipeline,
    save_model,
    standardize,
    union_spec,
)
from lakecause.core import CLASSES, Dataset, VariableId

HV, S2 = VariableId.HV_ANOM, VariableId.S2_WATER
FAST = PipelineConfig(budget=840)


def normal_equations(Xs, Y, alpha):
    Yc = Y - Y.mean(axis=0)
    return np.linalg.solve(Xs.T @ Xs + alpha * np.eye(Xs.shape[1]), Xs.T @ Yc)


def explicit_loo(Xs, Y, alpha):
    total = 0.0
    for i in range(len(Xs)):
        keep = np.arange(len(Xs)) != i
        Xt, Yt = Xs[keep], Y[keep]
        mx, my = Xt.mean(axis=0), Yt.mean(axis=0)
        w = np.linalg.solve((Xt - mx).T @ (Xt - mx) + alpha * np.eye(Xs.shape[1]), (Xt - mx).T @ (Yt - my))
        pred = my + (Xs[i] - mx) @ w
        total += float(np.sum((Y[i] - pred) ** 2))
    return total


def _labels(rng, n, k=3):
    y = np.array([CLASSES[i % k] for i in range(n)])
    rng.shuffle(y)
    return y


# -- ridge oracles -----------------------------------------------------------------------


@pytest.mark.parametrize("shape", [(5, 3), (3, 5), (20, 40)])
def test_closed_form_matches_normal_equations(shape):
    rng = np.random.default_rng(sum(shape))
    for trial in range(20):
        Xs, _, _ = standardize(rng.normal(size=shape))
        Y = rng.choice([-1.0, 1.0], size=(shape[0], 2))
        for alpha in (1e-3, 0.7, 10.0):
            coef, intercept = ridge_solve(Xs, Y, alpha)
            np.testing.assert_allclose(coef, normal_equations(Xs, Y, alpha), rtol=0, atol=1e-8)
            np.testing.assert_allclose(intercept, Y.mean(axis=0), atol=1e-12)


@pytest.mark.parametrize("shape", [(5, 3), (8, 20), (20, 5), (12, 12)])
def test_loo_matches_explicit_retraining(shape):
    rng = np.random.default_rng(shape[0] * 100 + shape[1])
    for trial in range(5):
        X = rng.normal(size=shape)
        y = _labels(rng, shape[0])
        model = ridge_fit(X, y, DEFAULT_ALPHAS)
        Xs, _, _ = standardize(X)
        Y = np.where(y[:, None] == np.array(model.classes)[None, :], 1.0, -1.0)
        oracle = np.array([explicit_loo(Xs, Y, a) for a in DEFAULT_ALPHAS])
        np.testing.assert_allclose(model.loo_errors, oracle, rtol=0, atol=1e-6)
        assert model.alpha == DEFAULT_ALPHAS[int(np.argmin(oracle))]


def test_separable_blobs():
    rng = np.random.default_rng(0)
    X = np.vstack([rng.normal(-3, 0.5, size=(30, 2)), rng.normal(3, 0.5, size=(30, 2))])
    y = np.array(["refreeze"] * 30 + ["buried"] * 30)
    model = ridge_fit(X, y, alphas=(0.01, 1.0, 100.0))
    assert (ridge_predict(X, model) == y).all()


def test_huge_alpha_shrinks_weights():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(30, 6)) * 4.0
    y = _labels(rng, 30, 4)
    Xs, _, _ = standardize(X)
    Y = np.where(y[:, None] == np.array(CLASSES)[None, :], 1.0, -1.0)
    coef, _ = ridge_solve(Xs, Y, 1e9)
    assert np.linalg.norm(coef) < 1e-3 * np.abs(X).max()
    model = ridge_fit(X, y, DEFAULT_ALPHAS + (1e9,))
    assert np.isfinite(model.loo_errors[model.alphas.index(model.alpha)])


def test_fit_errors():
    X = np.zeros((4, 2))
    with pytest.raises(ClassifyError, match="single class"):
        ridge_fit(X, ["buried"] * 4)
    with pytest.raises(ClassifyError):
        ridge_fit(X[:1], ["buried"])
    with pytest.raises(ClassifyError):
        ridge_fit(np.array([[0.0, np.nan], [1, 2]]), ["buried", "refreeze"])
    with pytest.raises(ClassifyError):
        ridge_fit(X, ["buried", "refreeze"] * 2, alphas=())
    with pytest.raises(ClassifyError):
        ridge_fit(X, ["buried", "refreeze"] * 2, alphas=(-1.0,))


def test_zero_variance_column_and_schema_check():
    X = np.column_stack([np.arange(6.0), np.ones(6)])
    y = ["buried", "buried", "buried", "refreeze", "refreeze", "refreeze"]
    model = ridge_fit(X, y)
    assert model.scale[1] == 1.0
    with pytest.raises(ClassifyError, match="schema"):
        ridge_predict(np.zeros((2, 3)), model)


def _model(weights, intercepts, classes=CLASSES):
    p = weights.shape[0]
    return RidgeModel(weights, intercepts, 1.0, np.zeros(p), np.ones(p), tuple(classes))


def test_ties_follow_canonical_order():
    model = _model(np.zeros((3, 4)), np.zeros(4))
    assert list(ridge_predict(np.random.default_rng(0).normal(size=(5, 3)), model)) == ["refreeze"] * 5
    tied = _model(np.zeros((1, 4)), np.array([0.0, 1.0, 1.0, 0.5]))
    assert ridge_predict(np.zeros((1, 1)), tied)[0] == "buried"


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 2**31), k=st.floats(1e-3, 1e3))
def test_positive_score_scaling_keeps_predictions(seed, k):
    rng = np.random.default_rng(seed)
    W, b, X = rng.normal(size=(4, 4)), rng.normal(size=4), rng.normal(size=(10, 4))
    assert (ridge_predict(X, _model(W, b)) == ridge_predict(X, _model(k * W, k * b))).all()


@settings(max_examples=20, deadline=None)
@given(seed=st.integers(0, 2**31))
def test_column_permutation_invariance(seed):
    rng = np.random.default_rng(seed)
    centres = rng.normal(0, 4, size=(3, 6))
    y = _labels(rng, 45)
    X = centres[[CLASSES.index(c) for c in y]] + rng.normal(size=(45, 6))
    perm = rng.permutation(6)
    a = ridge_fit(X, y)
    b = ridge_fit(X[:, perm], y)
    assert a.alpha == b.alpha
    np.testing.assert_allclose(b.weights, a.weights[perm], atol=1e-9)
    Xt = centres[[0, 1, 2] * 3] + rng.normal(size=(9, 6))
    assert (ridge_predict(Xt, a) == ridge_predict(Xt[:, perm], b)).all()


def test_model_round_trip(tmp_path):
    rng = np.random.default_rng(2)
    model = ridge_fit(rng.normal(size=(12, 5)), _labels(rng, 12))
    path = tmp_path / "m.json"
    save_model(model, path, extra={"channel_spec": [["hv_anom", 1]]})
    assert load_model(path).same(model)


def test_loo_function_agrees_with_fit():
    rng = np.random.default_rng(5)
    X = rng.normal(size=(10, 4))
    y = _labels(rng, 10)
    model = ridge_fit(X, y)
    Xs, _, _ = standardize(X)
    Y = np.where(y[:, None] == np.array(model.classes)[None, :], 1.0, -1.0)
    np.testing.assert_allclose(loo_errors(Xs, Y, DEFAULT_ALPHAS), model.loo_errors, rtol=1e-12)


# -- pipeline ---------------------------------------------------------------------------


def test_config_validation():
    for bad in (dict(variant="deep"), dict(graph_source="mixed"), dict(alphas=()), dict(discovery_lakes=-1)):
        with pytest.raises(ClassifyError):
            PipelineConfig(**bad)


def test_train_equals_test_is_leakage(small_synth):
    ds, _ = small_synth
    with pytest.raises(LeakageError):
        run_pipeline(ds, ds, FAST)


def test_baseline_never_discovers(small_synth, monkeypatch):
    ds, _ = small_synth

    def forbidden(*args, **kwargs):
        raise AssertionError("baseline variant ran causal discovery")

    monkeypatch.setattr(classify_mod, "discover_parents", forbidden)
    monkeypatch.setattr(classify_mod, "pool_lakes", forbidden)
    art = fit_pipeline(ds, PipelineConfig(variant="baseline", budget=840))
    assert art.graphs == {}
    assert len(art.channel_spec) == 9


def test_causal_pipeline_uses_discovered_parents(small_synth):
    ds, _ = small_synth
    train = ds.subset(lambda l: not l.lake_id.endswith("002"))
    test = ds.subset(lambda l: l.lake_id.endswith("002"))
    preds, art = run_pipeline(train, test, FAST)
    assert set(art.graphs) == {"all"}
    assert art.channel_spec == tuple(art.graphs["all"].parents(HV, include_context=False))
    assert len(preds) == len(test)
    again, art2 = run_pipeline(train, test, FAST)
    assert (preds == again).all() and art.same(art2)
    assert (predict(art, test, jobs=3) == preds).all()


def test_per_region_graphs_union(small_synth):
    ds, _ = small_synth
    art = fit_pipeline(ds, PipelineConfig(graph_source="per_region", budget=840, discovery_lakes=4))
    assert set(art.graphs) == set(ds.regions)
    expected = set()
    for g in art.graphs.values():
        expected |= set(g.parents(HV, include_context=False))
    assert set(art.channel_spec) == expected


def test_union_spec_sorted_and_dummies():
    g1 = CausalGraph(7, 0.01, {HV: (ParentLink(S2, 1, 0.0, 0.1), ParentLink(VariableId.R_DUMMY, 0, 0.0, 0.1))})
    g2 = CausalGraph(7, 0.01, {HV: (ParentLink(HV, 2, 0.0, 0.1), ParentLink(S2, 1, 0.0, 0.1))})
    assert union_spec({"CW": g1, "NE": g2}, False) == ((HV, 2), (S2, 1))
    assert union_spec({"CW": g1, "NE": g2}, True) == ((HV, 2), (S2, 1), (VariableId.R_DUMMY, 0))


def test_test_content_cannot_change_artifacts(small_synth):
    ds, _ = small_synth
    train = Dataset(ds.lakes[::2])
    test = Dataset(ds.lakes[1::2])
    rng = np.random.default_rng(0)
    noisy = Dataset(tuple(l.replace(series=rng.normal(size=l.series.shape)) for l in test.lakes))
    _, a = run_pipeline(train, test, FAST)
    _, b = run_pipeline(train, noisy, FAST)
    assert a.same(b)
