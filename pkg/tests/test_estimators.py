"""Estimator facade: scikit-learn protocol compliance and end-to-end use."""

from __future__ import annotations

import numpy as np
import pytest
from sklearn.base import clone

from softinterp import ErrorPredictor, NotFittedError, generate_corpus

FAST = dict(
    max_steps=20,
    batch_size=4,
    hidden_size=8,
    encoder_layers=1,
    encoder_heads=2,
    encoder_embed_dim=8,
    encoder_mlp_dim=16,
    learning_rate=0.1,
    validate_every=10,
)


@pytest.fixture(scope="module")
def manifest():
    return generate_corpus(seed=13, size=200)


@pytest.fixture(scope="module")
def fitted(manifest):
    return ErrorPredictor(**FAST).fit(manifest)


def test_get_params_round_trip():
    est = ErrorPredictor(model_kind="mil-local", learning_rate=0.3)
    params = est.get_params()
    rebuilt = ErrorPredictor(**params)
    assert rebuilt.get_params() == params


def test_set_params_returns_self_and_updates():
    est = ErrorPredictor()
    out = est.set_params(model_kind="lstm", hidden_size=12)
    assert out is est
    assert est.model_kind == "lstm"
    assert est.hidden_size == 12
    with pytest.raises(ValueError):
        est.set_params(momentum=0.9)


def test_sklearn_clone_compatibility():
    est = ErrorPredictor(model_kind="transformer", modulation="docstring", seed=9)
    copy = clone(est)
    assert copy is not est
    assert copy.get_params() == est.get_params()
    assert not hasattr(copy, "model_")


def test_unfitted_predict_raises(manifest):
    with pytest.raises(NotFittedError):
        ErrorPredictor().predict(manifest.split("test"))


def test_fit_predict_shapes(fitted, manifest):
    test = manifest.split("test")
    y = fitted.predict(test)
    assert y.shape == (len(test),)
    assert y.dtype == np.int64
    proba = fitted.predict_proba(test)
    assert proba.shape == (len(test), 8)
    np.testing.assert_allclose(proba.sum(axis=1), 1.0, atol=1e-9)
    assert np.array_equal(proba.argmax(axis=1), y)


def test_predict_line_for_exception_model(fitted, manifest):
    lines = fitted.predict_line(manifest.split("test"))
    assert lines.shape == (len(manifest.split("test")),)
    assert (lines >= 1).all()  # the injected line 0 is never predicted


def test_predict_line_rejected_for_plain_classifier(manifest):
    est = ErrorPredictor(model_kind="transformer", **FAST).fit(manifest)
    with pytest.raises(ValueError):
        est.predict_line(manifest.split("test"))


def test_score_and_evaluate_agree(fitted, manifest):
    test = manifest.split("test")
    assert fitted.score(test) == pytest.approx(fitted.evaluate(manifest, "test").accuracy)


def test_mil_estimator_localizes(manifest):
    est = ErrorPredictor(model_kind="mil-global", **FAST).fit(manifest)
    lines = est.predict_line(manifest.split("test"))
    assert lines.shape == (len(manifest.split("test")),)


def test_save_load_round_trip(fitted, manifest, tmp_path):
    out = tmp_path / "est"
    fitted.save(str(out))
    loaded = ErrorPredictor.load(str(out / "checkpoint.bin"))
    test = manifest.split("test")
    assert np.array_equal(loaded.predict(test), fitted.predict(test))
    assert loaded.get_params()["model_kind"] == fitted.model_kind


def test_fit_is_seed_deterministic(manifest):
    a = ErrorPredictor(**FAST).fit(manifest)
    b = ErrorPredictor(**FAST).fit(manifest)
    test = manifest.split("test")
    assert np.array_equal(a.predict(test), b.predict(test))
    assert a.history_ == b.history_
