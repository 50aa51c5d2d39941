"""Training loop: config surface, optimization invariants, reproducibility."""

from __future__ import annotations

import numpy as np
import pytest

import softinterp.training as training
from softinterp.autodiff import NonFiniteLoss
from softinterp.baselines import MilTransformer
from softinterp.corpus import CorpusManifest, Example, generate_corpus
from softinterp.encoder import EncoderConfig
from softinterp.features import build_batch
from softinterp.softexec import ModulationConfig, SoftInterpreterModel
from softinterp.training import (
    HISTORY_HEADER,
    LEARNING_RATE_GRID,
    TrainConfig,
    build_model,
    clip_global_norm,
    config_from_dict,
    config_to_dict,
    evaluate_checkpoint,
    evaluate_model,
    load_config,
    load_model,
    save_config,
    sgd_step,
    train,
)

TINY_ENCODER = EncoderConfig(layers=1, heads=2, embed_dim=8, mlp_dim=16)


def tiny_config(**overrides) -> TrainConfig:
    base = dict(
        learning_rate=0.1,
        max_steps=30,
        batch_size=4,
        seed=1,
        model_kind="exception",
        encoder=TINY_ENCODER,
        hidden_size=8,
    )
    base.update(overrides)
    return TrainConfig(**base)


@pytest.fixture(scope="module")
def manifest() -> CorpusManifest:
    return generate_corpus(seed=5, size=200)


@pytest.fixture(scope="module")
def two_example_manifest() -> CorpusManifest:
    # smallest corpus balanced batching admits: one example per stratum
    return CorpusManifest(
        seed=0,
        examples=(
            Example(uid=0, problem_id=0, split="train", source="x = 1\n", stdin=(),
                    description="no input", target=0, error_line=None),
            Example(uid=1, problem_id=1, split="train", source="y = 1 / 0\n", stdin=(),
                    description="no input", target=3, error_line=1),
        ),
    )


# --- config -------------------------------------------------------------------


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_config(learning_rate=-0.1)
    with pytest.raises(ValueError):
        tiny_config(max_steps=0)
    with pytest.raises(ValueError):
        tiny_config(model_kind="gru")
    with pytest.raises(ValueError):
        tiny_config(model_kind="mil-weird")


def test_grid_mode_restricts_learning_rate():
    with pytest.raises(ValueError):
        tiny_config(learning_rate=0.05, grid=True)
    for rate in LEARNING_RATE_GRID:
        assert tiny_config(learning_rate=rate, grid=True).learning_rate == rate


def test_description_methods_limited_to_token_models():
    film = ModulationConfig(method="film")
    with pytest.raises(ValueError):
        tiny_config(model_kind="transformer", modulation=film)
    # docstring injection works for any token-reading model
    cfg = tiny_config(model_kind="transformer", modulation=ModulationConfig(method="docstring"))
    assert cfg.modulation.method == "docstring"


def test_model_kind_registry(manifest):
    for kind, cls in [
        ("exception", SoftInterpreterModel),
        ("base", SoftInterpreterModel),
        ("mil-local", MilTransformer),
        ("mil-global-max", MilTransformer),
    ]:
        model = build_model(tiny_config(model_kind=kind), vocab_size=50)
        assert isinstance(model, cls)
    assert build_model(tiny_config(model_kind="base"), 50).exception is False
    assert build_model(tiny_config(model_kind="mil-global-max"), 50).mil_config.aggregation == "max"
    assert build_model(tiny_config(model_kind="mil-local"), 50).mil_config.aggregation == "logsumexp"


def test_config_file_round_trip(tmp_path):
    cfg = tiny_config(
        model_kind="base",
        modulation=ModulationConfig(method="docstring"),
        grid=True,
        learning_rate=0.3,
    )
    path = tmp_path / "train.cfg"
    save_config(cfg, str(path))
    assert load_config(str(path)) == cfg


def test_config_keys_match_field_names():
    keys = set(config_to_dict(tiny_config()))
    assert {"learning_rate", "clip_norm", "max_steps", "batch_size", "seed",
            "model_kind", "hidden_size", "grid"} <= keys
    assert "modulation.method" in keys
    assert "encoder.embed_dim" in keys


def test_config_file_rejects_unknown_keys(tmp_path):
    path = tmp_path / "bad.cfg"
    path.write_text("learning_rate = 0.1\nmomentum = 0.9\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_config(str(path))
    path.write_text("encoder.window = 3\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_config(str(path))
    path.write_text("no equals sign here\n", encoding="utf-8")
    with pytest.raises(ValueError):
        load_config(str(path))


def test_config_file_allows_comments_and_blanks(tmp_path):
    path = tmp_path / "ok.cfg"
    path.write_text("# a comment\n\nlearning_rate = 0.3\n", encoding="utf-8")
    assert load_config(str(path)).learning_rate == 0.3


def test_config_bool_parsing():
    assert config_from_dict({"grid": "false"}).grid is False
    with pytest.raises(ValueError):
        config_from_dict({"grid": "yes"})


# --- optimization primitives -----------------------------------------------------


def test_clip_global_norm_bounds_gradients(manifest):
    from softinterp.corpus import build_vocabulary, features_for

    vocab = build_vocabulary(manifest)
    model = build_model(tiny_config(), len(vocab))
    feats = [features_for(e, vocab, "none") for e in manifest.split("train")[:4]]
    for clip in (0.5, 1.0):
        batch = build_batch(feats, model.encoder_config)
        loss, _ = model.loss(batch)
        loss.backward()
        before = clip_global_norm(model.store.tensors(), clip)
        after = float(np.sqrt(sum(
            float((t.grad * t.grad).sum())
            for t in model.store.tensors() if t.grad is not None
        )))
        assert after <= min(before, clip) + 1e-9
        sgd_step(model.store.tensors(), 0.0)  # clears gradients


def test_clip_zero_disables_clipping(manifest):
    from softinterp.corpus import build_vocabulary, features_for

    vocab = build_vocabulary(manifest)
    model = build_model(tiny_config(), len(vocab))
    feats = [features_for(e, vocab, "none") for e in manifest.split("train")[:4]]
    batch = build_batch(feats, model.encoder_config)
    loss, _ = model.loss(batch)
    loss.backward()
    norm = clip_global_norm(model.store.tensors(), 0.0)
    still = clip_global_norm(model.store.tensors(), 0.0)
    assert norm == pytest.approx(still)  # untouched by the disabled clip
    assert norm > 0


# --- training loop ----------------------------------------------------------------


def test_zero_learning_rate_leaves_parameters_unchanged(manifest):
    cfg = tiny_config(learning_rate=0.0, max_steps=20)
    result = train(cfg, manifest, validate_every=10)
    fresh = build_model(cfg, len(result.vocab_tokens) + 3)
    for name, values in fresh.store.as_arrays().items():
        assert np.array_equal(result.arrays[name], values), name


def test_overfit_two_examples(two_example_manifest):
    cfg = tiny_config(learning_rate=0.3, max_steps=800, batch_size=2)
    result = train(cfg, two_example_manifest, validate_every=100)
    losses = [row[1] for row in result.history]
    assert min(losses) < 0.01
    first, second = losses[: len(losses) // 2], losses[len(losses) // 2 :]
    assert np.mean(second) < np.mean(first)  # decreasing on average


def test_non_finite_loss_aborts_with_uid(manifest, monkeypatch):
    original = training.build_model

    def poisoned(config, vocab_size):
        model = original(config, vocab_size)
        name = model.store.names()[0]
        model.store[name].data[...] = np.nan
        return model

    monkeypatch.setattr(training, "build_model", poisoned)
    with pytest.raises(NonFiniteLoss, match="uid="):
        train(tiny_config(max_steps=5), manifest, validate_every=5)


def test_history_format_and_cadence(manifest, tmp_path):
    cfg = tiny_config(max_steps=25)
    out = tmp_path / "run"
    result = train(cfg, manifest, out_dir=str(out), validate_every=10)
    assert [row[0] for row in result.history] == [10, 20, 25]
    text = (out / "history.csv").read_text(encoding="utf-8")
    lines = text.strip().split("\n")
    assert lines[0] == HISTORY_HEADER
    assert len(lines) == 4
    step, loss, acc, f1 = lines[1].split(",")
    assert step == "10"
    for cell in (loss, acc, f1):
        float(cell)
        assert len(cell.split(".")[1]) == 6


def test_best_checkpoint_selection(manifest):
    result = train(tiny_config(max_steps=30), manifest, validate_every=10)
    f1_by_step = {row[0]: row[3] for row in result.history}
    best = max(f1_by_step.values())
    assert result.best_val_weighted_f1 == pytest.approx(best)
    assert f1_by_step[result.best_step] == pytest.approx(best)
    # first step achieving the maximum wins ties
    assert result.best_step == min(s for s, v in f1_by_step.items() if v == best)


def test_checkpoint_round_trip(manifest, tmp_path):
    out = tmp_path / "run"
    cfg = tiny_config(max_steps=10, modulation=ModulationConfig(method="film"))
    result = train(cfg, manifest, out_dir=str(out), validate_every=5)
    model, loaded_cfg, vocab = load_model(str(out / "checkpoint.bin"))
    assert loaded_cfg == cfg
    assert len(vocab) == len(result.vocab_tokens) + 3
    for name, values in model.store.as_arrays().items():
        assert np.array_equal(values, result.arrays[name]), name
    report = evaluate_checkpoint(str(out / "checkpoint.bin"), manifest, "test")
    assert 0.0 <= report.accuracy <= 1.0
    assert report.localization_support > 0  # exception model localizes


def test_reproducible_runs_byte_identical(manifest, tmp_path):
    cfg = tiny_config(max_steps=20)
    a, b = tmp_path / "a", tmp_path / "b"
    train(cfg, manifest, out_dir=str(a), validate_every=10)
    train(cfg, manifest, out_dir=str(b), validate_every=10)
    assert (a / "checkpoint.bin").read_bytes() == (b / "checkpoint.bin").read_bytes()
    assert (a / "history.csv").read_bytes() == (b / "history.csv").read_bytes()


def test_different_seed_changes_training(manifest):
    r1 = train(tiny_config(max_steps=10, seed=1), manifest, validate_every=10)
    r2 = train(tiny_config(max_steps=10, seed=2), manifest, validate_every=10)
    assert any(
        not np.array_equal(r1.arrays[name], r2.arrays[name]) for name in r1.arrays
    )


def test_evaluate_model_without_localization(manifest):
    from softinterp.corpus import build_vocabulary

    cfg = tiny_config(model_kind="transformer")
    vocab = build_vocabulary(manifest)
    model = build_model(cfg, len(vocab))
    report = evaluate_model(model, "none", manifest, "test", vocab)
    assert report.localization_support == 0
    assert report.confusion.sum() == len(manifest.split("test"))


def test_empty_train_split_rejected():
    empty = CorpusManifest(seed=0, examples=())
    with pytest.raises(ValueError):
        train(tiny_config(), empty)
