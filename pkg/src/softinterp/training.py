"""Training loop, configuration surface, checkpointing, and evaluation.

Training follows a fixed recipe: balanced batches, mean cross-entropy over
the 1+K classes, global-norm gradient clipping, plain SGD, periodic
validation, and model selection by validation weighted F1. Everything is
seeded and single-threaded, so identical (config, manifest) pairs produce
byte-identical history files and checkpoints.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, fields
from typing import Callable, Iterable, get_type_hints

import numpy as np

from .baselines import LstmBaseline, MilConfig, MilTransformer, TransformerBaseline
from .corpus import CorpusManifest, balanced_batches, build_vocabulary, features_for
from .encoder import EncoderConfig, Vocabulary
from .features import DESCRIPTION_METHODS, build_batch
from .layers import load_checkpoint, save_checkpoint
from .metrics import MetricsReport, evaluate_predictions
from .softexec import ModulationConfig, SoftInterpreterModel

LEARNING_RATE_GRID = (0.01, 0.03, 0.1, 0.3)
VALIDATE_EVERY = 500
HISTORY_HEADER = "step,loss,val_accuracy,val_weighted_f1"

_BASE_KINDS = ("exception", "base", "transformer", "lstm")
_MIL_LOCALITIES = ("local", "global")
_MIL_AGGREGATIONS = ("logsumexp", "max", "mean")


def _parse_model_kind(kind: str):
    """Return ("soft", exception) | ("transformer",) | ("lstm",) | ("mil", MilConfig)."""
    if kind == "exception":
        return ("soft", True)
    if kind == "base":
        return ("soft", False)
    if kind in ("transformer", "lstm"):
        return (kind,)
    parts = kind.split("-")
    if parts[0] == "mil" and len(parts) in (2, 3):
        locality = parts[1]
        aggregation = parts[2] if len(parts) == 3 else "logsumexp"
        if locality in _MIL_LOCALITIES and aggregation in _MIL_AGGREGATIONS:
            return ("mil", MilConfig(locality=locality, aggregation=aggregation))
    raise ValueError(
        f"unknown model-kind {kind!r}; expected one of {_BASE_KINDS} "
        f"or mil-<locality>[-<aggregation>]"
    )


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.03
    clip_norm: float = 1.0
    max_steps: int = 20_000
    batch_size: int = 32
    seed: int = 0
    model_kind: str = "exception"
    modulation: ModulationConfig = field(default_factory=ModulationConfig)
    encoder: EncoderConfig = field(default_factory=EncoderConfig)
    hidden_size: int = 64
    grid: bool = False

    def __post_init__(self) -> None:
        if self.learning_rate < 0 or self.clip_norm < 0:
            raise ValueError("learning_rate and clip_norm must be >= 0")
        if self.max_steps < 1 or self.batch_size < 1 or self.hidden_size < 1:
            raise ValueError("max_steps, batch_size, hidden_size must be >= 1")
        family = _parse_model_kind(self.model_kind)
        if self.grid and self.learning_rate not in LEARNING_RATE_GRID:
            raise ValueError(
                f"grid mode: learning_rate must be in {LEARNING_RATE_GRID}"
            )
        if family[0] != "soft" and self.modulation.method not in ("none", "docstring"):
            raise ValueError(
                f"model-kind {self.model_kind!r} only supports description "
                f"methods ('none', 'docstring'), got {self.modulation.method!r}"
            )


# --- flat key = value config files -------------------------------------------------


def _flatten(config) -> list[tuple[str, object]]:
    items: list[tuple[str, object]] = []
    for f in fields(config):
        value = getattr(config, f.name)
        if f.name in ("modulation", "encoder"):
            items.extend((f"{f.name}.{k}", v) for k, v in _flatten(value))
        else:
            items.append((f.name, value))
    return items


def config_to_dict(config: TrainConfig) -> dict[str, str]:
    out: dict[str, str] = {}
    for key, value in _flatten(config):
        out[key] = str(value).lower() if isinstance(value, bool) else str(value)
    return out


def _coerce(text: str, target_type) -> object:
    if target_type is bool:
        if text.lower() in ("true", "false"):
            return text.lower() == "true"
        raise ValueError(f"expected true/false, got {text!r}")
    return target_type(text)


def config_from_dict(pairs: dict[str, str]) -> TrainConfig:
    nested: dict[str, dict[str, str]] = {"modulation": {}, "encoder": {}}
    top: dict[str, str] = {}
    for key, value in pairs.items():
        if "." in key:
            head, _, tail = key.partition(".")
            if head not in nested:
                raise ValueError(f"unknown config key {key!r}")
            nested[head][tail] = value
        else:
            top[key] = value

    def build(cls, raw: dict[str, str]):
        hints = get_type_hints(cls)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys for {cls.__name__}: {sorted(unknown)}")
        kwargs = {name: _coerce(text, hints[name]) for name, text in raw.items()}
        return cls(**kwargs)

    scalar_names = {
        f.name for f in fields(TrainConfig) if f.name not in ("modulation", "encoder")
    }
    unknown = set(top) - scalar_names
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    hints = get_type_hints(TrainConfig)
    kwargs = {name: _coerce(text, hints[name]) for name, text in top.items()}
    if nested["modulation"]:
        kwargs["modulation"] = build(ModulationConfig, nested["modulation"])
    if nested["encoder"]:
        kwargs["encoder"] = build(EncoderConfig, nested["encoder"])
    return TrainConfig(**kwargs)


def save_config(config: TrainConfig, path: str) -> None:
    lines = [f"{key} = {value}" for key, value in config_to_dict(config).items()]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def load_config(path: str) -> TrainConfig:
    pairs: dict[str, str] = {}
    with open(path, "r", encoding="utf-8") as fh:
        for raw in fh:
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ValueError(f"bad config line {line!r}")
            key, _, value = line.partition("=")
            pairs[key.strip()] = value.strip()
    return config_from_dict(pairs)


# --- model construction -------------------------------------------------------------


def build_model(config: TrainConfig, vocab_size: int):
    family = _parse_model_kind(config.model_kind)
    if family[0] == "soft":
        return SoftInterpreterModel(
            vocab_size,
            encoder_config=config.encoder,
            modulation=config.modulation,
            hidden_size=config.hidden_size,
            exception=family[1],
            seed=config.seed,
        )
    if family[0] == "transformer":
        return TransformerBaseline(vocab_size, encoder_config=config.encoder, seed=config.seed)
    if family[0] == "lstm":
        return LstmBaseline(
            vocab_size,
            encoder_config=config.encoder,
            hidden_size=config.hidden_size,
            seed=config.seed,
        )
    return MilTransformer(
        vocab_size, mil_config=family[1], encoder_config=config.encoder, seed=config.seed
    )


def _supports_localization(model) -> bool:
    if isinstance(model, SoftInterpreterModel):
        return model.exception
    return isinstance(model, MilTransformer)


# --- optimization --------------------------------------------------------------------


def clip_global_norm(tensors: Iterable, clip_norm: float) -> float:
    """Scale all gradients so their joint norm is at most clip_norm (0 = off)."""
    grads = [t.grad for t in tensors if t.grad is not None]
    total = float(np.sqrt(sum(float((g * g).sum()) for g in grads)))
    if clip_norm > 0 and total > clip_norm:
        scale = clip_norm / total
        for g in grads:
            g *= scale
    return total


def sgd_step(tensors: Iterable, learning_rate: float) -> None:
    for t in tensors:
        if t.grad is not None:
            t.data -= learning_rate * t.grad
        t.zero_grad()


# --- training ------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainResult:
    config: TrainConfig
    arrays: dict[str, np.ndarray]  # best-validation parameters
    vocab_tokens: tuple[str, ...]
    history: tuple[tuple[int, float, float, float], ...]
    best_step: int
    best_val_weighted_f1: float


def _vocab_tokens(vocab: Vocabulary) -> tuple[str, ...]:
    return tuple(vocab.token_of(i) for i in range(3, len(vocab)))


class _FeatureCache:
    def __init__(self, vocab: Vocabulary, method: str):
        self.vocab = vocab
        self.method = method
        self._cache: dict[int, object] = {}

    def __call__(self, example):
        feats = self._cache.get(example.uid)
        if feats is None:
            feats = features_for(example, self.vocab, self.method)
            self._cache[example.uid] = feats
        return feats


def predict_split(
    model, cache: _FeatureCache, examples, batch_size: int = 32
) -> tuple[np.ndarray, np.ndarray | None]:
    """Class predictions (and predicted lines when the model localizes)."""
    preds: list[np.ndarray] = []
    lines: list[np.ndarray] = []
    localize = _supports_localization(model)
    for start in range(0, len(examples), batch_size):
        chunk = [cache(e) for e in examples[start : start + batch_size]]
        batch = build_batch(chunk, model.encoder_config)
        preds.append(model.predict(batch))
        if localize:
            lines.append(model.localize(batch))
    y_pred = np.concatenate(preds)
    return y_pred, (np.concatenate(lines) if localize else None)


def evaluate_model(
    model,
    method: str,
    manifest: CorpusManifest,
    split: str,
    vocab: Vocabulary,
    batch_size: int = 32,
) -> MetricsReport:
    examples = manifest.split(split)
    if not examples:
        raise ValueError(f"split {split!r} is empty")
    cache = _FeatureCache(vocab, method)
    y_pred, pred_lines = predict_split(model, cache, examples, batch_size)
    y_true = np.array([e.target for e in examples], dtype=np.int64)
    true_lines = np.array(
        [e.error_line if e.error_line is not None else -1 for e in examples],
        dtype=np.int64,
    )
    if pred_lines is None:
        return evaluate_predictions(y_true, y_pred)
    return evaluate_predictions(
        y_true, y_pred, true_lines=true_lines, pred_lines=pred_lines
    )


def train(
    config: TrainConfig,
    manifest: CorpusManifest,
    *,
    out_dir: str | None = None,
    validate_every: int = VALIDATE_EVERY,
    progress: Callable[[int, float], None] | None = None,
) -> TrainResult:
    """Train per config on the manifest's train split; select on valid split.

    Returns the best-validation parameters; when out_dir is given, also
    writes checkpoint.bin and history.csv there.
    """
    if not manifest.split("train"):
        raise ValueError("train split is empty")
    vocab = build_vocabulary(manifest)
    model = build_model(config, len(vocab))
    method = config.modulation.method
    cache = _FeatureCache(vocab, method)
    rng = np.random.default_rng(config.seed)
    batches = balanced_batches(manifest, "train", config.batch_size, seed=config.seed)
    valid = manifest.split("valid")

    tensors = model.store.tensors()
    history: list[tuple[int, float, float, float]] = []
    best_arrays = model.store.as_arrays()
    best_f1 = -1.0
    best_step = 0

    for step in range(1, config.max_steps + 1):
        examples = next(batches)
        batch = build_batch([cache(e) for e in examples], model.encoder_config)
        loss, _ = model.loss(batch, rng=rng, train=True)
        loss.backward()
        clip_global_norm(tensors, config.clip_norm)
        sgd_step(tensors, config.learning_rate)
        loss_value = float(loss.data)

        if step % validate_every == 0 or step == config.max_steps:
            if valid:
                report = evaluate_model(
                    model, method, manifest, "valid", vocab, config.batch_size
                )
                val_acc, val_f1 = report.accuracy, report.weighted_f1
            else:
                val_acc, val_f1 = 0.0, 0.0
            history.append((step, loss_value, val_acc, val_f1))
            if val_f1 > best_f1:
                best_f1 = val_f1
                best_step = step
                best_arrays = model.store.as_arrays()
            if progress is not None:
                progress(step, loss_value)

    result = TrainResult(
        config=config,
        arrays=best_arrays,
        vocab_tokens=_vocab_tokens(vocab),
        history=tuple(history),
        best_step=best_step,
        best_val_weighted_f1=max(best_f1, 0.0),
    )
    if out_dir is not None:
        save_train_result(result, out_dir, corpus_seed=manifest.seed)
    return result


def format_history(history) -> str:
    lines = [HISTORY_HEADER]
    for step, loss, acc, f1 in history:
        lines.append(f"{step},{loss:.6f},{acc:.6f},{f1:.6f}")
    return "\n".join(lines) + "\n"


def save_train_result(result: TrainResult, out_dir: str, *, corpus_seed: int = -1) -> None:
    os.makedirs(out_dir, exist_ok=True)
    meta = {
        "config": config_to_dict(result.config),
        "vocab": list(result.vocab_tokens),
        "best_step": result.best_step,
        "best_val_weighted_f1": result.best_val_weighted_f1,
        "corpus_seed": corpus_seed,
    }
    save_checkpoint(os.path.join(out_dir, "checkpoint.bin"), result.arrays, meta)
    with open(
        os.path.join(out_dir, "history.csv"), "w", encoding="utf-8", newline="\n"
    ) as fh:
        fh.write(format_history(result.history))


def load_model(path: str):
    """Rebuild (model, config, vocab) from a training checkpoint."""
    arrays, meta = load_checkpoint(path)
    config = config_from_dict(meta["config"])
    vocab = Vocabulary(meta["vocab"])
    model = build_model(config, len(vocab))
    model.store.load_arrays(arrays)
    return model, config, vocab


def evaluate_checkpoint(
    path: str, manifest: CorpusManifest, split: str, batch_size: int = 32
) -> MetricsReport:
    model, config, vocab = load_model(path)
    return evaluate_model(
        model, config.modulation.method, manifest, split, vocab, batch_size
    )
