"""Estimator facade: scikit-learn-style fit/predict over the training stack.

The constructor only records hyperparameters (scikit-learn convention); all
validation and heavy work happens in fit(). Fitted state lives in trailing-
underscore attributes. get_params/set_params follow the scikit-learn
protocol, so sklearn.base.clone works on these objects without this package
depending on scikit-learn itself.
"""

from __future__ import annotations

import numpy as np

from .corpus import CorpusManifest, Example
from .encoder import EncoderConfig, Vocabulary
from .features import build_batch
from .metrics import MetricsReport
from .softexec import ModulationConfig
from .training import (
    TrainConfig,
    _FeatureCache,
    build_model,
    evaluate_model,
    load_model,
    predict_split,
    save_train_result,
    train,
)


class NotFittedError(RuntimeError):
    """Estimator used before fit() (or load())."""


class ErrorPredictor:
    """Predicts runtime-error classes (and lines, when supported) for programs."""

    _PARAM_NAMES = (
        "model_kind", "modulation", "learning_rate", "clip_norm", "max_steps",
        "batch_size", "seed", "hidden_size", "encoder_mode", "encoder_pooling",
        "encoder_layers", "encoder_heads", "encoder_embed_dim", "encoder_mlp_dim",
        "validate_every",
    )

    def __init__(
        self,
        model_kind: str = "exception",
        modulation: str = "none",
        learning_rate: float = 0.03,
        clip_norm: float = 1.0,
        max_steps: int = 2000,
        batch_size: int = 32,
        seed: int = 0,
        hidden_size: int = 64,
        encoder_mode: str = "global",
        encoder_pooling: str = "first",
        encoder_layers: int = 1,
        encoder_heads: int = 2,
        encoder_embed_dim: int = 32,
        encoder_mlp_dim: int = 64,
        validate_every: int = 500,
    ):
        self.model_kind = model_kind
        self.modulation = modulation
        self.learning_rate = learning_rate
        self.clip_norm = clip_norm
        self.max_steps = max_steps
        self.batch_size = batch_size
        self.seed = seed
        self.hidden_size = hidden_size
        self.encoder_mode = encoder_mode
        self.encoder_pooling = encoder_pooling
        self.encoder_layers = encoder_layers
        self.encoder_heads = encoder_heads
        self.encoder_embed_dim = encoder_embed_dim
        self.encoder_mlp_dim = encoder_mlp_dim
        self.validate_every = validate_every

    # --- scikit-learn protocol -----------------------------------------------

    def get_params(self, deep: bool = True) -> dict:
        return {name: getattr(self, name) for name in self._PARAM_NAMES}

    def set_params(self, **params) -> "ErrorPredictor":
        for name, value in params.items():
            if name not in self._PARAM_NAMES:
                raise ValueError(f"unknown parameter {name!r} for ErrorPredictor")
            setattr(self, name, value)
        return self

    # --- configuration ----------------------------------------------------------

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            learning_rate=self.learning_rate,
            clip_norm=self.clip_norm,
            max_steps=self.max_steps,
            batch_size=self.batch_size,
            seed=self.seed,
            model_kind=self.model_kind,
            modulation=ModulationConfig(method=self.modulation),
            encoder=EncoderConfig(
                mode=self.encoder_mode,
                pooling=self.encoder_pooling,
                layers=self.encoder_layers,
                heads=self.encoder_heads,
                embed_dim=self.encoder_embed_dim,
                mlp_dim=self.encoder_mlp_dim,
            ),
            hidden_size=self.hidden_size,
        )

    # --- fitting ------------------------------------------------------------------

    def fit(self, manifest: CorpusManifest) -> "ErrorPredictor":
        config = self._train_config()
        result = train(
            config, manifest, validate_every=self.validate_every
        )
        self.config_ = config
        self.result_ = result
        self.vocab_ = Vocabulary(result.vocab_tokens)
        self.model_ = build_model(config, len(self.vocab_))
        self.model_.store.load_arrays(result.arrays)
        self.history_ = result.history
        return self

    def _check_fitted(self) -> None:
        if not hasattr(self, "model_"):
            raise NotFittedError("call fit() or load() before predicting")

    def _cache(self) -> _FeatureCache:
        return _FeatureCache(self.vocab_, self.config_.modulation.method)

    # --- inference ------------------------------------------------------------------

    def predict(self, examples: list[Example]) -> np.ndarray:
        self._check_fitted()
        y_pred, _ = predict_split(self.model_, self._cache(), list(examples), self.batch_size)
        return y_pred

    def predict_proba(self, examples: list[Example]) -> np.ndarray:
        self._check_fitted()
        cache = self._cache()
        rows = []
        examples = list(examples)
        for start in range(0, len(examples), self.batch_size):
            chunk = [cache(e) for e in examples[start : start + self.batch_size]]
            batch = build_batch(chunk, self.model_.encoder_config)
            rows.append(self.model_.forward(batch).probabilities)
        return np.concatenate(rows)

    def predict_line(self, examples: list[Example]) -> np.ndarray:
        self._check_fitted()
        _, lines = predict_split(self.model_, self._cache(), list(examples), self.batch_size)
        if lines is None:
            raise ValueError(f"model kind {self.model_kind!r} does not localize")
        return lines

    def score(self, examples: list[Example]) -> float:
        """Plain accuracy against the examples' stored targets."""
        examples = list(examples)
        y_true = np.array([e.target for e in examples], dtype=np.int64)
        return float((self.predict(examples) == y_true).mean())

    def evaluate(self, manifest: CorpusManifest, split: str = "test") -> MetricsReport:
        self._check_fitted()
        return evaluate_model(
            self.model_, self.config_.modulation.method, manifest, split,
            self.vocab_, self.batch_size,
        )

    # --- persistence ----------------------------------------------------------------

    def save(self, out_dir: str) -> None:
        self._check_fitted()
        if not hasattr(self, "result_"):
            raise ValueError("only estimators fitted in this process can be saved")
        save_train_result(self.result_, out_dir)

    @classmethod
    def load(cls, checkpoint_path: str) -> "ErrorPredictor":
        model, config, vocab = load_model(checkpoint_path)
        est = cls(
            model_kind=config.model_kind,
            modulation=config.modulation.method,
            learning_rate=config.learning_rate,
            clip_norm=config.clip_norm,
            max_steps=config.max_steps,
            batch_size=config.batch_size,
            seed=config.seed,
            hidden_size=config.hidden_size,
            encoder_mode=config.encoder.mode,
            encoder_pooling=config.encoder.pooling,
            encoder_layers=config.encoder.layers,
            encoder_heads=config.encoder.heads,
            encoder_embed_dim=config.encoder.embed_dim,
            encoder_mlp_dim=config.encoder.mlp_dim,
        )
        est.config_ = config
        est.vocab_ = vocab
        est.model_ = model
        return est
