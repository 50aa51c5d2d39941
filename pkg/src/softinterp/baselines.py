"""Sequence baselines: pooled Transformer, node LSTM, and per-line localizers.

The per-line ("multiple instance") models score every statement with a small
dense head over its pooled embedding, aggregate the per-statement scores into
a program-level class distribution, and read an error-line distribution off
the same scores — so line predictions come for free from class supervision.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .encoder import EncoderConfig, TransformerEncoder, node_rows, pool_spans
from .features import NUM_CLASSES, Batch
from .layers import LSTM, Dense, ParamStore
from .softexec import cross_entropy

MIL_AGGREGATIONS = ("logsumexp", "max", "mean")
MIL_LOCALITIES = ("local", "global")

_MASK_VALUE = -1e30


@dataclass(frozen=True)
class MilConfig:
    """Locality of the encoder plus the score-aggregation rule."""

    locality: str = "global"
    aggregation: str = "logsumexp"

    def __post_init__(self) -> None:
        if self.locality not in MIL_LOCALITIES:
            raise ValueError(f"locality must be one of {MIL_LOCALITIES}")
        if self.aggregation not in MIL_AGGREGATIONS:
            raise ValueError(f"aggregation must be one of {MIL_AGGREGATIONS}")


@dataclass
class BaselineResult:
    log_probs: Tensor  # [B, 1+K]

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_probs.data)

    @property
    def predictions(self) -> np.ndarray:
        return self.log_probs.data.argmax(axis=-1)


@dataclass
class MilResult(BaselineResult):
    line_scores: np.ndarray = None  # [B, S] distribution over statements
    predicted_lines: np.ndarray = None  # [B]


def _token_weights(batch: Batch) -> np.ndarray:
    """Mean-pooling weights over real (non-pad) token positions. [B, 1, L]"""
    valid = batch.stmt_mask.sum(axis=1)  # every real token sits in one span
    counts = np.maximum(valid.sum(axis=-1, keepdims=True), 1.0)
    return (valid / counts)[:, None, :]


class TransformerBaseline:
    """Transformer encoder, mean pooled over all tokens, dense class head."""

    def __init__(
        self,
        vocab_size: int,
        encoder_config: EncoderConfig | None = None,
        seed: int = 0,
    ):
        self.encoder_config = encoder_config or EncoderConfig()
        self.vocab_size = vocab_size
        self.seed = seed
        self.store = ParamStore(np.random.default_rng(seed))
        self.encoder = TransformerEncoder(
            self.store, "encoder", vocab_size, self.encoder_config
        )
        self.head = Dense(self.store, "core.out", self.encoder_config.embed_dim, NUM_CLASSES)

    def forward(
        self,
        batch: Batch,
        *,
        rng: np.random.Generator | None = None,
        train: bool = False,
    ) -> BaselineResult:
        encoded = self.encoder(batch.ids, batch.attn, rng=rng, train=train)
        pooled = ad.matmul(ad.constant(_token_weights(batch)), encoded)[:, 0, :]
        return BaselineResult(log_probs=ad.log_softmax(self.head(pooled), axis=-1))

    def loss(self, batch: Batch, *, rng=None, train: bool = False):
        result = self.forward(batch, rng=rng, train=train)
        return cross_entropy(result.log_probs, batch), result

    def predict(self, batch: Batch) -> np.ndarray:
        return self.forward(batch).predictions


class LstmBaseline:
    """Two-layer LSTM read over the per-node embedding sequence."""

    def __init__(
        self,
        vocab_size: int,
        encoder_config: EncoderConfig | None = None,
        hidden_size: int = 64,
        seed: int = 0,
    ):
        self.encoder_config = encoder_config or EncoderConfig()
        self.vocab_size = vocab_size
        self.hidden_size = hidden_size
        self.seed = seed
        self.store = ParamStore(np.random.default_rng(seed))
        self.encoder = TransformerEncoder(
            self.store, "encoder", vocab_size, self.encoder_config
        )
        self.rnn = LSTM(
            self.store, "core.rnn", self.encoder_config.embed_dim, hidden_size, layers=2
        )
        self.head = Dense(self.store, "core.out", hidden_size, NUM_CLASSES)

    def _node_embeddings(self, batch: Batch, rng, train: bool) -> Tensor:
        encoded = self.encoder(batch.ids, batch.attn, rng=rng, train=train)
        pooled = pool_spans(
            encoded, self.encoder_config.pooling, batch.node_weights, batch.node_mask
        )
        return node_rows(
            pooled, batch.exit_onehot, batch.error_onehot, self.encoder.terminal_rows()
        )

    def forward(
        self,
        batch: Batch,
        *,
        rng: np.random.Generator | None = None,
        train: bool = False,
    ) -> BaselineResult:
        x_nodes = self._node_embeddings(batch, rng, train)
        b, n = batch.node_valid.shape
        state = self.rnn.init_state((b,))
        for i in range(n):
            new_state, _ = self.rnn.step(state, x_nodes[:, i, :])
            gate = batch.node_valid[:, i][:, None]
            state = [
                (_gate(h_new, h_old, gate), _gate(c_new, c_old, gate))
                for (h_new, c_new), (h_old, c_old) in zip(new_state, state)
            ]
        final = state[-1][0]
        return BaselineResult(log_probs=ad.log_softmax(self.head(final), axis=-1))

    def loss(self, batch: Batch, *, rng=None, train: bool = False):
        result = self.forward(batch, rng=rng, train=train)
        return cross_entropy(result.log_probs, batch), result

    def predict(self, batch: Batch) -> np.ndarray:
        return self.forward(batch).predictions


def _gate(new: Tensor, old: Tensor, gate: np.ndarray) -> Tensor:
    return new * ad.constant(gate) + old * ad.constant(1.0 - gate)


class MilTransformer:
    """Per-statement scores phi aggregated into class and line distributions."""

    def __init__(
        self,
        vocab_size: int,
        mil_config: MilConfig | None = None,
        encoder_config: EncoderConfig | None = None,
        seed: int = 0,
    ):
        self.mil_config = mil_config or MilConfig()
        base = encoder_config or EncoderConfig()
        # the MIL locality owns the attention mode
        self.encoder_config = EncoderConfig(
            mode=self.mil_config.locality,
            pooling=base.pooling,
            layers=base.layers,
            heads=base.heads,
            embed_dim=base.embed_dim,
            mlp_dim=base.mlp_dim,
            dropout=base.dropout,
            attention_dropout=base.attention_dropout,
        )
        self.vocab_size = vocab_size
        self.seed = seed
        self.store = ParamStore(np.random.default_rng(seed))
        self.encoder = TransformerEncoder(
            self.store, "encoder", vocab_size, self.encoder_config
        )
        self.score_head = Dense(
            self.store, "core.scores", self.encoder_config.embed_dim, NUM_CLASSES
        )

    def statement_scores(
        self,
        batch: Batch,
        *,
        rng: np.random.Generator | None = None,
        train: bool = False,
    ) -> Tensor:
        """phi[b, l, k]: class-k evidence carried by statement l."""
        encoded = self.encoder(batch.ids, batch.attn, rng=rng, train=train)
        pooled = pool_spans(
            encoded, self.encoder_config.pooling, batch.stmt_weights, batch.stmt_mask
        )
        return self.score_head(pooled)

    def forward(
        self,
        batch: Batch,
        *,
        rng: np.random.Generator | None = None,
        train: bool = False,
    ) -> MilResult:
        phi = self.statement_scores(batch, rng=rng, train=train)
        log_probs, line_scores = aggregate_scores(
            phi, batch.stmt_valid, self.mil_config.aggregation
        )
        predicted = np.array(
            [
                batch.stmt_lines[i, int(line_scores[i].argmax())]
                for i in range(batch.size)
            ],
            dtype=np.int64,
        )
        return MilResult(
            log_probs=log_probs, line_scores=line_scores, predicted_lines=predicted
        )

    def loss(self, batch: Batch, *, rng=None, train: bool = False):
        result = self.forward(batch, rng=rng, train=train)
        return cross_entropy(result.log_probs, batch), result

    def predict(self, batch: Batch) -> np.ndarray:
        return self.forward(batch).predictions

    def localize(self, batch: Batch) -> np.ndarray:
        return self.forward(batch).predicted_lines


def aggregate_scores(
    phi: Tensor, stmt_valid: np.ndarray, aggregation: str
) -> tuple[Tensor, np.ndarray]:
    """Aggregate per-statement scores into (class log-probs, line distribution).

    logsumexp: classes from logsumexp of phi over statements; lines from
    logsumexp of the error columns over classes. max/mean: per-statement
    softmax over classes, aggregated over statements by max or mean and
    renormalized; lines carry each statement's total error probability.
    """
    if aggregation not in MIL_AGGREGATIONS:
        raise ValueError(f"aggregation must be one of {MIL_AGGREGATIONS}")
    invalid = (1.0 - stmt_valid)[..., None]
    if aggregation == "logsumexp":
        filled = ad.masked_fill(phi, invalid, _MASK_VALUE)
        class_logits = ad.logsumexp(filled, axis=1)  # [B, C]
        log_probs = ad.log_softmax(class_logits, axis=-1)
        err = ad.logsumexp(phi[..., 1:], axis=-1)  # [B, S] error classes only
        err_np = np.where(stmt_valid > 0, err.data, _MASK_VALUE)
        shifted = np.exp(err_np - err_np.max(axis=-1, keepdims=True))
        line_scores = shifted / shifted.sum(axis=-1, keepdims=True)
        return log_probs, line_scores

    per_line = ad.softmax(phi, axis=-1)  # [B, S, C]
    if aggregation == "max":
        filled = ad.masked_fill(per_line, invalid, _MASK_VALUE)
        agg = ad.tmax(filled, axis=1)  # [B, C]
    else:
        counts = np.maximum(stmt_valid.sum(axis=-1, keepdims=True), 1.0)
        agg = ad.tsum(per_line * ad.constant(stmt_valid[..., None]), axis=1) / ad.constant(
            counts
        )
    log_probs = ad.log(agg) - ad.log(ad.tsum(agg, axis=-1, keepdims=True))
    err_mass = per_line.data[..., 1:].sum(axis=-1) * stmt_valid  # [B, S]
    totals = np.maximum(err_mass.sum(axis=-1, keepdims=True), 1e-300)
    line_scores = err_mass / totals
    return log_probs, line_scores
