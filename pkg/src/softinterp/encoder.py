"""Token embedding and Transformer encoding of mini-language programs.

Turns a parsed :class:`~softinterp.minilang.Program` into a sequence of
vocabulary ids with one span per statement, runs a small Transformer over the
sequence (optionally restricting attention to within-statement windows), and
pools each span into a single vector per control-flow node.
"""

from __future__ import annotations

from bisect import bisect_left
from collections import Counter
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .layers import Dense, LayerNorm, ParamStore, dropout
from .minilang import Program, inject_docstring, parse

PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
DOC_TOKEN = "<doc>"
SPECIAL_TOKENS = (PAD_TOKEN, UNK_TOKEN, DOC_TOKEN)

# Hard cap on both vocabulary size and encoded sequence length.
MAX_SEQUENCE = 512

# Additive score for disallowed attention pairs; exp() underflows to exact 0.
_MASK_VALUE = -1e30

ENCODER_MODES = ("local", "global")
POOLINGS = ("first", "sum", "mean", "max")


class SequenceTooLong(ValueError):
    """Raised when a tokenized sequence exceeds MAX_SEQUENCE ids."""


class UnknownToken(KeyError):
    """Raised when an id or token is outside the vocabulary."""


def _words(text: str) -> list[str]:
    return text.lower().split()


class Vocabulary:
    """Closed token vocabulary with pad/unk/docstring-marker specials.

    Ids 0..2 are the specials; the remaining ids follow the constructor
    order.  Serialized as one token per line, line number = id.
    """

    def __init__(self, tokens: Sequence[str]):
        for tok in tokens:
            if not tok or tok != tok.strip() or any(c.isspace() for c in tok):
                raise ValueError(f"bad vocabulary token {tok!r}")
            if tok in SPECIAL_TOKENS:
                raise ValueError(f"token {tok!r} collides with a special")
        self._id_to_token: tuple[str, ...] = SPECIAL_TOKENS + tuple(tokens)
        if len(self._id_to_token) > MAX_SEQUENCE:
            raise ValueError(
                f"vocabulary size {len(self._id_to_token)} exceeds {MAX_SEQUENCE}"
            )
        self._token_to_id = {t: i for i, t in enumerate(self._id_to_token)}
        if len(self._token_to_id) != len(self._id_to_token):
            raise ValueError("duplicate vocabulary token")

    pad_id = 0
    unk_id = 1
    doc_id = 2

    def __len__(self) -> int:
        return len(self._id_to_token)

    def __contains__(self, token: str) -> bool:
        return token in self._token_to_id

    def id_of(self, token: str) -> int:
        return self._token_to_id.get(token, self.unk_id)

    def token_of(self, token_id: int) -> str:
        if not 0 <= token_id < len(self._id_to_token):
            raise UnknownToken(token_id)
        return self._id_to_token[token_id]

    @classmethod
    def build(cls, surfaces: Iterable[str], max_size: int = MAX_SEQUENCE) -> "Vocabulary":
        """Rank surfaces by (frequency desc, token asc) and keep the top ones."""
        counts = Counter(s for s in surfaces if s not in SPECIAL_TOKENS)
        budget = max_size - len(SPECIAL_TOKENS)
        if budget < 0:
            raise ValueError(f"max_size {max_size} below special count")
        ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
        return cls([tok for tok, _ in ranked[:budget]])

    def save(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self._id_to_token) + "\n")

    @classmethod
    def load(cls, path: str) -> "Vocabulary":
        with open(path, "r", encoding="utf-8") as fh:
            lines = fh.read().splitlines()
        if tuple(lines[: len(SPECIAL_TOKENS)]) != SPECIAL_TOKENS:
            raise ValueError(f"vocabulary file {path} missing special tokens")
        return cls(lines[len(SPECIAL_TOKENS):])


def surface_tokens(program: Program) -> list[tuple[str, int, int]]:
    """Encoder surfaces as (surface, statement_index, source_token_index).

    String literals expand into lowercased whitespace-split words; a string
    serving as a docstring statement additionally gets a leading DOC marker.
    All other lexer tokens map 1:1 onto their own text.
    """
    out: list[tuple[str, int, int]] = []
    for idx, tok in enumerate(program.tokens):
        stmt_index = tok.statement_index
        if tok.kind == "string":
            if program.statements[stmt_index].kind == "docstring":
                out.append((DOC_TOKEN, stmt_index, idx))
            out.extend((w, stmt_index, idx) for w in _words(tok.text))
        else:
            out.append((tok.text, stmt_index, idx))
    return out


def description_ids(vocab: Vocabulary, text: str) -> tuple[int, ...]:
    """DOC marker followed by the description's word ids."""
    return (vocab.doc_id, *(vocab.id_of(w) for w in _words(text)))


@dataclass(frozen=True)
class TokenizedProgram:
    """Id sequence plus alignment metadata for one program."""

    ids: tuple[int, ...]
    spans: tuple[tuple[int, int], ...]  # per statement, encoder positions
    statement_of: tuple[int, ...]  # per encoder position
    origins: tuple[int, ...]  # source lexer-token index per encoder position
    surfaces: tuple[str, ...]
    unknown: tuple[str, ...]  # distinct surfaces that mapped to unk

    def __len__(self) -> int:
        return len(self.ids)

    def encoder_span(self, token_span: tuple[int, int]) -> tuple[int, int]:
        """Map a lexer-token range to the matching encoder-position range."""
        start, end = token_span
        return bisect_left(self.origins, start), bisect_left(self.origins, end)


def tokenize(
    program: Program, vocab: Vocabulary, description: str | None = None
) -> TokenizedProgram:
    """Encode a program; optionally prepend `description` as a docstring.

    Spans align one-to-one with the program's statements (the injected
    docstring becomes statement 0).
    """
    if description is not None:
        program = parse(inject_docstring(program.source, description))
    triples = surface_tokens(program)
    if len(triples) > MAX_SEQUENCE:
        raise SequenceTooLong(
            f"{len(triples)} encoder tokens exceed the {MAX_SEQUENCE} cap"
        )
    ids = tuple(vocab.id_of(s) for s, _, _ in triples)
    statement_of = tuple(s for _, s, _ in triples)
    origins = tuple(o for _, _, o in triples)
    spans: list[tuple[int, int]] = []
    for stmt_index in range(len(program.statements)):
        lo = bisect_left(statement_of, stmt_index)
        hi = bisect_left(statement_of, stmt_index + 1)
        if lo == hi:
            raise ValueError(f"statement {stmt_index} produced no tokens")
        spans.append((lo, hi))
    unknown = tuple(
        sorted({s for (s, _, _), i in zip(triples, ids) if i == vocab.unk_id})
    )
    return TokenizedProgram(
        ids=ids,
        spans=tuple(spans),
        statement_of=statement_of,
        origins=origins,
        surfaces=tuple(s for s, _, _ in triples),
        unknown=unknown,
    )


@dataclass(frozen=True)
class EncoderConfig:
    mode: str = "global"
    pooling: str = "first"
    layers: int = 1
    heads: int = 2
    embed_dim: int = 32
    mlp_dim: int = 64
    dropout: float = 0.0
    attention_dropout: float = 0.0

    def __post_init__(self) -> None:
        if self.mode not in ENCODER_MODES:
            raise ValueError(f"mode must be one of {ENCODER_MODES}")
        if self.pooling not in POOLINGS:
            raise ValueError(f"pooling must be one of {POOLINGS}")
        if self.layers < 1 or self.heads < 1 or self.embed_dim < 1 or self.mlp_dim < 1:
            raise ValueError("layers/heads/embed_dim/mlp_dim must be positive")
        if self.embed_dim % self.heads != 0:
            raise ValueError(
                f"embed_dim {self.embed_dim} not divisible by heads {self.heads}"
            )
        for rate in (self.dropout, self.attention_dropout):
            if not 0.0 <= rate < 1.0:
                raise ValueError("dropout rates must lie in [0, 1)")


def attention_mask(statement_of: np.ndarray, mode: str) -> np.ndarray:
    """Allowed-pair matrix [L, L]; pad positions carry statement id -1."""
    stmt = np.asarray(statement_of, dtype=np.int64)
    valid = stmt >= 0
    allowed = valid[:, None] & valid[None, :]
    if mode == "local":
        allowed &= stmt[:, None] == stmt[None, :]
    elif mode != "global":
        raise ValueError(f"unknown encoder mode {mode!r}")
    return allowed.astype(np.float64)


class TransformerEncoder:
    """Pre-LayerNorm Transformer over token ids with optional local masking."""

    def __init__(self, store: ParamStore, name: str, vocab_size: int, config: EncoderConfig):
        self.config = config
        self.name = name
        dim = config.embed_dim
        store.add(f"{name}.tok", (vocab_size, dim), fan_in=dim)
        store.add(f"{name}.pos", (MAX_SEQUENCE, dim), fan_in=dim)
        store.add(f"{name}.terminals", (2, dim), fan_in=dim)
        self._store = store
        self._blocks = []
        for i in range(config.layers):
            base = f"{name}.l{i}"
            self._blocks.append(
                {
                    "ln1": LayerNorm(store, f"{base}.ln1", dim),
                    "q": Dense(store, f"{base}.q", dim, dim),
                    "k": Dense(store, f"{base}.k", dim, dim),
                    "v": Dense(store, f"{base}.v", dim, dim),
                    "o": Dense(store, f"{base}.o", dim, dim),
                    "ln2": LayerNorm(store, f"{base}.ln2", dim),
                    "m1": Dense(store, f"{base}.m1", dim, config.mlp_dim),
                    "m2": Dense(store, f"{base}.m2", config.mlp_dim, dim),
                }
            )
        self._final_ln = LayerNorm(store, f"{name}.lnf", dim)

    def embed_tokens(self, ids: np.ndarray) -> Tensor:
        """Token + absolute-position embeddings, no attention. ids: [..., L]."""
        ids = np.asarray(ids, dtype=np.int64)
        length = ids.shape[-1]
        if length > MAX_SEQUENCE:
            raise SequenceTooLong(f"{length} positions exceed the {MAX_SEQUENCE} cap")
        tok = ad.embedding(self._store[f"{self.name}.tok"], ids)
        pos = ad.embedding(self._store[f"{self.name}.pos"], np.arange(length))
        return tok + pos

    def terminal_rows(self) -> Tensor:
        """Learned [2, dim] embeddings for the exit and error nodes."""
        return self._store[f"{self.name}.terminals"]

    def _attend(self, x: Tensor, blocked: np.ndarray, block, rng, train: bool) -> Tensor:
        cfg = self.config
        b, length, dim = x.shape
        heads, dk = cfg.heads, dim // cfg.heads

        def split(t: Tensor) -> Tensor:
            return ad.transpose(ad.reshape(t, (b, length, heads, dk)), (0, 2, 1, 3))

        q = split(block["q"](x))
        k = split(block["k"](x))
        v = split(block["v"](x))
        scores = ad.matmul(q, ad.swapaxes(k, -1, -2)) * (dk ** -0.5)
        scores = ad.masked_fill(scores, blocked[:, None, :, :], _MASK_VALUE)
        probs = ad.softmax(scores, axis=-1)
        probs = dropout(probs, cfg.attention_dropout, rng, train)
        mixed = ad.matmul(probs, v)  # [b, heads, L, dk]
        merged = ad.reshape(ad.transpose(mixed, (0, 2, 1, 3)), (b, length, dim))
        return block["o"](merged)

    def __call__(
        self,
        ids: np.ndarray,
        allowed: np.ndarray,
        *,
        rng: np.random.Generator | None = None,
        train: bool = False,
    ) -> Tensor:
        """Encode ids [B, L] under an allowed-pair mask [B, L, L] -> [B, L, dim]."""
        ids = np.asarray(ids, dtype=np.int64)
        allowed = np.asarray(allowed, dtype=np.float64)
        if allowed.shape != (ids.shape[0], ids.shape[1], ids.shape[1]):
            raise ad.ShapeMismatch(
                f"mask shape {allowed.shape} vs ids shape {ids.shape}"
            )
        cfg = self.config
        blocked = 1.0 - allowed
        x = dropout(self.embed_tokens(ids), cfg.dropout, rng, train)
        for block in self._blocks:
            attended = self._attend(block["ln1"](x), blocked, block, rng, train)
            x = x + dropout(attended, cfg.dropout, rng, train)
            hidden = block["m2"](ad.tanh(block["m1"](block["ln2"](x))))
            x = x + dropout(hidden, cfg.dropout, rng, train)
        return self._final_ln(x)


def span_pool_arrays(
    spans: Sequence[tuple[int, int]], seq_len: int, pooling: str
) -> tuple[np.ndarray, np.ndarray]:
    """Per-row pooling weights and membership mask, both [rows, seq_len].

    Empty spans (terminals) produce all-zero rows; `pool_spans` then yields
    exact zeros there so callers can add learned terminal vectors.
    """
    if pooling not in POOLINGS:
        raise ValueError(f"pooling must be one of {POOLINGS}")
    weights = np.zeros((len(spans), seq_len))
    mask = np.zeros((len(spans), seq_len))
    for row, (start, end) in enumerate(spans):
        if not 0 <= start <= end <= seq_len:
            raise ValueError(f"span {(start, end)} outside sequence of {seq_len}")
        if start == end:
            continue
        mask[row, start:end] = 1.0
        if pooling == "first":
            weights[row, start] = 1.0
        elif pooling == "sum":
            weights[row, start:end] = 1.0
        elif pooling == "mean":
            weights[row, start:end] = 1.0 / (end - start)
    return weights, mask


def pool_spans(
    encoded: Tensor, pooling: str, weights: np.ndarray, mask: np.ndarray
) -> Tensor:
    """Pool [B, L, dim] into [B, rows, dim] rows; empty rows come out zero."""
    if pooling in ("first", "sum", "mean"):
        return ad.matmul(ad.constant(weights), encoded)
    if pooling != "max":
        raise ValueError(f"unknown pooling {pooling!r}")
    mask = np.asarray(mask, dtype=np.float64)
    expanded = ad.expand_dims(encoded, 1)  # [B, 1, L, dim]
    blocked = (1.0 - mask)[..., None]  # [B, rows, L, 1]
    filled = ad.masked_fill(expanded, blocked, _MASK_VALUE)
    pooled = ad.tmax(filled, axis=2)
    nonempty = (mask.sum(axis=-1, keepdims=True) > 0).astype(np.float64)
    return pooled * ad.constant(nonempty)


def node_rows(
    pooled: Tensor,
    exit_onehot: np.ndarray,
    error_onehot: np.ndarray,
    terminals: Tensor,
) -> Tensor:
    """Overlay learned terminal vectors onto the zero rows of pooled [B, N, dim]."""
    exit_vec = terminals[0]
    error_vec = terminals[1]
    out = pooled + ad.constant(np.asarray(exit_onehot)[..., None]) * exit_vec
    return out + ad.constant(np.asarray(error_onehot)[..., None]) * error_vec
