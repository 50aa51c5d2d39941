"""Featurization: programs plus descriptions become padded numeric batches.

`compute_features` is encoder-agnostic (no pooling or masking mode baked in),
so one `ExampleFeatures` can be cached per (example, description method) and
reused across model configurations. `build_batch` does the padding and builds
the mode-specific attention masks, pooling weights, and edge one-hots.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .cfg import ControlFlowGraph, build_cfg, step_limit
from .encoder import (
    EncoderConfig,
    TokenizedProgram,
    Vocabulary,
    attention_mask,
    description_ids,
    span_pool_arrays,
    tokenize,
)
from .interp import ERROR_KIND_INDEX, ERROR_KINDS
from .minilang import Program, inject_docstring, parse

# Class 0 is a clean run; classes 1..K follow the frozen error-kind order.
CLASS_NAMES = ("no-error",) + ERROR_KINDS
NUM_CLASSES = len(CLASS_NAMES)

DESCRIPTION_METHODS = ("none", "docstring", "film", "cross-attention")


class MissingDescription(ValueError):
    """Raised when a description-conditioned method gets no description."""


def target_index(kind: str | None) -> int:
    """Map an interpreter outcome kind (or None for clean) to a class id."""
    if kind is None:
        return 0
    return 1 + ERROR_KIND_INDEX[kind]


def target_kind(index: int) -> str | None:
    if index == 0:
        return None
    return ERROR_KINDS[index - 1]


@dataclass(frozen=True)
class ExampleFeatures:
    """One program's arrays, independent of encoder mode and pooling."""

    program: Program
    cfg: ControlFlowGraph
    tokenized: TokenizedProgram
    ids: np.ndarray  # [L] vocabulary ids
    statement_of: np.ndarray  # [L] statement index per encoder position
    node_spans: tuple[tuple[int, int], ...]  # encoder spans; empty at terminals
    node_lines: np.ndarray  # [N] original-source lines; 0 = injected docstring
    succ1: np.ndarray  # [N]
    succ2: np.ndarray  # [N]
    raise_to: np.ndarray  # [N]
    branching: np.ndarray  # [N] 1.0 where two distinct successors
    terminal: np.ndarray  # [N] 1.0 at exit/error
    exit_onehot: np.ndarray  # [N]
    error_onehot: np.ndarray  # [N]
    t_limit: int
    stmt_spans: tuple[tuple[int, int], ...]  # per statement, encoder positions
    stmt_lines: np.ndarray  # [S] original-source lines
    desc_ids: np.ndarray | None  # [D] for film/cross-attention, else None
    target: int
    error_line: int  # -1 when target is no-error or line is unknown
    uid: int  # corpus example id; -1 for ad-hoc programs

    @property
    def n_nodes(self) -> int:
        return len(self.node_spans)


def compute_features(
    program: Program | str,
    vocab: Vocabulary,
    *,
    description: str | None = None,
    method: str = "none",
    target: int = 0,
    error_line: int = -1,
    uid: int = -1,
    trip_budget: int = 2,
    step_cap: int = 174,
) -> ExampleFeatures:
    """Tokenize, build the CFG, and precompute per-node alignment arrays.

    With method "docstring" the description is injected as a leading
    docstring statement, shifting every source line up by one; reported
    node/statement lines stay in original-source coordinates (the injected
    statement itself maps to line 0).
    """
    if method not in DESCRIPTION_METHODS:
        raise ValueError(f"method must be one of {DESCRIPTION_METHODS}")
    if isinstance(program, str):
        program = parse(program)
    line_shift = 0
    desc_arr: np.ndarray | None = None
    if method == "docstring":
        if description is None:
            raise MissingDescription("docstring method requires a description")
        program = parse(inject_docstring(program.source, description))
        line_shift = 1
    elif method in ("film", "cross-attention"):
        if description is None:
            raise MissingDescription(f"{method} method requires a description")
        desc_arr = np.asarray(description_ids(vocab, description), dtype=np.int64)

    cfg = build_cfg(program)
    tokenized = tokenize(program, vocab)
    n = cfg.node_count

    node_spans = []
    node_lines = np.full(n, -1, dtype=np.int64)
    for node in cfg.nodes:
        node_spans.append(tokenized.encoder_span(node.span))
        if node.line is not None:
            node_lines[node.node_id] = node.line - line_shift

    succ1 = np.array([node.n1 for node in cfg.nodes], dtype=np.int64)
    succ2 = np.array([node.n2 for node in cfg.nodes], dtype=np.int64)
    raise_to = np.array([node.raise_target for node in cfg.nodes], dtype=np.int64)
    branching = (succ1 != succ2).astype(np.float64)
    terminal = np.zeros(n)
    terminal[[cfg.n_exit, cfg.n_error]] = 1.0
    exit_onehot = np.zeros(n)
    exit_onehot[cfg.n_exit] = 1.0
    error_onehot = np.zeros(n)
    error_onehot[cfg.n_error] = 1.0

    stmt_lines = np.array(
        [st.line - line_shift for st in program.statements], dtype=np.int64
    )

    return ExampleFeatures(
        program=program,
        cfg=cfg,
        tokenized=tokenized,
        ids=np.asarray(tokenized.ids, dtype=np.int64),
        statement_of=np.asarray(tokenized.statement_of, dtype=np.int64),
        node_spans=tuple(node_spans),
        node_lines=node_lines,
        succ1=succ1,
        succ2=succ2,
        raise_to=raise_to,
        branching=branching,
        terminal=terminal,
        exit_onehot=exit_onehot,
        error_onehot=error_onehot,
        t_limit=step_limit(cfg, trip_budget=trip_budget, cap=step_cap),
        stmt_spans=tokenized.spans,
        stmt_lines=stmt_lines,
        desc_ids=desc_arr,
        target=int(target),
        error_line=int(error_line),
        uid=int(uid),
    )


def edge_onehots(
    succ1: np.ndarray, succ2: np.ndarray, raise_to: np.ndarray, n: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Dense [N, N] indicator matrices for the three outgoing edge kinds."""
    rows = np.arange(len(succ1))
    e1 = np.zeros((len(succ1), n))
    e2 = np.zeros((len(succ1), n))
    er = np.zeros((len(succ1), n))
    e1[rows, succ1] = 1.0
    e2[rows, succ2] = 1.0
    er[rows, raise_to] = 1.0
    return e1, e2, er


@dataclass(frozen=True)
class Batch:
    """Padded arrays for a list of examples, under one encoder config."""

    examples: tuple[ExampleFeatures, ...]
    ids: np.ndarray  # [B, L]
    attn: np.ndarray  # [B, L, L] allowed-pair mask
    node_weights: np.ndarray  # [B, N, L] pooling weights
    node_mask: np.ndarray  # [B, N, L] span membership
    node_valid: np.ndarray  # [B, N]
    node_lines: np.ndarray  # [B, N] (-1 padding/terminals)
    branching: np.ndarray  # [B, N]
    terminal: np.ndarray  # [B, N] (padding rows count as terminal)
    exit_onehot: np.ndarray  # [B, N]
    error_onehot: np.ndarray  # [B, N]
    e1: np.ndarray  # [B, N, N]
    e2: np.ndarray  # [B, N, N]
    er: np.ndarray  # [B, N, N]
    t_limits: np.ndarray  # [B]
    stmt_weights: np.ndarray  # [B, S, L]
    stmt_mask: np.ndarray  # [B, S, L]
    stmt_valid: np.ndarray  # [B, S]
    stmt_lines: np.ndarray  # [B, S]
    desc_ids: np.ndarray | None  # [B, D]
    desc_mask: np.ndarray | None  # [B, D]
    targets: np.ndarray  # [B]
    error_lines: np.ndarray  # [B]

    @property
    def size(self) -> int:
        return len(self.examples)

    @property
    def t_max(self) -> int:
        return int(self.t_limits.max())


def build_batch(
    examples: Sequence[ExampleFeatures], config: EncoderConfig
) -> Batch:
    """Pad and stack features; masks and pooling follow the encoder config."""
    if not examples:
        raise ValueError("empty batch")
    b = len(examples)
    length = max(len(f.ids) for f in examples)
    n = max(f.n_nodes for f in examples)
    s = max(len(f.stmt_spans) for f in examples)

    ids = np.zeros((b, length), dtype=np.int64)
    stmt_of = np.full((b, length), -1, dtype=np.int64)
    node_weights = np.zeros((b, n, length))
    node_mask = np.zeros((b, n, length))
    node_valid = np.zeros((b, n))
    node_lines = np.full((b, n), -1, dtype=np.int64)
    branching = np.zeros((b, n))
    terminal = np.ones((b, n))  # padded rows behave like absorbing terminals
    exit_onehot = np.zeros((b, n))
    error_onehot = np.zeros((b, n))
    e1 = np.zeros((b, n, n))
    e2 = np.zeros((b, n, n))
    er = np.zeros((b, n, n))
    t_limits = np.zeros(b, dtype=np.int64)
    stmt_weights = np.zeros((b, s, length))
    stmt_mask = np.zeros((b, s, length))
    stmt_valid = np.zeros((b, s))
    stmt_lines = np.full((b, s), -1, dtype=np.int64)
    targets = np.zeros(b, dtype=np.int64)
    error_lines = np.full(b, -1, dtype=np.int64)

    has_desc = examples[0].desc_ids is not None
    if any((f.desc_ids is not None) != has_desc for f in examples):
        raise ValueError("mixed description availability within a batch")
    desc_ids = desc_mask = None
    if has_desc:
        d = max(len(f.desc_ids) for f in examples)
        desc_ids = np.zeros((b, d), dtype=np.int64)
        desc_mask = np.zeros((b, d))

    # padded node rows self-loop so the propagation matmuls stay stochastic
    pad_rows = np.arange(n)
    for i, f in enumerate(examples):
        li, ni, si = len(f.ids), f.n_nodes, len(f.stmt_spans)
        ids[i, :li] = f.ids
        stmt_of[i, :li] = f.statement_of
        w, m = span_pool_arrays(f.node_spans, li, config.pooling)
        node_weights[i, :ni, :li] = w
        node_mask[i, :ni, :li] = m
        node_valid[i, :ni] = 1.0
        node_lines[i, :ni] = f.node_lines
        branching[i, :ni] = f.branching
        terminal[i, :ni] = f.terminal
        exit_onehot[i, :ni] = f.exit_onehot
        error_onehot[i, :ni] = f.error_onehot
        s1 = np.concatenate([f.succ1, pad_rows[ni:]])
        s2 = np.concatenate([f.succ2, pad_rows[ni:]])
        sr = np.concatenate([f.raise_to, pad_rows[ni:]])
        e1[i], e2[i], er[i] = edge_onehots(s1, s2, sr, n)
        t_limits[i] = f.t_limit
        w, m = span_pool_arrays(f.stmt_spans, li, config.pooling)
        stmt_weights[i, :si, :li] = w
        stmt_mask[i, :si, :li] = m
        stmt_valid[i, :si] = 1.0
        stmt_lines[i, :si] = f.stmt_lines
        targets[i] = f.target
        error_lines[i] = f.error_line
        if has_desc:
            di = len(f.desc_ids)
            desc_ids[i, :di] = f.desc_ids
            desc_mask[i, :di] = 1.0

    attn = np.stack([attention_mask(stmt_of[i], config.mode) for i in range(b)])

    return Batch(
        examples=tuple(examples),
        ids=ids,
        attn=attn,
        node_weights=node_weights,
        node_mask=node_mask,
        node_valid=node_valid,
        node_lines=node_lines,
        branching=branching,
        terminal=terminal,
        exit_onehot=exit_onehot,
        error_onehot=error_onehot,
        e1=e1,
        e2=e2,
        er=er,
        t_limits=t_limits,
        stmt_weights=stmt_weights,
        stmt_mask=stmt_mask,
        stmt_valid=stmt_valid,
        stmt_lines=stmt_lines,
        desc_ids=desc_ids,
        desc_mask=desc_mask,
        targets=targets,
        error_lines=error_lines,
    )


def line_mass(per_node: np.ndarray, node_lines: np.ndarray) -> dict[int, float]:
    """Aggregate a per-node mass vector by source line (for-node pairs merge)."""
    out: dict[int, float] = {}
    for mass, line in zip(per_node, node_lines):
        if line < 0:
            continue
        out[int(line)] = out.get(int(line), 0.0) + float(mass)
    return out


def argmax_line(per_node: np.ndarray, node_lines: np.ndarray) -> int:
    """Line with the largest aggregated mass; ties break toward lower lines.

    Line 0 (an injected description statement) is never predicted: it is not
    a line of the original program, so mass there cannot be a correct answer.
    """
    mass = {ln: v for ln, v in line_mass(per_node, node_lines).items() if ln > 0}
    if not mass:
        return -1
    best = max(sorted(mass), key=lambda ln: mass[ln])
    return best
