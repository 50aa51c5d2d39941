"""Differentiable execution of the statement CFG via a soft instruction pointer.

The model keeps a probability distribution over CFG nodes ("where execution
is") plus a recurrent state per node ("what the machine knows there"). Each
step, every node proposes an updated state with a shared RNN, decides how much
mass raises toward its handler and how the rest splits across its branch
successors, and the pointer plus states flow along the edges by mean-field
averaging. After a per-program step budget, the mass at the exit and error
terminals plus the error node's state yield the class distribution, and a
side recursion over "which node raised the mass that escaped" yields an
unsupervised per-line error-origin distribution.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .cfg import ControlFlowGraph, step_limit  # re-export step_limit
from .encoder import EncoderConfig, TransformerEncoder, node_rows, pool_spans
from .features import NUM_CLASSES, Batch, DESCRIPTION_METHODS
from .interp import DiscreteTrace
from .layers import LSTM, Dense, ParamStore

__all__ = [
    "ModulationConfig",
    "SoftInterpreterModel",
    "SoftRunResult",
    "step_limit",
    "trace_decisions",
    "pointer_trajectory",
    "origin_recursion",
    "enumerate_paths",
    "write_pointer_csv",
    "read_pointer_csv",
    "write_origin_csv",
    "read_origin_csv",
]

# Below this pointer mass a node's state is carried forward unchanged instead
# of being renormalized (avoids 0/0 in the mean-field average).
EPSILON = 1e-12

# Smoothing for the exit/error readout so log-probabilities stay finite even
# when no mass has reached either terminal within the step budget.
_READOUT_DELTA = 1e-12

_MASS_TOL = 1e-6

# Raise-head bias at init: an indifferent head would send half the pointer
# mass down a raise edge at every step, so exit mass vanishes geometrically in
# program length and early training is spent undoing that. Starting from
# "rarely raise" (sigmoid(-4) ~ 2%) removes the stall.
_RAISE_BIAS_INIT = -4.0


@dataclass(frozen=True)
class ModulationConfig:
    """How the resource description conditions each execution step."""

    method: str = "none"
    heads: int = 1

    def __post_init__(self) -> None:
        if self.method not in DESCRIPTION_METHODS:
            raise ValueError(f"method must be one of {DESCRIPTION_METHODS}")
        if self.heads not in (1, 2):
            raise ValueError("heads must be 1 or 2")


# --- oracle-driven reference propagation (numpy, non-differentiable) -----------


def trace_decisions(
    cfg: ControlFlowGraph, trace: DiscreteTrace, t_steps: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """One-hot per-step transition probabilities replaying a discrete trace.

    Returns (b1, b2, q), each [t_steps, N]: mass share sent along the first
    successor, second successor, and raise edge. Nodes the trace never
    occupies at step t default to staying on their first successor.
    """
    n = cfg.node_count
    b1 = np.ones((t_steps, n))
    b2 = np.zeros((t_steps, n))
    q = np.zeros((t_steps, n))
    steps = trace.steps
    for t in range(min(t_steps, len(steps) - 1)):
        a, b = steps[t].node, steps[t + 1].node
        node = cfg.nodes[a]
        if steps[t + 1].via_raise:
            if b != node.raise_target:
                raise ValueError(f"raise hop {a}->{b} does not match r({a})")
            q[t, a], b1[t, a] = 1.0, 0.0
        elif b == node.n1:
            pass  # default already routes everything to n1
        elif b == node.n2:
            b1[t, a], b2[t, a] = 0.0, 1.0
        else:
            raise ValueError(f"hop {a}->{b} is not a CFG edge")
    return b1, b2, q


def pointer_trajectory(
    cfg: ControlFlowGraph, b1: np.ndarray, b2: np.ndarray, q: np.ndarray
) -> np.ndarray:
    """Mean-field pointer mass over time given per-step transition shares.

    b1/b2/q are [T, N] with rows summing to 1; returns [T+1, N] with p[0]
    one-hot at node 0. Raises on mass leaks beyond the tolerance.
    """
    t_steps, n = b1.shape
    if n != cfg.node_count:
        raise ValueError("decision arrays do not match the graph")
    e1, e2, er = _graph_onehots(cfg)
    p = np.zeros(n)
    p[0] = 1.0
    history = [p.copy()]
    for t in range(t_steps):
        p = (p * b1[t]) @ e1 + (p * b2[t]) @ e2 + (p * q[t]) @ er
        total = p.sum()
        if abs(total - 1.0) > _MASS_TOL:
            raise AssertionError(f"pointer mass leaked to {total} at step {t}")
        history.append(p.copy())
    return np.stack(history)


def origin_recursion(
    cfg: ControlFlowGraph, b1: np.ndarray, b2: np.ndarray, q: np.ndarray
) -> np.ndarray:
    """Per-node mass of "this node raised the error that escaped" ([N]).

    Tracks v[n, n'] = mass currently at n' whose raise happened at n. Normal
    (non-raise) flow carries existing tags along; raising mass is tagged at
    the raising node, re-tagging mass whose earlier error a handler caught.
    The reported vector is the error-terminal column of v.
    """
    t_steps, n = b1.shape
    e1, e2, er = _graph_onehots(cfg)
    p = np.zeros(n)
    p[0] = 1.0
    v = np.zeros((n, n))
    for t in range(t_steps):
        flow = b1[t][:, None] * e1 + b2[t][:, None] * e2
        v = v @ flow + (p * q[t])[:, None] * er
        p = (p * b1[t]) @ e1 + (p * b2[t]) @ e2 + (p * q[t]) @ er
    return v[:, cfg.n_error]


def enumerate_paths(
    cfg: ControlFlowGraph, b1: np.ndarray, b2: np.ndarray, q: np.ndarray
) -> tuple[np.ndarray, float]:
    """Brute-force path enumeration oracle for the origin recursion.

    Walks every discrete decision path for t_steps steps, multiplying branch
    probabilities, and attributes each arrival at the error terminal to the
    node whose raise edge delivered it. Returns (per-node attribution [N],
    total error mass). Exponential in decision points; test-scale only.
    """
    t_steps, n = b1.shape
    origins = np.zeros(n)
    total = 0.0

    def walk(t: int, node: int, prob: float) -> None:
        nonlocal total
        if prob == 0.0:
            return
        if node == cfg.n_error:
            total += prob
            return
        if t == t_steps:
            return
        cn = cfg.nodes[node]
        raise_p = q[t, node] * prob
        if raise_p > 0.0:
            if cn.raise_target == cfg.n_error:
                origins[node] += raise_p
                total += raise_p
            else:
                walk(t + 1, cn.raise_target, raise_p)
        if cn.n1 == cn.n2:
            walk(t + 1, cn.n1, (b1[t, node] + b2[t, node]) * prob)
        else:
            walk(t + 1, cn.n1, b1[t, node] * prob)
            walk(t + 1, cn.n2, b2[t, node] * prob)

    walk(0, 0, 1.0)
    return origins, total


def _graph_onehots(cfg: ControlFlowGraph):
    from .features import edge_onehots

    n = cfg.node_count
    succ1 = np.array([nd.n1 for nd in cfg.nodes])
    succ2 = np.array([nd.n2 for nd in cfg.nodes])
    raise_to = np.array([nd.raise_target for nd in cfg.nodes])
    return edge_onehots(succ1, succ2, raise_to, n)


# --- the differentiable model -------------------------------------------------


@dataclass
class SoftRunResult:
    """Outputs of one forward pass over a batch."""

    log_probs: Tensor  # [B, 1+K]
    exit_mass: np.ndarray  # [B]
    error_mass: np.ndarray  # [B]
    pointer: np.ndarray | None = None  # [B, T+1, N] when recorded
    origins: np.ndarray | None = None  # [B, N] when requested

    @property
    def probabilities(self) -> np.ndarray:
        return np.exp(self.log_probs.data)

    @property
    def predictions(self) -> np.ndarray:
        return self.log_probs.data.argmax(axis=-1)


DecisionOverride = Callable[[int], tuple[np.ndarray, np.ndarray, np.ndarray]]


def cross_entropy(log_probs: Tensor, batch: Batch) -> Tensor:
    """Mean negative log-likelihood; names the offending uid when non-finite."""
    rows = np.arange(batch.size)
    picked = log_probs[rows, batch.targets]
    bad = ~np.isfinite(picked.data)
    if bad.any():
        uid = batch.examples[int(np.argmax(bad))].uid
        raise ad.NonFiniteLoss(f"non-finite loss on example uid={uid}")
    return -ad.tmean(picked)


class SoftInterpreterModel:
    """Soft-instruction-pointer runtime-error classifier over mini programs.

    With exception=True the pointer may raise toward handler/error nodes and
    the class readout splits mass between the exit and error terminals; with
    exception=False the pointer only follows branch edges and a single dense
    head over the exit state predicts all classes.
    """

    def __init__(
        self,
        vocab_size: int,
        encoder_config: EncoderConfig | None = None,
        modulation: ModulationConfig | None = None,
        hidden_size: int = 64,
        exception: bool = True,
        rnn_layers: int = 2,
        seed: int = 0,
    ):
        self.encoder_config = encoder_config or EncoderConfig()
        self.modulation = modulation or ModulationConfig()
        self.hidden_size = hidden_size
        self.exception = exception
        self.vocab_size = vocab_size
        self.rnn_layers = rnn_layers
        self.seed = seed

        store = ParamStore(np.random.default_rng(seed))
        self.store = store
        self.encoder = TransformerEncoder(
            store, "encoder", vocab_size, self.encoder_config
        )
        embed = self.encoder_config.embed_dim
        method = self.modulation.method
        rnn_input = 2 * embed if method in ("film", "cross-attention") else embed
        self.rnn = LSTM(store, "core.rnn", rnn_input, hidden_size, layers=rnn_layers)
        self.branch_head = Dense(store, "core.branch", hidden_size, 2)
        if exception:
            self.raise_head = Dense(store, "core.raise", hidden_size, 2)
            self.raise_head.b.data[0] = _RAISE_BIAS_INIT
            self.class_head = Dense(store, "core.classes", hidden_size, NUM_CLASSES - 1)
        else:
            self.out_head = Dense(store, "core.out", hidden_size, NUM_CLASSES)
        if method == "film":
            self.beta = Dense(store, "core.beta", embed + hidden_size, embed)
            self.gamma = Dense(store, "core.gamma", embed + hidden_size, embed)
        elif method == "cross-attention":
            if embed % self.modulation.heads != 0:
                raise ValueError("embed_dim must be divisible by modulation heads")
            self.ca_query = Dense(store, "core.caq", embed + hidden_size, embed)
            self.ca_key = Dense(store, "core.cak", embed, embed)
            self.ca_value = Dense(store, "core.cav", embed, embed)
            self.ca_out = Dense(store, "core.cao", embed, embed)

    # -- description conditioning ------------------------------------------

    def _description_state(self, batch: Batch) -> tuple[Tensor | None, Tensor | None]:
        method = self.modulation.method
        if method not in ("film", "cross-attention"):
            return None, None
        if batch.desc_ids is None:
            raise ValueError(f"{method} modulation requires description ids")
        tokens = self.encoder.embed_tokens(batch.desc_ids)  # [B, D, E]
        if method == "cross-attention":
            return tokens, None
        mask = batch.desc_mask[..., None]
        pooled = ad.tsum(tokens * ad.constant(mask), axis=1) / ad.constant(
            mask.sum(axis=1)
        )
        return None, pooled  # [B, E]

    def _modulate(
        self,
        x_nodes: Tensor,
        h_top: Tensor,
        desc_tokens: Tensor | None,
        desc_pooled: Tensor | None,
        desc_mask: np.ndarray | None,
    ) -> Tensor:
        method = self.modulation.method
        if method in ("none", "docstring"):
            return x_nodes
        joint = ad.concat([x_nodes, h_top], axis=-1)  # [B, N, E+H]
        if method == "film":
            beta = ad.sigmoid(self.beta(joint))
            gamma = ad.sigmoid(self.gamma(joint))
            modulated = beta * ad.expand_dims(desc_pooled, 1) + gamma
            return ad.concat([x_nodes, modulated], axis=-1)
        # multi-head cross-attention from each node onto description tokens
        b, n, embed = x_nodes.shape
        d = desc_tokens.shape[1]
        heads = self.modulation.heads
        dk = embed // heads

        def split(t: Tensor, length: int) -> Tensor:
            return ad.transpose(ad.reshape(t, (b, length, heads, dk)), (0, 2, 1, 3))

        query = split(self.ca_query(joint), n)  # [B, h, N, dk]
        key = split(self.ca_key(desc_tokens), d)  # [B, h, D, dk]
        value = split(self.ca_value(desc_tokens), d)
        scores = ad.matmul(query, ad.swapaxes(key, -1, -2)) * (dk ** -0.5)
        blocked = (1.0 - desc_mask)[:, None, None, :]
        scores = ad.masked_fill(scores, blocked, -1e30)
        mix = ad.matmul(ad.softmax(scores, axis=-1), value)  # [B, h, N, dk]
        merged = ad.reshape(ad.transpose(mix, (0, 2, 1, 3)), (b, n, embed))
        return ad.concat([x_nodes, self.ca_out(merged)], axis=-1)

    # -- forward pass --------------------------------------------------------

    def node_embeddings(
        self, batch: Batch, *, rng: np.random.Generator | None = None, train: bool = False
    ) -> Tensor:
        """Encode tokens and pool one embedding row per CFG node. [B, N, E]"""
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
        record_pointer: bool = False,
        with_origins: bool = False,
        decision_override: DecisionOverride | None = None,
    ) -> SoftRunResult:
        b, n = batch.node_valid.shape
        x_nodes = self.node_embeddings(batch, rng=rng, train=train)
        desc_tokens, desc_pooled = self._description_state(batch)

        e1t = np.swapaxes(batch.e1, 1, 2)
        e2t = np.swapaxes(batch.e2, 1, 2)
        ert = np.swapaxes(batch.er, 1, 2)
        branching = batch.branching
        # raise mass may only leave valid, non-terminal nodes
        raise_scope = batch.node_valid * (1.0 - batch.terminal)
        keep = batch.terminal[..., None]  # terminals keep their state

        p0 = np.zeros((b, n))
        p0[:, 0] = 1.0
        p = ad.constant(p0)
        state = self.rnn.init_state((b, n))
        h_top = state[-1][0]
        pointer_log = [p0.copy()] if record_pointer else None
        v = np.zeros((b, n, n)) if with_origins else None

        t_max = batch.t_max
        for t in range(t_max):
            active = (t < batch.t_limits).astype(np.float64)[:, None]
            inputs = self._modulate(
                x_nodes, h_top, desc_tokens, desc_pooled, batch.desc_mask
            )
            new_state, a1 = self.rnn.step(state, inputs)

            if decision_override is not None:
                ob1, ob2, oq = decision_override(t)
                b1 = ad.constant(np.asarray(ob1, dtype=np.float64))
                b2 = ad.constant(np.asarray(ob2, dtype=np.float64))
                q = ad.constant(np.asarray(oq, dtype=np.float64))
            else:
                if self.exception:
                    q = ad.softmax(self.raise_head(a1), axis=-1)[..., 0]
                    q = q * ad.constant(raise_scope)
                else:
                    q = ad.constant(np.zeros((b, n)))
                stay = 1.0 - q
                branch = ad.softmax(self.branch_head(a1), axis=-1)
                b1 = stay * (
                    branch[..., 0] * ad.constant(branching)
                    + ad.constant(1.0 - branching)
                )
                b2 = stay * branch[..., 1] * ad.constant(branching)

            w1, w2, wr = p * b1, p * b2, p * q
            p_next = (
                _route_mass(w1, batch.e1) + _route_mass(w2, batch.e2) + _route_mass(wr, batch.er)
            )
            total = p_next.data.sum(axis=-1)
            if np.abs(total - 1.0).max() > _MASS_TOL:
                raise AssertionError(
                    f"pointer mass leaked to {total} at step {t}"
                )

            # mean-field state averaging along the same edges
            gate = (p_next.data > EPSILON).astype(np.float64)[..., None]
            denom = ad.expand_dims(p_next, -1) + ad.constant(1.0 - gate)
            merged_state = []
            for (h_new, c_new), (h_old, c_old) in zip(new_state, state):
                merged = []
                for proposed, previous in ((h_new, h_old), (c_new, c_old)):
                    prop = proposed * ad.constant(1.0 - keep) + previous * ad.constant(keep)
                    num = (
                        ad.matmul(ad.constant(e1t), ad.expand_dims(w1, -1) * prop)
                        + ad.matmul(ad.constant(e2t), ad.expand_dims(w2, -1) * prop)
                        + ad.matmul(ad.constant(ert), ad.expand_dims(wr, -1) * prop)
                    )
                    mixed = ad.constant(gate) * (num / denom) + ad.constant(1.0 - gate) * previous
                    merged.append(_gate_batch(mixed, previous, active[..., None]))
                merged_state.append((merged[0], merged[1]))

            if v is not None:
                flow = (
                    b1.data[..., None] * batch.e1 + b2.data[..., None] * batch.e2
                )
                v_next = np.matmul(v, flow) + (p.data * q.data)[..., None] * batch.er
                v = active[..., None] * v_next + (1.0 - active[..., None]) * v

            p = _gate_batch(p_next, p, active)
            state = merged_state
            h_top = state[-1][0]
            if pointer_log is not None:
                pointer_log.append(p.data.copy())

        log_probs = self._readout(batch, p, h_top)
        origins = None
        if v is not None:
            origins = np.matmul(v, batch.error_onehot[..., None])[..., 0]
        pointer = None
        if pointer_log is not None:
            pointer = np.stack(pointer_log, axis=1)  # [B, T+1, N]
        return SoftRunResult(
            log_probs=log_probs,
            exit_mass=(p.data * batch.exit_onehot).sum(-1),
            error_mass=(p.data * batch.error_onehot).sum(-1),
            pointer=pointer,
            origins=origins,
        )

    def _readout(self, batch: Batch, p: Tensor, h_top: Tensor) -> Tensor:
        if not self.exception:
            h_exit = ad.tsum(h_top * ad.constant(batch.exit_onehot[..., None]), axis=1)
            return ad.log_softmax(self.out_head(h_exit), axis=-1)
        exit_mass = ad.tsum(p * ad.constant(batch.exit_onehot), axis=-1)
        error_mass = ad.tsum(p * ad.constant(batch.error_onehot), axis=-1)
        zlog = ad.log(exit_mass + error_mass + 2 * _READOUT_DELTA)
        log_ok = ad.log(exit_mass + _READOUT_DELTA) - zlog
        log_err = ad.log(error_mass + _READOUT_DELTA) - zlog
        h_err = ad.tsum(h_top * ad.constant(batch.error_onehot[..., None]), axis=1)
        class_logs = ad.log_softmax(self.class_head(h_err), axis=-1)
        return ad.concat(
            [ad.expand_dims(log_ok, -1), ad.expand_dims(log_err, -1) + class_logs],
            axis=-1,
        )

    # -- losses and task-level outputs ---------------------------------------

    def loss(
        self,
        batch: Batch,
        *,
        rng: np.random.Generator | None = None,
        train: bool = False,
    ) -> tuple[Tensor, SoftRunResult]:
        """Mean cross-entropy over the batch; flags the offending uid if NaN."""
        result = self.forward(batch, rng=rng, train=train)
        return cross_entropy(result.log_probs, batch), result

    def predict(self, batch: Batch) -> np.ndarray:
        return self.forward(batch).predictions

    def localize(self, batch: Batch) -> np.ndarray:
        """Most likely error line per example (unsupervised, from origins)."""
        from .features import argmax_line

        if not self.exception:
            raise ValueError("localization requires the exception variant")
        result = self.forward(batch, with_origins=True)
        lines = [
            argmax_line(result.origins[i], batch.node_lines[i])
            for i in range(batch.size)
        ]
        return np.array(lines, dtype=np.int64)


def _route_mass(weighted: Tensor, edges: np.ndarray) -> Tensor:
    """p_next[b, m] = sum_n weighted[b, n] * edges[b, n, m]."""
    routed = ad.matmul(ad.expand_dims(weighted, 1), ad.constant(edges))
    return routed[:, 0, :]


def _gate_batch(new: Tensor, old: Tensor, active: np.ndarray) -> Tensor:
    """Per-example freeze: rows with active=0 keep their previous value."""
    return new * ad.constant(active) + old * ad.constant(1.0 - active)


# --- file formats ---------------------------------------------------------------


def write_pointer_csv(path: str, pointer: np.ndarray) -> None:
    """Pointer-mass heatmap: one row per node, one column per step, 6 decimals."""
    steps = pointer.shape[0]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["node"] + [str(t) for t in range(steps)])
        for node in range(pointer.shape[1]):
            writer.writerow([str(node)] + [f"{pointer[t, node]:.6f}" for t in range(steps)])


def read_pointer_csv(path: str) -> np.ndarray:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    body = rows[1:]
    out = np.array([[float(x) for x in row[1:]] for row in body])
    return out.T  # back to [T+1, N]


def write_origin_csv(path: str, line_probs: dict[int, float]) -> None:
    """Error-origin distribution: `line,probability` rows sorted by line."""
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["line", "probability"])
        for line in sorted(line_probs):
            writer.writerow([str(line), f"{line_probs[line]:.6f}"])


def read_origin_csv(path: str) -> dict[int, float]:
    with open(path, "r", encoding="utf-8", newline="") as fh:
        rows = list(csv.reader(fh))
    return {int(line): float(prob) for line, prob in rows[1:]}
