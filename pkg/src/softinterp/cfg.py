"""Statement-level control flow graph construction.

Every statement owns at least one node, in source order. ``for`` headers own
two consecutive nodes: first the iterator construction (evaluated once on
entry), then the loop-variable assignment (re-entered on every iteration; the
loop back edge targets it). Two synthetic absorbing nodes close the graph:
``n_exit`` (normal termination) followed by ``n_error`` (uncaught exception).

``else:`` markers occupy a node id so ids stay aligned with statements, but
control flow bypasses them: an if-header's false edge goes directly to the
first statement of the else body. ``try:`` markers execute as no-ops, so the
entry node is always node 0.

Each node carries a raise target ``r``: the nearest enclosing except-header if
the node sits in a try body, else ``n_error``.
"""

from __future__ import annotations

from dataclasses import dataclass

from .minilang import (
    ForItem,
    IfItem,
    Program,
    SimpleItem,
    Statement,
    TryItem,
    WhileItem,
)


@dataclass(slots=True)
class CfgNode:
    node_id: int
    kind: str  # statement kind, "for-iter", "for-assign", "exit" or "raise"
    stmt: int | None  # statement index, None for terminals
    line: int | None
    span: tuple[int, int]  # token range; empty (end == start) for terminals
    n1: int = -1
    n2: int = -1
    raise_target: int = -1
    # number of loops whose body multiplicity applies to this node; for-iter
    # nodes sit outside their own loop, for-assign and while-header inside
    loop_depth: int = 0
    # else-markers are never executed; control flow routes around them
    bypassed: bool = False


@dataclass(slots=True)
class ControlFlowGraph:
    program: Program
    nodes: list[CfgNode]
    n_exit: int
    n_error: int
    # first (or only) node of each statement; for-headers map to the iter node
    node_of_statement: list[int]

    @property
    def node_count(self) -> int:
        return len(self.nodes)

    def successors(self, node_id: int) -> tuple[int, int, int]:
        node = self.nodes[node_id]
        return node.n1, node.n2, node.raise_target


def build_cfg(program: Program) -> ControlFlowGraph:
    """Build the statement-level CFG. Total on valid Programs."""
    nodes: list[CfgNode] = []
    node_of_statement: list[int] = []
    for_assign_node: dict[int, int] = {}

    for idx, st in enumerate(program.statements):
        node_of_statement.append(len(nodes))
        if st.kind == "for-header":
            start, end = st.span
            # tokens: for <var> in range ( ... ) :
            nodes.append(CfgNode(len(nodes), "for-iter", idx, st.line, (start + 3, end)))
            for_assign_node[idx] = len(nodes)
            nodes.append(CfgNode(len(nodes), "for-assign", idx, st.line, (start, start + 3)))
        else:
            nodes.append(CfgNode(len(nodes), st.kind, idx, st.line, st.span))

    end_of_tokens = len(program.tokens)
    n_exit = len(nodes)
    nodes.append(CfgNode(n_exit, "exit", None, None, (end_of_tokens, end_of_tokens)))
    n_error = len(nodes)
    nodes.append(CfgNode(n_error, "raise", None, None, (end_of_tokens, end_of_tokens)))
    for terminal in (n_exit, n_error):
        nodes[terminal].n1 = terminal
        nodes[terminal].n2 = terminal
        nodes[terminal].raise_target = terminal

    statements = program.statements

    def entry(item) -> int:
        if isinstance(item, SimpleItem):
            return node_of_statement[item.stmt]
        if isinstance(item, (IfItem, WhileItem)):
            return node_of_statement[item.header]
        if isinstance(item, ForItem):
            return node_of_statement[item.header]  # the iter node
        if isinstance(item, TryItem):
            return node_of_statement[item.marker]  # try markers execute as no-ops
        raise TypeError(f"unknown block item {item!r}")

    def set_edges(node_id: int, n1: int, n2: int, handler: int, loop_depth: int) -> None:
        node = nodes[node_id]
        node.n1 = n1
        node.n2 = n2
        node.raise_target = handler
        node.loop_depth = loop_depth

    def link(items: list, cont: int, handler: int, loop: tuple[int, int] | None, depth: int) -> None:
        # loop is (continue target, break target) of the nearest enclosing loop
        for pos, item in enumerate(items):
            nxt = entry(items[pos + 1]) if pos + 1 < len(items) else cont
            if isinstance(item, SimpleItem):
                st = statements[item.stmt]
                node_id = node_of_statement[item.stmt]
                if st.kind == "break":
                    assert loop is not None
                    set_edges(node_id, loop[1], loop[1], handler, depth)
                elif st.kind == "continue":
                    assert loop is not None
                    set_edges(node_id, loop[0], loop[0], handler, depth)
                else:
                    set_edges(node_id, nxt, nxt, handler, depth)
            elif isinstance(item, IfItem):
                header = node_of_statement[item.header]
                false_target = entry(item.orelse[0]) if item.orelse else nxt
                set_edges(header, entry(item.body[0]), false_target, handler, depth)
                link(item.body, nxt, handler, loop, depth)
                if item.orelse is not None:
                    marker = node_of_statement[item.else_marker]
                    set_edges(marker, false_target, false_target, handler, depth)
                    nodes[marker].bypassed = True
                    link(item.orelse, nxt, handler, loop, depth)
            elif isinstance(item, WhileItem):
                header = node_of_statement[item.header]
                set_edges(header, entry(item.body[0]), nxt, handler, depth + 1)
                link(item.body, header, handler, (header, nxt), depth + 1)
            elif isinstance(item, ForItem):
                iter_node = node_of_statement[item.header]
                assign = iter_node + 1
                set_edges(iter_node, assign, assign, handler, depth)
                set_edges(assign, entry(item.body[0]), nxt, handler, depth + 1)
                link(item.body, assign, handler, (assign, nxt), depth + 1)
            elif isinstance(item, TryItem):
                marker = node_of_statement[item.marker]
                except_node = node_of_statement[item.handler_header]
                body_entry = entry(item.body[0])
                set_edges(marker, body_entry, body_entry, handler, depth)
                link(item.body, nxt, except_node, loop, depth)
                handler_entry = entry(item.handler[0]) if item.handler else nxt
                set_edges(except_node, handler_entry, handler_entry, handler, depth)
                link(item.handler, nxt, handler, loop, depth)
            else:
                raise TypeError(f"unknown block item {item!r}")

    link(program.tree, n_exit, n_error, None, 0)
    return ControlFlowGraph(program, nodes, n_exit, n_error, node_of_statement)


def validate_cfg(cfg: ControlFlowGraph) -> None:
    """Raise AssertionError when a well-formedness invariant is violated."""
    count = cfg.node_count
    for node in cfg.nodes:
        assert 0 <= node.n1 < count and 0 <= node.n2 < count
        assert 0 <= node.raise_target < count
    for terminal in (cfg.n_exit, cfg.n_error):
        node = cfg.nodes[terminal]
        assert node.n1 == node.n2 == node.raise_target == terminal
    branching = {"if-header", "while-header", "for-assign"}
    for node in cfg.nodes:
        if node.kind not in branching:
            assert node.n1 == node.n2, f"node {node.node_id} ({node.kind}) must have n1 == n2"
    # every non-bypassed node is reachable from node 0 via n1/n2/r edges
    seen = {0}
    frontier = [0]
    while frontier:
        current = frontier.pop()
        for nxt in cfg.successors(current):
            if nxt not in seen:
                seen.add(nxt)
                frontier.append(nxt)
    for node in cfg.nodes:
        if not node.bypassed:
            assert node.node_id in seen, f"node {node.node_id} unreachable"
    # spans of non-terminal nodes are non-empty and lie inside the token stream
    total = len(cfg.program.tokens)
    for node in cfg.nodes:
        start, end = node.span
        if node.node_id in (cfg.n_exit, cfg.n_error):
            assert start == end
        else:
            assert 0 <= start < end <= total


def step_limit(cfg: ControlFlowGraph, trip_budget: int = 2, cap: int = 174) -> int:
    """Unroll-length heuristic: one step per expected node visit, capped.

    Each executable node contributes trip_budget**loop_depth expected visits
    (bypassed else-markers contribute none), plus one step for entering the
    exit node.
    """
    if trip_budget < 1 or cap < 1:
        raise ValueError("trip_budget and cap must be positive")
    total = 1
    for node in cfg.nodes:
        if node.node_id in (cfg.n_exit, cfg.n_error) or node.bypassed:
            continue
        total += trip_budget ** node.loop_depth
        if total >= cap:
            return cap
    return total


def dump_cfg(cfg: ControlFlowGraph) -> str:
    """One line per node: ``node-id | kind | n1 | n2 | r | span``."""
    lines = []
    for node in cfg.nodes:
        span = f"{node.span[0]}:{node.span[1]}"
        lines.append(
            f"{node.node_id} | {node.kind} | {node.n1} | {node.n2} | {node.raise_target} | {span}"
        )
    return "\n".join(lines) + "\n"
