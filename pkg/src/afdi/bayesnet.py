"""Exact inference on small discrete Bayesian networks.

Queries run bucket (variable) elimination over dense factor tables:
each non-query variable is summed out in turn after multiplying the
factors that mention it.  Networks here are tiny (a handful of
three-state nodes), so no junction trees, no approximation, and no
attention to elimination-order width beyond a deterministic default.

Network documents are JSON: a list of nodes, each with a name, its
state names, its parent list, and a CPT holding one row per parent
assignment (first-listed parent varying slowest), each row a
distribution over the node's states.
"""

from __future__ import annotations

import itertools
import json
import logging
from dataclasses import dataclass
from typing import Mapping, Sequence

from .states import StateDistribution

__all__ = [
    "NetNode",
    "DiscreteBayesNet",
    "Factor",
    "NetLoadError",
    "ImpossibleEvidenceError",
    "load_net",
    "marginal",
    "posterior_given_evidence",
    "joint_probability",
]

log = logging.getLogger(__name__)

# Row sums are kept bit-exact when within KEEP_TOL, silently rescaled
# within QUIET_TOL, rescaled with a warning record within REJECT_TOL,
# and refused beyond that.
KEEP_TOL = 1e-12
QUIET_TOL = 1e-9
REJECT_TOL = 0.02


class NetLoadError(ValueError):
    pass


class ImpossibleEvidenceError(ValueError):
    """The conditioned-on evidence has probability zero under the net."""


@dataclass(frozen=True)
class NetNode:
    name: str
    states: tuple[str, ...]
    parents: tuple[str, ...]

    @property
    def card(self) -> int:
        return len(self.states)


class DiscreteBayesNet:
    """Validated, immutable network; build via ``load_net``."""

    def __init__(self, nodes: Sequence[NetNode], cpts: Mapping[str, tuple], load_warnings=()):
        self.nodes = tuple(nodes)
        self._by_name = {n.name: n for n in self.nodes}
        # cpts[name][row][state]; rows ordered over parent assignments
        # with the first-listed parent varying slowest.
        self.cpts = {name: tuple(tuple(row) for row in table) for name, table in cpts.items()}
        self.load_warnings = list(load_warnings)

    def node(self, name: str) -> NetNode:
        try:
            return self._by_name[name]
        except KeyError:
            raise ValueError(f"unknown node {name!r}") from None

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(n.name for n in self.nodes)

    def topological_order(self) -> tuple[str, ...]:
        # nodes are stored in load order, which load_net verifies is
        # consistent with some topological order; recompute anyway so
        # callers never depend on document order.
        remaining = {n.name: set(n.parents) for n in self.nodes}
        out = []
        while remaining:
            ready = sorted(name for name, deps in remaining.items() if not deps)
            if not ready:
                raise NetLoadError("cycle in parent graph")
            for name in ready:
                out.append(name)
                del remaining[name]
            for deps in remaining.values():
                deps.difference_update(ready)
        return tuple(out)

    def state_index(self, node_name: str, state) -> int:
        node = self.node(node_name)
        if isinstance(state, str):
            try:
                return node.states.index(state)
            except ValueError:
                raise ValueError(f"node {node_name!r} has no state {state!r}") from None
        idx = int(state)
        if not 0 <= idx < node.card:
            raise ValueError(f"state {idx} outside 0..{node.card - 1} for node {node_name!r}")
        return idx


@dataclass
class Factor:
    """Dense table over an ordered scope, row-major with the first
    scope variable varying slowest."""

    scope: tuple[str, ...]
    cards: tuple[int, ...]
    values: list[float]

    def __post_init__(self) -> None:
        size = 1
        for c in self.cards:
            size *= c
        if len(self.values) != size:
            raise ValueError(f"factor over {self.scope} needs {size} values, got {len(self.values)}")

    def _strides(self) -> tuple[int, ...]:
        strides = []
        acc = 1
        for c in reversed(self.cards):
            strides.append(acc)
            acc *= c
        return tuple(reversed(strides))

    def value_at(self, assignment: Mapping[str, int]) -> float:
        idx = 0
        for var, stride in zip(self.scope, self._strides()):
            idx += assignment[var] * stride
        return self.values[idx]

    def multiply(self, other: "Factor") -> "Factor":
        scope = self.scope + tuple(v for v in other.scope if v not in self.scope)
        card_of = dict(zip(self.scope, self.cards))
        card_of.update(zip(other.scope, other.cards))
        cards = tuple(card_of[v] for v in scope)
        values = []
        for combo in itertools.product(*(range(c) for c in cards)):
            assignment = dict(zip(scope, combo))
            values.append(self.value_at(assignment) * other.value_at(assignment))
        return Factor(scope, cards, values)

    def sum_out(self, var: str) -> "Factor":
        if var not in self.scope:
            raise ValueError(f"{var!r} not in factor scope {self.scope}")
        pos = self.scope.index(var)
        scope = self.scope[:pos] + self.scope[pos + 1:]
        cards = self.cards[:pos] + self.cards[pos + 1:]
        values = [0.0] * (len(self.values) // self.cards[pos])
        out_strides = []
        acc = 1
        for c in reversed(cards):
            out_strides.append(acc)
            acc *= c
        out_strides = tuple(reversed(out_strides))
        for combo in itertools.product(*(range(c) for c in self.cards)):
            out_idx = 0
            k = 0
            for i, s in enumerate(combo):
                if i == pos:
                    continue
                out_idx += s * out_strides[k]
                k += 1
            values[out_idx] += self.value_at(dict(zip(self.scope, combo)))
        return Factor(scope, cards, values)

    def reduce(self, var: str, state: int) -> "Factor":
        """Condition on var=state; the variable leaves the scope."""
        if var not in self.scope:
            return self
        pos = self.scope.index(var)
        scope = self.scope[:pos] + self.scope[pos + 1:]
        cards = self.cards[:pos] + self.cards[pos + 1:]
        values = []
        for combo in itertools.product(*(range(c) for c in cards)):
            assignment = dict(zip(scope, combo))
            assignment[var] = state
            values.append(self.value_at(assignment))
        return Factor(scope, cards, values)

    @classmethod
    def from_cpt(cls, net: DiscreteBayesNet, name: str) -> "Factor":
        node = net.node(name)
        scope = node.parents + (name,)
        cards = tuple(net.node(p).card for p in node.parents) + (node.card,)
        values = [v for row in net.cpts[name] for v in row]
        return cls(scope, cards, values)


def _parent_rows(net_nodes: Mapping[str, NetNode], node: NetNode) -> int:
    rows = 1
    for p in node.parents:
        rows *= net_nodes[p].card
    return rows


def load_net(source) -> DiscreteBayesNet:
    """Parse and validate a network document (path, file-like, or dict).

    CPT rows are checked against the distribution invariant: a row sum
    within 1e-12 of 1 is kept bit-for-bit, small drift is rescaled
    (silently up to 1e-9, with a warning record up to 0.02), and
    anything further off is rejected as a likely authoring error.
    """
    if isinstance(source, dict):
        doc = source
    elif hasattr(source, "read"):
        doc = json.load(source)
    else:
        with open(source, "r", encoding="utf-8") as fh:
            doc = json.load(fh)

    raw_nodes = doc.get("nodes")
    if not raw_nodes:
        raise NetLoadError("document has no nodes")
    nodes = []
    for item in raw_nodes:
        try:
            node = NetNode(
                name=str(item["name"]),
                states=tuple(str(s) for s in item["states"]),
                parents=tuple(str(p) for p in item.get("parents", ())),
            )
        except KeyError as exc:
            raise NetLoadError(f"node entry missing field {exc}") from None
        if node.card < 2:
            raise NetLoadError(f"node {node.name!r} needs at least 2 states")
        nodes.append(node)
    by_name = {n.name: n for n in nodes}
    if len(by_name) != len(nodes):
        raise NetLoadError("duplicate node names")
    for node in nodes:
        for p in node.parents:
            if p not in by_name:
                raise NetLoadError(f"node {node.name!r} lists unknown parent {p!r}")

    # acyclicity via Kahn's algorithm
    remaining = {n.name: set(n.parents) for n in nodes}
    while remaining:
        ready = [name for name, deps in remaining.items() if not deps]
        if not ready:
            raise NetLoadError(f"cycle involving nodes {sorted(remaining)}")
        for name in ready:
            del remaining[name]
        for deps in remaining.values():
            deps.difference_update(ready)

    warnings_acc: list[str] = []
    cpts = {}
    for item, node in zip(raw_nodes, nodes):
        table = item.get("cpt")
        if table is None:
            raise NetLoadError(f"node {node.name!r} has no cpt")
        expected_rows = _parent_rows(by_name, node)
        if len(table) != expected_rows:
            raise NetLoadError(
                f"node {node.name!r}: cpt has {len(table)} rows, expected {expected_rows}"
            )
        rows = []
        for r, raw_row in enumerate(table):
            row = tuple(float(v) for v in raw_row)
            if len(row) != node.card:
                raise NetLoadError(
                    f"node {node.name!r} row {r}: {len(row)} entries for {node.card} states"
                )
            if any(v < 0.0 for v in row):
                raise NetLoadError(f"node {node.name!r} row {r}: negative probability")
            total = sum(row)
            dev = abs(total - 1.0)
            if dev <= KEEP_TOL:
                pass
            elif dev <= REJECT_TOL:
                row = tuple(v / total for v in row)
                if dev > QUIET_TOL:
                    msg = f"node {node.name!r} row {r}: sum {total} renormalized"
                    warnings_acc.append(msg)
                    log.warning(msg)
            else:
                raise NetLoadError(
                    f"node {node.name!r} row {r}: sum {total} deviates more than {REJECT_TOL}"
                )
            rows.append(row)
        cpts[node.name] = tuple(rows)

    return DiscreteBayesNet(nodes, cpts, warnings_acc)


def _normalize_evidence(net: DiscreteBayesNet, evidence) -> dict[str, int]:
    if not evidence:
        return {}
    out = {}
    for name, state in evidence.items():
        net.node(name)  # existence check
        out[name] = net.state_index(name, state)
    return out


def _run_elimination(net, query: str, evidence: dict[str, int], order):
    factors = [Factor.from_cpt(net, n.name) for n in net.nodes]
    for var, state in evidence.items():
        factors = [f.reduce(var, state) for f in factors]

    to_eliminate = [n for n in net.names if n != query and n not in evidence]
    if order is None:
        topo = net.topological_order()
        order = [n for n in reversed(topo) if n != query and n not in evidence]
    else:
        order = list(order)
        if sorted(order) != sorted(to_eliminate):
            raise ValueError(
                f"elimination order must cover exactly {sorted(to_eliminate)}, got {sorted(order)}"
            )

    for var in order:
        bucket = [f for f in factors if var in f.scope]
        rest = [f for f in factors if var not in f.scope]
        if not bucket:
            continue
        product = bucket[0]
        for f in bucket[1:]:
            product = product.multiply(f)
        factors = rest + [product.sum_out(var)]

    result = Factor((), (), [1.0])
    for f in factors:
        result = result.multiply(f)
    if result.scope != (query,):
        raise ValueError(f"elimination left scope {result.scope}, expected ({query!r},)")
    return result


def marginal(net: DiscreteBayesNet, query: str, elimination_order=None) -> StateDistribution:
    """P(query) by summing out every other node; normalized exactly."""
    net.node(query)
    result = _run_elimination(net, query, {}, elimination_order)
    total = sum(result.values)
    if total <= 0.0:
        raise ValueError(f"marginal of {query!r} has zero mass; CPTs inconsistent")
    if abs(total - 1.0) > KEEP_TOL:
        values = tuple(v / total for v in result.values)
    else:
        values = tuple(result.values)
    return StateDistribution(values)


def posterior_given_evidence(net: DiscreteBayesNet, query: str, evidence) -> StateDistribution:
    """P(query | evidence); evidence with zero likelihood is an error,
    never a silent NaN."""
    net.node(query)
    ev = _normalize_evidence(net, evidence)
    if query in ev:
        raise ValueError(f"evidence already fixes the query node {query!r}")
    result = _run_elimination(net, query, ev, None)
    total = sum(result.values)
    if total <= 0.0:
        raise ImpossibleEvidenceError(f"evidence {evidence!r} has probability zero")
    if abs(total - 1.0) > KEEP_TOL:
        values = tuple(v / total for v in result.values)
    else:
        values = tuple(result.values)
    return StateDistribution(values)


def joint_probability(net: DiscreteBayesNet, assignment: Mapping[str, int]) -> float:
    """Product of CPT entries along a full assignment (states by index or name)."""
    missing = [n for n in net.names if n not in assignment]
    if missing:
        raise ValueError(f"assignment missing nodes {missing}")
    fixed = {name: net.state_index(name, state) for name, state in assignment.items()}
    prob = 1.0
    for node in net.nodes:
        row_idx = 0
        for p in node.parents:
            row_idx = row_idx * net.node(p).card + fixed[p]
        prob *= net.cpts[node.name][row_idx][fixed[node.name]]
    return prob
