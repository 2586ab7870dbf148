"""Discrete Bayesian networks: representation, validation, parameter fitting,
and a brute-force enumeration engine used as the ground-truth oracle by the
rest of the package.

All probability tables are stored row-major: a CPT row is selected by the
mixed-radix index of the parent states in the declared parent order (the last
parent varies fastest), matching the on-disk model format.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import (
    InconsistentEvidenceError,
    InsufficientDataError,
    InvalidAssignmentError,
    NetworkTooLargeError,
)

PROB_TOL = 1e-9
DEFAULT_ENUM_CAP = 2**22

# variable name -> observed state label
Evidence = Mapping[str, str]


@dataclass(frozen=True)
class Variable:
    name: str
    states: tuple[str, ...]

    def index_of(self, state: str) -> int:
        try:
            return self.states.index(state)
        except ValueError:
            raise InvalidAssignmentError(
                f"variable '{self.name}' has no state '{state}'"
            ) from None


@dataclass(frozen=True)
class Dag:
    nodes: tuple[str, ...]
    edges: frozenset[tuple[str, str]]

    def parents(self, node: str) -> tuple[str, ...]:
        return tuple(sorted(p for p, c in self.edges if c == node))

    def children(self, node: str) -> tuple[str, ...]:
        return tuple(sorted(c for p, c in self.edges if p == node))

    def topological_order(self) -> list[str] | None:
        """Node order with parents first, or None if the graph has a cycle."""
        indeg = {n: 0 for n in self.nodes}
        for p, c in self.edges:
            if c in indeg:
                indeg[c] += 1
        ready = sorted(n for n, d in indeg.items() if d == 0)
        order: list[str] = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            changed = False
            for c in self.children(n):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
                    changed = True
            if changed:
                ready.sort()
        return order if len(order) == len(self.nodes) else None

    def induced(self, keep: Iterable[str]) -> "Dag":
        kept = set(keep)
        return Dag(
            tuple(n for n in self.nodes if n in kept),
            frozenset((p, c) for p, c in self.edges if p in kept and c in kept),
        )


@dataclass(eq=False)
class Cpt:
    """P(child | parents), one row per parent-state combination."""

    child: str
    parents: tuple[str, ...]
    table: np.ndarray  # shape (n_parent_combinations, n_child_states)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Cpt)
            and self.child == other.child
            and self.parents == other.parents
            and self.table.shape == other.table.shape
            and bool(np.array_equal(self.table, other.table))
        )


class BayesNet:
    """Immutable DAG-plus-CPTs model. Operations on it are pure functions."""

    def __init__(
        self,
        variables: Sequence[Variable],
        edges: Iterable[tuple[str, str]],
        cpts: Mapping[str, Cpt],
    ):
        self.variables = tuple(variables)
        self.dag = Dag(tuple(v.name for v in self.variables), frozenset(edges))
        self.cpts = dict(cpts)
        self._by_name = {v.name: v for v in self.variables}

    @property
    def names(self) -> tuple[str, ...]:
        return self.dag.nodes

    def variable(self, name: str) -> Variable:
        try:
            return self._by_name[name]
        except KeyError:
            raise InvalidAssignmentError(f"unknown variable '{name}'") from None

    def card(self, name: str) -> int:
        return len(self.variable(name).states)

    def state_index(self, name: str, state: str) -> int:
        return self.variable(name).index_of(state)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, BayesNet)
            and self.variables == other.variables
            and self.dag == other.dag
            and self.cpts == other.cpts
        )


@dataclass(eq=False)
class Posterior:
    variable: str
    states: tuple[str, ...]
    probs: np.ndarray

    def __getitem__(self, state: str) -> float:
        return float(self.probs[self.states.index(state)])

    def as_dict(self) -> dict[str, float]:
        return {s: float(p) for s, p in zip(self.states, self.probs)}

    def argmax(self) -> tuple[str, float]:
        i = int(np.argmax(self.probs))
        return self.states[i], float(self.probs[i])


def validate_network(net: BayesNet) -> list[str]:
    """Structural and numeric checks; an empty report means a valid network.

    Violations are data, not exceptions: each entry names the variable, edge,
    or CPT row at fault.
    """
    report: list[str] = []
    seen: set[str] = set()
    for v in net.variables:
        if v.name in seen:
            report.append(f"duplicate variable name '{v.name}'")
        seen.add(v.name)
        if len(v.states) < 2:
            report.append(f"variable '{v.name}' has fewer than 2 states")
        if len(set(v.states)) != len(v.states):
            report.append(f"variable '{v.name}' has duplicate state labels")
    for p, c in sorted(net.dag.edges):
        if p not in seen or c not in seen:
            report.append(f"edge ({p}, {c}) references an undeclared node")
    if net.dag.topological_order() is None:
        report.append("graph has a directed cycle")
    for v in net.variables:
        cpt = net.cpts.get(v.name)
        if cpt is None:
            report.append(f"variable '{v.name}' has no CPT")
            continue
        dag_parents = set(net.dag.parents(v.name))
        if set(cpt.parents) != dag_parents:
            report.append(
                f"cpt for '{v.name}': parents {sorted(cpt.parents)} do not match "
                f"graph parents {sorted(dag_parents)}"
            )
            continue
        try:
            n_rows = math.prod(net.card(p) for p in cpt.parents)
        except InvalidAssignmentError:
            continue
        if cpt.table.shape != (n_rows, net.card(v.name)):
            report.append(
                f"cpt for '{v.name}': table shape {cpt.table.shape} does not cover "
                f"{n_rows} parent combinations x {net.card(v.name)} states"
            )
            continue
        if np.any(cpt.table < 0):
            report.append(f"cpt for '{v.name}': negative probability entry")
        sums = cpt.table.sum(axis=1)
        for r in np.nonzero(np.abs(sums - 1.0) > PROB_TOL)[0]:
            combo = _row_combination(net, cpt, int(r))
            report.append(
                f"cpt for '{v.name}': row {combo} sums to {sums[r]:.9g}, not 1"
            )
    return report


def _row_combination(net: BayesNet, cpt: Cpt, row: int) -> str:
    if not cpt.parents:
        return "()"
    idx = []
    for p in reversed(cpt.parents):
        k = net.card(p)
        idx.append(row % k)
        row //= k
    idx.reverse()
    pairs = [f"{p}={net.variable(p).states[i]}" for p, i in zip(cpt.parents, idx)]
    return "(" + ", ".join(pairs) + ")"


def _row_index(net: BayesNet, cpt: Cpt, assignment: Mapping[str, str]) -> int:
    row = 0
    for p in cpt.parents:
        if p not in assignment:
            raise InvalidAssignmentError(f"assignment is missing '{p}'")
        row = row * net.card(p) + net.state_index(p, assignment[p])
    return row


def joint_probability(net: BayesNet, assignment: Mapping[str, str]) -> float:
    """Probability of one full assignment, read off the CPT factorization."""
    missing = set(net.names) - set(assignment)
    if missing:
        raise InvalidAssignmentError(f"assignment is missing {sorted(missing)}")
    extra = set(assignment) - set(net.names)
    if extra:
        raise InvalidAssignmentError(f"assignment has unknown variables {sorted(extra)}")
    p = 1.0
    for v in net.variables:
        cpt = net.cpts[v.name]
        row = _row_index(net, cpt, assignment)
        p *= float(cpt.table[row, v.index_of(assignment[v.name])])
    return p


def _broadcast(values: np.ndarray, scope: Sequence[str], target: Sequence[str]) -> np.ndarray:
    """Reorder/insert axes so `values` (over `scope`) broadcasts over `target`."""
    pos = {name: i for i, name in enumerate(target)}
    order = sorted(range(len(scope)), key=lambda i: pos[scope[i]])
    arr = values.transpose(order)
    shape = [1] * len(target)
    for i in order:
        shape[pos[scope[i]]] = values.shape[i]
    return arr.reshape(shape)


def cpt_factor(net: BayesNet, name: str) -> tuple[tuple[str, ...], np.ndarray]:
    """CPT of `name` as a dense factor over (parents..., child)."""
    cpt = net.cpts[name]
    shape = tuple(net.card(p) for p in cpt.parents) + (net.card(name),)
    return cpt.parents + (name,), cpt.table.reshape(shape)


def joint_table(
    net: BayesNet,
    evidence: Evidence | None = None,
    cap: int = DEFAULT_ENUM_CAP,
) -> tuple[list[str], np.ndarray]:
    """Dense joint over the unobserved variables, observed ones held fixed.

    Each entry is the product of CPT lookups at that completion, so the total
    mass of the table equals the probability of the evidence. Raises
    NetworkTooLargeError when the table would exceed `cap` entries.
    """
    ev = dict(evidence or {})
    ev_idx = {}
    for name, state in ev.items():
        ev_idx[name] = net.state_index(name, state)
    free = [v.name for v in net.variables if v.name not in ev]
    size = math.prod(net.card(n) for n in free) if free else 1
    if size > cap:
        raise NetworkTooLargeError(
            f"enumeration needs {size} joint entries, cap is {cap}"
        )
    acc = np.ones(tuple(net.card(n) for n in free))
    for v in net.variables:
        scope, factor = cpt_factor(net, v.name)
        index = tuple(
            ev_idx[s] if s in ev_idx else slice(None) for s in scope
        )
        sub_scope = [s for s in scope if s not in ev_idx]
        sub = factor[index]
        acc = acc * _broadcast(sub, sub_scope, free)
    return free, acc


def enumerate_posterior(
    net: BayesNet,
    query: str,
    evidence: Evidence | None = None,
    cap: int = DEFAULT_ENUM_CAP,
) -> Posterior:
    """Exact posterior by summing the factorized joint over all completions.

    This is the project-wide reference: every other inference path is tested
    against it. Evidence with zero probability raises
    InconsistentEvidenceError rather than returning NaNs.
    """
    var = net.variable(query)
    ev = dict(evidence or {})
    free, table = joint_table(net, ev, cap)
    total = float(table.sum())
    if total <= 0.0:
        raise InconsistentEvidenceError(
            f"evidence {sorted(ev.items())} has probability 0"
        )
    if query in ev:
        probs = np.zeros(len(var.states))
        probs[var.index_of(ev[query])] = 1.0
        return Posterior(query, var.states, probs)
    axis = free.index(query)
    others = tuple(i for i in range(len(free)) if i != axis)
    dist = table.sum(axis=others) if others else table
    return Posterior(query, var.states, dist / total)


def enumerate_posteriors(
    net: BayesNet,
    evidence: Evidence | None = None,
    cap: int = DEFAULT_ENUM_CAP,
) -> dict[str, Posterior]:
    """Posteriors for every variable from a single joint enumeration pass."""
    ev = dict(evidence or {})
    free, table = joint_table(net, ev, cap)
    total = float(table.sum())
    if total <= 0.0:
        raise InconsistentEvidenceError(
            f"evidence {sorted(ev.items())} has probability 0"
        )
    out: dict[str, Posterior] = {}
    for v in net.variables:
        if v.name in ev:
            probs = np.zeros(len(v.states))
            probs[v.index_of(ev[v.name])] = 1.0
        else:
            axis = free.index(v.name)
            others = tuple(i for i in range(len(free)) if i != axis)
            dist = table.sum(axis=others) if others else table
            probs = dist / total
        out[v.name] = Posterior(v.name, v.states, probs)
    return out


def evidence_probability(
    net: BayesNet, evidence: Evidence, cap: int = DEFAULT_ENUM_CAP
) -> float:
    _, table = joint_table(net, evidence, cap)
    return float(table.sum())


def fit_cpts(
    variables: Sequence[Variable],
    edges: Iterable[tuple[str, str]],
    records: Sequence[Mapping[str, str]],
    alpha: float = 1.0,
) -> BayesNet:
    """Fit one CPT per variable from complete records with Laplace smoothing.

    Each entry is (count + alpha) / (row total + alpha * n_child_states), so
    parent combinations never seen in the data yield uniform rows.
    """
    if alpha <= 0:
        raise ValueError("smoothing pseudo-count alpha must be positive")
    if not records:
        raise InsufficientDataError("cannot fit CPTs from zero records")
    variables = tuple(variables)
    dag = Dag(tuple(v.name for v in variables), frozenset(edges))
    by_name = {v.name: v for v in variables}
    cpts: dict[str, Cpt] = {}
    for v in variables:
        parents = dag.parents(v.name)
        n_rows = math.prod(len(by_name[p].states) for p in parents)
        counts = np.zeros((n_rows, len(v.states)))
        for rec in records:
            row = 0
            for p in parents:
                row = row * len(by_name[p].states) + by_name[p].index_of(rec[p])
            counts[row, v.index_of(rec[v.name])] += 1.0
        table = (counts + alpha) / (
            counts.sum(axis=1, keepdims=True) + alpha * len(v.states)
        )
        cpts[v.name] = Cpt(v.name, parents, table)
    return BayesNet(variables, dag.edges, cpts)


def sample_records(
    net: BayesNet, n: int, rng: np.random.Generator
) -> list[dict[str, str]]:
    """Forward-sample complete records in topological order."""
    order = net.dag.topological_order()
    if order is None:
        raise InvalidAssignmentError("cannot sample from a cyclic graph")
    out = []
    for _ in range(n):
        rec: dict[str, str] = {}
        for name in order:
            v = net.variable(name)
            cpt = net.cpts[name]
            row = _row_index(net, cpt, rec)
            i = int(rng.choice(len(v.states), p=cpt.table[row]))
            rec[name] = v.states[i]
        out.append(rec)
    return out


def all_assignments(net: BayesNet) -> Iterable[dict[str, str]]:
    """Every full assignment, in lexicographic state order."""
    names = list(net.names)
    state_lists = [net.variable(n).states for n in names]
    for combo in itertools.product(*state_lists):
        yield dict(zip(names, combo))
