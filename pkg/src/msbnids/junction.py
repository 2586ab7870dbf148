"""Junction-tree compilation and two-phase clique propagation.

Compilation: moralize, triangulate (min-fill, lexicographic tie-break),
collect maximal cliques, connect them by a maximum-weight spanning tree on
sepset sizes. Propagation is the classic collect/distribute scheme with
sepset division; potentials stay unnormalized so that the normalization
constant of any clique equals the probability of the entered evidence.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numpy as np

from .bayes import BayesNet, Evidence, Posterior, _broadcast, cpt_factor
from .errors import InconsistentEvidenceError, InvalidAssignmentError

SEPSET_TOL = 1e-12
RESCALE_FLOOR = 1e-140
TREEWIDTH_WARN = 12


@dataclass(eq=False)
class Potential:
    """Dense nonnegative table with one axis per scope variable."""

    scope: tuple[str, ...]
    values: np.ndarray


@dataclass
class MoralGraph:
    nodes: tuple[str, ...]
    adj: dict[str, set[str]]

    @property
    def edges(self) -> set[frozenset[str]]:
        return {frozenset((a, b)) for a in self.adj for b in self.adj[a]}

    def copy(self) -> "MoralGraph":
        return MoralGraph(self.nodes, {n: set(nb) for n, nb in self.adj.items()})


def moralize(dag) -> MoralGraph:
    """Undirected skeleton plus an edge between every pair of co-parents."""
    adj: dict[str, set[str]] = {n: set() for n in dag.nodes}
    for p, c in dag.edges:
        adj[p].add(c)
        adj[c].add(p)
    for node in dag.nodes:
        parents = dag.parents(node)
        for a, b in ((a, b) for i, a in enumerate(parents) for b in parents[i + 1:]):
            adj[a].add(b)
            adj[b].add(a)
    return MoralGraph(tuple(dag.nodes), adj)


def _fill_cost(adj: Mapping[str, set[str]], node: str) -> int:
    nbs = sorted(adj[node])
    return sum(
        1
        for i, a in enumerate(nbs)
        for b in nbs[i + 1:]
        if b not in adj[a]
    )


def triangulate(graph: MoralGraph, heuristic: str = "min-fill"):
    """Fill the graph chordal; returns (filled graph, elimination order).

    Only min-fill is implemented; ties break on the lexicographically
    smallest node name so compiled trees are reproducible.
    """
    if heuristic != "min-fill":
        raise ValueError(f"unknown elimination heuristic '{heuristic}'")
    filled = graph.copy()
    work = graph.copy()
    remaining = set(graph.nodes)
    order: list[str] = []
    while remaining:
        best = min(sorted(remaining), key=lambda n: _fill_cost(work.adj, n))
        order.append(best)
        nbs = sorted(work.adj[best])
        for i, a in enumerate(nbs):
            for b in nbs[i + 1:]:
                if b not in work.adj[a]:
                    work.adj[a].add(b)
                    work.adj[b].add(a)
                    filled.adj[a].add(b)
                    filled.adj[b].add(a)
        for nb in nbs:
            work.adj[nb].discard(best)
        del work.adj[best]
        remaining.discard(best)
    return filled, order


def has_perfect_elimination_order(graph: MoralGraph, order: Sequence[str]) -> bool:
    position = {n: i for i, n in enumerate(order)}
    for v in order:
        later = {u for u in graph.adj[v] if position[u] > position[v]}
        if not later:
            continue
        first = min(later, key=lambda u: position[u])
        if not (later - {first}) <= (graph.adj[first] | {first}):
            return False
    return True


def _elimination_cliques(filled: MoralGraph, order: Sequence[str]) -> list[frozenset[str]]:
    eliminated: set[str] = set()
    cliques: list[frozenset[str]] = []
    for v in order:
        clique = frozenset({v} | {u for u in filled.adj[v] if u not in eliminated})
        eliminated.add(v)
        cliques.append(clique)
    maximal = []
    for c in cliques:
        if not any(c < other for other in cliques):
            maximal.append(c)
    unique: list[frozenset[str]] = []
    for c in maximal:
        if c not in unique:
            unique.append(c)
    return unique


class JunctionTree:
    """Compiled clique tree for one network; immutable after construction.

    `cliques` hold sorted variable tuples, `edges` are (i, j, sepset) with the
    sepset equal to the intersection of the endpoint cliques, `assignment`
    maps each variable to the clique its CPT was multiplied into.
    """

    def __init__(self, net: BayesNet, cliques, edges, assignment, potentials):
        self.net = net
        self.cliques: tuple[tuple[str, ...], ...] = cliques
        self.edges: tuple[tuple[int, int, tuple[str, ...]], ...] = edges
        self.assignment: dict[str, int] = assignment
        self.potentials: list[np.ndarray] = potentials
        self.query_clique: dict[str, int] = {}
        for name in net.names:
            holders = [i for i, c in enumerate(cliques) if name in c]
            self.query_clique[name] = min(holders, key=lambda i: (len(cliques[i]), i))
        self._neighbors: dict[int, list[tuple[int, int]]] = {
            i: [] for i in range(len(cliques))
        }
        for e_idx, (i, j, _sep) in enumerate(edges):
            self._neighbors[i].append((j, e_idx))
            self._neighbors[j].append((i, e_idx))
        # deterministic two-phase schedule rooted at clique 0
        self.root = 0
        parent: dict[int, tuple[int, int] | None] = {self.root: None}
        bfs = [self.root]
        seen = {self.root}
        k = 0
        while k < len(bfs):
            c = bfs[k]
            k += 1
            for nb, e_idx in sorted(self._neighbors[c]):
                if nb not in seen:
                    seen.add(nb)
                    parent[nb] = (c, e_idx)
                    bfs.append(nb)
        self._bfs = bfs
        self._parent = parent

    @property
    def width(self) -> int:
        return max(len(c) for c in self.cliques) - 1

    def containing_clique(self, scope: Iterable[str]) -> int | None:
        want = set(scope)
        best = None
        for i, c in enumerate(self.cliques):
            if want <= set(c):
                if best is None or len(c) < len(self.cliques[best]):
                    best = i
        return best


def build_junction_tree(
    net: BayesNet,
    owned: set[str] | None = None,
    complete: Sequence[Iterable[str]] = (),
) -> JunctionTree:
    """Compile `net` into a junction tree.

    `owned` restricts which CPTs are multiplied into the initial potentials
    (all of them by default); variables without a CPT here contribute the
    neutral all-ones potential. `complete` lists variable sets that must end
    up inside a single clique; they are made complete before triangulation.
    """
    moral = moralize(net.dag)
    for group in complete:
        members = sorted(set(group))
        for i, a in enumerate(members):
            for b in members[i + 1:]:
                moral.adj[a].add(b)
                moral.adj[b].add(a)
    filled, order = triangulate(moral)
    clique_sets = _elimination_cliques(filled, order)
    cliques = tuple(sorted(tuple(sorted(c)) for c in clique_sets))

    # maximum-weight spanning tree over sepset sizes, Kruskal with
    # lexicographic tie-breaking on the clique pair
    candidates = []
    for i in range(len(cliques)):
        for j in range(i + 1, len(cliques)):
            sep = tuple(sorted(set(cliques[i]) & set(cliques[j])))
            candidates.append((-len(sep), cliques[i], cliques[j], i, j, sep))
    candidates.sort()
    comp = list(range(len(cliques)))

    def find(x):
        while comp[x] != x:
            comp[x] = comp[comp[x]]
            x = comp[x]
        return x

    edges = []
    for _negw, _ci, _cj, i, j, sep in candidates:
        ri, rj = find(i), find(j)
        if ri != rj:
            comp[ri] = rj
            edges.append((i, j, sep))
    if net.names:
        tree = JunctionTree(
            net,
            cliques,
            tuple(sorted(edges)),
            _assign_cpts(net, cliques, owned),
            _initial_potentials(net, cliques, owned),
        )
    else:
        raise InvalidAssignmentError("cannot compile an empty network")
    if tree.width > TREEWIDTH_WARN:
        warnings.warn(
            f"compiled tree width {tree.width} exceeds {TREEWIDTH_WARN}; "
            "exact propagation may be slow",
            RuntimeWarning,
            stacklevel=2,
        )
    return tree


def _assign_cpts(net, cliques, owned):
    assignment = {}
    include = set(net.names) if owned is None else set(owned)
    for name in net.names:
        if name not in include:
            continue
        family = {name} | set(net.dag.parents(name))
        holders = [i for i, c in enumerate(cliques) if family <= set(c)]
        if not holders:
            raise InvalidAssignmentError(
                f"no clique contains the family of '{name}'"
            )
        assignment[name] = min(holders, key=lambda i: (len(cliques[i]), i))
    return assignment


def _initial_potentials(net, cliques, owned):
    include = set(net.names) if owned is None else set(owned)
    pots = [np.ones(tuple(net.card(v) for v in c)) for c in cliques]
    assignment = _assign_cpts(net, cliques, owned)
    for name in sorted(include):
        i = assignment[name]
        scope, factor = cpt_factor(net, name)
        pots[i] = pots[i] * _broadcast(factor, scope, cliques[i])
    return pots


def _marginalize(values: np.ndarray, scope, target) -> np.ndarray:
    keep = [scope.index(v) for v in target]
    drop = tuple(i for i in range(len(scope)) if i not in keep)
    out = values.sum(axis=drop) if drop else values
    order = sorted(range(len(target)), key=lambda k: keep[k])
    # axes of `out` follow scope order; permute into target order
    inv = [order.index(k) for k in range(len(target))]
    return out.transpose(inv) if target else out


def _safe_divide(num: np.ndarray, den: np.ndarray) -> np.ndarray:
    out = np.zeros_like(num)
    np.divide(num, den, out=out, where=den != 0)
    return out


class _PropagationState:
    def __init__(self, tree: JunctionTree, evidence: Evidence,
                 extra_factors: Sequence[Potential]):
        self.tree = tree
        self.log_scale = 0.0
        self.cliques = [p.copy() for p in tree.potentials]
        self.sepsets = [np.ones(tuple(tree.net.card(v) for v in sep))
                        for _i, _j, sep in tree.edges]
        for name in sorted(evidence):
            state = evidence[name]
            idx = tree.net.state_index(name, state)
            indicator = np.zeros(tree.net.card(name))
            indicator[idx] = 1.0
            c = tree.query_clique[name]
            self.cliques[c] = self.cliques[c] * _broadcast(
                indicator, (name,), tree.cliques[c]
            )
        for pot in extra_factors:
            c = tree.containing_clique(pot.scope)
            if c is None:
                raise InvalidAssignmentError(
                    f"no clique contains factor scope {pot.scope}"
                )
            self.cliques[c] = self.cliques[c] * _broadcast(
                pot.values, pot.scope, tree.cliques[c]
            )
        self._rescale_all()

    def _rescale(self, c: int):
        m = float(self.cliques[c].max())
        if 0.0 < m < RESCALE_FLOOR:
            self.cliques[c] = self.cliques[c] / m
            self.log_scale += math.log(m)

    def _rescale_all(self):
        for c in range(len(self.cliques)):
            self._rescale(c)

    def _pass_message(self, src: int, dst: int, e_idx: int):
        _i, _j, sep = self.tree.edges[e_idx]
        msg = _marginalize(self.cliques[src], self.tree.cliques[src], sep)
        ratio = _safe_divide(msg, self.sepsets[e_idx])
        self.cliques[dst] = self.cliques[dst] * _broadcast(
            ratio, sep, self.tree.cliques[dst]
        )
        self.sepsets[e_idx] = msg
        self._rescale(dst)


def _collect(state: _PropagationState):
    tree = state.tree
    for c in reversed(tree._bfs):
        link = tree._parent[c]
        if link is not None:
            parent, e_idx = link
            state._pass_message(c, parent, e_idx)
    return state


def _distribute(state: _PropagationState):
    tree = state.tree
    for c in tree._bfs:
        link = tree._parent[c]
        if link is not None:
            parent, e_idx = link
            state._pass_message(parent, c, e_idx)
    return state


def propagate(
    tree: JunctionTree,
    evidence: Evidence | None = None,
    extra_factors: Sequence[Potential] = (),
) -> "CalibratedTree":
    """Enter evidence as indicator likelihoods and run collect + distribute.

    Returns a fresh calibrated structure; the compiled tree is never
    mutated, so concurrent propagations over one tree are safe.
    """
    state = _PropagationState(tree, evidence or {}, extra_factors)
    _collect(state)
    z = float(state.cliques[tree.root].sum())
    if z <= 0.0:
        raise InconsistentEvidenceError(
            f"evidence {sorted((evidence or {}).items())} has probability 0"
        )
    _distribute(state)
    return CalibratedTree(tree, state.cliques, state.sepsets, state.log_scale)


class CalibratedTree:
    """Result of propagation: consistent clique and sepset tables."""

    def __init__(self, tree, cliques, sepsets, log_scale):
        self.tree = tree
        self.cliques = cliques
        self.sepsets = sepsets
        self.log_scale = log_scale
        self._z = float(cliques[tree.root].sum())

    @property
    def p_evidence(self) -> float:
        return self._z * math.exp(self.log_scale)

    @property
    def log_p_evidence(self) -> float:
        return math.log(self._z) + self.log_scale

    def query_from_clique(self, variable: str, clique_idx: int) -> Posterior:
        var = self.tree.net.variable(variable)
        if variable not in self.tree.cliques[clique_idx]:
            raise InvalidAssignmentError(
                f"clique {clique_idx} does not contain '{variable}'"
            )
        dist = _marginalize(
            self.cliques[clique_idx], self.tree.cliques[clique_idx], (variable,)
        )
        total = float(dist.sum())
        if total <= 0.0:
            raise InconsistentEvidenceError("calibrated table sums to 0")
        return Posterior(variable, var.states, dist / total)

    def query(self, variable: str) -> Posterior:
        if variable not in self.tree.query_clique:
            raise InvalidAssignmentError(f"unknown variable '{variable}'")
        return self.query_from_clique(variable, self.tree.query_clique[variable])

    def marginal(self, scope: Sequence[str]) -> Potential:
        """Normalized marginal over `scope`; scope must fit in one clique."""
        scope = tuple(scope)
        c = self.tree.containing_clique(scope)
        if c is None:
            raise InvalidAssignmentError(f"no clique contains {scope}")
        values = _marginalize(self.cliques[c], self.tree.cliques[c], scope)
        total = float(values.sum())
        if total <= 0.0:
            raise InconsistentEvidenceError("marginal sums to 0")
        return Potential(scope, values / total)

    def calibration_error(self) -> float:
        """Worst sepset disagreement between adjacent cliques, scale-free."""
        worst = 0.0
        for e_idx, (i, j, sep) in enumerate(self.tree.edges):
            a = _marginalize(self.cliques[i], self.tree.cliques[i], sep)
            b = _marginalize(self.cliques[j], self.tree.cliques[j], sep)
            scale = max(float(a.max()), float(b.max()), 1e-300)
            worst = max(
                worst,
                float(np.abs(a - b).max()) / scale,
                float(np.abs(a - self.sepsets[e_idx]).max()) / scale,
            )
        return worst

    def represented_value(self, assignment: Mapping[str, str]) -> float:
        """Evaluate (prod cliques / prod sepsets) at one full assignment."""
        return _represented_value(
            self.tree, self.cliques, self.sepsets, self.log_scale, assignment
        )


def _represented_value(tree, cliques, sepsets, log_scale, assignment) -> float:
    idx = {n: tree.net.state_index(n, s) for n, s in assignment.items()}
    num = 1.0
    for c, pot in zip(tree.cliques, cliques):
        num *= float(pot[tuple(idx[v] for v in c)])
    den = 1.0
    for (_i, _j, sep), pot in zip(tree.edges, sepsets):
        den *= float(pot[tuple(idx[v] for v in sep)]) if sep else float(pot)
    if den == 0.0:
        return 0.0
    return num / den * math.exp(log_scale)
