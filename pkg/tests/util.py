"""Shared generators and independent oracles for the test suite.

The oracles here are deliberately written without reusing the library's
inference code paths: hand enumeration iterates Python loops over CPT
lookups, chordality is checked by maximum cardinality search, and moral
edges are counted pairwise.
"""

from __future__ import annotations

import itertools
import math

import numpy as np

from msbnids.bayes import BayesNet, Cpt, Variable


def random_net(
    rng: np.random.Generator,
    n_vars: int = 6,
    max_states: int = 3,
    edge_p: float = 0.35,
    max_parents: int = 3,
) -> BayesNet:
    names = [f"v{i}" for i in range(n_vars)]
    variables = [
        Variable(n, tuple(f"s{k}" for k in range(rng.integers(2, max_states + 1))))
        for n in names
    ]
    edges = []
    for j in range(1, n_vars):
        candidates = [i for i in range(j) if rng.random() < edge_p]
        rng.shuffle(candidates)
        for i in candidates[:max_parents]:
            edges.append((names[i], names[j]))
    cards = {v.name: len(v.states) for v in variables}
    cpts = {}
    for v in variables:
        parents = tuple(sorted(p for p, c in edges if c == v.name))
        n_rows = math.prod(cards[p] for p in parents)
        table = rng.dirichlet(np.ones(cards[v.name]), size=n_rows)
        cpts[v.name] = Cpt(v.name, parents, table)
    return BayesNet(variables, edges, cpts)


def hand_enumerate(net: BayesNet, query: str, evidence: dict[str, str]) -> dict[str, float]:
    """Posterior by explicit loop over every full assignment (no numpy)."""
    states = {v.name: v.states for v in net.variables}
    names = list(net.names)
    acc = {s: 0.0 for s in states[query]}
    for combo in itertools.product(*(states[n] for n in names)):
        assignment = dict(zip(names, combo))
        if any(assignment[k] != v for k, v in evidence.items()):
            continue
        p = 1.0
        for n in names:
            cpt = net.cpts[n]
            row = 0
            for par in cpt.parents:
                row = row * len(states[par]) + states[par].index(assignment[par])
            p *= float(cpt.table[row, states[n].index(assignment[n])])
        acc[assignment[query]] += p
    total = sum(acc.values())
    if total == 0.0:
        raise ZeroDivisionError("evidence has probability 0")
    return {s: p / total for s, p in acc.items()}


def mcs_is_chordal(nodes, edges) -> bool:
    """Maximum cardinality search chordality test (independent checker)."""
    adj = {n: set() for n in nodes}
    for e in edges:
        a, b = tuple(e)
        adj[a].add(b)
        adj[b].add(a)
    weight = {n: 0 for n in nodes}
    order = []
    numbered = set()
    while len(order) < len(nodes):
        pick = max(sorted(weight), key=lambda n: weight[n])
        order.append(pick)
        numbered.add(pick)
        for nb in adj[pick]:
            if nb not in numbered:
                weight[nb] += 1
        del weight[pick]
    # order is a perfect elimination order reversed iff the graph is chordal
    position = {n: i for i, n in enumerate(order)}
    for v in order:
        earlier = {u for u in adj[v] if position[u] < position[v]}
        if not earlier:
            continue
        last = max(earlier, key=lambda u: position[u])
        if not (earlier - {last}) <= adj[last]:
            return False
    return True


def count_undirected_pairs(edges) -> int:
    return len({frozenset(e) for e in edges})


def random_msbn(rng: np.random.Generator, n_subnets: int = 3, n_vars: int = 10,
                max_states: int = 3):
    """Random valid sectioned network built by grouping junction-tree cliques.

    Grouping connected subtrees of a junction tree of a random net preserves
    the running-intersection property, so the hypertree and d-sepset
    conditions hold by construction.
    """
    from msbnids.junction import build_junction_tree
    from msbnids.msbn import Msbn, Subnet

    net = random_net(rng, n_vars=n_vars, max_states=max_states, edge_p=0.4)
    jt = build_junction_tree(net)
    n_cliques = len(jt.cliques)
    k = min(n_subnets, n_cliques)
    # grow k connected clique groups over the tree
    adj = {i: set() for i in range(n_cliques)}
    for i, j, _sep in jt.edges:
        adj[i].add(j)
        adj[j].add(i)
    seeds = list(rng.choice(n_cliques, size=k, replace=False))
    group = {c: -1 for c in range(n_cliques)}
    frontier = []
    for g, s in enumerate(seeds):
        group[int(s)] = g
        frontier.append(int(s))
    while frontier:
        order = sorted(frontier)
        frontier = []
        for c in order:
            for nb in sorted(adj[c]):
                if group[nb] == -1:
                    group[nb] = group[c]
                    frontier.append(nb)
    subnets = []
    for g in range(k):
        vs: set[str] = set()
        for c in range(n_cliques):
            if group[c] == g:
                vs.update(jt.cliques[c])
        subnets.append(vs)
    # merge empty groups defensively (cannot happen with BFS fill, kept cheap)
    subnets = [s for s in subnets if s]
    k = len(subnets)
    owned: list[set[str]] = [set() for _ in range(k)]
    for v in net.names:
        fam = {v} | set(net.dag.parents(v))
        home = next(g for g in range(k) if fam <= subnets[g])
        owned[home].add(v)
    links = set()
    for i, j, _sep in jt.edges:
        gi, gj = group[i], group[j]
        if gi != gj:
            links.add((f"s{min(gi, gj)}", f"s{max(gi, gj)}"))
    subnet_objs = tuple(
        Subnet(f"s{g}", tuple(sorted(subnets[g])), frozenset(owned[g]))
        for g in range(k)
    )
    return Msbn(net, subnet_objs, tuple(sorted(links)))


def random_evidence(rng: np.random.Generator, net: BayesNet, max_items: int = 4):
    n = int(rng.integers(0, max_items + 1))
    names = list(net.names)
    rng.shuffle(names)
    ev = {}
    for name in names[:n]:
        v = net.variable(name)
        ev[name] = v.states[int(rng.integers(0, len(v.states)))]
    return ev
