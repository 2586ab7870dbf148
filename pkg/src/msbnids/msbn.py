"""Sectioned Bayesian networks and distributed inference.

An `Msbn` is a union network sectioned into overlapping subnets organized by
a hypertree. Validation enforces the two soundness conditions (every pairwise
intersection lies on the connecting path; every interface variable has its
full parent set inside a single subnet) plus the one-CPT-home rule.

Compilation produces a `LinkedJunctionForest`: one junction tree per subnet
(with each incident interface forced into a single clique) and one linkage
tree per hyperlink. Local evidence only touches its own subnet until
`communicate`, a synchronous inward/outward sweep that leaves every subnet's
answers consistent with all evidence in the system.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

import numpy as np

from .bayes import (
    BayesNet,
    Evidence,
    Posterior,
    joint_table,
    DEFAULT_ENUM_CAP,
)
from .errors import (
    InconsistentEvidenceError,
    InvalidAssignmentError,
    InvalidMsbnError,
    OutOfDomainError,
)
from .junction import JunctionTree, Potential, build_junction_tree, propagate

CONSENSUS_TOL = 1e-9


@dataclass(frozen=True)
class Subnet:
    """One agent sub-domain: its variables and the CPTs it is home to."""

    id: str
    variables: tuple[str, ...]
    cpt_owned: frozenset[str]


class Msbn:
    """Union network plus its sectioning. Construction never validates;
    run `validate_msbn` (or the individual verifiers) to get violations."""

    def __init__(self, net: BayesNet, subnets: Sequence[Subnet],
                 links: Sequence[tuple[str, str]]):
        self.net = net
        self.subnets = tuple(subnets)
        self.links = tuple(tuple(l) for l in links)
        self.by_id = {s.id: s for s in self.subnets}

    def interface(self, a: str, b: str) -> tuple[str, ...]:
        va = set(self.by_id[a].variables)
        vb = set(self.by_id[b].variables)
        return tuple(sorted(va & vb))

    def link_key(self, a: str, b: str) -> tuple[str, str]:
        return (a, b) if (a, b) in self.links else (b, a)

    def adjacency(self) -> dict[str, list[str]]:
        adj: dict[str, list[str]] = {s.id: [] for s in self.subnets}
        for a, b in self.links:
            if a in adj and b in adj:
                adj[a].append(b)
                adj[b].append(a)
        for v in adj.values():
            v.sort()
        return adj

    def path(self, a: str, b: str) -> list[str] | None:
        adj = self.adjacency()
        prev = {a: None}
        queue = [a]
        while queue:
            cur = queue.pop(0)
            if cur == b:
                out = [cur]
                while prev[cur] is not None:
                    cur = prev[cur]
                    out.append(cur)
                return list(reversed(out))
            for nb in adj[cur]:
                if nb not in prev:
                    prev[nb] = cur
                    queue.append(nb)
        return None

    def local_net(self, sid: str) -> BayesNet:
        """Induced view of the union network on one sub-domain."""
        sub = self.by_id[sid]
        kept = set(sub.variables)
        variables = [v for v in self.net.variables if v.name in kept]
        dag = self.net.dag.induced(kept)
        cpts = {n: self.net.cpts[n] for n in sub.cpt_owned if n in self.net.cpts}
        return BayesNet(variables, dag.edges, cpts)


def _fmt_set(names) -> str:
    return "{" + ", ".join(sorted(names)) + "}"


def verify_hypertree(msbn: Msbn) -> list[str]:
    """Check the tree organization and the pairwise-intersection condition."""
    report: list[str] = []
    ids = [s.id for s in msbn.subnets]
    if len(set(ids)) != len(ids):
        report.append("duplicate subnet ids")
        return report
    for a, b in msbn.links:
        if a not in msbn.by_id or b not in msbn.by_id:
            report.append(f"hyperlink ({a}, {b}) references an unknown subnet")
            return report
        if a == b:
            report.append(f"hyperlink ({a}, {b}) is a self-loop")
            return report
    if len(msbn.links) != len(ids) - 1:
        report.append(
            f"{len(msbn.links)} hyperlinks cannot form a tree over "
            f"{len(ids)} subnets"
        )
        return report
    adj = msbn.adjacency()
    seen = set()
    stack = [ids[0]] if ids else []
    while stack:
        cur = stack.pop()
        if cur in seen:
            continue
        seen.add(cur)
        stack.extend(adj[cur])
    if seen != set(ids):
        report.append("hyperlink graph is not connected")
        return report
    for i, a in enumerate(ids):
        for b in ids[i + 1:]:
            shared = set(msbn.by_id[a].variables) & set(msbn.by_id[b].variables)
            if not shared:
                continue
            for mid in msbn.path(a, b) or []:
                missing = shared - set(msbn.by_id[mid].variables)
                if missing:
                    report.append(
                        f"variables {_fmt_set(missing)} shared by ({a}, {b}) are "
                        f"missing from subnet '{mid}' on their connecting path"
                    )
    union_order = msbn.net.dag.topological_order()
    if union_order is None:
        report.append("union graph has a directed cycle")
    covered = set()
    for s in msbn.subnets:
        covered.update(s.variables)
    uncovered = set(msbn.net.names) - covered
    if uncovered:
        report.append(f"variables {_fmt_set(uncovered)} belong to no subnet")
    return report


def verify_dsepsets(msbn: Msbn) -> list[str]:
    """Check that every hyperlink interface is made of d-sepnodes: some single
    subnet must contain the variable together with all of its parents."""
    report: list[str] = []
    for a, b in msbn.links:
        interface = msbn.interface(a, b)
        for x in interface:
            family = {x} | set(msbn.net.dag.parents(x))
            if not any(family <= set(s.variables) for s in msbn.subnets):
                report.append(
                    f"interface {_fmt_set(interface)} between ({a}, {b}) is not a "
                    f"d-sepset: no single subnet contains '{x}' with parents "
                    f"{_fmt_set(msbn.net.dag.parents(x))}"
                )
    return report


def verify_cpt_assignment(msbn: Msbn) -> list[str]:
    """One home per variable, and the home holds the whole family."""
    report: list[str] = []
    for x in msbn.net.names:
        homes = [s.id for s in msbn.subnets if x in s.cpt_owned]
        if len(homes) != 1:
            report.append(
                f"variable '{x}' has {len(homes)} CPT homes "
                f"({_fmt_set(homes) if homes else '{}'}), expected exactly 1"
            )
            continue
        home = msbn.by_id[homes[0]]
        family = {x} | set(msbn.net.dag.parents(x))
        if not family <= set(home.variables):
            report.append(
                f"subnet '{home.id}' owns the CPT of '{x}' but lacks part of "
                f"its family {_fmt_set(family)}"
            )
    for s in msbn.subnets:
        stray = set(s.cpt_owned) - set(s.variables)
        if stray:
            report.append(
                f"subnet '{s.id}' owns CPTs for variables it does not "
                f"contain: {_fmt_set(stray)}"
            )
    return report


def validate_msbn(msbn: Msbn) -> list[str]:
    from .bayes import validate_network

    report = validate_network(msbn.net)
    report += verify_hypertree(msbn)
    if not report:
        report += verify_dsepsets(msbn)
        report += verify_cpt_assignment(msbn)
    return report


@dataclass(frozen=True)
class LinkageTree:
    """Junction tree over one d-sepset, derived from the local trees."""

    link: tuple[str, str]
    interface: tuple[str, ...]
    clusters: tuple[tuple[str, ...], ...]
    edges: tuple[tuple[int, int, tuple[str, ...]], ...]


def _linkage_tree(link, interface, local: JunctionTree) -> LinkageTree:
    inter = set(interface)
    projected = []
    for c in local.cliques:
        cut = tuple(sorted(set(c) & inter))
        if cut and cut not in projected:
            projected.append(cut)
    clusters = tuple(
        sorted(c for c in projected
               if not any(set(c) < set(o) for o in projected))
    )
    edges = []
    comp = list(range(len(clusters)))

    def find(x):
        while comp[x] != x:
            comp[x] = comp[comp[x]]
            x = comp[x]
        return x

    candidates = []
    for i in range(len(clusters)):
        for j in range(i + 1, len(clusters)):
            sep = tuple(sorted(set(clusters[i]) & set(clusters[j])))
            candidates.append((-len(sep), clusters[i], clusters[j], i, j, sep))
    candidates.sort()
    for _w, _ci, _cj, i, j, sep in candidates:
        ri, rj = find(i), find(j)
        if ri != rj:
            comp[ri] = rj
            edges.append((i, j, sep))
    return LinkageTree(tuple(link), tuple(interface), clusters, tuple(sorted(edges)))


# message middleware: (src subnet, dst subnet, proposed table) -> table to
# absorb, or None to keep the previous one
MessageTransform = Callable[[str, str, np.ndarray], "np.ndarray | None"]


class LinkedJunctionForest:
    """Compiled form of an Msbn plus its mutable inference state.

    The compiled trees are immutable; mutable state is confined to the
    per-subnet evidence ledgers and the per-hyperlink message potentials
    (the record of remote evidence as of the last communication).
    """

    def __init__(self, msbn: Msbn):
        self.msbn = msbn
        self.local_trees: dict[str, JunctionTree] = {}
        self.linkage_trees: dict[tuple[str, str], LinkageTree] = {}
        for s in msbn.subnets:
            incident = [
                msbn.interface(a, b)
                for a, b in msbn.links
                if s.id in (a, b)
            ]
            self.local_trees[s.id] = build_junction_tree(
                msbn.local_net(s.id),
                owned=set(s.cpt_owned),
                complete=[i for i in incident if i],
            )
        for a, b in msbn.links:
            interface = msbn.interface(a, b)
            if interface:
                host = self.local_trees[min(a, b)]
                self.linkage_trees[(a, b)] = _linkage_tree((a, b), interface, host)
        self.evidence: dict[str, dict[str, str]] = {
            s.id: {} for s in msbn.subnets
        }
        self.messages: dict[tuple[str, str], np.ndarray | None] = {}
        for a, b in msbn.links:
            self.messages[(a, b)] = None
            self.messages[(b, a)] = None
        self._cal: dict[str, object] = {}
        # boot sweep: subnets holding only their own CPTs must exchange
        # beliefs once so that every agent starts from the global priors
        # (the common initial belief on shared variables)
        self.communicate()

    # -- state management -------------------------------------------------

    def reset_evidence(self, keep_messages: bool = True) -> "LinkedJunctionForest":
        """Open a fresh evidence window; optionally drop remote messages too.

        Dropping the messages re-runs the boot sweep so queries fall back to
        the global priors rather than to the bare local potentials.
        """
        for sid in self.evidence:
            self.evidence[sid] = {}
        self._cal.clear()
        if not keep_messages:
            for k in self.messages:
                self.messages[k] = None
            self.communicate()
        return self

    def _incident(self, sid: str) -> list[tuple[str, str]]:
        return [lk for lk in self.msbn.links if sid in lk]

    def _calibrated(self, sid: str):
        if sid not in self._cal:
            extra = []
            for a, b in self._incident(sid):
                other = b if a == sid else a
                incoming = self.messages.get((other, sid))
                if incoming is not None:
                    extra.append(
                        Potential(self.msbn.interface(a, b), incoming)
                    )
            self._cal[sid] = propagate(
                self.local_trees[sid], self.evidence[sid], extra
            )
        return self._cal[sid]

    # -- operations --------------------------------------------------------

    def enter_local_evidence(self, sid: str, evidence: Evidence
                             ) -> "LinkedJunctionForest":
        if sid not in self.msbn.by_id:
            raise InvalidAssignmentError(f"unknown subnet '{sid}'")
        domain = set(self.msbn.by_id[sid].variables)
        ledger = self.evidence[sid]
        for name, state in evidence.items():
            if name not in domain:
                raise OutOfDomainError(
                    f"variable '{name}' is outside sub-domain '{sid}'"
                )
            self.msbn.net.state_index(name, state)
            if name in ledger and ledger[name] != state:
                raise InconsistentEvidenceError(
                    f"'{name}' already observed as '{ledger[name]}' in '{sid}', "
                    f"cannot also be '{state}'"
                )
        ledger.update(evidence)
        self._cal.pop(sid, None)
        return self

    def local_query(self, sid: str, variable: str) -> Posterior:
        """Exact w.r.t. this subnet's evidence plus remote evidence as of the
        last communication."""
        if sid not in self.msbn.by_id:
            raise InvalidAssignmentError(f"unknown subnet '{sid}'")
        if variable not in self.msbn.by_id[sid].variables:
            raise OutOfDomainError(
                f"variable '{variable}' is outside sub-domain '{sid}'"
            )
        return self._calibrated(sid).query(variable)

    def communicate(self, transform: MessageTransform | None = None
                    ) -> "LinkedJunctionForest":
        """Full inward/outward sweep over the hypertree.

        Afterward every subnet's local queries equal the posteriors given all
        evidence in the forest. `transform` lets an agent layer intercept each
        linkage message (returning None keeps the previous message, i.e. the
        receiving side treats the sender as silent).
        """
        root = min(self.evidence)
        adj = self.msbn.adjacency()
        order = [root]
        parent: dict[str, str | None] = {root: None}
        k = 0
        while k < len(order):
            cur = order[k]
            k += 1
            for nb in adj[cur]:
                if nb not in parent:
                    parent[nb] = cur
                    order.append(nb)
        for sid in reversed(order):
            if parent[sid] is not None:
                self._send(sid, parent[sid], transform)
        for sid in order:
            if parent[sid] is not None:
                self._send(parent[sid], sid, transform)
        return self

    def _send(self, src: str, dst: str, transform: MessageTransform | None):
        interface = self.msbn.interface(src, dst)
        if not interface:
            return
        try:
            cal = self._calibrated(src)
        except InconsistentEvidenceError as exc:
            raise InconsistentEvidenceError(
                f"inconsistent evidence found on sweep edge {src}->{dst}: {exc}"
            ) from None
        marg = cal.marginal(interface).values
        reverse = self.messages.get((dst, src))
        if reverse is not None:
            out = np.zeros_like(marg)
            np.divide(marg, reverse, out=out, where=reverse != 0)
        else:
            out = marg
        total = float(out.sum())
        if total <= 0.0:
            raise InconsistentEvidenceError(
                f"inconsistent evidence found on sweep edge {src}->{dst}"
            )
        out = out / total
        if transform is not None:
            out = transform(src, dst, out)
            if out is None:
                return
        self.messages[(src, dst)] = out
        self._cal.pop(dst, None)


def compile_ljf(msbn: Msbn) -> LinkedJunctionForest:
    """Validate and compile; any verification failure aborts compilation."""
    violations = validate_msbn(msbn)
    if violations:
        raise InvalidMsbnError(violations)
    return LinkedJunctionForest(msbn)


def enter_local_evidence(ljf: LinkedJunctionForest, sid: str,
                         evidence: Evidence) -> LinkedJunctionForest:
    return ljf.enter_local_evidence(sid, evidence)


def local_query(ljf: LinkedJunctionForest, sid: str, variable: str) -> Posterior:
    return ljf.local_query(sid, variable)


def communicate(ljf: LinkedJunctionForest) -> LinkedJunctionForest:
    return ljf.communicate()


def conditional_independence_check(
    msbn: Msbn,
    link: tuple[str, str],
    tol: float = CONSENSUS_TOL,
    cap: int = DEFAULT_ENUM_CAP,
) -> bool:
    """Numerically test whether the link's interface separates the two sides.

    Enumerates the full joint, so only suitable for small instances.
    """
    a, b = msbn.link_key(*link)
    interface = set(msbn.interface(a, b))
    adj = msbn.adjacency()
    adj[a] = [x for x in adj[a] if x != b]
    adj[b] = [x for x in adj[b] if x != a]

    def side(start: str) -> set[str]:
        seen = {start}
        stack = [start]
        while stack:
            cur = stack.pop()
            for nb in adj[cur]:
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return seen

    side_a = side(a)
    vars_a = set()
    for sid in side_a:
        vars_a |= set(msbn.by_id[sid].variables)
    vars_b = set()
    for sid in side(b):
        vars_b |= set(msbn.by_id[sid].variables)
    left = sorted(vars_a - interface)
    right = sorted(vars_b - interface)
    if set(left) & set(right):
        raise InvalidAssignmentError(
            "sides of the hyperlink overlap outside the interface; "
            "hypertree condition must hold before this check"
        )
    free, table = joint_table(msbn.net, None, cap)
    inter = sorted(interface)
    axis_of = {n: i for i, n in enumerate(free)}
    perm = [axis_of[n] for n in left + right + inter]
    arr = table.transpose(perm)
    na = math.prod(arr.shape[: len(left)]) if left else 1
    nb = math.prod(arr.shape[len(left): len(left) + len(right)]) if right else 1
    ni = math.prod(arr.shape[len(left) + len(right):]) if inter else 1
    p_abi = arr.reshape(na, nb, ni)
    p_i = p_abi.sum(axis=(0, 1))
    p_ai = p_abi.sum(axis=1)
    p_bi = p_abi.sum(axis=0)
    ok = True
    for i in range(ni):
        if p_i[i] <= 1e-12:
            continue
        lhs = p_abi[:, :, i] / p_i[i]
        rhs = np.outer(p_ai[:, i], p_bi[:, i]) / (p_i[i] ** 2)
        if float(np.abs(lhs - rhs).max()) > tol:
            ok = False
            break
    return ok
