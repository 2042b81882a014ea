"""Node topologies, lowering of remote operations, and the folded simulation mode.

Folded mode replaces network qubits by equivalent local noise: a teleport becomes
depolarising(pBell) on the teleported qubit, and a remote BSM becomes a local BSM
preceded by depolarising(pBell) on its control qubit (exact). The alternative
``bsm_fold='detection'`` instead flips the control (target) outcome bit with an
extra pBell/3 (2 pBell/3).
"""
from __future__ import annotations

from dataclasses import dataclass, field

import networkx as nx
import numpy as np

from . import native_gates as ng
from .circuit import Event, from_sequence, gate


# ---------------------------------------------------------------------------
# topology

@dataclass(frozen=True)
class Node:
    id: int
    dataQubits: int = 1
    hasAncilla: bool = False
    networkQubits: int = 1


@dataclass
class Topology:
    nodes: list
    links: set = field(default_factory=set)

    def __post_init__(self):
        ids = [nd.id for nd in self.nodes]
        if len(set(ids)) != len(ids):
            raise ValueError("duplicate node id")
        self.links = {frozenset(l) for l in self.links}
        for l in self.links:
            if len(l) != 2 or not l <= set(ids):
                raise ValueError(f"bad link {tuple(l)}")

    def graph(self) -> nx.Graph:
        g = nx.Graph()
        for nd in self.nodes:
            g.add_node(nd.id, anc=nd.hasAncilla)
        g.add_edges_from(tuple(l) for l in self.links)
        return g

    def node(self, i) -> Node:
        return next(nd for nd in self.nodes if nd.id == i)

    def degree(self, i) -> int:
        return sum(i in l for l in self.links)

    def controls(self) -> list:
        return [nd.id for nd in self.nodes if nd.hasAncilla]


def bw_ancillas(n: int) -> int:
    """Ancillas in the as-built BW circuit (one is kept at n = 2 for the controlled sigma)."""
    return max(1, (n - 1) // 2)


def required_topology(impl: str, n: int) -> Topology:
    if n < 2:
        raise ValueError("need n >= 2")
    impl = impl.upper()
    if impl == "CR":
        nodes = [Node(0, hasAncilla=True)] + [Node(i) for i in range(1, n)]
        return Topology(nodes, {(0, i) for i in range(1, n)})
    if impl == "QECR":
        return Topology([Node(0, hasAncilla=True), Node(1)], {(0, 1)})
    if impl == "BW":
        c = bw_ancillas(n)
        per = [1] * c
        extra = (n - c) - c
        if extra > 0:
            per[0] += 1
        if extra > 1:
            per[-1] += extra - 1
        nodes = [Node(i, hasAncilla=True) for i in range(c)]
        links = {(i, i + 1) for i in range(c - 1)}
        nxt = c
        for i, k in enumerate(per):
            for _ in range(k):
                nodes.append(Node(nxt))
                links.add((i, nxt))
                nxt += 1
        return Topology(nodes, links)
    raise ValueError(f"unknown implementation {impl}")


@dataclass
class Validation:
    ok: bool
    deficiencies: list = field(default_factory=list)
    mapping: dict = field(default_factory=dict)

    def __str__(self):
        if self.ok:
            return "ok"
        return "\n".join(f"deficiency: {d}" for d in self.deficiencies)


def validate_topology(available: Topology, required: Topology) -> Validation:
    """Embed ``required`` into ``available`` (links and ancilla placement)."""
    ga, gr = available.graph(), required.graph()
    gm = nx.algorithms.isomorphism.GraphMatcher(
        ga, gr, node_match=lambda a, r: a["anc"] or not r["anc"])
    for m in gm.subgraph_monomorphisms_iter():
        return Validation(True, mapping={r: a for a, r in m.items()})
    # no embedding: report against the identity node matching
    have = {nd.id: nd for nd in available.nodes}
    defs = []
    if len(available.nodes) < len(required.nodes):
        defs.append(f"need {len(required.nodes)} nodes, have {len(available.nodes)}")
    for nd in required.nodes:
        if nd.id not in have:
            defs.append(f"missing node {nd.id}")
        elif nd.hasAncilla and not have[nd.id].hasAncilla:
            defs.append(f"node {nd.id} needs an ancilla")
    for l in sorted(tuple(sorted(l)) for l in required.links):
        if frozenset(l) not in available.links:
            defs.append(f"missing link {l[0]}-{l[1]}")
    if not defs:
        defs.append("required connectivity does not embed in the available graph")
    return Validation(False, defs)


def parse_topology(text: str) -> Topology:
    """Line format: ``node <id> [ancilla] [data=k] [network=k]`` and ``link <a> <b>``; '#' comments."""
    nodes, links = [], set()
    for ln, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tok = line.split()
        try:
            if tok[0] == "node":
                kw = {"id": int(tok[1])}
                for t in tok[2:]:
                    if t == "ancilla":
                        kw["hasAncilla"] = True
                    elif t.startswith("data="):
                        kw["dataQubits"] = int(t[5:])
                    elif t.startswith("network="):
                        kw["networkQubits"] = int(t[8:])
                    else:
                        raise ValueError(f"unknown node attribute {t!r}")
                nodes.append(Node(**kw))
            elif tok[0] == "link":
                if len(tok) != 3:
                    raise ValueError("link needs two node ids")
                links.add((int(tok[1]), int(tok[2])))
            else:
                raise ValueError(f"unknown directive {tok[0]!r}")
        except (IndexError, ValueError) as exc:
            raise TopologyParseError(f"line {ln}: {exc}") from None
    if not nodes:
        raise TopologyParseError("line 1: empty topology")
    try:
        return Topology(nodes, links)
    except ValueError as exc:
        raise TopologyParseError(f"line {len(text.splitlines())}: {exc}") from None


class TopologyParseError(ValueError):
    pass


# ---------------------------------------------------------------------------
# remote-operation plans

@dataclass
class RemoteOpPlan:
    ops: list = field(default_factory=list)       # (kind, link, qubits)
    bellBudget: dict = field(default_factory=dict)

    def add(self, kind, link, qubits=(), pairs=1):
        self.ops.append((kind, tuple(sorted(link)), tuple(qubits)))
        key = tuple(sorted(link))
        self.bellBudget[key] = self.bellBudget.get(key, 0) + pairs

    def total(self) -> int:
        return sum(self.bellBudget.values())

    def check(self, topo: Topology) -> None:
        for kind, link, _ in self.ops:
            if frozenset(link) not in topo.links:
                raise ValueError(f"{kind} uses absent link {link}")


def remote_plan(impl: str, n: int, N: int):
    """Remote operations of one VD run on ``required_topology(impl, n)``.

    Returns (plan, topology, home) where home[k] is the node of register k.
    """
    topo = required_topology(impl, n)
    impl = impl.upper()
    plan = RemoteOpPlan()
    if impl == "CR":
        home = list(range(n))
        for k in range(1, n - 1):
            plan.add("teleport", (0, k), pairs=N)
        plan.add("remoteBSM", (0, n - 1), pairs=N)
    elif impl == "QECR":
        home = [0] + [1] * (n - 1)       # registers 1.. reuse node 1 in turn
        for _ in range(1, n - 1):
            plan.add("teleport", (0, 1), pairs=N)
        plan.add("remoteBSM", (0, 1), pairs=N)
    else:
        c = bw_ancillas(n)
        home = [None] * n
        for i in range(c):
            if 2 * i + 1 < n:
                home[2 * i + 1] = i
        # target nodes in the order required_topology numbers them
        targets = iter(nd.id for nd in topo.nodes if not nd.hasAncilla)
        order = [0] + [2 * i + 2 for i in range(c) if 2 * i + 2 < n]
        order += [k for k in range(n) if home[k] is None and k not in order]
        for k in order:
            home[k] = next(targets)
        where = list(home)
        for i in range((n - 1) // 2):
            a, b = 2 * i + 1, 2 * i + 2
            plan.add("teleport", (home[a], home[b]), pairs=N)
            where[b] = home[a]
        for i in range(n // 2):
            a, b = 2 * i, 2 * i + 1
            if where[a] != where[b]:
                plan.add("remoteBSM", (where[a], where[b]), pairs=N)
        for i in range(c - 1):
            plan.add("ghzLink", (i, i + 1))
    plan.check(topo)
    return plan, topo, home


# ---------------------------------------------------------------------------
# lowering to circuit fragments

def _cx(c, t, block="", tag=""):
    return from_sequence(ng.decompose_controlled_pauli("X", c, t), block, tag)


def _h(q, block="", tag=""):
    return from_sequence(ng.decompose_hadamard(q), block, tag)


def _measure(q, key, role="", block="", tag=""):
    return Event("measure", (q,), duration=ng.DURATIONS["measure"], key=key, role=role,
                 block=block, tag=tag)


def bell_pair(a, b, block="", tag="") -> list:
    """Noisy remote Bell pair on (a, b): ideal |Phi+> then depolarising(pBell) on b."""
    return [gate("bellprep", (a, b), block=block, tag=tag),
            Event("noise", (b,), tag="bell", block=block)]


def lower_teleport(q_source, q_dest, mode="folded", a1=None, key="t", block="", tag="teleport"):
    """Teleport the state on ``q_source`` to ``q_dest``.

    explicit: Bell pair (a1, q_dest); CNOT + H on (q_source, a1); two Z measurements;
    Pauli-frame corrections X^m2 Z^m1 on q_dest. Returns (events, data_qubit, keys).
    folded: depolarising(pBell) on the payload, which stays on q_source.
    """
    if mode == "folded":
        return [Event("noise", (q_source,), tag="teleport", block=block)], q_source, ()
    if a1 is None or len({q_source, q_dest, a1}) != 3:
        raise ValueError("explicit teleport needs distinct source, network and destination qubits")
    m1, m2 = f"{key}.m1", f"{key}.m2"
    evs = bell_pair(a1, q_dest, block, tag)
    evs += _cx(q_source, a1, block, tag) + _h(q_source, block, tag)
    evs += [_measure(q_source, m1, block=block, tag=tag), _measure(a1, m2, block=block, tag=tag)]
    evs += [Event("feedback", (q_dest,), cond=(m2,), pauli="X", block=block, tag=tag,
                  after=(a1,)),
            Event("feedback", (q_dest,), cond=(m1,), pauli="Z", block=block, tag=tag,
                  after=(q_source,))]
    return evs, q_dest, (m1, m2)


def local_bsm(q1, q2, key="b", remote=False, block="", tag="bsm"):
    """CNOT(q1->q2), X-measure q1, Z-measure q2; sign -1 iff both bits are 1."""
    k1, k2 = f"{key}.x", f"{key}.z"
    evs = [Event("noise", (q1,), tag="bsm", block=block)] if remote else []
    evs += _cx(q1, q2, block, tag) + _h(q1, block, tag)
    evs += [_measure(q1, k1, "ctrl" if remote else "", block, tag),
            _measure(q2, k2, "tgt" if remote else "", block, tag)]
    return evs, ((k1,), (k2,))


def lower_remote_bsm(q1, q2, mode="folded", a1=None, a2=None, key="b", block="", tag="bsm"):
    """BSM between q1 and q2 in different nodes.

    explicit: Bell pair (a1, a2), local BSMs on (q1, a1) and (a2, q2); the pair
    bits are the parities of (q1, a2) and (a1, q2). folded: local BSM whose bits
    carry extra detection flips pBell/3 (control) and 2 pBell/3 (target).
    Returns (events, (keysA, keysB)).
    """
    if mode == "folded":
        return local_bsm(q1, q2, key, remote=True, block=block, tag=tag)
    if a1 is None or a2 is None or len({q1, q2, a1, a2}) != 4:
        raise ValueError("explicit remote BSM needs two distinct network qubits")
    kq1, ka1, ka2, kq2 = (f"{key}.{s}" for s in ("q1", "a1", "a2", "q2"))
    evs = bell_pair(a1, a2, block, tag)
    evs += _cx(q1, a1, block, tag) + _h(q1, block, tag)
    evs += _cx(a2, q2, block, tag) + _h(a2, block, tag)
    evs += [_measure(q1, kq1, block=block, tag=tag), _measure(a1, ka1, block=block, tag=tag),
            _measure(a2, ka2, block=block, tag=tag), _measure(q2, kq2, block=block, tag=tag)]
    return evs, ((kq1, ka2), (ka1, kq2))


def lower_ghz(qubits, helpers=None, mode="explicit", key="g", block="", tag="ghz", after=()):
    """k-qubit GHZ state on ``qubits`` (one per node along a path).

    explicit: Bell pairs (q1,a2), (q2,a3), ..., (q_{k-1}, q_k) with helpers a2..a_{k-1};
    in each inner node CNOT(q_i -> a_i) and Z-measure a_i; X corrections on q_j
    from the parity of the outcomes of nodes 2..j. Depth does not depend on k.
    folded: ideal GHZ on the qubits followed by depolarising(pBell) on q2..q_k
    (exact for k = 2, the only size the shipped experiments need).
    """
    qs = list(qubits)
    k = len(qs)
    if k < 1:
        raise ValueError("need at least one qubit")
    if k == 1:
        return [replace_after(e, after) for e in _h(qs[0], block, tag)], ()
    if mode == "folded":
        evs = [replace_after(gate("h", (qs[0],), block=block, tag=tag), after)]
        evs += [gate("cx", (qs[0], q), block=block, tag=tag) for q in qs[1:]]
        evs += [Event("noise", (q,), tag="bell", block=block) for q in qs[1:]]
        return evs, ()
    helpers = list(helpers or [])
    if len(helpers) != k - 2:
        raise ValueError("explicit GHZ needs k-2 helper qubits")
    a = {i: helpers[i - 2] for i in range(2, k)}      # helper of node i (1-based)
    q = {i: qs[i - 1] for i in range(1, k + 1)}
    evs = []
    for i in range(1, k):
        partner = a[i + 1] if i + 1 < k else q[k]
        bp = bell_pair(q[i], partner, block, tag)
        evs += [replace_after(bp[0], after)] + bp[1:]
    keys = []
    for i in range(2, k):
        evs += _cx(q[i], a[i], block, tag)
        kk = f"{key}.{i}"
        evs.append(_measure(a[i], kk, block=block, tag=tag))
        keys.append((i, kk))
    for j in range(2, k + 1):
        cond = tuple(kk for i, kk in keys if i <= min(j, k - 1))
        if cond:
            evs.append(Event("feedback", (q[j],), cond=cond, pauli="X", block=block, tag=tag,
                             after=tuple(a[i] for i, _ in keys if i <= j)))
    return evs, tuple(kk for _, kk in keys)


def replace_after(e: Event, after) -> Event:
    from dataclasses import replace
    return replace(e, after=tuple(after)) if after else e
