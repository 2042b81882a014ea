"""Exact noisy evaluation of timed circuits with factorised density operators.

The state is a sum of terms; each term is a scalar times a tensor product of
factors, every factor a (not necessarily normalised) operator on a few qubits.
Qubits enter as |0><0| on first use, are traced out after their last use, and
measured qubits are kept dephased until their shot-rule group is complete, at
which point the group is contracted with its +-1 weights. When a merge would
exceed ``park_limit`` qubits, an idle spectator register is split off linearly
(operator basis over the remaining qubits of its factor) and re-joined later.
Copy-preparation blocks are memoised by their structural signature.
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import replace
from itertools import product

import numpy as np

from .circuit import Event, TimedCircuit
from .sim_core import PAULI, SimError

_EYE2 = np.eye(2, dtype=complex)


class Factor:
    __slots__ = ("qs", "t")

    def __init__(self, qs, t):
        self.qs = tuple(qs)
        self.t = t

    @property
    def k(self):
        return len(self.qs)


def _zero_factor(q):
    t = np.zeros((2, 2), complex)
    t[0, 0] = 1
    return Factor((q,), t)


def kron(a: Factor, b: Factor) -> Factor:
    ka, kb = a.k, b.k
    t = np.multiply.outer(a.t, b.t)
    perm = (list(range(ka)) + list(range(2 * ka, 2 * ka + kb))
            + list(range(ka, 2 * ka)) + list(range(2 * ka + kb, 2 * ka + 2 * kb)))
    return Factor(a.qs + b.qs, t.transpose(perm))


def _idx(f: Factor, assign: dict):
    """Index tuple fixing row/col bits for qubits in ``assign`` (q -> (r, c))."""
    ix = [slice(None)] * (2 * f.k)
    for q, (r, c) in assign.items():
        p = f.qs.index(q)
        ix[p], ix[f.k + p] = r, c
    return tuple(ix)


def trace_out(f: Factor, qs) -> Factor:
    t = f.t
    keep = list(f.qs)
    for q in qs:
        p = keep.index(q)
        k = len(keep)
        t = np.trace(t, axis1=p, axis2=k + p)
        keep.pop(p)
    return Factor(keep, t)


def apply_matrix(f: Factor, U: np.ndarray, targets) -> Factor:
    k = len(targets)
    if np.count_nonzero(U - np.diag(np.diag(U))) == 0:
        d = np.diag(U).reshape((2,) * k)
        # axes of d are MSB first: reversed targets
        rows = [f.qs.index(q) for q in reversed(targets)]
        shape = [1] * (2 * f.k)
        dr = _place(d, rows, f.k)
        dc = _place(d.conj(), [f.k + r for r in rows], f.k)
        return Factor(f.qs, f.t * dr * dc)
    Ur = U.reshape((2,) * (2 * k))
    rows = [f.qs.index(q) for q in reversed(targets)]
    t = np.tensordot(Ur, f.t, axes=(list(range(k, 2 * k)), rows))
    t = np.moveaxis(t, list(range(k)), rows)
    cols = [f.k + r for r in rows]
    t = np.tensordot(Ur.conj(), t, axes=(list(range(k, 2 * k)), cols))
    t = np.moveaxis(t, list(range(k)), cols)
    return Factor(f.qs, t)


def _place(d, axes, k):
    """Broadcastable view of small tensor ``d`` on the given axes of a 2k-index tensor."""
    order = np.argsort(axes)
    d = np.transpose(d, order)
    shape = [1] * (2 * k)
    for a in axes:
        shape[a] = 2
    return d.reshape(shape)


def _classify(terms):
    letters = {s: p for p, s in terms}
    nq = len(terms[0][1])
    nonid = [p for p, s in terms if set(s) != {"I"}]
    if nq == 1:
        if set(letters) <= {"I", "Z"}:
            return "dephase", letters.get("Z", 0.0)
        if set(letters) <= {"I", "X"}:
            return "flip", letters.get("X", 0.0)
    if len(terms) == 4 ** nq and nq <= 2 and np.ptp(nonid) < 1e-15:
        return "depol", sum(nonid)
    return "pauli", None


def apply_channel(f: Factor, terms, targets) -> Factor:
    kind, lam = _classify(terms)
    t = f.t
    if kind == "dephase":
        out = t.copy()
        q = targets[0]
        for r, c in ((0, 1), (1, 0)):
            out[_idx(f, {q: (r, c)})] *= 1 - 2 * lam
        return Factor(f.qs, out)
    if kind == "flip":
        p = f.qs.index(targets[0])
        return Factor(f.qs, (1 - lam) * t + lam * np.flip(t, axis=(p, f.k + p)))
    if kind == "depol":
        nq = len(targets)
        d = 4 ** nq
        a = 1 - lam * d / (d - 1)
        red = trace_out(f, targets)
        out = a * t
        b = lam * d / (d - 1) / 2 ** nq
        for bits in product((0, 1), repeat=nq):
            ix = _idx(f, {q: (x, x) for q, x in zip(targets, bits)})
            out[ix] += b * _broadcast_back(red, f, targets)
        return Factor(f.qs, out)
    out = np.zeros_like(t)
    for p, s in terms:
        if p == 0:
            continue
        g = f
        for q, L in zip(targets, s):
            if L != "I":
                g = apply_matrix(g, PAULI[L], [q])
        out += p * g.t
    return Factor(f.qs, out)


def _broadcast_back(red: Factor, f: Factor, removed):
    """Reorder ``red`` (f with ``removed`` traced out) to match f's remaining axis order."""
    rest = [q for q in f.qs if q not in removed]
    assert list(red.qs) == rest
    return red.t


def dephase_measure(f: Factor, q, flip) -> Factor:
    out = f.t.copy()
    for r, c in ((0, 1), (1, 0)):
        out[_idx(f, {q: (r, c)})] = 0
    g = Factor(f.qs, out)
    if flip:
        p = f.qs.index(q)
        g = Factor(f.qs, (1 - flip) * g.t + flip * np.flip(g.t, axis=(p, f.k + p)))
    return g


def controlled_pauli(P):
    U = np.eye(4, dtype=complex)
    U[2:, 2:] = PAULI[P]      # control = second listed target (MSB)
    return U


# ---------------------------------------------------------------------------

class _Term:
    __slots__ = ("fmap", "scalar")

    def __init__(self, fmap, scalar=1.0):
        self.fmap = fmap
        self.scalar = scalar

    def factors(self):
        seen = {}
        for f in self.fmap.values():
            seen[id(f)] = f
        return list(seen.values())

    def set(self, f: Factor, old=()):
        for g in old:
            for q in g.qs:
                self.fmap.pop(q, None)
        for q in f.qs:
            self.fmap[q] = f


_BLOCK_CACHE: "OrderedDict[tuple, tuple]" = OrderedDict()
_BLOCK_CACHE_SIZE = 64


def clear_cache():
    _BLOCK_CACHE.clear()


class ExactEngine:
    """Evaluate E[shot value] (with a ShotRule) or <observable> on a noisy circuit."""

    def __init__(self, park_limit: int = 10, cap: int = 14):
        self.park_limit = park_limit
        self.cap = cap
        self.peak = 0

    # -- preprocessing -------------------------------------------------------
    def _prepare(self, circuit: TimedCircuit, keep, groups):
        evs = circuit.events
        keyq = {e.key: e.qubits[0] for e in evs if e.kind == "measure"}
        uses = []
        for e in evs:
            qs = set(e.qubits)
            if e.kind == "feedback":
                qs |= {keyq[k] for k in e.cond}
            uses.append(qs)
        # dead[i] = qubits whose current lifetime ends at event i (next use none or a reset)
        nxt = {}
        dead = [set() for _ in evs]
        for i in range(len(evs) - 1, -1, -1):
            if evs[i].kind != "reset":
                for q in uses[i]:
                    j = nxt.get(q)
                    if j is None or evs[j].kind == "reset":
                        dead[i].add(q)
            for q in uses[i]:
                nxt[q] = i
        self.keyq, self.uses, self.dead = keyq, uses, dead
        # next use after event i for any qubit: via scanning list of use indices
        pos = {}
        for i, qs in enumerate(uses):
            for q in qs:
                pos.setdefault(q, []).append(i)
        self.pos = pos
        self.keep = set(keep)
        self.groups = []
        self.group_of = {}
        for g in groups:
            qs = tuple(keyq[k] for k in g[0])
            gi = len(self.groups)
            self.groups.append((qs, g[1]))
            for q in qs:
                if q in self.group_of:
                    raise SimError(f"qubit {q} in two shot-rule groups")
                self.group_of[q] = gi
        self.blocks = self._blocks(evs)

    def _next_use(self, q, i):
        for j in self.pos.get(q, ()):
            if j > i:
                return j
        return 1 << 60

    def _blocks(self, evs):
        out = {}
        i = 0
        while i < len(evs):
            b = evs[i].block
            if b.startswith("copy:"):
                j = i
                while j < len(evs) and evs[j].block == b:
                    j += 1
                qs = sorted({q for e in evs[i:j] for q in e.qubits})
                if all(e.kind in ("gate", "channel") for e in evs[i:j]):
                    rel = {q: r for r, q in enumerate(qs)}
                    sig = tuple(replace(e, qubits=tuple(rel[q] for q in e.qubits), after=(),
                                        block="", gap=0.0) for e in evs[i:j])
                    out[i] = (j, tuple(qs), sig)
                i = j
            else:
                i += 1
        return out

    # -- main loop -------------------------------------------------------------
    def run(self, circuit: TimedCircuit, rule=None, observable=None) -> complex:
        """rule: ShotRule -> E[shot value]; observable: PauliString or list of them."""
        if (rule is None) == (observable is None):
            raise ValueError("give exactly one of rule or observable")
        groups, keep = [], set()
        if rule is not None:
            for k in rule.ancillaQubits:
                groups.append(((k,), "anc"))
            for a, b in rule.bsmPairs:
                groups.append((tuple(a) + tuple(b), ("bsm", len(a))))
        else:
            obs = observable if isinstance(observable, (list, tuple)) else [observable]
            for o in obs:
                keep |= set(o.support())
        terms = self._loop(circuit, keep, groups)
        if rule is not None:
            pending = [g for g in range(len(self.groups)) if g not in self.done]
            if pending:
                raise SimError(f"shot-rule groups never completed: {pending}")
            return sum(self._final_scalar(t) for t in terms)
        return sum(self._final_expect(t, obs) for t in terms)

    def _loop(self, circuit, keep, groups):
        self._prepare(circuit, keep, groups)
        self.done = set()
        terms = [_Term({})]
        evs = circuit.events
        i = 0
        while i < len(evs):
            blk = self.blocks.get(i)
            if blk is not None and all(all(q not in t.fmap for q in blk[1]) for t in terms):
                j, qs, sig = blk
                facs = self._run_block(qs, sig)
                for t in terms:
                    for f in facs:
                        t.set(f)
                for k in range(i, j):
                    terms = self._cleanup(terms, k)
                i = j
                continue
            terms = self._event(terms, evs[i], i)
            terms = self._cleanup(terms, i)
            terms = self._recombine(terms)
            i += 1
        return terms

    def density_matrix(self, circuit: TimedCircuit) -> np.ndarray:
        """Full 2^W x 2^W density matrix (qubit 0 least significant); small widths only."""
        W = circuit.width
        if W > self.cap:
            raise SimError("width exceeds density cap")
        terms = self._loop(circuit, set(range(W)), [])
        total = 0
        for t in terms:
            for q in range(W):
                self._fac(t, q)
            fs = t.factors()
            m = fs[0]
            for g in fs[1:]:
                m = kron(m, g)
            m = _reorder(m, tuple(reversed(range(W))))
            total = total + t.scalar * m.t.reshape(2 ** W, 2 ** W)
        return total

    def _run_block(self, qs, sig):
        key = sig
        hit = _BLOCK_CACHE.get(key)
        if hit is None:
            sub = ExactEngine(self.park_limit, self.cap)
            t = _Term({})
            for e in sig:
                t = sub._event([t], e, -1)[0]
            facs = [(tuple(f.qs), f.t) for f in t.factors()]
            hit = (facs,)
            _BLOCK_CACHE[key] = hit
            if len(_BLOCK_CACHE) > _BLOCK_CACHE_SIZE:
                _BLOCK_CACHE.popitem(last=False)
        else:
            _BLOCK_CACHE.move_to_end(key)
        return [Factor(tuple(qs[r] for r in rq), t) for rq, t in hit[0]]

    def _fac(self, term, q):
        f = term.fmap.get(q)
        if f is None:
            f = _zero_factor(q)
            term.set(f)
        return f

    def _merged(self, term, qs, memo):
        fs = []
        for q in qs:
            f = self._fac(term, q)
            if all(f is not g for g in fs):
                fs.append(f)
        if len(fs) == 1:
            return fs[0], fs
        key = ("m",) + tuple(id(f) for f in fs)
        if key not in memo:
            m = fs[0]
            for g in fs[1:]:
                m = kron(m, g)
            if m.k > self.cap:
                raise SimError(f"factor of {m.k} qubits exceeds density cap {self.cap}")
            self.peak = max(self.peak, m.k)
            memo[key] = m
        return memo[key], fs

    def _event(self, terms, e: Event, i):
        memo = {}
        out = []
        for t in terms:
            out.extend(self._event_term(t, e, i, memo))
        return out

    def _event_term(self, term, e, i, memo):
        if e.kind == "reset":
            for q in e.qubits:
                f = term.fmap.get(q)
                if f is not None:
                    g = trace_out(f, [q])
                    self._replace(term, f, g)
            return [term]
        if e.kind == "noise":
            return [term]
        if e.kind == "channel" and all(p == 0 or set(s) == {"I"} for p, s in e.terms):
            return [term]
        qs = list(e.qubits)
        ctrl = []
        if e.kind == "feedback":
            ctrl = [self.keyq[k] for k in e.cond]
            qs = qs + ctrl
        # parking
        fs = []
        for q in qs:
            f = self._fac(term, q)
            if all(f is not g for g in fs):
                fs.append(f)
        width = sum(f.k for f in fs)
        if width > self.park_limit and len(fs) > 1:
            split = self._park(term, fs, set(qs), i)
            if split is not None:
                res = []
                for t2 in split:
                    res.extend(self._event_term(t2, e, i, memo))
                return res
        f, olds = self._merged(term, qs, memo)
        key = (e, id(f))
        if key not in memo:
            if e.kind == "gate":
                g = apply_matrix(f, e.matrix(), list(e.qubits))
            elif e.kind == "channel":
                g = apply_channel(f, e.terms, list(e.qubits))
            elif e.kind == "measure":
                g = dephase_measure(f, e.qubits[0], e.flip)
            elif e.kind == "feedback":
                g = f
                for c in ctrl:
                    g = apply_matrix(g, controlled_pauli(e.pauli), [e.qubits[0], c])
            else:
                raise SimError(f"unknown event kind {e.kind}")
            memo[key] = g
        term.set(memo[key], olds)
        return [term]

    def _park(self, term, fs, needed, i):
        best = None
        for f in fs:
            P = [q for q in f.qs if q not in needed and self._next_use(q, i) > i]
            K = [q for q in f.qs if q not in P]
            if len(P) >= 2 and K and 4 ** len(K) <= 16:
                if best is None or len(P) > len(best[1]):
                    best = (f, P, K)
        if best is None:
            return None
        f, P, K = best
        out = []
        for a in product((0, 1), repeat=len(K)):
            for b in product((0, 1), repeat=len(K)):
                sub = f.t[_idx(f, {q: (x, y) for q, x, y in zip(K, a, b)})]
                if not np.any(np.abs(sub) > 1e-300):
                    continue
                E = np.zeros((2,) * (2 * len(K)), complex)
                E[tuple(a) + tuple(b)] = 1
                fm = dict(term.fmap)
                t2 = _Term(fm, term.scalar)
                t2.set(Factor(K, E), [f])
                t2.set(Factor(P, sub))
                out.append(t2)
        return out

    def _replace(self, term, old, new):
        for q in old.qs:
            term.fmap.pop(q, None)
        if new.k == 0:
            term.scalar = term.scalar * complex(new.t)
        else:
            for q in new.qs:
                term.fmap[q] = new

    def _cleanup(self, terms, i):
        dead = self.dead[i]
        if not dead:
            return terms
        memo = {}
        for t in terms:
            for q in sorted(dead):
                f = t.fmap.get(q)
                if f is None:
                    continue
                if q in self.keep:
                    continue
                g = self.group_of.get(q)
                if g is None:
                    key = ("t", id(f), q)
                    if key not in memo:
                        memo[key] = trace_out(f, [q])
                    self._replace(t, f, memo[key])
        for g, (gqs, kind) in enumerate(self.groups):
            if g in self.done:
                continue
            if all(self._finished(q, i) for q in gqs):
                memo = {}
                for t in terms:
                    self._eliminate(t, gqs, kind, memo)
                self.done.add(g)
        return terms

    def _finished(self, q, i):
        return all(j <= i for j in self.pos.get(q, ()))

    def _eliminate(self, term, gqs, kind, memo):
        fs = []
        for q in gqs:
            f = term.fmap.get(q)
            if f is None:
                raise SimError(f"measured qubit {q} missing at elimination")
            if all(f is not g for g in fs):
                fs.append(f)
        key = ("e",) + tuple(id(g) for g in fs)
        if key not in memo:
            f = fs[0]
            for g in fs[1:]:
                f = kron(f, g)
            acc = 0
            for bits in product((0, 1), repeat=len(gqs)):
                w = _weight(kind, bits)
                if w:
                    acc = acc + w * f.t[_idx(f, {q: (b, b) for q, b in zip(gqs, bits)})]
            memo[key] = Factor([q for q in f.qs if q not in gqs], np.asarray(acc))
        for g in fs:
            for q in g.qs:
                term.fmap.pop(q, None)
        self._replace_new(term, memo[key])

    def _replace_new(self, term, new):
        if new.k == 0:
            term.scalar = term.scalar * complex(new.t)
        else:
            for q in new.qs:
                term.fmap[q] = new

    def _recombine(self, terms):
        if len(terms) < 2:
            return terms
        sets = [{id(f): f for f in t.factors()} for t in terms]
        shared = set(sets[0])
        for s in sets[1:]:
            shared &= set(s)
        diff = [[f for k, f in s.items() if k not in shared] for s in sets]
        qsets = [frozenset(q for f in d for q in f.qs) for d in diff]
        if len(set(qsets)) != 1 or len(qsets[0]) > self.park_limit:
            return terms
        order = None
        total = None
        for t, d in zip(terms, diff):
            if d:
                m = d[0]
                for g in d[1:]:
                    m = kron(m, g)
                if order is None:
                    order = m.qs
                m = _reorder(m, order)
                val = t.scalar * m.t
            else:
                val = t.scalar
            total = val if total is None else total + val
        t0 = terms[0]
        fm = {q: f for q, f in t0.fmap.items() if id(f) in shared}
        new = _Term(fm, 1.0)
        if order is None:
            new.scalar = total
        else:
            f = Factor(order, total)
            for q in order:
                fm[q] = f
        return [new]

    def _final_scalar(self, term):
        val = term.scalar
        for f in term.factors():
            val = val * complex(trace_out(f, f.qs).t)
        return val

    def _final_expect(self, term, obs):
        fs = term.factors()
        if not fs:
            return term.scalar * sum(o.coefficient for o in obs)
        m = fs[0]
        for g in fs[1:]:
            m = kron(m, g)
        total = 0
        for o in obs:
            g = m
            for q in o.support():
                g = apply_left(g, PAULI[o.ops[q]], q)
            total += o.coefficient * complex(trace_out(g, g.qs).t)
        return term.scalar * total


def _reorder(f: Factor, order) -> Factor:
    if tuple(f.qs) == tuple(order):
        return f
    perm = [f.qs.index(q) for q in order]
    return Factor(order, f.t.transpose(perm + [f.k + p for p in perm]))


def apply_left(f: Factor, P, q) -> Factor:
    p = f.qs.index(q)
    t = np.tensordot(P, f.t, axes=([1], [p]))
    return Factor(f.qs, np.moveaxis(t, 0, p))


def _weight(kind, bits):
    if kind == "anc":
        return 1 - 2 * bits[0]
    _, na = kind
    x = sum(bits[:na]) & 1
    z = sum(bits[na:]) & 1
    return -1 if (x and z) else 1


def run_exact(circuit: TimedCircuit, rule=None, observable=None, **kw) -> float:
    val = ExactEngine(**kw).run(circuit, rule=rule, observable=observable)
    return float(np.real(val))
