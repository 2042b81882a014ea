"""Timed circuits for the CR, QECR and BW virtual-distillation layouts.

Qubit layout (folded mode): register k (0-based) occupies qubits k*N .. k*N+N-1,
ancillas follow the registers. Explicit mode appends network wires after the
ancillas, a fresh pair per remote operation.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from itertools import product

import numpy as np

from . import native_gates as ng
from . import network as net
from .circuit import Event, TimedCircuit, from_sequence, gate
from .sim_core import PauliString

IMPLS = ("CR", "QECR", "BW")


@dataclass
class VDPlan:
    impl: str
    n: int
    N: int
    sigma: PauliString | None = None      # None or all-I: denominator circuit
    statePrep: TimedCircuit | None = None  # one copy on qubits 0..N-1; None = |0..0>
    network: str = "folded"

    def __post_init__(self):
        self.impl = self.impl.upper()
        if self.impl not in IMPLS:
            raise ValueError(f"unknown implementation {self.impl}")
        if self.n < 1 or self.N < 1:
            raise ValueError("need n >= 1 and N >= 1")
        if self.sigma is not None and self.sigma.width != self.N:
            raise ValueError("sigma width must equal N")
        if self.statePrep is not None and self.statePrep.width != self.N:
            raise ValueError("statePrep width must equal N")
        if self.network not in ("folded", "explicit"):
            raise ValueError("network must be 'folded' or 'explicit'")

    def with_sigma(self, sigma) -> "VDPlan":
        return replace(self, sigma=sigma)


@dataclass(frozen=True)
class ShotRule:
    ancillaQubits: tuple            # measurement keys of the ancillas
    bsmPairs: tuple                 # ((keys xor-ed into bit A), (keys for bit B)) per BSM
    parityConvention: str = "prod(ancilla +-1) * prod(-1 if both BSM bits are 1)"
    auxKeys: tuple = ()             # measured but unweighted (teleport, GHZ fusion)

    def keys(self) -> list:
        ks = list(self.ancillaQubits) + [k for a, b in self.bsmPairs for k in a + b]
        return ks + list(self.auxKeys)


def shot_value(rule: ShotRule, bits: dict) -> int:
    missing = [k for k in rule.ancillaQubits + tuple(k for a, b in rule.bsmPairs for k in a + b)
               if k not in bits]
    if missing:
        raise KeyError(f"missing bits {missing}")
    v = 1
    for k in rule.ancillaQubits:
        v *= 1 - 2 * (bits[k] & 1)
    for a, b in rule.bsmPairs:
        x = sum(bits[k] for k in a) & 1
        z = sum(bits[k] for k in b) & 1
        v *= -1 if (x and z) else 1
    return v


# ---------------------------------------------------------------------------

class _Builder:
    def __init__(self, plan: VDPlan, n_regs: int, n_anc: int):
        self.plan = plan
        N = plan.N
        self.regs = [list(range(k * N, (k + 1) * N)) for k in range(n_regs)]
        self.anc = list(range(n_regs * N, n_regs * N + n_anc))
        self.width = n_regs * N + n_anc
        self.events: list = []
        self.labels = {q: f"r{k + 1}[{j}]" for k, r in enumerate(self.regs) for j, q in enumerate(r)}
        self.labels.update({q: f"anc{i}" for i, q in enumerate(self.anc)})
        self.n_cswap = self.n_bsm = self.n_tel = 0
        self.pairs: list = []
        self.aux: list = []
        self.swaps: list = []           # register transpositions in temporal order

    @property
    def explicit(self):
        return self.plan.network == "explicit"

    def wire(self, label) -> int:
        q = self.width
        self.width += 1
        self.labels[q] = label
        return q

    def emit(self, evs):
        self.events.extend(evs)

    def prep_copy(self, reg, k):
        prep = self.plan.statePrep
        if prep is None:
            return
        for e in prep.events:
            self.events.append(replace(e, qubits=tuple(reg[q] for q in e.qubits),
                                       after=tuple(reg[q] for q in e.after), block=f"copy:{k}"))

    def ancilla_prep(self, after):
        if len(self.anc) == 1:
            evs, keys = net.lower_ghz(self.anc, block="", after=after)
        else:
            helpers = [self.wire(f"ghz{i}") for i in range(len(self.anc) - 2)] if self.explicit else None
            evs, keys = net.lower_ghz(self.anc, helpers, self.plan.network, after=after)
        self.aux.extend(keys)
        self.emit(evs)

    def controlled_sigma(self, anc, reg):
        s = self.plan.sigma
        if s is None:
            return
        for j, P in enumerate(s.ops):
            if P != "I":
                self.emit(from_sequence(ng.decompose_controlled_pauli(P, anc, reg[j]), tag="sigma"))

    def teleport(self, q):
        """Bring data qubit q into the control node; returns the wire now holding it."""
        self.n_tel += 1
        key = f"tel{self.n_tel}"
        if not self.explicit:
            evs, dst, keys = net.lower_teleport(q, q, "folded", key=key)
        else:
            a1, dst = self.wire(f"{key}.a1"), self.wire(f"{key}.dst")
            evs, dst, keys = net.lower_teleport(q, dst, "explicit", a1=a1, key=key)
        self.aux.extend(keys)
        self.emit(evs)
        return dst

    def cswap(self, anc, r1, rk, ra=None, rb=None):
        """Transversal remote C-SWAP between registers r1 (local) and rk (teleported in)."""
        out = []
        for j in range(len(r1)):
            t = self.teleport(rk[j])
            tag = f"cswap:{self.n_cswap}"
            self.n_cswap += 1
            self.emit(from_sequence(ng.decompose_cswap(anc, r1[j], t), tag=tag))
            out.append(t)
        if ra is not None:
            self.swaps.append((ra, rb))
        return out

    def bsm(self, r1, r2, ra=None, rb=None):
        for j in range(len(r1)):
            key = f"bsm{self.n_bsm}"
            tag = f"bsm:{self.n_bsm}"
            self.n_bsm += 1
            if self.explicit:
                a1, a2 = self.wire(f"{key}.a1"), self.wire(f"{key}.a2")
                evs, pair = net.lower_remote_bsm(r1[j], r2[j], "explicit", a1, a2, key=key, tag=tag)
            else:
                evs, pair = net.lower_remote_bsm(r1[j], r2[j], "folded", key=key, tag=tag)
            self.emit(evs)
            self.pairs.append(pair)
        if ra is not None:
            self.swaps.append((ra, rb))

    def measure_ancillas(self):
        keys = []
        for i, a in enumerate(self.anc):
            self.emit(from_sequence(ng.decompose_hadamard(a), tag="ancilla"))
            k = f"anc{i}"
            self.emit([Event("measure", (a,), duration=ng.DURATIONS["measure"], key=k, tag="ancilla")])
            keys.append(k)
        return keys

    def finish(self, anc_keys, **meta):
        tc = TimedCircuit(self.width, labels=self.labels)
        tc.extend(self.events)
        tc.meta = dict(impl=self.plan.impl, n=self.plan.n, N=self.plan.N,
                       registers=self.regs, ancillas=self.anc, swaps=self.swaps,
                       cswaps=self.n_cswap, bsms=self.n_bsm, network=self.plan.network,
                       sigma=_sigma_ops(self.plan.sigma), **meta)
        rule = ShotRule(tuple(anc_keys), tuple(self.pairs), auxKeys=tuple(self.aux))
        return tc, rule


def _sigma_ops(sigma):
    if sigma is None or not sigma.support():
        return None
    return sigma.ops


def _check(plan, impl):
    if plan.impl != impl:
        raise ValueError(f"plan is for {plan.impl}, not {impl}")
    if plan.n < 2:
        raise ValueError("distillation needs n >= 2")


def build_cr(plan: VDPlan):
    _check(plan, "CR")
    n = plan.n
    b = _Builder(plan, n, 1)
    for k in range(n):
        b.prep_copy(b.regs[k], k + 1)
    everything = tuple(q for r in b.regs for q in r)
    b.ancilla_prep(everything)
    b.controlled_sigma(b.anc[0], b.regs[0])
    for k in range(1, n - 1):
        b.cswap(b.anc[0], b.regs[0], b.regs[k], 0, k)
    b.bsm(b.regs[0], b.regs[n - 1], 0, n - 1)
    return b.finish(b.measure_ancillas(), prep_stages=1, swap_layers=n - 2)


def build_qecr(plan: VDPlan):
    _check(plan, "QECR")
    n = plan.n
    b = _Builder(plan, 2, 1)
    r1, r2 = b.regs
    b.prep_copy(r1, 1)
    b.prep_copy(r2, 2)
    b.ancilla_prep(tuple(r1 + r2))
    b.controlled_sigma(b.anc[0], r1)
    for k in range(1, n - 1):
        held = b.cswap(b.anc[0], r1, r2, 0, k)
        # discard the swapped-out copy and re-prepare the next one in register 2
        for j, q in enumerate(r2):
            b.emit([Event("reset", (q,), duration=ng.DURATIONS["prep"], role="midprep",
                          after=(held[j],))])
        b.prep_copy(r2, k + 2)
    b.bsm(r1, r2, 0, n - 1)
    return b.finish(b.measure_ancillas(), prep_stages=n - 1, swap_layers=n - 2)


def build_bw(plan: VDPlan):
    _check(plan, "BW")
    n = plan.n
    m = net.bw_ancillas(n)
    b = _Builder(plan, n, m)
    for k in range(n):
        b.prep_copy(b.regs[k], k + 1)
    b.ancilla_prep(tuple(q for r in b.regs for q in r))
    b.controlled_sigma(b.anc[0], b.regs[0])
    wires = [list(r) for r in b.regs]
    # layer 1: C-SWAP (r_{2i+2}, r_{2i+3}) (1-based) controlled by ancilla i
    for i in range((n - 1) // 2):
        a, c = 2 * i + 1, 2 * i + 2
        wires[c] = b.cswap(b.anc[i], wires[a], wires[c], a, c)
    # layer 2: BSM (r1, r2), (r3, r4), ...
    for i in range(n // 2):
        b.bsm(wires[2 * i], wires[2 * i + 1], 2 * i, 2 * i + 1)
    return b.finish(b.measure_ancillas(), prep_stages=1, swap_layers=1 if n > 2 else 0)


def build(plan: VDPlan):
    return {"CR": build_cr, "QECR": build_qecr, "BW": build_bw}[plan.impl](plan)


def build_bsm(q1: int, q2: int):
    """Local BSM fragment and its (x-key, z-key) outcome pair."""
    if q1 == q2:
        raise ValueError("BSM needs distinct qubits")
    evs, pair = net.local_bsm(q1, q2)
    return evs, pair


def derangement(circuit: TimedCircuit) -> list:
    """inv[k] = index of the copy that ends in register k after the swaps."""
    n = circuit.meta["n"]
    content = list(range(n))
    for a, b in circuit.meta["swaps"]:
        content[a], content[b] = content[b], content[a]
    return content


# ---------------------------------------------------------------------------
# artificial gates and measured observables

def _key_qubits(circuit: TimedCircuit) -> dict:
    return {e.key: e.qubits[0] for e in circuit.events if e.kind == "measure"}


def insert_artificial_gates(circuit: TimedCircuit, rule: ShotRule):
    """Fold the BSM sign factors into ancilla 0 with noiseless, instantaneous gates.

    Explicit remote BSMs first get CNOTs that store each pair parity on one
    measured qubit; then one Toffoli per BSM flips ancilla 0 when both bits are 1.
    The returned observable is Z on every ancilla.
    """
    kq = _key_qubits(circuit)
    anc = [kq[k] for k in rule.ancillaQubits]
    first = next(i for i, e in enumerate(circuit.events)
                 if e.kind == "measure" and e.key == rule.ancillaQubits[0])
    extra = []
    for a, b in rule.bsmPairs:
        qs = []
        for keys in (a, b):
            tgt = kq[keys[0]]
            for k in keys[1:]:
                extra.append(gate("cx", (kq[k], tgt), tag="artificial"))
            qs.append(tgt)
        extra.append(gate("ccx", (qs[0], qs[1], anc[0]), tag="artificial"))
    out = circuit.copy()
    out.events = circuit.events[:first] + extra + circuit.events[first:]
    ops = ["I"] * circuit.width
    for q in anc:
        ops[q] = "Z"
    return out, PauliString("".join(ops))


def full_observable(circuit: TimedCircuit, rule: ShotRule) -> list:
    """Pauli expansion of the unreduced observable: Z on the ancillas times
    (I + Z_A + Z_B - Z_A Z_B)/2 per BSM; 4^{#BSM} terms."""
    kq = _key_qubits(circuit)
    W = circuit.width
    base = ["I"] * W
    for k in rule.ancillaQubits:
        base[kq[k]] = "Z"
    terms = []
    for choice in product(range(4), repeat=len(rule.bsmPairs)):
        ops = list(base)
        coef = 1.0
        for (a, b), c in zip(rule.bsmPairs, choice):
            sel = {0: (), 1: a, 2: b, 3: a + b}[c]
            coef *= -0.5 if c == 3 else 0.5
            for k in sel:
                q = kq[k]
                ops[q] = "I" if ops[q] == "Z" else "Z"
        terms.append(PauliString("".join(ops), coef))
    return terms


# ---------------------------------------------------------------------------
# resources

_SYM = ("d_rho", "d_S", "d_B", "d_sigma")


def depth_expression(coeffs) -> str:
    parts = []
    for c, s in zip(coeffs, _SYM):
        if c == 1:
            parts.append(s)
        elif c:
            parts.append(f"{c}{s}")
    return "+".join(parts) or "0"


@dataclass(frozen=True)
class ResourceReport:
    impl: str
    n: int
    N: int
    mode: str
    registers: int
    qubits: int
    cswapCount: int
    bsmCount: int
    bellPairs: int
    depthExpression: str

    def row(self) -> dict:
        return {"impl": self.impl, "n": self.n, "N": self.N, "mode": self.mode,
                "registers": self.registers, "qubits": self.qubits, "cswap": self.cswapCount,
                "bsm": self.bsmCount, "bellpairs": self.bellPairs, "depth": self.depthExpression}


CSV_COLUMNS = ("impl", "n", "N", "mode", "registers", "qubits", "cswap", "bsm", "bellpairs", "depth")


def _table(impl, n, N):
    h = (n - 1) // 2
    if impl == "QECR":
        regs, qubits, cs, bs = 2, 2 * N + 1, (n - 1) * N, N
        depth = (n - 1, n - 2, 1, 0)
        ghz = 1
    elif impl == "CR":
        regs, qubits, cs, bs = n, n * N + 1, (n - 1) * N, N
        depth = (1, n - 2, 1, 1)
        ghz = 1
    else:
        regs, qubits, cs, bs = n, n * N + h, h * N, (n // 2) * N
        depth = (1, 1, 1, 1)
        ghz = h
    return regs, qubits, cs, bs, cs + bs + max(0, ghz - 1), depth


def count_resources(impl: str, n: int, N: int, mode: str = "table") -> ResourceReport:
    impl = impl.upper()
    if impl not in IMPLS:
        raise ValueError(f"unknown implementation {impl}")
    if n < 1 or N < 1:
        raise ValueError("need n >= 1 and N >= 1")
    if mode not in ("table", "as-built"):
        raise ValueError("mode must be 'table' or 'as-built'")
    if n == 1:
        return ResourceReport(impl, n, N, mode, 1, N, 0, 0, 0, "d_rho")
    if mode == "table":
        regs, qubits, cs, bs, bell, depth = _table(impl, n, N)
        return ResourceReport(impl, n, N, mode, regs, qubits, cs, bs, bell, depth_expression(depth))
    sigma = PauliString("Z" + "I" * (N - 1))
    tc, _ = build(VDPlan(impl, n, N, sigma))
    cs = len({e.tag for e in tc.events if e.tag.startswith("cswap:")})
    bs = len({e.tag for e in tc.events if e.tag.startswith("bsm:")})
    bell = sum(e.kind == "noise" for e in tc.events)
    m = tc.meta
    depth = (m["prep_stages"], m["swap_layers"], 1, 1)
    return ResourceReport(impl, n, N, mode, len(m["registers"]), tc.width, cs, bs, bell,
                          depth_expression(depth))
