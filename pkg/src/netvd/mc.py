"""Pure-state Pauli-trajectory sampling of noisy VD circuits.

Each trajectory draws one Pauli term per channel and one flip per noisy
detection, then evaluates the expected shot value of that error pattern
exactly on the final pure state (measurements are deferred; the bit
distribution is read off |psi|^2). Copy preparations use precomputed suffix
unitaries S_c: an error P at channel c turns the ideal output into
S_c P S_c^dagger |psi_id>. Trajectories whose VD part is error-free use the
closed form Re<Psi| D sigma_1 |Psi> over the sampled copies.
"""
from __future__ import annotations

from itertools import product

import numpy as np

from .circuit import Event, TimedCircuit
from .sim_core import PAULI, PauliString, SimError

STATEVECTOR_CAP = 26
_SUFFIX_BUDGET = 300e6        # bytes of stored suffix unitaries per copy sampler


def _apply_sv(t: np.ndarray, qs, U: np.ndarray, targets) -> np.ndarray:
    """Apply U (qubit targets[0] least significant) to a vector tensor with axes ``qs``."""
    k = len(targets)
    ax = [qs.index(q) for q in reversed(targets)]
    if np.count_nonzero(U - np.diag(np.diag(U))) == 0:
        d = np.diag(U).reshape((2,) * k)
        order = np.argsort(ax)
        shape = [1] * t.ndim
        for a in ax:
            shape[a] = 2
        return t * np.transpose(d, order).reshape(shape)
    Ur = U.reshape((2,) * (2 * k))
    out = np.tensordot(Ur, t, axes=(list(range(k, 2 * k)), ax))
    return np.moveaxis(out, list(range(k)), ax)


def _pauli_table(terms):
    """(p_error, cumulative probabilities of the non-identity terms, their letters)."""
    nonid = [(p, s) for p, s in terms if set(s) != {"I"} and p > 0]
    pe = float(sum(p for p, _ in nonid))
    if not nonid:
        return 0.0, np.zeros(0), []
    cum = np.cumsum([p for p, _ in nonid]) / pe
    cum[-1] = 1.0
    return pe, cum, [s for _, s in nonid]


class _Sampler:
    """Vectorised error sampling for a list of channel tables."""

    def __init__(self, tables):
        self.pe = np.array([t[0] for t in tables])
        self.cum = [t[1] for t in tables]
        self.letters = [t[2] for t in tables]

    def draw(self, rng, B):
        """List (per trajectory) of [(channel index, letters)]."""
        C = len(self.pe)
        out = [[] for _ in range(B)]
        if C == 0:
            return out
        hit = rng.random((B, C)) < self.pe
        rows, cols = np.nonzero(hit)
        u = rng.random(len(rows))
        for r, c, x in zip(rows, cols, u):
            j = int(np.searchsorted(self.cum[c], x, side="right"))
            out[r].append((int(c), self.letters[c][min(j, len(self.letters[c]) - 1)]))
        return out


class CopySampler:
    """Noisy preparation of one copy (gates and Pauli channels on N qubits)."""

    def __init__(self, events, N: int):
        self.N = N
        d = 2 ** N
        self.events = list(events)
        self.chan = [i for i, e in enumerate(self.events) if e.kind == "channel"]
        self.tables = [_pauli_table(self.events[i].terms) for i in self.chan]
        self.sampler = _Sampler(self.tables)
        qs = tuple(reversed(range(N)))
        self._qs = qs
        # suffix unitaries after each channel, built backwards
        store = len(self.chan) * d * d * 16 <= _SUFFIX_BUDGET
        S = np.eye(d, dtype=complex)
        suffix = {}
        for i in range(len(self.events) - 1, -1, -1):
            e = self.events[i]
            if e.kind == "channel":
                if store:
                    suffix[i] = S.copy()
            elif e.kind == "gate":
                # S <- S U : act with U on the column index
                cols = S.reshape((d,) + (2,) * N)
                cols = _apply_sv_batch(cols, qs, e.matrix().T, list(e.qubits))
                S = cols.reshape(d, d)
            else:
                raise SimError(f"copy block may hold gates and channels only, got {e.kind}")
        self.total = S
        self.suffix = suffix if store else None
        v0 = np.zeros(d, complex)
        v0[0] = 1
        self.ideal = S @ v0

    def state(self, errors) -> np.ndarray:
        if not errors:
            return self.ideal
        if self.suffix is not None:
            v = self.ideal
            for c, letters in errors:
                i = self.chan[c]
                S = self.suffix[i]
                w = (S.conj().T @ v).reshape((2,) * self.N)
                for q, L in zip(self.events[i].qubits, letters):
                    if L != "I":
                        w = _apply_sv(w, self._qs, PAULI[L], [q])
                v = S @ w.reshape(-1)
            return v
        return self.state_from(errors, 0)

    def state_from(self, errors, x: int) -> np.ndarray:
        """Direct simulation from the basis state |x> (qubit 0 least significant)."""
        err = {self.chan[c]: letters for c, letters in errors}
        t = np.zeros(2 ** self.N, complex)
        t[x] = 1
        t = t.reshape((2,) * self.N)
        for i, e in enumerate(self.events):
            if e.kind == "gate":
                t = _apply_sv(t, self._qs, e.matrix(), list(e.qubits))
            elif i in err:
                for q, L in zip(e.qubits, err[i]):
                    if L != "I":
                        t = _apply_sv(t, self._qs, PAULI[L], [q])
        return t.reshape(-1)

    def draw(self, rng, B):
        """B pairs (state, sampled errors)."""
        return [(self.state(errs), errs) for errs in self.sampler.draw(rng, B)]


def _apply_sv_batch(t, qs, U, targets):
    """As _apply_sv but with a leading batch axis."""
    k = len(targets)
    ax = [1 + qs.index(q) for q in reversed(targets)]
    Ur = U.reshape((2,) * (2 * k))
    out = np.tensordot(Ur, t, axes=(list(range(k, 2 * k)), ax))
    return np.moveaxis(out, list(range(k)), ax)


# ---------------------------------------------------------------------------

def split_blocks(circuit: TimedCircuit):
    """Segments: ('copy', block name, qubits sorted, events) or ('vd', event index, event)."""
    evs = circuit.events
    segs = []
    i = 0
    while i < len(evs):
        b = evs[i].block
        if b.startswith("copy:"):
            j = i
            while j < len(evs) and evs[j].block == b:
                j += 1
            qs = sorted({q for e in evs[i:j] for q in e.qubits})
            segs.append(("copy", b, qs, evs[i:j]))
            i = j
        else:
            segs.append(("vd", i, evs[i]))
            i += 1
    return segs


def _signature(qs, events):
    from dataclasses import replace
    rel = {q: r for r, q in enumerate(qs)}
    return tuple(replace(e, qubits=tuple(rel[q] for q in e.qubits), after=(), block="", gap=0.0)
                 for e in events)


class VDRunner:
    """Evaluates one noisy VD circuit for given copy states and sampled VD errors."""

    def __init__(self, circuit: TimedCircuit, rule):
        if circuit.width > STATEVECTOR_CAP:
            raise SimError(f"width {circuit.width} exceeds statevector cap {STATEVECTOR_CAP}")
        self.circuit = circuit
        self.rule = rule
        self.segs = split_blocks(circuit)
        self.copy_order = [s[1] for s in self.segs if s[0] == "copy"]
        vd = [s for s in self.segs if s[0] == "vd"]
        self.chan_idx = [s[1] for s in vd if s[2].kind == "channel"]
        self.sampler = _Sampler([_pauli_table(circuit.events[i].terms) for i in self.chan_idx])
        self.meas = [s[2] for s in vd if s[2].kind == "measure"]
        self.flip_p = np.array([e.flip for e in self.meas])
        self.keyq = {e.key: e.qubits[0] for e in circuit.events if e.kind == "measure"}
        self.has_reset = any(s[2].kind == "reset" for s in vd)
        m = circuit.meta
        self.fast_ok = "swaps" in m and "sigma" in m
        self._sigma = PauliString(m["sigma"]).matrix() if m.get("sigma") else None
        self._groups = [((k,), "anc") for k in rule.ancillaQubits] + \
                       [(tuple(a) + tuple(b), ("bsm", len(a))) for a, b in rule.bsmPairs]

    def draw_errors(self, rng, B):
        chans = self.sampler.draw(rng, B)
        flips = rng.random((B, len(self.meas))) < self.flip_p if len(self.meas) else \
            np.zeros((B, 0), bool)
        return chans, flips

    # closed form for an error-free VD part
    def ideal_value(self, copies) -> float:
        m = self.circuit.meta
        content = list(range(m["n"]))
        for a, b in m["swaps"]:
            content[a], content[b] = content[b], content[a]
        phi = list(copies)
        if self._sigma is not None:
            phi[0] = self._sigma @ phi[0]
        val = 1.0 + 0j
        for k in range(m["n"]):
            val *= np.vdot(copies[k], phi[content[k]])
        return float(val.real)

    def value(self, copies, chan_errors, flips, rng, source=None) -> float:
        if self.fast_ok and not chan_errors and not flips.any():
            return self.ideal_value(copies)
        return self.simulate(copies, chan_errors, flips, rng, source)

    def simulate(self, copies, chan_errors, flips, rng, source=None) -> float:
        """One trajectory. ``source[k]`` = (sampler, errors) lets copy k be rebuilt
        when a flipped re-preparation hands it a non-zero input state."""
        err = {self.chan_idx[c]: letters for c, letters in chan_errors}
        flipped = {e.key for e, f in zip(self.meas, flips) if f}
        fmap = {}                      # qubit -> [qs(list), tensor]
        ci = 0

        def fac(q):
            f = fmap.get(q)
            if f is None:
                t = np.zeros(2, complex)
                t[0] = 1
                f = [[q], t]
                fmap[q] = f
            return f

        def merged(qs):
            fs = []
            for q in qs:
                f = fac(q)
                if all(f is not g for g in fs):
                    fs.append(f)
            if len(fs) == 1:
                return fs[0]
            allq, t = list(fs[0][0]), fs[0][1]
            for g in fs[1:]:
                t = np.multiply.outer(t, g[1])
                allq += g[0]
            f = [allq, t]
            for q in allq:
                fmap[q] = f
            return f

        for seg in self.segs:
            if seg[0] == "copy":
                qs = seg[2]
                x = self._fresh_input(qs, fmap)
                if x:
                    if source is None:
                        raise SimError("copy block on a flipped qubit needs its error source")
                    smp, errs = source[ci]
                    vec = smp.state_from(errs, x)
                else:
                    vec = copies[ci]
                ci += 1
                f = [list(reversed(qs)), vec.reshape((2,) * len(qs))]
                for q in qs:
                    fmap[q] = f
                continue
            i, e = seg[1], seg[2]
            if e.kind == "gate":
                f = merged(e.qubits)
                f[1] = _apply_sv(f[1], f[0], e.matrix(), list(e.qubits))
            elif e.kind == "channel":
                letters = err.get(i)
                if letters:
                    f = merged(e.qubits)
                    for q, L in zip(e.qubits, letters):
                        if L != "I":
                            f[1] = _apply_sv(f[1], f[0], PAULI[L], [q])
            elif e.kind == "measure":
                fac(e.qubits[0])
            elif e.kind == "feedback":
                ctrl = [self.keyq[k] for k in e.cond]
                f = merged(list(e.qubits) + ctrl)
                U = np.eye(4, dtype=complex)
                U[2:, 2:] = PAULI[e.pauli]
                for c in ctrl:
                    f[1] = _apply_sv(f[1], f[0], U, [e.qubits[0], c])
                if sum(k in flipped for k in e.cond) % 2:
                    f[1] = _apply_sv(f[1], f[0], PAULI[e.pauli], [e.qubits[0]])
            elif e.kind == "reset":
                q = e.qubits[0]
                f = fmap.get(q)
                if f is not None:
                    self._reset(f, q, fmap, rng)
            elif e.kind == "noise":
                pass
            else:
                raise SimError(f"unknown event kind {e.kind}")
        return self._final(fmap, flipped)

    @staticmethod
    def _fresh_input(qs, fmap) -> int:
        """Basis index held by the (reset) qubits a copy block starts on."""
        x = 0
        for r, q in enumerate(qs):
            f = fmap.pop(q, None)
            if f is None:
                continue
            if len(f[0]) != 1:
                raise SimError("copy block on a live qubit")
            p = np.abs(f[1]) ** 2
            if min(p) > 1e-12:
                raise SimError("copy block on a qubit in superposition")
            x |= int(p[1] > 0.5) << r
        return x

    @staticmethod
    def _reset(f, q, fmap, rng):
        ax = f[0].index(q)
        t = np.moveaxis(f[1], ax, 0)
        p1 = float(np.sum(np.abs(t[1]) ** 2))
        p0 = float(np.sum(np.abs(t[0]) ** 2))
        b = int(rng.random() * (p0 + p1) < p1)
        rest = t[b] / np.sqrt(p1 if b else p0)
        f[0].pop(ax)
        f[1] = rest
        del fmap[q]

    def _final(self, fmap, flipped) -> float:
        seen = {}
        for f in fmap.values():
            seen[id(f)] = f
        val = 1.0
        used = set()
        for f in seen.values():
            qs = f[0]
            p = np.abs(f[1]) ** 2
            w = np.ones_like(p)
            for keys, kind in self._groups:
                gq = [self.keyq[k] for k in keys]
                if not any(q in qs for q in gq):
                    continue
                if not all(q in qs for q in gq):
                    raise SimError("shot-rule group split across factors")
                used.add(keys)
                sign = np.array([_w(kind, tuple(b ^ (k in flipped) for b, k in zip(bits, keys)))
                                 for bits in product((0, 1), repeat=len(keys))])
                sign = sign.reshape((2,) * len(keys))
                ax = [qs.index(q) for q in gq]
                order = np.argsort(ax)
                shape = [1] * p.ndim
                for a in ax:
                    shape[a] = 2
                w = w * np.transpose(sign, order).reshape(shape)
            val *= float(np.sum(p * w))
        if len(used) != len(self._groups):
            raise SimError("shot-rule group missing at the end of the circuit")
        return val


def _w(kind, bits):
    if kind == "anc":
        return 1 - 2 * bits[0]
    na = kind[1]
    x = sum(bits[:na]) & 1
    z = sum(bits[na:]) & 1
    return -1 if (x and z) else 1


class TrajectoryEstimator:
    """Shared-copy trajectories over a family of circuits (sigma terms and identity).

    All circuits must share the same copy blocks; each trajectory samples the n
    copies once and the VD-part errors independently per circuit.
    """

    def __init__(self, circuits_rules):
        self.runners = [VDRunner(c, r) for c, r in circuits_rules]
        base = self.runners[0]
        self.samplers = []
        cache = {}
        for seg in base.segs:
            if seg[0] != "copy":
                continue
            sig = _signature(seg[2], seg[3])
            if sig not in cache:
                cache[sig] = CopySampler(sig, len(seg[2]))
            self.samplers.append(cache[sig])
        for r in self.runners[1:]:
            sigs = [_signature(s[2], s[3]) for s in r.segs if s[0] == "copy"]
            if len(sigs) != len(self.samplers):
                raise SimError("circuits differ in their copy blocks")

    def sample(self, M: int, rng, chunk: int = 1000) -> np.ndarray:
        """Array (M, n_circuits) of per-trajectory expected shot values."""
        out = np.empty((M, len(self.runners)))
        done = 0
        while done < M:
            B = min(chunk, M - done)
            copies = [s.draw(rng, B) for s in self.samplers]
            errs = [r.draw_errors(rng, B) for r in self.runners]
            for b in range(B):
                cps = [c[b][0] for c in copies]
                src = [(s, c[b][1]) for s, c in zip(self.samplers, copies)]
                for j, r in enumerate(self.runners):
                    chans, flips = errs[j]
                    out[done + b, j] = r.value(cps, chans[b], flips[b], rng, src)
            done += B
        return out
