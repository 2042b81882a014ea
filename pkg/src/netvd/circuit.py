"""Timed circuits: ordered events with durations, ASAP per-qubit scheduling and a text listing.

Event kinds
  gate      native or artificial gate (matrix from name/angle)
  channel   Pauli channel, ``terms`` = ((p, letters), ...) over ``qubits``
  noise     placeholder resolved by ``schedule_noise`` (tag 'teleport' or 'bell')
  measure   Z-basis detection writing classical bit ``key``; ``flip`` = bit-flip prob
  reset     qubit discarded and re-initialised to |0>
  feedback  Pauli ``pauli`` on ``qubits`` if the parity of bits ``cond`` is odd
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

from . import native_gates as ng
from .sim_core import X as _X, Z as _Z, H as _H

_CCX = np.eye(8, dtype=complex)
_CCX[[3, 7]] = _CCX[[7, 3]]          # controls = qubits 0,1; target = qubit 2
_CX = np.eye(4, dtype=complex)
_CX[[1, 3]] = _CX[[3, 1]]            # control = qubit 0
_BELL = np.array([[1, 0, 0, -1], [0, 1, 1, 0], [0, 1, -1, 0], [1, 0, 0, 1]], dtype=complex) / np.sqrt(2)
# _BELL maps |00> to (|00>+|11>)/sqrt2 (qubit order as listed)

_FIXED = {"ccx": _CCX, "cx": _CX, "bellprep": _BELL, "x": _X, "z": _Z, "h": _H}


@dataclass(frozen=True)
class Event:
    kind: str
    qubits: tuple
    name: str = ""
    angle: float = 0.0
    duration: float = 0.0
    noisy: bool = False
    terms: tuple = ()
    key: str = ""
    flip: float = 0.0
    role: str = ""          # measure: 'ctrl'/'tgt' for folded remote BSM; reset: 'midprep'
    cond: tuple = ()
    pauli: str = ""
    block: str = ""         # e.g. 'copy:2' for the preparation of copy 2
    after: tuple = ()       # extra qubits the event waits for (scheduling only)
    tag: str = ""
    gap: float = 0.0        # idle channels: the clock gap they account for

    def matrix(self) -> np.ndarray:
        if self.name in ("rx", "ry", "rz", "rzz"):
            return ng._MATRIX[self.name](self.angle)
        if self.name in _FIXED:
            return _FIXED[self.name]
        raise KeyError(self.name)

    def line(self) -> str:
        q = " ".join(map(str, self.qubits))
        if self.kind == "gate":
            return f"{self.name.upper()} {self.angle:+.12g} {q}"
        if self.kind == "channel":
            body = " ".join(f"{p:.6g}:{s}" for p, s in self.terms)
            return f"CHANNEL {self.tag or 'pauli'} {q} {body}"
        if self.kind == "noise":
            return f"CHANNEL {self.tag} {q} pending"
        if self.kind == "measure":
            return f"MEASURE Z {q} -> {self.key} flip={self.flip:.6g}"
        if self.kind == "reset":
            return f"RESET {q}"
        if self.kind == "feedback":
            return f"CLASSICAL-FEEDBACK {self.pauli} {q} if {'^'.join(self.cond)}"
        return f"{self.kind.upper()} {q}"


def gate(name, qubits, angle=0.0, durations=None, block="", tag="") -> Event:
    if name in ("rx", "ry", "rz", "rzz"):
        d = ng.gate_duration(name, durations)
        return Event("gate", tuple(qubits), name, float(angle), d, name != "rz", block=block, tag=tag)
    # artificial or ideal fixed gates: instantaneous and noiseless
    return Event("gate", tuple(qubits), name, 0.0, 0.0, False, block=block, tag=tag)


def from_sequence(seq: ng.GateSequence, block="", tag="", durations=None) -> list:
    return [Event("gate", tuple(g.targets), g.kind, float(g.angle),
                  ng.gate_duration(g.kind, durations), bool(g.noisy), block=block, tag=tag)
            for g in seq]


@dataclass
class TimedCircuit:
    width: int
    events: list = field(default_factory=list)
    labels: dict = field(default_factory=dict)     # qubit -> label, for listings
    meta: dict = field(default_factory=dict)       # builder metadata (registers, ancillas, ...)

    def add(self, ev: Event) -> "TimedCircuit":
        if any(q < 0 or q >= self.width for q in ev.qubits + ev.after):
            raise ValueError(f"event qubit out of range: {ev}")
        self.events.append(ev)
        return self

    def extend(self, evs: Iterable[Event]) -> "TimedCircuit":
        for e in evs:
            self.add(e)
        return self

    def copy(self) -> "TimedCircuit":
        return TimedCircuit(self.width, list(self.events), dict(self.labels), dict(self.meta))

    def schedule(self):
        """ASAP start times per event and final per-qubit clocks."""
        clock = np.zeros(self.width)
        starts = np.empty(len(self.events))
        for i, e in enumerate(self.events):
            if e.duration is None:
                raise ValueError(f"event without duration: {e}")
            qs = e.qubits + e.after
            s = max((clock[q] for q in qs), default=0.0)
            starts[i] = s
            for q in e.qubits:
                clock[q] = s + e.duration
        return starts, clock

    def depth(self) -> float:
        return float(self.schedule()[1].max()) if self.width else 0.0

    def count(self, kind="gate", name=None, tag=None) -> int:
        return sum(e.kind == kind and (name is None or e.name == name)
                   and (tag is None or e.tag == tag) for e in self.events)

    def tags(self, tag) -> list:
        return [e for e in self.events if e.tag == tag]

    def measured_keys(self) -> list:
        return [e.key for e in self.events if e.kind == "measure"]

    def listing(self, times: bool = False) -> str:
        starts = self.schedule()[0] if times else None
        out = []
        for i, e in enumerate(self.events):
            s = e.line()
            if times:
                s = f"{starts[i]:10.3f} {s}"
            out.append(s)
        return "\n".join(out)

    def relabel(self, mapping, width=None) -> "TimedCircuit":
        m = list(mapping)
        evs = [replace(e, qubits=tuple(m[q] for q in e.qubits),
                       after=tuple(m[q] for q in e.after)) for e in self.events]
        return TimedCircuit(width or (max(m) + 1), evs)
