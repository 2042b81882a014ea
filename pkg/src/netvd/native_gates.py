"""Trapped-ion native gates {Rx, Ry, virtual Rz, Rzz} and decompositions into them.

Sequences are listed in temporal order (first element applied first).
Rotation conventions: R_P(theta) = exp(-i theta P / 2), Rzz(theta) = exp(-i theta Z⊗Z / 2).
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .sim_core import I2, X, Y, Z, apply_matrix_sv

# microseconds; overridable through NoiseModel.durations
DURATIONS = {
    "rz": 0.0,
    "rx": 1.0,
    "ry": 1.0,
    "rzz": 10.0,
    "measure": 100.0,
    "prep": 1.0,
    "bell": 100.0,
}


def rx(t: float) -> np.ndarray:
    return np.cos(t / 2) * I2 - 1j * np.sin(t / 2) * X


def ry(t: float) -> np.ndarray:
    return np.cos(t / 2) * I2 - 1j * np.sin(t / 2) * Y


def rz(t: float) -> np.ndarray:
    return np.cos(t / 2) * I2 - 1j * np.sin(t / 2) * Z


def rzz(t: float) -> np.ndarray:
    return np.diag(np.exp(-0.5j * t * np.array([1, -1, -1, 1])))


_MATRIX = {"rx": rx, "ry": ry, "rz": rz, "rzz": rzz}


@dataclass(frozen=True)
class NativeGate:
    kind: str
    angle: float
    targets: tuple
    duration: float | None = None
    noisy: bool | None = None

    def __post_init__(self):
        if self.kind not in _MATRIX:
            raise ValueError(f"unknown native gate {self.kind}")
        nt = 2 if self.kind == "rzz" else 1
        if len(self.targets) != nt or len(set(self.targets)) != nt:
            raise ValueError(f"{self.kind} needs {nt} distinct targets")
        if self.duration is None:
            object.__setattr__(self, "duration", DURATIONS[self.kind])
        if self.noisy is None:
            object.__setattr__(self, "noisy", self.kind != "rz")
        if self.kind == "rz" and (self.duration != 0 or self.noisy):
            raise ValueError("Rz is virtual: zero duration and noiseless")

    def matrix(self) -> np.ndarray:
        return _MATRIX[self.kind](self.angle)

    def line(self) -> str:
        return f"{self.kind.upper()} {self.angle:+.12g} " + " ".join(map(str, self.targets))


@dataclass
class GateSequence:
    gates: list = field(default_factory=list)
    width: int | None = None

    def __post_init__(self):
        top = max((max(g.targets) for g in self.gates), default=-1) + 1
        if self.width is None:
            self.width = top
        elif top > self.width:
            raise ValueError("gate target outside declared width")

    def __iter__(self):
        return iter(self.gates)

    def __len__(self):
        return len(self.gates)

    def __add__(self, other: "GateSequence") -> "GateSequence":
        return GateSequence(self.gates + other.gates, max(self.width, other.width))

    def count(self, kind: str) -> int:
        return sum(g.kind == kind for g in self.gates)

    def physical(self) -> list:
        return [g for g in self.gates if g.noisy]

    def duration(self) -> float:
        """Critical-path duration with per-qubit clocks."""
        clock = {}
        for g in self.gates:
            t = max(clock.get(q, 0.0) for q in g.targets) + g.duration
            for q in g.targets:
                clock[q] = t
        return max(clock.values(), default=0.0)

    def unitary(self, width: int | None = None) -> np.ndarray:
        w = width or self.width
        dim = 2 ** w
        cols = np.eye(dim, dtype=complex).reshape((dim,) + (2,) * w)
        out = []
        for j in range(dim):
            t = cols[j]
            for g in self.gates:
                t = apply_matrix_sv(t, g.matrix(), g.targets)
            out.append(t.reshape(-1))
        return np.array(out).T

    def relabel(self, mapping: Sequence[int]) -> "GateSequence":
        gates = [replace(g, targets=tuple(mapping[q] for q in g.targets)) for g in self.gates]
        return GateSequence(gates, max(mapping) + 1 if len(mapping) else 0)

    def listing(self) -> str:
        return "\n".join(g.line() for g in self.gates)


def phase_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Max entrywise deviation after removing the global phase (max-entry normalisation)."""
    k = np.unravel_index(np.argmax(np.abs(b)), b.shape)
    if abs(a[k]) < 1e-12:
        return float("inf")
    ph = (b[k] / a[k]) / abs(b[k] / a[k])
    return float(np.abs(a * ph - b).max())


def _g(kind, angle, *targets):
    return NativeGate(kind, angle, tuple(targets))


def decompose_hadamard(q: int) -> GateSequence:
    h = np.pi / 2
    return GateSequence([_g("rz", h, q), _g("rx", h, q), _g("rz", h, q)])


def decompose_controlled_pauli(p: str, control: int, target: int) -> GateSequence:
    if control == target:
        raise ValueError("control and target must differ")
    h, c, t = np.pi / 2, control, target
    if p == "X":
        seq = [_g("rz", h, c), _g("rz", h, t), _g("rx", h, t), _g("rz", np.pi, t),
               _g("rzz", -h, c, t)] + decompose_hadamard(t).gates
    elif p == "Y":
        seq = [_g("rz", h, c), _g("rx", h, t), _g("rz", 3 * h, t), _g("rzz", -h, c, t),
               _g("rx", h, t), _g("rz", np.pi, t)]
    elif p == "Z":
        seq = [_g("rz", h, c), _g("rz", h, t), _g("rzz", -h, c, t)]
    else:
        raise ValueError(f"unknown Pauli {p!r}")
    return GateSequence(seq)


# C-SWAP on roles (0=control, 1=t1, 2=t2); angles in units of pi/4.
# Derived once by splitting the Toffoli phase polynomial around a CNOT pair,
# merging the leading CNOT-H-CNOT block into a single Rzz up to local
# Cliffords, and expressing every single-qubit layer as Rz Rx Rz.
CSWAP_SEQUENCE = (
    ("rz", 6, (1,)), ("rz", 4, (2,)), ("rx", 2, (2,)), ("rz", 2, (2,)),
    ("rzz", 2, (1, 2)),
    ("rz", 1, (0,)), ("rx", 2, (1,)), ("rz", 3, (1,)),
    ("rzz", 1, (0, 1)),
    ("rx", 2, (2,)), ("rz", 5, (2,)), ("rx", 2, (1,)), ("rz", 6, (1,)),
    ("rzz", 6, (2, 1)),
    ("rx", 2, (1,)), ("rz", 5, (1,)),
    ("rzz", 7, (0, 1)),
    ("rzz", 7, (0, 2)),
    ("rx", 2, (1,)), ("rz", 4, (1,)), ("rx", 2, (2,)), ("rz", 6, (2,)),
    ("rzz", 6, (1, 2)),
    ("rx", 2, (2,)), ("rz", 2, (2,)),
)


def decompose_cswap(control: int, t1: int, t2: int) -> GateSequence:
    if len({control, t1, t2}) != 3:
        raise ValueError("C-SWAP needs three distinct qubits")
    roles = (control, t1, t2)
    return GateSequence([NativeGate(k, m * np.pi / 4, tuple(roles[r] for r in tg))
                         for k, m, tg in CSWAP_SEQUENCE])


def gate_duration(g, durations: dict | None = None) -> float:
    """Duration of a native gate or of a named event kind ('measure', 'prep', 'bell')."""
    d = DURATIONS if durations is None else {**DURATIONS, **durations}
    kind = g.kind if isinstance(g, NativeGate) else str(g)
    return d[kind]


# reference matrices (little-endian, first listed qubit = least significant bit)
def controlled(u: np.ndarray) -> np.ndarray:
    """Control on qubit 0, target on qubit 1."""
    m = np.eye(4, dtype=complex)
    m[np.ix_([1, 3], [1, 3])] = u
    return m


def cswap_matrix() -> np.ndarray:
    m = np.zeros((8, 8), dtype=complex)
    for i in range(8):
        c, a, b = i & 1, (i >> 1) & 1, (i >> 2) & 1
        j = (c | (b << 1) | (a << 2)) if c else i
        m[j, i] = 1
    return m
