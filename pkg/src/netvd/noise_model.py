"""Error-probability bundle, idle dephasing accounting and noise attachment."""
from __future__ import annotations

from dataclasses import dataclass, field, fields, replace

import numpy as np

from .circuit import Event, TimedCircuit
from .native_gates import DURATIONS
from .sim_core import QuantumState, depolarizing_terms, pauli_channel_dm

PROB_FIELDS = ("p1Q", "p2Q", "pBell", "pDetect", "pMidPrep")


@dataclass(frozen=True)
class NoiseModel:
    p1Q: float = 1e-4
    p2Q: float = 1e-3
    pBell: float = 1e-2
    pDetect: float = 1e-3
    pMidPrep: float = 1e-3
    idleRate: float = 1e-5
    durations: dict = field(default_factory=lambda: dict(DURATIONS))
    # charge Bell-pair generation time to waiting qubits (off by default)
    network_time: bool = False
    # remote-BSM fold: 'depolarising' (exact: depolarising(pBell) on the BSM control
    # before the CNOT) or 'detection' (independent pBell/3, 2pBell/3 outcome flips)
    bsm_fold: str = "depolarising"

    def __post_init__(self):
        for k in PROB_FIELDS:
            v = getattr(self, k)
            if not 0 <= v <= 1:
                raise ValueError(f"{k}={v} outside [0, 1]")
        if self.idleRate < 0 or self.idleRate > 1:
            raise ValueError("idleRate must be in [0, 1]")
        if self.bsm_fold not in ("depolarising", "detection"):
            raise ValueError("bsm_fold must be 'depolarising' or 'detection'")
        object.__setattr__(self, "durations", {**DURATIONS, **dict(self.durations)})

    @classmethod
    def reference(cls) -> "NoiseModel":
        return cls()

    @classmethod
    def zero(cls) -> "NoiseModel":
        return cls(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_dict(cls, d: dict) -> "NoiseModel":
        known = {f.name for f in fields(cls)}
        bad = set(d) - known
        if bad:
            raise ValueError(f"unknown noise keys: {sorted(bad)}")
        return cls(**d)

    def with_(self, **kw) -> "NoiseModel":
        return replace(self, **kw)

    def is_zero(self) -> bool:
        return all(getattr(self, k) == 0 for k in PROB_FIELDS) and self.idleRate == 0


@dataclass(frozen=True)
class ScaledModel:
    """Multiply a subset of {p1Q, p2Q, pBell} by c; idle and detection stay fixed."""
    base: NoiseModel
    c: float
    subset: tuple = ("p1Q", "p2Q", "pBell")

    def __post_init__(self):
        if self.c <= 0:
            raise ValueError("scale factor must be positive")
        if set(self.subset) - {"p1Q", "p2Q", "pBell"}:
            raise ValueError("only p1Q, p2Q, pBell can be scaled")

    def model(self) -> NoiseModel:
        kw = {k: min(1.0, self.c * getattr(self.base, k)) for k in self.subset}
        return replace(self.base, **kw)


def as_model(m) -> NoiseModel:
    return m.model() if isinstance(m, ScaledModel) else m


def idle_error_probability(t: float, model) -> float:
    if t < 0:
        raise ValueError("negative idle time")
    r = as_model(model).idleRate
    return float(-np.expm1(t * np.log1p(-r))) if r < 1 else float(t > 0)


def xor_prob(p: float, q: float) -> float:
    """Probability that exactly one of two independent flips happens."""
    return p + q - 2 * p * q


def depol_event(lam, qubits, block="", tag="depol") -> Event:
    return Event("channel", tuple(qubits), terms=tuple(depolarizing_terms(lam, len(qubits))),
                 block=block, tag=tag)


def dephase_event(lam, q, block="", gap=0.0) -> Event:
    return Event("channel", (q,), terms=((1 - lam, "I"), (lam, "Z")), block=block, tag="idle", gap=gap)


def bitflip_event(p, q, block="", tag="bitflip") -> Event:
    return Event("channel", (q,), terms=((1 - p, "I"), (p, "X")), block=block, tag=tag)


def _placeholder_duration(e: Event, m: NoiseModel) -> float:
    if e.kind == "noise" or (e.kind == "gate" and e.name == "bellprep"):
        return m.durations["bell"] if m.network_time else 0.0
    return e.duration


def schedule_noise(circuit: TimedCircuit, model) -> TimedCircuit:
    """Attach gate, detection, re-preparation, Bell-pair and idle noise."""
    m = as_model(model)
    out = TimedCircuit(circuit.width, labels=dict(circuit.labels), meta=dict(circuit.meta))
    clock = np.zeros(circuit.width)
    touched = np.zeros(circuit.width, bool)
    classical = np.zeros(circuit.width, bool)
    for e in circuit.events:
        if e.duration is None:
            raise ValueError(f"event missing duration: {e}")
        dur = _placeholder_duration(e, m)
        if dur != e.duration:
            e = replace(e, duration=dur)
        s = max((clock[q] for q in e.qubits + e.after), default=0.0)
        if e.kind != "reset":
            for q in e.qubits:
                g = s - clock[q]
                if touched[q] and not classical[q] and g > 1e-12:
                    lam = idle_error_probability(g, m)
                    if lam > 0:
                        out.add(dephase_event(lam, q, e.block, gap=g))
        if e.kind == "gate":
            out.add(e)
            if e.noisy:
                p = m.p1Q if len(e.qubits) == 1 else m.p2Q
                if p > 0:
                    out.add(depol_event(p, e.qubits, e.block))
        elif e.kind == "noise":
            if e.tag not in ("teleport", "bell", "bsm"):
                raise ValueError(f"unknown noise placeholder {e.tag}")
            if e.tag == "bsm" and m.bsm_fold == "detection":
                pass
            elif m.pBell > 0:
                out.add(replace(depol_event(m.pBell, e.qubits, e.block, tag=e.tag), duration=e.duration))
            elif e.duration > 0:
                out.add(replace(e, kind="channel", terms=((1.0, "I" * len(e.qubits)),)))
        elif e.kind == "measure":
            extra = 0.0
            if m.bsm_fold == "detection":
                extra = {"ctrl": m.pBell / 3, "tgt": 2 * m.pBell / 3}.get(e.role, 0.0)
            out.add(replace(e, flip=xor_prob(xor_prob(m.pDetect, extra), e.flip)))
        elif e.kind == "reset":
            out.add(e)
            if e.role == "midprep" and m.pMidPrep > 0:
                out.add(bitflip_event(m.pMidPrep, e.qubits[0], e.block, tag="midprep"))
        else:
            out.add(e)
        for q in e.qubits:
            clock[q] = s + e.duration
            touched[q] = True
            classical[q] = e.kind == "measure"
    return out


def noisy_bell_pair(model) -> QuantumState:
    """(1-p)|Phi+><Phi+| + p/3 (other Bell projectors), as depolarising on one half."""
    m = as_model(model)
    v = np.array([1, 0, 0, 1], dtype=complex) / np.sqrt(2)
    rho = np.outer(v, v.conj()).reshape(2, 2, 2, 2)
    rho = pauli_channel_dm(rho, depolarizing_terms(m.pBell, 1), [1])
    return QuantumState("dm", 2, rho)
