"""Random-field Heisenberg chain: Trotter circuits in native gates and the ideal Trotterised state."""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import reduce

import numpy as np
import scipy.linalg

from .circuit import Event, TimedCircuit, gate
from .sim_core import I2, PAULI

PRESETS = {
    "h4": (-0.887, -0.925, -0.72, 0.08),
    "h5": (0.206, -0.649, 0.598, -0.826, 0.702),
    "h6": (-0.859, 0.396, -0.354, 0.634, -0.893, 0.198),
}

# basis change (first, last) mapping each interaction onto ZZ, as native rotations
_BASIS = {
    "X": (("ry", -np.pi / 2), ("ry", np.pi / 2)),
    "Y": (("rx", np.pi / 2), ("rx", -np.pi / 2)),
    "Z": (None, None),
}


@dataclass(frozen=True)
class HeisenbergParams:
    N: int
    h: tuple
    K: int
    J: float = 1.0
    deltaT: float = 0.01
    initSite: int = 3          # 1-based
    hmax: float = 1.0

    def __post_init__(self):
        if len(self.h) != self.N:
            raise ValueError("field vector length must equal N")
        if any(abs(x) > self.hmax for x in self.h):
            raise ValueError("|h_j| exceeds h_max")
        if self.K < 0:
            raise ValueError("K must be non-negative")
        if not 1 <= self.initSite <= self.N:
            raise ValueError("initSite outside chain")

    @classmethod
    def preset(cls, name: str, K: int | None = None, p2Q: float = 1e-3, **kw):
        h = PRESETS[name]
        N = len(h)
        return cls(N, h, trotter_steps_for_budget(N, p2Q) if K is None else K, **kw)


def trotter_steps_for_budget(N: int, p2Q: float) -> int:
    if p2Q <= 0:
        raise ValueError("p2Q must be positive")
    if N < 2:
        raise ValueError("need N >= 2")
    return int(np.floor(1.0 / (3 * N * p2Q)))


def bond_layers(N: int):
    """Passes of disjoint bonds (0-based site pairs) of the periodic chain.

    Returns [even, odd] for even N and [even, odd, wrap] for odd N: the
    wrap-around bond (N-1, 0) belongs to the odd layer but shares a site with
    bond (N-2, N-1), so it is applied as a separate pass after the other odd bonds.
    """
    bonds = [(j, (j + 1) % N) for j in range(N)]
    even = [b for b in bonds if b[0] % 2 == 0 and not (N % 2 and b[0] == N - 1)]
    odd = [b for b in bonds if b[0] % 2 == 1]
    passes = [even, odd]
    if N % 2:
        passes.append([(N - 1, 0)])
    return passes


def build_trotter_circuit(params: HeisenbergParams, durations=None, offset: int = 0,
                          width: int | None = None, block: str = "") -> TimedCircuit:
    """K Trotter steps; each bond pass applies XX, YY, ZZ layers, then virtual Rz fields."""
    N = params.N
    tc = TimedCircuit(width or offset + N)
    theta = 2 * params.J * params.deltaT
    init = params.initSite - 1
    pending_x = True          # |psi_init> still to be merged into the first rotation
    q = lambda j: offset + j
    for _ in range(params.K):
        for bonds in bond_layers(N):
            sites = sorted({s for b in bonds for s in b})
            for axis in "XYZ":
                pre, post = _BASIS[axis]
                if pre:
                    for j in sites:
                        name, ang = pre
                        if pending_x and j == init:
                            ang = -ang       # R(a) X|0> = R(-a)|0> up to phase, R in {Rx, Ry}
                            pending_x = False
                        tc.add(gate(name, [q(j)], ang, durations, block))
                for a, b in bonds:
                    tc.add(gate("rzz", [q(a), q(b)], theta, durations, block))
                if post:
                    for j in sites:
                        tc.add(gate(post[0], [q(j)], post[1], durations, block))
        for j in range(N):
            tc.add(gate("rz", [q(j)], 2 * params.h[j] * params.deltaT, durations, block))
    if pending_x:            # K = 0: prepare the basis state directly
        tc.add(gate("rx", [q(init)], np.pi, durations, block))
    return tc


def _op(N, ops: dict) -> np.ndarray:
    return reduce(np.kron, [ops.get(j, I2) for j in reversed(range(N))])


def step_unitary(params: HeisenbergParams) -> np.ndarray:
    N = params.N
    if N > 12:
        raise ValueError("dense reference limited to N <= 12")
    U = np.eye(2 ** N, dtype=complex)
    for bonds in bond_layers(N):
        Hl = sum(_op(N, {a: PAULI[P], b: PAULI[P]}) for a, b in bonds for P in "XYZ")
        U = scipy.linalg.expm(-1j * params.J * params.deltaT * Hl) @ U
    Hz = sum(params.h[j] * _op(N, {j: PAULI["Z"]}) for j in range(N))
    return scipy.linalg.expm(-1j * params.deltaT * Hz) @ U


def init_state(params: HeisenbergParams) -> np.ndarray:
    v = np.zeros(2 ** params.N, dtype=complex)
    v[1 << (params.initSite - 1)] = 1
    return v


def ideal_state(params: HeisenbergParams) -> np.ndarray:
    """(prod_l exp(-i H_l dt))^K |psi_init>, the zero-noise reference."""
    if params.N > 12:
        raise ValueError("dense reference limited to N <= 12")
    v = init_state(params)
    if params.K:
        U = step_unitary(params)
        for _ in range(params.K):
            v = U @ v
    return v


def magnetisation(vec: np.ndarray) -> float:
    N = int(np.log2(vec.shape[0]))
    idx = np.arange(vec.shape[0])
    zsum = sum(1 - 2 * ((idx >> j) & 1) for j in range(N))
    return float(np.sum(np.abs(vec) ** 2 * zsum))
