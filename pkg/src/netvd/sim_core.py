"""State representations and primitive evolution.

Qubit order is little-endian: qubit 0 is the least significant bit of the
amplitude index. Internally a state of width W is stored as a tensor of shape
(2,)*W (statevector) or (2,)*2W (density matrix, row axes first), so qubit q
lives on axis W-1-q.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

TOL = 1e-10
EIG_TOL = -1e-9
PROB_FLOOR = 1e-14
DENSITY_CAP = 14
STATEVECTOR_CAP = 26

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}


class SimError(ValueError):
    pass


class CorruptedState(SimError):
    """Both measurement outcomes had (numerically) zero probability."""


@dataclass(frozen=True)
class PauliString:
    """Pauli string with a real weight. ``ops[q]`` acts on qubit q."""
    ops: str
    coefficient: float = 1.0

    def __post_init__(self):
        if any(c not in "IXYZ" for c in self.ops):
            raise SimError(f"bad Pauli letters in {self.ops!r}")
        if not np.isfinite(self.coefficient):
            raise SimError("coefficient must be finite")

    @property
    def width(self) -> int:
        return len(self.ops)

    def support(self) -> list[int]:
        return [q for q, c in enumerate(self.ops) if c != "I"]

    def matrix(self) -> np.ndarray:
        m = np.array([[1.0 + 0j]])
        for c in self.ops:          # qubit 0 ends up least significant
            m = np.kron(PAULI[c], m)
        return self.coefficient * m

    @classmethod
    def single(cls, width: int, q: int, letter: str, coefficient: float = 1.0):
        ops = ["I"] * width
        ops[q] = letter
        return cls("".join(ops), coefficient)


@dataclass
class QuantumState:
    kind: str                       # "sv" or "dm"
    width: int
    data: np.ndarray                # tensor of shape (2,)*W or (2,)*2W
    clocks: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.kind not in ("sv", "dm"):
            raise SimError("kind must be 'sv' or 'dm'")
        if self.clocks is None:
            self.clocks = np.zeros(self.width)

    # -- constructors -----------------------------------------------------
    @classmethod
    def zeros(cls, width: int, kind: str = "dm", cap: int | None = None):
        cap = cap if cap is not None else (DENSITY_CAP if kind == "dm" else STATEVECTOR_CAP)
        if width > cap:
            raise SimError(f"width {width} exceeds {kind} cap {cap}")
        dim = 2 ** width
        if kind == "sv":
            v = np.zeros(dim, dtype=complex)
            v[0] = 1
            return cls.from_vector(v)
        m = np.zeros((dim, dim), dtype=complex)
        m[0, 0] = 1
        return cls.from_matrix(m)

    @classmethod
    def from_vector(cls, vec) -> "QuantumState":
        vec = np.asarray(vec, dtype=complex)
        w = _width_of(vec.shape[0])
        return cls("sv", w, vec.reshape((2,) * w).copy())

    @classmethod
    def from_matrix(cls, mat) -> "QuantumState":
        mat = np.asarray(mat, dtype=complex)
        w = _width_of(mat.shape[0])
        return cls("dm", w, mat.reshape((2,) * (2 * w)).copy())

    @classmethod
    def basis(cls, bits: Sequence[int], kind: str = "sv"):
        idx = sum(int(b) << q for q, b in enumerate(bits))
        v = np.zeros(2 ** len(bits), dtype=complex)
        v[idx] = 1
        s = cls.from_vector(v)
        return s if kind == "sv" else to_density(s)

    # -- views ------------------------------------------------------------
    def vector(self) -> np.ndarray:
        if self.kind != "sv":
            raise SimError("not a statevector")
        return self.data.reshape(-1)

    def matrix(self) -> np.ndarray:
        d = 2 ** self.width
        if self.kind == "sv":
            v = self.vector()
            return np.outer(v, v.conj())
        return self.data.reshape(d, d)

    def copy(self) -> "QuantumState":
        return QuantumState(self.kind, self.width, self.data.copy(), self.clocks.copy())

    def trace(self) -> float:
        if self.kind == "sv":
            return float(np.vdot(self.data, self.data).real)
        return float(np.trace(self.matrix()).real)

    def validate(self) -> None:
        if self.kind == "sv":
            if abs(np.linalg.norm(self.data) - 1) > TOL:
                raise SimError("statevector not normalised")
            return
        m = self.matrix()
        if np.abs(m - m.conj().T).max() > TOL:
            raise SimError("density matrix not Hermitian")
        if abs(np.trace(m).real - 1) > TOL:
            raise SimError("density matrix trace != 1")
        if np.linalg.eigvalsh(m).min() < EIG_TOL:
            raise SimError("density matrix not positive semidefinite")


def _width_of(dim: int) -> int:
    w = int(round(np.log2(dim)))
    if 2 ** w != dim:
        raise SimError(f"dimension {dim} is not a power of two")
    return w


def to_density(state: QuantumState) -> QuantumState:
    if state.kind == "dm":
        return state.copy()
    s = QuantumState.from_matrix(state.matrix())
    s.clocks = state.clocks.copy()
    return s


def is_unitary(m: np.ndarray, tol: float = TOL) -> bool:
    return m.shape[0] == m.shape[1] and np.abs(m @ m.conj().T - np.eye(m.shape[0])).max() < tol


# ---------------------------------------------------------------------------
# tensor kernels (no validation; used in hot loops by the engines)

def apply_matrix_sv(t: np.ndarray, mat: np.ndarray, targets: Sequence[int]) -> np.ndarray:
    """Contract ``mat`` into statevector tensor ``t`` (width = t.ndim)."""
    w = t.ndim
    k = len(targets)
    axes = [w - 1 - q for q in reversed(targets)]   # matrix MSB first
    m = mat.reshape((2,) * (2 * k))
    out = np.tensordot(m, t, axes=(list(range(k, 2 * k)), axes))
    return np.moveaxis(out, list(range(k)), axes)


def apply_matrix_dm(t: np.ndarray, mat: np.ndarray, targets: Sequence[int]) -> np.ndarray:
    """rho -> M rho M^dagger on density tensor ``t`` (t.ndim = 2W)."""
    w = t.ndim // 2
    k = len(targets)
    row = [w - 1 - q for q in reversed(targets)]
    col = [2 * w - 1 - q for q in reversed(targets)]
    m = mat.reshape((2,) * (2 * k))
    out = np.tensordot(m, t, axes=(list(range(k, 2 * k)), row))
    out = np.moveaxis(out, list(range(k)), row)
    out = np.tensordot(m.conj(), out, axes=(list(range(k, 2 * k)), col))
    return np.moveaxis(out, list(range(k)), col)


def apply_left_dm(t: np.ndarray, mat: np.ndarray, targets: Sequence[int]) -> np.ndarray:
    """rho -> M rho (row side only)."""
    w = t.ndim // 2
    k = len(targets)
    row = [w - 1 - q for q in reversed(targets)]
    m = mat.reshape((2,) * (2 * k))
    out = np.tensordot(m, t, axes=(list(range(k, 2 * k)), row))
    return np.moveaxis(out, list(range(k)), row)


def pauli_channel_dm(t: np.ndarray, terms, targets: Sequence[int]) -> np.ndarray:
    """Sum_k p_k P_k rho P_k with P_k given as letter strings over ``targets``."""
    acc = None
    for p, letters in terms:
        if p == 0:
            continue
        if set(letters) == {"I"}:
            cur = t
        else:
            cur = t
            for q, c in zip(targets, letters):
                if c != "I":
                    cur = apply_matrix_dm(cur, PAULI[c], [q])
        acc = p * cur if acc is None else acc + p * cur
    return acc if acc is not None else np.zeros_like(t)


def partial_trace_dm(t: np.ndarray, qubits: Iterable[int]) -> np.ndarray:
    """Trace out ``qubits``; remaining qubits keep their relative order."""
    w = t.ndim // 2
    for q in sorted(qubits, reverse=True):   # highest first keeps lower indices valid
        ax = w - 1 - q
        t = np.trace(t, axis1=ax, axis2=ax + w)
        w -= 1
    return t


def kron_tensors(a: np.ndarray, b: np.ndarray, kind: str) -> np.ndarray:
    """Tensor product with ``a`` on the low qubits and ``b`` on the high ones."""
    if kind == "sv":
        return np.multiply.outer(b, a)
    wa, wb = a.ndim // 2, b.ndim // 2
    out = np.multiply.outer(b, a)           # axes: b_row b_col a_row a_col
    perm = list(range(wb)) + list(range(2 * wb, 2 * wb + wa)) \
        + list(range(wb, 2 * wb)) + list(range(2 * wb + wa, 2 * wb + 2 * wa))
    return out.transpose(perm)


def diagonal_block(t: np.ndarray, q: int, bit: int) -> np.ndarray:
    """<b|rho|b> on qubit q of a density tensor, returning a width-1 smaller tensor."""
    w = t.ndim // 2
    idx = [slice(None)] * t.ndim
    idx[w - 1 - q] = bit
    idx[2 * w - 1 - q] = bit
    return t[tuple(idx)]


# ---------------------------------------------------------------------------
# public operations

def apply_unitary(state: QuantumState, matrix, targets: Sequence[int]) -> QuantumState:
    matrix = np.asarray(matrix, dtype=complex)
    targets = list(targets)
    k = len(targets)
    if matrix.shape != (2 ** k, 2 ** k):
        raise SimError(f"matrix shape {matrix.shape} does not match {k} targets")
    if len(set(targets)) != k:
        raise SimError("duplicate targets")
    if any(q < 0 or q >= state.width for q in targets):
        raise SimError("target out of range")
    if not is_unitary(matrix):
        raise SimError("matrix is not unitary")
    out = state.copy()
    if state.kind == "sv":
        out.data = apply_matrix_sv(state.data, matrix, targets)
    else:
        out.data = apply_matrix_dm(state.data, matrix, targets)
    return out


def apply_pauli_channel(state: QuantumState, terms) -> QuantumState:
    """terms: iterable of (probability, PauliString) over the full register."""
    if state.kind != "dm":
        raise SimError("Pauli channels need a density matrix; sample trajectories instead")
    terms = list(terms)
    probs = np.array([p for p, _ in terms], dtype=float)
    if (probs < 0).any() or abs(probs.sum() - 1) > 1e-12:
        raise SimError("channel probabilities must be non-negative and sum to 1")
    for _, ps in terms:
        if ps.width != state.width:
            raise SimError("Pauli width mismatch")
    out = state.copy()
    allq = list(range(state.width))
    out.data = pauli_channel_dm(state.data, [(p, ps.ops) for p, ps in terms], allq)
    return out


def depolarizing_terms(lam: float, nq: int = 1):
    """Pauli-letter terms of the nq-qubit depolarising channel of probability lam."""
    import itertools
    letters = ["".join(t) for t in itertools.product("IXYZ", repeat=nq)]
    rest = lam / (4 ** nq - 1)
    return [(1 - lam if s == "I" * nq else rest, s) for s in letters]


def outcome_probability(state: QuantumState, q: int, basis: str = "Z") -> float:
    """Probability of bit 1 when measuring qubit q."""
    s = state
    if basis == "X":
        s = apply_unitary(state, H, [q])
    elif basis != "Z":
        raise SimError("basis must be X or Z")
    w = s.width
    if s.kind == "sv":
        t = np.moveaxis(s.data, w - 1 - q, 0)
        return float(np.sum(np.abs(t[1]) ** 2))
    return float(np.real(np.trace(diagonal_block(s.data, q, 1).reshape(2 ** (w - 1), -1))))


def measure_qubit(state: QuantumState, q: int, basis: str, rng: np.random.Generator,
                  duration: float = 100.0):
    if not 0 <= q < state.width:
        raise SimError("qubit out of range")
    s = apply_unitary(state, H, [q]) if basis == "X" else state.copy()
    p1 = outcome_probability(s, q, "Z")
    p0 = s.trace() - p1
    if max(p0, p1) < PROB_FLOOR:
        raise CorruptedState("both outcomes have zero probability")
    bit = int(rng.random() < p1)
    p = p1 if bit else p0
    if p < PROB_FLOOR:
        raise CorruptedState("sampled a zero-probability outcome")
    proj = np.diag([1.0 - bit, float(bit)]).astype(complex)
    if s.kind == "sv":
        s.data = apply_matrix_sv(s.data, proj, [q]) / np.sqrt(p)
    else:
        s.data = apply_matrix_dm(s.data, proj, [q]) / p
    if basis == "X":
        s.data = (apply_matrix_sv if s.kind == "sv" else apply_matrix_dm)(s.data, H, [q])
    s.clocks[q] += duration
    return bit, s


def reset_qubit(state: QuantumState, q: int, rng: np.random.Generator,
                duration: float = 1.0) -> QuantumState:
    bit, s = measure_qubit(state, q, "Z", rng, duration=0.0)
    if bit:
        s.data = (apply_matrix_sv if s.kind == "sv" else apply_matrix_dm)(s.data, X, [q])
    s.clocks[q] += duration
    return s


def expectation(state: QuantumState, obs) -> float:
    """Sum_i c_i <sigma_i>, exact for both kinds."""
    if isinstance(obs, PauliString):
        obs = [obs]
    total = 0.0
    for ps in obs:
        if ps.width != state.width:
            raise SimError("observable width mismatch")
        supp = ps.support()
        if state.kind == "sv":
            t = state.data
            for q in supp:
                t = apply_matrix_sv(t, PAULI[ps.ops[q]], [q])
            val = np.vdot(state.data, t)
        else:
            t = state.data
            for q in supp:
                t = apply_left_dm(t, PAULI[ps.ops[q]], [q])
            d = 2 ** state.width
            val = np.trace(t.reshape(d, d))
        total += ps.coefficient * float(np.real(val))
    return total
