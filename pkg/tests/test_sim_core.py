import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netvd.native_gates import rzz
from netvd.sim_core import (
    CorruptedState, PAULI, PauliString, QuantumState, SimError, apply_pauli_channel, apply_unitary,
    depolarizing_terms, expectation, measure_qubit, reset_qubit, to_density,
)

X = PAULI["X"]


def _plus(n=1):
    v = np.ones(2 ** n) / np.sqrt(2 ** n)
    return QuantumState.from_vector(v)


def _random_dm(rng, w):
    a = rng.normal(size=(2 ** w, 2 ** w)) + 1j * rng.normal(size=(2 ** w, 2 ** w))
    m = a @ a.conj().T
    return m / np.trace(m)


def _channel(lam, letter, w=1):
    return [(1 - lam, PauliString("I" * w)), (lam, PauliString(letter))]


# -- apply_unitary -----------------------------------------------------------

def test_x_flips_zero():
    s = apply_unitary(QuantumState.zeros(1, "sv"), X, [0])
    assert np.allclose(s.vector(), [0, 1])


def test_identity_leaves_state():
    rng = np.random.default_rng(0)
    rho = QuantumState.from_matrix(_random_dm(rng, 2))
    out = apply_unitary(rho, np.eye(4), [0, 1])
    assert np.allclose(out.matrix(), rho.matrix())


def test_rzz_on_plus_plus_matches_dense():
    s = apply_unitary(_plus(2), rzz(np.pi / 2), [0, 1])
    oracle = rzz(np.pi / 2) @ (np.ones(4) / 2)
    assert np.allclose(s.vector(), oracle)
    assert abs(expectation(s, PauliString("ZZ"))) < 1e-12
    # XX commutes with ZZ and stays at 1; the single-site X terms vanish
    dense = lambda P: np.vdot(oracle, P.matrix() @ oracle).real
    for ops in ("XX", "XI", "IX"):
        assert expectation(s, PauliString(ops)) == pytest.approx(dense(PauliString(ops)), abs=1e-12)
    assert abs(expectation(s, PauliString("XI"))) < 1e-12


def test_little_endian():
    s = QuantumState.basis([1, 0, 0])
    assert np.argmax(np.abs(s.vector())) == 1
    s = apply_unitary(QuantumState.zeros(2, "sv"), X, [1])
    assert np.argmax(np.abs(s.vector())) == 2


@pytest.mark.parametrize("mat,targets", [
    (np.eye(4), [0]),
    (np.eye(2), [0, 0]),
    (np.diag([1.0, 2.0]), [0]),
])
def test_apply_unitary_errors(mat, targets):
    with pytest.raises(SimError):
        apply_unitary(QuantumState.zeros(2, "sv"), mat, targets)


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.sampled_from([[0], [1], [0, 1], [1, 0]]))
def test_unitary_preserves_trace_and_purity(seed, targets):
    rng = np.random.default_rng(seed)
    rho = QuantumState.from_matrix(_random_dm(rng, 2))
    q, _ = np.linalg.qr(rng.normal(size=(2 ** len(targets),) * 2) + 1j * rng.normal(size=(2 ** len(targets),) * 2))
    out = apply_unitary(rho, q, targets)
    assert abs(out.trace() - 1) < 1e-10
    p0 = np.trace(rho.matrix() @ rho.matrix()).real
    p1 = np.trace(out.matrix() @ out.matrix()).real
    assert abs(p0 - p1) < 1e-10


# -- channels ------------------------------------------------------------------

def test_zero_depolarising_is_identity():
    rng = np.random.default_rng(1)
    rho = QuantumState.from_matrix(_random_dm(rng, 1))
    terms = [(p, PauliString(s)) for p, s in depolarizing_terms(0.0)]
    assert np.allclose(apply_pauli_channel(rho, terms).matrix(), rho.matrix())


def test_depolarising_on_zero():
    lam = 0.3
    rho = QuantumState.zeros(1)
    out = apply_pauli_channel(rho, [(p, PauliString(s)) for p, s in depolarizing_terms(lam)])
    assert np.allclose(out.matrix(), np.diag([1 - 2 * lam / 3, 2 * lam / 3]))


def test_dephasing_scales_coherence():
    lam = 0.2
    out = apply_pauli_channel(to_density(_plus()), _channel(lam, "Z"))
    assert np.isclose(out.matrix()[0, 1], 0.5 * (1 - 2 * lam))
    assert np.isclose(out.matrix()[0, 0], 0.5)


def test_channel_rejects_statevector_and_bad_probs():
    with pytest.raises(SimError):
        apply_pauli_channel(_plus(), _channel(0.1, "Z"))
    with pytest.raises(SimError):
        apply_pauli_channel(QuantumState.zeros(1), [(0.5, PauliString("I")), (0.4, PauliString("Z"))])


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2 ** 31), st.floats(0, 1))
def test_channel_preserves_trace(seed, lam):
    rng = np.random.default_rng(seed)
    rho = QuantumState.from_matrix(_random_dm(rng, 2))
    terms = [(p, PauliString(s)) for p, s in depolarizing_terms(lam, 2)]
    assert abs(apply_pauli_channel(rho, terms).trace() - 1) < 1e-10


def test_trajectories_reproduce_channel():
    rng = np.random.default_rng(7)
    rho = QuantumState.from_matrix(_random_dm(rng, 2))
    terms = depolarizing_terms(0.3, 2)
    exact = apply_pauli_channel(rho, [(p, PauliString(s)) for p, s in terms]).matrix()
    M = 100_000
    probs = np.array([p for p, _ in terms])
    picks = rng.choice(len(terms), size=M, p=probs)
    counts = np.bincount(picks, minlength=len(terms))
    acc = 0
    conj = []
    for (_, s), c in zip(terms, counts):
        P = PauliString(s).matrix()
        C = P @ rho.matrix() @ P.conj().T
        conj.append(C)
        acc = acc + c * C
    est = acc / M
    # per-entry standard error of the sampled mixture
    C = np.array(conj)
    var = (probs[:, None, None] * np.abs(C - exact) ** 2).sum(0) / M
    assert np.all(np.abs(est - exact) <= 5 * np.sqrt(var) + 1e-12)


# -- measurement ----------------------------------------------------------------

def test_measure_one_and_plus():
    rng = np.random.default_rng(0)
    bit, s = measure_qubit(QuantumState.basis([1]), 0, "Z", rng)
    assert bit == 1 and s.clocks[0] == 100
    for _ in range(20):
        assert measure_qubit(_plus(), 0, "X", rng)[0] == 0


def test_measure_plus_statistics():
    rng = np.random.default_rng(11)
    ones = sum(measure_qubit(_plus(), 0, "Z", rng)[0] for _ in range(10_000))
    assert 0.485 <= ones / 10_000 <= 0.515


def test_measure_collapses_density():
    rng = np.random.default_rng(2)
    bell = QuantumState.from_vector(np.array([1, 0, 0, 1]) / np.sqrt(2))
    bit, s = measure_qubit(to_density(bell), 0, "Z", rng)
    assert np.isclose(s.matrix()[3 * bit, 3 * bit], 1)


def test_corrupted_state():
    s = QuantumState("sv", 1, np.zeros(2, complex))
    with pytest.raises(CorruptedState):
        measure_qubit(s, 0, "Z", np.random.default_rng(0))


# -- expectation ---------------------------------------------------------------

def test_expectations():
    assert expectation(QuantumState.zeros(1, "sv"), PauliString("Z")) == pytest.approx(1.0)
    rng = np.random.default_rng(3)
    rho = QuantumState.from_matrix(_random_dm(rng, 3))
    assert expectation(rho, PauliString("III")) == pytest.approx(1.0)
    bell = QuantumState.from_vector(np.array([1, 0, 0, 1]) / np.sqrt(2))
    assert expectation(bell, PauliString("ZZ")) == pytest.approx(1.0)
    assert expectation(to_density(bell), [PauliString("XX", 0.5), PauliString("ZZ", 0.5)]) == pytest.approx(1.0)


def test_expectation_width_mismatch():
    with pytest.raises(SimError):
        expectation(QuantumState.zeros(2), PauliString("Z"))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2 ** 31), st.text("IXYZ", min_size=2, max_size=2))
def test_expectation_kinds_agree(seed, ops):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=4) + 1j * rng.normal(size=4)
    sv = QuantumState.from_vector(v / np.linalg.norm(v))
    P = PauliString(ops)
    dense = np.vdot(sv.vector(), P.matrix() @ sv.vector()).real
    assert expectation(sv, P) == pytest.approx(dense, abs=1e-12)
    assert expectation(to_density(sv), P) == pytest.approx(dense, abs=1e-12)


# -- reset ---------------------------------------------------------------------

def test_reset():
    rng = np.random.default_rng(0)
    s = reset_qubit(QuantumState.basis([1]), 0, rng)
    assert np.allclose(s.vector(), [1, 0])
    s = reset_qubit(QuantumState.zeros(1, "sv"), 0, rng)
    assert np.allclose(s.vector(), [1, 0])


def test_reset_half_bell_pair():
    rng = np.random.default_rng(5)
    bell = to_density(QuantumState.from_vector(np.array([1, 0, 0, 1]) / np.sqrt(2)))
    # average the sampled reset over both branches: the remaining qubit is I/2
    acc = 0
    for _ in range(400):
        acc = acc + reset_qubit(bell, 1, rng).matrix()
    rho = acc / 400
    red = rho.reshape(2, 2, 2, 2)[0, :, 0, :]
    assert np.allclose(red, np.eye(2) / 2, atol=0.08)
    assert np.allclose(rho.reshape(2, 2, 2, 2)[1, :, 1, :], 0)


def test_pauli_string_validation():
    with pytest.raises(SimError):
        PauliString("IQ")
    with pytest.raises(SimError):
        PauliString("I", float("inf"))
    assert PauliString.single(3, 1, "X").ops == "IXI"


def test_density_cap():
    with pytest.raises(SimError):
        QuantumState.zeros(15)
