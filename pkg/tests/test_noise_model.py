import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netvd.circuit import Event, TimedCircuit, gate
from netvd.noise_model import (
    NoiseModel, ScaledModel, idle_error_probability, noisy_bell_pair, schedule_noise,
)
from netvd.sim_core import PauliString, QuantumState, apply_pauli_channel, depolarizing_terms

PHI = np.array([1, 0, 0, 1]) / np.sqrt(2)


def test_reference_values():
    m = NoiseModel.reference()
    assert (m.p1Q, m.p2Q, m.pBell, m.pDetect, m.pMidPrep, m.idleRate) == (1e-4, 1e-3, 1e-2, 1e-3, 1e-3, 1e-5)


def test_idle_probability():
    m = NoiseModel.reference()
    assert idle_error_probability(0, m) == 0
    assert idle_error_probability(1, m) == pytest.approx(1e-5, rel=1e-12)
    assert idle_error_probability(100, m) == pytest.approx(1 - (1 - 1e-5) ** 100, rel=1e-12)
    # frozen from the scalar power; the quoted 9.9995e-4 carries a transposed digit
    assert idle_error_probability(100, m) == pytest.approx(9.99505e-4, rel=1e-5)
    with pytest.raises(ValueError):
        idle_error_probability(-1, m)


@given(st.floats(0, 1e4), st.floats(0, 1e4))
def test_idle_monotone(a, b):
    m = NoiseModel.reference()
    lo, hi = sorted((a, b))
    assert idle_error_probability(lo, m) <= idle_error_probability(hi, m)


def test_validation():
    with pytest.raises(ValueError):
        NoiseModel(p2Q=1.5)
    with pytest.raises(ValueError):
        NoiseModel.from_dict({"pWhat": 0.1})
    with pytest.raises(ValueError):
        ScaledModel(NoiseModel(), 0.0)
    with pytest.raises(ValueError):
        ScaledModel(NoiseModel(), 2.0, ("pDetect",))


def test_scaled_model_clamps_and_keeps_idle():
    m = ScaledModel(NoiseModel(pBell=0.4), 4.0).model()
    assert m.pBell == 1.0 and m.p2Q == pytest.approx(4e-3)
    assert m.idleRate == 1e-5 and m.pDetect == 1e-3 and m.pMidPrep == 1e-3


def test_zero_model_leaves_circuit():
    tc = TimedCircuit(2)
    tc.add(gate("rx", [0], 0.3)).add(gate("rzz", [0, 1], 0.2)).add(gate("rz", [1], 0.1))
    out = schedule_noise(tc, NoiseModel.zero())
    assert out.events == tc.events


def test_single_rx_gets_one_depolarising():
    tc = TimedCircuit(1)
    tc.add(gate("rx", [0], 0.3))
    out = schedule_noise(tc, NoiseModel.reference())
    chans = [e for e in out.events if e.kind == "channel"]
    assert len(chans) == 1 and chans[0].tag == "depol"
    assert dict((s, p) for p, s in chans[0].terms)["X"] == pytest.approx(1e-4 / 3)


def test_virtual_rz_attaches_nothing():
    tc = TimedCircuit(1)
    tc.add(gate("rz", [0], 0.3))
    assert schedule_noise(tc, NoiseModel.reference()).events == tc.events


def test_idle_gap_from_two_qubit_gate():
    tc = TimedCircuit(2)
    tc.add(gate("rx", [0], 0.1)).add(gate("rx", [1], 0.1))
    tc.add(Event("gate", (1,), "rzz_stub", 0.0, 10.0, False))
    tc.add(gate("rzz", [0, 1], 0.1))
    m = NoiseModel.reference().with_(p1Q=0, p2Q=0)
    idle = [e for e in schedule_noise(tc, m).events if e.tag == "idle"]
    assert len(idle) == 1 and idle[0].qubits == (0,)
    assert dict((s, p) for p, s in idle[0].terms)["Z"] == pytest.approx(idle_error_probability(10, m))


def test_measure_and_midprep_noise():
    tc = TimedCircuit(1)
    tc.add(gate("rx", [0], 0.1))
    tc.add(Event("measure", (0,), duration=100.0, key="m"))
    tc.add(Event("reset", (0,), duration=1.0, role="midprep"))
    out = schedule_noise(tc, NoiseModel.reference())
    meas = [e for e in out.events if e.kind == "measure"][0]
    assert meas.flip == pytest.approx(1e-3)
    flips = [e for e in out.events if e.tag == "midprep"]
    assert len(flips) == 1


def test_missing_duration():
    tc = TimedCircuit(1)
    tc.add(Event("gate", (0,), "rx", 0.1, None, True))
    with pytest.raises(ValueError):
        schedule_noise(tc, NoiseModel())


@settings(max_examples=30, deadline=None)
@given(st.lists(st.tuples(st.sampled_from(["rx", "rzz", "rz"]), st.integers(0, 2), st.integers(0, 2)),
                min_size=1, max_size=25))
def test_idle_insertion_is_exhaustive(ops):
    tc = TimedCircuit(3)
    for name, a, b in ops:
        if name == "rzz":
            if a == b:
                continue
            tc.add(gate(name, [a, b], 0.3))
        else:
            tc.add(gate(name, [a], 0.3))
    out = schedule_noise(tc, NoiseModel.reference())
    first, last, busy, idle = {}, {}, {}, {}
    clock = {}
    for e in tc.events:
        s = max(clock.get(q, 0.0) for q in e.qubits)
        for q in e.qubits:
            first.setdefault(q, s)
            clock[q] = s + e.duration
            busy[q] = busy.get(q, 0.0) + e.duration
    for e in out.events:
        if e.tag == "idle":
            idle[e.qubits[0]] = idle.get(e.qubits[0], 0.0) + e.gap
    for q in clock:
        assert idle.get(q, 0.0) == pytest.approx(clock[q] - first[q] - busy[q], abs=1e-9)


@settings(max_examples=20, deadline=None)
@given(st.floats(0.05, 8.0))
def test_scaling_commutes_with_scheduling(c):
    tc = TimedCircuit(2)
    tc.add(gate("rx", [0], 0.1)).add(gate("rzz", [0, 1], 0.2)).add(gate("ry", [1], 0.3))
    base = NoiseModel.reference()
    a = schedule_noise(tc, ScaledModel(base, c))
    b = schedule_noise(tc, base)
    for ea, eb in zip(a.events, b.events):
        assert ea.kind == eb.kind
        if ea.tag == "depol":
            pa = 1 - dict((s, p) for p, s in ea.terms)["I" * len(ea.qubits)]
            pb = 1 - dict((s, p) for p, s in eb.terms)["I" * len(eb.qubits)]
            assert pa == pytest.approx(min(1.0, c * pb))


def test_initial_preparation_is_noiseless():
    tc = TimedCircuit(2)
    tc.add(gate("rz", [0], 0.1))
    out = schedule_noise(tc, NoiseModel.reference())
    assert all(e.kind != "channel" for e in out.events)


def test_noisy_bell_pair():
    ideal = noisy_bell_pair(NoiseModel.zero())
    assert np.allclose(ideal.matrix(), np.outer(PHI, PHI))
    for p in (0.01, 0.1):
        rho = noisy_bell_pair(NoiseModel().with_(pBell=p)).matrix()
        assert PHI @ rho @ PHI == pytest.approx(1 - p)
        ref = apply_pauli_channel(QuantumState.from_matrix(np.outer(PHI, PHI)),
                                  [(q, PauliString("I" + s)) for q, s in depolarizing_terms(p)])
        assert 0.5 * np.abs(np.linalg.eigvalsh(rho - ref.matrix())).sum() < 1e-14


def test_serialisation_roundtrip():
    m = NoiseModel().with_(p2Q=2e-3)
    assert NoiseModel.from_dict(m.to_dict()) == m
