import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from netvd.circuit import Event, TimedCircuit, gate
from netvd.engine import ExactEngine, clear_cache
from netvd.estimator import run_exact, run_monte_carlo
from netvd.mc import TrajectoryEstimator, VDRunner
from netvd.noise_model import NoiseModel, depol_event, schedule_noise
from netvd.sim_core import (
    PauliString, QuantumState, SimError, apply_pauli_channel, apply_unitary,
)
from netvd.vd_builder import VDPlan, build

HOT = NoiseModel.reference().with_(p1Q=0.01, p2Q=0.05, pBell=0.05, pDetect=0.02, pMidPrep=0.02)


def _prep(N, seed=0):
    rng = np.random.default_rng(seed)
    tc = TimedCircuit(N)
    for q in range(N):
        tc.add(gate("ry", (q,), rng.uniform(0, np.pi))).add(gate("rz", (q,), rng.uniform(-1, 1)))
    for q in range(N - 1):
        tc.add(gate("rzz", (q, q + 1), rng.uniform(-1, 1)))
    return tc


def _dense(tc):
    """Reference density evolution with the sim_core primitives."""
    s = QuantumState.zeros(tc.width)
    for e in tc.events:
        if e.kind == "gate":
            s = apply_unitary(s, e.matrix(), list(e.qubits))
        elif e.kind == "channel":
            full = []
            for p, letters in e.terms:
                ops = ["I"] * tc.width
                for q, c in zip(e.qubits, letters):
                    ops[q] = c
                full.append((p, PauliString("".join(ops))))
            s = apply_pauli_channel(s, full)
        else:
            raise AssertionError(e.kind)
    return s.matrix()


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 31))
def test_density_matches_dense_oracle(seed):
    rng = np.random.default_rng(seed)
    tc = TimedCircuit(4)
    for _ in range(12):
        if rng.random() < 0.4:
            a, b = rng.choice(4, 2, replace=False)
            tc.add(gate("rzz", (int(a), int(b)), rng.uniform(-2, 2)))
        else:
            tc.add(gate(str(rng.choice(["rx", "ry", "rz"])), (int(rng.integers(4)),), rng.uniform(-2, 2)))
    noisy = schedule_noise(tc, HOT)
    got = ExactEngine().density_matrix(noisy)
    assert np.abs(got - _dense(noisy)).max() < 1e-12


def test_small_park_limit_agrees():
    plan = VDPlan("CR", 3, 2, PauliString("ZI"), _prep(2))
    tc, rule = build(plan)
    tc = schedule_noise(tc, HOT)
    a = ExactEngine().run(tc, rule=rule).real
    b = ExactEngine(park_limit=4).run(tc, rule=rule).real
    clear_cache()
    c = ExactEngine().run(tc, rule=rule).real
    assert a == pytest.approx(b, abs=1e-12) and a == c


def test_run_argument_errors():
    tc, rule = build(VDPlan("CR", 2, 1))
    with pytest.raises(ValueError):
        ExactEngine().run(tc)
    with pytest.raises(ValueError):
        ExactEngine().run(tc, rule=rule, observable=PauliString("ZZZZ"))


def test_density_cap():
    with pytest.raises(SimError):
        ExactEngine(cap=3).density_matrix(TimedCircuit(4))


def test_measurement_dephases():
    tc = TimedCircuit(1)
    tc.add(gate("ry", (0,), np.pi / 2)).add(Event("measure", (0,), duration=100.0, key="m", flip=0.1))
    rho = ExactEngine().density_matrix(tc)
    assert np.allclose(rho, np.diag([0.5, 0.5]))


# -- trajectories --------------------------------------------------------------

@pytest.mark.parametrize("impl", ["CR", "QECR", "BW"])
def test_fast_path_equals_simulation(impl):
    rng = np.random.default_rng(4)
    N, n = 2, 3
    tc, rule = build(VDPlan(impl, n, N, PauliString("XZ"), _prep(N)))
    r = VDRunner(schedule_noise(tc, NoiseModel.zero()), rule)
    for _ in range(5 if impl != "QECR" else 1):
        copies = []
        for _ in range(n):
            v = rng.normal(size=2 ** N) + 1j * rng.normal(size=2 ** N)
            copies.append(v / np.linalg.norm(v))
        flips = np.zeros(len(r.meas), bool)
        if impl != "QECR":
            assert r.ideal_value(copies) == pytest.approx(r.simulate(copies, [], flips, rng), abs=1e-12)
        else:
            # the reset of an entangled register is sampled: unbiased, not deterministic
            vals = np.array([r.simulate(copies, [], flips, rng) for _ in range(2000)])
            se = vals.std() / np.sqrt(len(vals))
            assert abs(vals.mean() - r.ideal_value(copies)) < 5 * se


@pytest.mark.parametrize("impl,n", [("CR", 2), ("CR", 3), ("QECR", 3), ("BW", 3), ("BW", 4)])
def test_monte_carlo_agrees_with_exact(impl, n):
    plan = VDPlan(impl, n, 2, statePrep=_prep(2, 7))
    O = PauliString("ZI")
    ex = run_exact(plan, HOT, O)
    mc, stream = run_monte_carlo(plan, HOT, 1500, seed=1, O=O)
    assert abs(mc.ratio - ex.ratio) < 4 * mc.stdError + 1e-9
    assert abs(mc.denominatorMean - ex.denominatorMean) < 4 * stream.A_I.std() / np.sqrt(1500)


def test_stream_prefix_is_seed_stable():
    plan = VDPlan("CR", 2, 2, statePrep=_prep(2))
    O = PauliString("ZI")
    _, a = run_monte_carlo(plan, HOT, 1000, seed=5, O=O)
    _, b = run_monte_carlo(plan, HOT, 2000, seed=5, O=O)
    _, c = run_monte_carlo(plan, HOT, 1000, seed=6, O=O)
    assert np.array_equal(a.A_O, b.A_O[:1000]) and np.array_equal(a.A_I, b.A_I[:1000])
    assert not np.array_equal(a.A_O, c.A_O)


def test_family_must_share_copies():
    a = build(VDPlan("CR", 2, 1, statePrep=_prep(1, 0)))
    b = build(VDPlan("CR", 3, 1, statePrep=_prep(1, 0)))
    with pytest.raises(SimError):
        TrajectoryEstimator([(schedule_noise(c, HOT), r) for c, r in (a, b)])


def test_single_copy_monte_carlo():
    plan = VDPlan("CR", 1, 2, statePrep=_prep(2, 2))
    O = PauliString("IZ")
    ex = run_exact(plan, HOT, O)
    mc, _ = run_monte_carlo(plan, HOT, 4000, seed=0, O=O)
    assert abs(mc.ratio - ex.ratio) < 4 * mc.stdError
