"""VD estimates: dense oracle, exact engine, Pauli-trajectory Monte Carlo, batch errors, sweeps."""
from __future__ import annotations

import csv
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .engine import ExactEngine, clear_cache
from .heisenberg import PRESETS, HeisenbergParams, build_trotter_circuit, trotter_steps_for_budget
from .mc import CopySampler, TrajectoryEstimator
from .noise_model import NoiseModel, ScaledModel, as_model, schedule_noise
from .sim_core import PauliString, SimError
from .vd_builder import VDPlan, build

N_BATCHES = 100
DEGENERACY_TOL = 1e-12
REPORT_COLUMNS = ("impl", "n", "N", "c", "mode", "M", "ratio", "stderr", "deltaE", "reference", "seed",
                  "error")


class DegenerateWarning(UserWarning):
    """Top eigenvalue of the copy state is degenerate; the reference is ambiguous."""


@dataclass
class EstimateReport:
    numeratorMean: float
    denominatorMean: float
    ratio: float
    stdError: float = 0.0
    M: int = 0
    deltaE: float = float("nan")
    reference: float = float("nan")
    warnings: list = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    def row(self) -> dict:
        m = self.meta
        return dict(impl=m.get("impl", ""), n=m.get("n", ""), N=m.get("N", ""), c=m.get("c", ""),
                    mode=m.get("mode", ""), M=self.M, ratio=self.ratio, stderr=self.stdError,
                    deltaE=self.deltaE, reference=self.reference, seed=m.get("seed", ""), error="")


@dataclass
class SampleStream:
    A_O: np.ndarray
    A_I: np.ndarray
    seed: int = 0

    def __post_init__(self):
        self.A_O = np.asarray(self.A_O, float)
        self.A_I = np.asarray(self.A_I, float)
        if self.A_O.shape != self.A_I.shape or self.A_O.ndim != 1:
            raise ValueError("A_O and A_I must be 1-d arrays of equal length")

    @property
    def M(self) -> int:
        return len(self.A_O)

    def to_csv(self, path):
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["# seed", self.seed])
            w.writerow(["A_O", "A_I"])
            for a, b in zip(self.A_O, self.A_I):
                w.writerow([repr(float(a)), repr(float(b))])

    @classmethod
    def from_csv(cls, path) -> "SampleStream":
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        seed = int(rows[0][1])
        data = np.array(rows[2:], float).reshape(-1, 2)
        return cls(data[:, 0], data[:, 1], seed)

    def save(self, path):
        np.savez(path, A_O=self.A_O, A_I=self.A_I, seed=self.seed)

    @classmethod
    def load(cls, path) -> "SampleStream":
        d = np.load(path)
        return cls(d["A_O"], d["A_I"], int(d["seed"]))


# -- observables ------------------------------------------------------------

def as_terms(O) -> list:
    if isinstance(O, PauliString):
        return [O]
    terms = list(O)
    if not terms:
        raise ValueError("empty observable")
    return terms


def observable_matrix(O) -> np.ndarray:
    return sum(t.matrix() for t in as_terms(O))


def _check_width(rho, O):
    terms = as_terms(O)
    W = int(round(math.log2(rho.shape[0])))
    if any(t.width != W for t in terms):
        raise ValueError("observable width does not match the state")
    return terms


# -- dense references ---------------------------------------------------------

def ideal_vd_oracle(rho, O, n: int) -> float:
    """sum_i c_i Tr[sigma_i rho^n] / Tr[rho^n] by repeated multiplication."""
    if n < 1:
        raise ValueError("n must be >= 1")
    rho = np.asarray(rho)
    terms = _check_width(rho, O)
    # the ratio is scale-free: powering rho / lambda_max keeps high n representable
    top = np.linalg.eigvalsh((rho + rho.conj().T) / 2)[-1]
    if top <= 0:
        raise SimError("rho has no positive eigenvalue")
    rn = np.linalg.matrix_power(rho / top, n)
    den = np.trace(rn).real
    if den < 1e-14:
        raise SimError(f"Tr[(rho/lambda_max)^n] = {den:.3g} too small")
    return float(sum(np.trace(t.matrix() @ rn).real for t in terms) / den)


def _dominant(rho, O):
    rho = np.asarray(rho)
    terms = _check_width(rho, O)
    w, v = np.linalg.eigh((rho + rho.conj().T) / 2)
    top = w[-1]
    # eigh sorts ascending; among tied top eigenvalues take the lowest index
    ties = np.nonzero(np.abs(w - top) <= DEGENERACY_TOL)[0]
    psi = v[:, ties[0]]
    msg = None
    if len(ties) > 1:
        msg = f"top eigenvalue {top:.6g} is {len(ties)}-fold degenerate"
    val = sum(np.vdot(psi, t.matrix() @ psi).real for t in terms)
    return float(val), msg


def dominant_reference(rho, O) -> float:
    """<psi|O|psi> for the top eigenvector psi of rho."""
    val, msg = _dominant(rho, O)
    if msg:
        warnings.warn(msg, DegenerateWarning, stacklevel=2)
    return val


def copy_density(statePrep, noise) -> np.ndarray:
    """Density matrix of one noisy copy (the scheduled state-preparation circuit)."""
    circ = schedule_noise(statePrep, noise)
    return ExactEngine().density_matrix(circ)


# -- circuit families ---------------------------------------------------------

def _family(plan: VDPlan, noise, O, vd_noise=True):
    """(coefficient, circuit, rule) per non-identity term, plus the denominator circuit."""
    model = as_model(noise)
    prep = plan.statePrep
    vd_model = model
    if not vd_noise:
        if prep is not None:
            prep = schedule_noise(prep, model)
        vd_model = NoiseModel.zero()
    base = replace(plan, statePrep=prep, sigma=None)
    ident = 0.0
    fam = []
    for t in as_terms(O):
        if t.width != plan.N:
            raise ValueError("observable width must equal N")
        if not t.support():
            ident += t.coefficient
            continue
        c, r = build(base.with_sigma(PauliString(t.ops)))
        fam.append((t.coefficient, schedule_noise(c, vd_model), r))
    c, r = build(base)
    return fam, ident, (schedule_noise(c, vd_model), r)


def _reference(plan, noise, O, reference):
    if reference is not None:
        return float(reference), []
    val, msg = _dominant(_copy_or_zero(plan, noise), O)
    return val, [msg] if msg else []


def _report(num, den, plan, O, noise, reference, mode, vd_noise, **kw):
    if den <= 0:
        raise SimError(f"non-positive denominator {den:.3g}")
    ref, warns = _reference(plan, noise, O, reference)
    ratio = num / den
    meta = dict(impl=plan.impl, n=plan.n, N=plan.N, mode=mode, network=plan.network)
    meta.update(kw.pop("meta", {}))
    return EstimateReport(num, den, ratio, deltaE=abs(ratio - ref), reference=ref,
                          warnings=warns, meta=meta, **kw)


def run_exact(plan: VDPlan, noise, O=None, reference=None, vd_noise=True,
              park_limit: int = 10, cap: int = 14) -> EstimateReport:
    """Shot-noise-free ratio. ``vd_noise=False`` confines noise to the copies.

    ``reference`` defaults to the dominant-eigenvector value of one noisy copy.
    """
    O = plan.sigma if O is None else O
    if O is None:
        raise ValueError("no observable given")
    if plan.n == 1:
        rho = _copy_or_zero(plan, noise)
        num = float(sum(np.trace(t.matrix() @ rho).real for t in as_terms(O)))
        return _report(num, 1.0, plan, O, noise, reference, "exact", vd_noise)
    fam, ident, (dc, dr) = _family(plan, noise, O, vd_noise)
    eng = ExactEngine(park_limit, cap)
    try:
        den = eng.run(dc, rule=dr).real
        num = ident * den + sum(coef * eng.run(c, rule=r).real for coef, c, r in fam)
    except SimError as exc:
        if "cap" in str(exc):
            raise SimError(f"{exc}; use run_monte_carlo for this size") from exc
        raise
    return _report(num, den, plan, O, noise, reference, "exact", vd_noise)


def _copy_or_zero(plan, noise):
    if plan.statePrep is None:
        rho = np.zeros((2 ** plan.N,) * 2, complex)
        rho[0, 0] = 1
        return rho
    return copy_density(plan.statePrep, noise)


def _chunk_seeds(seed, M, chunk):
    return [(i, min(chunk, M - i)) for i in range(0, M, chunk)]


def run_monte_carlo(plan: VDPlan, noise, M: int, seed: int = 0, O=None, reference=None,
                    vd_noise=True, chunk: int = 1000):
    """Pauli-trajectory estimate; returns (EstimateReport, SampleStream).

    Chunk j of ``chunk`` trajectories uses the generator seeded by (seed, j), so
    the stream does not depend on how chunks are scheduled.
    """
    if M <= 0 or M % N_BATCHES:
        raise ValueError(f"M={M} must be a positive multiple of {N_BATCHES}")
    O = plan.sigma if O is None else O
    if O is None:
        raise ValueError("no observable given")
    terms = as_terms(O)
    A_O = np.empty(M)
    A_I = np.ones(M)
    if plan.n == 1:
        _single_copy(plan, noise, terms, seed, M, chunk, A_O)
    else:
        fam, ident, den = _family(plan, noise, terms, vd_noise)
        est = TrajectoryEstimator([(c, r) for _, c, r in fam] + [den])
        coef = np.array([f[0] for f in fam])
        for j, (start, B) in enumerate(_chunk_seeds(seed, M, chunk)):
            rng = np.random.default_rng([seed, j])
            S = est.sample(B, rng, chunk=B)
            A_I[start:start + B] = S[:, -1]
            A_O[start:start + B] = S[:, :-1] @ coef + ident * S[:, -1]
    stream = SampleStream(A_O, A_I, seed)
    num, den = math.fsum(A_O) / M, math.fsum(A_I) / M
    rep = _report(num, den, plan, terms, noise, reference, "mc", vd_noise,
                  stdError=batch_standard_error(stream), M=M, meta=dict(seed=seed))
    return rep, stream


def _single_copy(plan, noise, terms, seed, M, chunk, out):
    mats = sum(t.matrix() for t in terms)
    if plan.statePrep is None:
        out[:] = mats[0, 0].real
        return
    circ = schedule_noise(plan.statePrep, noise)
    evs = [e for e in circ.events]
    if any(e.kind not in ("gate", "channel") for e in evs):
        raise SimError("state preparation may hold gates and channels only")
    smp = CopySampler(evs, plan.N)
    for j, (start, B) in enumerate(_chunk_seeds(seed, M, chunk)):
        rng = np.random.default_rng([seed, j])
        for b, (v, _) in enumerate(smp.draw(rng, B)):
            out[start + b] = np.vdot(v, mats @ v).real


# -- batch statistics ---------------------------------------------------------

def batch_ratios(stream: SampleStream, batches: int = N_BATCHES) -> np.ndarray:
    if stream.M == 0 or stream.M % batches:
        raise ValueError(f"M={stream.M} is not a positive multiple of {batches}")
    o = stream.A_O.reshape(batches, -1).mean(axis=1)
    i = stream.A_I.reshape(batches, -1).mean(axis=1)
    zero = np.nonzero(i == 0)[0]
    if len(zero):
        raise ZeroDivisionError(f"batch {int(zero[0])} has zero denominator mean")
    return o / i


def batch_standard_error(stream: SampleStream) -> float:
    """Population sd (divisor 100) of the 100 batch ratios."""
    return float(np.std(batch_ratios(stream), ddof=0))


def scaling_fit(points):
    """Least-squares (slope, intercept) of log10 stdError against log10 M.

    ``points`` holds SampleStreams or (M, stdError) pairs.
    """
    pts = [(p.M, batch_standard_error(p)) if isinstance(p, SampleStream) else tuple(p) for p in points]
    if len(pts) < 4:
        raise ValueError("scaling_fit needs at least 4 values of M")
    Ms = np.array([p[0] for p in pts], float)
    se = np.array([p[1] for p in pts], float)
    if Ms.max() / Ms.min() < 10:
        raise ValueError("values of M must span at least one decade")
    if np.any(se <= 0):
        raise ValueError("standard errors must be positive")
    slope, intercept = np.polyfit(np.log10(Ms), np.log10(se), 1)
    return float(slope), float(intercept)


def resample(stream: SampleStream, M: int, rng) -> SampleStream:
    """M trajectories drawn with replacement from ``stream``."""
    idx = rng.integers(0, stream.M, M)
    return SampleStream(stream.A_O[idx], stream.A_I[idx], stream.seed)


# -- sweeps -------------------------------------------------------------------

@dataclass
class Cell:
    """One sweep cell: Heisenberg copies, scaled noise, VD layout and engine."""
    impl: str = "CR"
    n: int = 2
    N: int = 4
    c: float = 1.0
    mode: str = "exact"
    M: int = 0
    seed: int = 0
    network: str = "folded"
    preset: str | None = None
    h: tuple | None = None
    K: int | None = None
    observable: str | None = None
    noise: dict = field(default_factory=dict)
    subset: tuple = ("p1Q", "p2Q", "pBell")
    vd_noise: bool = True
    reference: float | None = None

    def params(self) -> HeisenbergParams:
        h = self.h
        if h is None:
            h = PRESETS[self.preset] if self.preset else PRESETS.get(f"h{self.N}", (0.0,) * self.N)
        h = tuple(float(x) for x in h)
        if len(h) != self.N:
            raise ValueError(f"field vector has {len(h)} entries, N={self.N}")
        K = self.K
        if K is None:
            # the budget follows the unscaled p2Q; a noiseless base falls back to the reference
            p2 = self.base().p2Q or NoiseModel.reference().p2Q
            K = trotter_steps_for_budget(self.N, p2) if self.N > 1 else 0
        return HeisenbergParams(self.N, h, K, initSite=min(3, self.N))

    def base(self) -> NoiseModel:
        return NoiseModel.from_dict(dict(self.noise))

    def model(self):
        return ScaledModel(self.base(), self.c, tuple(self.subset))

    def obs(self) -> PauliString:
        if self.observable:
            return PauliString(self.observable)
        return PauliString.single(self.N, min(3, self.N) - 1, "Z")

    def plan(self) -> VDPlan:
        prep = build_trotter_circuit(self.params())
        return VDPlan(self.impl, self.n, self.N, None, prep, network=self.network)


def run_cell(cell: Cell) -> EstimateReport:
    plan, model, O = cell.plan(), cell.model(), cell.obs()
    if cell.mode == "exact":
        rep = run_exact(plan, model, O, cell.reference, cell.vd_noise)
    elif cell.mode == "mc":
        rep, _ = run_monte_carlo(plan, model, cell.M, cell.seed, O, cell.reference, cell.vd_noise)
    elif cell.mode == "oracle":
        rho = copy_density(plan.statePrep, model)
        ratio = ideal_vd_oracle(rho, O, cell.n)
        ref, msg = (cell.reference, None) if cell.reference is not None else _dominant(rho, O)
        rep = EstimateReport(ratio, 1.0, ratio, deltaE=abs(ratio - ref), reference=ref,
                             warnings=[msg] if msg else [])
    else:
        raise ValueError(f"unknown mode {cell.mode}")
    rep.meta.update(impl=cell.impl, n=cell.n, N=cell.N, c=cell.c, mode=cell.mode, seed=cell.seed)
    if cell.mode != "mc":
        rep.M = 0
    return rep


def _safe_row(cell: Cell) -> dict:
    try:
        row = run_cell(cell).row()
    except Exception as exc:      # recorded per cell; the sweep goes on
        row = dict.fromkeys(REPORT_COLUMNS, "")
        row.update(impl=cell.impl, n=cell.n, N=cell.N, c=cell.c, mode=cell.mode, M=cell.M,
                   seed=cell.seed, error=f"{type(exc).__name__}: {exc}")
    finally:
        clear_cache()
    return row


def sweep(cells, jobs: int = 1) -> list:
    """One row per cell, in input order; failures land in the ``error`` column."""
    cells = list(cells)
    if jobs > 1 and len(cells) > 1:
        with ProcessPoolExecutor(jobs) as ex:
            return list(ex.map(_safe_row, cells))
    return [_safe_row(c) for c in cells]


def write_rows(rows, fh):
    w = csv.DictWriter(fh, fieldnames=REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _fmt(r.get(k, "")) for k in REPORT_COLUMNS})


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v
