"""Acceptance gate: one PASS/FAIL line per criterion in the terminal summary.

Tolerances are pinned here. Exact criteria use integer or Fraction equality;
cost comparisons outside the exact configuration allow only the documented
whole-symbol slack; statistical checks use a family-wise p threshold of 0.01.
"""

import itertools
import time
from fractions import Fraction
from pathlib import Path

import numpy as np

from conftest import ACCEPTANCE_RESULTS
from pruw.audit import (AuditConfig, exhaustive_storage_security, exhaustive_submodel_privacy,
                        exhaustive_update_privacy, run_all)
from pruw.client import ClientSession, SparseUpdate, combine_update, decode_answers
from pruw.config import load_config, parse_config
from pruw.coordinator import Permutation, mask_factor, reversing_matrix, setup
from pruw.field import PrimeField
from pruw.orchestrator import RoundPlan, Simulation, run_config
from pruw.params import Sabotage, SystemParams, baseline_cost, theoretical_read_cost
from pruw.rng import stream

CONFIGS = Path(__file__).resolve().parents[1] / "configs"

GRID_TIME_LIMIT_S = 60.0
SIGNIFICANCE = 0.01
LAGRANGE_TRIALS = 1000
DECODER_TRIALS = 10_000
AUDIT_TRIALS = 10_000


def _record(n: int, ok: bool, detail: str) -> None:
    line = f"{'PASS' if ok else 'FAIL'} criterion {n}: {detail}"
    ACCEPTANCE_RESULTS.append(line)
    print(line)


def grid_configs():
    """ℓ∈{1,2,3}, M∈{2,3}, P∈{5,8}, r∈{0.2,0.4}; P·r is rounded to whole subpackets."""
    for ell, M, P, r in itertools.product((1, 2, 3), (2, 3), (5, 8), ("1/5", "2/5")):
        writes = round(P * Fraction(r))
        yield dict(schema_version=1, N=4 * ell + 2, M=M, P=P, q=2053, r=f"{writes}/{P}",
                   seed=1000 * ell + 100 * M + 10 * P + writes, rounds=3, writers_per_round=3)


def test_criterion_1_end_to_end_grid():
    start = time.perf_counter()
    failures, runs = [], 0
    for raw in grid_configs():
        res = run_config(parse_config(raw))
        runs += 1
        for t, v in enumerate(res.verifications, start=1):
            if not v.ok:
                failures.append((raw["N"], raw["M"], raw["P"], raw["r"], t, v.first_mismatch))
        assert len(res.verifications) == 3
        assert len(res.simulation.sessions) == 3
    elapsed = time.perf_counter() - start
    ok = not failures and elapsed < GRID_TIME_LIMIT_S
    _record(1, ok, f"{runs} grid configs x 3 rounds decode to the oracle exactly; "
                   f"{elapsed:.1f}s (limit {GRID_TIME_LIMIT_S:.0f}s); mismatches={failures[:3]}")
    assert not failures
    assert elapsed < GRID_TIME_LIMIT_S


def _single_writer_sim(p, seed):
    sim = Simulation(p, PrimeField(p.q).random(stream(seed, "w0"), (p.M, p.P, p.ell)))
    writer = sim.add_client(1)
    return sim, writer


def test_criterion_2_costs():
    problems = []
    # exact: q = P = 11, so log_q P = 1 and positions are one whole symbol
    p = SystemParams.build(N=6, M=2, P=11, q=11, r="2/11", seed=21)
    sim, writer = _single_writer_sim(p, 21)
    fld = PrimeField(p.q)
    rng = stream(21, "updates")
    reader = sim.add_client(2)
    exact_rounds = 0
    for t in range(1, 4):
        B = sorted(int(x) + 1 for x in rng.choice(p.P, 2, replace=False))
        upd = SparseUpdate.from_dict(p.P, p.ell, {b: fld.random_nonzero(rng, 1) for b in B})
        rep = sim.run_round(RoundPlan(t, [(writer, upd)], [reader]))
        c_r, c_w, _ = rep.measured
        expected_w = Fraction(4) * p.r * 2 / (1 - Fraction(2, 6))
        expected_r = theoretical_read_cost(p, rep.r_prime)
        if c_w != expected_w or c_r != expected_r:
            problems.append(("exact", t, c_r, expected_r, c_w, expected_w))
        if t > 1 and rep.r_prime == p.r:
            exact_rounds += 1
    if exact_rounds != 2:
        problems.append(("r=r' rounds", exact_rounds))

    # general configurations: measured minus closed form within [0, slack]
    for raw in itertools.islice(grid_configs(), 0, None, 5):
        for rep in run_config(parse_config(raw)).reports:
            if not rep.within_bounds():
                problems.append(("slack", raw["N"], raw["P"], rep.t, rep.measured, rep.theoretical, rep.slack))

    # r = r' = 1: both phases cost more than the non-sparsified baseline
    p1 = SystemParams.build(N=6, M=2, P=5, q=2053, r=1, seed=22)
    sim, writer = _single_writer_sim(p1, 22)
    full = SparseUpdate.from_dict(5, 1, {s: [s] for s in range(1, 6)})
    sim.run_round(RoundPlan(1, [(writer, full)], []))
    rep = sim.run_round(RoundPlan(2, [(writer, full)], []))
    base = baseline_cost(p1.N)
    if not (rep.r_prime == 1 and rep.measured[0] > base and rep.measured[1] > base):
        problems.append(("baseline", rep.measured, base))
    _record(2, not problems, "q=P=11 measured C_R, C_W equal the closed forms exactly (tolerance 0); "
                             f"general configs within whole-symbol slack; r=r'=1 exceeds baseline {base}; "
                             f"problems={problems[:2]}")
    assert not problems


def test_criterion_3_golden_vectors():
    p = SystemParams.build(N=6, M=2, P=5, q=2053, r="2/5", seed=33)
    fld = PrimeField(p.q)
    perm = Permutation((2, 5, 1, 3, 4))
    res = setup(p, permutation=perm)
    session = ClientSession(1, p, 1, perm, stream(33, "golden"))
    checks = {"V": session.true_positions_from_v_tilde((2, 3)) == (5, 1)}
    update = SparseUpdate.from_dict(5, 1, {1: [111], 4: [444]})
    pairs = session.emit_write_pairs(update)
    checks["positions"] = all([pr.position for pr in pairs[n]] == [3, 5] for n in pairs)
    R = reversing_matrix(perm)
    db1 = res.databases[0]
    c1 = int(mask_factor(fld, p.f, db1.alpha))
    Zbar = fld.mul(fld.sub(db1.reversing_matrix, R), pow(c1, -1, p.q))
    t_ok = True
    implied_noise = set()
    for db in res.databases:
        u = db.collect_write(pairs[db.n], 1)
        u1, u4 = pairs[db.n][0].symbol, pairs[db.n][1].symbol
        T = fld.matmul(db.reversing_matrix, u)
        clean = fld.sub(T, fld.mul(int(mask_factor(fld, p.f, db.alpha)), fld.matmul(Zbar, u)))
        t_ok &= np.array_equal(clean, [u1, 0, 0, u4, 0])
        t_ok &= np.array_equal(u, [0, 0, u1, 0, u4])
        # at ℓ=1, U(s) = Δ_s + (f_1 - α_n) ẑ_s, so every database must imply the same ẑ
        inv = pow(p.f[0] - db.alpha, -1, p.q)
        implied_noise.add(((u1 - 111) * inv % p.q, (u4 - 444) * inv % p.q))
    t_ok &= len(implied_noise) == 1
    checks["T_n"] = t_ok
    ok = all(checks.values())
    _record(3, ok, f"walkthrough vectors exact: {checks}")
    assert ok


def test_criterion_4_lagrange():
    fld = PrimeField(2053)
    rng = stream(44, "lagrange")
    bad = 0
    for _ in range(LAGRANGE_TRIALS):
        f = tuple(int(x) for x in rng.choice(2053, 2, replace=False))
        deltas = fld.random(rng, 2)
        z = int(fld.random(rng))
        for i, fi in enumerate(f):
            if int(combine_update(fld, deltas, f, fi, z)) != int(deltas[i]):
                bad += 1
    _record(4, bad == 0, f"ℓ=2, q=2053: U(α=f_i) = Δ_i in {LAGRANGE_TRIALS} random trials; failures={bad}")
    assert bad == 0


def test_criterion_5_privacy():
    results = {}
    tiny = AuditConfig(q=5, M=2, P=2, ell=1, r="1/2", seed=3)
    results["exhaustive theta views"] = exhaustive_submodel_privacy(tiny, Sabotage.NONE)
    results["exhaustive W storage"] = exhaustive_storage_security(tiny, Sabotage.NONE)
    results["exhaustive posterior"] = exhaustive_update_privacy(tiny, Sabotage.NONE)
    results["exhaustive zero-noise fails"] = not (exhaustive_submodel_privacy(tiny, Sabotage.ZERO_NOISE)
                                                  or exhaustive_storage_security(tiny, Sabotage.ZERO_NOISE)
                                                  or exhaustive_update_privacy(tiny, Sabotage.ZERO_NOISE))
    results["exhaustive identity-permutation fails"] = not exhaustive_update_privacy(
        tiny, Sabotage.IDENTITY_PERMUTATION)

    cfg = load_config(CONFIGS / "audit_q11.yaml")
    stat = AuditConfig(q=cfg.q, M=cfg.M, P=cfg.P, ell=cfg.derived_ell, r=cfg.r,
                       trials=AUDIT_TRIALS, seed=cfg.seed)
    report = run_all(stat, "statistical")
    pos = [c for c in report.checks if not c.negative_control]
    neg = [c for c in report.checks if c.negative_control]
    results["q=11 marginals p>0.01"] = all(c.passed and c.threshold == SIGNIFICANCE for c in pos)
    results["q=11 negatives fail"] = bool(neg) and not any(c.passed for c in neg)
    names = {c.name for c in pos}
    results["covers query/position/storage"] = {"query-view", "pair-position", "stored-symbols"} <= names
    ok = all(results.values())
    pvals = {c.name: round(c.statistic, 4) for c in pos}
    _record(5, ok, f"{results}; p-values {pvals}")
    assert ok


def test_criterion_6_decoder():
    summary = {}
    for ell in (1, 2, 3):
        p = SystemParams.build(N=4 * ell + 2, M=1, P=1, q=2053, r=0, seed=60 + ell)
        q = p.q
        rng = stream(66, "decoder", ell)
        w = rng.integers(0, q, (ell, DECODER_TRIALS), dtype=np.int64)
        c = rng.integers(0, q, (3 * ell + 2, DECODER_TRIALS), dtype=np.int64)
        answers = np.zeros((p.N, DECODER_TRIALS), dtype=np.int64)
        for n, a in enumerate(p.alpha):
            acc = np.zeros(DECODER_TRIALS, dtype=np.int64)
            for i, fi in enumerate(p.f):
                acc = (acc + w[i] * pow(fi - a, -1, q)) % q
            power = 1
            for j in range(3 * ell + 2):
                acc = (acc + c[j] * power) % q
                power = power * a % q
            answers[n] = acc
        decoded = decode_answers(PrimeField(q), p.f, p.alpha, answers)
        summary[ell] = int(np.count_nonzero(np.any(decoded != w, axis=0)))
    ok = all(v == 0 for v in summary.values())
    _record(6, ok, f"{DECODER_TRIALS} synthesized answer systems per ℓ decode exactly; failures by ℓ={summary}")
    assert ok


def test_criterion_7_determinism(tmp_path):
    from pruw.cli import main
    outputs = []
    for name in ("a", "b"):
        out = tmp_path / name
        assert main(["run", "--config", str(CONFIGS / "demo.yaml"), "--out", str(out)]) == 0
        outputs.append((out / "transcript.jsonl").read_bytes())
    cfg = load_config(CONFIGS / "golden.yaml")
    again = [run_config(cfg).simulation.transcript.to_jsonl().encode() for _ in range(2)]
    ok = outputs[0] == outputs[1] and again[0] == again[1] and len(outputs[0]) > 0
    _record(7, ok, f"identical seed/config give byte-identical transcripts ({len(outputs[0])} bytes)")
    assert ok
