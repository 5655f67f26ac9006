"""Multi-user, multi-round simulation with transcripts and cost metering."""

from __future__ import annotations

import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import numpy as np

from .client import ClientSession, SparseUpdate, decode_answers, query_vector
from .coordinator import Permutation, setup, storage_column
from .field import PrimeField
from .params import (Sabotage, SystemParams, read_slack, theoretical_read_cost,
                     theoretical_write_cost, validate, write_slack)
from .rng import stream

log = logging.getLogger(__name__)

DESIGNATED = 1
READ_DOWNLOAD_KINDS = ("v_tilde", "answer", "answer_tag")
WRITE_UPLOAD_KINDS = ("write_pair",)


class RoundAborted(RuntimeError):
    pass


@dataclass(frozen=True)
class Message:
    round: int
    phase: str
    sender: str
    receiver: str
    kind: str
    symbol_count: int
    position_fields: int = 0
    detail: Optional[int] = None

    def record(self) -> dict:
        rec = {"round": self.round, "phase": self.phase, "from": self.sender, "to": self.receiver,
               "kind": self.kind, "symbol_count": self.symbol_count,
               "position_fields": self.position_fields}
        if self.detail is not None:
            rec["detail"] = self.detail
        return rec


class Transcript:
    def __init__(self):
        self.messages: list = []

    def __len__(self) -> int:
        return len(self.messages)

    def truncate(self, n: int) -> None:
        del self.messages[n:]

    def to_jsonl(self) -> str:
        return "".join(json.dumps(m.record(), sort_keys=True) + "\n" for m in self.messages)

    def total_symbols(self) -> int:
        return sum(m.symbol_count for m in self.messages)


class CostLedger:
    """Symbol counts per (round, phase, kind), plus per-round participant counts.

    ``wire`` counts whole symbols as sent; ``real`` bills each position field
    at ``log_q P`` symbols, the quantity the closed-form costs use.
    """

    def __init__(self, params: SystemParams):
        self.params = params
        self.L = params.L
        self.wire: dict = defaultdict(int)
        self.real: dict = defaultdict(int)
        self.readers: dict = {}
        self.writers: dict = {}
        self.v_tilde_size: dict = {}

    def bill(self, msg: Message) -> None:
        key = (msg.round, msg.phase, msg.kind)
        self.wire[key] += msg.symbol_count
        values = msg.symbol_count - msg.position_fields * self.params.position_symbols
        self.real[key] += values + msg.position_fields * self.params.log_q_P

    def drop_round(self, t: int) -> None:
        for book in (self.wire, self.real):
            for key in [k for k in book if k[0] == t]:
                del book[key]
        for book in (self.readers, self.writers, self.v_tilde_size):
            book.pop(t, None)

    def total(self) -> int:
        return sum(self.wire.values())

    def _sum(self, book, t, phase, kinds):
        return sum((v for (rt, ph, k), v in book.items() if rt == t and ph == phase and k in kinds), 0)

    def measured_costs(self, t: int, real: bool = False):
        """Per-user (C_R, C_W, C_T) for round ``t``."""
        book = self.real if real else self.wire
        nr, nw = self.readers.get(t, 0), self.writers.get(t, 0)
        down = self._sum(book, t, "read", READ_DOWNLOAD_KINDS)
        up = self._sum(book, t, "write", WRITE_UPLOAD_KINDS)
        c_r = Fraction(0) if nr == 0 else _ratio(down, nr * self.L)
        c_w = Fraction(0) if nw == 0 else _ratio(up, nw * self.L)
        return c_r, c_w, c_r + c_w

    def r_prime(self, t: int) -> Fraction:
        return Fraction(self.v_tilde_size.get(t, 0), self.params.P)


def _ratio(num, den: int):
    return Fraction(num, den) if isinstance(num, int) else num / den


class PlaintextOracle:
    """Ground-truth submodels ``(M, P, ell)`` updated without any privacy machinery."""

    def __init__(self, field_: PrimeField, W):
        self.field = field_
        self.W = field_.array(W).copy()

    def apply(self, theta: int, update: SparseUpdate) -> None:
        self.W[theta - 1] = self.field.add(self.W[theta - 1], update.deltas)


@dataclass
class RoundPlan:
    t: int
    writers: list = field(default_factory=list)   # (ClientSession, SparseUpdate)
    readers: list = field(default_factory=list)   # ClientSession


@dataclass
class RoundReport:
    t: int
    v_tilde: tuple
    r_prime: Fraction
    readers: int
    writers: int
    measured: tuple
    theoretical: tuple
    slack: tuple
    decoded: dict

    def within_bounds(self) -> bool:
        (mr, mw, _), (tr, tw, _), (sr, sw) = self.measured, self.theoretical, self.slack
        ok_r = self.readers == 0 or 0 <= mr - tr <= sr + 1e-12
        ok_w = self.writers == 0 or 0 <= mw - tw <= sw + 1e-12
        return ok_r and ok_w


@dataclass
class VerificationReport:
    ok: bool
    mismatches: list    # (submodel, subpacket, bit), 1-based
    checked: int

    @property
    def first_mismatch(self):
        return self.mismatches[0] if self.mismatches else None


class Simulation:
    """Coordinator setup, N databases, client sessions and the round driver."""

    def __init__(self, params: SystemParams, initial_models=None, *,
                 permutation: Optional[Permutation] = None, sabotage: Sabotage = Sabotage.NONE):
        self.params = validate(params)
        self.field = PrimeField(params.q)
        self.sabotage = sabotage
        p = params
        if initial_models is None:
            initial_models = self.field.zeros((p.M, p.P, p.ell))
        result = setup(p, initial_models, permutation=permutation, sabotage=sabotage)
        self._permutation = result.permutation   # client handout only
        self.databases = result.databases
        self.oracle = PlaintextOracle(self.field, initial_models)
        self.transcript = Transcript()
        self.ledger = CostLedger(p)
        self.sessions: dict = {}
        self.last_round = 0
        self.v_tilde: tuple = tuple(range(1, p.P + 1))
        self.received_queries: dict = defaultdict(list)   # n -> [(round, client_id, Q_n)]
        self.received_pairs: dict = defaultdict(list)     # n -> [(round, client_id, pairs)]
        self.v_tilde_history: list = []

    def add_client(self, theta: int) -> ClientSession:
        cid = len(self.sessions) + 1
        s = ClientSession(cid, self.params, theta, self._permutation,
                          stream(self.params.seed, "client", cid), self.sabotage)
        self.sessions[cid] = s
        return s

    def _send(self, msg: Message) -> None:
        self.transcript.messages.append(msg)
        self.ledger.bill(msg)

    def _snapshot(self):
        return ([db.snapshot() for db in self.databases], self.oracle.W.copy(),
                len(self.transcript), self.v_tilde, len(self.v_tilde_history),
                {n: list(v) for n, v in self.received_queries.items()},
                {n: list(v) for n, v in self.received_pairs.items()})

    def _restore(self, snap, t) -> None:
        dbs, W, tlen, v_tilde, vh, queries, pairs = snap
        for db, s in zip(self.databases, dbs):
            db.restore(s)
        self.oracle.W = W
        self.transcript.truncate(tlen)
        self.ledger.drop_round(t)
        self.v_tilde = v_tilde
        del self.v_tilde_history[vh:]
        self.received_queries = defaultdict(list, queries)
        self.received_pairs = defaultdict(list, pairs)

    def run_round(self, plan: RoundPlan) -> RoundReport:
        if plan.t <= self.last_round:
            raise ValueError(f"round {plan.t} does not follow round {self.last_round}")
        snap = self._snapshot()
        try:
            report = self._run_round(plan)
        except Exception as exc:
            self._restore(snap, plan.t)
            raise RoundAborted(f"round {plan.t} aborted: {exc}") from exc
        self.last_round = plan.t
        return report

    def _run_round(self, plan: RoundPlan) -> RoundReport:
        p, t = self.params, plan.t
        pos = p.position_symbols
        writers = sorted(plan.writers, key=lambda w: w[0].client_id)
        readers = {s.client_id: s for s in plan.readers}
        for s, _ in writers:
            readers.setdefault(s.client_id, s)   # writers read first
        readers = [readers[c] for c in sorted(readers)]
        v_tilde = self.v_tilde
        self.v_tilde_history.append(v_tilde)
        self.ledger.readers[t] = len(readers)
        self.ledger.writers[t] = len(writers)
        self.ledger.v_tilde_size[t] = len(v_tilde)
        designated = f"db{DESIGNATED}"

        queries: dict = {}
        decoded: dict = {}
        for s in readers:
            cname = f"client{s.client_id}"
            s.begin_round()
            # padded to P positions whatever |Ṽ| is
            self._send(Message(t, "read", designated, cname, "v_tilde", p.P * pos, p.P))
            true_idx = s.true_positions_from_v_tilde(v_tilde)
            qs = {}
            for db in self.databases:
                q = s.build_query(db.n)
                qs[db.n] = q
                self.received_queries[db.n].append((t, s.client_id, q))
                self._send(Message(t, "read", cname, f"db{db.n}", "query", len(q)))
            queries[s.client_id] = qs
            answers = np.zeros((p.N, len(v_tilde)), dtype=np.int64)
            for db in self.databases:
                for i, v in enumerate(v_tilde):
                    answers[db.n - 1, i] = db.answer_read(qs[db.n], v)
                    self._send(Message(t, "read", f"db{db.n}", cname, "answer", 1, 0, v))
            for v in v_tilde:
                self._send(Message(t, "read", designated, cname, "answer_tag", pos, 1, v))
            out = {}
            for i, s_true in enumerate(true_idx):
                out[s_true] = s.decode_subpacket(answers[:, i], s_true)
            decoded[s.client_id] = out

        for s, update in writers:
            cname = f"client{s.client_id}"
            pairs = s.emit_write_pairs(update)
            for db in self.databases:
                ps = pairs[db.n]
                for pair in ps:
                    self._send(Message(t, "write", cname, f"db{db.n}", "write_pair", 1 + pos, 1, pair.position))
                self.received_pairs[db.n].append((t, s.client_id, tuple(ps)))
                u_tilde = db.collect_write(ps, s.client_id)
                db.apply_write(u_tilde, queries[s.client_id][db.n])
            self.oracle.apply(s.theta, update)

        cap = None if p.r_prime_cap is None else int(p.r_prime_cap * p.P)
        views = [db.close_round(cap) for db in self.databases]
        if any(v != views[0] for v in views):
            raise RuntimeError("databases disagree on the updated position set")
        self.v_tilde = views[DESIGNATED - 1]

        r_prime = self.ledger.r_prime(t)
        measured = self.ledger.measured_costs(t)
        th_r = theoretical_read_cost(p, r_prime)
        th_w = theoretical_write_cost(p)
        return RoundReport(t=t, v_tilde=v_tilde, r_prime=r_prime, readers=len(readers),
                           writers=len(writers), measured=measured,
                           theoretical=(th_r, th_w, th_r + th_w),
                           slack=(read_slack(p, len(v_tilde)), write_slack(p)), decoded=decoded)

    def measured_costs(self, t: int):
        return self.ledger.measured_costs(t)

    def read_submodel(self, theta: int, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Privately decode every subpacket of ``theta`` without billing; ``(P, ell)``."""
        p = self.params
        rng = rng if rng is not None else stream(p.seed, "verify", theta, self.last_round)
        noise = self.field.random(rng, (p.ell, p.M))
        inv = self._permutation.inverse()
        answers = np.zeros((p.N, p.P), dtype=np.int64)
        for db in self.databases:
            q = query_vector(self.field, p.M, theta, p.f, db.alpha, noise)
            for s in range(1, p.P + 1):
                answers[db.n - 1, s - 1] = db.answer_read(q, inv(s))
        return decode_answers(self.field, p.f, p.alpha, answers).T

    def snapshot_and_verify(self) -> VerificationReport:
        """Decode all submodels through the reading path and compare to the oracle."""
        p = self.params
        mismatches = []
        for m in range(1, p.M + 1):
            got = self.read_submodel(m)
            diff = np.argwhere(got != self.oracle.W[m - 1])
            mismatches.extend((m, int(s) + 1, int(k) + 1) for s, k in diff)
        return VerificationReport(ok=not mismatches, mismatches=mismatches, checked=p.M * p.P * p.ell)

    def corrupt_symbol(self, m: int, s: int, k: int, delta: int, databases=None) -> None:
        """Fault injection: add ``delta`` to the stored symbol of (submodel, subpacket, bit)."""
        col = storage_column(self.params.M, m, k)
        for db in self.databases:
            if databases is None or db.n in databases:
                db.storage[s - 1, col] = (db.storage[s - 1, col] + delta) % self.params.q

    def database_view(self, n: int):
        from .audit import DatabaseView
        db = self.databases[n - 1]
        queries = [q for _, _, q in self.received_queries[n]]
        pairs = [pair for _, _, ps in self.received_pairs[n] for pair in ps]
        return DatabaseView(
            alpha=db.alpha,
            queries=np.asarray(queries, dtype=np.int64),
            write_symbols=np.asarray([pr.symbol for pr in pairs], dtype=np.int64),
            write_positions=np.asarray([pr.position for pr in pairs], dtype=np.int64),
            v_tilde=tuple(self.v_tilde_history),
            reversing_matrix=db.reversing_matrix.copy(),
            storage=db.storage.copy(),
        )


def random_sparse_update(field_: PrimeField, params: SystemParams, rng: np.random.Generator):
    """Random ``B`` of size ``P*r`` with nonzero deltas, routed through :func:`sparsify`."""
    from .client import sparsify
    P, ell, k = params.P, params.ell, params.writes_per_user
    raw = np.zeros((P, ell), dtype=np.int64)
    chosen = rng.choice(P, size=k, replace=False)
    raw[chosen] = field_.random_nonzero(rng, (k, ell))
    return sparsify(field_, raw, params.r)


@dataclass
class RunResult:
    simulation: Simulation
    reports: list
    verifications: list

    @property
    def ok(self) -> bool:
        return all(v.ok for v in self.verifications) and all(r.within_bounds() for r in self.reports)


def _plan_writers(cfg, sim: Simulation, t: int, rng, sessions: dict) -> list:
    p = sim.params
    if cfg.writes:
        entries = [w for w in cfg.writes if int(w["round"]) == t]
        out = []
        for i, w in enumerate(entries, start=1):
            cid = int(w.get("client", i))
            theta = int(w["theta"])
            if cid not in sessions:
                sessions[cid] = sim.add_client(theta)
            s = sessions[cid]
            if s.theta != theta:
                raise ValueError(f"client {cid} is bound to theta={s.theta}, not {theta}")
            B = [int(x) for x in w["subpackets"]]
            if "deltas" in w:
                deltas = {b: sim.field.array(d) for b, d in zip(B, w["deltas"])}
            else:
                deltas = {b: sim.field.random_nonzero(rng, p.ell) for b in B}
            out.append((s, SparseUpdate.from_dict(p.P, p.ell, deltas)))
        return out
    if not sessions:
        for _ in range(cfg.writers_per_round):
            s = sim.add_client(int(rng.integers(1, p.M + 1)))
            sessions[s.client_id] = s
    return [(s, random_sparse_update(sim.field, p, rng)) for _, s in sorted(sessions.items())]


def run_config(cfg, sabotage: Sabotage = Sabotage.NONE) -> RunResult:
    """Setup plus ``cfg.rounds`` rounds, verifying against the oracle after each."""
    p = cfg.params()
    fld = PrimeField(p.q)
    if cfg.initial_model == "zeros":
        W = fld.zeros((p.M, p.P, p.ell))
    elif cfg.initial_model == "random":
        W = fld.random(stream(p.seed, "initial-model"), (p.M, p.P, p.ell))
    else:
        raise ValueError(f"initial_model must be 'random' or 'zeros', got {cfg.initial_model!r}")
    perm = Permutation(cfg.permutation) if cfg.permutation is not None else None
    sim = Simulation(p, W, permutation=perm, sabotage=sabotage)
    rng = stream(p.seed, "plan")
    sessions: dict = {}
    reports, verifications = [], []
    for t in range(1, cfg.rounds + 1):
        writers = _plan_writers(cfg, sim, t, rng, sessions)
        readers = [s for _, s in sorted(sessions.items())]
        reports.append(sim.run_round(RoundPlan(t, writers, readers)))
        verifications.append(sim.snapshot_and_verify())
        log.info("round %d: |Ṽ|=%d ok=%s", t, len(reports[-1].v_tilde), verifications[-1].ok)
    return RunResult(sim, reports, verifications)


def _fmt(x) -> str:
    return repr(float(x))


def cost_report_csv(reports) -> str:
    header = ["round", "readers", "writers", "v_tilde_size", "r_prime",
              "C_R_measured", "C_R_theory", "C_R_slack", "C_W_measured", "C_W_theory", "C_W_slack",
              "C_T_measured", "C_T_theory", "within_bounds"]
    lines = [",".join(header)]
    for r in reports:
        (mr, mw, mt), (tr, tw, tt), (sr, sw) = r.measured, r.theoretical, r.slack
        row = [r.t, r.readers, r.writers, len(r.v_tilde), _fmt(r.r_prime), _fmt(mr), _fmt(tr), _fmt(sr),
               _fmt(mw), _fmt(tw), _fmt(sw), _fmt(mt), _fmt(tt), int(r.within_bounds())]
        lines.append(",".join(str(x) for x in row))
    return "\n".join(lines) + "\n"


def verification_csv(verifications) -> str:
    lines = ["round,ok,checked,mismatches,first_mismatch"]
    for t, v in enumerate(verifications, start=1):
        first = "" if v.first_mismatch is None else "/".join(str(x) for x in v.first_mismatch)
        lines.append(f"{t},{int(v.ok)},{v.checked},{len(v.mismatches)},{first}")
    return "\n".join(lines) + "\n"
