"""Privacy audits over single-database views.

Each audit simulates the protocol pieces that reach one database, keeps
only what that database receives (a :class:`DatabaseView`), and tests that
the view carries no information about the submodel index, the update values
and positions, or the stored submodels.

Exhaustive audits enumerate every noise realisation and compare view
multisets exactly. Statistical audits run chi-square tests with a
Bonferroni correction at family level 0.01. Every audit also runs its
negative controls, which must fail.
"""

from __future__ import annotations

import csv
import io
import itertools
import math
import warnings
from dataclasses import dataclass, field, fields
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy import stats

from .client import SparseUpdate, combine_update, permuted_pairs, query_vector
from .coordinator import (Permutation, build_reversing_matrix, encode_storage, mask_factor,
                          reversing_matrix)
from .field import PrimeField
from .params import PriorDistribution, Sabotage, as_fraction
from .rng import stream

SIGNIFICANCE = 0.01
EXHAUSTIVE_LIMIT = 2_000_000


class UnderpoweredAudit(UserWarning):
    pass


@dataclass
class DatabaseView:
    """Everything a single database receives.

    Array fields may carry a leading batch axis when many independent
    protocol runs are audited together.
    """

    alpha: int
    queries: np.ndarray
    write_symbols: np.ndarray
    write_positions: np.ndarray
    v_tilde: tuple
    reversing_matrix: np.ndarray
    storage: np.ndarray

    def rows(self, *names) -> np.ndarray:
        """Concatenate the named batched fields into one row per run."""
        parts = []
        for name in names:
            arr = np.asarray(getattr(self, name))
            parts.append(arr.reshape(arr.shape[0], -1))
        return np.concatenate(parts, axis=1)


VIEW_FIELDS = tuple(f.name for f in fields(DatabaseView))


@dataclass
class AuditCheck:
    audit: str
    name: str
    mode: str
    statistic: float
    threshold: float
    samples: int
    passed: bool
    negative_control: bool = False

    @property
    def ok(self) -> bool:
        """Positives must pass; negative controls must fail."""
        return self.passed != self.negative_control


@dataclass
class AuditReport:
    checks: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def extend(self, other: "AuditReport") -> "AuditReport":
        self.checks.extend(other.checks)
        self.warnings.extend(other.warnings)
        return self

    @property
    def ok(self) -> bool:
        return bool(self.checks) and all(c.ok for c in self.checks)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["audit", "check", "mode", "negative_control", "statistic", "threshold",
                    "samples", "passed", "ok"])
        for c in self.checks:
            w.writerow([c.audit, c.name, c.mode, int(c.negative_control), f"{c.statistic:.6g}",
                        f"{c.threshold:.6g}", c.samples, int(c.passed), int(c.ok)])
        return buf.getvalue()


@dataclass(frozen=True)
class AuditConfig:
    q: int
    M: int
    P: int
    ell: int
    r: Fraction
    trials: int = 10_000
    seed: int = 0
    sabotage: Sabotage = Sabotage.NONE

    def __post_init__(self):
        object.__setattr__(self, "r", as_fraction(self.r))
        if (self.P * self.r).denominator != 1:
            raise ValueError(f"P·r must be an integer (P={self.P}, r={self.r})")

    @property
    def field(self) -> PrimeField:
        return PrimeField(self.q)

    @property
    def writes(self) -> int:
        return int(self.P * self.r)

    def constants(self):
        """One ``f`` tuple and the database points ``alpha`` to audit.

        Exhaustive audits take every admissible alpha; statistical ones up
        to ``N = 4*ell + 2`` of them.
        """
        rng = stream(self.seed, "audit-constants")
        f = tuple(int(x) for x in rng.choice(np.arange(self.q), size=self.ell, replace=False))
        alphas = [a for a in range(1, self.q) if a not in f]
        if not alphas:
            raise ValueError(f"F_{self.q} leaves no admissible alpha for ℓ={self.ell}")
        return f, alphas

    def exhaustive_size(self) -> int:
        q, M, P, ell = self.q, self.M, self.P, self.ell
        query = q ** (M * ell) * q ** (P * P) * q ** self.writes * math.factorial(P)
        update = (math.comb(P, self.writes) * (q - 1) ** (self.writes * ell)
                  * math.factorial(P) * q ** self.writes * q ** (P * P))
        storage = q ** (M * ell * (2 * ell + 1))
        return max(query, update, storage)

    def exhaustive_feasible(self) -> bool:
        return self.exhaustive_size() <= EXHAUSTIVE_LIMIT


def _all(field_: PrimeField, shape, zero: bool) -> np.ndarray:
    """Every array of ``shape`` over F_q (only the zero array if ``zero``)."""
    size = int(np.prod(shape))
    if zero or size == 0:
        return np.zeros((1,) + tuple(shape), dtype=np.int64)
    grid = np.array(list(itertools.product(range(field_.q), repeat=size)), dtype=np.int64)
    return grid.reshape((-1,) + tuple(shape))


def _product(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cartesian product of two row blocks."""
    return np.concatenate([np.repeat(a, len(b), axis=0), np.tile(b, (len(a), 1))], axis=1)


def _multiset(rows: np.ndarray):
    uniq, counts = np.unique(rows, axis=0, return_counts=True)
    return uniq, counts


def _same_multiset(a: np.ndarray, b: np.ndarray) -> bool:
    ua, ca = _multiset(a)
    ub, cb = _multiset(b)
    return ua.shape == ub.shape and np.array_equal(ua, ub) and np.array_equal(ca, cb)


def _permutations(P: int, sabotage: Sabotage) -> list:
    if sabotage is Sabotage.IDENTITY_PERMUTATION:
        return [Permutation.identity(P)]
    return [Permutation(tuple(p)) for p in itertools.permutations(range(1, P + 1))]


def _fixed_update(cfg: AuditConfig, rng) -> SparseUpdate:
    fld = cfg.field
    deltas = np.zeros((cfg.P, cfg.ell), dtype=np.int64)
    B = tuple(range(1, cfg.writes + 1))
    if B:
        deltas[:cfg.writes] = fld.random_nonzero(rng, (cfg.writes, cfg.ell))
    return SparseUpdate(B, deltas)


# ----------------------------------------------------------------- exhaustive

def _write_round_views(cfg: AuditConfig, f, alpha, theta, update, sabotage) -> DatabaseView:
    """All views of one read+write round, one row per noise realisation."""
    fld = cfg.field
    zero = sabotage is Sabotage.ZERO_NOISE
    qnoise = _all(fld, (cfg.ell, cfg.M), zero)
    Q = query_vector(fld, cfg.M, theta, f, alpha, qnoise)
    zbar = _all(fld, (cfg.P, cfg.P), zero)
    zhat_b = _all(fld, (cfg.writes,), zero)
    zhat = np.zeros((len(zhat_b), cfg.P), dtype=np.int64)
    zhat[:, np.asarray(update.subpackets, dtype=int) - 1] = zhat_b
    blocks = []
    for perm in _permutations(cfg.P, sabotage):
        R = np.broadcast_to(reversing_matrix(perm), zbar.shape)
        Rn = build_reversing_matrix(fld, R, zbar, f, alpha).reshape(len(zbar), -1)
        sym, pos = permuted_pairs(fld, update, perm, f, alpha, zhat)
        pairs = np.concatenate([sym, np.broadcast_to(np.asarray(pos, dtype=np.int64), sym.shape)], axis=1)
        blocks.append(_product(Rn, pairs))
    rp = np.concatenate(blocks, axis=0)
    rows = _product(Q, rp)
    k, w, PP = Q.shape[1], cfg.writes, cfg.P * cfg.P
    return DatabaseView(alpha=alpha, queries=rows[:, :k],
                        reversing_matrix=rows[:, k:k + PP].reshape(-1, cfg.P, cfg.P),
                        write_symbols=rows[:, k + PP:k + PP + w],
                        write_positions=rows[:, k + PP + w:], v_tilde=(),
                        storage=np.zeros((len(rows), 0), dtype=np.int64))


def exhaustive_submodel_privacy(cfg: AuditConfig, sabotage: Sabotage) -> bool:
    f, alphas = cfg.constants()
    rng = stream(cfg.seed, "audit-exhaustive-update")
    update = _fixed_update(cfg, rng)
    names = ("queries", "reversing_matrix", "write_symbols", "write_positions")
    for alpha in alphas:
        base = _write_round_views(cfg, f, alpha, 1, update, sabotage).rows(*names)
        for theta in range(2, cfg.M + 1):
            other = _write_round_views(cfg, f, alpha, theta, update, sabotage).rows(*names)
            if not _same_multiset(base, other):
                return False
    return True


def exhaustive_update_privacy(cfg: AuditConfig, sabotage: Sabotage) -> bool:
    """Posterior of every update symbol given the write view equals the prior."""
    fld = cfg.field
    f, alphas = cfg.constants()
    zero = sabotage is Sabotage.ZERO_NOISE
    prior = PriorDistribution(cfg.q, cfg.r)
    zbar = _all(fld, (cfg.P, cfg.P), zero)
    zhat_b = _all(fld, (cfg.writes,), zero)
    nonzero = np.array(list(itertools.product(range(1, cfg.q), repeat=cfg.writes * cfg.ell)),
                       dtype=np.int64).reshape(-1, cfg.writes, cfg.ell)
    for alpha in alphas:
        views, secrets = [], []
        for B in itertools.combinations(range(1, cfg.P + 1), cfg.writes):
            zhat = np.zeros((len(zhat_b), cfg.P), dtype=np.int64)
            zhat[:, np.asarray(B, dtype=int) - 1] = zhat_b
            for d in nonzero:
                deltas = np.zeros((cfg.P, cfg.ell), dtype=np.int64)
                deltas[np.asarray(B, dtype=int) - 1] = d
                update = SparseUpdate(B, deltas)
                for perm in _permutations(cfg.P, sabotage):
                    R = np.broadcast_to(reversing_matrix(perm), zbar.shape)
                    Rn = build_reversing_matrix(fld, R, zbar, f, alpha).reshape(len(zbar), -1)
                    sym, pos = permuted_pairs(fld, update, perm, f, alpha, zhat)
                    pairs = np.concatenate(
                        [sym, np.broadcast_to(np.asarray(pos, dtype=np.int64), sym.shape)], axis=1)
                    rows = _product(Rn, pairs)
                    views.append(rows)
                    secrets.append(np.broadcast_to(deltas.ravel(), (len(rows), deltas.size)))
        views = np.concatenate(views)
        secrets = np.concatenate(secrets)
        _, view_id = np.unique(views, axis=0, return_inverse=True)
        view_id = view_id.ravel()
        n_views = int(view_id.max()) + 1
        for j in range(secrets.shape[1]):
            counts = np.zeros((n_views, cfg.q), dtype=np.int64)
            np.add.at(counts, (view_id, secrets[:, j]), 1)
            total = counts.sum(axis=1)
            # posterior counts[v, x] / total[v] must equal the prior exactly
            for x in range(cfg.q):
                mass = prior.pmf(x)
                if not np.array_equal(counts[:, x] * mass.denominator, total * mass.numerator):
                    return False
    return True


def exhaustive_storage_security(cfg: AuditConfig, sabotage: Sabotage) -> bool:
    """Stored block of one subpacket has the same multiset for every planted W."""
    fld = cfg.field
    f, alphas = cfg.constants()
    zero = sabotage is Sabotage.ZERO_NOISE
    noise = _all(fld, (cfg.M, 1, cfg.ell, 2 * cfg.ell + 1), zero)
    planted = _all(fld, (cfg.M, 1, cfg.ell), False)
    for alpha in alphas:
        base = encode_storage(fld, planted[0], noise, f, alpha).reshape(len(noise), -1)
        for W in planted[1:]:
            other = encode_storage(fld, W, noise, f, alpha).reshape(len(noise), -1)
            if not _same_multiset(base, other):
                return False
    return True


# ---------------------------------------------------------------- statistical

def _gof_pvalue(values: np.ndarray, q: int) -> float:
    counts = np.bincount(values, minlength=q)
    return float(stats.chisquare(counts).pvalue)


def _homogeneity_pvalue(a: np.ndarray, b: np.ndarray, q: int) -> float:
    table = np.stack([np.bincount(a, minlength=q), np.bincount(b, minlength=q)])
    table = table[:, table.sum(axis=0) > 0]
    if table.shape[1] < 2:
        return 1.0
    return float(stats.chi2_contingency(table, correction=False).pvalue)


def _bonferroni(pvalues) -> float:
    pvalues = list(pvalues)
    if not pvalues:
        return 1.0
    return min(1.0, min(pvalues) * len(pvalues))


def sample_query_views(cfg: AuditConfig, theta: int, alpha: int, f, sabotage, rng) -> DatabaseView:
    fld = cfg.field
    if sabotage is Sabotage.ZERO_NOISE:
        noise = fld.zeros((cfg.trials, cfg.ell, cfg.M))
    else:
        noise = fld.random(rng, (cfg.trials, cfg.ell, cfg.M))
    Q = query_vector(fld, cfg.M, theta, f, alpha, noise)
    empty = np.zeros((cfg.trials, 0), dtype=np.int64)
    return DatabaseView(alpha=alpha, queries=Q, write_symbols=empty, write_positions=empty,
                        v_tilde=(), reversing_matrix=empty, storage=empty)


def batched_write_views(cfg: AuditConfig, update: SparseUpdate, alpha: int, f, perms, zbar, zhat) -> DatabaseView:
    """Write views for a batch of setups.

    ``perms`` is ``(T, P)`` (1-based images), ``zbar`` ``(T, P, P)`` and
    ``zhat`` ``(T, P)``.
    """
    fld = cfg.field
    T, P = perms.shape
    rows = np.arange(T)[:, None]
    inv = np.empty_like(perms)
    inv[rows, perms - 1] = np.arange(1, P + 1)
    in_b = np.zeros(P, dtype=bool)
    in_b[np.asarray(update.subpackets, dtype=int) - 1] = True
    U = np.where(in_b, combine_update(fld, update.deltas, f, alpha, zhat), 0)
    B = np.asarray(update.subpackets, dtype=int)
    positions = np.sort(inv[:, B - 1], axis=1) if len(B) else np.zeros((T, 0), dtype=np.int64)
    # the symbol at permuted position k is U at true index P̃(k)
    symbols = U[rows, perms[rows, positions - 1] - 1] if len(B) else positions
    R = np.zeros((T, P, P), dtype=np.int64)
    R[rows, perms - 1, np.arange(P)[None, :]] = 1
    Rn = fld.add(R, fld.mul(int(mask_factor(fld, f, alpha)), zbar))
    empty = np.zeros((T, 0), dtype=np.int64)
    return DatabaseView(alpha=alpha, queries=empty, write_symbols=symbols, write_positions=positions,
                        v_tilde=(), reversing_matrix=Rn, storage=empty)


def sample_write_views(cfg: AuditConfig, update: SparseUpdate, alpha: int, f, sabotage, rng) -> DatabaseView:
    """Fresh coordinator permutation and update noise per trial."""
    fld = cfg.field
    T, P = cfg.trials, cfg.P
    if sabotage is Sabotage.IDENTITY_PERMUTATION:
        perms = np.tile(np.arange(1, P + 1), (T, 1))
    else:
        perms = np.argsort(rng.random((T, P)), axis=1) + 1
    if sabotage is Sabotage.ZERO_NOISE:
        zbar, zhat = fld.zeros((T, P, P)), fld.zeros((T, P))
    else:
        zbar, zhat = fld.random(rng, (T, P, P)), fld.random(rng, (T, P))
    return batched_write_views(cfg, update, alpha, f, perms, zbar, zhat)


def sample_storage_views(cfg: AuditConfig, W, alpha: int, f, sabotage, rng) -> DatabaseView:
    fld = cfg.field
    shape = (cfg.trials, cfg.M, cfg.P, cfg.ell, 2 * cfg.ell + 1)
    noise = fld.zeros(shape) if sabotage is Sabotage.ZERO_NOISE else fld.random(rng, shape)
    S = encode_storage(fld, W, noise, f, alpha)
    empty = np.zeros((cfg.trials, 0), dtype=np.int64)
    return DatabaseView(alpha=alpha, queries=empty, write_symbols=empty, write_positions=empty,
                        v_tilde=(), reversing_matrix=empty, storage=S)


def statistical_submodel_privacy(cfg: AuditConfig, sabotage: Sabotage) -> float:
    """Bonferroni-adjusted p over per-entry uniformity and theta-homogeneity tests."""
    f, alphas = cfg.constants()
    alphas = alphas[: 4 * cfg.ell + 2]
    rng = stream(cfg.seed, "audit-query", sabotage.value)
    pvals = []
    for alpha in alphas:
        v1 = sample_query_views(cfg, 1, alpha, f, sabotage, rng).queries
        v2 = sample_query_views(cfg, min(2, cfg.M), alpha, f, sabotage, rng).queries
        for j in range(v1.shape[1]):
            pvals.append(_gof_pvalue(v1[:, j], cfg.q))
            pvals.append(_homogeneity_pvalue(v1[:, j], v2[:, j], cfg.q))
    return _bonferroni(pvals)


def _subset_index(rows: np.ndarray, P: int) -> np.ndarray:
    """Index each sorted position set among all subsets of its size."""
    k = rows.shape[1]
    lookup = {c: i for i, c in enumerate(itertools.combinations(range(1, P + 1), k))}
    return np.array([lookup[tuple(int(x) for x in r)] for r in rows], dtype=np.int64)


def statistical_position_privacy(cfg: AuditConfig, sabotage: Sabotage) -> Optional[float]:
    """Uniformity of the emitted permuted position set over fresh setups."""
    n_sets = math.comb(cfg.P, cfg.writes)
    if n_sets < 2:
        return None
    f, alphas = cfg.constants()
    rng = stream(cfg.seed, "audit-position", sabotage.value)
    update = _fixed_update(cfg, rng)
    view = sample_write_views(cfg, update, alphas[0], f, sabotage, rng)
    idx = _subset_index(view.write_positions, cfg.P)
    counts = np.bincount(idx, minlength=n_sets)
    return float(stats.chisquare(counts).pvalue)


def statistical_update_values(cfg: AuditConfig, sabotage: Sabotage) -> Optional[float]:
    """Write symbols are uniform and identically distributed for two different updates."""
    if cfg.writes == 0:
        return None
    f, alphas = cfg.constants()
    alphas = alphas[: 4 * cfg.ell + 2]
    rng = stream(cfg.seed, "audit-values", sabotage.value)
    u1, u2 = _fixed_update(cfg, rng), _fixed_update(cfg, rng)
    pvals = []
    for alpha in alphas:
        a = sample_write_views(cfg, u1, alpha, f, sabotage, rng).write_symbols
        b = sample_write_views(cfg, u2, alpha, f, sabotage, rng).write_symbols
        for j in range(a.shape[1]):
            pvals.append(_gof_pvalue(a[:, j], cfg.q))
            pvals.append(_homogeneity_pvalue(a[:, j], b[:, j], cfg.q))
    return _bonferroni(pvals)


def statistical_storage_security(cfg: AuditConfig, sabotage: Sabotage) -> float:
    fld = cfg.field
    f, alphas = cfg.constants()
    alphas = alphas[: 4 * cfg.ell + 2]
    rng = stream(cfg.seed, "audit-storage", sabotage.value)
    W0 = fld.zeros((cfg.M, cfg.P, cfg.ell))
    W1 = fld.random(rng, (cfg.M, cfg.P, cfg.ell))
    pvals = []
    for alpha in alphas:
        a = sample_storage_views(cfg, W0, alpha, f, sabotage, rng).rows("storage")
        b = sample_storage_views(cfg, W1, alpha, f, sabotage, rng).rows("storage")
        for j in range(a.shape[1]):
            pvals.append(_gof_pvalue(b[:, j], cfg.q))
            pvals.append(_homogeneity_pvalue(a[:, j], b[:, j], cfg.q))
    return _bonferroni(pvals)


# -------------------------------------------------------------------- drivers

def _modes(cfg: AuditConfig, mode: str, report: AuditReport):
    if mode not in ("auto", "exhaustive", "statistical"):
        raise ValueError(f"unknown audit mode {mode!r}")
    exhaustive = mode == "exhaustive" or (mode == "auto" and cfg.exhaustive_feasible())
    if mode == "exhaustive" and not cfg.exhaustive_feasible():
        raise ValueError(f"exhaustive audit needs {cfg.exhaustive_size()} cases (> {EXHAUSTIVE_LIMIT})")
    statistical = mode in ("auto", "statistical")
    if statistical and (cfg.q > 11 or cfg.trials / cfg.q < 5):
        msg = (f"statistical audit underpowered at q={cfg.q}, trials={cfg.trials} "
               f"(expected count per cell {cfg.trials / cfg.q:.1f})")
        warnings.warn(msg, UnderpoweredAudit, stacklevel=3)
        report.warnings.append(msg)
    return exhaustive, statistical


def _run(report, audit, name, cfg, fn, exhaustive, statistical, controls):
    cases = [(cfg.sabotage, False)] + [(s, True) for s in controls]
    for sabotage, negative in cases:
        label = name if not negative else f"{name}[{sabotage.value}]"
        if exhaustive:
            passed = fn[0](cfg, sabotage)
            report.checks.append(AuditCheck(audit, label, "exhaustive", float(passed), 1.0,
                                            cfg.exhaustive_size(), passed, negative))
        if statistical and fn[1] is not None:
            p = fn[1](cfg, sabotage)
            if p is None:
                continue
            report.checks.append(AuditCheck(audit, label, "statistical", p, SIGNIFICANCE,
                                            cfg.trials, p > SIGNIFICANCE, negative))


def audit_submodel_privacy(cfg: AuditConfig, mode: str = "auto") -> AuditReport:
    report = AuditReport()
    ex, st = _modes(cfg, mode, report)
    _run(report, "submodel", "query-view", cfg,
         (exhaustive_submodel_privacy, statistical_submodel_privacy), ex, st, [Sabotage.ZERO_NOISE])
    return report


def audit_update_privacy(cfg: AuditConfig, mode: str = "auto") -> AuditReport:
    report = AuditReport()
    ex, st = _modes(cfg, mode, report)
    controls = [Sabotage.ZERO_NOISE, Sabotage.IDENTITY_PERMUTATION]
    _run(report, "update", "posterior", cfg, (exhaustive_update_privacy, None), ex, False, controls)
    _run(report, "update", "pair-position", cfg, (None, statistical_position_privacy), False, st,
         [Sabotage.IDENTITY_PERMUTATION])
    _run(report, "update", "pair-value", cfg, (None, statistical_update_values), False, st,
         [Sabotage.ZERO_NOISE])
    return report


def audit_storage_security(cfg: AuditConfig, mode: str = "auto") -> AuditReport:
    report = AuditReport()
    ex, st = _modes(cfg, mode, report)
    _run(report, "storage", "stored-symbols", cfg,
         (exhaustive_storage_security, statistical_storage_security), ex, st, [Sabotage.ZERO_NOISE])
    return report


def run_all(cfg: AuditConfig, mode: str = "auto") -> AuditReport:
    report = AuditReport()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", UnderpoweredAudit)
        report.extend(audit_submodel_privacy(cfg, mode))
        sub = [audit_update_privacy(cfg, mode), audit_storage_security(cfg, mode)]
    for r in sub:
        report.checks.extend(r.checks)
    return report
