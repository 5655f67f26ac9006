"""A single simulated database.

Holds noisy storage ``S_n`` (shape ``(P, ell*M)``) and the masked
permutation-reversing matrix ``R_n``. It answers read queries against
permuted subpacket indices and folds (update, position) pairs back into
storage without learning which submodel or which true subpackets changed.
All subpacket indices on this interface are 1-based.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

from .field import PrimeField
from .params import SystemParams


class ProtocolError(ValueError):
    pass


@dataclass(frozen=True)
class WritePair:
    symbol: int
    position: int


class Database:
    def __init__(self, n: int, params: SystemParams, storage, reversing_matrix):
        self.n = n
        self.params = params
        self.field = PrimeField(params.q)
        self.alpha = params.alpha[n - 1]
        P, width = params.P, params.ell * params.M
        self.storage = self.field.array(storage)
        self.reversing_matrix = self.field.array(reversing_matrix)
        if self.storage.shape != (P, width):
            raise ValueError(f"storage must have shape {(P, width)}, got {self.storage.shape}")
        if self.reversing_matrix.shape != (P, P):
            raise ValueError(f"R_n must be {P}x{P}, got {self.reversing_matrix.shape}")
        # D_n diagonal: (f_k - alpha_n) repeated M times per block k
        self.scaling = np.repeat(self.field.sub(np.asarray(params.f), self.alpha), params.M)
        self.round_positions: dict = {}
        self.prev_round_positions: dict = {}
        self.v_tilde: Optional[tuple] = None

    def __repr__(self) -> str:
        return f"Database(n={self.n}, alpha={self.alpha})"

    def _check_index(self, v: int) -> None:
        if not 1 <= v <= self.params.P:
            raise ProtocolError(f"subpacket index {v} outside 1..{self.params.P}")

    def _check_query(self, query) -> np.ndarray:
        query = self.field.array(query)
        if query.shape != (self.params.M * self.params.ell,):
            raise ProtocolError(f"query must have length M·ℓ={self.params.M * self.params.ell}")
        return query

    def expanded_query(self, query, v_tilde_entry: int) -> np.ndarray:
        """Stack ``R_n(s, v) * Q_n`` for s = 1..P into one ``P*M*ell`` vector."""
        self._check_index(v_tilde_entry)
        query = self._check_query(query)
        col = self.reversing_matrix[:, v_tilde_entry - 1]
        return self.field.mul(col[:, None], query[None, :]).ravel()

    def answer_read(self, query, v_tilde_entry: int) -> int:
        return self.field.dot(self.storage, self.expanded_query(query, v_tilde_entry))

    def answer_reads(self, query, v_tilde: Iterable[int]) -> list:
        return [self.answer_read(query, v) for v in v_tilde]

    def collect_write(self, pairs: Sequence[WritePair], writer_id) -> np.ndarray:
        """Rebuild the permuted update vector from ``pairs`` and record positions."""
        P = self.params.P
        expected = self.params.writes_per_user
        if len(pairs) != expected:
            raise ProtocolError(f"writer {writer_id} sent {len(pairs)} pairs, expected P·r={expected}")
        positions = [p.position for p in pairs]
        if len(set(positions)) != len(positions):
            raise ProtocolError(f"writer {writer_id} sent duplicate positions {sorted(positions)}")
        if writer_id in self.round_positions:
            raise ProtocolError(f"writer {writer_id} already wrote this round")
        u_tilde = self.field.zeros(P)
        for p in pairs:
            self._check_index(p.position)
            u_tilde[p.position - 1] = p.symbol % self.params.q
        self.round_positions[writer_id] = frozenset(positions)
        return u_tilde

    def apply_write(self, u_tilde, query) -> np.ndarray:
        """Un-permute with ``R_n`` and add the incremental update to storage.

        Every subpacket receives an increment, including those with no
        update, so the storage delta does not reveal the updated set.
        Returns the increment ``h`` (shape ``(P, ell*M)``).
        """
        u_tilde = self.field.array(u_tilde)
        if u_tilde.shape != (self.params.P,):
            raise ProtocolError(f"update vector must have length P={self.params.P}")
        query = self._check_query(query)
        T = self.field.matmul(self.reversing_matrix, u_tilde)
        dq = self.field.mul(self.scaling, query)
        h = self.field.mul(T[:, None], dq[None, :])
        self.storage = self.field.add(self.storage, h)
        return h

    def close_round(self, cap: Optional[int] = None) -> tuple:
        self.prev_round_positions = self.round_positions
        self.round_positions = {}
        self.v_tilde = compute_v_tilde(self.prev_round_positions, cap)
        return self.v_tilde

    def snapshot(self) -> dict:
        return copy.deepcopy({k: getattr(self, k) for k in
                              ("storage", "round_positions", "prev_round_positions", "v_tilde")})

    def restore(self, snap: dict) -> None:
        for k, v in copy.deepcopy(snap).items():
            setattr(self, k, v)


def compute_v_tilde(positions_by_writer: dict, cap: Optional[int] = None) -> tuple:
    """Sorted union of the writers' permuted position sets.

    With ``cap`` set, keep only the ``cap`` positions written by the most
    writers, breaking ties by lower index.
    """
    counts: dict = {}
    for writer in sorted(positions_by_writer):
        for k in positions_by_writer[writer]:
            counts[k] = counts.get(k, 0) + 1
    keep = sorted(counts)
    if cap is not None and len(keep) > cap:
        keep = sorted(sorted(counts, key=lambda k: (-counts[k], k))[:cap])
    return tuple(keep)
