"""User side of the scheme: private queries, decoding, and sparse writes."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Optional, Sequence

import numpy as np

from .coordinator import Permutation, mask_factor
from .database import ProtocolError, WritePair
from .field import PrimeField, SingularMatrixError
from .params import Sabotage, SystemParams, as_fraction


@dataclass
class SparseUpdate:
    """Nonzero-update subpackets ``B`` (1-based, sorted) and their deltas.

    ``deltas`` has shape ``(P, ell)``; rows outside ``B`` are zero.
    """

    subpackets: tuple
    deltas: np.ndarray

    def __post_init__(self):
        self.subpackets = tuple(sorted(int(s) for s in self.subpackets))
        self.deltas = np.asarray(self.deltas, dtype=np.int64)
        P = self.deltas.shape[0]
        if len(set(self.subpackets)) != len(self.subpackets):
            raise ValueError(f"duplicate subpackets in {self.subpackets}")
        if any(not 1 <= s <= P for s in self.subpackets):
            raise ValueError(f"subpackets {self.subpackets} outside 1..{P}")
        outside = np.ones(P, dtype=bool)
        outside[np.asarray(self.subpackets, dtype=int) - 1] = False
        if np.any(self.deltas[outside]):
            raise ValueError("deltas must be zero outside the updated subpackets")

    @classmethod
    def from_dict(cls, P: int, ell: int, deltas: dict) -> "SparseUpdate":
        arr = np.zeros((P, ell), dtype=np.int64)
        for s, d in deltas.items():
            arr[s - 1] = d
        return cls(tuple(deltas), arr)


def sparsify(field: PrimeField, raw_deltas, r) -> SparseUpdate:
    """Keep the ``P*r`` subpackets with the most nonzero symbols.

    Ties go to the lower index; every other subpacket is zeroed.
    """
    raw = field.array(raw_deltas)
    P = raw.shape[0]
    count = P * as_fraction(r)
    if count.denominator != 1:
        raise ValueError(f"P·r must be an integer (P={P}, r={r})")
    density = np.count_nonzero(raw, axis=1)
    order = sorted(range(P), key=lambda s: (-density[s], s))
    keep = sorted(s + 1 for s in order[: int(count)])
    out = np.zeros_like(raw)
    for s in keep:
        out[s - 1] = raw[s - 1]
    return SparseUpdate(tuple(keep), out)


def query_vector(field: PrimeField, M: int, theta: int, f: Sequence[int], alpha_n: int, noise) -> np.ndarray:
    """Read query for one database: block ``k`` is ``e_M(theta)/(f_k - alpha_n) + noise[k]``.

    ``noise`` has shape ``(..., ell, M)``; the result ``(..., ell*M)``.
    """
    noise = np.asarray(noise, dtype=np.int64)
    ell = len(f)
    if not 1 <= theta <= M:
        raise ValueError(f"theta={theta} outside 1..{M}")
    scale = field.inv(field.sub(np.asarray(f, dtype=np.int64), alpha_n))
    signal = np.zeros((ell, M), dtype=np.int64)
    signal[:, theta - 1] = scale
    q = field.add(signal, noise)
    return q.reshape(q.shape[:-2] + (ell * M,))


@lru_cache(maxsize=None)
def lagrange_denominators(q: int, f: tuple) -> np.ndarray:
    """``1 / prod_{j != i}(f_j - f_i)`` for each i."""
    field = PrimeField(q)
    out = []
    for i, fi in enumerate(f):
        others = [fj for j, fj in enumerate(f) if j != i]
        out.append(pow(field.prod([(fj - fi) % q for fj in others]), q - 2, q))
    return np.asarray(out, dtype=np.int64)


def combine_update(field: PrimeField, deltas, f: Sequence[int], alpha, z_hat) -> np.ndarray:
    """Combined single-symbol update of one subpacket in ``B``.

    ``sum_i D_i * prod_{j!=i}(f_j - alpha) + prod_j(f_j - alpha) * z_hat``
    where ``D_i = deltas[i] / prod_{j!=i}(f_j - f_i)``. At ``alpha = f_i``
    this collapses to ``deltas[i]``. ``deltas`` has shape ``(..., ell)``;
    ``alpha`` and ``z_hat`` broadcast against the leading axes.
    """
    f = tuple(int(x) for x in f)
    deltas = np.asarray(deltas, dtype=np.int64)
    alpha = np.asarray(alpha, dtype=np.int64)
    scaled = field.mul(deltas, lagrange_denominators(field.q, f))
    acc = field.mul(mask_factor(field, f, alpha), z_hat)
    for i in range(len(f)):
        others = f[:i] + f[i + 1:]
        acc = field.add(acc, field.mul(scaled[..., i], mask_factor(field, others, alpha)))
    return acc


def decoding_matrix(field: PrimeField, f: Sequence[int], alpha: Sequence[int]) -> np.ndarray:
    """Rows ``[1/(f_1-a), ..., 1/(f_ell-a), 1, a, ..., a**(3ell+1)]`` per database."""
    ell = len(f)
    a = field.array(alpha)
    cauchy = field.inv(field.sub(np.asarray(f, dtype=np.int64)[None, :], a[:, None]))
    vander = field.vandermonde(a, 3 * ell + 1)
    return np.concatenate([cauchy, vander], axis=1)


@lru_cache(maxsize=64)
def _decoder_inverse(q: int, f: tuple, alpha: tuple) -> np.ndarray:
    field = PrimeField(q)
    A = decoding_matrix(field, f, alpha)
    if A.shape[0] != A.shape[1]:
        raise ProtocolError(f"decoding needs N = 4ℓ+2 databases, got N={A.shape[0]}")
    try:
        inv = field.solve(A, field.identity(A.shape[0]))
    except SingularMatrixError as exc:
        raise ProtocolError(f"decoding system is singular ({exc}); constants are corrupt") from exc
    inv.setflags(write=False)
    return inv


def decode_answers(field: PrimeField, f: Sequence[int], alpha: Sequence[int], answers) -> np.ndarray:
    """Recover the ``ell`` subpacket symbols from ``N`` answers.

    ``answers`` is ``(N,)`` or ``(N, T)`` for a batch of ``T`` subpackets.
    """
    inv = _decoder_inverse(field.q, tuple(f), tuple(alpha))
    answers = field.array(answers)
    if answers.shape[0] != inv.shape[0]:
        raise ProtocolError(f"expected {inv.shape[0]} answers, got {answers.shape[0]}")
    return field.matmul(inv[: len(f)], answers)


def permuted_pairs(field: PrimeField, update: SparseUpdate, permutation: Permutation,
                   f: Sequence[int], alpha_n: int, z_hat):
    """Symbols and permuted positions one database receives for ``update``.

    Combines each subpacket, permutes the length-P vector with ``P̃`` and keeps
    the entries at the permuted positions of ``B``. ``z_hat`` has shape
    ``(..., P)``; symbols come back as ``(..., P*r)`` with positions ascending.
    """
    z_hat = np.asarray(z_hat, dtype=np.int64)
    P = update.deltas.shape[0]
    in_b = np.zeros(P, dtype=bool)
    in_b[np.asarray(update.subpackets, dtype=int) - 1] = True
    U = combine_update(field, update.deltas, f, alpha_n, z_hat)
    U = np.where(in_b, U, 0)
    U_hat = U[..., np.asarray(permutation.mapping) - 1]
    inv = permutation.inverse()
    positions = tuple(sorted(inv(s) for s in update.subpackets))
    return U_hat[..., np.asarray(positions, dtype=int) - 1], positions


class ClientSession:
    """One user reading and writing submodel ``theta`` (1-based)."""

    def __init__(self, client_id: int, params: SystemParams, theta: int, permutation: Permutation,
                 rng: np.random.Generator, sabotage: Sabotage = Sabotage.NONE):
        if not 1 <= theta <= params.M:
            raise ValueError(f"theta={theta} outside 1..{params.M}")
        if permutation.size != params.P:
            raise ValueError("permutation size does not match P")
        self.client_id = client_id
        self.params = params
        self.field = PrimeField(params.q)
        self.theta = theta
        self.permutation = permutation
        self.rng = rng
        self.sabotage = sabotage
        self.decoded_subpackets: dict = {}
        self._query_noise: Optional[np.ndarray] = None

    def __repr__(self) -> str:
        return f"ClientSession(id={self.client_id}, theta={self.theta})"

    def _noise(self, shape) -> np.ndarray:
        if self.sabotage is Sabotage.ZERO_NOISE:
            return self.field.zeros(shape)
        return self.field.random(self.rng, shape)

    def begin_round(self) -> None:
        """Draw fresh query noise and drop cached decodes."""
        self._query_noise = self._noise((self.params.ell, self.params.M))
        self.decoded_subpackets = {}

    def build_query(self, n: int) -> np.ndarray:
        if not 1 <= n <= self.params.N:
            raise ValueError(f"database index {n} outside 1..{self.params.N}")
        if self._query_noise is None:
            self.begin_round()
        p = self.params
        return query_vector(self.field, p.M, self.theta, p.f, p.alpha[n - 1], self._query_noise)

    def true_positions_from_v_tilde(self, v_tilde) -> tuple:
        return tuple(self.permutation(v) for v in v_tilde)

    def decode_subpacket(self, answers, true_index: int) -> np.ndarray:
        w = decode_answers(self.field, self.params.f, self.params.alpha, answers)
        self.decoded_subpackets[true_index] = w
        return w

    def combine_update(self, update: SparseUpdate, s: int, n: int, z_hat: int) -> int:
        if not 1 <= s <= self.params.P:
            raise ValueError(f"subpacket {s} outside 1..{self.params.P}")
        if s not in update.subpackets:
            return 0
        return int(combine_update(self.field, update.deltas[s - 1], self.params.f,
                                  self.params.alpha[n - 1], z_hat))

    def emit_write_pairs(self, update: SparseUpdate) -> dict:
        """Per-database (symbol, permuted position) pairs, sorted by position."""
        p = self.params
        if len(update.subpackets) != p.writes_per_user:
            raise ProtocolError(f"update touches {len(update.subpackets)} subpackets, expected P·r={p.writes_per_user}")
        z_hat = self._noise(p.P)
        out = {}
        for n in range(1, p.N + 1):
            symbols, positions = permuted_pairs(self.field, update, self.permutation, p.f, p.alpha[n - 1], z_hat)
            out[n] = [WritePair(int(u), k) for u, k in zip(symbols, positions)]
        return out
