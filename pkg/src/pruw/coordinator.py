"""One-shot trusted setup.

The coordinator samples the secret subpacket permutation, hands each
database its noise-masked permutation-reversing matrix, and writes the
initial noisy storage so that all databases share one noise structure.
Nothing is retained once :func:`setup` returns.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .field import PrimeField
from .params import Sabotage, SystemParams, validate
from .rng import stream


@dataclass(frozen=True)
class Permutation:
    """Bijection on {1..P}; ``mapping[i-1]`` is the image of ``i``."""

    mapping: tuple

    def __post_init__(self):
        mapping = tuple(int(x) for x in self.mapping)
        if sorted(mapping) != list(range(1, len(mapping) + 1)):
            raise ValueError(f"not a permutation of 1..{len(mapping)}: {mapping}")
        object.__setattr__(self, "mapping", mapping)

    @classmethod
    def identity(cls, P: int) -> "Permutation":
        return cls(tuple(range(1, P + 1)))

    @classmethod
    def random(cls, P: int, rng: np.random.Generator) -> "Permutation":
        return cls(tuple(int(x) + 1 for x in rng.permutation(P)))

    @property
    def size(self) -> int:
        return len(self.mapping)

    def __call__(self, i: int) -> int:
        if not 1 <= i <= self.size:
            raise IndexError(f"index {i} outside 1..{self.size}")
        return self.mapping[i - 1]

    def inverse(self) -> "Permutation":
        inv = [0] * self.size
        for i, p in enumerate(self.mapping, start=1):
            inv[p - 1] = i
        return Permutation(tuple(inv))

    def permute(self, u) -> np.ndarray:
        """Return ``û`` with ``û(i) = u(P̃(i))``."""
        u = np.asarray(u)
        return u[np.asarray(self.mapping) - 1]


def reversing_matrix(perm: Permutation) -> np.ndarray:
    """0/1 matrix R with ``R @ perm.permute(u) == u``."""
    P = perm.size
    R = np.zeros((P, P), dtype=np.int64)
    for i, s in enumerate(perm.mapping):
        R[s - 1, i] = 1
    return R


def mask_factor(field: PrimeField, f: Sequence[int], alpha) -> np.ndarray:
    """prod_i (f_i - alpha), broadcasting over an array of alphas."""
    out = np.ones_like(np.asarray(alpha, dtype=np.int64))
    for fi in f:
        out = field.mul(out, field.sub(fi, alpha))
    return out


def build_reversing_matrix(field: PrimeField, R, Zbar, f: Sequence[int], alpha_n: int) -> np.ndarray:
    R = np.asarray(R)
    Zbar = np.asarray(Zbar)
    if R.shape != Zbar.shape or R.ndim < 2 or R.shape[-1] != R.shape[-2]:
        raise ValueError(f"R and Zbar must be matching square matrices, got {R.shape} and {Zbar.shape}")
    c = int(mask_factor(field, f, alpha_n))
    return field.add(R, field.mul(c, Zbar))


def encode_storage(field: PrimeField, W, noise, f: Sequence[int], alpha_n: int) -> np.ndarray:
    """Noisy storage of one database.

    ``W`` has shape ``(..., M, P, ell)`` and ``noise`` shape
    ``(..., M, P, ell, 2*ell+1)``. The result has shape ``(..., P, ell*M)``
    with column ``k*M + m`` holding bit ``k`` of submodel ``m``:
    ``W[m, s, k] + (f_k - alpha_n) * sum_i alpha_n**i * noise[m, s, k, i]``.
    """
    W = np.asarray(W, dtype=np.int64)
    noise = np.asarray(noise, dtype=np.int64)
    ell = W.shape[-1]
    poly = field.eval_poly(np.moveaxis(noise, -1, 0), alpha_n)
    scale = field.sub(np.asarray(f, dtype=np.int64), alpha_n)
    S = field.add(W, field.mul(scale, poly))
    # (..., M, P, ell) -> (..., P, ell, M) -> (..., P, ell*M)
    S = np.swapaxes(np.swapaxes(S, -3, -2), -2, -1)
    return S.reshape(S.shape[:-2] + (ell * W.shape[-3],))


def storage_column(M: int, m: int, k: int) -> int:
    """Storage column of bit ``k`` (1-based) of submodel ``m`` (1-based)."""
    return (k - 1) * M + (m - 1)


@dataclass
class SetupResult:
    permutation: Permutation
    databases: list


def setup(params: SystemParams, initial_models=None, *, permutation: Optional[Permutation] = None,
          sabotage: Sabotage = Sabotage.NONE) -> SetupResult:
    """Sample the permutation and noise, and build every database.

    ``initial_models`` is an ``(M, P, ell)`` array (zeros if omitted).
    """
    from .database import Database

    params = validate(params)
    field = PrimeField(params.q)
    M, P, ell = params.M, params.P, params.ell
    if initial_models is None:
        initial_models = np.zeros((M, P, ell), dtype=np.int64)
    W = field.array(initial_models)
    if W.shape != (M, P, ell):
        raise ValueError(f"initial_models must have shape {(M, P, ell)}, got {W.shape}")

    rng = stream(params.seed, "coordinator")
    if permutation is None:
        if sabotage is Sabotage.IDENTITY_PERMUTATION:
            permutation = Permutation.identity(P)
        else:
            permutation = Permutation.random(P, rng)
    if permutation.size != P:
        raise ValueError(f"permutation has size {permutation.size}, expected P={P}")

    R = reversing_matrix(permutation)
    if sabotage is Sabotage.ZERO_NOISE:
        Zbar = field.zeros((P, P))
        noise = field.zeros((M, P, ell, 2 * ell + 1))
    else:
        Zbar = field.random(rng, (P, P))
        noise = field.random(rng, (M, P, ell, 2 * ell + 1))

    dbs = [
        Database(n, params, encode_storage(field, W, noise, params.f, a),
                 build_reversing_matrix(field, R, Zbar, params.f, a))
        for n, a in enumerate(params.alpha, start=1)
    ]
    return SetupResult(permutation, dbs)


def dump_setup(databases, path) -> None:
    """Write each database's public setup material (no permutation) as JSON."""
    out = [
        {"n": db.n, "alpha": db.alpha,
         "reversing_matrix": db.reversing_matrix.tolist(),
         "storage": db.storage.tolist()}
        for db in databases
    ]
    with open(path, "w") as fh:
        json.dump(out, fh, sort_keys=True)
        fh.write("\n")
