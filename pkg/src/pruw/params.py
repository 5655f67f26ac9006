"""System parameters, structural validation, constants and closed-form costs."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence, Union

import numpy as np

from .field import MAX_MODULUS, is_prime
from .rng import stream

Number = Union[Fraction, float]


class InvalidParams(ValueError):
    """Carries every violated constraint in ``violations``."""

    def __init__(self, violations: Sequence[str]):
        self.violations = list(violations)
        super().__init__("; ".join(self.violations))


class FieldTooSmall(ValueError):
    pass


def as_fraction(x) -> Fraction:
    if isinstance(x, Fraction):
        return x
    if isinstance(x, str):
        return Fraction(x)
    return Fraction(str(x)).limit_denominator(10_000)


@dataclass(frozen=True)
class SystemParams:
    N: int
    M: int
    P: int
    ell: int
    L: int
    q: int
    f: tuple
    alpha: tuple
    r: Fraction
    r_prime_cap: Optional[Fraction] = None
    seed: int = 0

    def __post_init__(self):
        object.__setattr__(self, "f", tuple(int(x) for x in self.f))
        object.__setattr__(self, "alpha", tuple(int(x) for x in self.alpha))
        object.__setattr__(self, "r", as_fraction(self.r))
        if self.r_prime_cap is not None:
            object.__setattr__(self, "r_prime_cap", as_fraction(self.r_prime_cap))

    @classmethod
    def build(cls, N: int, M: int, P: int, q: int, r=Fraction(0), *, seed: int = 0,
              ell: Optional[int] = None, r_prime_cap=None, f=None, alpha=None) -> "SystemParams":
        """Derive ``ell`` and ``L`` from ``N`` and ``P``; generate constants if absent."""
        if ell is None:
            ell = (N - 2) // 4 if (N - 2) % 4 == 0 and N > 2 else max(1, (N - 2) // 4)
        if f is None or alpha is None:
            gf, galpha = generate_constants(N, ell, q, seed)
            f = gf if f is None else f
            alpha = galpha if alpha is None else alpha
        return validate(cls(N=N, M=M, P=P, ell=ell, L=P * ell, q=q, f=f, alpha=alpha,
                            r=r, r_prime_cap=r_prime_cap, seed=seed))

    @property
    def writes_per_user(self) -> int:
        """Number of nonzero subpackets each writer uploads (P·r)."""
        return int(self.P * self.r)

    @property
    def position_symbols(self) -> int:
        return position_symbols(self.P, self.q)

    @property
    def log_q_P(self) -> Number:
        return log_q(self.P, self.q)

    def with_(self, **changes) -> "SystemParams":
        return replace(self, **changes)


def check(params: SystemParams) -> list:
    """Return a list naming every violated constraint (empty when valid)."""
    p = params
    bad = []
    if p.ell < 1:
        bad.append(f"ℓ must be a positive integer (got ℓ={p.ell})")
    if p.N != 4 * p.ell + 2:
        bad.append(f"N must equal 4ℓ+2 (got N={p.N}, ℓ={p.ell})")
    if p.M < 1:
        bad.append(f"M must be positive (got M={p.M})")
    if p.P < 1:
        bad.append(f"P must be positive (got P={p.P})")
    if p.L != p.P * p.ell:
        bad.append(f"L must equal P·ℓ (got L={p.L}, P={p.P}, ℓ={p.ell})")
    if p.q > MAX_MODULUS:
        bad.append(f"q must be below 2**31 (got q={p.q})")
    elif not is_prime(p.q):
        bad.append(f"q must be prime (got q={p.q})")
    if len(p.f) != p.ell:
        bad.append(f"f must hold ℓ={p.ell} constants (got {len(p.f)})")
    if len(p.alpha) != p.N:
        bad.append(f"alpha must hold N={p.N} constants (got {len(p.alpha)})")
    consts = list(p.f) + list(p.alpha)
    if any(c < 0 or c >= p.q for c in consts):
        bad.append(f"constants must lie in [0, q) (q={p.q})")
    if len(set(consts)) != len(consts):
        bad.append("constants f and alpha must all be distinct")
    if any(a % p.q == 0 for a in p.alpha):
        bad.append("every alpha_n must be nonzero")
    if not 0 <= p.r <= 1:
        bad.append(f"r must lie in [0, 1] (got r={p.r})")
    elif (p.P * p.r).denominator != 1:
        bad.append(f"P·r must be an integer (got P={p.P}, r={p.r})")
    if p.r_prime_cap is not None and not 0 <= p.r_prime_cap <= 1:
        bad.append(f"r_prime_cap must lie in [0, 1] (got {p.r_prime_cap})")
    return bad


def validate(params: SystemParams) -> SystemParams:
    bad = check(params)
    if bad:
        raise InvalidParams(bad)
    return params


def generate_constants(N: int, ell: int, q: int, seed: int):
    """Draw ``ell`` evaluation points ``f`` and ``N`` nonzero points ``alpha``.

    All ``N + ell`` values are distinct. ``alpha`` comes from the nonzero
    elements; ``f`` from whatever remains, zero included.
    """
    if N > q - 1 or N + ell > q:
        raise FieldTooSmall(
            f"F_{q} has too few elements for N={N} nonzero alphas plus ℓ={ell} distinct f values")
    rng = stream(seed, "constants")
    alpha = rng.choice(np.arange(1, q), size=N, replace=False)
    rest = np.setdiff1d(np.arange(q), alpha)
    f = rng.choice(rest, size=ell, replace=False)
    return tuple(int(x) for x in f), tuple(int(x) for x in alpha)


@dataclass(frozen=True)
class PriorDistribution:
    """Public prior of a single update symbol: zero w.p. 1-r, else uniform."""

    q: int
    r: Fraction
    zero_mass: Fraction = field(init=False)
    nonzero_mass_each: Fraction = field(init=False)

    def __post_init__(self):
        r = as_fraction(self.r)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "zero_mass", 1 - r)
        object.__setattr__(self, "nonzero_mass_each", r / (self.q - 1))

    def pmf(self, value: int) -> Fraction:
        return self.zero_mass if value % self.q == 0 else self.nonzero_mass_each


def is_power(P: int, q: int) -> Optional[int]:
    """Return k with q**k == P, or None."""
    k, acc = 0, 1
    while acc < P:
        acc *= q
        k += 1
    return k if acc == P else None


def log_q(P: int, q: int) -> Number:
    """log_q P, exact (a Fraction) when P is a power of q, else a float."""
    k = is_power(P, q)
    if k is not None:
        return Fraction(k)
    return math.log(P) / math.log(q)


def position_symbols(P: int, q: int) -> int:
    """Whole q-ary symbols needed to carry one index in {1..P}."""
    k, acc = 0, 1
    while acc < P:
        acc *= q
        k += 1
    return k


def theoretical_read_cost(params: SystemParams, r_prime) -> Number:
    N = params.N
    rp = as_fraction(r_prime)
    lg = params.log_q_P
    return (4 * rp + Fraction(4, N) * (1 + rp) * lg) / (1 - Fraction(2, N))


def theoretical_write_cost(params: SystemParams, r=None) -> Number:
    N = params.N
    r = params.r if r is None else as_fraction(r)
    return 4 * r * (1 + params.log_q_P) / (1 - Fraction(2, N))


def baseline_cost(N: int) -> Fraction:
    """Per-phase cost of the non-sparsified scheme, 2/(1-2/N)."""
    return 2 / (1 - Fraction(2, N))


def read_slack(params: SystemParams, v_size: int) -> Number:
    """Upper bound on measured-minus-formula reading cost from whole-symbol positions."""
    gap = params.position_symbols - params.log_q_P
    return (params.P + v_size) * gap / params.L


def write_slack(params: SystemParams) -> Number:
    gap = params.position_symbols - params.log_q_P
    return params.N * params.writes_per_user * gap / params.L


class Sabotage(str, Enum):
    """Deliberate protocol breakage used as negative controls."""

    NONE = "none"
    ZERO_NOISE = "zero-noise"
    IDENTITY_PERMUTATION = "identity-permutation"
