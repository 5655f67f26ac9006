"""Run configuration files.

YAML mapping, schema version 1::

    schema_version: 1          # required
    N: 6                       # databases; ℓ = (N-2)/4
    M: 2                       # submodels
    P: 5                       # subpackets per submodel
    q: 2053                    # field prime
    r: 0.4                     # uplink rate; P·r must be an integer ("2/5" also accepted)
    seed: 7
    ell: 1                     # optional, derived from N when absent
    L: 5                       # optional, must equal P·ℓ
    f: [..]                    # optional, generated from seed when absent
    alpha: [..]                # optional, generated from seed when absent
    r_prime_cap: null          # optional downlink cap in [0, 1]
    rounds: 3
    writers_per_round: 2
    initial_model: random      # random | zeros
    permutation: [2, 5, 1, 3, 4]   # optional fixed P̃
    writes:                    # optional scripted writers, replaces random ones
      - {round: 1, theta: 1, subpackets: [1, 4]}
    trials: 10000              # audit sample count
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

import yaml

from .params import InvalidParams, SystemParams, as_fraction, check, generate_constants, FieldTooSmall

SCHEMA_VERSION = 1
KNOWN_KEYS = {"schema_version", "N", "M", "P", "q", "r", "seed", "ell", "L", "f", "alpha",
              "r_prime_cap", "rounds", "writers_per_round", "initial_model", "permutation",
              "writes", "trials"}


@dataclass
class RunConfig:
    N: int
    M: int
    P: int
    q: int
    r: Fraction
    seed: int = 0
    ell: Optional[int] = None
    L: Optional[int] = None
    f: Optional[tuple] = None
    alpha: Optional[tuple] = None
    r_prime_cap: Optional[Fraction] = None
    rounds: int = 1
    writers_per_round: int = 1
    initial_model: str = "random"
    permutation: Optional[tuple] = None
    writes: list = field(default_factory=list)
    trials: int = 10_000

    @property
    def derived_ell(self) -> int:
        if self.ell is not None:
            return self.ell
        return max(1, (self.N - 2) // 4)

    def params(self) -> SystemParams:
        """Validated system parameters; raises :class:`InvalidParams` listing every violation."""
        ell = self.derived_ell
        f, alpha = self.f, self.alpha
        bad = []
        if f is None or alpha is None:
            try:
                gf, ga = generate_constants(self.N, ell, self.q, self.seed)
                f = gf if f is None else f
                alpha = ga if alpha is None else alpha
            except FieldTooSmall as exc:
                bad.append(str(exc))
                f, alpha = f or (), alpha or ()
        L = self.P * ell if self.L is None else self.L
        p = SystemParams(N=self.N, M=self.M, P=self.P, ell=ell, L=L, q=self.q, f=f, alpha=alpha,
                         r=self.r, r_prime_cap=self.r_prime_cap, seed=self.seed)
        bad += [v for v in check(p) if not (bad and ("constants" in v or "must hold" in v))]
        if bad:
            raise InvalidParams(bad)
        return p


def parse_config(data: dict) -> RunConfig:
    if not isinstance(data, dict):
        raise InvalidParams(["config must be a key-value mapping"])
    problems = []
    if "schema_version" not in data:
        problems.append("schema_version is required")
    elif data["schema_version"] != SCHEMA_VERSION:
        problems.append(f"unsupported schema_version {data['schema_version']} (expected {SCHEMA_VERSION})")
    unknown = sorted(set(data) - KNOWN_KEYS)
    if unknown:
        problems.append(f"unknown keys: {', '.join(unknown)}")
    for key in ("N", "M", "P", "q", "r"):
        if key not in data:
            problems.append(f"{key} is required")
    if problems:
        raise InvalidParams(problems)
    kw = {k: v for k, v in data.items() if k != "schema_version"}
    kw["r"] = as_fraction(kw["r"])
    if kw.get("r_prime_cap") is not None:
        kw["r_prime_cap"] = as_fraction(kw["r_prime_cap"])
    for key in ("f", "alpha", "permutation"):
        if kw.get(key) is not None:
            kw[key] = tuple(int(x) for x in kw[key])
    kw["writes"] = [dict(w) for w in kw.get("writes") or []]
    return RunConfig(**kw)


def load_config(path) -> RunConfig:
    with open(path) as fh:
        return parse_config(yaml.safe_load(fh))
