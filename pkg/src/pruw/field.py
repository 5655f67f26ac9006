"""Prime-field arithmetic and exact linear algebra over F_q.

Scalars are :class:`FieldElement` values. Vectors and matrices are plain
``numpy.int64`` arrays whose entries lie in ``[0, q)``; :class:`PrimeField`
supplies the vectorised operations on them.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# q**2 must fit in int64 for a single product; larger moduli are rejected.
MAX_MODULUS = 2**31 - 1
_INT64_MAX = 2**63 - 1


class FieldError(ValueError):
    pass


class ModulusMismatch(FieldError):
    pass


class NotInvertible(FieldError, ZeroDivisionError):
    pass


class SingularMatrixError(FieldError):
    """Raised when elimination finds no pivot. ``column`` is 1-based."""

    def __init__(self, column: int):
        super().__init__(f"matrix is singular: no pivot in column {column}")
        self.column = column


def is_prime(n: int) -> bool:
    """Deterministic Miller-Rabin, exact for n < 3.3e24."""
    if n < 2:
        return False
    small = (2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41)
    if n in small:
        return True
    if any(n % p == 0 for p in small):
        return False
    d, s = n - 1, 0
    while d % 2 == 0:
        d //= 2
        s += 1
    for a in small:
        x = pow(a, d, n)
        if x in (1, n - 1):
            continue
        for _ in range(s - 1):
            x = x * x % n
            if x == n - 1:
                break
        else:
            return False
    return True


@dataclass(frozen=True)
class FieldElement:
    value: int
    q: int

    def __post_init__(self):
        if self.q < 2:
            raise FieldError(f"modulus must be at least 2, got {self.q}")
        object.__setattr__(self, "value", int(self.value) % self.q)

    def _check(self, other: FieldElement) -> None:
        if not isinstance(other, FieldElement):
            raise TypeError(f"expected FieldElement, got {type(other).__name__}")
        if other.q != self.q:
            raise ModulusMismatch(f"moduli differ: {self.q} vs {other.q}")

    def __add__(self, other: FieldElement) -> FieldElement:
        self._check(other)
        return FieldElement(self.value + other.value, self.q)

    def __sub__(self, other: FieldElement) -> FieldElement:
        self._check(other)
        return FieldElement(self.value - other.value, self.q)

    def __mul__(self, other: FieldElement) -> FieldElement:
        self._check(other)
        return FieldElement(self.value * other.value, self.q)

    def __neg__(self) -> FieldElement:
        return FieldElement(-self.value, self.q)

    def __truediv__(self, other: FieldElement) -> FieldElement:
        self._check(other)
        return self * other.inverse()

    def inverse(self) -> FieldElement:
        if self.value == 0:
            raise NotInvertible(f"0 has no inverse mod {self.q}")
        return FieldElement(pow(self.value, self.q - 2, self.q), self.q)

    def __int__(self) -> int:
        return self.value

    def __repr__(self) -> str:
        return f"{self.value} (mod {self.q})"


class PrimeField:
    """Vectorised arithmetic over F_q for prime ``q < 2**31``."""

    def __init__(self, q: int):
        q = int(q)
        if q > MAX_MODULUS:
            raise FieldError(f"q must be below 2**31, got {q}")
        if not is_prime(q):
            raise FieldError(f"q must be prime, got {q}")
        self.q = q
        # longest inner product whose partial sums stay below int64 max
        self._chunk = max(1, _INT64_MAX // ((q - 1) ** 2 + 1))

    def __repr__(self) -> str:
        return f"PrimeField({self.q})"

    def __eq__(self, other) -> bool:
        return isinstance(other, PrimeField) and other.q == self.q

    def __hash__(self) -> int:
        return hash(("PrimeField", self.q))

    def __call__(self, value: int) -> FieldElement:
        return FieldElement(value, self.q)

    def array(self, values) -> np.ndarray:
        return np.mod(np.asarray(values, dtype=np.int64), self.q)

    def zeros(self, shape) -> np.ndarray:
        return np.zeros(shape, dtype=np.int64)

    def identity(self, n: int) -> np.ndarray:
        return np.eye(n, dtype=np.int64)

    def random(self, rng: np.random.Generator, shape=None) -> np.ndarray:
        return rng.integers(0, self.q, size=shape, dtype=np.int64)

    def random_nonzero(self, rng: np.random.Generator, shape=None) -> np.ndarray:
        return rng.integers(1, self.q, size=shape, dtype=np.int64)

    def add(self, a, b):
        return np.mod(np.add(a, b, dtype=np.int64), self.q)

    def sub(self, a, b):
        return np.mod(np.subtract(a, b, dtype=np.int64), self.q)

    def mul(self, a, b):
        return np.mod(np.multiply(a, b, dtype=np.int64), self.q)

    def neg(self, a):
        return np.mod(np.negative(a, dtype=np.int64), self.q)

    def inv(self, a):
        """Elementwise inverse; raises :class:`NotInvertible` on any zero."""
        arr = np.mod(np.asarray(a, dtype=np.int64), self.q)
        if np.any(arr == 0):
            raise NotInvertible(f"0 has no inverse mod {self.q}")
        if arr.ndim == 0:
            return np.int64(pow(int(arr), self.q - 2, self.q))
        out = np.ones_like(arr)
        base = arr.copy()
        e = self.q - 2
        while e:
            if e & 1:
                out = self.mul(out, base)
            base = self.mul(base, base)
            e >>= 1
        return out

    def prod(self, values) -> int:
        out = 1
        for v in np.asarray(values, dtype=np.int64).ravel():
            out = out * int(v) % self.q
        return out

    def matmul(self, a, b) -> np.ndarray:
        a = np.asarray(a, dtype=np.int64)
        b = np.asarray(b, dtype=np.int64)
        k = a.shape[-1]
        if k <= self._chunk:
            return np.mod(a @ b, self.q)
        out = None
        for lo in range(0, k, self._chunk):
            hi = min(k, lo + self._chunk)
            part = np.mod(a[..., lo:hi] @ b[lo:hi], self.q)
            out = part if out is None else self.add(out, part)
        return out

    def dot(self, a, b) -> int:
        return int(self.matmul(np.ravel(a), np.ravel(b)))

    def eval_poly(self, coeffs, x):
        """Horner evaluation of ``sum(coeffs[i] * x**i)``.

        ``coeffs`` may carry trailing batch axes (shape ``(d+1, ...)``) and
        ``x`` may be an array broadcasting against them.
        """
        coeffs = np.asarray(coeffs, dtype=np.int64)
        x = np.mod(np.asarray(x, dtype=np.int64), self.q)
        acc = np.zeros(np.broadcast_shapes(coeffs.shape[1:], x.shape), dtype=np.int64)
        for c in coeffs[::-1]:
            acc = self.add(self.mul(acc, x), c)
        return acc

    def vandermonde(self, points, degree: int) -> np.ndarray:
        """Rows ``[1, x, x**2, ..., x**degree]`` for each point."""
        points = self.array(points)
        out = np.ones((len(points), degree + 1), dtype=np.int64)
        for j in range(1, degree + 1):
            out[:, j] = self.mul(out[:, j - 1], points)
        return out

    def solve(self, A, b) -> np.ndarray:
        """Solve ``A x = b`` exactly by Gauss-Jordan elimination.

        ``b`` may be a vector or a matrix of right-hand sides. The pivot for
        each column is the first row at or below the diagonal holding a
        nonzero entry.
        """
        A = self.array(A)
        b = self.array(b)
        if A.ndim != 2 or A.shape[0] != A.shape[1]:
            raise FieldError(f"A must be square, got shape {A.shape}")
        n = A.shape[0]
        if b.shape[0] != n:
            raise FieldError(f"b has {b.shape[0]} rows, A has {n}")
        vector = b.ndim == 1
        aug = np.concatenate([A, b.reshape(n, -1)], axis=1)
        for col in range(n):
            nz = np.flatnonzero(aug[col:, col])
            if nz.size == 0:
                raise SingularMatrixError(col + 1)
            piv = col + int(nz[0])
            if piv != col:
                aug[[col, piv]] = aug[[piv, col]]
            aug[col] = self.mul(aug[col], self.inv(aug[col, col]))
            factors = aug[:, col].copy()
            factors[col] = 0
            aug = self.sub(aug, self.mul(factors[:, None], aug[col][None, :]))
        x = aug[:, n:]
        return x[:, 0] if vector else x


def solve_linear(field: PrimeField, A, b) -> np.ndarray:
    return field.solve(A, b)


def eval_poly(field: PrimeField, coeffs, x):
    return field.eval_poly(coeffs, x)
