"""Prime field arithmetic and Lagrange interpolation.

Everything downstream (shares, signatures, aggregates) is an integer in
[0, p). The default modulus is the Mersenne prime 2^61 - 1: shares fit a
64-bit word and Python ints absorb the 122-bit products before reduction.
Tests mostly run on p = 251 where failures are readable by eye.
"""

from __future__ import annotations

from typing import Sequence

from .errors import DuplicateAbscissa, EmptyInput

P_DEFAULT = 2305843009213693951  # 2^61 - 1


def inv(a: int, p: int) -> int:
    """Multiplicative inverse via Fermat; p must be prime, a nonzero."""
    return pow(a, p - 2, p)


class Polynomial:
    """Coefficient form, constant term first, trailing zeros trimmed."""

    __slots__ = ("coefficients", "p")

    def __init__(self, coefficients: Sequence[int], p: int):
        coeffs = [c % p for c in coefficients]
        while len(coeffs) > 1 and coeffs[-1] == 0:
            coeffs.pop()
        self.coefficients = tuple(coeffs)
        self.p = p

    @property
    def degree(self) -> int:
        return len(self.coefficients) - 1

    def __call__(self, x: int) -> int:
        acc = 0
        for c in reversed(self.coefficients):
            acc = (acc * x + c) % self.p
        return acc

    def __eq__(self, other) -> bool:
        if not isinstance(other, Polynomial):
            return NotImplemented
        return self.coefficients == other.coefficients and self.p == other.p

    def __hash__(self):
        return hash((self.coefficients, self.p))

    def __repr__(self):
        return f"Polynomial({list(self.coefficients)}, p={self.p})"


def poly_eval(poly: Polynomial, x: int) -> int:
    return poly(x % poly.p)


def lagrange_interpolate(points: Sequence[tuple[int, int]], p: int) -> Polynomial:
    """Unique polynomial of degree < len(points) through the given points.

    Raises DuplicateAbscissa when two x coincide and EmptyInput on an empty
    list. Cost is O(k^2) in the point count, fine for k <= t.
    """
    if not points:
        raise EmptyInput("no points to interpolate")
    xs = [x % p for x, _ in points]
    ys = [y % p for _, y in points]
    if len(set(xs)) != len(xs):
        raise DuplicateAbscissa(f"repeated x in {xs}")

    k = len(xs)
    coeffs = [0] * k
    for i in range(k):
        # basis numerator: product of (x - x_j) for j != i, built incrementally
        basis = [1]
        for j in range(k):
            if j == i:
                continue
            nxt = [0] * (len(basis) + 1)
            for d, c in enumerate(basis):
                nxt[d + 1] = (nxt[d + 1] + c) % p
                nxt[d] = (nxt[d] - c * xs[j]) % p
            basis = nxt
        denom = 1
        for j in range(k):
            if j != i:
                denom = denom * (xs[i] - xs[j]) % p
        scale = ys[i] * inv(denom, p) % p
        for d, c in enumerate(basis):
            coeffs[d] = (coeffs[d] + c * scale) % p
    return Polynomial(coeffs, p)
