"""Float-side helpers: compiled polynomial evaluation and quadrature.

Everything upstream is exact; these utilities are the one place where
polynomials are lowered to floating point for sampling, simulation and
certificate audits.
"""

from __future__ import annotations

from typing import Callable, Mapping, Sequence

import numpy as np

from .polyalg import Poly


def compile_poly(p: Poly) -> Callable[[Mapping[str, np.ndarray]], np.ndarray]:
    """Compile to a vectorized evaluator over named numpy arrays."""
    names = p.space.names()
    terms = [(e, float(c)) for e, c in p.terms.items()]

    def ev(values: Mapping[str, np.ndarray]) -> np.ndarray:
        shape = np.broadcast_shapes(*(np.shape(v) for v in values.values())) if values else ()
        out = np.zeros(shape)
        for e, c in terms:
            term = np.full(shape, c)
            for i, k in enumerate(e):
                if k:
                    term = term * np.asarray(values[names[i]]) ** k
            out = out + term
        return out

    return ev


def gauss_rule(n: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre nodes/weights on (0, 1)."""
    x, w = np.polynomial.legendre.leggauss(n)
    return 0.5 * (x + 1.0), 0.5 * w


def integrate_01(f: Callable[[np.ndarray], np.ndarray], n: int = 64) -> float:
    x, w = gauss_rule(n)
    return float(np.dot(w, f(x)))


def erfc(x: float) -> float:
    """Complementary error function, |error| well below 1e-10.

    Maclaurin series of erf for small arguments, Lentz continued fraction
    for the tail.
    """
    if x < 0:
        return 2.0 - erfc(-x)
    if x < 2.5:
        # erf(x) = 2/sqrt(pi) * sum (-1)^n x^(2n+1) / (n! (2n+1))
        s = term = x
        n = 0
        while abs(term) > 1e-18 * max(1.0, abs(s)):
            n += 1
            term *= -x * x / n
            s += term / (2 * n + 1)
        return 1.0 - 2.0 / np.sqrt(np.pi) * s
    # erfc(x) = exp(-x^2)/sqrt(pi) / (x + (1/2)/(x + 1/(x + (3/2)/(x + ...))))
    # backward recurrence on the Laplace continued fraction
    r = x
    for n in range(60, 0, -1):
        r = x + (n / 2.0) / r
    return float(np.exp(-x * x) / (np.sqrt(np.pi) * r))


def norm_cdf(x: float) -> float:
    return 0.5 * erfc(-x / np.sqrt(2.0))
