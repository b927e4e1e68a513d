"""Independent reference computations used to derive frozen test values.

Nothing here imports the row-sum machinery of ``scatterlab.spectral``; the
oracles work from norm multiplicities or brute-force enumeration.
"""

import math

import numpy as np
from scipy import optimize


def brute_r2(n):
    """Ordered pairs ``(a, b)`` with ``a^2 + b^2 = n`` by direct scan."""
    count = 0
    r = math.isqrt(n)
    for a in range(-r, r + 1):
        b2 = n - a * a
        b = math.isqrt(b2)
        if b * b == b2:
            count += 1 if b == 0 else 2
    return count


def r2_bincount(x_max):
    """``r2(n)`` for ``n <= x_max`` from a bincount over the square grid."""
    r = math.isqrt(x_max)
    a = np.arange(-r, r + 1, dtype=np.int64)
    n = (a[:, None] ** 2 + a[None, :] ** 2).ravel()
    return np.bincount(n[n <= x_max], minlength=x_max + 1)


class SingleScattererOracle:
    """``h(lam) = sum_xi 2/(|xi|^2 - lam) - 2|xi|^2/(|xi|^4 + 1)`` for one scatterer, zero phase.

    Norms up to ``x_max`` are summed with exact multiplicities; the rest is
    replaced by ``-pi log((X - lam)^2 / (X^2 + 1))``, the integral of the
    summand against the mean density ``pi`` of lattice points per unit norm.
    """

    def __init__(self, x_max=1_000_000):
        counts = r2_bincount(x_max)
        self.x_max = x_max
        self.n = np.nonzero(counts)[0].astype(float)
        self.r = counts[counts > 0].astype(float)

    def __call__(self, lam):
        n, r, x = self.n, self.r, float(self.x_max)
        body = float(np.sum(r * (2 / (n - lam) - 2 * n / (n * n + 1))))
        return body - math.pi * math.log((x - lam) ** 2 / (x * x + 1))

    def root(self, lo, hi, margin=1e-9):
        return optimize.brentq(self, lo + margin, hi - margin, xtol=1e-13, rtol=1e-15, maxiter=500)


def norms_between(lo, hi):
    return [n for n in range(lo, hi + 1) if brute_r2(n) > 0]
