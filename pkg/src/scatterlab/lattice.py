"""
Integers that are sums of two squares, the lattice points realizing them,
thin annuli, and the density-one subsequence with controlled gaps.

All number theory here runs in exact integer arithmetic.  Floating point
only enters through angles (discrepancy, equidistribution averages) and
through the real thresholds of the subsequence filter.
"""

from __future__ import annotations

import io
import math
from collections.abc import Callable, Mapping
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import CapacityError, DomainError

#: Largest norm a :class:`LatticeTable` may be built for (about 3.1e7 points).
MAX_TABLE_NORM = 10_000_000

CACHE_MAGIC = "scatterlab-lattice v1"


# ---------------------------------------------------------------------------
# factorization and representation counts
# ---------------------------------------------------------------------------

def factorize(n):
    """Trial-division factorization ``{p: e}`` of a positive integer."""
    n = int(n)
    if n < 1:
        raise DomainError(f"cannot factorize {n}")
    factors = {}
    for p in (2, 3):
        while n % p == 0:
            factors[p] = factors.get(p, 0) + 1
            n //= p
    p, step = 5, 2
    while p * p <= n:
        while n % p == 0:
            factors[p] = factors.get(p, 0) + 1
            n //= p
        p += step
        step = 6 - step
    if n > 1:
        factors[n] = factors.get(n, 0) + 1
    return factors


def is_sum_of_two_squares(n):
    """True iff ``n = a**2 + b**2`` for some integers a, b.

    Uses the classical criterion: every prime ``q = 3 (mod 4)`` divides
    ``n`` to an even power.
    """
    n = int(n)
    if n < 0:
        raise DomainError(f"n must be nonnegative, got {n}")
    if n == 0:
        return True
    return all(e % 2 == 0 for p, e in factorize(n).items() if p % 4 == 3)


def _divisors(factors):
    divs = [1]
    for p, e in factors.items():
        divs = [d * p**k for d in divs for k in range(e + 1)]
    return divs


def r2(n):
    """Number of ordered pairs ``(a, b)`` in Z^2 with ``a**2 + b**2 = n``.

    Computed as ``4 * (d1(n) - d3(n))`` where ``d1``/``d3`` count the
    divisors congruent to 1/3 mod 4.  ``r2(0) = 1``.
    """
    n = int(n)
    if n < 0:
        raise DomainError(f"n must be nonnegative, got {n}")
    if n == 0:
        return 1
    d1 = d3 = 0
    for d in _divisors(factorize(n)):
        if d % 4 == 1:
            d1 += 1
        elif d % 4 == 3:
            d3 += 1
    return 4 * (d1 - d3)


# ---------------------------------------------------------------------------
# exact circle points via Gaussian integers
# ---------------------------------------------------------------------------

def _gauss_mul(z, w):
    return (z[0] * w[0] - z[1] * w[1], z[0] * w[1] + z[1] * w[0])


def _gauss_pow(z, e):
    out = (1, 0)
    for _ in range(e):
        out = _gauss_mul(out, z)
    return out


@lru_cache(maxsize=4096)
def _gaussian_prime_over(p):
    """A pair ``(x, y)`` with ``x**2 + y**2 = p`` for a prime ``p = 1 (mod 4)``."""
    c = 2
    while pow(c, (p - 1) // 2, p) != p - 1:
        c += 1
    root = pow(c, (p - 1) // 4, p)  # root**2 = -1 (mod p)
    a, b = p, root
    while b * b > p:
        a, b = b, a % b
    x, y = b, a % b
    if x * x + y * y != p:  # pragma: no cover - Hermite-Serret always lands here
        raise ArithmeticError(f"two-square decomposition failed for {p}")
    return x, y


def circle_points(n):
    """All ``xi`` in Z^2 with ``|xi|^2 = n``, sorted lexicographically.

    The points are generated exactly from the Gaussian-integer factorization
    of ``n``; the list has ``r2(n)`` entries.
    """
    n = int(n)
    if n < 0:
        raise DomainError(f"n must be nonnegative, got {n}")
    if n == 0:
        return [(0, 0)]
    factors = factorize(n)
    if any(e % 2 for p, e in factors.items() if p % 4 == 3):
        return []
    partial = [(1, 0)]
    for p, e in factors.items():
        if p == 2:
            partial = [_gauss_mul(z, _gauss_pow((1, 1), e)) for z in partial]
        elif p % 4 == 3:
            partial = [(z[0] * p ** (e // 2), z[1] * p ** (e // 2)) for z in partial]
        else:
            pi = _gaussian_prime_over(p)
            pib = (pi[0], -pi[1])
            options = [_gauss_mul(_gauss_pow(pi, a), _gauss_pow(pib, e - a)) for a in range(e + 1)]
            partial = [_gauss_mul(z, w) for z in partial for w in options]
    units = ((1, 0), (0, 1), (-1, 0), (0, -1))
    points = {_gauss_mul(z, u) for z in partial for u in units}
    return sorted(points)


# ---------------------------------------------------------------------------
# the enumerated table
# ---------------------------------------------------------------------------

class _NormView(Mapping):
    """Read-only mapping view over the CSR storage of a LatticeTable."""

    def __init__(self, table, what):
        self._table = table
        self._what = what

    def __getitem__(self, n):
        i = self._table._index(n)
        if i is None:
            raise KeyError(n)
        if self._what == "counts":
            return int(self._table.count_array[i])
        lo, hi = self._table.offsets[i], self._table.offsets[i + 1]
        return [tuple(int(c) for c in p) for p in self._table.point_array[lo:hi]]

    def __iter__(self):
        return (int(n) for n in self._table.norms)

    def __len__(self):
        return len(self._table.norms)


@dataclass(frozen=True, eq=False)
class LatticeTable:
    """All norms ``n <= max_norm`` with ``r2(n) > 0`` and their lattice points.

    Storage is compressed-row: the points realizing ``norms[i]`` are
    ``point_array[offsets[i]:offsets[i + 1]]``, sorted lexicographically.
    ``points_by_norm`` and ``counts`` expose the same data as mappings.
    """

    max_norm: int
    norms: np.ndarray
    count_array: np.ndarray
    offsets: np.ndarray
    point_array: np.ndarray

    def __post_init__(self):
        for arr in (self.norms, self.count_array, self.offsets, self.point_array):
            arr.setflags(write=False)

    def _index(self, n):
        i = int(np.searchsorted(self.norms, n))
        if i < len(self.norms) and self.norms[i] == n:
            return i
        return None

    @property
    def points_by_norm(self):
        return _NormView(self, "points")

    @property
    def counts(self):
        return _NormView(self, "counts")

    def points(self, n):
        """Points on the circle ``|xi|^2 = n`` as an ``(r2(n), 2)`` int array."""
        if n > self.max_norm:
            raise CapacityError(f"norm {n} exceeds table max_norm {self.max_norm}")
        i = self._index(n)
        if i is None:
            return np.zeros((0, 2), dtype=np.int64)
        return self.point_array[self.offsets[i]:self.offsets[i + 1]]

    def count(self, n):
        """``r2(n)`` looked up in the table (0 for non-representable n)."""
        if n > self.max_norm:
            raise CapacityError(f"norm {n} exceeds table max_norm {self.max_norm}")
        i = self._index(n)
        return 0 if i is None else int(self.count_array[i])

    def counting_function(self, x):
        """``#{n in S : n <= x}``."""
        return int(np.searchsorted(self.norms, x, side="right"))

    def successor(self, n):
        """Smallest table norm strictly above ``n``."""
        i = int(np.searchsorted(self.norms, n, side="right"))
        if i >= len(self.norms):
            raise CapacityError(f"no norm above {n} within max_norm {self.max_norm}")
        return int(self.norms[i])

    def predecessor(self, n):
        """Largest table norm strictly below ``n``."""
        i = int(np.searchsorted(self.norms, n, side="left"))
        if i == 0:
            raise DomainError(f"no norm below {n}")
        return int(self.norms[i - 1])

    def gap_containing(self, lam):
        """The consecutive norms ``(n_k, n_{k+1})`` with ``n_k <= lam < n_{k+1}``."""
        i = int(np.searchsorted(self.norms, lam, side="right"))
        if i == 0:
            raise DomainError(f"{lam} lies below the spectrum")
        if i >= len(self.norms):
            raise CapacityError(f"{lam} lies above max_norm {self.max_norm}")
        return int(self.norms[i - 1]), int(self.norms[i])

    def gaps(self, lo=0, hi=None):
        """Consecutive pairs ``(n_k, n_{k+1})`` with both members in ``[lo, hi]``."""
        hi = self.max_norm if hi is None else hi
        sel = self.norms[(self.norms >= lo) & (self.norms <= hi)]
        return [(int(a), int(b)) for a, b in zip(sel[:-1], sel[1:])]


def _disc_points(max_norm):
    """All integer points with ``a**2 + b**2 <= max_norm`` (unsorted)."""
    k = math.isqrt(max_norm)
    a = np.arange(-k, k + 1, dtype=np.int64)
    half = np.array([math.isqrt(max_norm - int(v) * int(v)) for v in a], dtype=np.int64)
    lengths = 2 * half + 1
    aa = np.repeat(a, lengths)
    starts = np.repeat(np.cumsum(lengths) - lengths, lengths)
    bb = np.arange(len(aa), dtype=np.int64) - starts - np.repeat(half, lengths)
    return aa, bb


def build_table(max_norm):
    """Enumerate every lattice point of norm at most ``max_norm``."""
    max_norm = int(max_norm)
    if max_norm < 1:
        raise DomainError(f"max_norm must be >= 1, got {max_norm}")
    if max_norm > MAX_TABLE_NORM:
        raise CapacityError(f"max_norm {max_norm} exceeds the table bound {MAX_TABLE_NORM}")
    a, b = _disc_points(max_norm)
    nrm = a * a + b * b
    order = np.lexsort((b, a, nrm))
    nrm, pts = nrm[order], np.stack([a[order], b[order]], axis=1)
    norms, starts, counts = np.unique(nrm, return_index=True, return_counts=True)
    offsets = np.append(starts, len(nrm)).astype(np.int64)
    return LatticeTable(max_norm, norms.astype(np.int64), counts.astype(np.int64), offsets, pts)


def landau_ratio(table, x):
    """``#{n in S : n <= x} * sqrt(log x) / x``; tends to a constant."""
    if x > table.max_norm:
        raise CapacityError(f"x = {x} exceeds table max_norm {table.max_norm}")
    return table.counting_function(x) * math.sqrt(math.log(x)) / x


# ---------------------------------------------------------------------------
# annuli
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnnulusSpec:
    """``A(n, w) = {xi : n - w <= |xi|^2 <= n + w}``."""

    center_norm: int
    half_width: float

    def __post_init__(self):
        if not self.half_width >= 0:
            raise DomainError(f"annulus half width must be nonnegative, got {self.half_width}")


def annulus_points(table, spec):
    """All lattice points of the annulus, ordered by norm then lexicographically."""
    n, w = spec.center_norm, spec.half_width
    if n + w > table.max_norm:
        raise CapacityError(f"annulus up to {n + w} exceeds table max_norm {table.max_norm}")
    lo = int(np.searchsorted(table.norms, n - w, side="left"))
    hi = int(np.searchsorted(table.norms, n + w, side="right"))
    return table.point_array[table.offsets[lo]:table.offsets[hi]]


# ---------------------------------------------------------------------------
# angular statistics
# ---------------------------------------------------------------------------

def _angles(points):
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(pts) == 0:
        raise DomainError("empty point set")
    if np.any(np.all(pts == 0, axis=1)):
        raise DomainError("points must be nonzero")
    return np.arctan2(pts[:, 1], pts[:, 0])


def angular_discrepancy(points):
    """Discrepancy of the directions of ``points`` against the uniform measure.

    Returns ``sup_I |#{theta in I}/n - |I|/(2 pi)|`` over all arcs ``I`` of
    the circle (open or closed), computed exactly from the sorted angles::

        D = 1/n + max_i (u_i - i/n) - min_i (u_i - i/n)

    with ``u_i`` the sorted angles in units of full turns.
    """
    theta = _angles(points)
    u = np.sort(np.mod(theta / (2 * np.pi), 1.0))
    n = len(u)
    shifted = u - np.arange(n) / n
    return float(min(1.0, 1.0 / n + shifted.max() - shifted.min()))


def equidistribution_average(points, g):
    """``(1/#points) * sum g(theta)`` over the directions of ``points``.

    ``g`` receives angles in radians; array-valued callables are evaluated
    in one call, scalar ones pointwise.
    """
    theta = _angles(points)
    try:
        vals = np.asarray(g(theta), dtype=float)
        if vals.shape != theta.shape:
            vals = np.broadcast_to(vals, theta.shape)
    except (TypeError, ValueError):
        vals = np.array([float(g(t)) for t in theta])
    # shifting by the first value keeps constant g exact
    base = float(vals[0])
    return base + math.fsum(vals - base) / len(vals)


# ---------------------------------------------------------------------------
# the density-one subsequence
# ---------------------------------------------------------------------------

def default_discrepancy_schedule(n, scale=1.0):
    """``scale / log(log(n + 16))``; heuristic, decreasing in ``n``."""
    return scale / math.log(math.log(n + 16))


@dataclass(frozen=True)
class SubsequenceFilter:
    """Thresholds for the three selection conditions.

    gap_constant, gap_exponent
        Condition (i): ``n_{k+1} - n_{k-1} <= gap_constant * n_k**gap_exponent``.
    shift_degree, shift_exponent, delta0
        Condition (ii): shifts ``0 < |zeta| <= shift_degree`` of annulus points
        ``A(n_k, n_k**shift_exponent)`` stay at distance at least
        ``lam**shift_exponent`` from ``lam = n_k + delta0`` and
        ``lam = n_{k+1} - delta0``.
    discrepancy_scale, discrepancy_threshold
        Condition (iii): the circle ``n_{k-1}`` has angular discrepancy at most
        ``d(n_{k-1})``; ``d`` defaults to ``discrepancy_scale / log log(n + 16)``.
    """

    gap_constant: float = 50.0
    gap_exponent: float = 0.1
    shift_degree: int = 10
    shift_exponent: float = 0.1
    discrepancy_scale: float = 1.0
    delta0: float = 1e-2
    discrepancy_threshold: Callable[[int], float] | None = field(default=None, compare=False)

    def __post_init__(self):
        if not 0 < self.gap_exponent < 1:
            raise DomainError("gap_exponent must lie in (0, 1)")
        if not 0 < self.shift_exponent < 0.5:
            raise DomainError("shift_exponent must lie in (0, 1/2)")
        if self.shift_degree < 0:
            raise DomainError("shift_degree must be nonnegative")
        if self.gap_constant <= 0 or self.discrepancy_scale <= 0 or self.delta0 <= 0:
            raise DomainError("gap_constant, discrepancy_scale and delta0 must be positive")

    def threshold(self, n):
        if self.discrepancy_threshold is not None:
            return self.discrepancy_threshold(n)
        return default_discrepancy_schedule(n, self.discrepancy_scale)

    def shifts(self):
        """All ``zeta`` in Z^2 with ``0 < |zeta| <= shift_degree``."""
        j = int(self.shift_degree)
        if j == 0:
            return np.zeros((0, 2), dtype=np.int64)
        r = np.arange(-j, j + 1)
        z = np.stack(np.meshgrid(r, r, indexing="ij"), axis=-1).reshape(-1, 2)
        nz = (z ** 2).sum(axis=1)
        return z[(nz > 0) & (nz <= j * j)].astype(np.int64)


def _circle_discrepancy(table, n, cache):
    if n not in cache:
        cache[n] = 1.0 if n == 0 else angular_discrepancy(table.points(n))
    return cache[n]


def _shift_condition(table, flt, zetas, n, n_next):
    if len(zetas) == 0:
        return True
    w = n ** flt.shift_exponent
    xi = annulus_points(table, AnnulusSpec(n, w))
    # |xi + zeta|^2 = |xi|^2 + 2 xi.zeta + |zeta|^2
    norms = ((xi ** 2).sum(axis=1)[:, None] + 2 * (xi @ zetas.T)
             + (zetas ** 2).sum(axis=1)[None, :]).ravel().astype(float)
    for lam in (n + flt.delta0, n_next - flt.delta0):
        if np.min(np.abs(norms - lam)) < lam ** flt.shift_exponent:
            return False
    return True


def filter_subsequence(table, flt=None, lo=None, hi=None):
    """Norms ``n_k`` in ``[lo, hi]`` that satisfy conditions (i)-(iii).

    Only interior norms (with a predecessor and a successor in the table)
    are candidates.  Raises :class:`CapacityError` when the table lacks the
    margin needed to check a candidate.
    """
    flt = flt or SubsequenceFilter()
    norms = table.norms
    lo = 0 if lo is None else lo
    hi = int(norms[-2]) if hi is None else hi
    idx = np.nonzero((norms >= lo) & (norms <= hi))[0]
    idx = idx[idx >= 1]
    if len(idx) and idx[-1] + 1 >= len(norms):
        raise CapacityError(f"table max_norm {table.max_norm} has no successor for {int(norms[idx[-1]])}")
    zetas = flt.shifts()
    disc_cache = {}
    selected = []
    for k in idx:
        n_prev, n, n_next = int(norms[k - 1]), int(norms[k]), int(norms[k + 1])
        if n + n ** flt.shift_exponent > table.max_norm:
            raise CapacityError(f"annulus around {n} exceeds table max_norm {table.max_norm}")
        if n_next - n_prev > flt.gap_constant * n ** flt.gap_exponent:
            continue
        if _circle_discrepancy(table, n_prev, disc_cache) > flt.threshold(n_prev):
            continue
        if not _shift_condition(table, flt, zetas, n, n_next):
            continue
        selected.append(n)
    return selected


def selection_density(table, selected, lo, hi):
    """Fraction of the norms in ``[lo, hi]`` that were selected."""
    total = int(np.count_nonzero((table.norms >= lo) & (table.norms <= hi)))
    chosen = sum(1 for n in selected if lo <= n <= hi)
    return chosen / total if total else 0.0


# ---------------------------------------------------------------------------
# cache file
# ---------------------------------------------------------------------------

def dump_table(table, stream):
    """Write ``table`` in the versioned text cache format."""
    stream.write(f"{CACHE_MAGIC} max_norm={table.max_norm}\n")
    for i, n in enumerate(table.norms):
        pts = table.point_array[table.offsets[i]:table.offsets[i + 1]]
        body = ";".join(f"{a}:{b}" for a, b in pts)
        stream.write(f"{n},{table.count_array[i]},{body}\n")


def load_table(stream):
    """Read a table written by :func:`dump_table`."""
    header = stream.readline().rstrip("\n")
    prefix = CACHE_MAGIC + " max_norm="
    if not header.startswith(prefix):
        raise DomainError(f"not a lattice cache file: {header!r}")
    max_norm = int(header[len(prefix):])
    norms, counts, pts = [], [], []
    for line in stream:
        line = line.rstrip("\n")
        if not line:
            continue
        n, count, body = line.split(",", 2)
        row = [tuple(int(c) for c in p.split(":")) for p in body.split(";")]
        if len(row) != int(count):
            raise DomainError(f"corrupt cache row for n={n}")
        norms.append(int(n))
        counts.append(int(count))
        pts.extend(row)
    counts = np.array(counts, dtype=np.int64)
    offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    return LatticeTable(max_norm, np.array(norms, dtype=np.int64), counts, offsets,
                        np.array(pts, dtype=np.int64).reshape(-1, 2))


def save_table(table, path):
    path = Path(path)
    buf = io.StringIO()
    dump_table(table, buf)
    path.write_text(buf.getvalue())
    return path


def read_table(path):
    with open(path) as fh:
        return load_table(fh)
