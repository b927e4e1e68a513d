"""
Secular matrix of the point-scatterer extension with ``U = exp(i phi) Id``,
root finding in spectral gaps, and eigenfunction data.

The complex secular matrix ``M_lam`` is rotated by the global phase
``exp(i phi / 2)``.  Pairing ``+-xi`` then gives a real symmetric matrix
``H(lam)`` with entries::

    H_jk = sum_xi cos(2 pi <xi, y_j - y_k>) h(|xi|^2; lam)
    h(n; lam) = 2 cos(phi/2) / (n - lam) - 2 (n cos(phi/2) - sin(phi/2)) / (n^2 + 1)

``dH/dlam`` is a Gram matrix times ``2 cos(phi/2) > 0``, so every sorted
eigenvalue branch of ``H`` is nondecreasing on a gap between consecutive
norms.  Roots are bracketed on a sample sweep and refined by bisection.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import CapacityError, DegenerateConfigurationError, DomainError, NumericError, PoleError
from .greens import (MAX_RADIUS_SQ, _check_pole, green_diff, iter_disc_modes, minimal_image,
                     quartic_tail, radial_tail, radius_sq_for, torus_distance, torus_reduce)

DEFAULT_TOL = 1e-3
DEFAULT_SAMPLES = 64
BISECTION_WIDTH = 1e-10
DEGENERACY_TOL = 1e-9
RESIDUAL_TOL = 1e-6


# ---------------------------------------------------------------------------
# configurations
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class ScattererConfig:
    """Scatterer positions on the unit torus and the extension phase.

    Configurations built from a displacement field carry ``L`` and the
    lattice labels ``origin_labels`` (then ``N = L**2``); free
    configurations leave both as ``None``.
    """

    phase: float
    points: np.ndarray
    L: int | None = None
    origin_labels: np.ndarray | None = None
    epsilon0: float | None = None

    def __post_init__(self):
        if not -math.pi < self.phase < math.pi:
            raise DomainError(f"phase must lie in (-pi, pi), got {self.phase}")
        pts = torus_reduce(np.asarray(self.points, dtype=float).reshape(-1, 2))
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        if len(pts) == 0:
            raise DomainError("a configuration needs at least one point")
        if self.origin_labels is not None:
            labels = np.asarray(self.origin_labels, dtype=np.int64).reshape(-1, 2)
            labels.setflags(write=False)
            object.__setattr__(self, "origin_labels", labels)
            if self.L is None or len(labels) != self.L ** 2 or len(pts) != len(labels):
                raise DomainError("labelled configurations need N = L^2 points and labels")
            if self.epsilon0 is not None:
                dist = torus_distance(pts, labels / self.L)
                if np.any(dist > self.epsilon0 / self.L * (1 + 1e-9)):
                    raise DomainError("a point lies farther than epsilon0/L from its lattice site")
        if len(pts) > 1:
            d = minimal_image(pts[:, None, :] - pts[None, :, :])
            dist = np.linalg.norm(d, axis=-1)
            np.fill_diagonal(dist, np.inf)
            if dist.min() == 0.0:
                raise DegenerateConfigurationError("coincident scatterer positions")

    @property
    def N(self):
        return len(self.points)

    @property
    def cos_half(self):
        return math.cos(self.phase / 2)

    @property
    def sin_half(self):
        return math.sin(self.phase / 2)

    def permuted(self, perm):
        perm = np.asarray(perm)
        labels = None if self.origin_labels is None else self.origin_labels[perm]
        return ScattererConfig(self.phase, self.points[perm], self.L, labels, self.epsilon0)


def secular_weight(n, lam, cos_half, sin_half):
    """``h(n; lam)`` for an array of norms ``n``."""
    n = np.asarray(n, dtype=float)
    return 2 * cos_half / (n - lam) - 2 * (n * cos_half - sin_half) / (n * n + 1)


def secular_tail_amplitude(lam_abs, cos_half, sin_half, radius_sq):
    """``a`` with ``|h(n; lam)| <= a / n^2`` for all ``n >= radius_sq >= 2 |lam|``."""
    return 4 * cos_half * lam_abs + 4 * cos_half / radius_sq + 2 * abs(sin_half)


def default_radius_sq(config, lam_abs, tol):
    """Smallest radius^2 >= max(4 |lam|, 16) whose tail bound is below ``tol``."""
    q_min = max(4 * lam_abs, 16)
    amp = secular_tail_amplitude(lam_abs, config.cos_half, config.sin_half, q_min)
    return radius_sq_for(amp, tol, q_min)


def _tail_bound(config, lam_abs, radius_sq):
    if radius_sq < 2 * lam_abs or radius_sq < 4:
        return math.inf
    amp = secular_tail_amplitude(lam_abs, config.cos_half, config.sin_half, radius_sq)
    return amp * quartic_tail(math.sqrt(radius_sq))


def _mode_trig(points, xi1, xi2):
    """``cos`` and ``sin`` of ``2 pi <xi, y_j>`` as ``(N, m)`` arrays.

    Exponentials are formed per coordinate and multiplied, which needs one
    complex product per entry instead of one exponential.
    """
    r1, i1 = np.unique(xi1, return_inverse=True)
    r2, i2 = np.unique(xi2, return_inverse=True)
    e1 = np.exp(2j * np.pi * np.outer(points[:, 0], r1))
    e2 = np.exp(2j * np.pi * np.outer(points[:, 1], r2))
    e = e1[:, i1] * e2[:, i2]
    return np.ascontiguousarray(e.real), np.ascontiguousarray(e.imag)


def _gram(c, s, w):
    """``sum_m w_m (c_m c_m^T + s_m s_m^T)``."""
    return (c * w) @ c.T + (s * w) @ s.T


# ---------------------------------------------------------------------------
# single entries and whole matrices at one lambda
# ---------------------------------------------------------------------------

def secular_entry(config, lam, j, k, tol=DEFAULT_TOL, radius_sq=None):
    """One entry ``H_jk(lam)``, summed directly over the disc of modes."""
    _check_pole(lam)
    lam = float(lam)
    if radius_sq is None:
        radius_sq = default_radius_sq(config, abs(lam), tol)
    d = config.points[j] - config.points[k]
    c, s = config.cos_half, config.sin_half
    total = float(secular_weight(0, lam, c, s))
    for xi1, xi2 in iter_disc_modes(radius_sq, half=True):
        n = xi1 * xi1 + xi2 * xi2
        total += 2 * float(np.sum(np.cos(2 * np.pi * (xi1 * d[0] + xi2 * d[1])) * secular_weight(n, lam, c, s)))
    return total


@dataclass(frozen=True, eq=False)
class SecularMatrix:
    """``H(lam)`` with its truncation radius and entrywise tail bound."""

    lam: float
    entries: np.ndarray
    radius_sq: int
    tail_bound: float

    @property
    def norm(self):
        return float(np.linalg.norm(self.entries, 2))


def build_secular(config, lam, tol=DEFAULT_TOL, radius_sq=None):
    """Assemble ``H(lam)`` over ``|xi|^2 <= radius_sq``."""
    _check_pole(lam)
    lam = float(lam)
    if radius_sq is None:
        radius_sq = default_radius_sq(config, abs(lam), tol)
    radius_sq = int(radius_sq)
    if radius_sq > MAX_RADIUS_SQ:
        raise CapacityError(f"radius^2 {radius_sq} exceeds {MAX_RADIUS_SQ}")
    c, s = config.cos_half, config.sin_half
    pts = config.points
    h = np.full((config.N, config.N), float(secular_weight(0, lam, c, s)))
    for xi1, xi2 in iter_disc_modes(radius_sq, half=True, chunk=_chunk_for(config.N)):
        cc, ss = _mode_trig(pts, xi1, xi2)
        h += 2 * _gram(cc, ss, secular_weight(xi1 * xi1 + xi2 * xi2, lam, c, s))
    h = 0.5 * (h + h.T)
    return SecularMatrix(lam, h, radius_sq, _tail_bound(config, abs(lam), radius_sq))


def _chunk_for(n_points):
    return max(4096, (1 << 23) // max(n_points, 1))


def secular_matrix_complex(config, lam, radius_sq):
    """The unrotated complex matrix ``M_lam`` built from Green's differences.

    ``M_jk = (G_lam - G_i)(y_j - y_k) + exp(-i phi) (G_lam - G_{-i})(y_j - y_k)``;
    ``exp(i phi / 2) M_lam`` equals ``H(lam)`` at matching truncation.
    """
    n = config.N
    m = np.empty((n, n), dtype=complex)
    u_inv = np.exp(-1j * config.phase)
    for j in range(n):
        for k in range(n):
            d = config.points[j] - config.points[k]
            a = green_diff(lam, 1j, d, radius_sq=radius_sq).value
            b = green_diff(lam, -1j, d, radius_sq=radius_sq).value
            m[j, k] = a + u_inv * b
    return m


# ---------------------------------------------------------------------------
# gap-restricted evaluation
# ---------------------------------------------------------------------------

#: Target for the row-truncation error of :class:`GapSecular`.
ROW_TOL = 1e-13
MAX_ROWS = 1_000_000


def row_sum(beta, x):
    """``S(beta, x) = sum_{m in Z} e(m x) / (m^2 + beta)`` in closed form, ``0 <= x <= 1``.

    ``S = (pi / b) (exp(-2 pi b x) + exp(-2 pi b (1 - x))) / (1 - exp(-2 pi b))``
    with ``b = sqrt(beta)``, ``Re b >= 0``.  Arrays broadcast.
    """
    b = np.sqrt(np.asarray(beta, dtype=complex))
    x = np.asarray(x, dtype=float)
    num = np.exp(-2 * np.pi * b * x) + np.exp(-2 * np.pi * b * (1 - x))
    return np.pi / b * num / -np.expm1(-2 * np.pi * b)


def row_sum_real(beta, x):
    """:func:`row_sum` for real ``beta``, evaluated in real arithmetic."""
    beta = np.asarray(beta, dtype=float)
    x = np.asarray(x, dtype=float)
    pos = beta > 0
    b = np.sqrt(np.abs(beta))
    with np.errstate(over="ignore", invalid="ignore", divide="ignore"):
        bp = np.where(pos, b, 1.0)
        hyper = (np.exp(-2 * np.pi * bp * x) + np.exp(-2 * np.pi * bp * (1 - x))) / (-np.expm1(-2 * np.pi * bp))
        bn = np.where(pos, 1.0, b)
        trig = -np.cos(np.pi * bn * (1 - 2 * x)) / np.sin(np.pi * bn)
    return np.pi / b * np.where(pos, hyper, trig)


def row_sum_dbeta(beta, x):
    """``-dS/dbeta = sum_m e(m x) / (m^2 + beta)^2``."""
    b = np.sqrt(np.asarray(beta, dtype=complex))
    x = np.asarray(x, dtype=float)
    e1 = np.exp(-2 * np.pi * b * x)
    e2 = np.exp(-2 * np.pi * b * (1 - x))
    num = e1 + e2
    dnum = -2 * np.pi * (x * e1 + (1 - x) * e2)
    den = -np.expm1(-2 * np.pi * b)
    dden = 2 * np.pi * np.exp(-2 * np.pi * b)
    df_db = np.pi * (dnum * b * den - num * (den + b * dden)) / (b * den) ** 2
    return -df_db / (2 * b)


def _central_binomials(k_max):
    """Coefficients of ``(1 - z)^(-1/2) = sum_k C_k z^k``."""
    c = [1.0]
    for k in range(1, k_max + 1):
        c.append(c[-1] * (2 * k - 1) / (2 * k))
    return np.array(c)


class GapSecular:
    """``H(lam)`` and ``dH/dlam`` for ``lam`` inside one gap ``(n_k, n_{k+1})``.

    Lattice sums are taken row by row: for each row index ``a`` the sum over
    the other coordinate has the closed form :func:`row_sum`.  Off-diagonal
    entries sum rows along the axis where the pair separation is larger, so
    row terms decay like ``exp(-2 pi a |y_j - y_k| / sqrt 2)`` once
    ``a^2 > lam``.  Diagonal row terms decay algebraically; their tail
    beyond ``A`` is expanded in ``lam / a^2`` and summed with Hurwitz zeta
    values.  ``tail_bound`` bounds every neglected contribution.
    """

    def __init__(self, config, gap, row_tol=ROW_TOL):
        from scipy.special import zeta

        lo, hi = gap
        if not hi > lo:
            raise DomainError(f"invalid gap {gap}")
        self.config = config
        self.gap = (int(lo), int(hi))
        self.half_width = 0.5 * (hi - lo)
        self.radius_sq = None
        c, s = config.cos_half, config.sin_half
        lam_max = float(max(abs(lo), abs(hi), 1))
        tails = 0.0

        # diagonal: rows 0..A exactly, beyond A a series in lam / a^2
        a_diag = max(int(math.ceil(math.sqrt(8 * lam_max))), 16)
        self.diag_rows = np.arange(a_diag + 1, dtype=float)
        w = np.where(self.diag_rows == 0, 1.0, 2.0)
        self.diag_weights = w
        si = row_sum(self.diag_rows ** 2 - 1j, 0.0)
        self.diag_fixed = float(np.sum(w * (-2 * c * si.real + 2 * s * si.imag)))
        ratio = lam_max / (a_diag + 1) ** 2
        k_max = 1
        while ratio ** (k_max + 1) / (1 - ratio) > 1e-17:
            k_max += 1
        ck = _central_binomials(k_max)
        ks = np.arange(1, k_max + 1)
        self._zeta = np.pi * ck[1:] * zeta(2 * ks + 1, a_diag + 1)
        ipow = 1j ** ks
        self._diag_const = float(np.sum(self._zeta * (-2 * c * ipow.real + 2 * s * ipow.imag)))
        self._ks = ks
        amp = 4 * c + 2 * abs(s)
        tails += 2 * math.pi * amp * ratio ** (k_max + 1) / (1 - ratio) * (1 / (a_diag + 1) + 1 / (2 * k_max + 2))
        # coth(pi b) - 1 corrections beyond A
        q = math.sqrt(2) * math.pi * (a_diag + 1)
        tails += 2 * amp * 2 * math.pi * 2 * math.exp(-q) / (1 - math.exp(-q)) ** 2

        # off-diagonal pairs
        n = config.N
        self.pairs = np.triu_indices(n, 1)
        d = minimal_image(config.points[self.pairs[0]] - config.points[self.pairs[1]])
        swap = np.abs(d[:, 0]) > np.abs(d[:, 1])
        row_disp = np.where(swap, d[:, 1], d[:, 0])
        col_disp = np.where(swap, d[:, 0], d[:, 1])
        self.x = np.mod(col_disp, 1.0)
        dd = float(np.min(np.abs(col_disp))) if len(col_disp) else 0.5
        a_off = max(int(math.ceil(math.sqrt(lam_max))), 1)
        if len(col_disp):
            # rows a > A have b = sqrt(a^2 - lam) >= B + (a - A), B = sqrt(A^2 - lam_max)
            qq = 2 * math.pi * dd

            def off_tail(big_b):
                return (2 * amp * 2 * math.pi / big_b * math.exp(-qq * (big_b + 1))
                        / ((1 - math.exp(-qq)) * (1 - math.exp(-2 * math.pi * big_b))))

            big_b = 1.0
            while off_tail(big_b) > row_tol:
                big_b *= 1.1
                if big_b > MAX_ROWS:
                    raise CapacityError(f"scatterers {dd:.3g} apart need more than {MAX_ROWS} rows")
            a_off = int(math.ceil(math.sqrt(lam_max + big_b ** 2)))
            tails += off_tail(math.sqrt(a_off ** 2 - lam_max))
        rows = np.arange(a_off + 1, dtype=float)
        self.off_rows = rows
        wts = np.where(rows == 0, 1.0, 2.0)
        self.off_cos = wts[:, None] * np.cos(2 * np.pi * np.outer(rows, row_disp))
        si = row_sum((rows ** 2 - 1j)[:, None], self.x[None, :])
        self.off_fixed = np.sum(self.off_cos * (-2 * c * si.real + 2 * s * si.imag), axis=0)
        self.tail_bound = tails

    def _check(self, lam):
        lo, hi = self.gap
        if not lo < lam < hi:
            raise DomainError(f"lambda {lam} outside the open gap {self.gap}")

    def _assemble(self, diag, off):
        n = self.config.N
        h = np.empty((n, n))
        np.fill_diagonal(h, diag)
        h[self.pairs] = off
        h[self.pairs[1], self.pairs[0]] = off
        return h

    def matrix(self, lam):
        """``H(lam)`` as a dense symmetric array."""
        lam = float(lam)
        self._check(lam)
        c = self.config.cos_half
        sl = row_sum_real(self.diag_rows ** 2 - lam, 0.0)
        lam_pow = lam ** self._ks
        diag = (self.diag_fixed + float(np.sum(self.diag_weights * 2 * c * sl))
                + 2 * (self._diag_const + float(np.sum(self._zeta * 2 * c * lam_pow))))
        off = np.empty(0)
        if len(self.x):
            sl = row_sum_real((self.off_rows ** 2 - lam)[:, None], self.x[None, :])
            off = self.off_fixed + 2 * c * np.sum(self.off_cos * sl, axis=0)
        return self._assemble(diag, off)

    def derivative(self, lam):
        """``dH/dlam``, a positive semidefinite matrix."""
        lam = float(lam)
        self._check(lam)
        c = self.config.cos_half
        dl = row_sum_dbeta(self.diag_rows ** 2 - lam, 0.0).real
        diag = (float(np.sum(self.diag_weights * 2 * c * dl))
                + 2 * float(np.sum(self._zeta * 2 * c * self._ks * lam ** (self._ks - 1))))
        off = np.empty(0)
        if len(self.x):
            dl = row_sum_dbeta((self.off_rows ** 2 - lam)[:, None], self.x[None, :]).real
            off = 2 * c * np.sum(self.off_cos * dl, axis=0)
        return self._assemble(diag, off)

    def secular_matrix(self, lam):
        return SecularMatrix(float(lam), self.matrix(lam), self.radius_sq, self.tail_bound)

    def scale(self, lam):
        """Reference size of ``H`` near ``lam``: ``max(|H(lam)|, gap * |H'(lam)|)``."""
        width = 2 * self.half_width
        return max(np.linalg.norm(self.matrix(lam), 2), width * np.linalg.norm(self.derivative(lam), 2))


# ---------------------------------------------------------------------------
# roots and eigenfunctions
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class RootSeed:
    """A secular root with the eigenvector of its vanishing branch."""

    lam: float
    vector: np.ndarray
    branch: int
    residual: float
    gap: tuple
    bracket: tuple


def _branch(secular, lam, i):
    return np.linalg.eigvalsh(secular.matrix(lam))[i]


def _bisect(secular, i, lo, hi, f_lo, f_hi, width, max_iter=200):
    for _ in range(max_iter):
        if hi - lo <= width:
            break
        mid = 0.5 * (lo + hi)
        f_mid = _branch(secular, mid, i)
        if not np.isfinite(f_mid):
            raise NumericError("non-finite secular eigenvalue", (lo, hi))
        if f_mid < 0:
            lo, f_lo = mid, f_mid
        else:
            hi, f_hi = mid, f_mid
    else:
        raise NumericError("bisection did not reach the target width", (lo, hi))
    if f_hi > f_lo:
        lam = lo - f_lo * (hi - lo) / (f_hi - f_lo)
        lam = min(max(lam, lo), hi)
    else:
        lam = 0.5 * (lo + hi)
    return lam, (lo, hi)


def find_roots_in_gap(config, gap, delta0, tol=DEFAULT_TOL, n_samples=DEFAULT_SAMPLES,
                      width=BISECTION_WIDTH, secular=None, first_only=False):
    """All ``lam*`` in ``[n_k + delta0, n_{k+1} - delta0]`` where ``H`` is singular.

    Parameters
    ----------
    config : ScattererConfig
    gap : (int, int)
        Consecutive Laplace norms ``(n_k, n_{k+1})``.
    delta0 : float
        Clearance kept from both poles.
    secular : GapSecular, optional
        Reuse a precomputed gap evaluator (must match ``config`` and ``gap``).
    first_only : bool
        Stop after the smallest root.

    Returns
    -------
    list of RootSeed, sorted by ``lam``.
    """
    lo_n, hi_n = gap
    if delta0 <= 0 or hi_n - lo_n <= 2 * delta0:
        raise DomainError(f"need delta0 > 0 and gap width > 2 delta0, got {gap}, {delta0}")
    if secular is None:
        secular = GapSecular(config, gap, min(tol, ROW_TOL))
    a, b = lo_n + delta0, hi_n - delta0
    grid = np.linspace(a, b, max(int(n_samples), 2))
    grid[0], grid[-1] = a, b
    spectra = np.array([np.linalg.eigvalsh(secular.matrix(x)) for x in grid])
    seeds = []
    branches = [i for i in range(config.N) if spectra[0, i] < 0 <= spectra[-1, i]]
    if first_only:
        # the smallest root sits on the highest branch that starts negative
        branches = branches[-1:]
    for i in branches:
        s = int(np.argmax(spectra[:, i] >= 0))
        lam, bracket = _bisect(secular, i, grid[s - 1], grid[s], spectra[s - 1, i], spectra[s, i], width)
        vals, vecs = np.linalg.eigh(secular.matrix(lam))
        residual = abs(vals[i]) / secular.scale(lam)
        seeds.append(RootSeed(float(lam), vecs[:, i], i, float(residual), (int(lo_n), int(hi_n)), bracket))
    seeds.sort(key=lambda r: r.lam)
    return seeds


@dataclass(frozen=True, eq=False)
class Eigenfunction:
    """A new eigenfunction ``sum_j c_j G_lam(., y_j)`` of the extension.

    ``coefficients`` are normalized (``sum |c_j|^2 = 1``) with the first
    nonzero component real and positive; ``d_vector = (1 + exp(i phi)) c``
    is the unnormalized superposition vector ``(Id + U) v``.
    """

    lambda_star: float
    kernel_vector: np.ndarray
    coefficients: np.ndarray
    d_vector: np.ndarray
    residual: float
    gap: tuple
    points: np.ndarray
    phase: float
    L: int | None = None
    origin_labels: np.ndarray | None = None
    tail_bound: float = 0.0
    radius_sq: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def N(self):
        return len(self.coefficients)


def normalize_coefficients(v):
    """Unit-norm copy of ``v`` whose first nonzero component is positive real."""
    v = np.asarray(v, dtype=complex)
    norm = np.linalg.norm(v)
    if norm == 0:
        raise DomainError("zero kernel vector")
    c = v / norm
    big = np.abs(c) > 1e-14 * np.abs(c).max()
    first = c[np.argmax(big)]
    c = c * (abs(first) / first)
    c[np.argmax(big)] = abs(first)
    return c


def extract_eigenfunction(config, lam_star, v, secular=None, tol=DEFAULT_TOL, gap=None,
                          residual_tol=RESIDUAL_TOL, degeneracy_tol=DEGENERACY_TOL):
    """Normalized eigenfunction data for a root ``lam_star`` with kernel vector ``v``.

    Raises
    ------
    DegenerateConfigurationError
        If the kernel of ``H(lam_star)`` is at least two-dimensional.
    NumericError
        If ``v`` is not a kernel vector to within ``residual_tol``.
    """
    if secular is None:
        if gap is None:
            raise DomainError("pass the gap or a GapSecular evaluator")
        secular = GapSecular(config, gap, min(tol, ROW_TOL))
    h = secular.matrix(lam_star)
    scale = secular.scale(lam_star)
    v = np.asarray(v, dtype=float)
    residual = float(np.linalg.norm(h @ v) / (np.linalg.norm(v) * scale))
    if residual > residual_tol:
        raise NumericError(f"kernel residual {residual:.3e} exceeds {residual_tol:.1e}")
    sv = np.sort(np.abs(np.linalg.eigvalsh(h)))
    if config.N > 1 and sv[1] / scale <= degeneracy_tol:
        raise DegenerateConfigurationError(
            f"kernel of H({lam_star}) has dimension >= 2 (second singular value {sv[1]:.3e})")
    c = normalize_coefficients(v)
    d = (1 + np.exp(1j * config.phase)) * c
    return Eigenfunction(float(lam_star), v / np.linalg.norm(v), c, d, residual, tuple(secular.gap),
                         config.points.copy(), config.phase, config.L,
                         None if config.origin_labels is None else config.origin_labels.copy(),
                         secular.tail_bound, secular.radius_sq)


def solve_gap(config, gap, delta0, tol=DEFAULT_TOL, first_only=False, skip_degenerate=True):
    """Roots in a gap turned into eigenfunctions; degenerate kernels are skipped.

    Returns ``(eigenfunctions, n_degenerate)``.
    """
    secular = GapSecular(config, gap, min(tol, ROW_TOL))
    out, skipped = [], 0
    for seed in find_roots_in_gap(config, gap, delta0, tol, secular=secular, first_only=first_only):
        try:
            out.append(extract_eigenfunction(config, seed.lam, seed.vector, secular=secular))
        except DegenerateConfigurationError:
            if not skip_degenerate:
                raise
            skipped += 1
    return out, skipped


def select_gap_energy(roots, gap, delta0):
    """Smallest root inside ``[n_k + delta0, n_{k+1} - delta0]``, or ``None``."""
    lo, hi = gap[0] + delta0, gap[1] - delta0
    lams = [r.lam if hasattr(r, "lam") else float(r) for r in roots]
    inside = [x for x in lams if lo <= x <= hi]
    return min(inside) if inside else None


# ---------------------------------------------------------------------------
# Fourier-side data
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class FourierAmplitudes:
    """``D(xi) = sum_j coeffs_j e_xi(-y_j)`` on a set of lattice vectors.

    ``radius_sq`` is set when the support is the full disc ``|xi|^2 <= radius_sq``;
    ``sup_bound = sum_j |coeffs_j|`` bounds ``|D|`` everywhere.  With
    ``exact_support`` the data are taken to vanish off ``support``.
    """

    support: np.ndarray
    values: np.ndarray
    sup_bound: float
    radius_sq: int | None = None
    exact_support: bool = False

    def as_dict(self):
        return {(int(a), int(b)): complex(v) for (a, b), v in zip(self.support, self.values)}

    def lookup(self, xi):
        """Values at the lattice vectors ``xi``; raises if any is missing."""
        xi = np.asarray(xi, dtype=np.int64).reshape(-1, 2)
        index = {(int(a), int(b)): i for i, (a, b) in enumerate(self.support)}
        try:
            idx = [index[(int(a), int(b))] for a, b in xi]
        except KeyError as exc:
            raise DomainError(f"amplitudes do not cover {exc.args[0]}") from None
        return self.values[idx]


def scatter_transform(coeffs, points, xi_set):
    """``D(xi) = sum_j coeffs_j exp(-2 pi i <xi, y_j>)`` for each requested ``xi``."""
    coeffs = np.asarray(coeffs, dtype=complex).ravel()
    pts = np.asarray(points, dtype=float).reshape(-1, 2)
    if len(coeffs) != len(pts):
        raise DomainError("coefficients and points differ in length")
    xi = np.asarray(xi_set, dtype=np.int64).reshape(-1, 2)
    vals = np.empty(len(xi), dtype=complex)
    if len(xi) == 0:
        return FourierAmplitudes(xi, vals, float(np.abs(coeffs).sum()))
    # e(-xi.y) = e(-xi1 y1) e(-xi2 y2): one table per coordinate, then gathers
    lo1, lo2 = xi.min(axis=0)
    hi1, hi2 = xi.max(axis=0)
    e1 = np.exp(-2j * np.pi * np.outer(np.arange(lo1, hi1 + 1), pts[:, 0])) * coeffs
    e2 = np.exp(-2j * np.pi * np.outer(np.arange(lo2, hi2 + 1), pts[:, 1]))
    step = max(1024, (1 << 22) // max(len(pts), 1))
    for s in range(0, len(xi), step):
        blk = xi[s:s + step]
        vals[s:s + step] = np.einsum("mj,mj->m", e1[blk[:, 0] - lo1], e2[blk[:, 1] - lo2])
    return FourierAmplitudes(xi, vals, float(np.abs(coeffs).sum()))


def disc_amplitudes(coeffs, points, radius_sq):
    """:func:`scatter_transform` over the full disc ``|xi|^2 <= radius_sq``."""
    xi = np.concatenate([np.stack(m, axis=1) for m in iter_disc_modes(radius_sq)])
    amp = scatter_transform(coeffs, points, xi)
    return FourierAmplitudes(amp.support, amp.values, amp.sup_bound, int(radius_sq))


def eigenfunction_amplitudes(ef, radius_sq):
    return disc_amplitudes(ef.coefficients, ef.points, radius_sq)


@dataclass(frozen=True)
class Estimate:
    """A truncated value with its certified tail bound."""

    value: float
    tail_bound: float
    radius_sq: int | None = None

    def __float__(self):
        return float(self.value)


def resolvent_tail(lam, radius_sq, table=None):
    """Upper bound for ``sum_{|xi|^2 > radius_sq} 1 / (|xi|^2 - lam)^2``.

    Norms up to ``table.max_norm`` are summed exactly with their
    multiplicities; beyond that a radial comparison integral is used.
    """
    q = int(radius_sq)
    exact = 0.0
    start = q
    if table is not None and table.max_norm > q:
        sel = table.norms > q
        n = table.norms[sel].astype(float)
        exact = float(np.sum(table.count_array[sel] / (n - lam) ** 2))
        start = table.max_norm
    r = math.sqrt(start)
    if (r - 2 ** 0.5) ** 2 <= max(lam, 0):
        return math.inf
    return exact + radial_tail(lambda u: 1.0 / (u * u - lam) ** 2, r)


def amplitude_grid(amplitudes, lam):
    """Dense grid ``g[xi1 + K, xi2 + K] = D(xi) / (|xi|^2 - lam)``."""
    sup = amplitudes.support
    k = int(np.abs(sup).max()) if len(sup) else 0
    grid = np.zeros((2 * k + 1, 2 * k + 1), dtype=complex)
    n = (sup ** 2).sum(axis=1).astype(float)
    if np.any(n == lam):
        raise PoleError(int(lam))
    grid[sup[:, 0] + k, sup[:, 1] + k] = amplitudes.values / (n - lam)
    return grid, k


def autocorrelation(grid, k, zeta):
    """``A(zeta) = sum_xi g(xi) conj(g(xi - zeta))`` on a dense grid."""
    z1, z2 = int(zeta[0]), int(zeta[1])
    size = 2 * k + 1
    if abs(z1) >= size or abs(z2) >= size:
        return 0j
    a = grid[max(z1, 0):size + min(z1, 0), max(z2, 0):size + min(z2, 0)]
    b = grid[max(-z1, 0):size + min(-z1, 0), max(-z2, 0):size + min(-z2, 0)]
    if z1 == 0 and z2 == 0:
        # real by construction; drop rounding noise in the imaginary part
        return complex(float(np.sum(a.real ** 2 + a.imag ** 2)), 0.0)
    return complex(np.vdot(b, a))


def l2_norm_sq(lam, amplitudes, table=None, tol=1e-3):
    """``||G||_2^2 = sum_xi |D(xi)|^2 / (|xi|^2 - lam)^2`` over the support, with tail.

    The tail beyond the support disc is bounded by
    ``(sum_j |c_j|)^2 * sum_{far} 1/(|xi|^2 - lam)^2``.

    Finitely supported amplitudes (``exact_support``) have no tail.

    Raises
    ------
    DomainError
        If the support is not a full disc or the tail exceeds ``tol * value``.
    """
    grid, k = amplitude_grid(amplitudes, lam)
    value = autocorrelation(grid, k, (0, 0)).real
    if amplitudes.exact_support:
        return Estimate(value, 0.0, None)
    if amplitudes.radius_sq is None:
        raise DomainError("l2_norm_sq needs amplitudes on a full disc of modes")
    tail = amplitudes.sup_bound ** 2 * resolvent_tail(lam, amplitudes.radius_sq, table)
    if not tail <= tol * value:
        need = required_radius_sq(lam, amplitudes.sup_bound, tol * value, table)
        raise DomainError(f"amplitude support |xi|^2 <= {amplitudes.radius_sq} too small; "
                          f"need the annulus up to |xi|^2 = {need}")
    return Estimate(value, tail, amplitudes.radius_sq)


def required_radius_sq(lam, sup_bound, budget, table=None):
    """Smallest disc radius^2 whose :func:`resolvent_tail` bound fits in ``budget``."""
    q = max(int(2 * abs(lam)) + 16, 16)
    while sup_bound ** 2 * resolvent_tail(lam, q, table) > budget:
        q *= 2
        if q > MAX_RADIUS_SQ:
            raise CapacityError(f"no radius below {MAX_RADIUS_SQ} reaches tail budget {budget}")
    lo, hi = q // 2, q
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if sup_bound ** 2 * resolvent_tail(lam, mid, table) <= budget:
            hi = mid
        else:
            lo = mid
    return hi
