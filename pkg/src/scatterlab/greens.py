"""
Regularized Green's function differences on the unit torus and the radial
smoothing kernel.

Conventions: norm units throughout, i.e. the Laplace eigenvalue of the
character ``e_xi(x) = exp(2 pi i <xi, x>)`` is ``|xi|^2``.  Single Green's
functions are never evaluated pointwise; only differences
``G_lam - G_mu`` whose mode sums converge absolutely.
"""

from __future__ import annotations

import csv
import math
import threading
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate, special

from .errors import CapacityError, DomainError, NumericError, PoleError
from .lattice import is_sum_of_two_squares

#: Largest truncation radius squared any mode sum may use.
MAX_RADIUS_SQ = 200_000_000

#: Number of lattice modes handled per vectorized chunk.
CHUNK_MODES = 1 << 20

_S = 1.0 / math.sqrt(2.0)


# ---------------------------------------------------------------------------
# torus geometry
# ---------------------------------------------------------------------------

def torus_reduce(x):
    """Reduce coordinates componentwise into ``[0, 1)``."""
    x = np.mod(np.asarray(x, dtype=float), 1.0)
    # mod can return exactly 1.0 for tiny negative inputs
    return np.where(x >= 1.0, 0.0, x)


def minimal_image(d):
    """Representative of a torus displacement in ``[-1/2, 1/2)^2``."""
    d = np.asarray(d, dtype=float)
    return d - np.floor(d + 0.5)


def torus_distance(x, y, size=1.0):
    """Euclidean distance on ``R^2 / (size Z)^2``."""
    d = (np.asarray(x, dtype=float) - np.asarray(y, dtype=float)) / size
    return size * np.linalg.norm(minimal_image(d), axis=-1)


# ---------------------------------------------------------------------------
# lattice modes and tail bounds
# ---------------------------------------------------------------------------

def iter_disc_modes(radius_sq, half=False, chunk=CHUNK_MODES):
    """Yield ``(xi1, xi2)`` int arrays covering ``|xi|^2 <= radius_sq``.

    With ``half=True`` only one representative of each pair ``+-xi`` is
    produced (``xi1 > 0``, or ``xi1 == 0`` and ``xi2 > 0``); the origin is
    then omitted.
    """
    q = int(radius_sq)
    k = math.isqrt(q)
    rows = np.arange(0 if half else -k, k + 1, dtype=np.int64)
    widths = np.array([math.isqrt(q - int(a) * int(a)) for a in rows], dtype=np.int64)
    start = 0
    while start < len(rows):
        stop, total = start, 0
        while stop < len(rows) and (total == 0 or total + 2 * widths[stop] + 1 <= chunk):
            total += 2 * widths[stop] + 1
            stop += 1
        a, w = rows[start:stop], widths[start:stop]
        lengths = 2 * w + 1
        xi1 = np.repeat(a, lengths)
        offs = np.repeat(np.cumsum(lengths) - lengths, lengths)
        xi2 = np.arange(len(xi1), dtype=np.int64) - offs - np.repeat(w, lengths)
        if half:
            keep = (xi1 > 0) | (xi2 > 0)
            xi1, xi2 = xi1[keep], xi2[keep]
        yield xi1, xi2
        start = stop


def count_disc_modes(radius_sq):
    q = int(radius_sq)
    k = math.isqrt(q)
    return sum(2 * math.isqrt(q - a * a) + 1 for a in range(-k, k + 1))


def quartic_tail(radius):
    """Upper bound for ``sum_{|xi| > radius} |xi|^-4`` over Z^2.

    Each lattice point owns the unit square centred on it; comparing with
    the integral of ``(|x| - 1/sqrt 2)^-4`` outside ``radius - 1/sqrt 2``
    gives the closed form below.  Valid for ``radius > sqrt 2``.
    """
    u = radius - 2 * _S
    if u <= 0:
        return math.inf
    return 2 * math.pi * (0.5 / u**2 + _S / (3 * u**3))


def radial_tail(f, radius):
    """Upper bound for ``sum_{|xi| > radius} f(|xi|)`` for ``f`` decreasing.

    ``f`` must be nonnegative and nonincreasing on ``[radius - sqrt 2, inf)``.
    """
    u0 = radius - 2 * _S
    if u0 <= 0:
        return math.inf
    val, _ = integrate.quad(lambda u: (u + _S) * f(u), u0, np.inf, epsabs=0, epsrel=1e-10, limit=200)
    return 2 * math.pi * val * (1 + 1e-8)


def radius_sq_for(amplitude, tol, min_radius_sq=16):
    """Smallest integer ``Q >= min_radius_sq`` with ``amplitude * quartic_tail(sqrt Q) <= tol``."""
    if tol <= 0:
        raise DomainError(f"tolerance must be positive, got {tol}")
    q = max(int(math.ceil(min_radius_sq)), 4)
    if amplitude * quartic_tail(math.sqrt(q)) <= tol:
        return q
    lo, hi = q, q
    while amplitude * quartic_tail(math.sqrt(hi)) > tol:
        lo, hi = hi, hi * 2
        if hi > 4 * MAX_RADIUS_SQ:
            raise CapacityError(f"tolerance {tol} needs more than {MAX_RADIUS_SQ} radius^2")
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if amplitude * quartic_tail(math.sqrt(mid)) <= tol:
            hi = mid
        else:
            lo = mid
    if hi > MAX_RADIUS_SQ:
        raise CapacityError(f"tolerance {tol} needs radius^2 {hi} > {MAX_RADIUS_SQ}")
    return hi


# ---------------------------------------------------------------------------
# Green's function differences
# ---------------------------------------------------------------------------

def _check_pole(lam):
    lam = complex(lam)
    if lam.imag == 0 and lam.real >= 0 and float(lam.real).is_integer():
        n = int(lam.real)
        if is_sum_of_two_squares(n):
            raise PoleError(n)


def coeff(lam, xi):
    """Fourier coefficient ``1 / (|xi|^2 - lam)`` of the resolvent kernel."""
    n = int(xi[0]) ** 2 + int(xi[1]) ** 2
    if complex(lam) == n:
        raise PoleError(n)
    if isinstance(lam, complex):
        return 1.0 / (n - lam)
    return 1.0 / (n - float(lam))


@dataclass(frozen=True)
class TruncatedSum:
    """A truncated lattice sum with its truncation radius and tail bound."""

    value: complex
    radius_sq: int
    tail_bound: float


def green_diff(lam, mu, x, tol=1e-6, radius_sq=None):
    """``sum_xi e_xi(x) [1/(|xi|^2 - lam) - 1/(|xi|^2 - mu)]`` with certified tail.

    The sum runs over the disc ``|xi|^2 <= radius_sq``; by default the radius
    is the smallest one whose analytic tail bound is at most ``tol``.  For
    ``|xi|^2 >= 2 max(|lam|, |mu|)`` every summand is bounded by
    ``4 |lam - mu| / |xi|^4``.
    """
    _check_pole(lam)
    _check_pole(mu)
    lam, mu = complex(lam), complex(mu)
    x = np.asarray(x, dtype=float).reshape(2)
    amp = 4 * abs(lam - mu)
    q_min = max(2 * max(abs(lam), abs(mu)), 16)
    if radius_sq is None:
        radius_sq = radius_sq_for(amp, tol, q_min) if amp > 0 else int(math.ceil(q_min))
    radius_sq = int(radius_sq)
    if radius_sq > MAX_RADIUS_SQ:
        raise CapacityError(f"radius^2 {radius_sq} exceeds {MAX_RADIUS_SQ}")
    tail = amp * quartic_tail(math.sqrt(radius_sq)) if radius_sq >= q_min else math.inf
    total = 0j
    diff = lam - mu
    for xi1, xi2 in iter_disc_modes(radius_sq):
        n = (xi1 * xi1 + xi2 * xi2).astype(float)
        phase = np.exp(2j * np.pi * (xi1 * x[0] + xi2 * x[1]))
        total += np.sum(phase * (diff / ((n - lam) * (n - mu))))
    if not np.isfinite(total):
        raise NumericError(f"green_diff({lam}, {mu}) overflowed; a parameter is too close to a pole")
    return TruncatedSum(complex(total), radius_sq, float(tail))


def scaled_green_diff(E, L, x, mu, tol=1e-6, radius_sq=None):
    """Green's difference on the torus of side ``L`` at energy ``E``.

    ``G^L_E(x, 0) = G_{E L^2}(x / L, 0)``: the computation is delegated to
    :func:`green_diff` at ``lam = E * L**2`` and the point ``x / L``.
    """
    if L < 1:
        raise DomainError(f"L must be >= 1, got {L}")
    lam = E * L * L
    return green_diff(lam, mu, np.asarray(x, dtype=float) / L, tol=tol, radius_sq=radius_sq)


def nearest_norm_distance(lam, table):
    """Distance from a real spectral parameter to the nearest Laplace norm."""
    i = int(np.searchsorted(table.norms, lam))
    cands = table.norms[max(i - 1, 0):i + 1]
    return float(np.min(np.abs(cands - lam)))


# ---------------------------------------------------------------------------
# smoothing kernel
# ---------------------------------------------------------------------------

def _bump(t):
    t = np.asarray(t, dtype=float)
    return np.where(t > 0, np.exp(-1.0 / np.where(t > 0, t, 1.0)), 0.0)


def smooth_step(t):
    """``s(t) = g(t) / (g(t) + g(1 - t))`` with ``g(t) = exp(-1/t)``: 0 below 0, 1 above 1."""
    a, b = _bump(t), _bump(1.0 - np.asarray(t, dtype=float))
    return a / (a + b)


def plateau_profile(r):
    """Radial profile: 1 on ``[0, 1/2]``, smoothly decreasing to 0 on ``[1/2, 1]``."""
    r = np.asarray(r, dtype=float)
    return np.where(r <= 0.5, 1.0, np.where(r >= 1.0, 0.0, smooth_step((1.0 - r) / 0.5)))


_PROFILE_L1 = None


def profile_l1():
    """``2 pi int_0^1 profile(r) r dr``."""
    global _PROFILE_L1
    if _PROFILE_L1 is None:
        outer, _ = integrate.quad(lambda r: float(plateau_profile(r)) * r, 0.5, 1.0, epsabs=1e-14, epsrel=1e-14)
        _PROFILE_L1 = 2 * math.pi * (0.125 + outer)
    return _PROFILE_L1


_HAT_CACHE = {}
_HAT_LOCK = threading.Lock()


def _hat_radial(k, tol):
    """``(2 pi / |chi|_1) int_0^1 profile(r) J0(k r) r dr`` for an array of ``k > 0``."""
    k = np.asarray(k, dtype=float)
    inner = special.j1(k / 2) / (2 * k)  # exact integral over the plateau
    outer, _ = integrate.quad_vec(lambda r: plateau_profile(r) * special.j0(k * r) * r,
                                  0.5, 1.0, epsabs=tol / 10, epsrel=0, limit=2000)
    return 2 * math.pi * (inner + outer) / profile_l1()


@dataclass(frozen=True)
class SmoothingKernel:
    """``chi_R(u) = R^-2 chi(u / R)`` with ``chi`` the L1-normalized radial plateau.

    ``radius`` is measured on the unit torus and must not exceed 1/2, so the
    support fits in one fundamental domain.
    """

    radius: float
    quad_tol: float = 1e-10
    l1_normalizer: float = field(init=False)

    def __post_init__(self):
        if not 0 < self.radius <= 0.5:
            raise DomainError(f"kernel radius must lie in (0, 1/2], got {self.radius}")
        object.__setattr__(self, "l1_normalizer", profile_l1())

    def __call__(self, u):
        """Real-space values ``chi_R(u)`` for torus displacements ``u``."""
        r = np.linalg.norm(minimal_image(u), axis=-1)
        return plateau_profile(r / self.radius) / (self.l1_normalizer * self.radius**2)

    def sup(self):
        """``max chi_R``, attained on the plateau."""
        return 1.0 / (self.l1_normalizer * self.radius**2)

    def hat(self, zeta):
        return kernel_hat(self, zeta)


def kernel_hat(kernel, zeta):
    """``hat chi_R(zeta) = int chi_R(u) e_zeta(u) du``.

    Accepts one lattice vector or an ``(m, 2)`` array.  Values depend on
    ``zeta`` only through ``|zeta|^2``; they are computed by adaptive radial
    quadrature and cached per ``(R, |zeta|^2)``.  ``zeta = 0`` gives exactly 1.
    """
    z = np.asarray(zeta, dtype=np.int64)
    single = z.ndim == 1
    z = z.reshape(-1, 2)
    norm2 = (z ** 2).sum(axis=1)
    uniq, inv = np.unique(norm2, return_inverse=True)
    key_r = float(kernel.radius)
    with _HAT_LOCK:
        missing = [int(q) for q in uniq if q != 0 and (key_r, int(q)) not in _HAT_CACHE]
    if missing:
        k = 2 * math.pi * key_r * np.sqrt(np.array(missing, dtype=float))
        vals = _hat_radial(k, kernel.quad_tol)
        with _HAT_LOCK:
            for q, v in zip(missing, vals):
                _HAT_CACHE.setdefault((key_r, q), float(v))
    with _HAT_LOCK:
        table = np.array([1.0 if q == 0 else _HAT_CACHE[(key_r, int(q))] for q in uniq])
    out = table[inv]
    return float(out[0]) if single else out


def save_kernel_cache(path):
    """Persist the kernel-hat cache as CSV ``R,norm2,value``."""
    with _HAT_LOCK:
        items = sorted(_HAT_CACHE.items())
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["R", "norm2", "value"])
        for (r, q), v in items:
            w.writerow([repr(r), q, repr(v)])


def load_kernel_cache(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    with _HAT_LOCK:
        for row in rows:
            _HAT_CACHE[(float(row["R"]), int(row["norm2"]))] = float(row["value"])
    return len(rows)
