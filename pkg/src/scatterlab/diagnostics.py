"""
Observables of eigenfunction data: smoothed densities, two-point products,
decay fits, matrix elements of trigonometric polynomials, thin-annulus
mass splits, circle statistics and coefficient profiles.

Everything is computed on the Fourier side from ``g(xi) = D(xi) / (|xi|^2 - lam)``.
With ``A(zeta) = sum_xi g(xi) conj(g(xi - zeta))`` one has::

    |Psi|^2 (x)     = sum_zeta A(zeta) e_zeta(x)
    Phi(x)          = sum_zeta e_zeta(x) chi_R^(zeta) A(zeta)
    <a Psi, Psi>    = sum_zeta a^(-zeta) A(zeta)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import fft

from .errors import DomainError
from .greens import _hat_radial, kernel_hat, nearest_norm_distance, torus_distance
from .spectral import (Estimate, FourierAmplitudes, amplitude_grid, autocorrelation, eigenfunction_amplitudes,
                       l2_norm_sq, required_radius_sq)

#: Mode retention: keep ``xi`` with ``|c_lam(xi)| >= THETA * max |c_lam|``.
THETA = 1e-4
#: ``zeta`` with ``|zeta| R`` above this are dropped from density sums.
DENSITY_CUTOFF = 48.0
DEFAULT_TOL = 1e-2


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------

class TrigPolynomial:
    """Real trigonometric polynomial ``a(x) = sum_zeta a^(zeta) e_zeta(x)``.

    Parameters
    ----------
    coefficients : mapping
        ``(z1, z2) -> complex``; must satisfy ``a^(-zeta) = conj(a^(zeta))``.
    """

    def __init__(self, coefficients):
        coeffs = {}
        for key, val in dict(coefficients).items():
            z = (int(key[0]), int(key[1]))
            if complex(val) != 0:
                coeffs[z] = complex(val)
        for z, v in coeffs.items():
            w = coeffs.get((-z[0], -z[1]), 0j)
            if abs(w - v.conjugate()) > 1e-12 * max(abs(v), 1.0):
                raise DomainError(f"coefficients at {z} and its negative are not conjugate")
        if (0, 0) in coeffs:
            coeffs[(0, 0)] = complex(coeffs[(0, 0)].real)
        self.coefficients = coeffs

    @property
    def degree(self):
        return max((math.ceil(math.hypot(*z)) for z in self.coefficients), default=0)

    @property
    def mean(self):
        return self.coefficients.get((0, 0), 0j).real

    def sup_bound(self):
        """``sum |a^(zeta)|``, an upper bound for ``max |a|``."""
        return float(sum(abs(v) for v in self.coefficients.values()))

    def __call__(self, x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1])
        for (z1, z2), v in self.coefficients.items():
            out = out + (v * np.exp(2j * np.pi * (z1 * x[..., 0] + z2 * x[..., 1]))).real
        return out

    @classmethod
    def parse(cls, text):
        """From ``"z1:z2=re[+im j];..."``, e.g. ``"0:0=1;1:0=0.5;-1:0=0.5"``."""
        coeffs = {}
        for item in filter(None, (s.strip() for s in text.split(";"))):
            key, _, val = item.partition("=")
            z1, z2 = key.split(":")
            coeffs[(int(z1), int(z2))] = complex(val.replace(" ", ""))
        return cls(coeffs)

    def format(self):
        def num(v):
            return repr(v.real) if v.imag == 0 else repr(v).strip("()")
        return ";".join(f"{z[0]}:{z[1]}={num(v)}" for z, v in sorted(self.coefficients.items()))

    def __eq__(self, other):
        return isinstance(other, TrigPolynomial) and self.coefficients == other.coefficients

    def __repr__(self):
        return f"TrigPolynomial({self.format()!r})"


def default_test_polynomial():
    """``a(x) = 1 + cos(2 pi x_1)``."""
    return TrigPolynomial({(0, 0): 1.0, (1, 0): 0.5, (-1, 0): 0.5})


@dataclass(frozen=True)
class DecayModel:
    """``A exp(-B r)`` (``form="exponential"``) or ``A r^-alpha`` (``form="power"``)."""

    form: str
    A: float
    rate: float

    def __post_init__(self):
        if self.form not in ("exponential", "power"):
            raise DomainError(f"unknown decay form {self.form!r}")
        if not (self.A > 0 and self.rate > 0):
            raise DomainError("decay models need A > 0 and a positive rate")

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        if self.form == "exponential":
            return self.A * np.exp(-self.rate * r)
        return self.A * r ** (-self.rate)


@dataclass(frozen=True, eq=False)
class DensityRecord:
    """Smoothed densities at a batch of points.

    ``mode_tail`` bounds the error from modes outside the amplitude support;
    ``zeta_tail_estimate`` estimates (does not certify) the effect of the
    ``zeta`` cutoff.
    """

    lam: float
    radius: float
    points: np.ndarray
    phi: np.ndarray
    Phi: np.ndarray
    l2: float
    mode_tail: float
    zeta_tail_estimate: float
    zeta_max: int


# ---------------------------------------------------------------------------
# amplitude preparation
# ---------------------------------------------------------------------------

def retention_radius_sq(lam, table, theta=THETA):
    """Radius^2 keeping every ``xi`` with ``1/|n - lam| >= theta / dist(lam, norms)``."""
    return int(math.floor(lam + nearest_norm_distance(lam, table) / theta))


def retained_amplitudes(ef, table, tol=DEFAULT_TOL, theta=THETA):
    """Disc amplitudes of ``ef`` large enough for :func:`l2_norm_sq` at ``tol``."""
    q = retention_radius_sq(ef.lambda_star, table, theta)
    amp = eigenfunction_amplitudes(ef, q)
    try:
        l2_norm_sq(ef.lambda_star, amp, table, tol)
        return amp
    except DomainError:
        partial = float(np.sum(np.abs(amplitude_grid(amp, ef.lambda_star)[0]) ** 2))
        q = required_radius_sq(ef.lambda_star, amp.sup_bound, tol * partial, table)
        return eigenfunction_amplitudes(ef, q)


def _norms(ef, amplitudes, table, tol):
    """``(l2 estimate, ||Psi_in||, bound on ||Psi_out||)``."""
    l2 = _l2(ef.lambda_star, amplitudes, table, tol)
    return l2, math.sqrt(l2.value), math.sqrt(l2.tail_bound)


def _l2(lam, amplitudes, table, tol):
    if amplitudes.radius_sq is None:
        if not amplitudes.exact_support:
            raise DomainError("amplitudes neither cover a disc nor describe a finitely supported function")
        grid, k = amplitude_grid(amplitudes, lam)
        return Estimate(autocorrelation(grid, k, (0, 0)).real, 0.0, None)
    return l2_norm_sq(lam, amplitudes, table, tol)


def finite_amplitudes(support, values):
    """Amplitudes of a function whose Fourier data vanish off ``support``."""
    support = np.asarray(support, dtype=np.int64).reshape(-1, 2)
    values = np.asarray(values, dtype=complex).ravel()
    return FourierAmplitudes(support, values, float(np.abs(values).sum()), None, exact_support=True)


def _truncation_error(sup_a, norm_in, norm_out):
    return sup_a * (2 * norm_in * norm_out + norm_out ** 2)


# ---------------------------------------------------------------------------
# smoothed densities
# ---------------------------------------------------------------------------

def _autocorrelation_grid(grid, k, zmax):
    """``A(zeta)`` for ``|zeta_i| <= zmax`` via zero-padded FFT; exact value at 0."""
    size = 2 * k + 1
    n = fft.next_fast_len(2 * size - 1)
    f = fft.fft2(grid, s=(n, n))
    corr = fft.ifft2(f * np.conj(f))
    idx = np.arange(-zmax, zmax + 1) % n
    a = corr[np.ix_(idx, idx)]
    a[zmax, zmax] = autocorrelation(grid, k, (0, 0))
    return a


_ENVELOPE = {}


def hat_envelope(cutoff):
    """``max |chi^|`` over ``|zeta| R`` in ``[cutoff, cutoff + 60]`` on a fine radial grid."""
    key = round(float(cutoff), 6)
    if key not in _ENVELOPE:
        k = 2 * math.pi * np.linspace(cutoff, cutoff + 60, 4001)
        _ENVELOPE[key] = float(np.abs(_hat_radial(k, 1e-13)).max())
    return _ENVELOPE[key]


def density_weights(ef, amplitudes, kernel, cutoff=DENSITY_CUTOFF):
    """Fourier weights ``W(zeta) = chi^(zeta) A(zeta)`` of ``Phi`` on a centred box.

    Returns ``(W, zmax, dropped)`` where ``dropped = sum |A|`` over the
    ``zeta`` excluded by the cutoff.
    """
    grid, k = amplitude_grid(amplitudes, ef.lambda_star)
    zfull = 2 * k
    zcut = int(math.floor(cutoff / kernel.radius))
    zmax = min(zfull, zcut)
    a_full = _autocorrelation_grid(grid, k, zfull)
    z = np.arange(-zfull, zfull + 1)
    n2 = z[:, None] ** 2 + z[None, :] ** 2
    keep = n2 <= (cutoff / kernel.radius) ** 2
    dropped = float(np.abs(a_full[~keep]).sum())
    a = a_full[zfull - zmax:zfull + zmax + 1, zfull - zmax:zfull + zmax + 1]
    keep = keep[zfull - zmax:zfull + zmax + 1, zfull - zmax:zfull + zmax + 1]
    zz = np.arange(-zmax, zmax + 1)
    z1, z2 = np.meshgrid(zz, zz, indexing="ij")
    hat = np.zeros(a.shape)
    hat[keep] = kernel_hat(kernel, np.stack([z1[keep], z2[keep]], axis=1))
    return hat * a, zmax, dropped


def evaluate_fourier(weights, zmax, x):
    """``Re sum_zeta W(zeta) e_zeta(x)`` for points ``x`` of shape ``(P, 2)``."""
    x = np.asarray(x, dtype=float).reshape(-1, 2)
    z = np.arange(-zmax, zmax + 1)
    e1 = np.exp(2j * np.pi * np.outer(x[:, 0], z))
    e2 = np.exp(2j * np.pi * np.outer(x[:, 1], z))
    return np.einsum("pb,pb->p", e1 @ weights, e2).real


def density_record(ef, amplitudes, kernel, x, table=None, tol=DEFAULT_TOL, cutoff=DENSITY_CUTOFF):
    """Smoothed densities ``Phi`` and ``phi = Phi / ||G||^2`` at points ``x``."""
    l2, norm_in, norm_out = _norms(ef, amplitudes, table, tol)
    weights, zmax, dropped = density_weights(ef, amplitudes, kernel, cutoff)
    pts = np.asarray(x, dtype=float).reshape(-1, 2)
    big_phi = evaluate_fourier(weights, zmax, pts)
    return DensityRecord(ef.lambda_star, kernel.radius, pts, big_phi / l2.value, big_phi, l2.value,
                         _truncation_error(kernel.sup(), norm_in, norm_out),
                         hat_envelope(cutoff) * dropped, zmax)


def smoothed_density(ef, amplitudes, kernel, x, table=None, tol=DEFAULT_TOL, cutoff=DENSITY_CUTOFF):
    """``(Phi(x), phi(x))`` at one torus point, or arrays for a batch of points."""
    rec = density_record(ef, amplitudes, kernel, x, table, tol, cutoff)
    if np.ndim(x) == 1:
        return float(rec.Phi[0]), float(rec.phi[0])
    return rec.Phi, rec.phi


def check_separation(x, y, kernel):
    d = float(torus_distance(x, y))
    if d < 4 * kernel.radius:
        raise DomainError(f"points {d:.4g} apart; two-point products need separation >= 4R = {4 * kernel.radius:.4g}")
    return d


def two_point(ef, amplitudes, kernel, x, y, table=None, tol=DEFAULT_TOL, cutoff=DENSITY_CUTOFF):
    """``phi(x) phi(y)`` for points at least ``4R`` apart on the torus."""
    check_separation(x, y, kernel)
    rec = density_record(ef, amplitudes, kernel, np.stack([np.asarray(x, float), np.asarray(y, float)]),
                         table, tol, cutoff)
    return float(rec.phi[0] * rec.phi[1])


def correlation_samples(ef, amplitudes, kernel, pairs, table=None, tol=DEFAULT_TOL, cutoff=DENSITY_CUTOFF):
    """``[(|x - y|, phi(x) phi(y))]`` for a list of point pairs, sharing one density evaluation."""
    pairs = [(np.asarray(x, float), np.asarray(y, float)) for x, y in pairs]
    dists = [check_separation(x, y, kernel) for x, y in pairs]
    pts = np.array([p for pair in pairs for p in pair]).reshape(-1, 2)
    rec = density_record(ef, amplitudes, kernel, pts, table, tol, cutoff)
    phi = rec.phi.reshape(-1, 2)
    return [(d, float(a * b)) for d, (a, b) in zip(dists, phi)]


def smoothing_window(lam, radius):
    """Where ``radius`` sits relative to ``100 / sqrt(lam) <= R <= 1/10`` (unit torus)."""
    lower = 100 / math.sqrt(lam) if lam > 0 else math.inf
    return {"lower": lower, "upper": 0.1, "lower_ok": radius >= lower, "upper_ok": radius <= 0.1}


# ---------------------------------------------------------------------------
# decay fits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class FitResult:
    model: DecayModel
    residual: float


@dataclass(frozen=True)
class Verdict:
    """Comparison of exponential and power-law fits to two-point data."""

    exponential: FitResult
    power: FitResult | None
    better: str
    min_constant: float
    reference: DecayModel
    n_used: int
    n_filtered: int

    def to_dict(self):
        def fit(f):
            if f is None:
                return None
            return {"A": f.model.A, "rate": f.model.rate, "residual": f.residual}
        return {"exponential": fit(self.exponential), "power": fit(self.power), "better": self.better,
                "min_constant": self.min_constant, "reference": {"form": self.reference.form,
                "A": self.reference.A, "rate": self.reference.rate},
                "n_used": self.n_used, "n_filtered": self.n_filtered}


def _linear_fit(t, y):
    design = np.stack([np.ones_like(t), -t], axis=1)
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    res = y - design @ coef
    return coef, float(np.sqrt(np.mean(res ** 2)))


def localization_verdict(samples, model=None, min_distances=8):
    """Fit ``log(product)`` against both decay forms.

    ``min_constant`` is ``max value / f(r)`` for ``model`` (default: the
    fitted exponential).  Nonpositive products cannot be fitted in log
    scale; they are dropped and counted in ``n_filtered``.
    """
    arr = np.asarray(samples, dtype=float).reshape(-1, 2)
    r, v = arr[:, 0], arr[:, 1]
    good = v > 0
    r, v = r[good], v[good]
    if len(np.unique(r)) < min_distances:
        raise DomainError(f"need at least {min_distances} distinct distances with positive products")
    logv = np.log(v)
    (la, b), res_e = _linear_fit(r, logv)
    # a decreasing fit can fail on increasing data; keep the model valid and let the residual speak
    expo = FitResult(DecayModel("exponential", math.exp(la), max(b, 1e-300)), res_e)
    power = None
    if np.all(r > 0):
        (lp, alpha), res_p = _linear_fit(np.log(r), logv)
        power = FitResult(DecayModel("power", math.exp(lp), max(alpha, 1e-300)), res_p)
    better = "exponential" if power is None or res_e <= res_p else "power"
    ref = expo.model if model is None else model
    c_min = float(np.max(v / ref(r)))
    return Verdict(expo, power, better, c_min, ref, int(good.sum()), int((~good).sum()))


# ---------------------------------------------------------------------------
# matrix elements and mass splits
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class MatrixElement:
    """``<a Psi, Psi>`` on the retained modes, with truncation bound and ``||Psi||^2``."""

    value: complex
    tail_bound: float
    norm_sq: Estimate

    @property
    def normalized(self):
        return self.value / self.norm_sq.value

    @property
    def normalized_tail(self):
        l2 = self.norm_sq.value
        return (self.tail_bound + abs(self.value) * self.norm_sq.tail_bound / l2) / l2

    def __complex__(self):
        return complex(self.value)


def matrix_element(ef, amplitudes, a, table=None, tol=DEFAULT_TOL):
    """``<a Psi, Psi> = sum_zeta a^(-zeta) A(zeta)`` with a truncation bound.

    The error from modes outside the support is at most
    ``max|a| (2 ||Psi_in|| ||Psi_out|| + ||Psi_out||^2)``.
    """
    l2, norm_in, norm_out = _norms(ef, amplitudes, table, tol)
    grid, k = amplitude_grid(amplitudes, ef.lambda_star)
    total = 0j
    for (z1, z2), coef in sorted(a.coefficients.items()):
        total += a.coefficients.get((-z1, -z2), 0j) * autocorrelation(grid, k, (z1, z2))
    return MatrixElement(total, _truncation_error(a.sup_bound(), norm_in, norm_out), l2)


def annulus_split(ef, amplitudes, delta, table=None, tol=DEFAULT_TOL):
    """Mass of ``Psi`` on ``{xi : ||xi|^2 - n_k| <= n_k^delta}`` and off it.

    ``n_k`` is the lower end of the eigenfunction's gap.  ``mass_out`` is
    ``||Psi||^2 - mass_in`` on the retained modes.
    """
    if not 0 < delta < 0.5:
        raise DomainError(f"delta must lie in (0, 1/2), got {delta}")
    l2 = _l2(ef.lambda_star, amplitudes, table, tol)
    nk = ef.gap[0]
    n = (amplitudes.support ** 2).sum(axis=1)
    inside = np.abs(n - nk) <= nk ** delta
    g = amplitudes.values[inside] / (n[inside] - ef.lambda_star)
    mass_in = float(np.sum(np.abs(g) ** 2))
    return mass_in, l2.value - mass_in


def circle_statistic(amplitudes, n, table):
    """``F(n) = sum_{|xi|^2 = n} |C(xi)|^2``."""
    if n > table.max_norm or n < 0:
        raise DomainError(f"norm {n} outside the table range")
    pts = table.points(n)
    if len(pts) == 0:
        return 0.0
    return float(np.sum(np.abs(amplitudes.lookup(pts)) ** 2))


# ---------------------------------------------------------------------------
# coefficient profiles
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ProfileRow:
    dist: float
    mean: float
    stderr: float
    count: int


def coefficient_profile(eigenfunctions, center, digits=9):
    """Mean ``|c_xi|^2`` binned by torus distance of the label ``xi`` from ``center``.

    Distances are measured on the torus of side ``L`` in lattice units.
    ``center="max"`` recenters each eigenfunction on its largest coefficient.
    """
    efs = list(eigenfunctions)
    if not efs:
        raise DomainError("empty eigenfunction list")
    sizes = {ef.L for ef in efs}
    gaps = {tuple(ef.gap) for ef in efs}
    if len(sizes) != 1 or None in sizes:
        raise DomainError(f"all eigenfunctions must share one torus size, got {sorted(map(str, sizes))}")
    if len(gaps) != 1:
        raise DomainError("all eigenfunctions must share one gap")
    L = sizes.pop()
    bins = {}
    for ef in efs:
        if ef.origin_labels is None:
            raise DomainError("coefficient profiles need lattice labels")
        if isinstance(center, str):
            if center != "max":
                raise DomainError(f"unknown center {center!r}")
            c0 = ef.origin_labels[int(np.argmax(np.abs(ef.coefficients)))]
        else:
            c0 = center
        dist = np.round(torus_distance(ef.origin_labels, np.asarray(c0, float), size=L), digits)
        for d, c in zip(dist, ef.coefficients):
            bins.setdefault(float(d), []).append(abs(c) ** 2)
    rows = []
    for d in sorted(bins):
        vals = np.array(sorted(bins[d]))
        err = float(vals.std(ddof=1) / math.sqrt(len(vals))) if len(vals) > 1 else 0.0
        rows.append(ProfileRow(d, float(vals.mean()), err, len(vals)))
    return rows
