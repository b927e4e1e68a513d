"""
Random displacement fields, scatterer configurations, and reproducible
Monte Carlo estimation over realizations.

Every site of every realization owns its own Philox stream: the key is the
run seed and the counter words encode ``(realization, site, L)``.  Results
therefore depend only on the seed and realization index, never on how
realizations are scheduled across workers.
"""

from __future__ import annotations

import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import integrate
from threadpoolctl import threadpool_limits

from . import diagnostics
from .errors import DegenerateConfigurationError, DomainError, EmptyEnsembleError
from .lattice import LatticeTable, build_table
from .spectral import DEFAULT_TOL as SOLVE_TOL
from .spectral import ROW_TOL, GapSecular, ScattererConfig, extract_eigenfunction, find_roots_in_gap, l2_norm_sq

#: Second key word separating this package's streams from other Philox users.
STREAM_TAG = 0x5CA77E12
_MASK64 = (1 << 64) - 1


# ---------------------------------------------------------------------------
# radial profiles
# ---------------------------------------------------------------------------

class RadialProfile:
    """A radial density ``P`` on ``[0, 1]``, normalized so ``2 pi int_0^1 P(s) s ds = 1``.

    Radii of displacements (in units of ``epsilon0``) have density
    ``2 pi P(s) s``; the factor ``s`` is the planar area element.
    """

    def __init__(self, name, func, grid_size=1 << 14):
        self.name = name
        self._func = func
        s = np.linspace(0.0, 1.0, grid_size + 1)
        raw = np.asarray(func(s), dtype=float)
        if not np.all(np.isfinite(raw)) or np.any(raw < 0):
            raise DomainError(f"profile {name!r} must be finite and nonnegative on [0, 1]")
        if not raw[: max(grid_size // 100, 2)].max() > 0:
            raise DomainError(f"profile {name!r} must contain 0 in its support")
        mass, _ = integrate.quad(lambda t: 2 * math.pi * float(func(t)) * t, 0.0, 1.0,
                                 epsabs=0, epsrel=1e-12, limit=200)
        if not (math.isfinite(mass) and mass > 0):
            raise DomainError(f"profile {name!r} cannot be normalized (mass {mass})")
        self.mass = mass
        dens = 2 * math.pi * raw * s / mass
        cdf = integrate.cumulative_simpson(dens, x=s, initial=0.0)
        cdf = np.maximum.accumulate(np.clip(cdf / cdf[-1], 0.0, 1.0))
        self.grid, self.cdf_table = s, cdf
        # drop flat stretches so the inverse is single valued
        keep = np.concatenate([[True], np.diff(cdf) > 0])
        self._inv_x, self._inv_y = cdf[keep], s[keep]

    def __call__(self, s):
        """Normalized ``P(s)``."""
        s = np.asarray(s, dtype=float)
        return np.where((s >= 0) & (s <= 1), self._func(np.clip(s, 0, 1)) / self.mass, 0.0)

    def cdf(self, s):
        """Distribution function of ``|omega| / epsilon0``."""
        return np.interp(s, self.grid, self.cdf_table)

    def inverse_cdf(self, u):
        return np.interp(u, self._inv_x, self._inv_y)


def _bump_profile(s):
    s = np.asarray(s, dtype=float)
    inside = s < 1
    return np.where(inside, np.exp(-1.0 / np.where(inside, 1 - s * s, 1.0)), 0.0)


def _cone_profile(s):
    return np.clip(1.0 - np.asarray(s, dtype=float), 0.0, None)


PROFILES = {}


def register_profile(name, func):
    """Add a radial profile under ``name``; returns the normalized profile."""
    PROFILES[name] = RadialProfile(name, func)
    return PROFILES[name]


register_profile("bump", _bump_profile)
register_profile("cone", _cone_profile)


def get_profile(name):
    try:
        return PROFILES[name]
    except KeyError:
        raise DomainError(f"unknown profile {name!r}; known: {', '.join(sorted(PROFILES))}") from None


# ---------------------------------------------------------------------------
# displacement fields
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class DisorderParams:
    epsilon0: float
    L: int
    profile: str = "bump"

    def __post_init__(self):
        if not 0 < self.epsilon0 < 0.25:
            raise DomainError(f"epsilon0 must lie in (0, 1/4), got {self.epsilon0}")
        if int(self.L) != self.L or self.L < 1:
            raise DomainError(f"L must be a positive integer, got {self.L}")
        get_profile(self.profile)


@dataclass(frozen=True, eq=False)
class DisplacementField:
    """Displacements ``omega`` of the sites ``labels`` of one realization."""

    labels: np.ndarray
    omega: np.ndarray
    seed: int
    realization_index: int
    params: DisorderParams

    @property
    def L(self):
        return self.params.L


def site_labels(L):
    """Lattice sites ``(a, b)``, ``0 <= a, b < L``, in row-major order."""
    a, b = np.meshgrid(np.arange(L), np.arange(L), indexing="ij")
    return np.stack([a.ravel(), b.ravel()], axis=1).astype(np.int64)


def stream_counter(index, label, L):
    """Philox counter for one site: ``[draw, realization, site, L]``."""
    a, b = int(label[0]), int(label[1])
    return [0, int(index) & _MASK64, ((a & 0xFFFFFFFF) << 32) | (b & 0xFFFFFFFF), int(L)]


def site_stream(seed, index, label, L):
    key = [int(seed) & _MASK64, STREAM_TAG]
    return np.random.Generator(np.random.Philox(key=key, counter=stream_counter(index, label, L)))


def sample_field(params, seed, index):
    """Draw ``omega_xi`` for every site of ``(Z/L)^2`` independently."""
    prof = get_profile(params.profile)
    labels = site_labels(params.L)
    u = np.array([site_stream(seed, index, lab, params.L).random(2) for lab in labels])
    radius = params.epsilon0 * prof.inverse_cdf(u[:, 0])
    angle = 2 * math.pi * u[:, 1]
    omega = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1)
    return DisplacementField(labels, omega, int(seed), int(index), params)


def to_config(field_, phase):
    """Scatterers at ``(xi + omega_xi) / L`` on the unit torus."""
    p = field_.params
    pts = (field_.labels + field_.omega) / p.L
    return ScattererConfig(phase=phase, points=pts, L=p.L, origin_labels=field_.labels, epsilon0=p.epsilon0)


# ---------------------------------------------------------------------------
# estimators
# ---------------------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class EstimatorContext:
    """Inputs shared by all realizations besides the eigenfunction."""

    table: LatticeTable
    tol: float = diagnostics.DEFAULT_TOL
    polynomial: diagnostics.TrigPolynomial = field(default_factory=diagnostics.default_test_polynomial)
    delta: float = 0.25


def _est_lambda(ef, ctx):
    return ef.lambda_star


def _est_l2(ef, ctx):
    amp = diagnostics.retained_amplitudes(ef, ctx.table, ctx.tol)
    return l2_norm_sq(ef.lambda_star, amp, ctx.table, ctx.tol).value


def _est_matrix_element(ef, ctx):
    amp = diagnostics.retained_amplitudes(ef, ctx.table, ctx.tol)
    me = diagnostics.matrix_element(ef, amp, ctx.polynomial, ctx.table, ctx.tol)
    return abs(me.normalized - ctx.polynomial.mean)


def _est_annulus(ef, ctx):
    amp = diagnostics.retained_amplitudes(ef, ctx.table, ctx.tol)
    mass_in, mass_out = diagnostics.annulus_split(ef, amp, ctx.delta, ctx.table, ctx.tol)
    return mass_in / (mass_in + mass_out)


def _est_max_coefficient(ef, ctx):
    return float(np.max(np.abs(ef.coefficients) ** 2))


ESTIMATORS = {
    "lambda_star": _est_lambda,
    "l2_norm_sq": _est_l2,
    "matrix_element_deviation": _est_matrix_element,
    "annulus_mass_fraction": _est_annulus,
    "max_coefficient_sq": _est_max_coefficient,
}


def get_estimator(name):
    try:
        return ESTIMATORS[name]
    except KeyError:
        raise DomainError(f"unknown estimator {name!r}; known: {', '.join(sorted(ESTIMATORS))}") from None


# ---------------------------------------------------------------------------
# ensemble runs
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class RealizationRecord:
    """Outcome of one realization; ``values`` maps estimator names to results."""

    index: int
    status: str
    values: dict = field(default_factory=dict)
    lambda_star: float | None = None
    residual: float | None = None
    coefficients: tuple = ()
    points: tuple = ()


@dataclass(frozen=True, eq=False)
class EnsembleStats:
    estimator: str
    count: int
    mean: float
    stderr: float
    values: tuple
    indices: tuple
    n_excluded: int
    exclusions: dict
    records: tuple

    @property
    def exclusion_rate(self):
        total = self.count + self.n_excluded
        return self.n_excluded / total if total else 0.0


@dataclass(frozen=True, eq=False)
class _Task:
    params: DisorderParams
    phase: float
    gap: tuple
    estimators: tuple
    ctx: EstimatorContext
    seed: int
    delta0: float
    solve_tol: float
    keep_eigenfunction: bool


def solve_realization(params, phase, gap, seed, index, delta0, solve_tol=SOLVE_TOL):
    """Lowest eigenfunction of one realization in the clipped gap.

    Returns ``(eigenfunction or None, status)`` with status ``"ok"``,
    ``"empty_gap"`` or ``"degenerate"``.
    """
    try:
        cfg = to_config(sample_field(params, seed, index), phase)
    except DegenerateConfigurationError:
        return None, "degenerate"
    secular = GapSecular(cfg, gap, min(solve_tol, ROW_TOL))
    seeds = find_roots_in_gap(cfg, gap, delta0, solve_tol, secular=secular, first_only=True)
    if not seeds:
        return None, "empty_gap"
    try:
        ef = extract_eigenfunction(cfg, seeds[0].lam, seeds[0].vector, secular=secular)
    except DegenerateConfigurationError:
        return None, "degenerate"
    return ef, "ok"


def _run_one(task, index):
    with threadpool_limits(limits=1):
        ef, status = solve_realization(task.params, task.phase, task.gap, task.seed, index,
                                       task.delta0, task.solve_tol)
        if ef is None:
            return RealizationRecord(index, status)
        values = {name: float(get_estimator(name)(ef, task.ctx)) for name in task.estimators}
    extra = {}
    if task.keep_eigenfunction:
        extra = {"coefficients": tuple(complex(c) for c in ef.coefficients),
                 "points": tuple(tuple(map(float, p)) for p in ef.points)}
    return RealizationRecord(index, "ok", values, ef.lambda_star, ef.residual, **extra)


def _run_chunk(args):
    task, indices = args
    return [_run_one(task, i) for i in indices]


def default_context(gap, tol=diagnostics.DEFAULT_TOL, **kw):
    """Context with a lattice table reaching well beyond the gap."""
    return EstimatorContext(build_table(max(4 * int(gap[1]), 1000)), tol, **kw)


def run_ensemble(params, phase, gap, estimator, n_realizations, seed, workers=1, ctx=None,
                 delta0=1e-2, solve_tol=SOLVE_TOL, keep_eigenfunctions=False):
    """Monte Carlo mean of ``estimator`` over realizations ``0 .. n-1``.

    Realizations whose clipped gap holds no eigenvalue, or whose kernel is
    degenerate, are excluded and counted.  The result depends only on the
    arguments, not on ``workers``.

    Raises
    ------
    EmptyEnsembleError
        If every realization is excluded.
    """
    return run_estimators(params, phase, gap, (estimator,), n_realizations, seed, workers, ctx,
                          delta0, solve_tol, keep_eigenfunctions)[estimator]


def run_estimators(params, phase, gap, estimators, n_realizations, seed, workers=1, ctx=None,
                   delta0=1e-2, solve_tol=SOLVE_TOL, keep_eigenfunctions=False):
    """Like :func:`run_ensemble` for several estimators sharing each solve.

    Returns a dict from estimator name to :class:`EnsembleStats`.
    """
    if n_realizations < 1:
        raise DomainError("need at least one realization")
    estimators = tuple(estimators)
    if not estimators:
        raise DomainError("no estimators requested")
    for name in estimators:
        get_estimator(name)
    if ctx is None:
        ctx = default_context(gap)
    task = _Task(params, float(phase), (int(gap[0]), int(gap[1])), estimators, ctx, int(seed),
                 float(delta0), float(solve_tol), keep_eigenfunctions)
    indices = list(range(int(n_realizations)))
    if workers <= 1:
        records = _run_chunk((task, indices))
    else:
        chunks = [(task, indices[w::workers]) for w in range(workers) if indices[w::workers]]
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = [r for part in pool.map(_run_chunk, chunks) for r in part]
    return {name: summarize(name, records) for name in estimators}


def summarize(estimator, records):
    """Aggregate realization records in index order."""
    records = tuple(sorted(records, key=lambda r: r.index))
    ok = [r for r in records if r.status == "ok"]
    exclusions = {}
    for r in records:
        if r.status != "ok":
            exclusions[r.status] = exclusions.get(r.status, 0) + 1
    if not ok:
        raise EmptyEnsembleError(len(records), exclusions)
    values = tuple(r.values[estimator] for r in ok)
    count = len(values)
    mean = math.fsum(values) / count
    if count > 1:
        var = math.fsum((v - mean) ** 2 for v in values) / (count - 1)
        stderr = math.sqrt(var / count)
    else:
        stderr = 0.0
    return EnsembleStats(estimator, count, mean, stderr, values, tuple(r.index for r in ok),
                         len(records) - count, exclusions, records)
