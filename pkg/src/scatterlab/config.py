"""Run configuration: validation and a lossless ``key=value`` text form."""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field, fields

from .diagnostics import TrigPolynomial
from .ensemble import ESTIMATORS, get_estimator, get_profile
from .errors import DomainError

MAX_SMOOTHING_RADIUS = 0.1

# Fields that do not influence results; they stay out of the manifest hash.
OPERATIONAL_FIELDS = ("workers", "out", "cache_dir")


def _parse_bool(text):
    low = text.strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise DomainError(f"not a boolean: {text!r}")


def _parse_opt_int(text):
    return None if text.strip().lower() == "none" else int(text)


def _parse_int_tuple(text):
    text = text.strip()
    return tuple(int(t) for t in text.split(",")) if text else ()


def _parse_str_tuple(text):
    text = text.strip()
    return tuple(t.strip() for t in text.split(",")) if text else ()


def _fmt(value):
    if isinstance(value, bool):
        return "true" if value else "false"
    if value is None:
        return "none"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class RunConfig:
    """Parameters shared by all subcommands.

    Exactly one gap selector may be set: ``gap_norm`` (the lower end
    ``n_k`` of the gap), ``gap_index`` (position of ``n_k`` in the sorted
    norm list, starting at 0) or ``window_lo``/``window_hi`` (every ``n_k``
    in the closed window; ``subsequence`` restricts these to the filtered
    subsequence).
    """

    L: int = 4
    phase: float = math.pi / 2
    epsilon0: float = 0.01
    profile: str = "bump"
    gap_norm: int | None = None
    gap_index: int | None = None
    window_lo: int | None = None
    window_hi: int | None = None
    subsequence: bool = False
    delta0: float = 0.01
    solve_tol: float = 1e-3
    diag_tol: float = 1e-2
    smoothing_radius: float = 0.05
    annulus_delta: float = 0.25
    polynomial: str = "0:0=1.0;1:0=0.5;-1:0=0.5"
    seed: int = 0
    realization: int = 0
    n_realizations: int = 16
    grid: int = 24
    workers: int = 1
    out: str = "out"
    cache_dir: str = ""
    estimators: tuple = ("matrix_element_deviation",)
    physical_units: bool = False
    L_scan: tuple = ()
    max_norm: int = 1000

    def __post_init__(self):
        if int(self.L) != self.L or self.L < 1:
            raise DomainError(f"L must be a positive integer, got {self.L}")
        if not -math.pi < self.phase < math.pi:
            raise DomainError(f"phase must lie in the open interval (-pi, pi), got {self.phase}")
        if not 0 < self.epsilon0 < 0.25:
            raise DomainError(f"epsilon0 must lie in (0, 1/4), got {self.epsilon0}")
        get_profile(self.profile)
        selectors = [self.gap_norm is not None, self.gap_index is not None,
                     self.window_lo is not None or self.window_hi is not None]
        if sum(selectors) > 1:
            raise DomainError("choose one of gap_norm, gap_index or window_lo/window_hi")
        if selectors[2] and (self.window_lo is None or self.window_hi is None or self.window_lo > self.window_hi):
            raise DomainError("a window needs window_lo <= window_hi")
        if self.gap_norm is not None and self.gap_norm < 0:
            raise DomainError("gap_norm must be nonnegative")
        if self.gap_index is not None and self.gap_index < 0:
            raise DomainError("gap_index must be nonnegative")
        if not self.delta0 > 0:
            raise DomainError(f"delta0 must be positive, got {self.delta0}")
        for name in ("solve_tol", "diag_tol"):
            if not 0 < getattr(self, name) < 1:
                raise DomainError(f"{name} must lie in (0, 1)")
        if not 0 < self.smoothing_radius <= MAX_SMOOTHING_RADIUS:
            raise DomainError(f"smoothing_radius must lie in (0, {MAX_SMOOTHING_RADIUS}], "
                              f"got {self.smoothing_radius}")
        if not 0 < self.annulus_delta < 0.5:
            raise DomainError("annulus_delta must lie in (0, 1/2)")
        TrigPolynomial.parse(self.polynomial)
        if self.seed < 0 or self.realization < 0:
            raise DomainError("seed and realization must be nonnegative")
        if self.n_realizations < 1:
            raise DomainError("n_realizations must be at least 1")
        if self.grid < 2:
            raise DomainError("grid must be at least 2")
        if self.workers < 1:
            raise DomainError("workers must be at least 1")
        for name in self.estimators:
            get_estimator(name)
        if not self.estimators:
            raise DomainError(f"need at least one estimator; known: {', '.join(sorted(ESTIMATORS))}")
        if any(int(x) != x or x < 1 for x in self.L_scan):
            raise DomainError("L_scan entries must be positive integers")
        if self.max_norm < 1:
            raise DomainError(f"max_norm must be positive, got {self.max_norm}")

    # ------------------------------------------------------------------
    @property
    def trig_polynomial(self):
        return TrigPolynomial.parse(self.polynomial)

    @property
    def sizes(self):
        """Torus sizes to run: the scan list if given, else ``(L,)``."""
        return self.L_scan or (self.L,)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self, include_operational=True):
        d = {}
        for f in fields(self):
            if not include_operational and f.name in OPERATIONAL_FIELDS:
                continue
            v = getattr(self, f.name)
            d[f.name] = list(v) if isinstance(v, tuple) else v
        return d

    def serialize(self):
        """One ``key=value`` line per field, floats in shortest round-trip form."""
        return "".join(f"{f.name}={_fmt(getattr(self, f.name))}\n" for f in fields(self))

    @classmethod
    def parse(cls, text, base=None):
        """Inverse of :meth:`serialize`; blank lines and ``#`` comments are skipped.

        Keys missing from ``text`` keep their values from ``base`` (or the
        defaults).
        """
        updates = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DomainError(f"line {lineno}: expected key=value, got {raw!r}")
            key, value = line.split("=", 1)
            updates[key.strip()] = value.strip()
        return cls.from_strings(updates, base)

    @classmethod
    def from_strings(cls, mapping, base=None):
        known = {f.name: f for f in fields(cls)}
        kwargs = {}
        for key, text in mapping.items():
            if key not in known:
                raise DomainError(f"unknown config key {key!r}")
            try:
                kwargs[key] = _PARSERS[key](text)
            except ValueError as exc:
                raise DomainError(f"bad value for {key}: {text!r} ({exc})") from None
        base = base or cls()
        return dataclasses.replace(base, **kwargs)


_PARSERS = {
    "L": int, "phase": float, "epsilon0": float, "profile": str,
    "gap_norm": _parse_opt_int, "gap_index": _parse_opt_int,
    "window_lo": _parse_opt_int, "window_hi": _parse_opt_int,
    "subsequence": _parse_bool, "delta0": float, "solve_tol": float, "diag_tol": float,
    "smoothing_radius": float, "annulus_delta": float, "polynomial": str,
    "seed": int, "realization": int, "n_realizations": int, "grid": int, "workers": int,
    "out": str, "cache_dir": str, "estimators": _parse_str_tuple, "physical_units": _parse_bool,
    "L_scan": _parse_int_tuple, "max_norm": int,
}
assert set(_PARSERS) == {f.name for f in fields(RunConfig)}
