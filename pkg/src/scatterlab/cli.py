"""Command-line front end: ``scatterlab {lattice,solve,ensemble,diagnose}``.

Exit codes: 0 success, 1 numeric failure or empty ensemble, 2 usage,
validation or capacity errors.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__, diagnostics, ensemble, lattice, output
from .config import RunConfig
from .errors import (CapacityError, DegenerateConfigurationError, DomainError, EmptyEnsembleError,
                     NumericError, ScatterlabError)
from .greens import SmoothingKernel, load_kernel_cache, save_kernel_cache, torus_distance
from .spectral import solve_gap

log = logging.getLogger("scatterlab")

EXIT_OK, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2

_FLAG_HELP = {
    "L": "torus size in lattice units; N = L^2 scatterers",
    "phase": "extension phase, strictly inside (-pi, pi)",
    "epsilon0": "displacement scale, in (0, 1/4)",
    "gap_norm": "select the gap starting at this norm",
    "gap_index": "select the gap starting at the k-th norm (from 0)",
    "window_lo": "select every gap starting in [window-lo, window-hi]",
    "subsequence": "restrict window gaps to the filtered subsequence",
    "estimators": "comma-separated estimator names",
    "L_scan": "comma-separated torus sizes; overrides L",
    "polynomial": "test polynomial as 'z1:z2=coef;...'",
    "smoothing_radius": "density smoothing radius on the unit torus, at most 0.1",
}


# ---------------------------------------------------------------------------
# argument parsing
# ---------------------------------------------------------------------------

def _flag(name):
    return "--" + name.replace("_", "-")


def _add_config_flags(p):
    p.add_argument("--config", help="key=value file; flags override its entries")
    p.add_argument("--append", action="store_true", help="append to outputs of the same manifest")
    for f in fields(RunConfig):
        if f.name in ("subsequence", "physical_units"):
            p.add_argument(_flag(f.name), dest=f.name, action="store_const", const="true", default=None,
                           help=_FLAG_HELP.get(f.name))
        else:
            p.add_argument(_flag(f.name), dest=f.name, default=None, metavar=f.name.upper(),
                           help=_FLAG_HELP.get(f.name))


def build_parser():
    parser = argparse.ArgumentParser(prog="scatterlab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"scatterlab {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "lattice": "tabulate norms, write the cache and a summary table",
        "solve": "eigenfunctions of one disorder realization",
        "ensemble": "Monte Carlo estimators over realizations",
        "diagnose": "smoothed densities, two-point decay verdicts, coefficient profiles",
    }
    for name, text in helps.items():
        _add_config_flags(sub.add_parser(name, help=text))
    return parser


def config_from_args(args):
    base = RunConfig()
    if args.config:
        base = RunConfig.parse(Path(args.config).read_text())
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig) if getattr(args, f.name) is not None}
    return RunConfig.from_strings(overrides, base)


# ---------------------------------------------------------------------------
# shared helpers
# ---------------------------------------------------------------------------

def _table_for(cfg, reach=0):
    """Table covering the gap selector, with room for estimator annuli."""
    top = max(cfg.gap_norm or 0, cfg.window_hi or 0, reach)
    max_norm = max(4 * top + 64, 1000)
    table = lattice.build_table(max_norm)
    if cfg.gap_index is not None:
        while len(table.norms) <= cfg.gap_index + 1:
            max_norm *= 2
            table = lattice.build_table(max_norm)
        table = lattice.build_table(max(4 * int(table.norms[cfg.gap_index + 1]) + 64, 1000))
    return table


def select_gaps(cfg, table):
    """Gaps ``(n_k, n_{k+1})`` named by the config's selector."""
    norms = table.norms
    if cfg.gap_norm is not None:
        n = cfg.gap_norm
        if not lattice.is_sum_of_two_squares(n):
            raise DomainError(f"{n} is not a sum of two squares, so it starts no gap")
        return [(n, table.successor(n))]
    if cfg.gap_index is not None:
        return [(int(norms[cfg.gap_index]), int(norms[cfg.gap_index + 1]))]
    if cfg.window_lo is not None:
        if cfg.subsequence:
            flt = lattice.SubsequenceFilter(delta0=cfg.delta0)
            starts = lattice.filter_subsequence(table, flt, cfg.window_lo, cfg.window_hi)
        else:
            starts = [int(n) for n in norms if cfg.window_lo <= n <= cfg.window_hi]
        if not starts:
            raise DomainError(f"no gaps start in [{cfg.window_lo}, {cfg.window_hi}]")
        return [(int(n), table.successor(int(n))) for n in starts]
    raise DomainError("no gap selected; pass --gap-norm, --gap-index or --window-lo/--window-hi")


def _scale(cfg, L):
    return output.physical_factor(L) if cfg.physical_units else 1.0


def _gap_out(gap, factor):
    return [gap[0], gap[1]] if factor == 1.0 else [gap[0] * factor, gap[1] * factor]


def _writer(cfg, command, append):
    return output.RunWriter(cfg.out, output.build_manifest(command, cfg), append=append)


def _save_config(writer, cfg):
    writer.path("config.txt").write_text(cfg.serialize())


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def cmd_lattice(cfg, append=False):
    """Write the lattice cache and a per-norm summary table."""
    table = lattice.build_table(cfg.max_norm)
    cdir = output.cache_dir(cfg)
    cdir.mkdir(parents=True, exist_ok=True)
    lattice.save_table(table, cdir / f"lattice-{cfg.max_norm}.txt")

    norms = table.norms
    shift_exp = lattice.SubsequenceFilter().shift_exponent
    checkable = [int(n) for n in norms[1:-1] if n + n ** shift_exp <= cfg.max_norm]
    selected = set()
    if checkable:
        flt = lattice.SubsequenceFilter(delta0=cfg.delta0)
        selected = set(lattice.filter_subsequence(table, flt, checkable[0], checkable[-1]))
    checkable = set(checkable)
    rows = []
    for i, n in enumerate(norms):
        n = int(n)
        nxt = int(norms[i + 1]) - n if i + 1 < len(norms) else ""
        disc = lattice.angular_discrepancy(table.points(n)) if n > 0 else ""
        flag = ("true" if n in selected else "false") if n in checkable else ""
        rows.append((n, int(table.count_array[i]), nxt, disc, flag))
    w = _writer(cfg, "lattice", append)
    _save_config(w, cfg)
    w.write_csv("lattice_summary.csv", ["n", "r2", "gap_next", "discrepancy", "in_subsequence"], rows)
    stats = {"max_norm": cfg.max_norm, "count": len(norms), "n_checked": len(checkable),
             "n_selected": len(selected)}
    if cfg.max_norm >= 3:
        stats["landau_ratio"] = lattice.landau_ratio(table, cfg.max_norm)
    w.write_json("lattice_stats.json", stats)
    return EXIT_OK


def cmd_solve(cfg, append=False):
    """All roots of the selected gaps for one realization."""
    table = _table_for(cfg)
    gaps = select_gaps(cfg, table)
    w = _writer(cfg, "solve", append)
    _save_config(w, cfg)
    records = []
    for L in cfg.sizes:
        params = ensemble.DisorderParams(cfg.epsilon0, L, cfg.profile)
        conf = ensemble.to_config(ensemble.sample_field(params, cfg.seed, cfg.realization), cfg.phase)
        factor = _scale(cfg, L)
        for gap in gaps:
            efs, n_degenerate = solve_gap(conf, gap, cfg.delta0, cfg.solve_tol)
            base = {"L": L, "gap": _gap_out(gap, factor), "seed": cfg.seed, "realization": cfg.realization}
            if not efs:
                records.append({**base, "empty": True,
                                "reason": "degenerate" if n_degenerate else "no_roots"})
                continue
            for i, ef in enumerate(efs):
                records.append({**base, "root": i, "lambda": ef.lambda_star * factor,
                                "residual": float(ef.residual), "tail_bound": float(ef.tail_bound),
                                "c": output.complex_list(ef.coefficients),
                                "points": [[float(a), float(b)] for a, b in ef.points]})
    w.write_jsonl("eigenfunctions.jsonl", records)
    return EXIT_OK


def cmd_ensemble(cfg, append=False):
    """Estimator means per (L, gap); per-realization records in JSONL."""
    table = _table_for(cfg)
    gaps = select_gaps(cfg, table)
    w = _writer(cfg, "ensemble", append)
    _save_config(w, cfg)
    ctx = ensemble.EstimatorContext(table, cfg.diag_tol, cfg.trig_polynomial, cfg.annulus_delta)
    status = EXIT_OK
    summary = []
    for L in cfg.sizes:
        params = ensemble.DisorderParams(cfg.epsilon0, L, cfg.profile)
        factor = _scale(cfg, L)
        for gap in gaps:
            try:
                stats = ensemble.run_estimators(params, cfg.phase, gap, cfg.estimators, cfg.n_realizations,
                                                cfg.seed, cfg.workers, ctx, cfg.delta0, cfg.solve_tol)
            except EmptyEnsembleError as exc:
                print(f"empty ensemble for L={L}, gap={gap}: {exc}", file=sys.stderr)
                w.write_jsonl("realizations.jsonl", [{"L": L, "gap": _gap_out(gap, factor), "empty": True,
                                                       "exclusions": exc.reasons}])
                status = EXIT_NUMERIC
                continue
            first = stats[cfg.estimators[0]]
            w.write_jsonl("realizations.jsonl", [_realization_json(r, L, gap, factor) for r in first.records])
            for name in cfg.estimators:
                s = stats[name]
                f = factor if name == "lambda_star" else 1.0
                summary.append((L, *_gap_out(gap, factor), name, s.count, s.mean * f, s.stderr * f,
                                s.n_excluded, s.exclusion_rate))
    w.write_csv("ensemble.csv", ["L", "gap_lo", "gap_hi", "estimator", "count", "mean", "stderr",
                                 "n_excluded", "exclusion_rate"], summary)
    return status


def _realization_json(rec, L, gap, factor):
    out = {"L": L, "gap": _gap_out(gap, factor), "index": rec.index, "status": rec.status}
    if rec.status == "ok":
        vals = dict(rec.values)
        if "lambda_star" in vals:
            vals["lambda_star"] *= factor
        out.update(values=vals, **{"lambda": rec.lambda_star * factor, "residual": float(rec.residual)})
    return out


def _grid_points(g):
    t = (np.arange(g) + 0.5) / g
    x1, x2 = np.meshgrid(t, t, indexing="ij")
    return np.stack([x1.ravel(), x2.ravel()], axis=1)


def cmd_diagnose(cfg, append=False):
    """Densities on a grid, two-point products and one verdict row per (L, gap)."""
    table = _table_for(cfg)
    gaps = select_gaps(cfg, table)
    w = _writer(cfg, "diagnose", append)
    _save_config(w, cfg)
    kernel = SmoothingKernel(cfg.smoothing_radius)
    kcache = output.cache_dir(cfg) / "kernel_hat.csv"
    if kcache.exists():
        load_kernel_cache(kcache)
    pts = _grid_points(cfg.grid)
    verdicts = []
    status = EXIT_OK
    for L in cfg.sizes:
        params = ensemble.DisorderParams(cfg.epsilon0, L, cfg.profile)
        factor = _scale(cfg, L)
        for gap in gaps:
            dens, corr, samples, efs, lams, excluded = [], [], [], [], [], {}
            for i in range(cfg.n_realizations):
                ef, why = ensemble.solve_realization(params, cfg.phase, gap, cfg.seed, i, cfg.delta0,
                                                     cfg.solve_tol)
                if ef is None:
                    excluded[why] = excluded.get(why, 0) + 1
                    continue
                amp = diagnostics.retained_amplitudes(ef, table, cfg.diag_tol)
                rec = diagnostics.density_record(ef, amp, kernel, pts, table, cfg.diag_tol)
                efs.append(ef)
                lams.append(ef.lambda_star)
                for (x1, x2), phi, big in zip(pts, rec.phi, rec.Phi):
                    dens.append((L, gap[0], i, float(x1), float(x2), cfg.smoothing_radius, float(phi), float(big)))
                x0 = pts[int(np.argmax(rec.phi))]
                dist = torus_distance(pts, x0)
                far = dist >= 4 * kernel.radius
                prod = rec.phi[int(np.argmax(rec.phi))] * rec.phi[far]
                for r, v in zip(dist[far], prod):
                    corr.append((L, gap[0], float(r), float(v), i))
                    samples.append((float(r), float(v)))
            w.write_csv("density.csv", ["L", "gap_lo", "realization", "x1", "x2", "R", "phi", "Phi"], dens)
            w.write_csv("correlation.csv", ["L", "gap_lo", "r", "product", "realization"], corr)
            row = {"L": L, "gap": _gap_out(gap, factor), "n_used": len(efs), "exclusions": excluded}
            if not efs:
                print(f"empty ensemble for L={L}, gap={gap}: exclusions {excluded}", file=sys.stderr)
                status = EXIT_NUMERIC
                verdicts.append({**row, "error": "empty ensemble"})
                continue
            lam_mean = float(np.mean(lams))
            window = diagnostics.smoothing_window(lam_mean, cfg.smoothing_radius)
            row.update(lambda_mean=lam_mean * factor, smoothing_window=window)
            if not window["lower_ok"]:
                log.warning("R=%g is below the window lower bound %.3g at lambda=%.4g",
                            cfg.smoothing_radius, window["lower"], lam_mean)
            try:
                row["verdict"] = diagnostics.localization_verdict(samples).to_dict()
                row["rate_label"] = "empirical"
            except DomainError as exc:
                row["error"] = str(exc)
            verdicts.append(row)
            prof = diagnostics.coefficient_profile(efs, "max")
            w.write_csv("profile.csv", ["L", "gap_lo", "dist", "mean", "stderr", "count"],
                        [(L, gap[0], p.dist, p.mean, p.stderr, p.count) for p in prof])
    w.write_json("verdict.json", {"rows": verdicts})
    try:
        kcache.parent.mkdir(parents=True, exist_ok=True)
        save_kernel_cache(kcache)
    except OSError as exc:
        log.warning("kernel cache not written: %s", exc)
    return status


COMMANDS = {"lattice": cmd_lattice, "solve": cmd_solve, "ensemble": cmd_ensemble, "diagnose": cmd_diagnose}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = config_from_args(args)
        return COMMANDS[args.command](cfg, append=args.append)
    except (NumericError, EmptyEnsembleError, DegenerateConfigurationError) as exc:
        print(f"scatterlab: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (DomainError, CapacityError, output.ManifestMismatchError, OSError) as exc:
        print(f"scatterlab: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ScatterlabError as exc:
        print(f"scatterlab: error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
