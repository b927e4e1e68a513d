import json
import math
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import SingleScattererOracle
from scatterlab import output
from scatterlab.cli import main
from scatterlab.config import RunConfig
from scatterlab.errors import DomainError

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(autouse=True)
def cache_env(tmp_path, monkeypatch):
    monkeypatch.setenv(output.CACHE_ENV, str(tmp_path / "cache"))


def run(*args):
    return main([str(a) for a in args])


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

finite = dict(allow_nan=False, allow_infinity=False)
names = st.text(alphabet="abcdefghijklmnopqrstuvwxyz_/.-0123456789", min_size=1, max_size=12)


@st.composite
def configs(draw):
    selector = draw(st.sampled_from(["none", "norm", "index", "window"]))
    kw = {}
    if selector == "norm":
        kw["gap_norm"] = draw(st.integers(0, 10 ** 6))
    elif selector == "index":
        kw["gap_index"] = draw(st.integers(0, 10 ** 6))
    elif selector == "window":
        lo = draw(st.integers(0, 10 ** 6))
        kw.update(window_lo=lo, window_hi=lo + draw(st.integers(0, 10 ** 5)),
                  subsequence=draw(st.booleans()))
    return RunConfig(
        L=draw(st.integers(1, 64)),
        phase=draw(st.floats(-math.pi, math.pi, exclude_min=True, exclude_max=True, **finite)),
        epsilon0=draw(st.floats(0, 0.25, exclude_min=True, exclude_max=True, **finite)),
        profile=draw(st.sampled_from(["bump", "cone"])),
        delta0=draw(st.floats(1e-12, 1.0, **finite)),
        solve_tol=draw(st.floats(1e-12, 0.5, **finite)),
        diag_tol=draw(st.floats(1e-12, 0.5, **finite)),
        smoothing_radius=draw(st.floats(0, 0.1, exclude_min=True, **finite)),
        seed=draw(st.integers(0, 2 ** 63)),
        realization=draw(st.integers(0, 10 ** 9)),
        n_realizations=draw(st.integers(1, 10 ** 6)),
        workers=draw(st.integers(1, 64)),
        out=draw(names),
        estimators=tuple(draw(st.lists(st.sampled_from(["lambda_star", "l2_norm_sq",
                                                          "matrix_element_deviation"]),
                                       min_size=1, max_size=3))),
        physical_units=draw(st.booleans()),
        L_scan=tuple(draw(st.lists(st.integers(1, 64), max_size=4))),
        max_norm=draw(st.integers(1, 10 ** 7)),
        **kw,
    )


@given(configs())
@settings(max_examples=150)
def test_config_roundtrip(cfg):
    assert RunConfig.parse(cfg.serialize()) == cfg


@pytest.mark.parametrize("text", [
    "phase=3.141592653589793", "epsilon0=0.25", "delta0=0", "smoothing_radius=0.2",
    "gap_norm=5\ngap_index=2", "window_lo=10", "estimators=bogus", "L=2.5", "colour=red",
    "no equals sign", "subsequence=maybe", "polynomial=1:0=1",
])
def test_config_rejects(text):
    with pytest.raises(DomainError):
        RunConfig.parse(text)


def test_config_comments_and_base():
    base = RunConfig(L=8)
    cfg = RunConfig.parse("# comment\n\nseed = 4\n", base)
    assert cfg.L == 8 and cfg.seed == 4


def test_config_file_with_flag_override(tmp_path):
    conf = tmp_path / "run.txt"
    conf.write_text("L=1\ngap_norm=1\nseed=3\nphase=0.0\n")
    assert run("solve", "--config", conf, "--seed", 4, "--out", tmp_path / "o") == 0
    recs = output.read_jsonl(tmp_path / "o" / "eigenfunctions.jsonl")
    assert recs[0]["seed"] == 4


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------

def test_lattice_outputs_and_determinism(tmp_path):
    assert run("lattice", "--max-norm", 1000, "--out", tmp_path / "a") == 0
    cache = tmp_path / "cache" / "lattice-1000.txt"
    first = cache.read_bytes()
    summary = (tmp_path / "a" / "lattice_summary.csv").read_bytes()
    assert run("lattice", "--max-norm", 1000, "--out", tmp_path / "a") == 0
    assert cache.read_bytes() == first
    assert (tmp_path / "a" / "lattice_summary.csv").read_bytes() == summary
    h, rows = output.read_csv(tmp_path / "a" / "lattice_summary.csv")
    assert len(rows) == 331 and rows[2] == {"n": "2", "r2": "4", "gap_next": "2", "discrepancy": "0.25",
                                            "in_subsequence": "false"}
    assert h == json.loads((tmp_path / "a" / "lattice_stats.json").read_text())["manifest"]


def test_lattice_usage_errors(tmp_path, capsys):
    assert run("lattice", "--max-norm", 0, "--out", tmp_path) == 2
    assert "max_norm" in capsys.readouterr().err
    assert run("lattice", "--max-norm", 10 ** 8, "--out", tmp_path) == 2
    assert run("frobnicate") == 2


def test_solve_single_scatterer(tmp_path):
    assert run("solve", "--L", 1, "--gap-norm", 1, "--phase", 0.0, "--out", tmp_path / "s") == 0
    recs = output.read_jsonl(tmp_path / "s" / "eigenfunctions.jsonl")
    assert len(recs) == 1
    rec = recs[0]
    # a single scatterer has the spectrum of one at the origin
    assert rec["lambda"] == pytest.approx(SingleScattererOracle().root(1, 2), abs=1e-8)
    assert rec["c"] == [{"re": 1.0, "im": 0.0}] and rec["gap"] == [1, 2]
    assert rec["residual"] <= 1e-6


def test_solve_repeatable_and_phase_checked(tmp_path):
    for d in ("a", "b"):
        assert run("solve", "--L", 2, "--gap-norm", 50, "--seed", 8, "--out", tmp_path / d) == 0
    a = (tmp_path / "a" / "eigenfunctions.jsonl").read_bytes()
    assert a == (tmp_path / "b" / "eigenfunctions.jsonl").read_bytes()
    assert run("solve", "--L", 1, "--gap-norm", 1, "--phase", math.pi, "--out", tmp_path / "c") == 2


def test_solve_empty_marker(tmp_path):
    args = ("solve", "--L", 2, "--gap-norm", 25, "--phase", 0.5, "--seed", 3, "--delta0", 0.4)
    assert run(*args, "--out", tmp_path) == 0
    recs = output.read_jsonl(tmp_path / "eigenfunctions.jsonl")
    assert recs == [{"L": 2, "empty": True, "gap": [25, 26], "manifest": recs[0]["manifest"],
                     "realization": 0, "reason": "no_roots", "seed": 3}]


def test_solve_not_a_norm(tmp_path, capsys):
    assert run("solve", "--gap-norm", 3, "--out", tmp_path) == 2
    assert "sum of two squares" in capsys.readouterr().err
    assert run("solve", "--out", tmp_path) == 2


def test_physical_units(tmp_path):
    base = ("solve", "--L", 2, "--gap-norm", 50, "--seed", 1)
    assert run(*base, "--out", tmp_path / "n") == 0
    assert run(*base, "--physical-units", "--out", tmp_path / "p") == 0
    n = output.read_jsonl(tmp_path / "n" / "eigenfunctions.jsonl")[0]
    p = output.read_jsonl(tmp_path / "p" / "eigenfunctions.jsonl")[0]
    factor = 4 * math.pi ** 2 / 4
    assert p["lambda"] == pytest.approx(n["lambda"] * factor, rel=1e-15)
    assert p["gap"] == pytest.approx([50 * factor, 52 * factor])
    manifest = json.loads((tmp_path / "p" / "manifest.json").read_text())
    assert manifest["units"] == "physical"


def test_ensemble_workers_identical(tmp_path):
    base = ("ensemble", "--L", 2, "--gap-norm", 50, "--n-realizations", 4, "--seed", 5,
            "--estimators", "lambda_star,matrix_element_deviation")
    assert run(*base, "--workers", 1, "--out", tmp_path / "w1") == 0
    assert run(*base, "--workers", 2, "--out", tmp_path / "w2") == 0
    for name in ("realizations.jsonl", "ensemble.csv", "manifest.json"):
        assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "w2" / name).read_bytes()


def test_ensemble_unknown_estimator(tmp_path, capsys):
    assert run("ensemble", "--gap-norm", 50, "--estimators", "bogus", "--out", tmp_path) == 2
    err = capsys.readouterr().err
    assert "matrix_element_deviation" in err and "lambda_star" in err


def test_ensemble_empty_reports_exclusions(tmp_path, capsys):
    args = ("ensemble", "--L", 2, "--gap-norm", 25, "--phase", 0.5, "--seed", 3, "--n-realizations", 3,
            "--estimators", "lambda_star", "--delta0", 0.4, "--out", tmp_path)
    assert run(*args) == 1
    assert "empty_gap=3" in capsys.readouterr().err
    recs = output.read_jsonl(tmp_path / "realizations.jsonl")
    assert recs[0]["empty"] and recs[0]["exclusions"] == {"empty_gap": 3}


def test_ensemble_window_selects_gaps(tmp_path):
    args = ("ensemble", "--L", 1, "--window-lo", 20, "--window-hi", 30, "--n-realizations", 1,
            "--estimators", "lambda_star", "--out", tmp_path)
    assert run(*args) == 0
    _, rows = output.read_csv(tmp_path / "ensemble.csv")
    assert [(r["gap_lo"], r["gap_hi"]) for r in rows] == [("20", "25"), ("25", "26"), ("26", "29"),
                                                          ("29", "32")]


def test_append_guard(tmp_path):
    base = ("solve", "--L", 1, "--gap-norm", 1, "--out", tmp_path)
    assert run(*base) == 0
    assert run(*base, "--append") == 0
    assert len(output.read_jsonl(tmp_path / "eigenfunctions.jsonl")) == 2
    assert run(*base, "--seed", 9, "--append") == 2
    assert len(output.read_jsonl(tmp_path / "eigenfunctions.jsonl")) == 2
    assert run(*base, "--seed", 9) == 0
    assert len(output.read_jsonl(tmp_path / "eigenfunctions.jsonl")) == 1


def test_every_output_carries_manifest(tmp_path):
    assert run("diagnose", "--L", 2, "--gap-norm", 50, "--n-realizations", 2, "--grid", 8,
               "--out", tmp_path) == 0
    h = output.manifest_hash(json.loads((tmp_path / "manifest.json").read_text()))
    for name in ("density.csv", "correlation.csv", "profile.csv"):
        assert output.csv_manifest(tmp_path / name) == h
    assert json.loads((tmp_path / "verdict.json").read_text())["manifest"] == h
    assert (tmp_path / "cache" / "kernel_hat.csv").exists()


def test_diagnose_scan_rows(tmp_path):
    assert run("diagnose", "--L-scan", "4,8,16", "--gap-norm", 1000, "--n-realizations", 1, "--grid", 8,
               "--out", tmp_path) == 0
    rows = json.loads((tmp_path / "verdict.json").read_text())["rows"]
    assert [r["L"] for r in rows] == [4, 8, 16]
    assert all(r["rate_label"] == "empirical" and not r["smoothing_window"]["lower_ok"] for r in rows)


# ---------------------------------------------------------------------------
# golden files
# ---------------------------------------------------------------------------

GOLDEN_RUNS = {
    "lattice": ("lattice", "--max-norm", 50),
    "solve": ("solve", "--L", 1, "--gap-norm", 1),
    "ensemble": ("ensemble", "--L", 2, "--gap-norm", 50, "--n-realizations", 3,
                 "--estimators", "lambda_star,max_coefficient_sq"),
    "diagnose": ("diagnose", "--L", 2, "--gap-norm", 50, "--n-realizations", 1, "--grid", 8,
                 "--smoothing-radius", 0.05),
}


def _close(a, b, path=""):
    if isinstance(a, dict):
        assert isinstance(b, dict) and a.keys() == b.keys(), path
        for k in a:
            _close(a[k], b[k], f"{path}.{k}")
    elif isinstance(a, list):
        assert isinstance(b, list) and len(a) == len(b), path
        for i, (x, y) in enumerate(zip(a, b)):
            _close(x, y, f"{path}[{i}]")
    elif isinstance(a, float) and isinstance(b, float):
        assert a == pytest.approx(b, rel=1e-8, abs=1e-12), path
    else:
        assert a == b, path


def _cell(text):
    try:
        return float(text)
    except ValueError:
        return text


@pytest.mark.parametrize("command", sorted(GOLDEN_RUNS))
def test_golden(tmp_path, command):
    out = tmp_path / command
    assert run(*GOLDEN_RUNS[command], "--out", out) == 0
    for ref in sorted((GOLDEN / command).iterdir()):
        new = out / ref.name
        if ref.suffix == ".jsonl":
            _close(output.read_jsonl(ref), output.read_jsonl(new), ref.name)
        elif ref.suffix == ".json":
            _close(json.loads(ref.read_text()), json.loads(new.read_text()), ref.name)
        elif ref.suffix == ".csv":
            h_ref, rows_ref = output.read_csv(ref)
            h_new, rows_new = output.read_csv(new)
            assert h_ref == h_new
            _close([{k: _cell(v) for k, v in r.items()} for r in rows_ref],
                   [{k: _cell(v) for k, v in r.items()} for r in rows_new], ref.name)
        else:
            keep = lambda t: [ln for ln in t.splitlines() if not ln.startswith(("out=", "cache_dir="))]
            assert keep(ref.read_text()) == keep(new.read_text())
