"""Run persistence: manifests, JSONL records and CSV tables.

Every output file carries the sha256 hash of the run manifest: JSONL
records in a ``"manifest"`` field, CSV tables in a first line
``# manifest=<hash>``.  Appending to a file written under a different
manifest is refused.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import os
from pathlib import Path

from . import __version__
from .errors import ScatterlabError

FORMAT_VERSION = 1
CACHE_ENV = "SCATTERLAB_CACHE"
MANIFEST_NAME = "manifest.json"


class ManifestMismatchError(ScatterlabError):
    """An output file belongs to a different run manifest."""


def physical_factor(L):
    """Norm units to Laplace eigenvalues on the torus of side ``L``."""
    return 4 * math.pi ** 2 / L ** 2


def canonical_json(obj):
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False)


def build_manifest(command, config):
    """Result-determining inputs of a run.

    Operational settings (worker count, output and cache paths) are left out
    so that they do not change the hash.
    """
    return {
        "format_version": FORMAT_VERSION,
        "scatterlab_version": __version__,
        "command": command,
        "units": "physical" if config.physical_units else "norm",
        "config": config.to_dict(include_operational=False),
    }


def manifest_hash(manifest):
    return hashlib.sha256(canonical_json(manifest).encode()).hexdigest()


def cache_dir(config=None):
    """Directory for lattice and kernel caches.

    Resolution order: ``config.cache_dir``, the ``SCATTERLAB_CACHE``
    environment variable, then ``<out>/cache``.
    """
    if config is not None and config.cache_dir:
        return Path(config.cache_dir)
    env = os.environ.get(CACHE_ENV)
    if env:
        return Path(env)
    return Path(config.out if config is not None else ".") / "cache"


def complex_list(values):
    return [{"re": float(c.real), "im": float(c.imag)} for c in values]


class RunWriter:
    """Single-writer output directory bound to one manifest.

    With ``append=False`` each file named through this writer is truncated
    on first use.  With ``append=True`` existing files must carry the same
    manifest hash.
    """

    def __init__(self, out, manifest, append=False):
        self.out = Path(out)
        self.manifest = manifest
        self.hash = manifest_hash(manifest)
        self.append = append
        self._opened = set()
        self.out.mkdir(parents=True, exist_ok=True)
        path = self.out / MANIFEST_NAME
        if append and path.exists():
            old = json.loads(path.read_text())
            if manifest_hash(old) != self.hash:
                raise ManifestMismatchError(f"{path} belongs to another run; refusing to append")
        path.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")

    def path(self, name):
        return self.out / name

    def _mode(self, name, reader):
        """``"a"`` if the file may be extended, ``"w"`` if it must be (re)created."""
        p = self.path(name)
        if name in self._opened:
            return "a"
        self._opened.add(name)
        if self.append and p.exists() and p.stat().st_size > 0:
            found = reader(p)
            if found != self.hash:
                raise ManifestMismatchError(f"{p} carries manifest {found}, this run is {self.hash}")
            return "a"
        return "w"

    # ------------------------------------------------------------------
    def write_jsonl(self, name, records):
        mode = self._mode(name, jsonl_manifest)
        with open(self.path(name), mode, encoding="utf-8", newline="\n") as fh:
            for rec in records:
                fh.write(canonical_json({"manifest": self.hash, **rec}) + "\n")

    def write_csv(self, name, header, rows):
        mode = self._mode(name, csv_manifest)
        with open(self.path(name), mode, encoding="utf-8", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            if mode == "w":
                fh.write(f"# manifest={self.hash}\n")
                w.writerow(header)
            for row in rows:
                w.writerow([_cell(v) for v in row])

    def write_json(self, name, obj):
        """Whole-file JSON documents are rewritten, never appended."""
        p = self.path(name)
        if self.append and p.exists():
            found = json.loads(p.read_text()).get("manifest")
            if found != self.hash:
                raise ManifestMismatchError(f"{p} carries manifest {found}, this run is {self.hash}")
        p.write_text(json.dumps({"manifest": self.hash, **obj}, sort_keys=True, indent=2,
                                allow_nan=False) + "\n")


def _cell(v):
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, bool):
        return "true" if v else "false"
    return v


def jsonl_manifest(path):
    """Manifest hash of the first record in a JSONL file."""
    with open(path, encoding="utf-8") as fh:
        first = fh.readline()
    return json.loads(first).get("manifest") if first.strip() else None


def csv_manifest(path):
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
    prefix = "# manifest="
    return first[len(prefix):] if first.startswith(prefix) else None


def read_jsonl(path):
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def read_csv(path):
    """``(manifest_hash, rows as dicts of strings)``."""
    with open(path, encoding="utf-8", newline="") as fh:
        first = fh.readline().strip()
        rows = list(csv.DictReader(fh))
    return first.removeprefix("# manifest="), rows
