"""Report writers: CSV and JSON outputs, the run manifest, plot-data tables.

All outputs of a run go through :class:`RunOutputs`, which removes every file
it wrote if the run fails. Floats are written with ``repr`` so reruns are
byte-identical; NaN and infinities become ``null`` in JSON and empty cells in
CSV.
"""

import csv
import io
import json
import logging
import math
import platform
from importlib import metadata as importlib_metadata
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from invarlab.config import SCHEMA_VERSION, config_hash, run_record
from invarlab.errors import ParseError

logger = logging.getLogger("invarlab.report")

MANIFEST = "manifest.json"

_VERSIONED = ("invarlab", "numpy", "scipy", "Pillow")


def to_jsonable(value: Any) -> Any:
    """Plain JSON types; non-finite floats become None."""
    if isinstance(value, Mapping):
        return {str(k): to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [to_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        value = float(value)
        return value if math.isfinite(value) else None
    if value is None or isinstance(value, str):
        return value
    return str(value)


def dumps_json(data: Any) -> str:
    return json.dumps(to_jsonable(data), sort_keys=True, indent=2, ensure_ascii=False) + "\n"


def _cell(value: Any) -> str:
    value = to_jsonable(value)
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (list, dict)):
        return json.dumps(value, sort_keys=True, separators=(",", ":"))
    return str(value)


def dumps_csv(rows: Sequence[Mapping[str, Any]], fieldnames: Sequence[str] | None = None) -> str:
    """CSV text with a header row; columns default to first-seen key order."""
    if fieldnames is None:
        fieldnames = []
        for row in rows:
            fieldnames.extend(k for k in row if k not in fieldnames)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=list(fieldnames), lineterminator="\n", extrasaction="raise")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: _cell(row.get(k)) for k in fieldnames})
    return buf.getvalue()


def read_csv(path: str | Path, required: Iterable[str] = ()) -> list[dict[str, str]]:
    """Rows of a CSV with a header.

    Raises:
        ParseError: If a required column is missing.
    """
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = set(required) - set(reader.fieldnames or [])
        if missing:
            raise ParseError(f"{path} is missing columns {sorted(missing)}")
        return list(reader)


def package_versions() -> dict[str, str | None]:
    versions: dict[str, str | None] = {"python": platform.python_version()}
    for name in _VERSIONED:
        try:
            versions[name] = importlib_metadata.version(name)
        except importlib_metadata.PackageNotFoundError:
            versions[name] = None
    return versions


def build_manifest(
    command: str,
    config: Mapping[str, Any],
    args: Mapping[str, Any],
    seeds: Mapping[str, Any],
    outputs: Sequence[str],
    summary: Mapping[str, Any] | None = None,
) -> dict[str, Any]:
    """Everything needed to rerun a command; no timestamps or paths outside the run."""
    return {
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "args": dict(args),
        "config": run_record(config),
        "config_hash": config_hash(config, command),
        "seeds": dict(seeds),
        "versions": package_versions(),
        "outputs": sorted(outputs),
        "summary": dict(summary or {}),
    }


def read_manifest(path: str | Path) -> dict[str, Any]:
    """Load a run manifest.

    Raises:
        ParseError: Malformed JSON or missing fields.
    """
    path = Path(path)
    if path.is_dir():
        path = path / MANIFEST
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise ParseError(f"Malformed manifest {path}: {e.msg}", offset=e.pos) from e
    missing = {"schema_version", "command", "args", "config"} - set(data)
    if missing:
        raise ParseError(f"Manifest {path} is missing {sorted(missing)}")
    if data["schema_version"] != SCHEMA_VERSION:
        raise ParseError(f"Manifest {path} has schema_version {data['schema_version']}, expected {SCHEMA_VERSION}")
    return data


class RunOutputs:
    """Output directory of one run; a failed run leaves nothing behind.

    Use as a context manager. Files are tracked as they are written and
    removed, with any directories this run created, if the block raises.
    """

    def __init__(self, directory: str | Path):
        self.directory = Path(directory)
        self.written: list[Path] = []
        self._created: list[Path] = []

    def __enter__(self) -> "RunOutputs":
        missing = []
        for parent in [self.directory, *self.directory.parents]:
            if parent.exists():
                break
            missing.append(parent)
        self.directory.mkdir(parents=True, exist_ok=True)
        self._created = missing
        return self

    def __exit__(self, exc_type, exc, tb) -> bool:
        if exc_type is not None:
            self.discard()
        return False

    def path(self, name: str) -> Path:
        """Register ``name`` as an output and return its path."""
        target = self.directory / name
        target.parent.mkdir(parents=True, exist_ok=True)
        if target not in self.written:
            self.written.append(target)
        return target

    def text(self, name: str, content: str) -> Path:
        target = self.path(name)
        with open(target, "w", encoding="utf-8", newline="") as f:
            f.write(content)
        logger.info(f"Wrote {target}")
        return target

    def json(self, name: str, data: Any) -> Path:
        return self.text(name, dumps_json(data))

    def csv(self, name: str, rows: Sequence[Mapping[str, Any]], fieldnames: Sequence[str] | None = None) -> Path:
        return self.text(name, dumps_csv(rows, fieldnames))

    def names(self) -> list[str]:
        return [p.relative_to(self.directory).as_posix() for p in self.written]

    def discard(self) -> None:
        for target in reversed(self.written):
            try:
                target.unlink(missing_ok=True)
            except OSError as e:
                logger.warning(f"Could not remove partial output {target}: {e}")
        for d in sorted({p.parent for p in self.written}, key=lambda p: len(p.parts), reverse=True):
            if d != self.directory and self.directory in d.parents and not any(d.iterdir()):
                d.rmdir()
        for d in self._created:
            if d.exists() and not any(d.iterdir()):
                d.rmdir()
        if self.written:
            logger.warning(f"Removed {len(self.written)} partial outputs from {self.directory}")
        self.written = []


# --- plot data ------------------------------------------------------------


def long_form(dists: Iterable[Any]) -> list[dict[str, Any]]:
    """One row per value of each MetricDistribution: metric, transform, class, value."""
    rows = []
    for dist in dists:
        transform = "" if dist.transform is None else str(dist.transform)
        labels = dist.labels if len(dist.labels) == len(dist.values) else [""] * len(dist.values)
        for i, (value, label) in enumerate(zip(dist.values, labels)):
            rows.append({"metric": dist.metric, "transform": transform, "class": label, "index": i,
                         "value": float(value)})
    return rows


def quantile_rows(dists: Iterable[Any]) -> list[dict[str, Any]]:
    """Quantiles per distribution, long form, for distribution plots."""
    rows = []
    for dist in dists:
        for name, value in dist.quantiles.items():
            rows.append({"metric": dist.metric, "transform": str(dist.transform), "quantile": name, "value": value})
    return rows
