"""Datasets with planted class-specific factors of variation, and their oracles.

Every class has one grayscale base pattern built from a few low-frequency
sinusoids (at most one cycle per axis). Each sample is the base with the
class's planted transform applied at a level drawn from ``levels``, plus
optional Gaussian noise; samples are quantized to 8 bits so in-memory data
equals what :func:`write_dataset` puts on disk.
"""

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from invarlab.embedders import EmbeddingProvider
from invarlab.errors import DuplicateId, ParseError
from invarlab.factors import ClassRanking, cells_from_distributions, rank_transforms
from invarlab.image import quantize, read_image, write_image
from invarlab.metrics import EmbeddingCache, Sample, sample_pairs, simchange
from invarlab.parallel import ordered_map
from invarlab.registry import MAX_LEVEL, get_kind, is_geometric
from invarlab.seeds import derive_rng
from invarlab.transforms import SIGNS, Transform, TransformSpec, apply, sort_key

logger = logging.getLogger("invarlab.synthetic")

MAX_CYCLES = 1
PATTERN_RANGE = (0.15, 0.85)
N_WAVES = 3

# Levels at which each kind keeps the transformed pattern positively
# correlated with its base.
PLANTED_LEVELS = {
    "shearX": 3,
    "shearY": 3,
    "translateX": 3,
    "translateY": 3,
    "rescale": 3,
    "rotate": 3,
    "solarize": 3,
    "posterize": 9,
    "equalize": 1,
}

MANIFEST = "manifest.csv"
_MANIFEST_FIELDS = ("sample_id", "class", "path", "planted_kind", "level", "sign")


@dataclass(frozen=True)
class PlantedClassSpec:
    """One class: its planted transform and how samples are drawn.

    ``levels`` defaults to ``(0, level)``, so a class mixes untouched and
    transformed copies of its base.
    """

    class_id: str
    kind: str
    level: int
    sign: str = "+"
    levels: tuple[int, ...] | None = None
    noise: float = 0.0
    n_samples: int = 200

    def __post_init__(self):
        if get_kind(self.kind) is None:
            raise ValueError(f"Unknown planted kind {self.kind!r}")
        if not 0 <= self.level <= MAX_LEVEL:
            raise ValueError(f"level must be in [0, {MAX_LEVEL}], got {self.level}")
        if self.sign not in SIGNS:
            raise ValueError(f"sign must be '+' or '-', got {self.sign!r}")
        if self.noise < 0.0 or self.n_samples < 1:
            raise ValueError("noise must be >= 0 and n_samples >= 1")
        for lv in self.sample_levels:
            if not 0 <= lv <= MAX_LEVEL:
                raise ValueError(f"sample level {lv} outside [0, {MAX_LEVEL}]")

    @property
    def sample_levels(self) -> tuple[int, ...]:
        return self.levels if self.levels is not None else (0, self.level)

    @property
    def planted(self) -> TransformSpec:
        return TransformSpec(self.kind, self.level, self.sign)


def default_planted_specs(
    n_classes: int = 20,
    n_samples: int = 200,
    noise: float = 0.0,
) -> list[PlantedClassSpec]:
    """Cycle through every planted kind, geometric kinds with both signs."""
    variants = []
    for kind, level in PLANTED_LEVELS.items():
        signs = SIGNS if is_geometric(kind) else ("+",)
        variants.extend((kind, level, s) for s in signs)
    specs = []
    for i in range(n_classes):
        kind, level, sign = variants[i % len(variants)]
        specs.append(PlantedClassSpec(f"c{i:02d}", kind, level, sign, noise=noise, n_samples=n_samples))
    return specs


def recovery_catalog(specs: Sequence[PlantedClassSpec]) -> list[TransformSpec]:
    """Every planted kind at its planted level, geometric kinds with both signs."""
    catalog = set()
    for spec in specs:
        signs = SIGNS if is_geometric(spec.kind) else ("+",)
        catalog.update(TransformSpec(spec.kind, spec.level, s) for s in signs)
    return sorted(catalog, key=sort_key)


def base_pattern(rng: np.random.Generator, size: int, n_waves: int = N_WAVES, max_cycles: int = MAX_CYCLES) -> np.ndarray:
    """Grayscale sum of low-frequency sinusoids rescaled to ``PATTERN_RANGE``."""
    grid = np.arange(size, dtype=np.float64) / size
    xs, ys = np.meshgrid(grid, grid)
    while True:
        field_ = np.zeros((size, size))
        for _ in range(n_waves):
            fx, fy = 0, 0
            while fx == 0 and fy == 0:
                fx, fy = rng.integers(-max_cycles, max_cycles + 1, size=2)
            amp = rng.uniform(0.5, 1.0)
            phase = rng.uniform(0.0, 2.0 * math.pi)
            field_ += amp * np.cos(2.0 * math.pi * (fx * xs + fy * ys) + phase)
        span = field_.max() - field_.min()
        if span > 1e-6:
            break
    lo, hi = PATTERN_RANGE
    gray = lo + (hi - lo) * (field_ - field_.min()) / span
    return np.repeat(gray[..., None], 3, axis=2)


@dataclass
class SyntheticDataset:
    sample_ids: list[str]
    images: list[np.ndarray]
    labels: list[str]
    levels: list[int]
    specs: list[PlantedClassSpec]
    seed: int = 0
    metadata: dict[str, Any] = field(default_factory=dict)

    def samples(self) -> list[Sample]:
        return [Sample(i, label, img) for i, label, img in zip(self.sample_ids, self.labels, self.images)]

    def planted(self) -> dict[str, TransformSpec]:
        return {s.class_id: s.planted for s in self.specs}

    def class_indices(self) -> dict[str, list[int]]:
        out: dict[str, list[int]] = {}
        for i, label in enumerate(self.labels):
            out.setdefault(label, []).append(i)
        return out


def _generate_class(index: int, spec: PlantedClassSpec, seed: int, size: int) -> list[tuple[str, np.ndarray, int]]:
    rng = derive_rng(seed, index)
    base = quantize(base_pattern(rng, size))
    rows = []
    for j in range(spec.n_samples):
        level = int(rng.choice(spec.sample_levels))
        img = apply(TransformSpec(spec.kind, level, spec.sign), base) if level else base.copy()
        if spec.noise > 0.0:
            img = np.clip(img + rng.normal(0.0, spec.noise, size=img.shape), 0.0, 1.0)
        rows.append((f"{spec.class_id}_{j:04d}", quantize(img), level))
    return rows


def generate(specs: Sequence[PlantedClassSpec], seed: int = 0, size: int = 32, jobs: int = 1) -> SyntheticDataset:
    """Draw every class from its own stream ``[seed, class_index]``.

    Raises:
        DuplicateId: If two specs share a class id.
    """
    ids = [s.class_id for s in specs]
    if len(set(ids)) != len(ids):
        raise DuplicateId(f"Duplicate class ids in planted specs: {ids}")
    per_class = ordered_map(lambda item: _generate_class(item[0], item[1], seed, size), list(enumerate(specs)), jobs)
    dataset = SyntheticDataset([], [], [], [], list(specs), seed, {"size": size})
    for spec, rows in zip(specs, per_class):
        for sample_id, img, level in rows:
            dataset.sample_ids.append(sample_id)
            dataset.images.append(img)
            dataset.labels.append(spec.class_id)
            dataset.levels.append(level)
    logger.info(f"Generated {len(dataset.images)} images over {len(specs)} planted classes (seed {seed})")
    return dataset


# --- oracles --------------------------------------------------------------


def _rank(dataset: SyntheticDataset, provider: EmbeddingProvider, catalog: Sequence[Transform],
          budget: int | None, seed: int, key: str, jobs: int) -> list[ClassRanking]:
    samples = dataset.samples()
    pairs = sample_pairs(samples, budget, derive_rng(seed, 0), same_class=True, seed=seed)
    cache = EmbeddingCache(provider, jobs)
    results = [simchange(provider, samples, pairs, t, cache=cache, jobs=jobs) for t in catalog]
    classes = [s.class_id for s in dataset.specs]
    return rank_transforms(cells_from_distributions(results), key=key, classes=classes,
                           transforms=list(catalog), pair_budget=budget)


def oracle_rank(
    dataset: SyntheticDataset,
    provider: EmbeddingProvider,
    catalog: Sequence[Transform],
    key: str = "weighted_boost",
    jobs: int = 1,
) -> list[ClassRanking]:
    """Exact per-class rankings over every ordered same-class pair."""
    return _rank(dataset, provider, catalog, None, 0, key, jobs)


def sampled_rank(
    dataset: SyntheticDataset,
    provider: EmbeddingProvider,
    catalog: Sequence[Transform],
    budget_fraction: float,
    seed: int,
    key: str = "weighted_boost",
    jobs: int = 1,
) -> list[ClassRanking]:
    """Rankings from a per-class pair budget of ``budget_fraction`` of all ordered pairs."""
    if not 0.0 < budget_fraction <= 1.0:
        raise ValueError(f"budget_fraction must be in (0, 1], got {budget_fraction}")
    m = min(len(v) for v in dataset.class_indices().values())
    budget = max(1, int(round(budget_fraction * m * (m - 1))))
    return _rank(dataset, provider, catalog, budget, seed, key, jobs)


def top_kind(ranking: ClassRanking) -> str | None:
    top = ranking.top(1)
    if not top or not isinstance(top[0].transform, TransformSpec):
        return None
    return top[0].transform.kind


def recovery_rate(rankings: Sequence[ClassRanking], dataset: SyntheticDataset) -> float:
    """Fraction of classes whose top-ranked kind is the planted kind."""
    planted = dataset.planted()
    hits = [top_kind(r) == planted[r.class_id].kind for r in rankings if r.class_id in planted]
    return sum(hits) / len(hits) if hits else math.nan


# --- persistence ----------------------------------------------------------


def write_dataset(dataset: SyntheticDataset, directory: str | Path) -> Path:
    """Write ``<class>/<sample_id>.ppm`` files and ``manifest.csv``."""
    root = Path(directory)
    root.mkdir(parents=True, exist_ok=True)
    specs = {s.class_id: s for s in dataset.specs}
    rows = []
    for sample_id, img, label, level in zip(dataset.sample_ids, dataset.images, dataset.labels, dataset.levels):
        rel = Path(label) / f"{sample_id}.ppm"
        (root / label).mkdir(exist_ok=True)
        write_image(img, root / rel)
        spec = specs[label]
        rows.append({"sample_id": sample_id, "class": label, "path": rel.as_posix(),
                     "planted_kind": spec.kind, "level": level, "sign": spec.sign})
    with open(root / MANIFEST, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=_MANIFEST_FIELDS, lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    logger.info(f"Wrote {len(rows)} images and {MANIFEST} to {root}")
    return root / MANIFEST


def read_dataset(directory: str | Path) -> SyntheticDataset:
    """Read a dataset written by :func:`write_dataset`.

    The planted level of each class is the largest level seen in it.

    Raises:
        ParseError: If the manifest is missing columns or has bad values.
        DuplicateId: If a sample id repeats.
    """
    root = Path(directory)
    manifest = root / MANIFEST
    with open(manifest, newline="", encoding="utf-8") as f:
        reader = csv.DictReader(f)
        missing = set(_MANIFEST_FIELDS) - set(reader.fieldnames or [])
        if missing:
            raise ParseError(f"{manifest} is missing columns {sorted(missing)}")
        rows = list(reader)

    dataset = SyntheticDataset([], [], [], [], [], metadata={"source": str(root)})
    seen: set[str] = set()
    planted: dict[str, tuple[str, int, str]] = {}
    counts: dict[str, int] = {}
    for line, row in enumerate(rows, start=2):
        if row["sample_id"] in seen:
            raise DuplicateId(f"Sample id {row['sample_id']!r} repeats in {manifest}")
        seen.add(row["sample_id"])
        try:
            level = int(row["level"])
        except ValueError:
            raise ParseError(f"{manifest} line {line}: level {row['level']!r} is not an integer") from None
        label = row["class"]
        dataset.sample_ids.append(row["sample_id"])
        dataset.images.append(read_image(root / row["path"]))
        dataset.labels.append(label)
        dataset.levels.append(level)
        counts[label] = counts.get(label, 0) + 1
        kind, best, sign = planted.get(label, (row["planted_kind"], 0, row["sign"]))
        planted[label] = (kind, max(best, level), sign)
    for label, (kind, level, sign) in planted.items():
        dataset.specs.append(PlantedClassSpec(label, kind, level, sign or "+", n_samples=counts[label]))
    if dataset.images:
        dataset.metadata["size"] = dataset.images[0].shape[0]
    logger.info(f"Read {len(dataset.images)} images over {len(planted)} classes from {root}")
    return dataset
