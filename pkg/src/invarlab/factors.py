"""Factor-of-variation analysis over SimChange results.

A *cell* is the list of SimChange values for one (class, transform). Rankings
order transforms by mean SimChange or by weighted boost, which is the mean
of the positive values times the proportion of positive values. Ties fall
back to catalog order.
"""

import logging
import math
from dataclasses import dataclass, field
from itertools import product
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from invarlab.errors import CatalogMismatch, EmptyUnion, IncompleteGrid
from invarlab.metrics import MetricDistribution
from invarlab.transforms import SubPolicy, Transform, is_geometric_transform, sort_key

logger = logging.getLogger("invarlab.factors")

RANK_KEYS = ("mean", "weighted_boost")
GLOBAL = "global"

GEOMETRIC = "geometric"
APPEARANCE = "appearance"
MIXED = "mixed"
CATEGORIES = (APPEARANCE, GEOMETRIC, MIXED)

DEFAULT_CHANGE_THRESHOLD = 0.01


@dataclass
class RankEntry:
    transform: Transform
    mean: float
    prop_boosted: float
    weighted_boost: float
    n: int

    def score(self, key: str) -> float:
        return self.mean if key == "mean" else self.weighted_boost


@dataclass
class ClassRanking:
    class_id: Any
    entries: list[RankEntry]
    key: str = "mean"
    pair_budget: int | None = None

    def top(self, k: int = 1) -> list[RankEntry]:
        return self.entries[:k]

    def transforms(self) -> list[Transform]:
        return [e.transform for e in self.entries]

    def scores(self) -> dict[str, float]:
        return {str(e.transform): e.score(self.key) for e in self.entries}

    def rows(self) -> list[dict[str, Any]]:
        return [
            {
                "class": self.class_id,
                "rank": rank,
                "spec": str(e.transform),
                "mean": e.mean,
                "prop_boosted": e.prop_boosted,
                "weighted_boost": e.weighted_boost,
                "n": e.n,
            }
            for rank, e in enumerate(self.entries, start=1)
        ]


def cell_stats(transform: Transform, values: Sequence[float]) -> RankEntry:
    """Mean, proportion boosted (strictly positive) and weighted boost of one cell."""
    values = [float(v) for v in values]
    n = len(values)
    positive = [v for v in values if v > 0.0]
    prop = len(positive) / n
    boost = math.fsum(positive) / len(positive) * prop if positive else 0.0
    return RankEntry(transform, math.fsum(values) / n, prop, boost, n)


def cells_from_distributions(results: Iterable[MetricDistribution]) -> dict[tuple[Any, Transform], list[float]]:
    """Split SimChange distributions into (class, transform) cells."""
    cells: dict[tuple[Any, Transform], list[float]] = {}
    for dist in results:
        for value, label in zip(dist.values, dist.labels):
            cells.setdefault((label, dist.transform), []).append(float(value))
    return cells


def _order(entries: list[RankEntry], key: str) -> list[RankEntry]:
    return sorted(entries, key=lambda e: (-e.score(key), sort_key(e.transform)))


def rank_transforms(
    cells: Mapping[tuple[Any, Transform], Sequence[float]],
    scope: str = "per-class",
    key: str = "mean",
    classes: Sequence[Any] | None = None,
    transforms: Sequence[Transform] | None = None,
    pair_budget: int | None = None,
) -> list[ClassRanking]:
    """Rank transforms per class, or globally with equal class weight.

    Args:
        cells: SimChange values per (class, transform).
        scope: ``per-class`` or ``global``.
        key: ``mean`` or ``weighted_boost``.
        classes, transforms: The expected grid; defaults to every class and
            transform that appears in ``cells``.

    Raises:
        IncompleteGrid: If any expected cell is missing or empty.
    """
    if key not in RANK_KEYS:
        raise ValueError(f"key must be one of {RANK_KEYS}, got {key!r}")
    if scope not in ("per-class", GLOBAL):
        raise ValueError(f"scope must be 'per-class' or 'global', got {scope!r}")
    if not cells:
        raise IncompleteGrid("No SimChange results to rank")
    classes = sorted({c for c, _ in cells} if classes is None else set(classes), key=str)
    transforms = sorted({t for _, t in cells} if transforms is None else set(transforms), key=sort_key)
    gaps = [(c, str(t)) for c, t in product(classes, transforms) if not cells.get((c, t))]
    if gaps:
        raise IncompleteGrid(f"{len(gaps)} (class, transform) cells are missing, e.g. {gaps[:3]}", gaps=gaps)

    per_class = []
    for c in classes:
        entries = [cell_stats(t, cells[(c, t)]) for t in transforms]
        per_class.append(ClassRanking(c, _order(entries, key), key, pair_budget))
    if scope == "per-class":
        return per_class

    by_transform: dict[Transform, list[RankEntry]] = {}
    for ranking in per_class:
        for e in ranking.entries:
            by_transform.setdefault(e.transform, []).append(e)
    pooled = []
    for t in transforms:
        group = by_transform[t]
        pooled.append(RankEntry(
            t,
            math.fsum(e.mean for e in group) / len(group),
            math.fsum(e.prop_boosted for e in group) / len(group),
            math.fsum(e.weighted_boost for e in group) / len(group),
            sum(e.n for e in group),
        ))
    return [ClassRanking(GLOBAL, _order(pooled, key), key, pair_budget)]


# --- category split -------------------------------------------------------


def is_identity(t: Transform) -> bool:
    return t.is_identity


def category(t: Transform) -> str:
    if isinstance(t, SubPolicy):
        kinds = {t.first.geometric, t.second.geometric}
        if kinds == {True}:
            return GEOMETRIC
        if kinds == {False}:
            return APPEARANCE
        return MIXED
    return GEOMETRIC if is_geometric_transform(t) else APPEARANCE


@dataclass
class CategorySplit:
    fractions: dict[str, float]
    identity_top_fraction_geometric_only: float | None
    catalog_balance: dict[str, int]
    n_classes: int
    top: dict[Any, str] = field(default_factory=dict)
    undecided: list[Any] = field(default_factory=list)

    @property
    def n_decided(self) -> int:
        return self.n_classes - len(self.undecided)

    @property
    def appearance_fraction(self) -> float:
        return self.fractions[APPEARANCE]

    @property
    def geometric_fraction(self) -> float:
        return self.fractions[GEOMETRIC]

    def to_dict(self) -> dict[str, Any]:
        return {
            "appearance_fraction": self.fractions[APPEARANCE],
            "geometric_fraction": self.fractions[GEOMETRIC],
            "mixed_fraction": self.fractions[MIXED],
            "identity_top_fraction_geometric_only": self.identity_top_fraction_geometric_only,
            "catalog_balance": self.catalog_balance,
            "n_classes": self.n_classes,
            "n_decided": self.n_decided,
            "undecided_classes": [str(c) for c in self.undecided],
            "top": {str(k): v for k, v in self.top.items()},
        }


def category_split(rankings: Sequence[ClassRanking]) -> CategorySplit:
    """Category of each class's top non-identity transform.

    Fractions are taken over the classes that rank at least one non-identity
    transform. A class ranking identities only is listed in ``undecided``;
    when every class is undecided all fractions are 0.0 and a warning is
    logged.

    ``identity_top_fraction_geometric_only`` re-ranks every class over the
    geometric and identity transforms only and reports how often an identity
    comes first; it is ``None`` when the rankings hold no identity transform.
    """
    rankings = [r for r in rankings if r.class_id != GLOBAL]
    if not rankings:
        raise IncompleteGrid("No class rankings to split")

    counts = {c: 0 for c in CATEGORIES}
    top: dict[Any, str] = {}
    undecided: list[Any] = []
    identity_wins = 0
    has_identity = False
    for ranking in rankings:
        candidates = [e for e in ranking.entries if not is_identity(e.transform)]
        if candidates:
            counts[category(candidates[0].transform)] += 1
            top[ranking.class_id] = str(candidates[0].transform)
        else:
            undecided.append(ranking.class_id)
        pool = [e for e in ranking.entries if is_identity(e.transform) or category(e.transform) == GEOMETRIC]
        if any(is_identity(e.transform) for e in pool):
            has_identity = True
            if is_identity(pool[0].transform):
                identity_wins += 1

    decided = sum(counts.values())
    if not decided:
        logger.warning("No class ranks a non-identity transform; category fractions are all zero")
    fractions = {c: (counts[c] / decided if decided else 0.0) for c in CATEGORIES}
    balance = {c: 0 for c in CATEGORIES}
    for e in rankings[0].entries:
        if not is_identity(e.transform):
            balance[category(e.transform)] += 1
    return CategorySplit(
        fractions=fractions,
        identity_top_fraction_geometric_only=identity_wins / len(rankings) if has_identity else None,
        catalog_balance=balance,
        n_classes=len(rankings),
        top=top,
        undecided=undecided,
    )


# --- invariance change vs top-k -------------------------------------------


@dataclass
class ContingencyRow:
    bucket: str
    n_transforms: int
    topk_probability: float | None
    transforms: list[str]


def _as_means(results: Mapping[Any, Any]) -> dict[str, float]:
    out = {}
    for k, v in results.items():
        out[str(k)] = v.mean if isinstance(v, MetricDistribution) else float(v)
    return out


def invariance_change_vs_topk(
    inv_before: Mapping[Any, Any],
    inv_after: Mapping[Any, Any],
    rankings: Sequence[ClassRanking],
    k: int = 5,
    threshold: float = DEFAULT_CHANGE_THRESHOLD,
) -> list[ContingencyRow]:
    """Bucket transforms by invariance change and report top-k membership.

    Inputs map a transform (or its string) to a mean invariance or a
    :class:`MetricDistribution`. Change above ``threshold`` is ``increase``,
    below ``-threshold`` is ``decrease``, otherwise ``minimal``. Each
    bucket's probability is the mean, over its transforms, of the fraction
    of classes that rank the transform in their top ``k``.

    Raises:
        CatalogMismatch: If the two invariance sets cover different transforms.
    """
    before, after = _as_means(inv_before), _as_means(inv_after)
    if set(before) != set(after):
        missing = sorted(set(before) ^ set(after))
        raise CatalogMismatch(f"Invariance results cover different transforms: {missing[:5]}")
    class_rankings = [r for r in rankings if r.class_id != GLOBAL]
    if not class_rankings:
        raise IncompleteGrid("No class rankings for top-k membership")

    membership: dict[str, float] = {}
    for t in before:
        hits = sum(1 for r in class_rankings if t in {str(e.transform) for e in r.top(k)})
        membership[t] = hits / len(class_rankings)

    buckets: dict[str, list[str]] = {"increase": [], "decrease": [], "minimal": []}
    for t in sorted(before):
        change = after[t] - before[t]
        if change > threshold:
            buckets["increase"].append(t)
        elif change < -threshold:
            buckets["decrease"].append(t)
        else:
            buckets["minimal"].append(t)
    rows = []
    for name, members in buckets.items():
        prob = math.fsum(membership[t] for t in members) / len(members) if members else None
        rows.append(ContingencyRow(name, len(members), prob, members))
    return rows


# --- helped samples -------------------------------------------------------


@dataclass(frozen=True)
class HelpedSampleList:
    run_id: str
    sample_ids: frozenset

    @classmethod
    def of(cls, run_id: str, ids: Iterable[str]) -> "HelpedSampleList":
        return cls(run_id, frozenset(ids))


def helped_samples(
    run_id: str,
    baseline_correct: Mapping[str, bool],
    method_correct: Mapping[str, bool],
) -> HelpedSampleList:
    """Samples the baseline got wrong and the method got right."""
    missing = set(baseline_correct) ^ set(method_correct)
    if missing:
        raise CatalogMismatch(f"Runs cover different samples, e.g. {sorted(missing)[:3]}")
    return HelpedSampleList.of(
        run_id, (sid for sid, ok in baseline_correct.items() if not ok and method_correct[sid])
    )


def list_iou(a: HelpedSampleList, b: HelpedSampleList) -> float:
    union = a.sample_ids | b.sample_ids
    if not union:
        raise EmptyUnion(f"Both {a.run_id!r} and {b.run_id!r} are empty")
    return len(a.sample_ids & b.sample_ids) / len(union)


def mean_pairwise_iou(
    group_a: Sequence[HelpedSampleList],
    group_b: Sequence[HelpedSampleList] | None = None,
) -> tuple[float, float, int]:
    """Mean IoU with SEM over all pairs within one group or across two groups."""
    if group_b is None:
        pairs = [(group_a[i], group_a[j]) for i in range(len(group_a)) for j in range(i + 1, len(group_a))]
    else:
        pairs = [(a, b) for a in group_a for b in group_b]
    if not pairs:
        raise EmptyUnion("No list pairs to compare")
    ious = np.array([list_iou(a, b) for a, b in pairs])
    sem = float(ious.std(ddof=1) / math.sqrt(len(ious))) if len(ious) > 1 else 0.0
    return math.fsum(ious) / len(ious), sem, len(ious)
