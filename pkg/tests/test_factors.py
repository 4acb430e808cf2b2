"""Tests for invarlab.factors — rankings, category split, top-k contingency and IoU."""

import random

import numpy as np
import pytest

from invarlab.errors import CatalogMismatch, EmptyUnion, IncompleteGrid
from invarlab.factors import (
    GLOBAL,
    HelpedSampleList,
    category,
    category_split,
    cell_stats,
    cells_from_distributions,
    helped_samples,
    invariance_change_vs_topk,
    list_iou,
    mean_pairwise_iou,
    rank_transforms,
)
from invarlab.metrics import MetricDistribution
from invarlab.transforms import SubPolicy, TransformSpec, catalog

ROTATE = TransformSpec("rotate", 3, "+")
INVERT = TransformSpec("invert", 1)
COLOR = TransformSpec("color", 5, "-")
IDENTITY = TransformSpec("rotate", 0)


def _grid(scores):
    """Cells with a constant value per (class, transform)."""
    return {(c, t): [v, v] for (c, t), v in scores.items()}


class TestCellStats:
    def test_weighted_boost_arithmetic(self):
        entry = cell_stats(ROTATE, [0.04, 0.04, 0.0, 0.0])
        assert entry.prop_boosted == 0.5
        assert entry.weighted_boost == pytest.approx(0.02)
        assert entry.mean == pytest.approx(0.02)

    def test_no_boost(self):
        entry = cell_stats(ROTATE, [0.0, -0.1])
        assert entry.weighted_boost == 0.0
        assert entry.prop_boosted == 0.0

    def test_boost_ignores_negative_values(self):
        entry = cell_stats(ROTATE, [0.3, -0.9])
        assert entry.weighted_boost == pytest.approx(0.15)
        assert entry.mean == pytest.approx(-0.3)


class TestRank:
    def test_per_class_order(self):
        cells = _grid({("a", ROTATE): 0.1, ("a", INVERT): 0.3, ("b", ROTATE): 0.5, ("b", INVERT): -0.2})
        rankings = rank_transforms(cells)
        assert [r.class_id for r in rankings] == ["a", "b"]
        assert rankings[0].transforms() == [INVERT, ROTATE]
        assert rankings[1].top(1)[0].transform == ROTATE

    def test_ties_use_catalog_order(self):
        specs = catalog([1, 2])
        cells = {("a", t): [0.0] for t in specs}
        ranking = rank_transforms(cells)[0]
        assert ranking.transforms() == specs

    def test_global_uses_equal_class_weight(self):
        cells = {
            ("a", ROTATE): [1.0] * 10, ("a", INVERT): [0.0] * 10,
            ("b", ROTATE): [0.0], ("b", INVERT): [0.8],
        }
        (ranking,) = rank_transforms(cells, scope="global")
        assert ranking.class_id == GLOBAL
        assert ranking.entries[0].transform == ROTATE
        assert ranking.entries[0].mean == 0.5
        assert ranking.entries[0].n == 11

    def test_weighted_boost_key(self):
        cells = {("a", ROTATE): [0.5, -0.5, -0.5], ("a", INVERT): [0.1, 0.1, 0.1]}
        by_mean = rank_transforms(cells, key="mean")[0]
        by_boost = rank_transforms(cells, key="weighted_boost")[0]
        assert by_mean.transforms() == [INVERT, ROTATE]
        assert by_boost.transforms() == [ROTATE, INVERT]

    def test_permutation_invariant(self):
        items = [(("c", t), [float(i % 3)]) for i, t in enumerate(catalog([1]))]
        shuffled = items[:]
        random.Random(0).shuffle(shuffled)
        assert rank_transforms(dict(items))[0].rows() == rank_transforms(dict(shuffled))[0].rows()

    def test_missing_cells_listed(self):
        cells = _grid({("a", ROTATE): 0.1, ("a", INVERT): 0.3, ("b", ROTATE): 0.5})
        with pytest.raises(IncompleteGrid) as exc:
            rank_transforms(cells)
        assert exc.value.gaps == [("b", "invert:1")]

    def test_empty(self):
        with pytest.raises(IncompleteGrid):
            rank_transforms({})

    def test_bad_key(self):
        with pytest.raises(ValueError):
            rank_transforms(_grid({("a", ROTATE): 0.1}), key="median")

    def test_rows(self):
        ranking = rank_transforms(_grid({("a", ROTATE): 0.1, ("a", INVERT): 0.3}), pair_budget=50)[0]
        rows = ranking.rows()
        assert rows[0] == {"class": "a", "rank": 1, "spec": "invert:1", "mean": 0.3, "prop_boosted": 1.0,
                           "weighted_boost": 0.3, "n": 2}
        assert ranking.pair_budget == 50
        assert ranking.scores() == {"invert:1": 0.3, "rotate:3:+": 0.1}

    def test_cells_from_distributions(self):
        dist = MetricDistribution("simchange", ROTATE, np.array([0.1, 0.2, 0.3]), ["a", "b", "a"])
        cells = cells_from_distributions([dist])
        assert cells == {("a", ROTATE): [0.1, 0.3], ("b", ROTATE): [0.2]}


class TestCategorySplit:
    def test_categories(self):
        assert category(ROTATE) == "geometric"
        assert category(INVERT) == "appearance"
        assert category(SubPolicy(ROTATE, INVERT)) == "mixed"
        assert category(SubPolicy(INVERT, COLOR)) == "appearance"

    def test_fractions(self):
        cells = _grid({
            ("a", INVERT): 0.5, ("a", ROTATE): 0.1, ("a", IDENTITY): 0.0,
            ("b", INVERT): 0.2, ("b", ROTATE): 0.4, ("b", IDENTITY): 0.0,
            ("c", INVERT): 0.3, ("c", ROTATE): -0.1, ("c", IDENTITY): 0.0,
            ("d", INVERT): 0.3, ("d", ROTATE): -0.2, ("d", IDENTITY): 0.0,
        })
        split = category_split(rank_transforms(cells))
        assert split.appearance_fraction == 0.75
        assert split.geometric_fraction == 0.25
        assert sum(split.fractions.values()) == pytest.approx(1.0)
        # geometric-only pool: identity beats rotate for c and d
        assert split.identity_top_fraction_geometric_only == 0.5
        assert split.catalog_balance == {"appearance": 1, "geometric": 1, "mixed": 0}
        assert split.to_dict()["top"]["a"] == "invert:1"

    def test_all_appearance(self):
        cells = _grid({(c, INVERT): 0.5 for c in "abc"} | {(c, ROTATE): 0.1 for c in "abc"})
        split = category_split(rank_transforms(cells))
        assert split.appearance_fraction == 1.0
        assert split.identity_top_fraction_geometric_only is None

    def test_identity_only_catalog_is_undecided(self, caplog):
        cells = _grid({(c, t): 0.0 for c in "ab" for t in (IDENTITY, TransformSpec("invert", 0))})
        with caplog.at_level("WARNING", logger="invarlab.factors"):
            split = category_split(rank_transforms(cells))
        assert split.undecided == ["a", "b"]
        assert split.n_decided == 0
        assert split.appearance_fraction + split.geometric_fraction == 0.0
        assert split.to_dict()["undecided_classes"] == ["a", "b"]
        assert split.top == {}
        assert "non-identity" in caplog.text

    def test_decided_count(self):
        cells = _grid({(c, t): 0.1 for c in "ab" for t in (IDENTITY, ROTATE)})
        split = category_split(rank_transforms(cells))
        assert split.undecided == [] and split.n_decided == 2
        assert split.to_dict()["n_decided"] == 2

    def test_empty(self):
        with pytest.raises(IncompleteGrid):
            category_split([])

    def test_global_rankings_ignored(self):
        cells = _grid({("a", INVERT): 0.5, ("a", ROTATE): 0.1})
        with pytest.raises(IncompleteGrid):
            category_split(rank_transforms(cells, scope="global"))


class TestTopK:
    def _rankings(self):
        cells = _grid({
            ("a", INVERT): 0.5, ("a", ROTATE): 0.1, ("a", COLOR): 0.0,
            ("b", INVERT): 0.4, ("b", ROTATE): -0.1, ("b", COLOR): 0.3,
        })
        return rank_transforms(cells)

    def test_identical_before_after(self):
        inv = {str(t): 0.5 for t in (INVERT, ROTATE, COLOR)}
        rows = {r.bucket: r for r in invariance_change_vs_topk(inv, inv, self._rankings(), k=1)}
        assert rows["minimal"].n_transforms == 3
        assert rows["increase"].topk_probability is None

    def test_buckets(self):
        before = {INVERT: 0.2, ROTATE: 0.5, COLOR: 0.5}
        after = {INVERT: 0.4, ROTATE: 0.3, COLOR: 0.505}
        rows = {r.bucket: r for r in invariance_change_vs_topk(before, after, self._rankings(), k=1)}
        assert rows["increase"].transforms == ["invert:1"]
        assert rows["increase"].topk_probability == 1.0
        assert rows["decrease"].topk_probability == 0.0
        assert rows["minimal"].transforms == ["color:5:-"]

    def test_k_beyond_catalog(self):
        before = {INVERT: 0.2, ROTATE: 0.5, COLOR: 0.5}
        after = {INVERT: 0.4, ROTATE: 0.3, COLOR: 0.5}
        rows = invariance_change_vs_topk(before, after, self._rankings(), k=10)
        assert all(r.topk_probability == 1.0 for r in rows)

    def test_accepts_distributions(self):
        before = {INVERT: MetricDistribution("invariance", INVERT, np.array([0.1, 0.3]))}
        after = {INVERT: MetricDistribution("invariance", INVERT, np.array([0.5, 0.5]))}
        rows = {r.bucket: r for r in invariance_change_vs_topk(before, after, self._rankings(), k=1)}
        assert rows["increase"].n_transforms == 1

    def test_catalog_mismatch(self):
        with pytest.raises(CatalogMismatch):
            invariance_change_vs_topk({INVERT: 0.1}, {ROTATE: 0.1}, self._rankings())


class TestHelpedSamples:
    def test_iou_examples(self):
        same = HelpedSampleList.of("a", ["1", "2"])
        assert list_iou(same, HelpedSampleList.of("b", ["2", "1", "2"])) == 1.0
        assert list_iou(HelpedSampleList.of("a", "123"), HelpedSampleList.of("b", "45")) == 0.0
        assert list_iou(HelpedSampleList.of("a", "123"), HelpedSampleList.of("b", "234")) == 0.5

    def test_both_empty(self):
        with pytest.raises(EmptyUnion):
            list_iou(HelpedSampleList.of("a", []), HelpedSampleList.of("b", []))

    def test_helped(self):
        baseline = {"x": False, "y": True, "z": False}
        method = {"x": True, "y": True, "z": False}
        assert helped_samples("run", baseline, method).sample_ids == frozenset({"x"})

    def test_helped_needs_same_samples(self):
        with pytest.raises(CatalogMismatch):
            helped_samples("run", {"x": True}, {"y": True})

    def test_mean_pairwise(self):
        lists = [HelpedSampleList.of(str(i), ids) for i, ids in enumerate(["123", "234", "123"])]
        mean, sem, n = mean_pairwise_iou(lists)
        assert n == 3
        assert mean == pytest.approx((0.5 + 1.0 + 0.5) / 3)
        assert sem > 0

    def test_across_groups(self):
        mean, sem, n = mean_pairwise_iou([HelpedSampleList.of("a", "12")], [HelpedSampleList.of("b", "12")])
        assert (mean, sem, n) == (1.0, 0.0, 1)
