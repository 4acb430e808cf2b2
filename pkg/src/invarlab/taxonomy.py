"""Class taxonomy similarity and its correlation with transform rankings.

Depth counts nodes from the root, so the root has depth 1. Edge distance is
``depth(a) + depth(b) - 2 * depth(lca)``.
"""

import logging
import math
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.stats import rankdata

from invarlab.errors import IncompleteGrid, ParseError, UnknownClass
from invarlab.factors import GLOBAL, ClassRanking

logger = logging.getLogger("invarlab.taxonomy")

METHODS = ("wu_palmer", "path", "leacock_chodorow")


class TaxonomyTree:
    """Rooted tree from child -> parent edges, with an optional class -> leaf map."""

    def __init__(self, parents: Mapping[str, str], class_map: Mapping[str, str] | None = None):
        self.parents = dict(parents)
        nodes = set(self.parents) | set(self.parents.values())
        roots = [n for n in nodes if n not in self.parents]
        if len(roots) != 1:
            raise ParseError(f"Taxonomy must have exactly one root, found {sorted(roots)}")
        self.root = roots[0]
        self.nodes = nodes
        self._depth: dict[str, int] = {self.root: 1}
        for node in sorted(nodes):
            self._depth_of(node)
        children = set(self.parents.values())
        self.leaves = sorted(n for n in nodes if n not in children)
        self.max_depth = max(self._depth[leaf] for leaf in self.leaves)
        self.explicit_classes = bool(class_map)
        self.class_map = dict(class_map) if class_map else {leaf: leaf for leaf in self.leaves}
        for cls, leaf in self.class_map.items():
            if leaf not in self.leaves:
                raise UnknownClass(f"Class {cls!r} maps to {leaf!r}, which is not a leaf")

    def _depth_of(self, node: str) -> int:
        path = []
        current = node
        while current not in self._depth:
            if current in path:
                raise ParseError(f"Taxonomy has a cycle through {current!r}")
            path.append(current)
            current = self.parents[current]
        depth = self._depth[current]
        for n in reversed(path):
            depth += 1
            self._depth[n] = depth
        return self._depth[node]

    def depth(self, node: str) -> int:
        return self._depth[node]

    def ancestors(self, node: str) -> list[str]:
        """Node itself first, root last."""
        chain = [node]
        while chain[-1] != self.root:
            chain.append(self.parents[chain[-1]])
        return chain

    def leaf(self, class_id: str) -> str:
        try:
            return self.class_map[class_id]
        except KeyError:
            raise UnknownClass(f"Class {class_id!r} is not a leaf of the taxonomy") from None

    def lca(self, a: str, b: str) -> str:
        seen = set(self.ancestors(a))
        for node in self.ancestors(b):
            if node in seen:
                return node
        return self.root

    def distance(self, a: str, b: str) -> int:
        return self.depth(a) + self.depth(b) - 2 * self.depth(self.lca(a, b))


def class_similarity(tree: TaxonomyTree, a: str, b: str, method: str = "wu_palmer") -> float:
    """Similarity of two classes through their leaves.

    ``wu_palmer = 2 depth(lca) / (depth(a) + depth(b))``,
    ``path = 1 / (1 + distance)``,
    ``leacock_chodorow = -ln(max(distance, 1) / (2 max_depth))``.
    """
    la, lb = tree.leaf(a), tree.leaf(b)
    if method == "wu_palmer":
        return 2.0 * tree.depth(tree.lca(la, lb)) / (tree.depth(la) + tree.depth(lb))
    dist = tree.distance(la, lb)
    if method == "path":
        return 1.0 / (1.0 + dist)
    if method == "leacock_chodorow":
        return -math.log(max(dist, 1) / (2.0 * tree.max_depth))
    raise ValueError(f"Unknown similarity method {method!r}; expected one of {METHODS}")


def spearman(x: Sequence[float], y: Sequence[float]) -> float | None:
    """Spearman correlation with average ranks for ties; None if either side is constant."""
    if len(x) != len(y):
        raise ValueError(f"Length mismatch: {len(x)} vs {len(y)}")
    if len(x) < 2:
        return None
    rx = rankdata(x, method="average")
    ry = rankdata(y, method="average")
    dx = rx - rx.mean()
    dy = ry - ry.mean()
    denom = math.sqrt(float(np.dot(dx, dx)) * float(np.dot(dy, dy)))
    if denom == 0.0:
        return None
    return float(np.dot(dx, dy)) / denom


# --- correlation table ----------------------------------------------------


@dataclass
class CorrelationBin:
    similarity: float
    low: float
    high: float
    n: int
    mean_rho: float | None
    sem: float | None


@dataclass
class CorrelationTable:
    method: str
    pairs: list[tuple[str, str, float, float | None]]
    bins: list[CorrelationBin]
    excluded: int
    metadata: dict[str, Any] = field(default_factory=dict)

    def pair_rows(self) -> list[dict[str, Any]]:
        return [
            {"class_a": a, "class_b": b, "similarity": s, "rho": rho}
            for a, b, s, rho in self.pairs
        ]

    def bin_rows(self) -> list[dict[str, Any]]:
        return [
            {"similarity": b.similarity, "low": b.low, "high": b.high, "n": b.n,
             "mean_rho": b.mean_rho, "sem": b.sem}
            for b in self.bins
        ]


def _bin_stats(sim: float, low: float, high: float, rhos: list[float]) -> CorrelationBin:
    if not rhos:
        return CorrelationBin(sim, low, high, 0, None, None)
    mean = math.fsum(rhos) / len(rhos)
    sem = float(np.std(rhos, ddof=1) / math.sqrt(len(rhos))) if len(rhos) > 1 else 0.0
    return CorrelationBin(sim, low, high, len(rhos), mean, sem)


def similarity_vs_rank_correlation(
    tree: TaxonomyTree,
    rankings: Sequence[ClassRanking],
    method: str = "wu_palmer",
    n_bins: int | None = None,
) -> CorrelationTable:
    """Class-pair similarity against the Spearman correlation of their rankings.

    Each class contributes the ranking-key score of every transform; the
    correlation of two classes is taken over the transforms both rank.
    Without ``n_bins`` each distinct similarity value is its own bin;
    otherwise similarities are split into equal-width bins.

    Raises:
        UnknownClass: A ranked class is not in the taxonomy.
        IncompleteGrid: A class of the taxonomy map has no ranking.
    """
    by_class = {r.class_id: r.scores() for r in rankings if r.class_id != GLOBAL}
    for cls in by_class:
        tree.leaf(cls)
    unranked = sorted(set(tree.class_map) - set(by_class))
    if unranked and tree.explicit_classes:
        raise IncompleteGrid(f"{len(unranked)} taxonomy classes have no ranking, e.g. {unranked[:3]}", gaps=unranked)
    if len(by_class) < 2:
        raise IncompleteGrid("At least two ranked classes are needed")
    if unranked:
        logger.info(f"{len(unranked)} taxonomy leaves have no ranking and are skipped")

    pairs = []
    excluded = 0
    for a, b in combinations(sorted(by_class, key=str), 2):
        common = sorted(set(by_class[a]) & set(by_class[b]))
        rho = spearman([by_class[a][t] for t in common], [by_class[b][t] for t in common])
        if rho is None:
            excluded += 1
        pairs.append((a, b, class_similarity(tree, a, b, method), rho))

    valid = [(s, rho) for _, _, s, rho in pairs if rho is not None]
    bins = []
    if n_bins is None:
        levels = sorted({round(s, 12) for s, _ in valid})
        for level in levels:
            rhos = [rho for s, rho in valid if round(s, 12) == level]
            bins.append(_bin_stats(level, level, level, rhos))
    elif valid:
        sims = np.array([s for s, _ in valid])
        edges = np.linspace(sims.min(), sims.max(), n_bins + 1)
        idx = np.clip(np.searchsorted(edges, sims, side="right") - 1, 0, n_bins - 1)
        for i in range(n_bins):
            rhos = [rho for (_, rho), j in zip(valid, idx) if j == i]
            bins.append(_bin_stats(float((edges[i] + edges[i + 1]) / 2), float(edges[i]), float(edges[i + 1]), rhos))
    if excluded:
        logger.warning(f"{excluded} class pairs have constant rankings; correlation undefined")
    return CorrelationTable(method, pairs, bins, excluded, {"n_classes": len(by_class)})


# --- loading --------------------------------------------------------------


def _read_pairs(path: Path) -> list[tuple[str, str]]:
    rows = []
    offset = 0
    for raw in path.read_bytes().splitlines(keepends=True):
        line = raw.decode("utf-8").rstrip("\r\n")
        if line.strip() and not line.startswith("#"):
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0] or not parts[1]:
                raise ParseError(f"Expected 'a<TAB>b' in {path}, got {line!r}", offset=offset)
            rows.append((parts[0], parts[1]))
        offset += len(raw)
    return rows


def load_taxonomy(edges_path: str | Path, classes_path: str | Path | None = None) -> TaxonomyTree:
    """Load ``child<TAB>parent`` edges and an optional ``class_id<TAB>leaf_name`` map."""
    parents: dict[str, str] = {}
    for child, parent in _read_pairs(Path(edges_path)):
        if child in parents and parents[child] != parent:
            raise ParseError(f"Node {child!r} has two parents: {parents[child]!r} and {parent!r}")
        parents[child] = parent
    class_map = dict(_read_pairs(Path(classes_path))) if classes_path else None
    tree = TaxonomyTree(parents, class_map)
    logger.info(f"Loaded taxonomy with {len(tree.nodes)} nodes and {len(tree.leaves)} leaves from {edges_path}")
    return tree


def demo_tree() -> TaxonomyTree:
    """Small built-in tree with leaves at depths 3 and 4."""
    edges = {
        "animal": "entity", "artifact": "entity",
        "dog": "animal", "cat": "animal", "bird": "animal", "fish": "animal",
        "terrier": "dog", "retriever": "dog",
        "tabby": "cat", "siamese": "cat",
        "vehicle": "artifact", "tool": "artifact",
        "car": "vehicle", "truck": "vehicle",
        "hammer": "tool", "wrench": "tool",
    }
    return TaxonomyTree(edges)
