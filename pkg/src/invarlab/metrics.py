"""Invariance, equivariance alignment and SimChange over embedding providers.

All three metrics take a list of :class:`Sample` and a transform. Embeddings
are computed once per distinct image content (see :class:`EmbeddingCache`),
and every reduction runs in a fixed order with ``math.fsum``, so results
depend only on seeds and budgets.
"""

import logging
import math
import threading
from dataclasses import dataclass, field
from typing import Any, Sequence

import numpy as np
from scipy import stats

from invarlab.embedders import EmbeddingProvider, FileStore, image_digest, transform_key
from invarlab.errors import DegenerateBaseline, DegenerateEmbedding, InsufficientSamples
from invarlab.parallel import ordered_map
from invarlab.transforms import CyclicShift, SubPolicy, Transform, TransformSpec, apply_transform

logger = logging.getLogger("invarlab.metrics")

BASELINE_EPS = 1e-9
SIMILARITY_EPS = 1e-9
DIFFERENCE_EPS = 1e-6
QUANTILES = (0.05, 0.25, 0.5, 0.75, 0.95)

_COS_CHUNK = 4096


@dataclass(eq=False)
class Sample:
    sample_id: str
    label: str
    image: np.ndarray | None = None


# --- similarity -----------------------------------------------------------


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine similarity; identical vectors give exactly 1."""
    if np.array_equal(a, b):
        return 1.0
    return float(np.dot(a, b) / (np.linalg.norm(a) * np.linalg.norm(b)))


def cosine_distance(a: np.ndarray, b: np.ndarray) -> float:
    """``1 - cosine_similarity``; zero for identical vectors."""
    return 1.0 - cosine_similarity(a, b)


def _row_cosine(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    sims = np.einsum("ij,ij->i", a, b) / (np.linalg.norm(a, axis=1) * np.linalg.norm(b, axis=1))
    same = np.all(a == b, axis=1)
    return np.where(same, 1.0, sims)


def _mean(values) -> float:
    values = list(values)
    return math.fsum(values) / len(values) if values else math.nan


def _composite_kind(t: Transform | None) -> str:
    if isinstance(t, SubPolicy):
        return "subpolicy"
    if isinstance(t, CyclicShift):
        return "cyclic"
    return ""


# --- results --------------------------------------------------------------


@dataclass
class MetricDistribution:
    """Per-pair (or per-sample) values of one metric under one transform."""

    metric: str
    transform: Transform | None
    values: np.ndarray
    labels: list = field(default_factory=list)
    excluded: int = 0
    metadata: dict[str, Any] = field(default_factory=dict)

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return _mean(self.values)

    @property
    def sem(self) -> float:
        n = self.n
        if n < 2:
            return 0.0 if n == 1 else math.nan
        mean = self.mean
        var = math.fsum((v - mean) ** 2 for v in self.values) / (n - 1)
        return math.sqrt(var / n)

    @property
    def quantiles(self) -> dict[str, float]:
        if not self.n:
            return {}
        qs = np.quantile(np.sort(self.values), QUANTILES)
        return {f"q{int(q * 100):02d}": float(v) for q, v in zip(QUANTILES, qs)}

    def by_class(self) -> dict[Any, "MetricDistribution"]:
        groups: dict[Any, list[float]] = {}
        for value, label in zip(self.values, self.labels):
            groups.setdefault(label, []).append(value)
        return {
            label: MetricDistribution(self.metric, self.transform, np.asarray(vals), [label] * len(vals))
            for label, vals in sorted(groups.items(), key=lambda kv: str(kv[0]))
        }

    def summary(self, label: Any = "all") -> dict[str, Any]:
        t = self.transform
        spec = t if isinstance(t, TransformSpec) else None
        return {
            "metric": self.metric,
            "transform": "" if t is None else str(t),
            "kind": spec.kind if spec else _composite_kind(t),
            "level": spec.level if spec else "",
            "sign": spec.sign if spec else "",
            "class": label,
            "mean": self.mean,
            "sem": self.sem,
            "n": self.n,
            "excluded": self.excluded if label == "all" else "",
        }

    def rows(self) -> list[dict[str, Any]]:
        """Pooled row followed by one row per class."""
        out = [self.summary("all")]
        if self.labels:
            out.extend(dist.summary(label) for label, dist in self.by_class().items())
        return out


# --- embeddings -----------------------------------------------------------


class EmbeddingCache:
    """Embeddings keyed by image content, so repeated images are embedded once.

    File stores are keyed by ``<id>@<transform>`` instead.
    """

    def __init__(self, provider: EmbeddingProvider, jobs: int = 1):
        self.provider = provider
        self.jobs = jobs
        self._lock = threading.Lock()
        self._sample_digest: dict[str, str] = {}
        self._transformed: dict[tuple[str, str], str] = {}
        self._embeddings: dict[str, np.ndarray] = {}

    def key(self, sample: Sample, transform: Transform | None = None) -> str:
        return self._resolve(sample, transform)[0]

    def _resolve(self, sample: Sample, transform: Transform | None) -> tuple[str, np.ndarray | None]:
        if isinstance(self.provider, FileStore):
            return transform_key(sample.sample_id, transform), None
        with self._lock:
            base = self._sample_digest.get(sample.sample_id)
        if base is None:
            if sample.image is None:
                raise InsufficientSamples(f"Sample {sample.sample_id!r} has no image data")
            base = image_digest(sample.image)
            with self._lock:
                self._sample_digest[sample.sample_id] = base
        if transform is None or transform.is_identity:
            return base, sample.image
        tkey = (base, str(transform))
        with self._lock:
            digest = self._transformed.get(tkey)
        if digest is not None:
            return digest, None
        img = apply_transform(transform, sample.image)
        digest = image_digest(img)
        with self._lock:
            self._transformed[tkey] = digest
        return digest, img

    def get(self, sample: Sample, transform: Transform | None = None) -> tuple[str, np.ndarray]:
        key, img = self._resolve(sample, transform)
        with self._lock:
            cached = self._embeddings.get(key)
        if cached is not None:
            return key, cached
        if isinstance(self.provider, FileStore):
            e = self.provider.embed_sample(sample.sample_id, None, transform)
        else:
            if img is None:
                img = apply_transform(transform, sample.image) if transform is not None else sample.image
            e = self.provider.embed(img)
        with self._lock:
            self._embeddings.setdefault(key, e)
        return key, e

    def get_many(self, samples: Sequence[Sample], transform: Transform | None = None) -> tuple[list[str], np.ndarray]:
        results = ordered_map(lambda s: self.get(s, transform), samples, self.jobs)
        if not results:
            return [], np.zeros((0, 1))
        keys = [k for k, _ in results]
        return keys, np.stack([e for _, e in results])


def _cache(provider: EmbeddingProvider, cache: EmbeddingCache | None, jobs: int) -> EmbeddingCache:
    if cache is not None and cache.provider is provider:
        return cache
    return EmbeddingCache(provider, jobs=jobs)


# --- pairs ----------------------------------------------------------------


@dataclass
class PairSet:
    """Ordered index pairs into a sample list."""

    pairs: np.ndarray
    labels: list
    seed: int | None = None
    same_class_only: bool = True
    budget: int | None = None

    def __len__(self) -> int:
        return len(self.pairs)


def _ordered_pairs(members: np.ndarray, budget: int | None, rng: np.random.Generator) -> np.ndarray:
    m = len(members)
    total = m * (m - 1)
    if budget is None or budget >= total:
        a, b = np.meshgrid(np.arange(m), np.arange(m), indexing="ij")
        keep = a != b
        local = np.stack([a[keep], b[keep]], axis=1)
    else:
        k = np.sort(rng.choice(total, size=budget, replace=False))
        a = k // (m - 1)
        r = k % (m - 1)
        b = r + (r >= a)
        local = np.stack([a, b], axis=1)
    return members[local]


def sample_pairs(
    samples: Sequence[Sample],
    budget: int | None,
    rng: np.random.Generator,
    same_class: bool = True,
    seed: int | None = None,
) -> PairSet:
    """Build ordered pairs ``(i, j)``, ``i != j``.

    With ``same_class`` the budget applies per class. A budget that covers
    every ordered pair yields all of them in canonical order; otherwise pairs
    are drawn without replacement.
    """
    if same_class:
        groups: dict[Any, list[int]] = {}
        for i, s in enumerate(samples):
            groups.setdefault(s.label, []).append(i)
        ordered = sorted(groups.items(), key=lambda kv: str(kv[0]))
    else:
        ordered = [(None, list(range(len(samples))))]
    chunks, labels = [], []
    for label, members in ordered:
        if len(members) < 2:
            logger.warning(f"Class {label!r} has fewer than 2 samples; no pairs drawn")
            continue
        pairs = _ordered_pairs(np.asarray(members), budget, rng)
        chunks.append(pairs)
        labels.extend(samples[i].label for i in pairs[:, 0])
    pairs = np.concatenate(chunks) if chunks else np.zeros((0, 2), dtype=np.int64)
    return PairSet(pairs, labels, seed=seed, same_class_only=same_class, budget=budget)


# --- invariance -----------------------------------------------------------


def _check_norms(samples: Sequence[Sample], embeddings: np.ndarray) -> None:
    norms = np.linalg.norm(embeddings, axis=1)
    for s, norm in zip(samples, norms):
        if norm == 0.0:
            raise DegenerateEmbedding(s.sample_id)


def invariance(
    provider: EmbeddingProvider,
    samples: Sequence[Sample],
    transform: Transform,
    rng: np.random.Generator,
    budget: int | None = None,
    per_pair_baseline: bool = False,
    cache: EmbeddingCache | None = None,
    jobs: int = 1,
) -> MetricDistribution:
    """Inv = (b - d(f(x), f(Tx))) / b with cosine distance ``d``.

    The baseline pairs each sample with a different one through a shuffled
    cycle, ``b_i = d(f(x_i), f(T x_partner(i)))``, and ``b`` is their mean.
    With ``per_pair_baseline`` each sample is normalized by its own ``b_i``
    and samples with ``b_i <= 1e-9`` are excluded.

    Raises:
        InsufficientSamples: Fewer than 2 samples.
        DegenerateEmbedding: A zero-norm embedding.
        DegenerateBaseline: ``b <= 1e-9``.
    """
    if len(samples) < 2:
        raise InsufficientSamples(f"Invariance needs at least 2 samples, got {len(samples)}")
    idx = np.arange(len(samples))
    if budget is not None and budget < len(samples):
        if budget < 2:
            raise InsufficientSamples(f"Invariance budget must be at least 2, got {budget}")
        idx = np.sort(rng.choice(len(samples), size=budget, replace=False))
    chosen = [samples[i] for i in idx]
    cache = _cache(provider, cache, jobs)
    _, emb = cache.get_many(chosen)
    _, emb_t = cache.get_many(chosen, transform)
    _check_norms(chosen, emb)
    _check_norms(chosen, emb_t)

    d = 1.0 - _row_cosine(emb, emb_t)
    m = len(chosen)
    perm = rng.permutation(m)
    partner = np.empty(m, dtype=np.int64)
    partner[perm] = perm[(np.arange(m) + 1) % m]
    b_pairs = 1.0 - _row_cosine(emb, emb_t[partner])
    b = _mean(b_pairs)
    if b <= BASELINE_EPS:
        raise DegenerateBaseline(f"Baseline distance {b:.3e} under {transform} is too small")

    excluded = 0
    labels = [s.label for s in chosen]
    if per_pair_baseline:
        keep = b_pairs > BASELINE_EPS
        excluded = int((~keep).sum())
        values = (b_pairs[keep] - d[keep]) / b_pairs[keep]
        labels = [label for label, k in zip(labels, keep) if k]
    else:
        values = (b - d) / b
    return MetricDistribution(
        "invariance", transform, values, labels, excluded,
        metadata={"baseline": b, "per_pair_baseline": per_pair_baseline, "n_samples": m},
    )


# --- equivariance ---------------------------------------------------------


def _unordered_pairs(n: int, budget: int | None, rng: np.random.Generator) -> np.ndarray:
    rows, cols = np.triu_indices(n, k=1)
    if budget is not None and budget < len(rows):
        keep = np.sort(rng.choice(len(rows), size=budget, replace=False))
        rows, cols = rows[keep], cols[keep]
    return np.stack([rows, cols], axis=1)


def equivariance_alignment(
    provider: EmbeddingProvider,
    samples: Sequence[Sample],
    transform: Transform,
    rng: np.random.Generator,
    budget: int | None = 10_000,
    sign: int = 1,
    cache: EmbeddingCache | None = None,
    jobs: int = 1,
) -> MetricDistribution:
    """Alignment of embedding differences against a column-shuffled baseline.

    ``d_i = f(x_i) - f(T x_i)``; the baseline ``B`` shuffles every column of
    ``D`` independently. The score of a pair is
    ``sign * (cos(d_i, d_j) - cos(b_i, b_j))``; with ``sign=+1`` a positive
    mean means the differences align more than chance. Differences with
    ``|d_i| <= 1e-6 * |f(x_i)|`` are excluded and counted.
    """
    if len(samples) < 3:
        raise InsufficientSamples(f"Equivariance needs at least 3 samples, got {len(samples)}")
    if sign not in (1, -1):
        raise ValueError(f"sign must be +1 or -1, got {sign}")
    cache = _cache(provider, cache, jobs)
    _, emb = cache.get_many(samples)
    _, emb_t = cache.get_many(samples, transform)
    _check_norms(samples, emb)

    diffs = emb - emb_t
    valid = np.linalg.norm(diffs, axis=1) > DIFFERENCE_EPS * np.linalg.norm(emb, axis=1)
    degenerate = int((~valid).sum())
    meta: dict[str, Any] = {"degenerate_differences": degenerate, "sign": sign}
    if valid.sum() < 2:
        logger.warning(f"All but {int(valid.sum())} differences are degenerate under {transform}")
        meta.update({"all_degenerate": True, "mean_aligned": math.nan, "mean_baseline": math.nan, "p_value": math.nan})
        return MetricDistribution("equivariance", transform, np.zeros(0), [], degenerate, meta)

    keep = np.flatnonzero(valid)
    d = diffs[keep]
    shuffled = rng.permuted(d, axis=0)
    pairs = _unordered_pairs(len(keep), budget, rng)
    b_ok = np.linalg.norm(shuffled, axis=1) > 0.0
    pair_ok = b_ok[pairs[:, 0]] & b_ok[pairs[:, 1]]
    pairs = pairs[pair_ok]
    aligned = _row_cosine(d[pairs[:, 0]], d[pairs[:, 1]])
    baseline = _row_cosine(shuffled[pairs[:, 0]], shuffled[pairs[:, 1]])
    values = sign * (aligned - baseline)
    labels = [samples[keep[i]].label for i in pairs[:, 0]]

    p_value = math.nan
    if len(values) > 1 and np.std(values) > 0:
        p_value = float(stats.ttest_1samp(values, 0.0, alternative="greater").pvalue)
    meta.update({
        "all_degenerate": False,
        "mean_aligned": _mean(aligned),
        "mean_baseline": _mean(baseline),
        "p_value": p_value,
        "excluded_baseline_pairs": int((~pair_ok).sum()),
    })
    return MetricDistribution(
        "equivariance", transform, values, labels, degenerate + int((~pair_ok).sum()), meta,
    )


# --- SimChange ------------------------------------------------------------


def _pair_cosines(table: np.ndarray, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Cosines of rows ``table[a]`` and ``table[b]``, computed once per distinct combo."""
    n = len(table)
    combo = a.astype(np.int64) * n + b.astype(np.int64)
    uniq, inverse = np.unique(combo, return_inverse=True)
    ua, ub = uniq // n, uniq % n
    sims = np.empty(len(uniq))
    for start in range(0, len(uniq), _COS_CHUNK):
        sl = slice(start, start + _COS_CHUNK)
        sims[sl] = _row_cosine(table[ua[sl]], table[ub[sl]])
    return sims[inverse.reshape(-1)]


def simchange(
    provider: EmbeddingProvider,
    samples: Sequence[Sample],
    pairs: PairSet,
    transform: Transform,
    cache: EmbeddingCache | None = None,
    jobs: int = 1,
) -> MetricDistribution:
    """Percent similarity change when the second member of each pair is transformed.

    ``(cos(f(x1), f(T x2)) - cos(f(x1), f(x2))) / cos(f(x1), f(x2))``.
    Pairs with ``|cos(f(x1), f(x2))| <= 1e-9`` or a zero-norm embedding are
    excluded and counted in the metadata.
    """
    cache = _cache(provider, cache, jobs)
    first = np.unique(pairs.pairs[:, 0]) if len(pairs) else np.zeros(0, dtype=np.int64)
    second = np.unique(pairs.pairs[:, 1]) if len(pairs) else np.zeros(0, dtype=np.int64)
    used = np.union1d(first, second)

    keys, emb = cache.get_many([samples[i] for i in used])
    keys_t, emb_t = cache.get_many([samples[i] for i in second], transform)

    rows: dict[str, int] = {}
    table = []
    for key, e in list(zip(keys, emb)) + list(zip(keys_t, emb_t)):
        if key not in rows:
            rows[key] = len(table)
            table.append(e)
    table = np.stack(table) if table else np.zeros((0, 1))
    row_of_plain = np.full(len(samples), -1, dtype=np.int64)
    row_of_plain[used] = [rows[k] for k in keys]
    row_of_t = np.full(len(samples), -1, dtype=np.int64)
    row_of_t[second] = [rows[k] for k in keys_t]

    a = row_of_plain[pairs.pairs[:, 0]]
    b = row_of_plain[pairs.pairs[:, 1]]
    bt = row_of_t[pairs.pairs[:, 1]]
    zero = np.linalg.norm(table, axis=1) == 0.0 if len(table) else np.zeros(0, dtype=bool)
    zero_pair = zero[a] | zero[b] | zero[bt] if len(pairs) else np.zeros(0, dtype=bool)

    with np.errstate(invalid="ignore", divide="ignore"):
        s0 = _pair_cosines(table, a, b)
        s1 = _pair_cosines(table, a, bt)
    small = ~zero_pair & (np.abs(s0) <= SIMILARITY_EPS)
    keep = ~(zero_pair | small)
    values = (s1[keep] - s0[keep]) / s0[keep]
    labels = [label for label, k in zip(pairs.labels, keep) if k]
    excluded = int((~keep).sum())
    if excluded:
        logger.warning(f"simchange {transform}: excluded {excluded} of {len(pairs)} pairs")
    return MetricDistribution(
        "simchange", transform, values, labels, excluded,
        metadata={
            "degenerate_similarity": int(small.sum()),
            "degenerate_embedding": int(zero_pair.sum()),
            "pair_budget": pairs.budget,
            "n_pairs": len(pairs),
        },
    )
