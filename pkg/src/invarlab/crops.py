"""Stochastic crop policies and their scale statistics.

RandomResizedCrop draws a scale ``s`` and a log-uniform aspect ratio ``r``,
takes a ``round(sqrt(s*H*W*r)) x round(sqrt(s*H*W/r))`` crop and resizes it
to ``out x out``. Draws that do not fit are retried up to ten times; after
that a center crop clamped to the ratio range is used.
"""

import logging
import math
import re
from dataclasses import dataclass, field
from typing import Callable, Sequence, Union

import numpy as np
from scipy import stats

from invarlab.errors import CapabilityError, GeometryError, InsufficientSamples, ParseError
from invarlab.image import center_offsets, crop, dims, resize, resize_shorter_side, warp_affine
from invarlab.seeds import derive_rng

logger = logging.getLogger("invarlab.crops")

MAX_ATTEMPTS = 10

DEFAULT_OUT = 64
DEFAULT_RESIZE = 72


@dataclass(frozen=True)
class _ScaleRatio:
    s_minus: float = 0.08
    s_plus: float = 1.0
    r_minus: float = 3.0 / 4.0
    r_plus: float = 4.0 / 3.0
    out: int = DEFAULT_OUT

    def __post_init__(self):
        if not 0.0 < self.s_minus <= self.s_plus <= 1.0:
            raise ValueError(f"Need 0 < s_minus <= s_plus <= 1, got {self.s_minus}, {self.s_plus}")
        if not 0.0 < self.r_minus <= self.r_plus:
            raise ValueError(f"Need 0 < r_minus <= r_plus, got {self.r_minus}, {self.r_plus}")
        if self.out < 1:
            raise ValueError(f"out must be >= 1, got {self.out}")


@dataclass(frozen=True)
class RandomResizedCrop(_ScaleRatio):
    """Uniform scale, log-uniform ratio, crop anywhere."""


@dataclass(frozen=True)
class BetaRRC(_ScaleRatio):
    """RandomResizedCrop with ``s = s_minus + (s_plus - s_minus) * Beta(alpha, beta)``."""

    alpha: float = 1.0
    beta: float = 1.0

    def __post_init__(self):
        super().__post_init__()
        if self.alpha <= 0 or self.beta <= 0:
            raise ValueError(f"alpha and beta must be positive, got {self.alpha}, {self.beta}")


@dataclass(frozen=True)
class RandomSizeCenterCrop(_ScaleRatio):
    """RandomResizedCrop whose crop is always centered."""

    aspect_ratio_enabled: bool = True


@dataclass(frozen=True)
class _Resized:
    resize_to: int = DEFAULT_RESIZE
    out: int = DEFAULT_OUT

    def __post_init__(self):
        if self.out < 1 or self.resize_to < self.out:
            raise ValueError(f"Need 1 <= out <= resize_to, got out={self.out}, resize_to={self.resize_to}")


@dataclass(frozen=True)
class FixedSizeRandomCrop(_Resized):
    """Resize the shorter side, then an ``out x out`` crop at any location."""


@dataclass(frozen=True)
class FixedSizeCenterCrop(_Resized):
    """Resize the shorter side, then the central ``out x out`` crop. Consumes no randomness."""


@dataclass(frozen=True)
class TranslatePct(_Resized):
    """Resize, translate by up to ``p`` of each axis (fill exposed), center crop."""

    p: float = 0.3

    def __post_init__(self):
        super().__post_init__()
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"p must be in [0, 1], got {self.p}")


@dataclass(frozen=True)
class Composite:
    """Translate first, then a random-size center crop."""

    translate: TranslatePct
    then: RandomSizeCenterCrop

    @property
    def out(self) -> int:
        return self.then.out


CropPolicy = Union[
    RandomResizedCrop, BetaRRC, RandomSizeCenterCrop, FixedSizeRandomCrop,
    FixedSizeCenterCrop, TranslatePct, Composite,
]


@dataclass
class CropSample:
    """One realized draw of a policy."""

    s: float | None = None
    r: float | None = None
    rect: tuple[int, int, int, int] | None = None
    translation: tuple[float, float] = (0.0, 0.0)
    attempts: int = 0
    fallback: bool = False
    seed_path: tuple[int, ...] = field(default_factory=tuple)


# --- scale sampling -------------------------------------------------------


def sample_scale(policy: _ScaleRatio, rng: np.random.Generator) -> float:
    if isinstance(policy, BetaRRC):
        x = rng.beta(policy.alpha, policy.beta)
        return policy.s_minus + (policy.s_plus - policy.s_minus) * x
    return rng.uniform(policy.s_minus, policy.s_plus)


def _sample_ratio(policy: _ScaleRatio, rng: np.random.Generator) -> float:
    if isinstance(policy, RandomSizeCenterCrop) and not policy.aspect_ratio_enabled:
        return 1.0
    return math.exp(rng.uniform(math.log(policy.r_minus), math.log(policy.r_plus)))


def _fallback_rect(width: int, height: int, policy: _ScaleRatio) -> tuple[int, int, int, int]:
    ratio = width / height
    if isinstance(policy, RandomSizeCenterCrop) and not policy.aspect_ratio_enabled:
        r_minus = r_plus = 1.0
    else:
        r_minus, r_plus = policy.r_minus, policy.r_plus
    if ratio < r_minus:
        w, h = width, int(round(width / r_minus))
    elif ratio > r_plus:
        w, h = int(round(height * r_plus)), height
    else:
        w, h = width, height
    w, h = min(w, width), min(h, height)
    if w < 1 or h < 1:
        raise GeometryError(f"No valid crop for a {width}x{height} image under {policy}")
    x0, y0 = center_offsets(width, height, w, h)
    return x0, y0, w, h


def sample_rect(
    policy: _ScaleRatio,
    width: int,
    height: int,
    rng: np.random.Generator,
) -> CropSample:
    """Draw a crop rectangle for a scale/ratio policy."""
    area = width * height
    centered = isinstance(policy, RandomSizeCenterCrop)
    for attempt in range(1, MAX_ATTEMPTS + 1):
        s = sample_scale(policy, rng)
        r = _sample_ratio(policy, rng)
        w = int(round(math.sqrt(s * area * r)))
        h = int(round(math.sqrt(s * area / r)))
        if 0 < w <= width and 0 < h <= height:
            if centered:
                x0, y0 = center_offsets(width, height, w, h)
            else:
                x0 = int(rng.integers(0, width - w + 1))
                y0 = int(rng.integers(0, height - h + 1))
            return CropSample(s=s, r=r, rect=(x0, y0, w, h), attempts=attempt)
    rect = _fallback_rect(width, height, policy)
    logger.debug(f"Crop fell back to center after {MAX_ATTEMPTS} attempts on {width}x{height}")
    return CropSample(
        s=rect[2] * rect[3] / area, r=rect[2] / rect[3], rect=rect,
        attempts=MAX_ATTEMPTS, fallback=True,
    )


# --- application ----------------------------------------------------------


def _translate(img: np.ndarray, p: float, rng: np.random.Generator) -> tuple[np.ndarray, tuple[float, float]]:
    fx = rng.uniform(-p, p)
    fy = rng.uniform(-p, p)
    width, height = dims(img)
    if fx == 0.0 and fy == 0.0:
        return img, (0.0, 0.0)
    m = np.eye(3)
    m[0, 2] = 2.0 * fx
    m[1, 2] = 2.0 * fy
    return warp_affine(img, m), (fx * width, fy * height)


def _crop_and_resize(img: np.ndarray, sample: CropSample, out: int) -> np.ndarray:
    x0, y0, w, h = sample.rect
    return resize(crop(img, x0, y0, w, h), out, out)


def sample_and_apply(
    policy: CropPolicy,
    img: np.ndarray,
    rng: np.random.Generator,
    seed_path: Sequence[int] = (),
) -> tuple[np.ndarray, CropSample]:
    """Draw from ``policy`` and apply it; the output is always ``out x out``."""
    width, height = dims(img)

    if isinstance(policy, Composite):
        resized = resize_shorter_side(img, policy.translate.resize_to)
        moved, shift = _translate(resized, policy.translate.p, rng)
        out_img, sample = sample_and_apply(policy.then, moved, rng)
        sample.translation = shift
        sample.seed_path = tuple(seed_path)
        return out_img, sample

    if isinstance(policy, _ScaleRatio):
        sample = sample_rect(policy, width, height, rng)
        sample.seed_path = tuple(seed_path)
        return _crop_and_resize(img, sample, policy.out), sample

    resized = resize_shorter_side(img, policy.resize_to)
    rw, rh = dims(resized)
    sample = CropSample(seed_path=tuple(seed_path))
    if rw < policy.out or rh < policy.out:
        raise GeometryError(f"Resized image {rw}x{rh} is smaller than the {policy.out}px crop")

    if isinstance(policy, FixedSizeRandomCrop):
        x0 = int(rng.integers(0, rw - policy.out + 1))
        y0 = int(rng.integers(0, rh - policy.out + 1))
    else:
        if isinstance(policy, TranslatePct):
            resized, sample.translation = _translate(resized, policy.p, rng)
        x0, y0 = center_offsets(rw, rh, policy.out, policy.out)
    sample.rect = (x0, y0, policy.out, policy.out)
    return crop(resized, x0, y0, policy.out, policy.out), sample


# --- scale statistics -----------------------------------------------------


@dataclass
class VarianceEstimate:
    value: float
    stderr: float
    n: int


def expected_scale(alpha: float, beta: float, s_minus: float = 0.08, s_plus: float = 1.0) -> float:
    """Mean of ``s_minus + (s_plus - s_minus) * Beta(alpha, beta)``."""
    return s_minus + (s_plus - s_minus) * alpha / (alpha + beta)


def inverse_scale_variance(
    alpha: float,
    beta: float,
    s_minus: float = 0.08,
    s_plus: float = 1.0,
    n_samples: int = 500_000,
    rng: np.random.Generator | None = None,
) -> VarianceEstimate:
    """Monte-Carlo estimate of Var(1/s) with the standard error of the sample variance."""
    if n_samples < 4:
        raise InsufficientSamples(f"Need at least 4 samples, got {n_samples}")
    rng = rng if rng is not None else np.random.default_rng(0)
    s = s_minus + (s_plus - s_minus) * rng.beta(alpha, beta, size=n_samples)
    inv = 1.0 / s
    var = float(inv.var(ddof=1))
    m4 = float(np.mean((inv - inv.mean()) ** 4))
    n = n_samples
    se = math.sqrt(max(m4 - var * var * (n - 3) / (n - 1), 0.0) / n)
    return VarianceEstimate(value=var, stderr=se, n=n)


def inverse_scale_variance_exact(
    alpha: float,
    beta: float,
    s_minus: float = 0.08,
    s_plus: float = 1.0,
) -> float:
    """Var(1/s) by integrating against the Beta density."""
    dist = stats.beta(alpha, beta)
    span = s_plus - s_minus
    first = dist.expect(lambda x: 1.0 / (s_minus + span * x))
    second = dist.expect(lambda x: 1.0 / (s_minus + span * x) ** 2)
    return float(second - first * first)


# --- evaluation-time sweep ------------------------------------------------


@dataclass
class SweepRow:
    v: float
    s_minus: float
    mean_acc: float
    sem: float
    n_seeds: int


def sweep_values(v_min: float = 1.0, v_max: float = 6.0, count: int = 15) -> np.ndarray:
    return np.linspace(v_min, v_max, count)


def eval_augmentation_sweep(
    images: Sequence[np.ndarray],
    labels: Sequence[int],
    classifier,
    base: FixedSizeCenterCrop | None = None,
    v_values: Sequence[float] | None = None,
    test_seeds: Sequence[int] = (0, 1, 2, 3, 4),
    aspect_ratio_enabled: bool = False,
    predict: Callable[[np.ndarray], int] | None = None,
) -> list[SweepRow]:
    """Accuracy under evaluation-time random-size center crops with ``s_minus = 1/v**2``.

    Each image first goes through ``base``; the sweep policy then crops the
    result and resizes it back to ``base.out``. ``v = 1`` reproduces the
    plain ``base`` evaluation exactly.

    Raises:
        CapabilityError: If ``classifier`` has no classifier head.
    """
    if not getattr(classifier, "has_classifier", False):
        raise CapabilityError(f"{type(classifier).__name__} has no classifier head")
    if len(images) != len(labels) or not images:
        raise InsufficientSamples("Sweep needs a non-empty image set with one label per image")
    base = base or FixedSizeCenterCrop()
    v_values = sweep_values() if v_values is None else v_values
    predict = predict or (lambda x: int(np.argmax(classifier.classify(x))))
    based = [sample_and_apply(base, img, derive_rng(0))[0] for img in images]
    labels = np.asarray(labels)

    rows = []
    for vi, v in enumerate(v_values):
        s_minus = min(1.0, 1.0 / (v * v))
        policy = RandomSizeCenterCrop(
            s_minus=s_minus, s_plus=1.0, out=base.out,
            aspect_ratio_enabled=aspect_ratio_enabled,
        )
        accs = []
        for seed in test_seeds:
            correct = 0
            for i, img in enumerate(based):
                rng = derive_rng(seed, vi, i)
                augmented, _ = sample_and_apply(policy, img, rng)
                correct += int(predict(augmented) == labels[i])
            accs.append(correct / len(based))
        accs = np.asarray(accs)
        sem = float(accs.std(ddof=1) / math.sqrt(len(accs))) if len(accs) > 1 else 0.0
        rows.append(SweepRow(float(v), s_minus, float(accs.mean()), sem, len(accs)))
        logger.info(f"sweep v={v:.3f} s_minus={s_minus:.4f} acc={accs.mean():.4f} +/- {sem:.4f}")
    return rows


# --- policy syntax --------------------------------------------------------

_TERM = re.compile(r"^\s*(\w+)\s*\((.*)\)\s*$")


def _parse_args(body: str) -> tuple[list[str], dict[str, str]]:
    positional, named = [], {}
    for part in filter(None, (p.strip() for p in body.split(","))):
        if "=" in part:
            key, value = (x.strip() for x in part.split("=", 1))
            named[key] = value
        else:
            positional.append(part)
    return positional, named


def _range(value: str, text: str) -> tuple[float, float]:
    try:
        if ".." in value:
            lo, hi = value.split("..", 1)
            return float(lo), float(hi)
        return float(value), float(value)
    except ValueError as e:
        raise ParseError(f"Bad range {value!r} in policy {text!r}") from e


def _parse_term(term: str, text: str):
    match = _TERM.match(term)
    if not match:
        raise ParseError(f"Bad policy term {term!r} in {text!r}")
    name, body = match.group(1), match.group(2)
    positional, named = _parse_args(body)
    kwargs: dict = {}
    try:
        if "s" in named:
            kwargs["s_minus"], kwargs["s_plus"] = _range(named.pop("s"), text)
        if "r" in named:
            kwargs["r_minus"], kwargs["r_plus"] = _range(named.pop("r"), text)
        if "out" in named:
            kwargs["out"] = int(named.pop("out"))
        if "resize" in named:
            kwargs["resize_to"] = int(named.pop("resize"))
        if name == "rrc":
            cls = RandomResizedCrop
        elif name == "beta_rrc":
            cls = BetaRRC
            kwargs["alpha"] = float(named.pop("a", 1.0))
            kwargs["beta"] = float(named.pop("b", 1.0))
        elif name == "rscc":
            cls = RandomSizeCenterCrop
            kwargs["aspect_ratio_enabled"] = named.pop("ar", "1") not in ("0", "false", "off")
        elif name == "fsrc":
            cls = FixedSizeRandomCrop
        elif name == "fscc":
            cls = FixedSizeCenterCrop
        elif name == "t":
            cls = TranslatePct
            if positional:
                kwargs["p"] = float(positional.pop(0))
            if "p" in named:
                kwargs["p"] = float(named.pop("p"))
        else:
            raise ParseError(f"Unknown policy {name!r} in {text!r}")
        if named or positional:
            raise ParseError(f"Unexpected arguments {sorted(named) or positional} for {name!r} in {text!r}")
        return cls(**kwargs)
    except (TypeError, ValueError) as e:
        raise ParseError(f"Invalid policy {term!r}: {e}") from e


def parse_policy(text: str) -> CropPolicy:
    """Parse ``rrc(s=0.08..1,r=0.75..1.333,out=224)``, ``t(0.30)+rscc(...)`` and friends."""
    terms = text.split("+")
    if len(terms) == 1:
        return _parse_term(terms[0], text)
    if len(terms) == 2:
        first, second = _parse_term(terms[0], text), _parse_term(terms[1], text)
        if isinstance(first, TranslatePct) and isinstance(second, RandomSizeCenterCrop):
            return Composite(first, second)
    raise ParseError(f"Only 't(...)+rscc(...)' compositions are supported, got {text!r}")
