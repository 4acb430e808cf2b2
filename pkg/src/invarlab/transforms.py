"""Deterministic transformation catalog: 14 kinds at magnitude levels 0..9.

Level 0 is the identity for every kind. Geometric kinds are realized as one
affine matrix plus :func:`invarlab.image.warp_affine`; appearance kinds are
per-pixel or 8-bit histogram operations.

Magnitude table (linear in the level ``L``):

==============  ===================================================
shearX/Y        shear ``0.3 * L/9``, signed
translateX/Y    ``0.45 * L/9`` of the axis length, signed
rotate          ``30 * L/9`` degrees, signed
rescale         zoom ``z = 1 + L/9``; ``+`` scales by z, ``-`` by 1/z
solarize        threshold ``1 - L/9``
posterize       keep ``8 - round(4L/9)`` bits
color/contrast  factor ``1 + 0.9 * L/9`` (``+``) or ``1 - 0.9 * L/9`` (``-``)
/sharpness
equalize,       applied fully at any level >= 1
autocontrast,
invert
==============  ===================================================

Spec strings: ``kind:level[:sign]`` (``rotate:7:-``), sub-policies
``a;b``, and ``cyclic:dx:dy`` for integer cyclic shifts.
"""

import functools
import logging
import math
from dataclasses import dataclass
from typing import Iterable, Union

import numpy as np
from PIL import Image as PILImage
from PIL import ImageOps
from scipy import ndimage

from invarlab.errors import ParseError
from invarlab.image import cyclic_shift, from_uint8, to_uint8, warp_affine
from invarlab.registry import (
    KIND_ORDER,
    KIND_REGISTRY,
    MAX_LEVEL,
    MIN_LEVEL,
    is_geometric,
    is_signed,
    kind_index,
)

logger = logging.getLogger("invarlab.transforms")

SIGNS = ("+", "-")

MAX_SHEAR = 0.3
MAX_ROTATE_DEG = 30.0
MAX_TRANSLATE = 0.9  # normalized units, i.e. 0.45 of the axis
MAX_ENHANCE = 0.9

LUMA = np.array([0.299, 0.587, 0.114])
SMOOTH_KERNEL = np.array([[1.0, 1.0, 1.0], [1.0, 5.0, 1.0], [1.0, 1.0, 1.0]]) / 13.0


@dataclass(frozen=True)
class TransformSpec:
    kind: str
    level: int
    sign: str = "+"

    def __post_init__(self):
        if self.kind not in KIND_REGISTRY:
            raise ValueError(f"Unknown transform kind {self.kind!r}")
        if not isinstance(self.level, (int, np.integer)) or not MIN_LEVEL <= self.level <= MAX_LEVEL:
            raise ValueError(f"Level must be an integer in {MIN_LEVEL}..{MAX_LEVEL}, got {self.level!r}")
        if self.sign not in SIGNS:
            raise ValueError(f"Sign must be '+' or '-', got {self.sign!r}")
        if not is_signed(self.kind) and self.sign != "+":
            object.__setattr__(self, "sign", "+")
        object.__setattr__(self, "level", int(self.level))

    @property
    def is_identity(self) -> bool:
        return self.level == 0

    @property
    def geometric(self) -> bool:
        return is_geometric(self.kind)

    @property
    def signed_level(self) -> float:
        return (self.level / MAX_LEVEL) * (1.0 if self.sign == "+" else -1.0)

    def __str__(self) -> str:
        if is_signed(self.kind):
            return f"{self.kind}:{self.level}:{self.sign}"
        return f"{self.kind}:{self.level}"


@dataclass(frozen=True)
class SubPolicy:
    """Two transforms applied strictly in order."""

    first: TransformSpec
    second: TransformSpec

    @property
    def is_identity(self) -> bool:
        return self.first.is_identity and self.second.is_identity

    def __str__(self) -> str:
        return f"{self.first};{self.second}"


@dataclass(frozen=True)
class CyclicShift:
    """Integer translation with wrap-around."""

    dx: int
    dy: int = 0

    @property
    def is_identity(self) -> bool:
        return self.dx == 0 and self.dy == 0

    def __str__(self) -> str:
        return f"cyclic:{self.dx}:{self.dy}"


Transform = Union[TransformSpec, SubPolicy, CyclicShift]


# --- parsing --------------------------------------------------------------


def parse_spec(text: str) -> TransformSpec:
    parts = text.strip().split(":")
    if len(parts) not in (2, 3):
        raise ParseError(f"Transform spec must be kind:level[:sign], got {text!r}")
    kind, level = parts[0], parts[1]
    sign = parts[2] if len(parts) == 3 else "+"
    try:
        return TransformSpec(kind, int(level), sign)
    except ValueError as e:
        raise ParseError(f"Invalid transform spec {text!r}: {e}") from e


def parse_transform(text: str) -> Transform:
    """Parse ``kind:level[:sign]``, ``a;b`` or ``cyclic:dx:dy``."""
    text = text.strip()
    if ";" in text:
        parts = text.split(";")
        if len(parts) != 2:
            raise ParseError(f"Sub-policy must have exactly two transforms, got {text!r}")
        return SubPolicy(parse_spec(parts[0]), parse_spec(parts[1]))
    if text.startswith("cyclic:"):
        parts = text.split(":")
        try:
            dx = int(parts[1])
            dy = int(parts[2]) if len(parts) > 2 else 0
        except (IndexError, ValueError) as e:
            raise ParseError(f"Cyclic shift must be cyclic:dx[:dy], got {text!r}") from e
        return CyclicShift(dx, dy)
    return parse_spec(text)


def sort_key(t: Transform) -> tuple:
    """Catalog order: kind as declared, then level, then sign."""
    if isinstance(t, SubPolicy):
        return (1, sort_key(t.first), sort_key(t.second))
    if isinstance(t, CyclicShift):
        return (2, t.dx, t.dy)
    return (0, kind_index(t.kind), t.level, SIGNS.index(t.sign))


# --- geometric kinds ------------------------------------------------------

# Ulp offsets tried when snapping a matrix pair, smallest first.
_NUDGES = sorted(range(-256, 257), key=abs)


def _nudge(x: float, k: int) -> float:
    toward = math.inf if k > 0 else -math.inf
    for _ in range(abs(k)):
        x = math.nextafter(x, toward)
    return x


def _linear(block: list[list[float]]) -> np.ndarray:
    m = np.eye(3)
    m[:2, :2] = block
    return m


def compose(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """``a @ b`` with every product rounded before the sum.

    BLAS kernels may fuse multiply and add, which changes the last bit
    depending on the machine; this product does not.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    terms = a[:, :, None] * b[None, :, :]
    out = terms[:, 0]
    for k in range(1, terms.shape[1]):
        out = out + terms[:, k]
    return out


def _exact_inverses(a: np.ndarray, b: np.ndarray) -> bool:
    eye = np.eye(3)
    return np.array_equal(compose(a, b), eye) and np.array_equal(compose(b, a), eye)


@functools.lru_cache(maxsize=None)
def _rotation(level: int) -> tuple[float, float]:
    """cos and sin of a level's angle, nudged by ulps until R(phi) and R(-phi) compose to the identity."""
    phi = math.radians(MAX_ROTATE_DEG * level / MAX_LEVEL)
    c0, s0 = math.cos(phi), math.sin(phi)
    for kc in (0, 1, -1, 2, -2):
        c = _nudge(c0, kc)
        for ks in _NUDGES:
            s = _nudge(s0, ks)
            if _exact_inverses(_linear([[c, -s], [s, c]]), _linear([[c, s], [-s, c]])):
                return c, s
    logger.warning(f"No exact inverse pair found for rotate level {level}")
    return c0, s0


@functools.lru_cache(maxsize=None)
def _zoom(level: int) -> tuple[float, float]:
    """Zoom ``1 + L/9`` and its reciprocal, nudged by ulps until their product is exactly 1."""
    z0 = 1.0 + level / MAX_LEVEL
    for k in _NUDGES:
        z = _nudge(z0, k)
        if _exact_inverses(_linear([[z, 0.0], [0.0, z]]), _linear([[1.0 / z, 0.0], [0.0, 1.0 / z]])):
            return z, 1.0 / z
    logger.warning(f"No exact inverse pair found for rescale level {level}")
    return z0, 1.0 / z0


def affine_matrix(spec: TransformSpec) -> np.ndarray | None:
    """Forward matrix in normalized coordinates, or None for appearance kinds."""
    if not spec.geometric:
        return None
    a = spec.signed_level
    m = np.eye(3)
    if spec.kind == "shearX":
        m[0, 1] = MAX_SHEAR * a
    elif spec.kind == "shearY":
        m[1, 0] = MAX_SHEAR * a
    elif spec.kind == "translateX":
        m[0, 2] = MAX_TRANSLATE * a
    elif spec.kind == "translateY":
        m[1, 2] = MAX_TRANSLATE * a
    elif spec.kind == "rotate":
        c, s = _rotation(spec.level)
        if spec.sign == "-":
            s = -s
        m[:2, :2] = [[c, -s], [s, c]]
    elif spec.kind == "rescale":
        z, inverse = _zoom(spec.level)
        m[0, 0] = m[1, 1] = inverse if spec.sign == "-" else z
    return m


def transform_matrix(t: Transform) -> np.ndarray | None:
    """Forward matrix of a spec, or of a sub-policy whose two steps are both geometric."""
    if isinstance(t, TransformSpec):
        return affine_matrix(t)
    if isinstance(t, SubPolicy) and t.first.geometric and t.second.geometric:
        return compose(affine_matrix(t.second), affine_matrix(t.first))
    return None


# --- appearance kinds -----------------------------------------------------


def _pil_op(img: np.ndarray, op) -> np.ndarray:
    pil = PILImage.fromarray(to_uint8(img))
    return from_uint8(np.asarray(op(pil), dtype=np.uint8))


def _autocontrast(pil: PILImage.Image) -> PILImage.Image:
    """Stretch each band so its extremes land on 0 and 255.

    Integer rounding keeps the stretch idempotent; flat bands are left alone.
    """
    lut = []
    for lo, hi in pil.getextrema():
        ix = np.arange(256)
        if hi > lo:
            d = hi - lo
            ix = np.clip((2 * 255 * (ix - lo) + d) // (2 * d), 0, 255)
        lut.extend(int(v) for v in ix)
    return pil.point(lut)


def luminance(img: np.ndarray) -> np.ndarray:
    return img @ LUMA


def smooth(img: np.ndarray) -> np.ndarray:
    """3x3 smoothing with border pixels left untouched."""
    out = img.copy()
    if img.shape[0] < 3 or img.shape[1] < 3:
        return out
    for c in range(3):
        filtered = ndimage.convolve(img[:, :, c], SMOOTH_KERNEL, mode="nearest")
        out[1:-1, 1:-1, c] = filtered[1:-1, 1:-1]
    return out


def enhance_factor(spec: TransformSpec) -> float:
    return 1.0 + MAX_ENHANCE * spec.signed_level


def posterize_bits(level: int) -> int:
    return 8 - int(round(level * 4 / MAX_LEVEL))


def solarize_threshold(level: int) -> float:
    return 1.0 - level / MAX_LEVEL


def _appearance(spec: TransformSpec, img: np.ndarray) -> np.ndarray:
    kind = spec.kind
    if kind == "invert":
        return 1.0 - img
    if kind == "solarize":
        t = solarize_threshold(spec.level)
        return np.where(img >= t, 1.0 - img, img)
    if kind == "posterize":
        bits = posterize_bits(spec.level)
        return _pil_op(img, lambda im: ImageOps.posterize(im, bits))
    if kind == "equalize":
        return _pil_op(img, ImageOps.equalize)
    if kind == "autocontrast":
        return _pil_op(img, _autocontrast)

    f = enhance_factor(spec)
    if kind == "color":
        gray = luminance(img)[..., None]
        out = gray + f * (img - gray)
    elif kind == "contrast":
        mean = float(luminance(img).mean())
        out = mean + f * (img - mean)
    elif kind == "sharpness":
        smoothed = smooth(img)
        out = smoothed + f * (img - smoothed)
    else:
        raise ValueError(f"No appearance operation for {kind!r}")
    return np.clip(out, 0.0, 1.0)


# --- application ----------------------------------------------------------


def apply(spec: TransformSpec, img: np.ndarray, fill: float = 0.0) -> np.ndarray:
    """Apply one transform; level 0 returns an unchanged copy."""
    if spec.is_identity:
        return img.copy()
    m = affine_matrix(spec)
    if m is not None:
        return warp_affine(img, m, fill=fill)
    return _appearance(spec, img)


def apply_subpolicy(sp: SubPolicy, img: np.ndarray, fill: float = 0.0) -> np.ndarray:
    return apply(sp.second, apply(sp.first, img, fill=fill), fill=fill)


def apply_transform(t: Transform, img: np.ndarray, fill: float = 0.0) -> np.ndarray:
    """Apply any transform accepted by the metrics and CLI."""
    if isinstance(t, SubPolicy):
        return apply_subpolicy(t, img, fill=fill)
    if isinstance(t, CyclicShift):
        return cyclic_shift(img, t.dx, t.dy)
    return apply(t, img, fill=fill)


def is_geometric_transform(t: Transform) -> bool:
    if isinstance(t, CyclicShift):
        return True
    if isinstance(t, SubPolicy):
        return t.first.geometric and t.second.geometric
    return t.geometric


# --- enumeration ----------------------------------------------------------


def catalog(
    levels: Iterable[int],
    signs: str = "both",
    kinds: Iterable[str] | None = None,
) -> list[TransformSpec]:
    """Enumerate specs in catalog order.

    Args:
        levels: Magnitude levels to include.
        signs: ``both``, ``+`` or ``-``; applies to signed geometric kinds only.
            Appearance kinds and level 0 are enumerated once with sign ``+``.
        kinds: Optional subset of kinds; order still follows the catalog.
    """
    if signs not in ("both", "+", "-"):
        raise ValueError(f"signs must be 'both', '+' or '-', got {signs!r}")
    level_list = sorted(set(int(level) for level in levels))
    wanted = set(KIND_ORDER if kinds is None else kinds)
    unknown = wanted - set(KIND_ORDER)
    if unknown:
        raise ValueError(f"Unknown transform kinds: {sorted(unknown)}")
    specs = []
    for kind in KIND_ORDER:
        if kind not in wanted:
            continue
        for level in level_list:
            if level == 0 or not is_geometric(kind):
                specs.append(TransformSpec(kind, level, "+"))
            elif signs == "both":
                specs.extend(TransformSpec(kind, level, s) for s in SIGNS)
            else:
                specs.append(TransformSpec(kind, level, signs))
    return specs


def subpolicy_catalog(first: list[TransformSpec], second: list[TransformSpec]) -> list[SubPolicy]:
    """Every ordered (first, second) combination in catalog order."""
    return [SubPolicy(a, b) for a in first for b in second]
