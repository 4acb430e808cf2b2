"""Transform kind registry.

Maps every transformation kind to its category (geometric or appearance),
whether the TransformSpec sign is meaningful for it, and a short description.
Declaration order is the catalog order used for enumeration and tie-breaks.
"""

from typing import Any


# Category constants
GEOMETRIC = "geometric"
APPEARANCE = "appearance"

# Level range
MIN_LEVEL = 0
MAX_LEVEL = 9


def _kind(category: str, description: str, signed: bool = False) -> dict[str, Any]:
    return {"category": category, "description": description, "signed": signed}


KIND_REGISTRY: dict[str, dict[str, Any]] = {
    "equalize": _kind(APPEARANCE, "Per-channel histogram equalization"),
    "solarize": _kind(APPEARANCE, "Invert intensities at or above a threshold"),
    "shearX": _kind(GEOMETRIC, "Horizontal shear", signed=True),
    "shearY": _kind(GEOMETRIC, "Vertical shear", signed=True),
    "invert": _kind(APPEARANCE, "Replace every intensity v with 1 - v"),
    "translateX": _kind(GEOMETRIC, "Horizontal translation", signed=True),
    "translateY": _kind(GEOMETRIC, "Vertical translation", signed=True),
    "color": _kind(APPEARANCE, "Saturation interpolation toward per-pixel gray", signed=True),
    "rescale": _kind(GEOMETRIC, "Zoom in (+) or shrink and pad (-) about the center", signed=True),
    "autocontrast": _kind(APPEARANCE, "Stretch each channel to the full range"),
    "rotate": _kind(GEOMETRIC, "Rotation about the image center", signed=True),
    "posterize": _kind(APPEARANCE, "Keep only the top bits of each 8-bit channel"),
    "contrast": _kind(APPEARANCE, "Interpolation toward the global mean luminance", signed=True),
    "sharpness": _kind(APPEARANCE, "Interpolation between the image and a 3x3 smoothed copy", signed=True),
}

KIND_ORDER: tuple[str, ...] = tuple(KIND_REGISTRY)


def get_kind(name: str) -> dict[str, Any] | None:
    """Look up a kind. Returns None if not found."""
    return KIND_REGISTRY.get(name)


def is_geometric(name: str) -> bool:
    kind = get_kind(name)
    return kind is not None and kind["category"] == GEOMETRIC


def is_signed(name: str) -> bool:
    kind = get_kind(name)
    return kind is not None and kind["signed"]


def kinds_in(category: str) -> list[str]:
    """All kinds of one category, in catalog order."""
    return [name for name, kind in KIND_REGISTRY.items() if kind["category"] == category]


def kind_index(name: str) -> int:
    return KIND_ORDER.index(name)
