"""Config checks for invarlab runs.

Each check returns (ok: bool, error_dict: dict | None).
If ok is True, error_dict is None. If False, error_dict carries ``status``,
``error_code``, ``key`` and ``message`` describing the offending value.
"""

from typing import Any, Iterable, Mapping

_MISSING = object()


def lookup(config: Mapping[str, Any], key: str) -> Any:
    """Value at a dotted key path, or a sentinel if any part is absent."""
    node: Any = config
    for part in key.split("."):
        if not isinstance(node, Mapping) or part not in node:
            return _MISSING
        node = node[part]
    return node


def _error(code: str, key: str, message: str, **extra: Any) -> dict[str, Any]:
    return {"status": "error", "error_code": code, "key": key, "message": message, **extra}


def check_known_keys(
    config: Mapping[str, Any],
    defaults: Mapping[str, Any],
    open_sections: Iterable[str] = (),
    prefix: str = "",
) -> tuple[bool, dict | None]:
    """Reject keys that have no default; recurse into nested sections.

    Sections named in ``open_sections`` accept any keys.
    """
    open_sections = tuple(open_sections)
    for key in sorted(config):
        path = f"{prefix}{key}"
        if key not in defaults:
            return False, _error("UNKNOWN_KEY", path, f"Unknown config key {path!r}")
        value, default = config[key], defaults[key]
        if isinstance(default, Mapping) and path not in open_sections:
            if not isinstance(value, Mapping):
                return False, _error("WRONG_TYPE", path, f"{path!r} must be an object")
            ok, err = check_known_keys(value, default, open_sections, prefix=f"{path}.")
            if not ok:
                return ok, err
    return True, None


def _type_name(types: tuple[type, ...]) -> str:
    return " or ".join("null" if t is type(None) else t.__name__ for t in types)


def check_type(config: Mapping[str, Any], key: str, *types: type) -> tuple[bool, dict | None]:
    """Check the value at ``key`` is one of ``types``.

    Booleans never count as numbers; integers count as floats.
    """
    value = lookup(config, key)
    if value is _MISSING:
        return True, None
    if isinstance(value, bool):
        ok = bool in types
    elif isinstance(value, int):
        ok = int in types or float in types
    else:
        ok = isinstance(value, types)
    if not ok:
        return False, _error(
            "WRONG_TYPE", key,
            f"{key!r} must be {_type_name(types)}, got {type(value).__name__} {value!r}",
        )
    return True, None


def check_range(
    config: Mapping[str, Any],
    key: str,
    low: float | None = None,
    high: float | None = None,
    low_open: bool = False,
) -> tuple[bool, dict | None]:
    """Check a numeric value lies in ``[low, high]`` (``(low, high]`` with ``low_open``)."""
    value = lookup(config, key)
    if value is _MISSING or value is None:
        return True, None
    too_low = low is not None and (value <= low if low_open else value < low)
    too_high = high is not None and value > high
    if too_low or too_high:
        left = "(" if low_open else "["
        bounds = f"{left}{'-inf' if low is None else low}, {'inf' if high is None else high}]"
        return False, _error("OUT_OF_RANGE", key, f"{key!r} must be in {bounds}, got {value!r}", value=value)
    return True, None


def check_choice(config: Mapping[str, Any], key: str, choices: Iterable[Any]) -> tuple[bool, dict | None]:
    value = lookup(config, key)
    choices = tuple(choices)
    if value is _MISSING or value in choices:
        return True, None
    return False, _error("BAD_CHOICE", key, f"{key!r} must be one of {list(choices)}, got {value!r}")


def check_items(
    config: Mapping[str, Any],
    key: str,
    item_type: type | tuple[type, ...],
    low: float | None = None,
    high: float | None = None,
    choices: Iterable[Any] | None = None,
) -> tuple[bool, dict | None]:
    """Check every element of a list value."""
    value = lookup(config, key)
    if value is _MISSING or value is None:
        return True, None
    if not isinstance(value, list):
        return False, _error("WRONG_TYPE", key, f"{key!r} must be a list, got {value!r}")
    types = item_type if isinstance(item_type, tuple) else (item_type,)
    allowed = None if choices is None else tuple(choices)
    for i, item in enumerate(value):
        path = f"{key}[{i}]"
        if isinstance(item, bool) or not isinstance(item, types):
            return False, _error("WRONG_TYPE", path, f"{path!r} must be {_type_name(types)}, got {item!r}")
        if allowed is not None and item not in allowed:
            return False, _error("BAD_CHOICE", path, f"{path!r} must be one of {list(allowed)}, got {item!r}")
        if (low is not None and item < low) or (high is not None and item > high):
            return False, _error("OUT_OF_RANGE", path, f"{path!r} must be in [{low}, {high}], got {item!r}")
    return True, None
