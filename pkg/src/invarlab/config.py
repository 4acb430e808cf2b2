"""Run configuration: JSON file over defaults, strict validation, hashing.

``invarlab.json`` in the working directory is read when no path is given.
Only keys present in ``_DEFAULTS`` are accepted; sections merge key by key.
"""

import copy
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Mapping

from invarlab.checks import check_choice, check_items, check_known_keys, check_range, check_type
from invarlab.embedders import PROVIDER_VARIANTS
from invarlab.errors import ConfigError
from invarlab.factors import RANK_KEYS
from invarlab.image import PADDING_MODES
from invarlab.lie import NAMES
from invarlab.registry import KIND_ORDER, MAX_LEVEL
from invarlab.taxonomy import METHODS

logger = logging.getLogger("invarlab.config")

CONFIG_FILE = Path("invarlab.json")

SCHEMA_VERSION = 1

# Default configuration
_DEFAULTS: dict[str, Any] = {
    "seed": 0,
    "jobs": 1,
    "output_dir": "invarlab_out",
    "audit_path": "invarlab_audit.jsonl",
    "provider": {"variant": "conv"},
    "dataset": {"path": None},
    "catalog": {
        "levels": list(range(1, MAX_LEVEL + 1)),
        "signs": "both",
        "kinds": None,
        "from_dataset": False,
    },
    "pairs": {"budget": 1000, "same_class": True},
    "invariance": {"budget": None, "per_pair_baseline": False},
    "equivariance": {"budget": 10_000, "sign": 1},
    "rank": {"scope": "per-class", "key": "mean", "top_k": 5, "change_threshold": 0.01},
    "taxonomy": {"method": "wu_palmer", "n_bins": None},
    "augerino": {
        "lambda": 0.01,
        "theta_init": 0.1,
        "thresholds": None,
        "active": list(NAMES),
        "asymmetric_scale": False,
        "n_train_copies": 1,
        "n_eval_copies": 4,
        "padding": "fill",
        "antithetic": False,
        "warm_start_epochs": 200,
        "test_seeds": [0, 1, 2, 3, 4],
        "train": {
            "epochs": 10,
            "batch_size": 16,
            "lr_weights": 0.1,
            "lr_theta": 0.05,
            "momentum": 0.9,
            "lr_step": 0,
            "lr_gamma": 0.1,
            "lr_body": 0.01,
            "train_body": True,
        },
    },
    "sweep": {
        "v_min": 1.0,
        "v_max": 6.0,
        "count": 15,
        "out": 64,
        "resize_to": 72,
        "aspect_ratio": False,
        "test_seeds": [0, 1, 2, 3, 4],
        "head_epochs": 200,
    },
    "synthetic": {"n_classes": 20, "n_samples": 200, "size": 32, "noise": 0.0},
}

# Provider options depend on the variant and are checked when it is built.
_OPEN_SECTIONS = ("provider",)

# Execution-only keys never change results, so they stay out of the run record.
RUNTIME_KEYS = ("jobs", "output_dir", "audit_path")

_NUMBER = (int, float)


def defaults() -> dict[str, Any]:
    return copy.deepcopy(_DEFAULTS)


def _merge(base: dict[str, Any], user: Mapping[str, Any], open_sections: tuple[str, ...], prefix: str = "") -> None:
    for key, value in user.items():
        path = f"{prefix}{key}"
        if isinstance(base.get(key), dict) and isinstance(value, Mapping) and path not in open_sections:
            _merge(base[key], value, open_sections, prefix=f"{path}.")
        else:
            base[key] = copy.deepcopy(value)


def _checks(config: dict[str, Any]):
    yield check_known_keys(config, _DEFAULTS, _OPEN_SECTIONS)
    for key in ("seed", "jobs", "pairs.budget", "invariance.budget", "equivariance.budget",
                "rank.top_k", "taxonomy.n_bins", "augerino.n_train_copies", "augerino.n_eval_copies",
                "augerino.warm_start_epochs", "augerino.train.epochs", "augerino.train.batch_size",
                "augerino.train.lr_step", "sweep.count", "sweep.out", "sweep.resize_to",
                "sweep.head_epochs", "synthetic.n_classes", "synthetic.n_samples", "synthetic.size",
                "equivariance.sign"):
        nullable = key in ("pairs.budget", "invariance.budget", "equivariance.budget", "taxonomy.n_bins")
        yield check_type(config, key, *((int, type(None)) if nullable else (int,)))
    for key in ("output_dir", "audit_path", "provider.variant", "catalog.signs", "rank.scope",
                "rank.key", "taxonomy.method", "augerino.padding"):
        yield check_type(config, key, str)
    for key in ("catalog.from_dataset", "pairs.same_class", "invariance.per_pair_baseline",
                "augerino.asymmetric_scale", "augerino.antithetic", "augerino.train.train_body",
                "sweep.aspect_ratio"):
        yield check_type(config, key, bool)
    for key in ("rank.change_threshold", "augerino.lambda", "augerino.train.lr_weights",
                "augerino.train.lr_theta", "augerino.train.momentum", "augerino.train.lr_gamma",
                "augerino.train.lr_body", "sweep.v_min", "sweep.v_max", "synthetic.noise"):
        yield check_type(config, key, *_NUMBER)
    yield check_type(config, "provider", dict)
    for key in ("catalog.levels", "augerino.active", "augerino.test_seeds", "sweep.test_seeds"):
        yield check_type(config, key, list)
    yield check_type(config, "dataset.path", str, type(None))
    yield check_type(config, "catalog.kinds", list, type(None))
    yield check_type(config, "augerino.theta_init", int, float, list, dict)
    yield check_type(config, "augerino.thresholds", int, float, list, dict, type(None))

    yield check_range(config, "seed", 0)
    yield check_range(config, "jobs", 1)
    for key in ("pairs.budget", "equivariance.budget", "rank.top_k", "taxonomy.n_bins",
                "augerino.n_train_copies", "augerino.n_eval_copies", "augerino.train.epochs",
                "augerino.train.batch_size", "sweep.count", "sweep.out", "sweep.resize_to",
                "synthetic.n_classes", "synthetic.n_samples"):
        yield check_range(config, key, 1)
    yield check_range(config, "invariance.budget", 2)
    yield check_range(config, "synthetic.size", 8)
    for key in ("rank.change_threshold", "augerino.lambda", "augerino.train.lr_weights",
                "augerino.train.lr_theta", "augerino.train.lr_body", "augerino.warm_start_epochs",
                "augerino.train.lr_step", "sweep.head_epochs", "synthetic.noise"):
        yield check_range(config, key, 0)
    yield check_range(config, "augerino.train.momentum", 0, 0.999999)
    yield check_range(config, "augerino.train.lr_gamma", 0, 1, low_open=True)
    yield check_range(config, "sweep.v_min", 1)
    yield check_range(config, "sweep.v_max", config["sweep"]["v_min"] if _is_number(config, "sweep.v_min") else 1)

    yield check_choice(config, "provider.variant", PROVIDER_VARIANTS)
    yield check_choice(config, "catalog.signs", ("both", "+", "-"))
    yield check_choice(config, "equivariance.sign", (1, -1))
    yield check_choice(config, "rank.scope", ("per-class", "global"))
    yield check_choice(config, "rank.key", RANK_KEYS)
    yield check_choice(config, "taxonomy.method", METHODS)
    yield check_choice(config, "augerino.padding", PADDING_MODES)
    yield check_items(config, "catalog.levels", int, 0, MAX_LEVEL)
    yield check_items(config, "catalog.kinds", str, choices=KIND_ORDER)
    yield check_items(config, "augerino.active", str, choices=NAMES)
    yield check_items(config, "augerino.test_seeds", int, 0)
    yield check_items(config, "sweep.test_seeds", int, 0)


def _is_number(config: dict[str, Any], key: str) -> bool:
    ok, _ = check_type(config, key, *_NUMBER)
    return ok


def validate(config: dict[str, Any]) -> dict[str, Any]:
    """Run every check in order and raise on the first failure.

    Raises:
        ConfigError: With ``key`` set to the offending key path.
    """
    for ok, err in _checks(config):
        if not ok:
            raise ConfigError(err["message"], key=err["key"])
    for key in ("augerino.test_seeds", "sweep.test_seeds"):
        section, name = key.split(".")
        if not config[section][name]:
            raise ConfigError(f"{key!r} must not be empty", key=key)
    return config


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> dict[str, Any]:
    """Load configuration over ``_DEFAULTS`` and apply dotted-key overrides.

    A missing default file falls back to defaults; a missing explicit path
    is an error.

    Raises:
        ConfigError: Unreadable, malformed or invalid configuration.
    """
    config = defaults()
    source = Path(path) if path is not None else CONFIG_FILE
    if source.exists():
        try:
            with open(source, "r", encoding="utf-8") as f:
                user_config = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Malformed JSON in {source} at line {e.lineno} column {e.colno}: {e.msg}",
                              key="<file>") from e
        except OSError as e:
            raise ConfigError(f"Cannot read config {source}: {e}", key="<file>") from e
        if not isinstance(user_config, dict):
            raise ConfigError(f"Config {source} must hold a JSON object", key="<file>")
        _merge_checked(config, user_config)
        logger.info(f"Loaded config from {source}")
    elif path is not None:
        raise ConfigError(f"Config file {source} does not exist", key="<file>")
    else:
        logger.debug(f"No {CONFIG_FILE} found, using defaults")
    for key, value in (overrides or {}).items():
        set_key(config, key, value)
    return validate(config)


def _merge_checked(config: dict[str, Any], user_config: Mapping[str, Any]) -> None:
    ok, err = check_known_keys(user_config, _DEFAULTS, _OPEN_SECTIONS)
    if not ok:
        raise ConfigError(err["message"], key=err["key"])
    _merge(config, user_config, _OPEN_SECTIONS)


def from_record(record: Mapping[str, Any], overrides: Mapping[str, Any] | None = None) -> dict[str, Any]:
    """Rebuild a config from a persisted run record."""
    config = defaults()
    _merge_checked(config, record)
    for key, value in (overrides or {}).items():
        set_key(config, key, value)
    return validate(config)


def set_key(config: dict[str, Any], key: str, value: Any) -> None:
    """Set a dotted key; every parent section must already exist."""
    *parents, name = key.split(".")
    node = config
    for part in parents:
        if not isinstance(node.get(part), dict):
            raise ConfigError(f"Unknown config section in {key!r}", key=key)
        node = node[part]
    node[name] = value


def run_record(config: Mapping[str, Any]) -> dict[str, Any]:
    """The config without execution-only keys."""
    return {k: copy.deepcopy(v) for k, v in config.items() if k not in RUNTIME_KEYS}


def canonical_json(data: Any) -> str:
    return json.dumps(data, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


def config_hash(config: Mapping[str, Any], command: str) -> str:
    """SHA-256 over the command and the run record."""
    payload = canonical_json({"command": command, "config": run_record(config)})
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()
