"""Audit trail for invarlab runs — one local JSONL line per CLI invocation."""

import json
import logging
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

logger = logging.getLogger("invarlab.audit")

AUDIT_FILE = Path("invarlab_audit.jsonl")


def _now_iso() -> str:
    return datetime.now(timezone.utc).isoformat()


def audit_log(entry: dict[str, Any], audit_path: str | Path | None = None) -> None:
    """Append an audit entry with a timestamp.

    Args:
        entry: The audit data (``command``, ``config_hash``, ``outcome``, ...).
        audit_path: Override path for the JSONL file.
    """
    record = dict(entry)
    record["timestamp"] = _now_iso()
    path = Path(audit_path) if audit_path else AUDIT_FILE
    try:
        with open(path, "a", encoding="utf-8") as f:
            f.write(json.dumps(record, sort_keys=True) + "\n")
    except OSError as e:
        logger.warning(f"Failed to write audit log: {e}")


def read_audit(audit_path: str | Path | None = None) -> list[dict[str, Any]]:
    """Entries in file order; a missing file reads as empty."""
    path = Path(audit_path) if audit_path else AUDIT_FILE
    if not path.exists():
        return []
    with open(path, "r", encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]
