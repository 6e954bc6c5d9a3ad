"""
Structured JSONL event log for engine runs.

Each call to log_event appends one object to <FOCUSED_KV_LOG_DIR>/events.jsonl:

{ts_utc, ts_local, ts_unix_ms, event, ...payload}

Tensors, fractions, decimals and paths in the payload are converted to plain
JSON values. The log is best effort: a failed write prints a warning and the
run carries on.
"""

from __future__ import annotations

import json
import threading
from datetime import datetime, timezone
from decimal import Decimal
from fractions import Fraction
from pathlib import Path
from typing import Any, Dict, List, Optional

import torch

from config.settings import EVENT_LOG_ENABLED, LOG_DIR

_LOCK = threading.Lock()
_state: Dict[str, Any] = {"path": LOG_DIR / "events.jsonl", "enabled": EVENT_LOG_ENABLED}


def get_event_log_path() -> Path:
    return _state["path"]


def configure_event_log(path: Optional[Path] = None, enabled: Optional[bool] = None) -> None:
    """Redirect and/or switch the event log (tests point it at a temp dir)."""
    if path is not None:
        _state["path"] = Path(path)
    if enabled is not None:
        _state["enabled"] = bool(enabled)


def _plain(value: Any) -> Any:
    if isinstance(value, torch.Tensor):
        return value.tolist()
    if isinstance(value, (Fraction, Decimal)):
        return float(value)
    if isinstance(value, (Path, datetime)):
        return str(value) if isinstance(value, Path) else value.isoformat()
    if isinstance(value, dict):
        return {str(k): _plain(v) for k, v in value.items()}
    if isinstance(value, (list, tuple, set)):
        return [_plain(v) for v in value]
    return value


def log_event(event: str, **data: Any) -> None:
    """Append one event; never raises."""
    if not _state["enabled"]:
        return
    path = get_event_log_path()
    try:
        now = datetime.now(timezone.utc)
        record = {
            "ts_utc": now.isoformat(),
            "ts_local": now.astimezone().isoformat(),
            "ts_unix_ms": int(now.timestamp() * 1000),
            "event": event,
        }
        record.update((key, _plain(value)) for key, value in data.items())
        line = json.dumps(record, ensure_ascii=False)
        path.parent.mkdir(parents=True, exist_ok=True)
        with _LOCK, path.open("a", encoding="utf-8") as fh:
            fh.write(line + "\n")
    except Exception as exc:
        print(f"⚠️ Could not write event {event!r} to {path}: {exc}")


def read_events(event: Optional[str] = None) -> List[Dict[str, Any]]:
    """Events in the log, optionally only those of one kind; skips torn lines."""
    path = get_event_log_path()
    if not path.exists():
        return []
    records = []
    with _LOCK, path.open("r", encoding="utf-8") as fh:
        for line in fh:
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                continue
            if event is None or record.get("event") == event:
                records.append(record)
    return records


def clear_event_log() -> Dict[str, Any]:
    """Truncate the log and report what was removed."""
    path = get_event_log_path()
    try:
        with _LOCK:
            removed_bytes = path.stat().st_size if path.exists() else 0
            removed_lines = len(path.read_text(encoding="utf-8").splitlines()) if removed_bytes else 0
            path.parent.mkdir(parents=True, exist_ok=True)
            path.write_text("", encoding="utf-8")
        return {"ok": True, "log_path": str(path), "removed_lines": removed_lines, "removed_bytes": removed_bytes}
    except OSError as exc:
        return {"ok": False, "log_path": str(path), "error": str(exc)}
