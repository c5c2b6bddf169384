"""
Logging setup and structured event logging.

``configure_logging`` wires the root logger once, with verbosity taken from the
``SZLOCA_LOG`` environment variable. ``EventLogger`` appends structured pipeline
events to daily JSONL files so long-running ``stream`` sessions leave an audit
trail next to the track output.
"""

from __future__ import annotations

import json
import logging
import os
import sys
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Optional

LOG_ENV_VAR = "SZLOCA_LOG"
EVENT_LOG_ENV_VAR = "SZLOCA_EVENT_LOG_DIR"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - %(message)s"

logger = logging.getLogger(__name__)


def configure_logging(level: Optional[str] = None) -> logging.Logger:
    """
    Configure the root logger.

    Logs go to stderr only: stdout is reserved for track records and
    calibration output.

    Args:
        level: Level name; falls back to ``$SZLOCA_LOG`` and then INFO

    Returns:
        The configured root logger
    """
    level_str = (level or os.getenv(LOG_ENV_VAR, "INFO")).upper()
    log_level = getattr(logging, level_str, None)
    if not isinstance(log_level, int):
        log_level = logging.INFO

    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)
    root_logger.handlers = []

    handler = logging.StreamHandler(sys.stderr)
    handler.setLevel(log_level)
    handler.setFormatter(logging.Formatter(LOG_FORMAT))
    root_logger.addHandler(handler)

    root_logger.debug(f"Logging configured: level={logging.getLevelName(log_level)}")
    return root_logger


class EventLogger:
    """
    Event logger for structured pipeline events in daily JSONL files.

    Each line is ``{timestamp, event_type, run_id, data}``. With no directory
    the logger only echoes through ``logging``, so callers never need to check
    whether event logging is enabled.
    """

    def __init__(self, log_dir: Optional[Path] = None, run_id: Optional[str] = None):
        """
        Initialize event logger.

        Args:
            log_dir: Directory for event files (created if missing); None disables files
            run_id: Identifier stamped on every event of this run
        """
        self.log_dir = Path(log_dir) if log_dir is not None else None
        self.run_id = run_id
        if self.log_dir is not None:
            self.log_dir.mkdir(parents=True, exist_ok=True)

    @classmethod
    def from_env(cls, run_id: Optional[str] = None) -> "EventLogger":
        """Build an event logger from ``$SZLOCA_EVENT_LOG_DIR`` (disabled when unset)."""
        log_dir = os.getenv(EVENT_LOG_ENV_VAR)
        return cls(Path(log_dir) if log_dir else None, run_id=run_id)

    def log_event(self, event_type: str, data: dict[str, Any]) -> None:
        """
        Record an event.

        Args:
            event_type: Event identifier (e.g. "run_started", "frame_error")
            data: JSON-serializable event payload
        """
        now = datetime.now(timezone.utc)
        entry = {
            "timestamp": now.isoformat(),
            "event_type": event_type,
            "run_id": self.run_id,
            "data": data,
        }

        if self.log_dir is not None:
            log_file = self.log_dir / f"events_{now.date()}.jsonl"
            try:
                with open(log_file, "a", encoding="utf-8") as f:
                    f.write(json.dumps(entry, ensure_ascii=False) + "\n")
            except OSError as e:
                logger.error(f"Failed to write event log {log_file}: {e}")

        if event_type.endswith("error"):
            logger.error(f"{event_type}: {json.dumps(data, ensure_ascii=False)}")
        else:
            logger.debug(f"{event_type}: {json.dumps(data, ensure_ascii=False)}")
