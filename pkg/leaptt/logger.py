# leaptt/logger.py

import datetime
import json
import math
import os
import sys
import time
from typing import Any, Callable, Dict, List, Literal, Optional

Level = Literal["DEBUG", "INFO", "WARNING", "ERROR"]
LEVELS = {"DEBUG": 10, "INFO": 20, "WARNING": 30, "ERROR": 40}

LogSink = Callable[[Dict[str, str]], None]


class RunLogger:
    """
    Console logger for a run that also forwards every entry to a sink.

    Lines are printed as ``[<iso timestamp>][<LEVEL>] <message>``; ERROR lines
    go to stderr, everything else to stdout.
    """

    def __init__(
        self,
        sink: Optional[LogSink] = None,
        min_level: str = "INFO",
        quiet: bool = False,
    ):
        """
        Initialize the logger.

        Args:
            sink: Optional callable receiving {log_time, level, message} dicts
            min_level: Entries below this level are dropped
            quiet: Suppress console output (the sink still receives entries)
        """
        if min_level not in LEVELS:
            raise ValueError(f"Unknown log level: {min_level}")
        self.sink = sink
        self.min_level = min_level
        self.quiet = quiet

    def log(self, level: Level, message: str):
        """
        Formats a single entry, prints it and forwards it to the sink.

        Args:
            level: DEBUG, INFO, WARNING or ERROR
            message: The message to log
        """
        if LEVELS[level] < LEVELS[self.min_level]:
            return

        timestamp = datetime.datetime.now().isoformat()
        message = str(message)

        if not self.quiet:
            log_line = f"[{timestamp}][{level}] {message}"
            print(log_line, file=sys.stderr if level == "ERROR" else sys.stdout)

        if self.sink is not None:
            self.sink({"log_time": timestamp, "level": level, "message": message})

    def debug(self, message: str):
        self.log("DEBUG", message)

    def info(self, message: str):
        """Logs an informational message."""
        self.log("INFO", message)

    def warning(self, message: str):
        """Logs a warning message."""
        self.log("WARNING", message)

    def error(self, message: str):
        """Logs an error message."""
        self.log("ERROR", message)


class JsonlLogSink:
    """Appends log entries to a JSONL file (``run.log`` in the output directory)."""

    def __init__(self, path: str):
        self.path = path
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)

    def __call__(self, entry: Dict[str, str]) -> None:
        with open(self.path, "a", encoding="utf-8") as f:
            f.write(json.dumps(entry, sort_keys=True) + "\n")


# ============================================================================
# Metrics files
# ============================================================================


def _clean(value: Any) -> Any:
    if hasattr(value, "item") and callable(value.item) and getattr(value, "size", 1) == 1:
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        raise ValueError(f"Refusing to write non-finite metric value: {value}")
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


class MetricsWriter:
    """
    Writes one JSON object per line, keys sorted.

    In deterministic mode (test profile) ``elapsed_ms`` always returns 0 so
    that metrics files are byte-reproducible.

    Example:
        >>> with MetricsWriter("runs/x/ssl_metrics.jsonl") as writer:
        ...     writer.write({"step": 0, "loss": 1.5, "wall_ms": writer.elapsed_ms()})
    """

    def __init__(self, path: Optional[str], deterministic: bool = True):
        self.path = path
        self.deterministic = deterministic
        self.records: List[Dict[str, Any]] = []
        self._file = None
        self._started = time.perf_counter()

    def __enter__(self) -> "MetricsWriter":
        self.open()
        return self

    def __exit__(self, exc_type, exc, tb) -> None:
        self.close()

    def open(self) -> None:
        if self.path is not None and self._file is None:
            os.makedirs(os.path.dirname(os.path.abspath(self.path)), exist_ok=True)
            self._file = open(self.path, "w", encoding="utf-8")
        self._started = time.perf_counter()

    def close(self) -> None:
        if self._file is not None:
            self._file.close()
            self._file = None

    def elapsed_ms(self) -> int:
        if self.deterministic:
            return 0
        return int((time.perf_counter() - self._started) * 1000)

    def write(self, record: Dict[str, Any]) -> None:
        record = {key: _clean(value) for key, value in record.items()}
        self.records.append(record)
        if self._file is not None:
            self._file.write(json.dumps(record, sort_keys=True, allow_nan=False) + "\n")
            self._file.flush()
