"""
Console + file logging for CoverageLens.

Every message is printed and appended to LOG_FILE with a UTC timestamp. The
run subcommand redirects the file into its output directory so each run
directory carries its own log.
"""

import sys
import time
from datetime import datetime, timezone

from settings import LOG_FILE as _DEFAULT_LOG_FILE

LOG_FILE = _DEFAULT_LOG_FILE

_session_started: dict[str, float] = {}


def _utc_now() -> str:
    return datetime.now(timezone.utc).strftime("%Y-%m-%d %H:%M:%S UTC")


def set_log_file(path) -> None:
    """Redirect the file side of log()."""
    global LOG_FILE
    LOG_FILE = str(path)


def log(message: str, end: str = "\n") -> None:
    """
    Print message to console and append to log file with timestamp.

    Args:
        message: The message to log
        end: Line ending (default newline, matches print() behavior)
    """
    print(message, end=end)

    # Blank lines go to the file unstamped
    entry = f"[{_utc_now()}] {message}{end}" if message.strip() else f"{message}{end}"
    try:
        with open(LOG_FILE, "a", encoding="utf-8") as f:
            f.write(entry)
    except OSError as e:
        print(f"Warning: Failed to write to log file {LOG_FILE}: {e}", file=sys.stderr)


def log_separator(char: str = "=") -> None:
    log(char * 60)


def log_session_start(command: str) -> None:
    """Open a CLI session block; log_session_end reports its duration."""
    _session_started[command] = time.perf_counter()
    log_separator()
    log(f"CoverageLens {command} started: {_utc_now()}")
    log_separator()


def log_session_end(command: str) -> None:
    started = _session_started.pop(command, None)
    elapsed = f" ({time.perf_counter() - started:.1f}s)" if started is not None else ""
    log_separator()
    log(f"CoverageLens {command} finished{elapsed}: {_utc_now()}")
    log_separator()
    log("")
