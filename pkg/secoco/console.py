"""
Console output for the Secoco tools.

Colour helpers fall back to plain text when colorama is missing. Verbosity comes
from the SECOCO_LOG environment variable (quiet, info, debug); --verbose on a tool
switches to debug. Long runs can tee every printed line into a run log file.
"""

from __future__ import annotations

import os
import sys
from pathlib import Path
from typing import Optional, TextIO

# ===================== Color output =====================
USE_COLOR = True
try:
    from colorama import init as colorama_init, Fore, Style
    colorama_init(autoreset=True)
    C_OK     = Fore.GREEN + Style.BRIGHT
    C_WARN   = Fore.YELLOW + Style.BRIGHT
    C_ERR    = Fore.RED + Style.BRIGHT
    C_INFO   = Fore.CYAN + Style.BRIGHT
    C_DIM    = Style.DIM
    C_RESET  = Style.RESET_ALL
except Exception:
    USE_COLOR = False
    C_OK = C_WARN = C_ERR = C_INFO = C_DIM = C_RESET = ""

def cstr(s: str, color: str) -> str:
    return f"{color}{s}{C_RESET}" if USE_COLOR else s

def ok(s: str) -> str:   return cstr(s, C_OK)
def warn(s: str) -> str: return cstr(s, C_WARN)
def err(s: str) -> str:  return cstr(s, C_ERR)
def info(s: str) -> str: return cstr(s, C_INFO)
def dim(s: str) -> str:  return cstr(s, C_DIM)


# ===================== Verbosity =====================
LEVELS = {"quiet": 0, "info": 1, "debug": 2}

_level = LEVELS.get(os.getenv("SECOCO_LOG", "info").strip().lower(), 1)
_run_log: Optional[TextIO] = None


def configure(verbose: bool = False, no_color: bool = False) -> None:
    global _level, USE_COLOR
    _level = LEVELS.get(os.getenv("SECOCO_LOG", "info").strip().lower(), 1)
    if verbose:
        _level = LEVELS["debug"]
    if no_color:
        USE_COLOR = False


def level() -> int:
    return _level


def is_quiet() -> bool:
    return _level == 0


def _emit(line: str, plain: str, stream: TextIO = sys.stdout) -> None:
    print(line, file=stream)
    if _run_log is not None:
        _run_log.write(plain + "\n")
        _run_log.flush()


def say(msg: str) -> None:
    """Plain line at info level."""
    if _level >= 1:
        _emit(msg, msg)


def log_info(msg: str) -> None:
    if _level >= 1:
        _emit(info(f"[INFO] {msg}"), f"[INFO] {msg}")


def log_ok(msg: str) -> None:
    if _level >= 1:
        _emit(ok(msg), msg)


def log_debug(msg: str) -> None:
    if _level >= 2:
        _emit(dim(f"[DEBUG] {msg}"), f"[DEBUG] {msg}")


def log_warn(msg: str) -> None:
    _emit(warn(f"[WARN] {msg}"), f"[WARN] {msg}", sys.stderr)


def log_error(msg: str) -> None:
    _emit(err(f"ERROR: {msg}"), f"ERROR: {msg}", sys.stderr)


# ===================== Run log file =====================
def open_run_log(path: Path, append: bool = False) -> None:
    global _run_log
    close_run_log()
    path.parent.mkdir(parents=True, exist_ok=True)
    _run_log = open(path, "a" if append else "w", encoding="utf-8")


def close_run_log() -> None:
    global _run_log
    if _run_log is not None:
        try:
            _run_log.close()
        except Exception:
            pass
        _run_log = None
