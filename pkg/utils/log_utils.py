"""Logging setup with the bracketed-tag line format"""
import logging
import sys

from config import LOG_LEVEL

ROOT_LOGGER = "texroi"


class TagFormatter(logging.Formatter):
    """Render records as "[TAG] message", TAG being the logger's last name part."""

    def format(self, record: logging.LogRecord) -> str:
        tag = record.name.rsplit(".", 1)[-1].upper()
        message = record.getMessage()
        if record.levelno >= logging.WARNING:
            message = f"{record.levelname}: {message}"
        line = f"[{tag}] {message}"
        if record.exc_info:
            line = f"{line}\n{self.formatException(record.exc_info)}"
        return line


def get_logger(tag: str) -> logging.Logger:
    """Logger named texroi.<tag>; its records print as [TAG]."""
    return logging.getLogger(f"{ROOT_LOGGER}.{tag}")


def configure_logging(level: str = LOG_LEVEL) -> None:
    """Attach a single stderr handler to the package logger (idempotent)."""
    root = logging.getLogger(ROOT_LOGGER)
    root.setLevel(level.upper())
    if not any(getattr(h, "_texroi", False) for h in root.handlers):
        handler = logging.StreamHandler(sys.stderr)
        handler.setFormatter(TagFormatter())
        handler._texroi = True
        root.addHandler(handler)
