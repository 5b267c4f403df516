#!/usr/bin/env python3
"""
Filename: logging_config.py
Description: Centralized logging configuration for the Agent Name Service
Provides consistent logging setup across registry, resolver and service
modules with daily rotation
"""

import logging
import os
import re
import sys
from logging.handlers import TimedRotatingFileHandler
from typing import Optional

LOG_DIR_ENV = "ANS_LOG_DIR"


def _logs_dir() -> str:
    """Return the log directory, creating it if needed."""
    logs_dir = os.environ.get(LOG_DIR_ENV)
    if not logs_dir:
        script_dir = os.path.dirname(os.path.abspath(__file__))
        logs_dir = os.path.join(script_dir, "logs")
    os.makedirs(logs_dir, exist_ok=True)
    return logs_dir


def setup_logger(
    name: str,
    log_filename: Optional[str] = None,
    level: int = logging.INFO,
    enable_console: bool = True,
    log_format: str = "%(asctime)s - %(levelname)s - %(message)s",
) -> logging.Logger:
    """
    Setup a logger with file and optional console handlers.

    Args:
        name (str): Logger name
        log_filename (str, optional): Name of log file (without path).
                                     If None, uses logger name + '.log'
        level (int): Logging level (default: logging.INFO)
        enable_console (bool): Enable console output (default: True)
        log_format (str): Log message format string

    Returns:
        logging.Logger: Configured logger instance
    """
    logger = logging.getLogger(name)

    if log_filename is None:
        log_filename = f"{name.split('.')[-1]}.log"

    log_formatter = logging.Formatter(log_format)

    # Daily rotation, keep 7 days
    if not any(isinstance(h, TimedRotatingFileHandler) for h in logger.handlers):
        file_handler = TimedRotatingFileHandler(
            os.path.join(_logs_dir(), log_filename),
            when="midnight",
            interval=1,
            backupCount=7,
            encoding="utf-8",
        )
        file_handler.setFormatter(log_formatter)
        file_handler.suffix = ".%Y-%m-%d.log"
        file_handler.extMatch = re.compile(r"^\.\d{4}-\d{2}-\d{2}\.log$")
        logger.addHandler(file_handler)

    if enable_console:
        have_console = any(
            type(h) is logging.StreamHandler for h in logger.handlers
        )
        if not have_console:
            console_handler = logging.StreamHandler(sys.stdout)
            console_handler.setFormatter(log_formatter)
            logger.addHandler(console_handler)

    logger.setLevel(level)
    logger.propagate = False
    return logger


def setup_registry_logger(enable_console: bool = False) -> logging.Logger:
    """
    Setup logger shared by the registry, CA, store, audit log and adapters.

    Args:
        enable_console (bool): Enable console output (default: False for module import)

    Returns:
        logging.Logger: Configured registry logger
    """
    return setup_logger(
        name="ans_registry",
        log_filename="ans_registry.log",
        enable_console=enable_console,
        log_format="%(asctime)s [%(levelname)s] %(message)s",
    )


def setup_resolver_logger() -> logging.Logger:
    """
    Setup logger for the resolver client.

    File only: CLI verbs print JSON on stdout.
    """
    return setup_logger(
        name="ans_resolver",
        log_filename="ans_resolver.log",
        enable_console=False,
    )


def setup_service_logger(enable_console: bool = True) -> logging.Logger:
    """
    Setup logger for the HTTP service process.

    Args:
        enable_console (bool): Enable console output (default: True)

    Returns:
        logging.Logger: Configured service logger
    """
    return setup_logger(
        name="ans_service",
        log_filename="ans_service.log",
        enable_console=enable_console,
    )


def get_logger(module_name: str, enable_console: bool = True) -> logging.Logger:
    """
    Get a configured logger for any module.

    Args:
        module_name (str): Module name (usually __name__)
        enable_console (bool): Enable console output (default: True)

    Returns:
        logging.Logger: Configured logger instance
    """
    return setup_logger(name=module_name, enable_console=enable_console)
