# app/core/logging_config.py

import logging
from logging.handlers import RotatingFileHandler
import os
import sys

from app.core.config import get_settings

# Constants
MAX_LOG_SIZE_MB = 10  # 10MB per log file
BACKUP_COUNT = 5      # Keep 5 backup files

# Define log directory
LOG_DIR = os.path.abspath(get_settings().LOG_DIR)
os.makedirs(LOG_DIR, exist_ok=True)

# Production environment detection
IS_PRODUCTION = get_settings().ENVIRONMENT.lower() == "production"


def setup_file_logger(name: str, filename: str, level=logging.INFO) -> logging.Logger:
    """
    Creates a rotating file logger with specified filename and level.
    """
    logger = logging.getLogger(name)
    # Module reloads (pytest, CLI re-entry) must not stack handlers.
    if logger.handlers:
        return logger

    log_path = os.path.join(LOG_DIR, filename)
    handler = RotatingFileHandler(
        log_path,
        maxBytes=MAX_LOG_SIZE_MB * 1024 * 1024,
        backupCount=BACKUP_COUNT,
        delay=True  # Delay file creation until first write
    )
    formatter = logging.Formatter('%(asctime)s - %(levelname)s - %(name)s - %(message)s')
    handler.setFormatter(formatter)

    logger.setLevel(level)
    logger.addHandler(handler)
    logger.propagate = False
    return logger


def setup_stream_logger(name: str, level=logging.ERROR) -> logging.Logger:
    """
    Creates a logger that outputs to the console (stderr, stdout carries CLI output).
    Production: Only ERROR level logs
    Development: INFO level logs
    """
    logger = logging.getLogger(name)
    if logger.handlers:
        return logger
    logger.setLevel(level)

    handler = logging.StreamHandler(sys.stderr)
    formatter = logging.Formatter('%(asctime)s - %(name)s - %(levelname)s - %(message)s')
    handler.setFormatter(formatter)

    logger.addHandler(handler)
    logger.propagate = False
    return logger


_DEBUG_OR_INFO = logging.DEBUG if not IS_PRODUCTION else logging.INFO

# === MODULE LOGGERS ===
# Coefficient tensors, class bases, membership checks
tensor_logger = setup_file_logger("tensor", "tensor.log", _DEBUG_OR_INFO)
# Linearizations, spectra, hyperbolicity verdicts
spectral_logger = setup_file_logger("spectral", "spectral.log", _DEBUG_OR_INFO)
# Ladder certificates and bracket spans
certificate_logger = setup_file_logger("certificate", "certificate.log", _DEBUG_OR_INFO)
# Deterministic flow, derivative polynomials, K_delta scans
flow_logger = setup_file_logger("flow", "flow.log", _DEBUG_OR_INFO)
# SDE ensembles, exit times, coercivity, flux
simulation_logger = setup_file_logger("simulation", "simulation.log", logging.INFO)
# Switched chain
chain_logger = setup_file_logger("chain", "chain.log", logging.INFO)
# Command line runs and manifests
cli_logger = setup_file_logger("cli", "cli.log", logging.INFO)

# Error tracking
error_logger = setup_file_logger("error", "error.log", logging.ERROR)

# === CONSOLE LOGGER ===
console_logger = setup_stream_logger("console", logging.ERROR if IS_PRODUCTION else logging.INFO)

# === THIRD-PARTY LIBRARY LOGGING ===
logging.getLogger("matplotlib").setLevel(logging.WARNING)
logging.getLogger("PIL").setLevel(logging.WARNING)
