import logging
import sys
from logging.handlers import RotatingFileHandler
from pathlib import Path

from opscore.core.config import settings

ROOT = "opscore"
LOG_FILE = "opscore.log"
LOG_FORMAT = "%(asctime)s - %(name)s - %(levelname)s - [%(funcName)s:%(lineno)d] - %(message)s"
MAX_BYTES = 10 * 1024 * 1024
BACKUPS = 5


def _configure_root() -> logging.Logger:
    """
    Handlers live on the package logger only; concern loggers propagate to it.

    File: <OPSCORE_LOG_DIR>/opscore.log, every level, rotated.
    Console: stderr at OPSCORE_LOG_LEVEL, so anything a command prints on stdout stays clean.
    """
    root = logging.getLogger(ROOT)
    if root.handlers:
        return root
    root.setLevel(logging.DEBUG)
    root.propagate = False
    formatter = logging.Formatter(fmt=LOG_FORMAT, datefmt="%Y-%m-%d %H:%M:%S")

    console = logging.StreamHandler(sys.stderr)
    console.setLevel(getattr(logging, settings.LOG_LEVEL, logging.INFO))
    console.setFormatter(formatter)
    root.addHandler(console)

    log_dir = Path(settings.LOG_DIR)
    log_dir.mkdir(parents=True, exist_ok=True)
    rotating = RotatingFileHandler(log_dir / LOG_FILE, maxBytes=MAX_BYTES, backupCount=BACKUPS, encoding="utf-8")
    rotating.setLevel(logging.DEBUG)
    rotating.setFormatter(formatter)
    root.addHandler(rotating)
    return root


def get_logger(concern: str) -> logging.Logger:
    _configure_root()
    return logging.getLogger(f"{ROOT}.{concern}")


glm_logger = get_logger("glm")
tree_logger = get_logger("trees")
survival_logger = get_logger("survival")
propensity_logger = get_logger("propensity")
service_logger = get_logger("service")
sim_logger = get_logger("simulation")
config_logger = get_logger("config")
