import logging
import os
from datetime import datetime


def setup_logging(level=None, log_dir=None):
    """Configure logging to file and stderr.

    Level and directory fall back to DIFFICULTY_LOG_LEVEL / DIFFICULTY_LOG_DIR.
    An empty log directory disables the file handler.
    """
    level = (level or os.getenv("DIFFICULTY_LOG_LEVEL") or "INFO").upper()
    if log_dir is None:
        log_dir = os.getenv("DIFFICULTY_LOG_DIR", "logs")

    handlers = [logging.StreamHandler()]
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)
        log_file = os.path.join(log_dir, f"difficulty_{datetime.now().strftime('%Y%m%d_%H%M%S')}.log")
        handlers.append(logging.FileHandler(log_file))

    logging.basicConfig(
        level=getattr(logging, level, logging.INFO),
        format="%(asctime)s [%(levelname)s] %(message)s",
        handlers=handlers,
        force=True,
    )
    return logging.getLogger()
