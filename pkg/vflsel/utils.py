import logging
import zlib
from enum import Enum
from itertools import product
from typing import Any, Dict, Optional

import numpy as np
import pandas as pd
from rich.logging import RichHandler

from .errors import DomainError


def make_logger(name: str, path: Optional[str] = None, level: Optional[int] = logging.INFO) -> logging.Logger:
    """generate new logger in a standardized way for vflsel

    Returns:
        logging.Logger: console logger (rich) when path is None; file logger otherwise
    """
    logger = logging.getLogger(name)
    logger.setLevel(level)

    if path is None:
        ch = RichHandler(show_path=False, log_time_format="%Y-%m-%d %H:%M:%S")
        ch.setLevel(level)
        ch.setFormatter(logging.Formatter("%(name)s - %(message)s"))
        logger.addHandler(ch)
    else:
        formatter = logging.Formatter(
            "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
            datefmt="%Y-%m-%d %H:%M:%S",
        )
        fh = logging.FileHandler(path, mode="w")
        fh.setLevel(level)
        fh.setFormatter(formatter)
        logger.addHandler(fh)

    return logger


def get_logger(name: str) -> logging.Logger:
    logger = logging.getLogger(name=name)
    if len(logger.handlers) == 0:
        logger = make_logger(name, level=logging.INFO)
    return logger


def set_log_level(level: int) -> None:
    """Apply one level to every vflsel logger created so far and to later ones."""
    logging.getLogger("vflsel").setLevel(level)
    for name, logger in logging.Logger.manager.loggerDict.items():
        if name.startswith("vflsel") and isinstance(logger, logging.Logger):
            logger.setLevel(level)
            for h in logger.handlers:
                h.setLevel(level)


def derive_seed(master: int, *labels: Any) -> int:
    """Sub-seed for one random component, e.g. derive_seed(seed, "party-init", 2).

    Labels are hashed with CRC32 so the mapping does not depend on Python's hash salt.
    """
    keys = [zlib.crc32(str(x).encode("utf-8")) for x in labels]
    ss = np.random.SeedSequence(entropy=int(master), spawn_key=tuple(keys))
    return int(ss.generate_state(1, dtype=np.uint32)[0])


def ceil_div(a: int, b: int) -> int:
    return -(-a // b)


def expand_grid(dictionary: Dict[str, Any]) -> pd.DataFrame:
    return pd.DataFrame([row for row in product(*dictionary.values())], columns=dictionary.keys())


def check_finite(x: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(x)):
        raise DomainError("Non-finite values found in {}.".format(what))


def to_jsonable(x: Any) -> Any:
    """Convert numpy scalars/arrays (possibly nested in dicts and lists) into plain python."""
    if isinstance(x, Enum):
        return x.value
    if isinstance(x, dict):
        return {str(k): to_jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [to_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return to_jsonable(x.tolist())
    if isinstance(x, np.bool_):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, np.floating):
        v = float(x)
        return v if np.isfinite(v) else None
    if isinstance(x, float) and not np.isfinite(x):
        return None
    return x
