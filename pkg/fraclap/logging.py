# Copyright 2024 Ole Kliemann
# SPDX-License-Identifier: MIT

from contextlib import contextmanager
from typing import Iterator
import logging
import time

from drresult import Panic

from fraclap.errors import FracLapError

"""
Logging helpers shared by the library and the command line.

Functions:
    - configure: Install the root handler used by the command line.
    - log_stage: Context manager timing a named stage and logging its failures.
"""

LOG_FORMAT = '%(asctime)s %(levelname)s %(name)s: %(message)s'


def configure(level: int = logging.INFO) -> None:
    """Install a stream handler on the root logger.

    Args:
        level (int): Threshold for the root logger.
    """
    logging.basicConfig(level=level, format=LOG_FORMAT, force=True)


@contextmanager
def log_stage(logger: logging.Logger, stage: str) -> Iterator[None]:
    """Time a stage and log how it ended.

    A `Panic` leaving the stage is logged at CRITICAL with its filtered trace,
    an expected `FracLapError` at WARNING. Both are re-raised.

    Args:
        logger (logging.Logger): The logger to use.
        stage (str): Human readable name of the stage.

    Usage:
        with log_stage(logger, 'assemble stiffness'):
            K = assemble_stiffness(mesh, params, cfg).unwrap_or_raise()
    """
    logger.debug(f'{stage}: started')
    start = time.perf_counter()
    try:
        yield
    except Panic as e:
        logger.critical(f'{stage}: {e.trace()}')
        raise
    except FracLapError as e:
        logger.warning(f'{stage}: {type(e).__name__}: {e}')
        raise
    logger.info(f'{stage}: done in {time.perf_counter() - start:.3f}s')
