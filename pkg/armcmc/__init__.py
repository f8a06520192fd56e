import os
import logging

from .logging_utils import ConsoleColors, ColorizingFormatter, MultiplexingHandler
from . import exceptions

__version__ = "0.3.0"


def init_logger(name="ARMCMC",
           col_fmt="{asctime}: %s{message}%s"%(ConsoleColors.BEGIN, ConsoleColors.END),
           datefmt="%Y-%m-%d %H:%M:%S", loglevel="INFO"):
    """Returns the global armcmc logger (initializing if not already done so, with the given values)"""
    global log
    if log is None:
        log = logging.getLogger(name)
        log.propagate = False

        level = os.environ.get('ARMCMC_LOG_LEVEL') or 'INFO'
        log.setLevel(getattr(logging, level, logging.INFO))

        global log_console_handler, log_formatter

        log_formatter = ColorizingFormatter(col_fmt, datefmt, style="{")

        log_console_handler = MultiplexingHandler()
        log_console_handler.setFormatter(log_formatter)
        log_console_handler.setLevel(getattr(logging, loglevel))
        log.addHandler(log_console_handler)

        exceptions.set_logger(log)
    return log


def set_logger(logger):
    """Routes armcmc messages, including logged exceptions, to another logger"""
    global log
    log = logger
    exceptions.set_logger(logger)


def set_console_level(level: str):
    """Adjusts console verbosity, e.g. from the CLI's --log-level option"""
    log_console_handler.setLevel(getattr(logging, level.upper(), logging.INFO))
    if log.level > log_console_handler.level:
        log.setLevel(log_console_handler.level)


log = None
init_logger()
