import functools
import os
import threading
from datetime import datetime as dt

from termcolor import cprint


class Logger(object):
    """
    Console and file logger shared by every episode worker

    Files go to `<log_dir>/<utc start time>/log<pid>-<n>.log` and roll over
    once they pass MAX_SIZE.

    :attributes:
        log_level(str)='info': lowest level that is written
        to_console(bool)=True: echo lines through termcolor
        logfile(_io.TextIOWrapper): the file currently written to
    """
    MAX_SIZE = 1024 * 1024  # bytes
    LOG_LEVELS = {
        'error': {'color': 'red', 'level': 40},
        'warning': {'color': 'yellow', 'level': 30},
        'info': {'color': 'cyan', 'level': 20},
        'debug': {'color': 'green', 'level': 10}
    }

    def __init__(self, log_dir: str = 'logs', *, to_console: bool = True):
        self.base_path = os.path.join(
            log_dir, dt.utcnow().strftime('%Y-%m-%d_%H-%M-%S')
        )
        # several processes may start within the same second
        os.makedirs(self.base_path, exist_ok=True)
        self.log_level = 'info'
        self.to_console = to_console
        self._lock = threading.RLock()
        self._rollovers = 0
        self.logfile = None
        self.rollover()

    def rollover(self) -> str:
        """Close the current file and continue in a fresh one"""
        if self.logfile is not None:
            self.logfile.close()
        self._rollovers += 1
        name = os.path.join(
            self.base_path, f"log{os.getpid()}-{self._rollovers}.log"
        )
        self.logfile = open(name, 'a', encoding='utf-8')
        return name

    def enabled(self, kind: str) -> bool:
        return (
            self.LOG_LEVELS[kind]['level']
            >= self.LOG_LEVELS[self.log_level]['level']
        )

    def log(self, message: str, /, *, kind: str,
            context: str = None) -> None:
        """
        Write one line to the log file and, optionally, the console

        :arguments:
            message(str): text to log
            kind(str): one of LOG_LEVELS
            context(str | None)=None: prefix such as "<theorem_id>/<config>"
        :raise:
            AssertionError: unknown `kind`
        """
        kind = kind.lower()
        assert kind in self.LOG_LEVELS, "unsupported message kind"
        if not self.enabled(kind):
            return
        line = (
            f"[{dt.utcnow().strftime('%Y-%m-%d %H:%M:%S')}] [{kind.upper()}] "
            + (f"[{context}] " if context else "") + message
        )
        # one whole line per call
        with self._lock:
            self.logfile.write(line + "\n")
            self.logfile.flush()
            if self.to_console:
                cprint(line, self.LOG_LEVELS[kind]['color'])
            if os.path.getsize(self.logfile.name) >= self.MAX_SIZE:
                self.rollover()

    def error(self, message: str, /, **kwargs) -> None:
        self.log(message, kind='error', **kwargs)

    def warning(self, message: str, /, **kwargs) -> None:
        self.log(message, kind='warning', **kwargs)

    def info(self, message: str, /, **kwargs) -> None:
        self.log(message, kind='info', **kwargs)

    def debug(self, message: str, /, **kwargs) -> None:
        self.log(message, kind='debug', **kwargs)

    def set_level(self, level: str, /) -> None:
        """
        Discard every message below `level`

        :raise:
            AssertionError: unknown level
        """
        assert level in self.LOG_LEVELS, 'unsupported logging level'
        self.log_level = level

    def bind(self, context: str, /) -> 'BoundLogger':
        return BoundLogger(self, context)

    def catch_error(self, f):
        """Decorator: log the exception raised by `f` and return None"""
        @functools.wraps(f)
        def inner(*args, **kwargs):
            try:
                return f(*args, **kwargs)
            except Exception as e:
                self.error(
                    f"Function {f.__name__} raised {e.__class__.__name__}:{e}"
                )
        return inner

    def __del__(self):
        logfile = getattr(self, 'logfile', None)
        if logfile is not None:
            logfile.close()


class BoundLogger(object):
    """Logger view that prefixes every line with a fixed context"""

    def __init__(self, logger: Logger, context: str):
        self.logger = logger
        self.context = context

    def error(self, message: str, /) -> None:
        self.logger.error(message, context=self.context)

    def warning(self, message: str, /) -> None:
        self.logger.warning(message, context=self.context)

    def info(self, message: str, /) -> None:
        self.logger.info(message, context=self.context)

    def debug(self, message: str, /) -> None:
        self.logger.debug(message, context=self.context)
