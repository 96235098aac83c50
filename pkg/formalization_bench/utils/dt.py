import datetime as dt
import time


def get_now():
    return dt.datetime.utcnow().replace(microsecond=0)


def get_timestamp() -> str:
    return get_now().strftime('%Y-%m-%dT%H:%M:%SZ')


class Stopwatch(object):
    """
    Measure wall time in whole milliseconds

    usage:
    with Stopwatch() as watch:
        ...
    watch.elapsed_ms
    """

    def __init__(self):
        self.start = None
        self.elapsed_ms = 0

    def __enter__(self):
        self.start = time.monotonic()
        return self

    def __exit__(self, *exc_info):
        self.elapsed_ms = int((time.monotonic() - self.start) * 1000)
        return False
