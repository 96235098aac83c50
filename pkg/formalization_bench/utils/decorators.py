import functools
import inspect
import time


def rangetest(strict_range: bool = True, *, exception=AssertionError, **kargs):
    """
    Test if argument in range of values, otherwise raise `exception`

    usage:
    @rangetest(arg=(0, 1))
    def f(arg):
        pass

    @rangetest(strict_range=False, exception=ValueError, grade=(0, 10))
    def g(grade):
        pass
    """
    privates = kargs

    def inner(func):
        signature = inspect.signature(func)

        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            bound = signature.bind(*args, **kwargs)
            for argname, (low, high) in privates.items():
                if argname not in bound.arguments:
                    continue
                value = bound.arguments[argname]
                if value is None:
                    continue
                ok = (
                    low < value < high
                    if strict_range else
                    low <= value <= high
                )
                if not ok:
                    raise exception(
                        "unexpected value '{}' for argument '{}'".format(
                            value, argname
                        )
                    )
            return func(*args, **kwargs)
        return wrapper
    return inner


def retry(
        attempts: int, *, on: tuple = (Exception,), backoff: float = 0.0,
        logger=None, sleep=time.sleep
        ):
    """
    Call the function up to `attempts` times while it raises one of `on`

    The pause before retry number k is `backoff * 2 ** (k - 1)` seconds.
    The last exception is re-raised when attempts are exhausted.

    usage:
    @retry(3, on=(requests.ConnectionError,), backoff=1.0)
    def fetch():
        pass
    """
    assert attempts >= 1, 'at least one attempt is required'

    def inner(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            for attempt in range(1, attempts + 1):
                try:
                    return func(*args, **kwargs)
                except on as e:
                    if attempt == attempts:
                        raise
                    if logger is not None:
                        logger.warning(
                            f"{func.__name__} failed ({e.__class__.__name__}:"
                            f" {e}), retry {attempt}/{attempts - 1}"
                        )
                    if backoff:
                        sleep(backoff * 2 ** (attempt - 1))
        return wrapper
    return inner
