import functools
from time import monotonic
from typing import Type

from pairsim.app import current_app


def statsd(namespace):
    def time_function(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            app = current_app()
            start_time = monotonic()
            res = func(*args, **kwargs)
            elapsed_time = monotonic() - start_time
            stat = "{namespace}.{func}".format(namespace=namespace, func=func.__name__)
            if app.statsd_client is not None:
                app.statsd_client.incr(stat)
                app.statsd_client.timing(stat, elapsed_time)
            app.logger.debug("{} call {} took {:.4f}".format(namespace, func.__name__, elapsed_time))
            return res

        return wrapper

    return time_function


def statsd_catch(namespace: str, counter_name: str, exception: Type[BaseException]):
    """Increases a statsd counter when a given exception is raised.

    The exception is always re-raised. Other exceptions pass through untouched.

    Parameters
    ----------
    namespace : str, required
        The statsd counter namespace.

    counter_name : str, required
        The statsd counter name.

    exception : Type[BaseException]
        The exception to catch and raise the counter upon.
    """

    def catch_function(func):
        @functools.wraps(func)
        def wrapper(*args, **kwargs):
            try:
                return func(*args, **kwargs)
            except exception:
                app = current_app()
                if app.statsd_client is not None:
                    app.statsd_client.incr(f"{namespace}.{counter_name}")
                raise

        return wrapper

    return catch_function
