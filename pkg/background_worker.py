"""
Worker threads for the Stage-1 fan-out and evaluation runs, and a logging progress monitor.
"""

from dataclasses import dataclass
import logging
from threading import BoundedSemaphore, Lock, Thread
from typing import Any, Optional

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class TaskResult:
    value: Any = None
    error: Optional[BaseException] = None

    @property
    def failed(self):
        return self.error is not None


# Thread class that executes one task
class WorkerThread(Thread):
    """Worker Thread Class.

    Runs `handler()` once, keeps its return value or exception, and calls `on_done(result)`.
    The thread starts on creation.
    """

    def __init__(self, handler, name=None, semaphore=None, on_done=None):
        Thread.__init__(self, name=name, daemon=True)
        self._handler = handler
        self._semaphore = semaphore
        self._on_done = on_done
        self.result = None
        self.start()

    def run(self):
        try:
            if self._semaphore is not None:
                with self._semaphore:
                    self.result = TaskResult(self._handler())
            else:
                self.result = TaskResult(self._handler())
        except Exception as e:
            logger.debug("Task %s failed", self.name, exc_info=True)
            self.result = TaskResult(error=e)

        if self._on_done is not None:
            self._on_done(self.result)


def run_parallel(handlers, limit=None, names=None, on_done=None):
    """run_parallel() runs every handler in its own worker thread and waits for all of them.

    At most `limit` handlers run at once when a limit is given. Results come back in handler order;
    an exception raised by a handler is returned in its TaskResult, never re-raised.
    """
    semaphore = BoundedSemaphore(limit) if limit else None
    names = names or [None] * len(handlers)
    workers = [WorkerThread(h, name, semaphore, on_done) for h, name in zip(handlers, names)]
    for worker in workers:
        worker.join()
    return [worker.result for worker in workers]


class ProgressMonitor:
    """ProgressMonitor tracks the progress of a long evaluation and reports it through logging.

    Progress values are 0 to 100 within the current subrange; set_subrange() maps them onto a
    part of the overall range, so nested steps report in their own units.
    """

    def __init__(self, title, log=None):
        self.title = title
        self.maximum = 100
        self.value = 0
        self.cancelled = False

        self.subrange_min = 0
        self.subrange_max = 100
        self.subrange_value = 0

        self.message = ""
        self.errors = []

        self._log = log or logger
        self._lock = Lock()

    def cancel(self):
        self.cancelled = True

    def progress_message(self, subrange_value, message):
        with self._lock:
            changed = False

            subrange_value = min(max(subrange_value, 0), 100)
            if self.subrange_value != subrange_value:
                self.subrange_value = subrange_value
                changed = True

            value = subrange_value * (self.subrange_max - self.subrange_min) / self.maximum + self.subrange_min
            if self.value != value:
                self.value = value
                changed = True

            if message:
                self.message = message
                changed = True

            if changed and message:
                self._log.info("%s [%3d%%] %s", self.title, int(self.value), message)

        return not self.cancelled

    def error_message(self, message):
        with self._lock:
            self.errors.append(message)
        self._log.warning("%s: %s", self.title, message)

    def get_subrange(self):
        return (self.subrange_min, self.subrange_max)

    def set_subrange(self, sub_min, sub_max):
        """Convert 0 to 100 to min & max"""
        self.subrange_min = sub_min
        self.subrange_max = sub_max

        # apply new subrange
        self.progress_message(0, "")
