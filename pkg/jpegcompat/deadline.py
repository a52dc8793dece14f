import time
from types import TracebackType
from typing import Callable, Optional, Type


class Deadline:
    """
    Cooperative cancellation token with an optional time limit.

    Long-running loops poll ``expired`` between units of work; nothing is
    interrupted from outside. For example:

    >>> with Deadline(2.0) as deadline:
    ...     outcome = search_antecedent(target, spec, budget, deadline=deadline)

    seconds - time limit once entered, or None for no limit
    clock - monotonic clock, replaceable for tests
    """

    def __init__(
        self,
        seconds: Optional[float],
        *,
        clock: Callable[[], float] = time.monotonic,
    ) -> None:
        self._seconds = seconds
        self._clock = clock
        self._cancelled = False
        self._cancel_at = None  # type: Optional[float]

    def __enter__(self) -> "Deadline":
        return self.start()

    def __exit__(
        self,
        exc_type: Optional[Type[BaseException]],
        exc_val: Optional[BaseException],
        exc_tb: Optional[TracebackType],
    ) -> None:
        self._cancel_at = None

    def start(self) -> "Deadline":
        if self._seconds is not None:
            self._cancel_at = self._clock() + self._seconds
        return self

    def cancel(self) -> None:
        self._cancelled = True

    @property
    def expired(self) -> bool:
        if self._cancelled:
            return True
        if self._cancel_at is not None and self._clock() >= self._cancel_at:
            self._cancelled = True
        return self._cancelled

    @property
    def remaining(self) -> Optional[float]:
        if self._cancel_at is not None:
            return max(self._cancel_at - self._clock(), 0.0)
        else:
            return None
