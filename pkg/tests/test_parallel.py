import math
import threading

import pytest

from jpegcompat.deadline import Deadline
from jpegcompat.parallel import BlockPool


def test_inline_pool():
    """
    A single-worker pool runs jobs in the calling thread.
    """
    threads = []
    with BlockPool() as pool:
        results = pool.map(lambda item: threads.append(threading.get_ident()) or item * 2, [1, 2, 3])
        assert pool.executor is None
    assert results == [2, 4, 6]
    assert set(threads) == {threading.get_ident()}


def test_thread_pool_keeps_order():
    with BlockPool(4, processes=False) as pool:
        assert pool.map(math.isqrt, list(range(100))) == [math.isqrt(i) for i in range(100)]


def test_process_pool():
    with BlockPool(2) as pool:
        assert pool.map(abs, [-3, 2, -1]) == [3, 2, 1]
        assert pool._executor is not None
    assert pool._executor is None


def test_pool_settings():
    assert BlockPool.from_setting(3).workers == 3
    assert BlockPool.from_setting(0).workers >= 1
    with pytest.raises(ValueError):
        BlockPool(0)


@pytest.mark.asyncio
async def test_map_async():
    """
    The awaitable form gives the same ordered results.
    """
    with BlockPool(3, processes=False) as pool:
        assert await pool.map_async(math.isqrt, [4, 9, 16, 25]) == [2, 3, 4, 5]
    with BlockPool() as pool:
        assert await pool.map_async(abs, [-1, -2]) == [1, 2]


class FakeClock:
    def __init__(self):
        self.now = 100.0

    def __call__(self):
        return self.now


def test_deadline_expires():
    clock = FakeClock()
    with Deadline(2.0, clock=clock) as deadline:
        assert not deadline.expired
        assert deadline.remaining == 2.0
        clock.now += 1.5
        assert deadline.remaining == pytest.approx(0.5)
        clock.now += 0.5
        assert deadline.expired
        assert deadline.remaining == 0.0
        # expiry is sticky
        clock.now -= 10
        assert deadline.expired


def test_deadline_without_limit():
    """
    No limit never expires on its own, but can still be cancelled.
    """
    deadline = Deadline(None).start()
    assert deadline.remaining is None
    assert not deadline.expired
    deadline.cancel()
    assert deadline.expired


def test_deadline_not_started():
    clock = FakeClock()
    deadline = Deadline(1.0, clock=clock)
    clock.now += 5
    assert not deadline.expired
    assert deadline.remaining is None
