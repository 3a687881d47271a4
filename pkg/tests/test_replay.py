import math

import numpy as np
import pytest

from segal.errors import EmptyBufferError, InvalidArgumentError
from segal.replay import ReplayBuffer


def test_fifo_eviction_trace():
    buf = ReplayBuffer(2)
    for image_id in ("a", "b", "c"):
        buf.push(image_id)
    assert list(buf.items) == ["b", "c"]


def test_push_into_empty():
    buf = ReplayBuffer(4)
    buf.push("x")
    assert len(buf) == 1


def test_capacity_never_exceeded(rng):
    buf = ReplayBuffer(5)
    for i in range(200):
        buf.push(f"id{i}")
        assert len(buf) <= 5
        if len(buf) and rng.random() < 0.3:
            buf.sample(3, rng)
    assert list(buf.items) == [f"id{i}" for i in range(195, 200)]


def test_sample_single_element(rng):
    buf = ReplayBuffer(3)
    buf.push("a")
    assert buf.sample(4, rng) == ["a", "a", "a", "a"]


def test_sample_binomial_within_3_sigma():
    buf = ReplayBuffer(2)
    buf.push("a")
    buf.push("b")
    rng = np.random.default_rng(99)
    n = 10_000
    draws = buf.sample(n, rng)
    count_a = draws.count("a")
    sigma = math.sqrt(n * 0.25)
    assert abs(count_a - n / 2) < 3 * sigma


def test_sample_deterministic_and_pure():
    buf = ReplayBuffer(4)
    for image_id in ("a", "b", "c"):
        buf.push(image_id)
    before = list(buf.items)
    s1 = buf.sample(10, np.random.default_rng(3))
    s2 = buf.sample(10, np.random.default_rng(3))
    assert s1 == s2
    assert list(buf.items) == before


def test_empty_sample_errors(rng):
    with pytest.raises(EmptyBufferError):
        ReplayBuffer(2).sample(1, rng)


def test_bad_capacity():
    with pytest.raises(InvalidArgumentError):
        ReplayBuffer(0)


def test_state_round_trip():
    buf = ReplayBuffer(3)
    for image_id in ("a", "b", "c", "d"):
        buf.push(image_id)
    clone = ReplayBuffer.from_state(buf.state())
    assert list(clone.items) == list(buf.items)
    assert clone.insertions == buf.insertions == 4
