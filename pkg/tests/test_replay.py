import numpy as np
import pytest
from scipy import stats

from opac.replay import ReplayBuffer, Transition


def _t(i, obs_dim=2, act_dim=1):
    return Transition(np.full(obs_dim, float(i)), np.full(act_dim, -float(i)), float(i),
                      np.full(obs_dim, i + 0.5), 0.0)


def test_fifo_overwrite():
    buf = ReplayBuffer(2, 1, capacity=2)
    for i in (1, 2, 3):
        buf.push(_t(i))
    assert len(buf) == 2
    assert list(buf.contents().r) == [2.0, 3.0]


def test_single_item_sample(rng):
    buf = ReplayBuffer(2, 1, capacity=5)
    t = _t(7)
    buf.push(t)
    got = buf.sample(1, rng).transitions()[0]
    assert got.r == t.r and np.array_equal(got.s, t.s) and np.array_equal(got.s_next, t.s_next)


def test_size_bounded():
    buf = ReplayBuffer(2, 1, capacity=100)
    for i in range(10_000):
        buf.push(_t(i))
        assert len(buf) <= 100
    assert buf.pushes == 10_000
    assert list(buf.contents().r) == [float(i) for i in range(9900, 10_000)]


def test_contents_before_full():
    buf = ReplayBuffer(2, 1, capacity=10)
    for i in range(4):
        buf.push(_t(i))
    assert list(buf.contents().r) == [0.0, 1.0, 2.0, 3.0]


def test_identical_transitions(rng):
    buf = ReplayBuffer(2, 1, capacity=10)
    for _ in range(5):
        buf.push(_t(3))
    assert np.all(buf.sample(20, rng).r == 3.0)


def test_chi_squared_uniformity():
    buf = ReplayBuffer(2, 1, capacity=10)
    for i in range(10):
        buf.push(_t(i))
    draws = buf.sample(100_000, np.random.default_rng(2024)).r.astype(int)
    counts = np.bincount(draws, minlength=10)
    assert stats.chisquare(counts).pvalue > 0.001


def test_sampling_reproducible_and_pure():
    buf = ReplayBuffer(2, 1, capacity=10)
    for i in range(6):
        buf.push(_t(i))
    before = buf.contents()
    a = buf.sample_indices(50, np.random.default_rng(5))
    b = buf.sample_indices(50, np.random.default_rng(5))
    np.testing.assert_array_equal(a, b)
    after = buf.contents()
    np.testing.assert_array_equal(before.s, after.s)
    assert (buf.cursor, len(buf)) == (6, 6)


def test_errors(rng):
    buf = ReplayBuffer(2, 1, capacity=3)
    with pytest.raises(ValueError):
        buf.sample(1, rng)
    with pytest.raises(ValueError):
        buf.push(Transition(np.zeros(3), np.zeros(1), 0.0, np.zeros(2), 0.0))
    with pytest.raises(ValueError):
        ReplayBuffer(2, 1, capacity=0)
