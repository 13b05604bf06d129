import numpy as np

from qbba_lab.rng import RngStream, rng_gaussian, rng_uniform


def test_same_seed_same_sequence():
    a = RngStream(42)
    b = RngStream(42)
    for _ in range(5):
        np.testing.assert_array_equal(a.gaussian((3, 3)), b.gaussian((3, 3)))
        np.testing.assert_array_equal(a.uniform(7), b.uniform(7))
        assert a.integers(0, 1000) == b.integers(0, 1000)


def test_replay_is_bit_exact():
    first = [RngStream(7).gaussian(16) for _ in range(1)][0]
    draws = RngStream(7)
    np.testing.assert_array_equal(draws.gaussian(16), first)


def test_different_seeds_differ():
    assert not np.array_equal(RngStream(0).gaussian(8), RngStream(1).gaussian(8))


def test_fork_labels_independent():
    root = RngStream(3)
    a = root.fork("alpha").gaussian(8)
    b = root.fork("beta").gaussian(8)
    assert not np.array_equal(a, b)


def test_fork_reproducible_regardless_of_parent_position():
    root1 = RngStream(5)
    root1.gaussian((100,))  # consume the parent
    child1 = root1.fork("worker")
    child2 = RngStream(5).fork("worker")
    np.testing.assert_array_equal(child1.gaussian(10), child2.gaussian(10))


def test_nested_fork_paths_distinct():
    root = RngStream(9)
    a = root.fork("a").fork("b").uniform(4)
    b = root.fork("a/b").uniform(4)
    assert not np.array_equal(a, b)


def test_gaussian_moments():
    draws = RngStream(123).gaussian(1_000_000)
    assert abs(draws.mean()) < 0.01
    assert abs(draws.var() - 1.0) < 0.02


def test_uniform_range_and_mean():
    draws = RngStream(321).uniform(200_000)
    assert draws.min() >= 0.0
    assert draws.max() < 1.0
    assert abs(draws.mean() - 0.5) < 0.01


def test_position_counts_draw_calls():
    s = RngStream(0)
    assert s.position == 0
    s.gaussian(4)
    s.uniform(4)
    s.integers(0, 5)
    assert s.position == 3


def test_functional_aliases():
    s1, s2 = RngStream(2), RngStream(2)
    np.testing.assert_array_equal(rng_gaussian(s1, (2, 2)), s2.gaussian((2, 2)))
    np.testing.assert_array_equal(rng_uniform(s1, 3), s2.uniform(3))


def test_choice_without_replacement_distinct():
    s = RngStream(8)
    for _ in range(50):
        picked = s.choice_without_replacement(16, 5)
        assert len(set(picked.tolist())) == 5
        assert all(0 <= p < 16 for p in picked)
