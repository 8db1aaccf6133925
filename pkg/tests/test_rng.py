import pytest
from hypothesis import given, strategies as st

from heatlens.rng import MASK64, Xoshiro256pp, derive_seed, splitmix64


def test_splitmix64_reference_vector():
    _, out = splitmix64(0)
    assert out == 0xE220A8397B1DCDAF


def test_xoshiro_reference_vector():
    rng = Xoshiro256pp.from_state([1, 2, 3, 4])
    assert rng.next_u64() == 41943041


def test_all_zero_state_rejected():
    with pytest.raises(ValueError):
        Xoshiro256pp.from_state([0, 0, 0, 0])


def test_same_seed_same_stream():
    a, b = Xoshiro256pp(7), Xoshiro256pp(7)
    assert [a.next_u64() for _ in range(20)] == [b.next_u64() for _ in range(20)]
    assert Xoshiro256pp(7).next_u64() != Xoshiro256pp(8).next_u64()


def test_derived_seeds_are_distinct():
    seeds = {derive_seed(3, i) for i in range(1000)}
    assert len(seeds) == 1000
    assert derive_seed(3, 0, 1) != derive_seed(3, 1, 0)


@given(st.integers(0, MASK64))
def test_random_in_unit_interval(seed):
    rng = Xoshiro256pp(seed)
    for _ in range(10):
        assert 0.0 <= rng.random() < 1.0


@given(st.integers(0, MASK64), st.integers(-50, 50), st.integers(1, 1000))
def test_integers_in_range(seed, low, span):
    rng = Xoshiro256pp(seed)
    assert all(low <= rng.integers(low, low + span) < low + span for _ in range(10))


def test_integers_empty_range():
    with pytest.raises(ValueError):
        Xoshiro256pp(0).integers(3, 3)


def test_uniform_mean():
    rng = Xoshiro256pp(11)
    vals = [rng.uniform(0.2, 0.3) for _ in range(20000)]
    assert min(vals) >= 0.2 and max(vals) < 0.3
    assert abs(sum(vals) / len(vals) - 0.25) < 1e-3
