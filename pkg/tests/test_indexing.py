import numpy as np
import pytest

from frl.errors import DomainError, ValidationError
from frl.indexing import MixedRadix


def test_row_major_order():
    r = MixedRadix([2, 3, 2])
    assert r.size == 12
    assert r.encode((0, 0, 0)) == 0
    assert r.encode((0, 0, 1)) == 1
    assert r.encode((0, 1, 0)) == 2
    assert r.encode((1, 0, 0)) == 6
    assert r.decode(7) == (1, 0, 1)


def test_round_trip_and_table():
    rng = np.random.default_rng(3)
    for _ in range(20):
        cards = rng.integers(1, 5, size=rng.integers(1, 5)).tolist()
        r = MixedRadix(cards)
        tab = r.table()
        assert tab.shape == (r.size, len(cards))
        for code in range(r.size):
            vals = r.decode(code)
            assert r.encode(vals) == code
            assert tuple(tab[code]) == vals
    many = r.encode_many(tab)
    assert np.array_equal(many, np.arange(r.size))


def test_empty_radix_is_single_cell():
    r = MixedRadix([])
    assert r.size == 1
    assert r.encode(()) == 0
    assert r.decode(0) == ()


def test_errors():
    with pytest.raises(ValidationError):
        MixedRadix([2, 0])
    r = MixedRadix([2, 2])
    with pytest.raises(DomainError):
        r.encode((2, 0))
    with pytest.raises(DomainError):
        r.decode(4)
    with pytest.raises(DomainError):
        r.encode((0,))
