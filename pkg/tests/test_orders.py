from fractions import Fraction

from hypothesis import given, settings
from hypothesis import strategies as st

from fairagg import orders


def test_first_order_example():
    pi = [Fraction(1, 2)] * 2
    assert orders.first_order([2, 1], [1, 2], pi)  # same distribution, different scenarios
    assert not orders.almost_sure([2, 1], [1, 2])
    assert not orders.first_order([3, 1], [1, 2], pi)


def test_increasing_convex_weaker_than_first_order():
    pi = [Fraction(1, 2)] * 2
    u, v = [2, 2], [1, 3]
    assert not orders.first_order(u, v, pi)
    assert orders.increasing_convex(u, v, pi)


def test_value_tolerance():
    pi = [0.5, 0.5]
    assert not orders.first_order([1 + 1e-12, 2], [1, 2], pi)
    assert orders.first_order([1 + 1e-12, 2], [1, 2], pi, value_tol=1e-9)


pairs = st.integers(2, 6).flatmap(
    lambda n: st.tuples(st.lists(st.integers(0, 9), min_size=n, max_size=n), st.lists(st.integers(0, 9), min_size=n, max_size=n))
)


@settings(max_examples=300, deadline=None)
@given(pairs)
def test_chain(pair):
    u, v = pair
    pi = [Fraction(1, len(u))] * len(u)
    a = orders.almost_sure(u, v)
    f = orders.first_order(u, v, pi)
    i = orders.increasing_convex(u, v, pi)
    e = orders.expectation(u, v, pi)
    assert (not a or f) and (not f or i) and (not i or e)


@settings(max_examples=200, deadline=None)
@given(pairs)
def test_first_order_is_sorted_comparison(pair):
    # with equal weights, first-order dominance means sorted U <= sorted V
    u, v = pair
    pi = [Fraction(1, len(u))] * len(u)
    assert orders.first_order(u, v, pi) == all(a <= b for a, b in zip(sorted(u), sorted(v)))
