import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from harnacklab.errors import ArgumentError
from harnacklab.loglog import LogLogValue


def test_level_roundtrips():
    x = LogLogValue.from_plain(1234.5)
    assert x.to_float() == 1234.5
    assert x.log_value() == pytest.approx(math.log(1234.5), rel=1e-15)
    y = LogLogValue.from_log(3.0)
    assert y.to_float() == pytest.approx(math.e**3, rel=1e-15)
    z = LogLogValue.from_loglog(1.0)
    assert z.to_float() == pytest.approx(math.exp(math.e), rel=1e-15)


def test_overflow_guards():
    huge = LogLogValue.from_loglog(800.0)
    with pytest.raises(ArgumentError):
        huge.to_float()
    with pytest.raises(ArgumentError):
        huge.log_value()
    # but its log-log payload is directly available
    assert huge.loglog_value() == 800.0
    big_log = LogLogValue.from_log(1000.0)
    with pytest.raises(ArgumentError):
        big_log.to_float()
    assert big_log.log_value() == 1000.0


def test_loglog_requires_value_above_one():
    with pytest.raises(ArgumentError):
        LogLogValue.from_plain(0.5).loglog_value()
    with pytest.raises(ArgumentError):
        LogLogValue.from_plain(0.0).loglog_value()


def test_ordering_across_levels_moderate():
    a = LogLogValue.from_plain(100.0)
    b = LogLogValue.from_log(math.log(100.0))
    c = LogLogValue.from_loglog(math.log(math.log(100.0)))
    assert a == b and b == c
    assert LogLogValue.from_plain(99.0) < b < LogLogValue.from_plain(101.0)


def test_ordering_huge():
    assert LogLogValue.from_loglog(800.0) > LogLogValue.from_log(700.0)
    assert LogLogValue.from_loglog(801.0) > LogLogValue.from_loglog(800.0)
    assert LogLogValue.from_plain(1e300) < LogLogValue.from_loglog(710.0)


def test_compare_against_raw_floats():
    assert LogLogValue.from_log(2.0) > 7.0
    assert LogLogValue.from_log(2.0) < 8.0
    assert LogLogValue.from_plain(0.0) < 1e-300


@settings(max_examples=200, deadline=None)
@given(
    la=st.floats(-50.0, 50.0),
    lb=st.floats(-50.0, 50.0),
    level_a=st.sampled_from(["plain", "single_log"]),
    level_b=st.sampled_from(["plain", "single_log"]),
)
def test_order_isomorphism_on_representable_range(la, lb, level_a, level_b):
    # keep the operands separated so float rounding in the reference
    # route (exp then compare) cannot flip the expected order
    if abs(la - lb) < 1e-9:
        return

    def build(level, l):
        if level == "plain":
            return LogLogValue.from_plain(math.exp(l))
        return LogLogValue.from_log(l)

    a, b = build(level_a, la), build(level_b, lb)
    want = (la > lb) - (la < lb)
    got = (a > b) - (a < b)
    assert got == want


def test_multiplication_matches_floats():
    a = LogLogValue.from_log(3.0)
    b = LogLogValue.from_plain(7.0)
    assert (a * b).to_float() == pytest.approx(7.0 * math.e**3, rel=1e-12)


def test_multiplication_of_two_huge_adds_logs():
    x = LogLogValue.from_loglog(800.0)
    y = x * x  # e^(e^800) squared = e^(2 e^800) = e^(e^(800 + log 2))
    assert y.level == "double_log"
    assert y.payload == pytest.approx(800.0 + math.log(2.0), rel=1e-14)


def test_multiplication_huge_by_moderate_is_absorbed():
    x = LogLogValue.from_loglog(800.0)
    y = x * LogLogValue.from_plain(5.0)
    # the correction term log(5) e^(-800) underflows double precision
    assert y.payload == 800.0


def test_power_rules():
    x = LogLogValue.from_log(10.0)
    assert (x**2.0).log_value() == pytest.approx(20.0, rel=1e-15)
    assert (x**0.5).log_value() == pytest.approx(5.0, rel=1e-15)
    h = LogLogValue.from_loglog(900.0)
    assert (h**3.0).payload == pytest.approx(900.0 + math.log(3.0), rel=1e-14)
    with pytest.raises(ArgumentError):
        x ** (-1.0)


def test_addition_logsumexp_and_saturation():
    a = LogLogValue.from_log(700.0)
    s = a + a
    assert s.log_value() == pytest.approx(700.0 + math.log(2.0), rel=1e-14)
    z = LogLogValue.from_plain(0.0) + LogLogValue.from_plain(2.0)
    assert z.to_float() == 2.0
    huge = LogLogValue.from_loglog(800.0)
    assert (huge + a).payload == 800.0


def test_render_is_total():
    for v in (
        LogLogValue.from_plain(2.0),
        LogLogValue.from_log(500.0),
        LogLogValue.from_log(1000.0),
        LogLogValue.from_loglog(800.0),
    ):
        assert isinstance(v.render(), str) and v.render()
        d = v.as_dict()
        assert set(d) == {"level", "payload", "text", "log10"}


def test_immutability_and_validation():
    v = LogLogValue.from_plain(1.0)
    with pytest.raises(AttributeError):
        v.payload = 2.0
    with pytest.raises(ArgumentError):
        LogLogValue.from_plain(-1.0)
    with pytest.raises(ArgumentError):
        LogLogValue("half_log", 1.0)
    with pytest.raises(ArgumentError):
        LogLogValue.from_log(math.inf)
