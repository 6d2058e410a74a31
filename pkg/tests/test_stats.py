import json
import math
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from labloop.falsification.stats import betainc, t_cdf, welch_t_test

ORACLE = json.loads((Path(__file__).parent / "data" / "welch_oracle.json").read_text())

samples = st.lists(st.floats(-100, 100, allow_nan=False), min_size=2, max_size=15)


def test_hand_worked_example():
    res = welch_t_test([1, 2, 3], [2, 3, 4], "left")
    assert res.t == pytest.approx(-1.224744871391589, abs=1e-12)
    assert res.df == pytest.approx(4.0, abs=1e-9)
    assert res.p == pytest.approx(0.1439320673633454, abs=1e-9)


def test_identical_samples_give_half():
    res = welch_t_test([1.0, 2.0, 4.0], [1.0, 2.0, 4.0], "left")
    assert res.t == 0.0
    assert res.p == 0.5


@pytest.mark.parametrize("case", range(len(ORACLE)))
def test_matches_frozen_oracle(case):
    row = ORACLE[case]
    for tail in ("left", "right", "two"):
        res = welch_t_test(row["a"], row["b"], tail)
        assert abs(res.p - row[f"p_{tail}"]) < 1e-6
    assert res.t == pytest.approx(row["t"], rel=1e-9)
    assert res.df == pytest.approx(row["df"], rel=1e-9)


def test_zero_variance_equal_means():
    assert welch_t_test([2, 2], [2, 2, 2], "left").p == 0.5
    assert welch_t_test([2, 2], [2, 2, 2], "right").p == 0.5
    assert welch_t_test([2, 2], [2, 2, 2], "two").p == 1.0


def test_zero_variance_unequal_means():
    res = welch_t_test([1, 1], [2, 2], "left")
    assert res.t == -math.inf and res.p == 0.0
    assert welch_t_test([1, 1], [2, 2], "right").p == 1.0


def test_one_arm_constant():
    res = welch_t_test([2.0] * 16 + [1.0] * 4, [2.0] * 20, "left")
    assert res.df == pytest.approx(19.0)
    assert res.t == pytest.approx(-2.179449471770337)
    assert res.p < 0.05


def test_rejects_short_and_nonfinite_samples():
    with pytest.raises(ValueError):
        welch_t_test([1.0], [1.0, 2.0])
    with pytest.raises(ValueError):
        welch_t_test([1.0, math.nan], [1.0, 2.0])
    with pytest.raises(ValueError):
        welch_t_test([1.0, 2.0], [1.0, 2.0], "up")


def test_betainc_edges_and_symmetry():
    assert betainc(2.0, 3.0, 0.0) == 0.0
    assert betainc(2.0, 3.0, 1.0) == 1.0
    # I_x(a, b) = 1 - I_{1-x}(b, a)
    assert betainc(2.5, 0.5, 0.3) == pytest.approx(1 - betainc(0.5, 2.5, 0.7), abs=1e-12)
    # I_x(1, 1) = x
    assert betainc(1.0, 1.0, 0.37) == pytest.approx(0.37, abs=1e-14)


def test_t_cdf_one_df_is_cauchy():
    for t in (-3.0, -0.5, 0.7, 10.0):
        assert t_cdf(t, 1.0) == pytest.approx(0.5 + math.atan(t) / math.pi, abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(samples, samples)
def test_tails_are_consistent(a, b):
    left = welch_t_test(a, b, "left")
    right = welch_t_test(a, b, "right")
    two = welch_t_test(a, b, "two")
    assert 0.0 <= left.p <= 1.0
    assert left.p + right.p == pytest.approx(1.0, abs=1e-12)
    assert two.p == pytest.approx(min(1.0, 2 * min(left.p, right.p)), abs=1e-12)


@settings(max_examples=300, deadline=None)
@given(samples, samples)
def test_swapping_samples_negates_t(a, b):
    ab = welch_t_test(a, b)
    ba = welch_t_test(b, a)
    assert ab.t == pytest.approx(-ba.t, rel=1e-9, abs=1e-12)
    assert ab.df == pytest.approx(ba.df, rel=1e-9)
