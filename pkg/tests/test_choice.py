import math

import numpy as np
import pytest
from hypothesis import assume, given, settings
from hypothesis import strategies as st

from cumlog.choice import entropy, kl_divergence, kl_divergence_per_od, kl_projection_identity_check, logit
from cumlog.network import Incidence, builtin


class Blocks:
    """Minimal stand-in for an Incidence (only the per-OD layout is used)."""

    def __init__(self, *sizes):
        self.od_start = np.concatenate([[0], np.cumsum(sizes)]).astype(int)


ONE3 = Blocks(3)
ONE4 = Blocks(4)
TWO = Blocks(2)

finite = st.floats(-50, 50, allow_nan=False)


def test_logit_examples():
    np.testing.assert_allclose(logit(np.zeros(3), 2.0, ONE3), [1 / 3] * 3)
    np.testing.assert_array_equal(logit(np.array([0, np.inf, np.inf]), 0.7, ONE3), [1, 0, 0])
    r = 1.7
    np.testing.assert_allclose(logit(np.array([0, math.log(2) / r, math.log(2) / r]), r, ONE3), [0.5, 0.25, 0.25])


def test_logit_rejects_bad_input():
    with pytest.raises(ValueError, match="no acceptable"):
        logit(np.full(3, np.inf), 1.0, ONE3)
    with pytest.raises(ValueError):
        logit(np.array([0.0, np.nan, 1.0]), 1.0, ONE3)
    with pytest.raises(ValueError):
        logit(np.array([0.0, -np.inf, 1.0]), 1.0, ONE3)
    with pytest.raises(ValueError):
        logit(np.zeros(3), 0.0, ONE3)


def test_logit_huge_valuations():
    p = logit(np.array([1e300, -1e300, 0.0, 1e300]), 2.5, ONE4)
    np.testing.assert_array_equal(p, [0, 1, 0, 0])
    p = logit(np.array([1e300, 1e300 * (1 - 1e-16), 1e300]), 1.0, ONE3)
    assert np.isfinite(p).all() and p.sum() == pytest.approx(1.0)


@settings(max_examples=200)
@given(st.lists(finite, min_size=5, max_size=5), st.floats(-1e3, 1e3), st.floats(-1e3, 1e3),
       st.floats(0.01, 10))
def test_shift_invariance_exact(s, a, b, r):
    inc = Blocks(2, 3)
    s = np.array(s)
    shifted = s + np.array([a, a, b, b, b])
    # exact equality holds when the shift does not change the rounded differences
    assume(np.array_equal(shifted[:2] - shifted[:2].min(), s[:2] - s[:2].min()))
    assume(np.array_equal(shifted[2:] - shifted[2:].min(), s[2:] - s[2:].min()))
    np.testing.assert_array_equal(logit(shifted, r, inc), logit(s, r, inc))


@settings(max_examples=200)
@given(st.lists(finite, min_size=4, max_size=4), st.floats(0.01, 10))
def test_monotone_ranking(s, r):
    s = np.array(s)
    p = logit(s, r, ONE4)
    for j in range(4):
        for k in range(4):
            if s[j] < s[k] and p[k] > 0:
                assert p[j] >= p[k]


def test_concentration_in_r():
    s = np.array([1.0, 0.2, 3.0, 0.5])
    prev = 0.0
    for r in [0.1, 0.5, 1, 2, 5, 10, 50]:
        pm = logit(s, r, ONE4)[1]
        assert pm > prev
        prev = pm
    assert prev == pytest.approx(1.0, abs=1e-6)


def test_kl_examples():
    p = np.array([0.3, 0.7])
    assert kl_divergence(p, p, TWO) == 0.0
    assert kl_divergence(np.array([1.0, 0.0]), np.array([0.5, 0.5]), TWO) == pytest.approx(math.log(2))
    assert kl_divergence(np.array([0.5, 0.5]), np.array([1.0, 0.0]), TWO) == math.inf


@settings(max_examples=200)
@given(st.lists(st.floats(0, 1), min_size=4, max_size=4), st.lists(st.floats(0, 1), min_size=4, max_size=4))
def test_kl_pinsker(a, b):
    a, b = np.array(a), np.array(b)
    assume(a.sum() > 1e-3 and b.sum() > 1e-3)
    p, q = a / a.sum(), b / b.sum()
    d = kl_divergence_per_od(p, q, ONE4)[0]
    assert d >= 0.5 * np.abs(p - q).sum() ** 2 - 1e-12


def test_entropy_examples():
    net, routes = builtin("3n4l")
    inc = Incidence(net, routes)
    assert entropy(np.array([0.18, 0.28, 0.42, 0.12]), inc.demands, inc) == pytest.approx(12.84, abs=0.01)
    assert entropy(np.array([0.0, 1.0, 0.0, 0.0]), inc.demands, inc) == 0.0
    assert entropy(np.full(4, 0.25), inc.demands, inc) == pytest.approx(10 * math.log(4))


def test_projection_identity_examples():
    assert kl_projection_identity_check(np.zeros(2), 1.0, TWO)
    rng = np.random.default_rng(0)
    for _ in range(20):
        assert kl_projection_identity_check(rng.uniform(-5, 5, 4), 2.5, ONE4)
    s = np.array([0.3, np.inf, -1.0])
    assert kl_projection_identity_check(s, 1.0, ONE3)
    assert logit(s, 1.0, ONE3)[1] == 0.0


@settings(max_examples=200)
@given(st.lists(st.floats(-5, 5), min_size=5, max_size=5), st.floats(0.05, 5))
def test_projection_identity_property(s, r):
    assert kl_projection_identity_check(np.array(s), r, Blocks(2, 3))
