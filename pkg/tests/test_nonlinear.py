"""Comparison, max, iterative kernels, and the one-round cosine."""

import numpy as np
import pytest
from scipy import stats

from mpcfwd import Session, share_tensor
from mpcfwd.nonlinear import (
    exp_oracle,
    reciprocal_oracle,
    rsqrt_oracle,
    sec_compare,
    sec_cosine,
    sec_div,
    sec_exp,
    sec_max,
    sec_reciprocal,
    sec_relu,
    sec_sign,
    sec_sine,
    sec_sqrt,
)
from mpcfwd.runtime import SingleUseError
from mpcfwd.shared import reveal


@pytest.fixture
def session():
    return Session(seed=77)


class TestCompare:
    def test_equal_is_zero(self, session):
        x = share_tensor(np.array([1.5, -3.0, 0.0]), session.input_rng())
        y = share_tensor(np.array([1.5, -3.0, 0.0]), session.input_rng())
        assert np.array_equal(reveal(sec_compare(session, "cmp", x, y)), [0, 0, 0])

    def test_one_less_than_two(self, session):
        x = share_tensor(1.0, session.input_rng())
        y = share_tensor(2.0, session.input_rng())
        assert reveal(sec_compare(session, "cmp", x, y)) == 1

    def test_seven_rounds(self, session):
        x = share_tensor(np.ones(16), session.input_rng())
        y = share_tensor(np.zeros(16), session.input_rng())
        snap = session.ledger.snapshot()
        sec_compare(session, "cmp7", x, y)
        assert session.ledger.delta(snap).rounds("cmp7") == 7  # log2(64) + 1

    def test_exact_on_random_pairs(self, session):
        rng = np.random.default_rng(5)
        a = rng.uniform(-1000, 1000, 10_000)
        b = rng.uniform(-1000, 1000, 10_000)
        out = reveal(sec_compare(session, "cmp", share_tensor(a, session.input_rng()),
                                 share_tensor(b, session.input_rng())))
        assert np.array_equal(out, (a < b).astype(float))

    def test_sign_of_difference(self, session):
        vals = np.array([-5.0, -2.0**-16, 0.0, 2.0**-16, 7.0])
        out = reveal(sec_sign(session, "cmp", share_tensor(vals, session.input_rng())))
        assert np.array_equal(out, [1, 1, 0, 0, 0])


class TestMax:
    def test_single_element(self, session):
        v = share_tensor(np.array([4.25]), session.input_rng())
        assert reveal(sec_max(session, "max", v)) == 4.25

    def test_known_vector(self, session):
        v = share_tensor(np.array([3.0, 1.0, 4.0, 1.0, 5.0]), session.input_rng())
        assert abs(reveal(sec_max(session, "max", v)) - 5.0) <= 2.0**-16

    def test_tree_structure_n8(self, session):
        # 7 comparisons across 3 levels
        from collections import Counter

        before = Counter(session.dealer.consumed)
        v = share_tensor(np.arange(8.0), session.input_rng())
        snap = session.ledger.snapshot()
        sec_max(session, "max8", v)
        consumed = session.dealer.consumption_since(before)
        cmp_elements = sum(int(np.prod(key[1])) * cnt for key, cnt in consumed.items()
                           if key[0] == "cmp")
        assert cmp_elements == 7
        levels = {key[1] for key, _ in consumed.items() if key[0] == "cmp"}
        assert levels == {(4,), (2,), (1,)}  # 3 levels
        assert session.ledger.delta(snap).rounds("max8") == 3 * 8

    def test_rowwise_random(self, session):
        rng = np.random.default_rng(6)
        m = rng.uniform(-20, 20, (9, 13))
        out = reveal(sec_max(session, "max", share_tensor(m, session.input_rng()), axis=-1))
        assert np.abs(out - m.max(axis=-1)).max() <= 2.0**-15

    def test_empty_rejected(self, session):
        with pytest.raises(ValueError):
            sec_max(session, "max", share_tensor(np.float64(1.0), session.input_rng()))


class TestExp:
    def test_zero(self, session):
        # two ulps: eight local truncations can land one amplified ulp on
        # top of the final rounding
        x = share_tensor(0.0, session.input_rng())
        assert abs(reveal(sec_exp(session, "exp", x)) - 1.0) <= 2.0**-15

    def test_one(self, session):
        x = share_tensor(1.0, session.input_rng())
        got = reveal(sec_exp(session, "exp", x))
        assert abs(got - exp_oracle(1.0)) <= 5e-3
        assert abs(got - 2.7130) <= 5e-3  # the approximant value, not e

    def test_minus_one(self, session):
        x = share_tensor(-1.0, session.input_rng())
        got = reveal(sec_exp(session, "exp", x))
        assert abs(got - exp_oracle(-1.0)) <= 5e-3
        assert abs(got - 0.3672) <= 5e-3

    def test_eight_multiplication_rounds(self, session):
        x = share_tensor(np.ones(4), session.input_rng())
        snap = session.ledger.snapshot()
        sec_exp(session, "exp8", x)
        assert session.ledger.delta(snap).rounds("exp8") == 8

    def test_oracle_match_negative_domain(self, session):
        rng = np.random.default_rng(7)
        xs = rng.uniform(-16, 0, 2000)
        got = reveal(sec_exp(session, "exp", share_tensor(xs, session.input_rng())))
        assert np.abs(got - exp_oracle(xs)).max() <= 1e-3


class TestReciprocal:
    def test_one(self, session):
        x = share_tensor(1.0, session.input_rng())
        assert abs(reveal(sec_reciprocal(session, "rec", x)) - 1.0) <= 1e-3

    def test_four(self, session):
        x = share_tensor(4.0, session.input_rng())
        assert abs(reveal(sec_reciprocal(session, "rec", x)) - 0.25) <= 1e-3

    def test_point_two(self, session):
        x = share_tensor(0.2, session.input_rng())
        assert abs(reveal(sec_reciprocal(session, "rec", x)) - 5.0) <= 2e-2

    def test_oracle_match(self, session):
        rng = np.random.default_rng(8)
        xs = rng.uniform(0.2, 8, 1000)
        got = reveal(sec_reciprocal(session, "rec", share_tensor(xs, session.input_rng())))
        assert np.abs(got - reciprocal_oracle(xs)).max() <= 1e-3


class TestSqrt:
    def test_one(self, session):
        x = share_tensor(1.0, session.input_rng())
        assert abs(reveal(sec_sqrt(session, "sqrt", x)) - sqrt_oracle_scalar(1.0)) <= 1e-2

    def test_four(self, session):
        x = share_tensor(4.0, session.input_rng())
        assert abs(reveal(sec_sqrt(session, "sqrt", x)) - sqrt_oracle_scalar(4.0)) <= 2e-2

    def test_quarter(self, session):
        # the 3-step iterate has not converged here; the oracle tracks it
        x = share_tensor(0.25, session.input_rng())
        assert abs(reveal(sec_sqrt(session, "sqrt", x)) - sqrt_oracle_scalar(0.25)) <= 1e-2

    def test_oracle_match(self, session):
        rng = np.random.default_rng(9)
        xs = rng.uniform(0.1, 8, 1000)
        got = reveal(sec_sqrt(session, "sqrt", share_tensor(xs, session.input_rng())))
        from mpcfwd.nonlinear import sqrt_oracle

        assert np.abs(got - sqrt_oracle(xs)).max() <= 2e-2


def sqrt_oracle_scalar(x):
    from mpcfwd.nonlinear import sqrt_oracle

    return float(sqrt_oracle(np.float64(x)))


class TestDivRelu:
    def test_div_by_one(self, session):
        x = share_tensor(np.array([0.5, -2.0]), session.input_rng())
        y = share_tensor(np.array([1.0, 1.0]), session.input_rng())
        assert np.abs(reveal(sec_div(session, "div", x, y)) - [0.5, -2.0]).max() <= 1e-3

    def test_six_over_three(self, session):
        x = share_tensor(6.0, session.input_rng())
        y = share_tensor(3.0, session.input_rng())
        assert abs(reveal(sec_div(session, "div", x, y)) - 2.0) <= 2e-3

    def test_one_over_half(self, session):
        x = share_tensor(1.0, session.input_rng())
        y = share_tensor(0.5, session.input_rng())
        assert abs(reveal(sec_div(session, "div", x, y)) - 2.0) <= 2e-3

    def test_relu_cases(self, session):
        x = share_tensor(np.array([2.0, -2.0, 0.0]), session.input_rng())
        out = reveal(sec_relu(session, "relu", x))
        assert np.abs(out - [2.0, 0.0, 0.0]).max() <= 2.0**-16


class TestCosine:
    def test_zero(self, session):
        x = share_tensor(0.0, session.input_rng())
        assert abs(reveal(sec_cosine(session, "cos", x)) - 1.0) <= 1e-3

    def test_pi(self, session):
        x = share_tensor(np.pi, session.input_rng())
        assert abs(reveal(sec_cosine(session, "cos", x)) + 1.0) <= 1e-3

    def test_one_round_two_ell_bits(self, session):
        x = share_tensor(np.ones(50), session.input_rng())
        snap = session.ledger.snapshot()
        sec_cosine(session, "cos1", x)
        d = session.ledger.delta(snap)
        assert d.rounds("cos1") == 1
        assert d.bytes_sent("cos1") * 8 == 50 * 2 * 64  # 2*ell bits per value

    def test_dense_accuracy(self, session):
        rng = np.random.default_rng(10)
        xs = rng.uniform(-np.pi, np.pi, 10_000)
        got = reveal(sec_cosine(session, "cos", share_tensor(xs, session.input_rng())))
        assert np.abs(got - np.cos(xs)).max() <= 1e-3

    def test_periodicity(self, session):
        xs = np.linspace(-3, 3, 101)
        a = reveal(sec_cosine(session, "cos", share_tensor(xs, session.input_rng())))
        b = reveal(sec_cosine(session, "cos", share_tensor(xs + 2 * np.pi, session.input_rng())))
        assert np.abs(a - b).max() <= 2e-3

    def test_large_arguments(self, session):
        xs = np.array([100.0, -250.0, 1000.0])
        got = reveal(sec_cosine(session, "cos", share_tensor(xs, session.input_rng())))
        assert np.abs(got - np.cos(xs)).max() <= 1e-3

    def test_revealed_delta_uniform(self, session):
        # the opened angle is uniform over the period whatever x is: run the
        # protocol on 10^4 copies of a fixed input and KS-test the transcript
        for fixed in (0.0, 1.0, -2.2):
            s = Session(seed=int(fixed * 10) + 50, record_transcript=True)
            xs = np.full(10_000, fixed)
            sec_cosine(s, "cos", share_tensor(xs, s.input_rng()))
            from mpcfwd.ring import deserialize_tensor

            msgs = [m for m in s.transcript if m.phase == "cos"]
            d0, _ = deserialize_tensor(msgs[0].wire, 8)
            d1, _ = deserialize_tensor(msgs[1].wire, 8)
            delta = (d0 + d1).astype(np.float64) / 2.0**64
            _, p = stats.kstest(delta, "uniform")
            assert p > 0.01

    def test_mask_single_use(self, session):
        x = share_tensor(np.ones(3), session.input_rng())
        m = session.dealer.take_cosine((3,))
        sec_cosine(session, "cos", x, mask=m)
        with pytest.raises(SingleUseError):
            sec_cosine(session, "cos", x, mask=m)

    def test_sine_cases(self, session):
        xs = np.array([0.0, np.pi / 2, -np.pi / 2])
        got = reveal(sec_sine(session, "sin", share_tensor(xs, session.input_rng())))
        assert np.abs(got - [0.0, 1.0, -1.0]).max() <= 1e-3
