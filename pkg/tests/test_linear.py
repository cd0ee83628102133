"""Beaver multiplication, matrix products, and public affine maps."""

import numpy as np
import pytest

from mpcfwd import Session, share_tensor
from mpcfwd.linear import sec_add, sec_affine_public, sec_matmul, sec_mul, sec_outer
from mpcfwd.runtime import SingleUseError
from mpcfwd.shared import reveal


@pytest.fixture
def session():
    return Session(seed=42)


class TestAdd:
    def test_plus_zero(self, session):
        x = share_tensor(np.array([1.5, -2.0]), session.input_rng())
        z = share_tensor(np.array([0.0, 0.0]), session.input_rng())
        before = session.ledger.bytes_sent()
        out = sec_add(x, z)
        assert session.ledger.bytes_sent() == before  # zero communication
        assert np.array_equal(reveal(out), reveal(x))

    def test_two_plus_three(self, session):
        x = share_tensor(2.0, session.input_rng())
        y = share_tensor(3.0, session.input_rng())
        assert reveal(sec_add(x, y)) == 5.0

    def test_random_tensors(self, session):
        rng = np.random.default_rng(0)
        for _ in range(20):
            a = rng.uniform(-50, 50, size=(5, 7))
            b = rng.uniform(-50, 50, size=(5, 7))
            out = sec_add(share_tensor(a, session.input_rng()),
                          share_tensor(b, session.input_rng()))
            assert np.abs(reveal(out) - (a + b)).max() <= 2.0**-15

    def test_shape_mismatch(self, session):
        with pytest.raises(ValueError):
            sec_add(share_tensor(np.ones(2), session.input_rng()),
                    share_tensor(np.ones(3), session.input_rng()))


class TestMul:
    def test_times_zero(self, session):
        x = share_tensor(7.25, session.input_rng())
        z = share_tensor(0.0, session.input_rng())
        assert abs(reveal(sec_mul(session, "mul", x, z))) <= 2.0**-16

    def test_three_times_four(self, session):
        x = share_tensor(3.0, session.input_rng())
        y = share_tensor(4.0, session.input_rng())
        assert abs(reveal(sec_mul(session, "mul", x, y)) - 12.0) <= 2.0**-16

    def test_scalar_cost(self, session):
        x = share_tensor(1.0, session.input_rng())
        y = share_tensor(2.0, session.input_rng())
        snap = session.ledger.snapshot()
        sec_mul(session, "mulcost", x, y)
        d = session.ledger.delta(snap)
        assert d.rounds("mulcost") == 1
        assert d.bytes_sent("mulcost") * 8 == 256  # bits, both parties

    def test_exact_ring_product_pre_truncation(self, session):
        rng = session.input_rng()
        a = rng.ring_elements(10_000)
        b = rng.ring_elements(10_000)
        x = share_tensor(a, rng, encoded=True)
        y = share_tensor(b, rng, encoded=True)
        out = sec_mul(session, "mul", x, y, truncate=False)
        assert np.array_equal(out.s0 + out.s1, a * b)

    def test_fixed_point_error_bound(self, session):
        rng = np.random.default_rng(1)
        u = rng.uniform(-8, 8, 10_000)
        v = rng.uniform(-8, 8, 10_000)
        out = sec_mul(session, "mul", share_tensor(u, session.input_rng()),
                      share_tensor(v, session.input_rng()))
        err = np.abs(reveal(out) - u * v)
        assert np.all(err <= 2.0**-16 * (1 + np.abs(u) + np.abs(v)))

    def test_large_error_frequency(self, session):
        # the probabilistic truncation's rare failure stays under 1e-4
        rng = np.random.default_rng(2)
        u = rng.uniform(-8, 8, 20_000)
        v = rng.uniform(-8, 8, 20_000)
        out = sec_mul(session, "mul", share_tensor(u, session.input_rng()),
                      share_tensor(v, session.input_rng()))
        big = np.abs(reveal(out) - u * v) > 0.5
        assert big.mean() < 1e-4

    def test_reused_triple_rejected(self, session):
        x = share_tensor(np.ones(3), session.input_rng())
        y = share_tensor(np.ones(3), session.input_rng())
        t = session.dealer.take_mul((3,))
        sec_mul(session, "mul", x, y, triple=t)
        with pytest.raises(SingleUseError):
            sec_mul(session, "mul", x, y, triple=t)

    def test_triple_shape_check(self, session):
        x = share_tensor(np.ones(3), session.input_rng())
        y = share_tensor(np.ones(3), session.input_rng())
        t = session.dealer.take_mul((4,))
        with pytest.raises(ValueError):
            sec_mul(session, "mul", x, y, triple=t)

    def test_bit_multiply_exact(self, session):
        # fb=0 operand: no truncation, exact selection
        x = share_tensor(np.array([2.5, -1.25]), session.input_rng())
        bit = share_tensor(np.array([1, 0], dtype=np.uint64), session.input_rng(),
                           fb=0, encoded=True)
        out = sec_mul(session, "mul", x, bit)
        assert np.array_equal(reveal(out), [2.5, 0.0])


class TestMatmul:
    def test_identity(self, session):
        rng = np.random.default_rng(3)
        x = rng.uniform(-4, 4, (5, 5))
        out = sec_matmul(session, "mm", share_tensor(x, session.input_rng()),
                         share_tensor(np.eye(5), session.input_rng()))
        assert np.abs(reveal(out) - x).max() <= 8 * 2.0**-16

    def test_random_8x8(self, session):
        rng = np.random.default_rng(4)
        a = rng.uniform(-4, 4, (8, 8))
        b = rng.uniform(-4, 4, (8, 8))
        out = sec_matmul(session, "mm", share_tensor(a, session.input_rng()),
                         share_tensor(b, session.input_rng()))
        assert np.abs(reveal(out) - a @ b).max() <= 8 * 2.0**-16

    def test_one_round_any_size(self, session):
        for shape in ((2, 3, 4), (16, 8, 24)):
            n, k, m = shape
            a = share_tensor(np.ones((n, k)), session.input_rng())
            b = share_tensor(np.ones((k, m)), session.input_rng())
            snap = session.ledger.snapshot()
            sec_matmul(session, "mmrounds", a, b)
            assert session.ledger.delta(snap).rounds("mmrounds") == 1

    def test_bytes_are_masked_element_count(self, session):
        n, k, m = 3, 5, 7
        a = share_tensor(np.ones((n, k)), session.input_rng())
        b = share_tensor(np.ones((k, m)), session.input_rng())
        snap = session.ledger.snapshot()
        sec_matmul(session, "mmbytes", a, b)
        d = session.ledger.delta(snap)
        assert d.entry("mmbytes", "s0").bytes_sent == (n * k + k * m) * 8
        assert d.entry("mmbytes", "s1").bytes_sent == (n * k + k * m) * 8

    def test_batched(self, session):
        rng = np.random.default_rng(5)
        a = rng.uniform(-2, 2, (3, 4, 5))
        b = rng.uniform(-2, 2, (3, 5, 2))
        out = sec_matmul(session, "mm", share_tensor(a, session.input_rng()),
                         share_tensor(b, session.input_rng()))
        assert np.abs(reveal(out) - a @ b).max() <= 5 * 2.0**-16 * 5

    def test_dim_mismatch(self, session):
        a = share_tensor(np.ones((2, 3)), session.input_rng())
        b = share_tensor(np.ones((4, 2)), session.input_rng())
        with pytest.raises(ValueError):
            sec_matmul(session, "mm", a, b)

    def test_outer_product(self, session):
        a = np.array([1.0, 2.0, 3.0])
        b = np.array([-1.0, 0.5])
        out = sec_outer(session, "outer", share_tensor(a, session.input_rng()),
                        share_tensor(b, session.input_rng()))
        assert np.abs(reveal(out) - np.outer(a, b)).max() <= 2.0**-15


class TestAffinePublic:
    def test_identity_coefficient(self, session):
        x = share_tensor(np.array([1.0, -2.5]), session.input_rng())
        out = sec_affine_public(x, 1.0)
        assert np.abs(reveal(out) - [1.0, -2.5]).max() <= 2.0**-16

    def test_double(self, session):
        x = share_tensor(3.0, session.input_rng())
        assert abs(reveal(sec_affine_public(x, 2.0)) - 6.0) <= 2.0**-15

    def test_zero_communication(self, session):
        x = share_tensor(np.ones(4), session.input_rng())
        y = share_tensor(np.ones(4), session.input_rng())
        before = session.ledger.bytes_sent()
        sec_affine_public(x, 0.7, q=-1.3, y=y, const=0.1)
        assert session.ledger.bytes_sent() == before

    def test_random_combination(self, session):
        rng = np.random.default_rng(6)
        for _ in range(50):
            p, q = rng.uniform(-3, 3, 2)
            u = rng.uniform(-5, 5, 8)
            v = rng.uniform(-5, 5, 8)
            out = sec_affine_public(share_tensor(u, session.input_rng()), p,
                                    q=q, y=share_tensor(v, session.input_rng()))
            assert np.abs(reveal(out) - (p * u + q * v)).max() <= 1e-4
