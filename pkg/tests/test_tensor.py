import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from clc.errors import EmptyInput, NonFinite, ParseError, ShapeMismatch, ZeroNorm
from clc.tensor import (
    as_matrix,
    dtype_for,
    l2_normalize,
    log_sum_exp,
    matmul,
    mean_pool_rows,
    read_clce,
    read_clce_header,
    write_clce,
)

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


class TestL2Normalize:
    def test_three_four_five(self):
        np.testing.assert_allclose(l2_normalize([3.0, 4.0]), [0.6, 0.8], atol=1e-15)

    def test_already_unit(self):
        np.testing.assert_array_equal(l2_normalize([1.0, 0.0, 0.0]), [1.0, 0.0, 0.0])

    def test_zero_vector(self):
        with pytest.raises(ZeroNorm):
            l2_normalize([0.0, 0.0])

    @given(arrays(np.float64, st.integers(1, 8), elements=finite))
    def test_idempotent_and_unit(self, v):
        if np.linalg.norm(v) <= 1e-6:
            return
        once = l2_normalize(v)
        assert abs(np.linalg.norm(once) - 1.0) < 1e-12
        np.testing.assert_allclose(l2_normalize(once), once, atol=1e-12)


class TestLogSumExp:
    def test_zeros(self):
        assert log_sum_exp([0.0, 0.0]) == pytest.approx(math.log(2), abs=1e-15)

    def test_no_overflow(self):
        assert log_sum_exp([1000.0, 1000.0]) == pytest.approx(1000 + math.log(2), abs=1e-12)

    def test_one_two_three(self):
        # mpmath, 40 digits: log(e + e^2 + e^3)
        assert log_sum_exp([1.0, 2.0, 3.0]) == pytest.approx(3.407605964444380, abs=1e-12)

    def test_empty(self):
        with pytest.raises(EmptyInput):
            log_sum_exp([])

    @given(arrays(np.float64, st.integers(1, 10), elements=finite), finite)
    def test_shift_invariance(self, v, c):
        assert log_sum_exp(v + c) == pytest.approx(log_sum_exp(v) + c, abs=1e-10)

    @given(st.floats(-500, 500), st.integers(1, 20))
    def test_constant_vector_exact(self, x, n):
        assert log_sum_exp(np.full(n, x)) == pytest.approx(x + math.log(n), abs=1e-12)


class TestMatmulAndPooling:
    def test_mean_pool(self):
        np.testing.assert_array_equal(mean_pool_rows([[1.0, 2.0], [3.0, 4.0]]), [2.0, 3.0])

    def test_identity(self, rng):
        m = rng.normal(size=(3, 4))
        np.testing.assert_array_equal(matmul(np.eye(3), m), m)

    def test_row_sums(self, rng):
        a = rng.normal(size=(2, 3))
        np.testing.assert_allclose(matmul(a, np.ones((3, 1)))[:, 0], a.sum(axis=1), atol=1e-15)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            matmul(np.ones((2, 3)), np.ones((2, 3)))

    @settings(max_examples=50)
    @given(st.integers(0, 2**32 - 1))
    def test_associativity(self, seed):
        r = np.random.default_rng(seed)
        a, b, c = r.normal(size=(3, 4)), r.normal(size=(4, 2)), r.normal(size=(2, 5))
        np.testing.assert_allclose(matmul(matmul(a, b), c), matmul(a, matmul(b, c)), atol=1e-9)

    def test_non_finite_rejected(self):
        with pytest.raises(NonFinite):
            as_matrix([[1.0, float("nan")]])

    def test_pool_needs_rows(self):
        with pytest.raises(ShapeMismatch):
            mean_pool_rows(np.zeros((0, 3)))


class TestModes:
    def test_dtypes(self):
        assert dtype_for("verify") == np.float64
        assert dtype_for("fast") == np.float32
        with pytest.raises(ValueError):
            dtype_for("turbo")

    def test_fast_mode_matrix(self):
        assert as_matrix([[1.0]], "fast").dtype == np.float32


class TestClceFormat:
    def test_roundtrip_upcasts(self, tmp_path, rng):
        m = rng.normal(size=(5, 3))
        write_clce(tmp_path / "m.clce", m)
        back = read_clce(tmp_path / "m.clce")
        assert back.dtype == np.float64
        np.testing.assert_array_equal(back, m.astype(np.float32).astype(np.float64))

    def test_byte_layout(self, tmp_path):
        write_clce(tmp_path / "m.clce", [[1.0, 2.0]])
        raw = (tmp_path / "m.clce").read_bytes()
        assert raw[:4] == b"CLCE"
        assert raw[4:16] == (1).to_bytes(4, "little") + (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
        assert np.frombuffer(raw[16:], "<f4").tolist() == [1.0, 2.0]

    def test_truncated_payload(self, tmp_path):
        write_clce(tmp_path / "m.clce", np.ones((3, 4)))
        data = (tmp_path / "m.clce").read_bytes()
        (tmp_path / "m.clce").write_bytes(data[:-8])
        assert read_clce_header(tmp_path / "m.clce") == (3, 4, 10)
        with pytest.raises(ShapeMismatch):
            read_clce(tmp_path / "m.clce")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x.clce").write_bytes(b"NOPE" + bytes(12))
        with pytest.raises(ParseError):
            read_clce(tmp_path / "x.clce")
