import io
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from rotprune import oracle, tensor
from rotprune.tensor import NonFiniteError, ShapeError, TensorFormatError

finite = st.floats(-1e3, 1e3, allow_nan=False, allow_infinity=False)


def matrices(max_side=6):
    shapes = st.tuples(st.integers(1, max_side), st.integers(1, max_side))
    return shapes.flatmap(lambda s: arrays(np.float64, s, elements=finite))


class TestMatmul:
    def test_identity(self, rng):
        b = rng.standard_normal((2, 3))
        np.testing.assert_array_equal(tensor.matmul(np.eye(2), b), b)

    def test_hand_checked(self):
        np.testing.assert_array_equal(tensor.matmul([[1, 2], [3, 4]], [[1], [1]]), [[3], [7]])

    def test_matches_triple_loop(self, rng):
        a = rng.standard_normal((5, 7))
        b = rng.standard_normal((7, 3))
        np.testing.assert_allclose(tensor.matmul(a, b), oracle.naive_matmul(a, b), rtol=0, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            tensor.matmul(np.ones((2, 3)), np.ones((2, 3)))

    def test_overflow_reported(self):
        with pytest.raises(NonFiniteError):
            tensor.matmul(np.full((1, 2), 1e200), np.full((2, 1), 1e200))

    def test_associative(self, rng):
        for _ in range(20):
            a, b, c = (rng.standard_normal((4, 5)), rng.standard_normal((5, 6)), rng.standard_normal((6, 3)))
            left = tensor.matmul(tensor.matmul(a, b), c)
            right = tensor.matmul(a, tensor.matmul(b, c))
            assert tensor.frob_norm(left - right) <= 1e-10 * tensor.frob_norm(left)


class TestSvd:
    def test_diagonal(self):
        res = tensor.svd(np.diag([3.0, 1.0]))
        np.testing.assert_allclose(res.sigma, [3.0, 1.0])
        np.testing.assert_allclose(np.abs(res.u), np.eye(2), atol=1e-15)
        np.testing.assert_allclose(np.abs(res.vt), np.eye(2), atol=1e-15)

    def test_zero(self):
        assert np.all(tensor.svd(np.zeros((3, 3))).sigma == 0)

    def test_sigma_matches_symmetric_eigensolver(self, rng):
        m = rng.standard_normal((4, 4))
        expected = np.sqrt(np.clip(np.sort(np.linalg.eigvalsh(m.T @ m))[::-1], 0, None))
        np.testing.assert_allclose(tensor.svd(m).sigma, expected, rtol=0, atol=1e-8)

    @pytest.mark.parametrize("shape", [(4, 4), (3, 7), (7, 3), (1, 5)])
    def test_invariants(self, rng, shape):
        m = rng.standard_normal(shape)
        res = tensor.svd(m)
        k = min(shape)
        assert tensor.frob_norm(res.u.T @ res.u - np.eye(k)) <= 1e-10
        assert tensor.frob_norm(res.vt @ res.vt.T - np.eye(k)) <= 1e-10
        assert np.all(np.diff(res.sigma) <= 0) and np.all(res.sigma >= 0)
        assert tensor.frob_norm(res.reconstruct() - m) <= 1e-8 * tensor.frob_norm(m)

    def test_deterministic(self, rng):
        m = rng.standard_normal((5, 5))
        a, b = tensor.svd(m), tensor.svd(m)
        np.testing.assert_array_equal(a.u, b.u)
        np.testing.assert_array_equal(a.vt, b.vt)

    def test_rejects_nan(self):
        with pytest.raises(NonFiniteError):
            tensor.svd([[1.0, np.nan]])

    @settings(max_examples=60, deadline=None)
    @given(matrices())
    def test_frobenius_equals_singular_energy(self, m):
        s = tensor.svd(m).sigma
        f2 = tensor.frob_norm(m) ** 2
        assert abs(f2 - np.sum(s**2)) <= 1e-8 * max(f2, 1e-300)


def penrose_defects(a, p):
    return (
        tensor.frob_norm(a @ p @ a - a),
        tensor.frob_norm(p @ a @ p - p),
        tensor.frob_norm((a @ p).T - a @ p),
        tensor.frob_norm((p @ a).T - p @ a),
    )


class TestPinv:
    def test_invertible(self):
        a = np.array([[2.0, 1.0], [1.0, 3.0]])
        np.testing.assert_allclose(tensor.pinv(a), np.linalg.inv(a), atol=1e-10)

    def test_projector(self):
        np.testing.assert_allclose(tensor.pinv([[1.0, 0.0], [0.0, 0.0]]), [[1.0, 0.0], [0.0, 0.0]])

    def test_zero_matrix(self):
        np.testing.assert_array_equal(tensor.pinv(np.zeros((2, 3))), np.zeros((3, 2)))

    def test_rank_deficient_penrose(self, rng):
        a = rng.standard_normal((4, 2)) @ rng.standard_normal((2, 6))
        p = tensor.pinv(a)
        assert p.shape == (6, 4)
        assert max(penrose_defects(a, p)) <= 1e-8

    def test_involution_full_rank(self, rng):
        for shape in [(4, 4), (3, 5), (6, 2)]:
            a = rng.standard_normal(shape)
            assert tensor.frob_norm(tensor.pinv(tensor.pinv(a)) - a) <= 1e-8 * tensor.frob_norm(a)

    def test_rcond_truncates(self):
        a = np.diag([1.0, 1e-6])
        np.testing.assert_allclose(tensor.pinv(a, rcond=1e-3), np.diag([1.0, 0.0]))

    def test_rcond_must_be_positive(self):
        with pytest.raises(ValueError):
            tensor.pinv(np.eye(2), rcond=0.0)


class TestStatistics:
    def test_frob_identity(self):
        assert tensor.frob_norm(np.eye(3)) == pytest.approx(math.sqrt(3), abs=1e-15)

    def test_constant_row_variance(self):
        assert tensor.row_variance([[4.0, 4.0, 4.0]])[0] == 0.0

    def test_population_variance(self):
        assert tensor.row_variance([[1.0, 2.0, 3.0]])[0] == pytest.approx(2 / 3, abs=1e-15)

    def test_sample_variance_flag(self):
        assert tensor.row_variance([[1.0, 2.0, 3.0]], ddof=1)[0] == pytest.approx(1.0, abs=1e-15)

    def test_norms(self):
        m = np.array([[3.0, 0.0], [4.0, 1.0]])
        np.testing.assert_allclose(tensor.row_norm(m), [3.0, math.sqrt(17)])
        np.testing.assert_allclose(tensor.col_norm(m), [5.0, 1.0])


class TestTensorFile:
    def test_roundtrip_bytes(self, tmp_path, rng):
        m = rng.standard_normal((3, 5))
        tensor.write_tensor(tmp_path / "m.rcpu", m)
        np.testing.assert_array_equal(tensor.read_tensor(tmp_path / "m.rcpu"), m)

    def test_layout(self):
        buf = io.BytesIO()
        tensor.write_tensor(buf, [[1.0, 2.0, 3.0]])
        raw = buf.getvalue()
        assert raw[:4] == b"RCPU"
        assert int.from_bytes(raw[4:8], "little") == 1
        assert int.from_bytes(raw[8:16], "little") == 1
        assert int.from_bytes(raw[16:24], "little") == 3
        assert np.frombuffer(raw[24:], "<f8").tolist() == [1.0, 2.0, 3.0]
        assert len(raw) == 24 + 3 * 8

    def test_bad_magic(self):
        with pytest.raises(TensorFormatError):
            tensor.read_tensor(io.BytesIO(b"XXXX" + bytes(20)))

    def test_truncated(self):
        buf = io.BytesIO()
        tensor.write_tensor(buf, np.ones((2, 2)))
        with pytest.raises(TensorFormatError):
            tensor.read_tensor(io.BytesIO(buf.getvalue()[:-1]))

    def test_non_finite_payload_rejected(self):
        buf = io.BytesIO()
        tensor.write_tensor(buf, np.ones((1, 2)))
        raw = bytearray(buf.getvalue())
        raw[24:32] = np.array([np.inf], "<f8").tobytes()
        with pytest.raises(NonFiniteError):
            tensor.read_tensor(io.BytesIO(bytes(raw)))

    @settings(max_examples=40, deadline=None)
    @given(matrices())
    def test_roundtrip_property(self, m):
        buf = io.BytesIO()
        tensor.write_tensor(buf, m)
        buf.seek(0)
        np.testing.assert_array_equal(tensor.read_tensor(buf), m)
