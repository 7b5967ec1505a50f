"""Tests for the differentiable kernel, Adam and checkpoints."""

import os

import numpy as np
import pytest

import numerics as nx
from errors import DatasetError, NonFiniteError, ShapeError


def leaf(values, name="x"):
    return nx.Tensor(np.array(values, dtype=np.float64), requires_grad=True, name=name)


def weighted_sum(out, weights):
    return nx.sum_all(nx.mul(out, nx.constant(weights)))


class TestPrimitives:
    def test_linear_identity(self, rng):
        x = nx.constant(rng.standard_normal((5, 3)))
        y = nx.linear(x, nx.constant(np.eye(3)), nx.constant(np.zeros((1, 3))))
        np.testing.assert_array_equal(y.data, x.data)

    def test_linear_zero_input(self):
        b = nx.constant([[1.0, -2.0, 3.0]])
        y = nx.linear(nx.constant(np.zeros((4, 2))), nx.constant(np.ones((2, 3))), b)
        np.testing.assert_array_equal(y.data, np.repeat(b.data, 4, axis=0))

    def test_linear_shape_mismatch(self):
        with pytest.raises(ShapeError):
            nx.linear(nx.constant(np.zeros((4, 2))), nx.constant(np.ones((3, 3))), nx.constant(np.zeros((1, 3))))

    def test_layer_norm_constant_row(self):
        out = nx.layer_norm(nx.constant(np.full((1, 4), 3.0)), nx.constant(np.ones((1, 4))), nx.constant(np.zeros((1, 4))))
        np.testing.assert_allclose(out.data, np.zeros((1, 4)), atol=1e-12)

    def test_layer_norm_symmetric_row(self):
        out = nx.layer_norm(nx.constant([[1.0, -1.0]]), nx.constant([[1.0, 1.0]]), nx.constant([[0.0, 0.0]]))
        np.testing.assert_allclose(out.data, [[1.0, -1.0]], atol=1e-4)

    def test_softmax_zero_row(self):
        out = nx.softmax_rows(nx.constant(np.zeros((1, 4))))
        np.testing.assert_allclose(out.data, np.full((1, 4), 0.25), atol=1e-15)

    def test_softmax_shift_invariance(self, rng):
        x = rng.standard_normal((3, 5))
        first = nx.softmax_rows(nx.constant(x)).data
        second = nx.softmax_rows(nx.constant(x + 40.0)).data
        assert np.max(np.abs(first - second)) <= 1e-12
        np.testing.assert_allclose(first.sum(axis=1), 1.0, atol=1e-12)

    def test_ffn_zero_output_layer(self, rng):
        params = nx.ParameterSet()
        ffn = nx.init_ffn(params, "f", 8, 3, rng, hidden=16, zero_output=True)
        out = nx.ffn_apply(nx.constant(rng.standard_normal((4, 8))), ffn)
        np.testing.assert_array_equal(out.data, np.zeros((4, 3)))

    def test_ffn_zero_input_zero_bias(self, rng):
        params = nx.ParameterSet()
        ffn = nx.init_ffn(params, "f", 8, 3, rng, hidden=16)
        ffn.b1.data[...] = 0.0
        ffn.b2.data[...] = 0.0
        out = nx.ffn_apply(nx.constant(np.zeros((2, 8))), ffn)
        np.testing.assert_array_equal(out.data, np.zeros((2, 3)))

    def test_atan2_phase_rule(self):
        phase = nx.atan2(nx.constant([[0.0, 1e-14, 1.0]]), nx.constant([[0.0, 0.0, 0.0]]))
        np.testing.assert_allclose(phase.data, [[0.0, 0.0, np.pi / 2]])

    def test_concat_shape_checks(self):
        with pytest.raises(ShapeError):
            nx.concat_cols([nx.constant(np.zeros((2, 1))), nx.constant(np.zeros((3, 1)))])
        with pytest.raises(ShapeError):
            nx.concat_rows([nx.constant(np.zeros((2, 1))), nx.constant(np.zeros((2, 2)))])


class TestGradients:
    def test_linear_against_finite_differences(self, rng):
        x = nx.constant(rng.uniform(0.5, 1.0, (5, 3)))
        w = leaf(rng.uniform(-1, 1, (3, 4)), "w")
        b = leaf(rng.uniform(-1, 1, (1, 4)), "b")
        report = nx.grad_check(lambda: nx.sum_all(nx.linear(x, w, b)), [w, b], tolerance=1e-6)
        assert report.ok
        assert report.max_error <= 1e-8

    def test_layer_norm(self, rng):
        x = leaf(rng.uniform(-1, 1, (4, 6)))
        gain = leaf(rng.uniform(0.5, 1.5, (1, 6)), "gain")
        shift = leaf(rng.uniform(-1, 1, (1, 6)), "shift")
        weights = rng.standard_normal((4, 6))
        report = nx.grad_check(
            lambda: weighted_sum(nx.layer_norm(x, gain, shift), weights), [x, gain, shift], tolerance=1e-5
        )
        assert report.ok, report.errors

    def test_softmax(self, rng):
        x = leaf(rng.uniform(-1, 1, (3, 5)))
        weights = rng.standard_normal((3, 5))
        report = nx.grad_check(lambda: weighted_sum(nx.softmax_rows(x), weights), [x], tolerance=1e-5)
        assert report.ok, report.errors

    def test_ffn(self, rng):
        params = nx.ParameterSet()
        ffn = nx.init_ffn(params, "f", 8, 3, rng, hidden=16)
        x = nx.constant(rng.uniform(-1, 1, (4, 8)))
        weights = rng.standard_normal((4, 3))
        report = nx.grad_check(lambda: weighted_sum(nx.ffn_apply(x, ffn), weights), params, tolerance=1e-4)
        assert report.ok, report.errors

    @pytest.mark.parametrize(
        "op",
        [
            lambda a, b: nx.add(a, b),
            lambda a, b: nx.sub(a, b),
            lambda a, b: nx.mul(a, b),
            lambda a, b: nx.hypot(a, b),
            lambda a, b: nx.atan2(a, b),
            lambda a, b: nx.mul(nx.cos(a), nx.sin(b)),
            lambda a, b: nx.square(nx.relu(nx.sub(a, b))),
            lambda a, b: nx.matmul(a, nx.transpose(b)),
            lambda a, b: nx.concat_rows([nx.row_mean(a), nx.scale(b, 3.0)]),
            lambda a, b: nx.concat_cols([a, b]),
        ],
    )
    def test_binary_primitives(self, op, rng):
        a = leaf(rng.uniform(-1, 1, (3, 4)), "a")
        b = leaf(rng.uniform(-1, 1, (3, 4)), "b")
        shape = op(a, b).shape
        weights = rng.standard_normal(shape)
        report = nx.grad_check(lambda: weighted_sum(op(a, b), weights), [a, b], tolerance=1e-4)
        assert report.ok, report.errors

    def test_row_broadcast(self, rng):
        a = leaf(rng.uniform(-1, 1, (4, 3)), "a")
        row = leaf(rng.uniform(-1, 1, (1, 3)), "row")
        col = leaf(rng.uniform(-1, 1, (4, 1)), "col")
        weights = rng.standard_normal((4, 3))
        report = nx.grad_check(
            lambda: weighted_sum(nx.mul(nx.add(a, row), col), weights), [a, row, col], tolerance=1e-4
        )
        assert report.ok, report.errors

    def test_const_matmul_sparse(self, rng):
        import scipy.sparse

        matrix = scipy.sparse.random(5, 4, density=0.5, random_state=3, format="csr")
        a = leaf(rng.uniform(-1, 1, (4, 2)))
        weights = rng.standard_normal((5, 2))
        report = nx.grad_check(lambda: weighted_sum(nx.const_matmul(matrix, a), weights), [a], tolerance=1e-6)
        assert report.ok, report.errors

    def test_shared_node_accumulates(self):
        x = leaf([[2.0]])
        y = nx.mul(x, x)
        out = nx.add(y, y)
        nx.backward(out)
        assert x.grad[0, 0] == pytest.approx(8.0)

    def test_corrupted_backward_is_flagged(self, rng):
        x = leaf(rng.uniform(-1, 1, (2, 3)))

        def broken(a):
            return nx._node(2.0 * a.data, (a,), lambda grad: (3.0 * grad,))

        report = nx.grad_check(lambda: nx.sum_all(broken(x)), [x], tolerance=1e-4)
        assert not report.ok
        assert report.failed == ["x"]


class TestAdam:
    def test_first_step_moves_by_lr(self):
        params = nx.ParameterSet()
        w = params.add("w", [[1.0, -1.0]])
        w.grad[...] = [[0.3, -5.0]]
        nx.adam_step(params, 0.01)
        np.testing.assert_allclose(w.data, [[0.99, -0.99]], atol=1e-8)
        np.testing.assert_array_equal(w.grad, np.zeros((1, 2)))

    def test_zero_gradient_is_noop(self):
        params = nx.ParameterSet()
        w = params.add("w", [[1.0, 2.0]])
        nx.adam_step(params, 0.1)
        np.testing.assert_array_equal(w.data, [[1.0, 2.0]])
        assert params.step == 1

    def test_non_finite_gradient_names_parameter(self):
        params = nx.ParameterSet()
        w = params.add("layer.w", [[1.0]])
        w.grad[...] = np.inf
        with pytest.raises(NonFiniteError) as info:
            nx.adam_step(params, 0.1)
        assert info.value.name == "layer.w"
        assert params.step == 0

    def test_minimizes_square(self):
        params = nx.ParameterSet()
        w = params.add("w", [[1.0]])
        for _ in range(20000):
            nx.backward(nx.sum_all(nx.square(w)))
            nx.adam_step(params, 2e-4)
        assert abs(w.data[0, 0]) <= 1e-2


class TestCheckpoints:
    def _params(self, rng):
        params = nx.ParameterSet("demo")
        params.add("a", rng.standard_normal((2, 3)))
        params.add("b", rng.standard_normal((1, 4)))
        return params

    def test_round_trip(self, rng, tmp_path):
        params = self._params(rng)
        params.step = 7
        prefix = str(tmp_path / "ckpt" / "demo")
        nx.save_checkpoint(params, prefix)
        fresh = nx.ParameterSet("demo")
        fresh.add("a", np.zeros((2, 3)))
        fresh.add("b", np.zeros((1, 4)))
        nx.restore_checkpoint(fresh, prefix)
        assert nx.params_checksum(fresh) == nx.params_checksum(params)
        assert fresh.step == 7

    def test_resume_continues_adam(self, rng, tmp_path):
        params = self._params(rng)
        for _ in range(3):
            params["a"].grad[...] = 0.5
            params["b"].grad[...] = -0.25
            nx.adam_step(params, 1e-2)
        prefix = str(tmp_path / "demo")
        nx.save_checkpoint(params, prefix)
        fresh = nx.restore_checkpoint(self._params(np.random.default_rng(9)), prefix)
        assert fresh.step == 3
        for name in ("a", "b"):
            np.testing.assert_array_equal(fresh.first_moment[name], params.first_moment[name])
            np.testing.assert_array_equal(fresh.second_moment[name], params.second_moment[name])

        for pset in (params, fresh):
            pset["a"].grad[...] = 0.5
            pset["b"].grad[...] = -0.25
            nx.adam_step(pset, 1e-2)
        assert nx.params_checksum(fresh) == nx.params_checksum(params)

    def test_missing_moments_reset_step(self, rng, tmp_path):
        params = self._params(rng)
        params["a"].grad[...] = 1.0
        nx.adam_step(params, 1e-2)
        prefix = str(tmp_path / "demo")
        nx.save_checkpoint(params, prefix)
        os.remove(prefix + ".moments.bin")
        fresh = nx.restore_checkpoint(self._params(rng), prefix)
        assert fresh.step == 0
        np.testing.assert_array_equal(fresh.first_moment["a"], np.zeros((2, 3)))

    def test_corrupted_moments(self, rng, tmp_path):
        prefix = str(tmp_path / "demo")
        nx.save_checkpoint(self._params(rng), prefix)
        with open(prefix + ".moments.bin", "ab") as f_bin:
            f_bin.write(b"\x00" * 8)
        with pytest.raises(DatasetError):
            nx.restore_checkpoint(self._params(rng), prefix)

    def test_corrupted_payload(self, rng, tmp_path):
        prefix = str(tmp_path / "demo")
        nx.save_checkpoint(self._params(rng), prefix)
        with open(prefix + ".bin", "r+b") as f_bin:
            f_bin.seek(3)
            byte = f_bin.read(1)
            f_bin.seek(3)
            f_bin.write(bytes([byte[0] ^ 0xFF]))
        with pytest.raises(DatasetError):
            nx.load_checkpoint(prefix)

    def test_shape_mismatch(self, rng, tmp_path):
        prefix = str(tmp_path / "demo")
        nx.save_checkpoint(self._params(rng), prefix)
        other = nx.ParameterSet("demo")
        other.add("a", np.zeros((3, 2)))
        other.add("b", np.zeros((1, 4)))
        with pytest.raises(DatasetError):
            nx.restore_checkpoint(other, prefix)

    def test_checksum_tracks_values(self, rng):
        params = self._params(rng)
        before = nx.params_checksum(params)
        params["a"].data[0, 0] += 1e-12
        assert nx.params_checksum(params) != before
