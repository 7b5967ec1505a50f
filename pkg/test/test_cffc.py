"""Tests for the Fourier enhancer and the cross-attention conditioner."""

import numpy as np
import pytest

import cffc
import numerics as nx
from errors import ShapeError
from spectral import SubTrajectoryPair


def small_cffc(rng, d_s=3, d_model=4, hidden=8):
    return cffc.init_cffc(d_s, rng, d_model=d_model, hidden=hidden)


def randomize(params, rng, scale=0.5):
    for _, tensor in params:
        tensor.data[...] = rng.uniform(-scale, scale, tensor.shape)


class TestFourierEnhance:
    def test_zero_output_layers_are_identity(self, rng):
        model = cffc.init_cffc(11, rng, d_model=8, hidden=16)
        sub = rng.standard_normal((48, 11))
        out = cffc.fourier_enhance(sub, model.enhance_low)
        assert out.shape == (48, 11)
        assert np.max(np.abs(out.data - sub)) <= 1e-9

    @pytest.mark.parametrize("n", [2, 7, 12])
    def test_output_is_real_and_shaped(self, n, rng):
        model = small_cffc(rng)
        randomize(model.params, rng)
        out = cffc.fourier_enhance(rng.standard_normal((n, 3)), model.enhance_high)
        assert out.shape == (n, 3)
        assert np.all(np.isfinite(out.data))

    @pytest.mark.parametrize("n", [7, 8])
    def test_matches_full_spectrum_inverse(self, n, rng):
        model = small_cffc(rng)
        randomize(model.params, rng)
        sub = rng.standard_normal((n, 3))
        out = cffc.fourier_enhance(sub, model.enhance_low).data

        last = n // 2
        real_bins = [0, last] if n % 2 == 0 else [0]
        spectrum = np.fft.fft(sub, axis=0)[: last + 1]
        spectrum[real_bins] = spectrum[real_bins].real
        enhanced = cffc._branch(nx.constant(np.abs(spectrum)), model.enhance_low.amplitude).data
        phase = np.angle(spectrum)
        phase[phase <= -np.pi] = np.pi
        phase[np.abs(spectrum) < 1e-12] = 0.0
        phase = cffc._branch(nx.constant(phase), model.enhance_low.phase).data
        half = enhanced * np.exp(1j * phase)
        half[real_bins] = half[real_bins].real
        mirror = half[1 : n - last][::-1]
        full = np.concatenate([half, np.conj(mirror)], axis=0)
        assert full.shape == (n, 3)
        np.testing.assert_allclose(out, np.fft.ifft(full, axis=0).real, atol=1e-10)

    def test_too_short(self, rng):
        with pytest.raises(ShapeError):
            cffc.fourier_enhance(np.zeros((1, 3)), small_cffc(rng).enhance_low)

    def test_gradient(self, rng):
        model = small_cffc(rng)
        randomize(model.params, rng)
        sub = rng.uniform(-1, 1, (8, 3))
        weights = rng.standard_normal((8, 3))

        def loss():
            out = cffc.fourier_enhance(sub, model.enhance_low)
            return nx.sum_all(nx.mul(out, nx.constant(weights)))

        params = [model.params[name] for name in model.params.names("enhance_low")]
        report = nx.grad_check(loss, params, tolerance=1e-4, max_entries=6)
        assert report.ok, report.errors


class TestCrossAttend:
    def test_zero_query_gives_uniform_attention(self, rng):
        model = small_cffc(rng)
        randomize(model.params, rng)
        model.params["attend.q.w2"].data[...] = 0.0
        model.params["attend.q.b2"].data[...] = 0.0
        tlow = rng.standard_normal((6, 3))
        thigh = rng.standard_normal((6, 3))
        cond = cffc.cross_attend(tlow, thigh, model.attention)
        np.testing.assert_allclose(cond.attention, np.full((6, 6), 1.0 / 6), atol=1e-15)
        v_low = nx.ffn_apply(nx.constant(tlow), model.attention.v_low).data
        np.testing.assert_allclose(cond.con_low.data, np.repeat(v_low.mean(axis=0, keepdims=True), 6, axis=0), atol=1e-12)

    def test_single_row(self, rng):
        model = small_cffc(rng)
        tlow = rng.standard_normal((1, 3))
        cond = cffc.cross_attend(tlow, rng.standard_normal((1, 3)), model.attention)
        np.testing.assert_array_equal(cond.attention, [[1.0]])
        v_low = nx.ffn_apply(nx.constant(tlow), model.attention.v_low).data
        np.testing.assert_allclose(cond.con_low.data, v_low, atol=1e-15)

    def test_rows_sum_to_one_and_pooling(self, rng):
        model = small_cffc(rng)
        cond = cffc.cross_attend(rng.standard_normal((5, 3)), rng.standard_normal((5, 3)), model.attention)
        np.testing.assert_allclose(cond.attention.sum(axis=1), 1.0, atol=1e-12)
        np.testing.assert_allclose(cond.pooled_low.data, cond.con_low.data.mean(axis=0, keepdims=True))
        np.testing.assert_allclose(cond.pooled_high.data, cond.con_high.data.mean(axis=0, keepdims=True))
        assert cond.con_low.shape == cond.con_high.shape == (5, 4)

    def test_joint_key_value_permutation(self, rng):
        model = small_cffc(rng)
        tlow = rng.standard_normal((6, 3))
        thigh = rng.standard_normal((6, 3))
        order = rng.permutation(6)
        first = cffc.cross_attend(tlow, thigh, model.attention)
        second = cffc.cross_attend(tlow[order], thigh, model.attention)
        np.testing.assert_allclose(first.con_low.data, second.con_low.data, atol=1e-10)

    def test_shape_mismatch(self, rng):
        model = small_cffc(rng)
        with pytest.raises(ShapeError):
            cffc.cross_attend(np.zeros((4, 3)), np.zeros((5, 3)), model.attention)


class TestCffcForward:
    def test_identity_enhancers_with_zero_query(self, rng):
        model = small_cffc(rng)
        model.params["attend.q.w2"].data[...] = 0.0
        model.params["attend.q.b2"].data[...] = 0.0
        pair = SubTrajectoryPair(rng.standard_normal((6, 3)), rng.standard_normal((6, 3)), 12)
        cond = cffc.cffc_forward(pair, model)
        v_low = nx.ffn_apply(nx.constant(pair.low), model.attention.v_low).data
        v_high = nx.ffn_apply(nx.constant(pair.high), model.attention.v_high).data
        np.testing.assert_allclose(cond.pooled_low.data, v_low.mean(axis=0, keepdims=True), atol=1e-9)
        np.testing.assert_allclose(cond.pooled_high.data, v_high.mean(axis=0, keepdims=True), atol=1e-9)

    def test_deterministic(self, rng):
        model = small_cffc(rng)
        randomize(model.params, rng)
        pair = (rng.standard_normal((6, 3)), rng.standard_normal((6, 3)))
        first = cffc.cffc_forward(pair, model)
        second = cffc.cffc_forward(pair, model)
        np.testing.assert_array_equal(first.con_low.data, second.con_low.data)
        np.testing.assert_array_equal(first.con_high.data, second.con_high.data)

    def test_mismatched_pair(self, rng):
        with pytest.raises(ShapeError):
            cffc.cffc_forward((np.zeros((4, 3)), np.zeros((6, 3))), small_cffc(rng))

    def test_gradient_wrt_every_parameter(self, rng):
        model = small_cffc(rng)
        randomize(model.params, rng)
        pair = SubTrajectoryPair(rng.uniform(-1, 1, (6, 3)), rng.uniform(-1, 1, (6, 3)), 12)
        w_low = rng.standard_normal((6, 4))
        w_high = rng.standard_normal((6, 4))

        def loss():
            cond = cffc.cffc_forward(pair, model)
            return nx.add(
                nx.sum_all(nx.mul(cond.con_low, nx.constant(w_low))),
                nx.sum_all(nx.mul(cond.con_high, nx.constant(w_high))),
            )

        report = nx.grad_check(loss, model.params, tolerance=1e-4, max_entries=4)
        assert report.ok, report.errors
        assert len(report.errors) == len(model.params)

    def test_every_block_moves_the_output(self, rng):
        model = small_cffc(rng)
        randomize(model.params, rng)
        pair = SubTrajectoryPair(rng.standard_normal((6, 3)), rng.standard_normal((6, 3)), 12)
        base = cffc.cffc_forward(pair, model)
        for prefix in ("enhance_low", "enhance_high", "attend.q", "attend.k", "attend.v_low", "attend.v_high"):
            saved = {name: model.params[name].data.copy() for name in model.params.names(prefix)}
            for name in saved:
                model.params[name].data[...] += 0.1
            moved = cffc.cffc_forward(pair, model)
            delta = np.abs(moved.con_low.data - base.con_low.data).max() + np.abs(
                moved.con_high.data - base.con_high.data
            ).max()
            assert delta > 0.0, prefix
            for name, values in saved.items():
                model.params[name].data[...] = values
