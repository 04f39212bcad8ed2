"""Smooth-L1, Chamfer oracle checks, decoding, stage-2 training contracts."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from pointhebb import numerics as nm
from pointhebb import setdecoder as sd
from pointhebb.dataset import SynthConfig, synth_generate
from pointhebb.encoder import init_encoder


def _chamfer_oracle(s1, s2):
    """Independent O(N^2) double loop straight from the definition."""

    def d(x, y):
        total = 0.0
        for a, b in zip(x, y):
            diff = abs(a - b)
            total += 0.5 * diff * diff if diff < 1 else diff - 0.5
        return total

    fwd = sum(min(d(x, y) for y in s2) for x in s1)
    bwd = sum(min(d(x, y) for x in s1) for y in s2)
    return fwd + bwd


class TestSmoothL1:
    def test_quadratic_branch(self):
        assert sd.smooth_l1(0.2, 0.0) == pytest.approx(0.02)

    def test_linear_branch(self):
        assert sd.smooth_l1(2.0, 0.0) == pytest.approx(1.5)

    def test_branch_boundary_continuity(self):
        assert sd.smooth_l1(1.0, 0.0) == pytest.approx(0.5)
        assert 0.5 * 1.0**2 == abs(1.0) - 0.5

    @given(st.floats(-10, 10), st.floats(-10, 10))
    def test_non_negative_and_symmetric(self, a, b):
        assert sd.smooth_l1(a, b) >= 0
        assert sd.smooth_l1(a, b) == sd.smooth_l1(b, a)

    def test_derivative_bounded_by_one(self):
        xs = np.linspace(-5, 5, 1001)
        vals = nm.smooth_l1_value(xs)
        slopes = np.diff(vals) / np.diff(xs)
        assert np.all(np.abs(slopes) <= 1.0 + 1e-9)


class TestChamfer:
    def test_identical_sets_zero(self):
        s = np.random.default_rng(0).uniform(size=(12, 2))
        assert sd.chamfer(s, s) == 0.0

    def test_hand_computed(self):
        assert sd.chamfer([[0.0, 0.0]], [[0.3, 0.4]]) == pytest.approx(0.25)

    def test_matches_double_loop_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(200):
            s1 = rng.uniform(-1, 2, size=(rng.integers(1, 21), 2))
            s2 = rng.uniform(-1, 2, size=(rng.integers(1, 21), 2))
            assert sd.chamfer(s1, s2) == pytest.approx(_chamfer_oracle(s1, s2), abs=1e-9)

    def test_symmetry_bitwise(self):
        rng = np.random.default_rng(2)
        s1 = rng.uniform(size=(9, 2))
        s2 = rng.uniform(size=(14, 2))
        assert sd.chamfer(s1, s2) == sd.chamfer(s2, s1)

    def test_permutation_invariance_bitwise(self):
        rng = np.random.default_rng(3)
        s1 = rng.uniform(size=(11, 2))
        s2 = rng.uniform(size=(7, 2))
        base = sd.chamfer(s1, s2)
        for seed in range(10):
            r = np.random.default_rng(seed)
            assert sd.chamfer(s1[r.permutation(11)], s2[r.permutation(7)]) == base

    def test_empty_set_rejected(self):
        with pytest.raises(ValueError, match="non-empty"):
            sd.chamfer(np.zeros((0, 2)), np.ones((2, 2)))


class TestDecode:
    def setup_method(self):
        self.params = sd.init_decoder(np.random.default_rng(4))
        self.z = np.random.default_rng(5).uniform(size=256).astype(np.float32)

    def test_deterministic_given_seed(self):
        noise = sd.NoiseSpec(seed=9)
        a = sd.decode(self.z, 8, noise, self.params)
        b = sd.decode(self.z, 8, noise, self.params)
        np.testing.assert_array_equal(a, b)

    def test_outputs_in_open_unit_square(self):
        pts = sd.decode(self.z, 64, sd.NoiseSpec(seed=1), self.params)
        assert pts.shape == (64, 2)
        assert np.all(pts > 0)
        assert np.all(pts < 1)

    def test_seeded_stream_prefix_property(self):
        noise = sd.NoiseSpec(seed=2)
        one = sd.decode(self.z, 1, noise, self.params)
        three = sd.decode(self.z, 3, noise, self.params)
        np.testing.assert_array_equal(one[0], three[0])

    @pytest.mark.parametrize("n", [1, 2, 7, 33, 256, 512])
    def test_exact_count(self, n):
        assert sd.decode(self.z, n, sd.NoiseSpec(seed=0), self.params).shape == (n, 2)

    def test_zero_count_rejected(self):
        with pytest.raises(ValueError, match="at least 1"):
            sd.decode(self.z, 0, sd.NoiseSpec(), self.params)


def _tiny_frames(n=60, seed=0):
    return synth_generate(SynthConfig(frames=n, n_init=10, n_min=6, n_max=14), seed=seed)


class TestTrainDecoder:
    def test_freeze_contract_and_improvement(self):
        frames = _tiny_frames(80)
        rng = np.random.default_rng(6)
        encoder = init_encoder(3, rng, frames=frames)
        before = [w.copy() for w in encoder.layers]
        cfg = sd.DecoderTrainConfig(epochs=8, batch_size=16)
        decoder, history = sd.train_decoder(
            encoder, frames[:64], frames[64:], cfg, np.random.default_rng(7)
        )
        for w, w0 in zip(encoder.layers, before):
            np.testing.assert_array_equal(w, w0)
        assert history.rows[0][1] > min(history.train)
        assert history.best_epoch == int(np.argmin(history.validation)) + 1

    def test_empty_data_rejected(self):
        encoder = init_encoder(3, np.random.default_rng(0))
        with pytest.raises(ValueError, match="empty"):
            sd.train_decoder(encoder, [], [], sd.DecoderTrainConfig(), np.random.default_rng(0))

    def test_gradient_matches_finite_differences(self):
        # double-precision decoder on a toy frame; every parameter of one layer
        rng = np.random.default_rng(8)
        target = rng.uniform(0.2, 0.8, size=(5, 2))
        z = rng.uniform(size=256)
        eps = rng.standard_normal((5, sd.NOISE_DIM))
        params = sd.init_decoder(rng, dtype=np.float64)
        tensors = params.tensors()

        def loss_fn(w3):
            weights = tensors[:4] + [w3] + tensors[5:]
            pts = sd.mlp_decode(nm.Tensor(z), eps, weights)
            return nm.chamfer_smooth_l1(pts, target)

        err = nm.finite_diff_check(
            loss_fn, params.layers[2][0], h=1e-6, sample=200, rng=np.random.default_rng(9)
        )
        assert err < 1e-4

    def test_checkpoint_round_trip(self, tmp_path):
        params = sd.init_decoder(np.random.default_rng(10))
        sd.save_decoder(params, tmp_path / "dec.npz")
        loaded = sd.load_decoder(tmp_path / "dec.npz")
        for (w, b), (w2, b2) in zip(params.layers, loaded.layers):
            np.testing.assert_array_equal(w, w2)
            np.testing.assert_array_equal(b, b2)

    def test_parameter_count_documented(self):
        assert sd.init_decoder(np.random.default_rng(0)).param_count() == 59_842
