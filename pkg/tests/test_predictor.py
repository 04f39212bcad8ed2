"""LSTM cell math, rollout indexing, BPTT gradients, stage-3 contracts."""

import numpy as np
import pytest

from pointhebb import numerics as nm
from pointhebb import predictor as pr
from pointhebb import setdecoder as sd
from pointhebb.dataset import SynthConfig, make_chunks, synth_generate
from pointhebb.encoder import init_encoder
from pointhebb.numerics import Tensor


def _zero_params(dtype=np.float64):
    z = lambda *s: np.zeros(s, dtype=dtype)
    return pr.LSTMParams(
        w_in=z(64, 256), b_in=z(64),
        gates={n: (z(64, 128), z(64)) for n in "ifgo"},
        w_out=z(256, 64), b_out=z(256),
    )


class TestLstmStep:
    def test_zero_weights_give_zero_everything(self):
        params = _zero_params()
        z_out, (h, c) = pr.lstm_step(np.ones(256), pr.zero_state(np.float64), params)
        assert np.all(z_out == 0) and np.all(h == 0) and np.all(c == 0)

    def test_forget_gate_saturation(self):
        # bias 20 on the forget gate: c' ~= c + i*g to 1e-6
        rng = np.random.default_rng(0)
        params = pr.init_lstm(rng, dtype=np.float64)
        params.gates["f"][0][:] = 0.0
        params.gates["f"][1][:] = 20.0
        state = (rng.uniform(-1, 1, 64), rng.uniform(-1, 1, 64))
        z = rng.uniform(size=256)

        weights = params.tensors()
        u = nm.linear(Tensor(z), weights[0], weights[1]).data
        xh = np.concatenate([u, state[0]])
        i_gate = 1 / (1 + np.exp(-(xh @ params.gates["i"][0].T + params.gates["i"][1])))
        g_gate = np.tanh(xh @ params.gates["g"][0].T + params.gates["g"][1])

        _, (_, c_next) = pr.lstm_step(z, state, params)
        np.testing.assert_allclose(c_next, state[1] + i_gate * g_gate, atol=1e-6)

    def test_single_step_gradient_vs_finite_differences(self):
        rng = np.random.default_rng(1)
        params = pr.init_lstm(rng, dtype=np.float64)
        z = rng.uniform(size=256)
        tensors = params.tensors()

        def loss_fn(w_g):
            weights = tensors[:6] + [w_g] + tensors[7:]
            h0 = Tensor(np.zeros(64))
            c0 = Tensor(np.zeros(64))
            z_out, _, _ = pr._step_tensors(Tensor(z), h0, c0, weights)
            return nm.reduce_mean(z_out)

        err = nm.finite_diff_check(
            loss_fn, params.gates["g"][0], h=1e-6, sample=150, rng=np.random.default_rng(2)
        )
        assert err < 1e-4

    def test_parameter_count(self):
        assert pr.init_lstm(np.random.default_rng(0)).param_count() == 66_112
        assert 16_448 + 33_024 + 16_640 == 66_112


class TestRollout:
    def _latents(self, seed=3):
        return np.random.default_rng(seed).uniform(size=(50, 256)).astype(np.float32)

    def test_output_length_and_counters(self):
        params = pr.init_lstm(np.random.default_rng(4))
        result = pr.rollout(self._latents(), params)
        assert result.predictions.shape == (49, 256)
        assert result.observed_inputs == 25
        assert result.recursive_inputs == 24

    def test_constant_output_params_fix_recursive_segment(self):
        params = _zero_params(dtype=np.float32)
        params.b_out[:] = 0.25
        result = pr.rollout(self._latents(), params)
        # every prediction equals the constant map output; the recursive
        # segment in particular is a fixed point
        recursive = result.predictions[25:]
        np.testing.assert_array_equal(recursive, np.tile(recursive[0], (24, 1)))

    def test_prediction_indexing_contract(self):
        # entry j is the model's estimate of frame j+2 (1-based): feeding
        # latents[0..j] teacher-forced reproduces prediction j for j < 25
        params = pr.init_lstm(np.random.default_rng(5))
        latents = self._latents()
        result = pr.rollout(latents, params)
        state = pr.zero_state()
        for t in range(25):
            z_out, state = pr.lstm_step(latents[t], state, params)
            np.testing.assert_array_equal(result.predictions[t], z_out)

    def test_wrong_chunk_length_rejected(self):
        params = pr.init_lstm(np.random.default_rng(6))
        with pytest.raises(ValueError, match="expects"):
            pr.rollout(np.zeros((49, 256)), params)

    def test_rollout_bptt_gradient_toy_dims(self):
        # same graph machinery at toy widths: latent 8, hidden 4, 50 steps
        rng = np.random.default_rng(7)
        lat, hid = 8, 4
        arrays = [
            rng.uniform(-0.5, 0.5, size=(hid, lat)), rng.uniform(-0.5, 0.5, size=hid),
        ]
        for _ in range(4):
            arrays += [rng.uniform(-0.5, 0.5, size=(hid, 2 * hid)), rng.uniform(-0.5, 0.5, size=hid)]
        arrays += [rng.uniform(-0.5, 0.5, size=(lat, hid)), rng.uniform(-0.5, 0.5, size=lat)]
        latents = rng.uniform(size=(50, lat))
        targets = rng.uniform(size=(49, lat))

        def loss_fn(w_g):
            weights = [Tensor(a) for a in arrays]
            weights[6] = w_g  # cell-candidate gate weight
            rows = [Tensor(r) for r in latents]
            preds = pr._rollout_graph(rows, weights, observe=25)
            diffs = [
                nm.reduce_mean(nm.mul(nm.add(p, Tensor(-t)), nm.add(p, Tensor(-t))))
                for p, t in zip(preds, targets)
            ]
            return nm.mean_scalars(diffs)

        err = nm.finite_diff_check(loss_fn, arrays[6], h=1e-6)
        assert err < 1e-4


def _pipeline(seed=0, n_chunks=4):
    frames = synth_generate(
        SynthConfig(frames=n_chunks * 50, n_init=8, n_min=6, n_max=12), seed=seed
    )
    chunks = make_chunks(frames)
    rng = np.random.default_rng(seed + 1)
    encoder = init_encoder(3, rng, frames=frames)
    decoder = sd.init_decoder(rng)
    return chunks, encoder, decoder


class TestTrainLstm:
    def test_freeze_contract(self):
        chunks, encoder, decoder = _pipeline()
        enc_before = [w.copy() for w in encoder.layers]
        dec_before = [(w.copy(), b.copy()) for w, b in decoder.layers]
        cfg = pr.LstmTrainConfig(epochs=2, batch_size=2)
        pr.train_lstm(encoder, decoder, chunks[:3], chunks[3:], cfg, np.random.default_rng(2))
        for w, w0 in zip(encoder.layers, enc_before):
            np.testing.assert_array_equal(w, w0)
        for (w, b), (w0, b0) in zip(decoder.layers, dec_before):
            np.testing.assert_array_equal(w, w0)
            np.testing.assert_array_equal(b, b0)

    def test_missing_models_rejected(self):
        chunks, encoder, decoder = _pipeline()
        with pytest.raises(ValueError, match="required"):
            pr.train_lstm(None, decoder, chunks[:2], chunks[2:],
                          pr.LstmTrainConfig(epochs=1), np.random.default_rng(0))

    def test_history_and_best_checkpoint(self):
        chunks, encoder, decoder = _pipeline(seed=3)
        cfg = pr.LstmTrainConfig(epochs=3, batch_size=4)
        _, history = pr.train_lstm(
            encoder, decoder, chunks[:3], chunks[3:], cfg, np.random.default_rng(4)
        )
        assert len(history.rows) == 3
        assert history.best_epoch == int(np.argmin(history.validation)) + 1


class TestPredictSets:
    def test_per_step_curve_and_formats(self, tmp_path):
        from pointhebb.dataset import pgm_bytes, rasterize

        chunks, encoder, decoder = _pipeline(seed=5)
        lstm = pr.init_lstm(np.random.default_rng(6))
        frames, result = pr.predict_sets(
            chunks[0], encoder, decoder, lstm, noise=sd.NoiseSpec(seed=0)
        )
        assert len(frames) == 49
        assert result.losses.shape == (49,)
        for frame, truth in zip(frames, chunks[0].frames[1:]):
            assert frame.n == truth.n
            assert frame.t == truth.t
        raw = pgm_bytes(rasterize(frames[0]))
        assert raw.startswith(b"P5\n256 256\n255\n")

    def test_checkpoint_round_trip(self, tmp_path):
        params = pr.init_lstm(np.random.default_rng(7))
        pr.save_lstm(params, tmp_path / "lstm.npz")
        loaded = pr.load_lstm(tmp_path / "lstm.npz")
        np.testing.assert_array_equal(loaded.w_in, params.w_in)
        for n in "ifgo":
            np.testing.assert_array_equal(loaded.gates[n][0], params.gates[n][0])
