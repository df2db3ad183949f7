import numpy as np
import pytest

from spaer.errors import EmptyDataset, ShapeMismatch
from spaer.eqfeatures import default_bank
from spaer.temporal import (AttentionParams, TokenSequence, TrainConfig,
                            _lift, attend, cosine_lr, gradient, init_params,
                            load_model, positional_encoding, save_model,
                            sequence_loss, train)


def random_params(dim, heads, rng, scale=0.1):
    """Params with nonzero output projections, so the refiner is not identity."""
    base = init_params(dim, heads, seed=7)
    layers = []
    for layer in base.layers:
        layer = dict(layer)
        layer["wo"] = rng.normal(0, scale, layer["wo"].shape)
        layer["w2"] = rng.normal(0, scale, layer["w2"].shape)
        layers.append(layer)
    return AttentionParams(dim, heads, tuple(layers))


def reference_forward(tokens, rho, params):
    """Straight-line numpy re-implementation used as an oracle."""
    t, d = tokens.shape
    heads = params.heads
    dh = d // heads
    h = tokens + rho
    h0 = h.copy()
    for layer in params.layers:
        q = (h @ layer["wq"]).reshape(t, heads, dh)
        k = (h @ layer["wk"]).reshape(t, heads, dh)
        v = (h @ layer["wv"]).reshape(t, heads, dh)
        mixed = np.empty((t, heads, dh))
        for hd in range(heads):
            scores = q[:, hd] @ k[:, hd].T / np.sqrt(dh)
            e = np.exp(scores - scores.max(axis=1, keepdims=True))
            a = e / e.sum(axis=1, keepdims=True)
            mixed[:, hd] = a @ v[:, hd]
        h = h + layer["ls_attn"] * (mixed.reshape(t, d) @ layer["wo"])
        ff = np.maximum(h @ layer["w1"], 0.0) @ layer["w2"]
        h = h + layer["ls_ff"] * ff
    return tokens + (h - h0)


class TestPositionalEncoding:
    def test_shape_and_formula(self):
        rho = positional_encoding(5, 8)
        assert rho.shape == (5, 8)
        for t in range(5):
            for i in range(4):
                alpha = 10.0 ** (-8.0 * i / 8)
                assert rho[t, 2 * i] == pytest.approx(np.sin(alpha * t), abs=1e-15)
                assert rho[t, 2 * i + 1] == pytest.approx(np.cos(alpha * t), abs=1e-15)

    def test_odd_dim_rejected(self):
        with pytest.raises(ValueError):
            positional_encoding(4, 7)

    def test_frames_distinguishable(self):
        rho = positional_encoding(30, 96)
        for t in range(1, 30):
            assert np.max(np.abs(rho[t] - rho[0])) > 1e-6


class TestInitParams:
    def test_identity_projections_zero(self):
        p = init_params(12, heads=4, seed=3)
        for layer in p.layers:
            assert np.all(layer["wo"] == 0)
            assert np.all(layer["w2"] == 0)
            assert np.all(layer["ls_attn"] == 1)

    def test_seed_reproducible(self):
        a = init_params(12, 4, seed=5)
        b = init_params(12, 4, seed=5)
        for (na, ta), (nb, tb) in zip(a.tensors(), b.tensors()):
            assert na == nb and np.array_equal(ta, tb)

    def test_indivisible_heads_rejected(self):
        with pytest.raises(ShapeMismatch):
            init_params(10, heads=4)


class TestForward:
    def test_identity_at_init_bitwise(self, rng):
        tokens = rng.normal(0, 1, (7, 12))
        seq = TokenSequence(tokens, np.arange(7.0))
        out = attend(seq, init_params(12, 4, seed=0))
        assert np.array_equal(out.tokens, tokens)

    def test_matches_reference_oracle(self, rng):
        params = random_params(6, 2, rng)
        tokens = rng.normal(0, 1, (3, 6))
        seq = TokenSequence(tokens, np.arange(3.0))
        got = attend(seq, params).tokens
        expected = reference_forward(tokens, positional_encoding(3, 6), params)
        assert np.max(np.abs(got - expected)) < 1e-12

    def test_frame_order_sensitivity(self, rng):
        # positional encoding breaks permutation symmetry
        params = random_params(6, 2, rng)
        tokens = rng.normal(0, 1, (4, 6))
        out1 = attend(TokenSequence(tokens, np.arange(4.0)), params).tokens
        out2 = attend(TokenSequence(tokens[::-1], np.arange(4.0)), params).tokens
        assert np.max(np.abs(out1 - out2[::-1])) > 1e-6

    def test_dim_mismatch_rejected(self, rng):
        seq = TokenSequence(rng.normal(0, 1, (3, 8)), np.arange(3.0))
        with pytest.raises(ShapeMismatch):
            attend(seq, init_params(12, 4))


class TestGradient:
    def test_matches_finite_differences(self, rng):
        params = random_params(6, 2, rng)
        tokens = rng.normal(0, 1, (3, 6))
        target = rng.normal(0, 1, (3, 6))
        seq = TokenSequence(tokens, np.arange(3.0))

        def loss_fn(layers):
            return sequence_loss(seq, target, params, layers)

        _, grads = gradient(loss_fn, params)
        eps = 1e-6
        checked = 0
        for li, layer in enumerate(params.layers):
            for name in ("wq", "wo", "w1", "w2", "ls_attn", "ls_ff"):
                g = grads[f"layer{li}.{name}"]
                flat_idx = rng.integers(0, layer[name].size, 3)
                for fi in np.unique(flat_idx):
                    idx = np.unravel_index(fi, layer[name].shape)
                    pert = params.copy()
                    pert.layers[li][name][idx] += eps
                    lp = float(sequence_loss(seq, target, pert, _lift(pert)).data)
                    pert.layers[li][name][idx] -= 2 * eps
                    lm = float(sequence_loss(seq, target, pert, _lift(pert)).data)
                    num = (lp - lm) / (2 * eps)
                    denom = max(abs(num), abs(g[idx]), 1e-8)
                    assert abs(g[idx] - num) / denom < 1e-4
                    checked += 1
        assert checked >= 30


class TestTraining:
    def _toy_dataset(self, rng, n=6, t=5, d=6):
        data = []
        for _ in range(n):
            tokens = rng.normal(0, 0.5, (t, d))
            target = tokens + 0.05 * np.tanh(tokens)  # smooth learnable map
            data.append((TokenSequence(tokens, np.arange(float(t))), target))
        return data

    def test_loss_decreases(self, rng):
        data = self._toy_dataset(rng)
        cfg = TrainConfig(learning_rate=3e-3, epochs=15, batch_size=2,
                          heads=2, seed=0)
        result = train(data[:4], data[4:], default_bank(), cfg)
        first = result.history[0]["val_loss"]
        assert min(h["val_loss"] for h in result.history) < first
        assert result.best_epoch >= 0
        assert len(result.history) == 15

    def test_empty_dataset_rejected(self):
        with pytest.raises(EmptyDataset):
            train([], [], default_bank(), TrainConfig())

    def test_deterministic_given_seed(self, rng):
        data = self._toy_dataset(rng, n=4)
        cfg = TrainConfig(learning_rate=1e-3, epochs=3, batch_size=2,
                          heads=2, seed=9)
        r1 = train(data[:3], data[3:], default_bank(), cfg)
        r2 = train(data[:3], data[3:], default_bank(), cfg)
        for (_, a), (_, b) in zip(r1.params.tensors(), r2.params.tensors()):
            assert np.array_equal(a, b)

    def test_cosine_schedule_endpoints(self):
        cfg = TrainConfig(learning_rate=1e-2, epochs=10)
        assert cosine_lr(cfg, 0) == pytest.approx(1e-2)
        assert cosine_lr(cfg, 10) == pytest.approx(0.0, abs=1e-18)
        flat = TrainConfig(learning_rate=1e-2, epochs=10, cosine_schedule=False)
        assert cosine_lr(flat, 7) == 1e-2


class TestModelIO:
    def test_roundtrip_bitwise(self, rng, tmp_path):
        bank = default_bank()
        params = random_params(96, 4, rng)
        path = tmp_path / "model.bin"
        save_model(path, params, bank)
        loaded, gains = load_model(path)
        assert loaded.dim == 96 and loaded.heads == 4
        for (na, ta), (nb, tb) in zip(params.tensors(), loaded.tensors()):
            assert na == nb and np.array_equal(ta, tb)
        assert np.array_equal(gains, bank.raw_gains)
        assert (tmp_path / "model.bin.meta.json").exists()

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "junk.bin"
        p.write_bytes(b"NOTAMODEL" + b"\0" * 64)
        with pytest.raises(ValueError):
            load_model(p)
