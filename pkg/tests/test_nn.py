import io

import numpy as np
import pytest

from pupilnet import nn
from pupilnet.presets import PRESETS

from conftest import TINY
from oracles import forward_oracle


def test_init_is_seeded(tiny_model):
    again = nn.init_model(TINY, seed=7)
    other = nn.init_model(TINY, seed=8)
    for a, b in zip(tiny_model.arrays(), again.arrays()):
        assert np.array_equal(a, b)
    assert not np.array_equal(tiny_model.conv_kernels, other.conv_kernels)


def test_init_ranges_and_zero_biases():
    cfg = PRESETS["C_K8P8"]
    m = nn.init_model(cfg, 0)
    assert np.abs(m.conv_kernels).max() <= np.sqrt(6 / (25 + 8))
    assert np.abs(m.fc_weights).max() <= np.sqrt(6 / (200 + 8))
    assert np.abs(m.out_weights).max() <= np.sqrt(6 / 9)
    assert not m.conv_biases.any() and not m.fc_biases.any() and m.out_bias == 0


@pytest.mark.parametrize("bad", [
    dict(input_size=4, kernel_size=5),
    dict(input_size=24, kernel_size=5, pool_window=30),
    dict(input_size=24, kernel_size=5, num_filters=0),
    dict(input_size=24, kernel_size=5, conv_stride=2),
])
def test_config_rejects_impossible_shapes(bad):
    with pytest.raises(nn.ConfigError):
        nn.CnnConfig(**bad)


def test_zero_model_rates_one_half():
    m = nn.CnnModel.zeros(PRESETS["C_K4P8"])
    assert nn.forward(m, np.random.default_rng(0).random((24, 24))) == 0.5
    loss, _ = nn.compute_gradients(m, nn.TrainingSample(np.zeros((24, 24)), 1))
    assert loss == pytest.approx(0.125, abs=1e-15)


def test_forward_matches_oracle(tiny_model, rng):
    for _ in range(20):
        patch = rng.random((10, 10))
        assert abs(nn.forward(tiny_model, patch) - forward_oracle(tiny_model, patch)) < 1e-12


def test_forward_activation_shapes():
    m = nn.init_model(PRESETS["F_K8P8"], 0)
    y, acts = nn.forward(m, np.full((89, 89), 0.3), return_activations=True)
    assert acts.conv.shape == (8, 70, 70)
    assert acts.pool.shape == (8, 14, 14)
    assert acts.hidden.shape == (8,)
    assert 0 < y < 1


def test_forward_rejects_wrong_patch_size(tiny_model):
    with pytest.raises(nn.ShapeError):
        nn.forward(tiny_model, np.zeros((11, 10)))


def test_gradient_check_small_model(tiny_model, rng):
    for target in (0, 1):
        s = nn.TrainingSample(rng.random((10, 10)), target)
        assert nn.gradient_check(tiny_model, s) < 1e-5


def test_gradient_check_catches_scaled_layer(tiny_model, rng):
    s = nn.TrainingSample(rng.random((10, 10)), 1)

    def doubled_fc(model, sample):
        loss, g = nn.compute_gradients(model, sample)
        g.fc_weights = g.fc_weights * 2
        return loss, g

    assert nn.gradient_check(tiny_model, s, grad_fn=doubled_fc) > 0.3


def test_batch_gradient_is_mean_of_singles(tiny_model, rng):
    X = rng.random((7, 10, 10))
    t = np.array([1, 0, 0, 1, 0, 1, 0], dtype=float)
    loss, g = nn.batch_gradients(tiny_model, X, t)
    singles = [nn.compute_gradients(tiny_model, nn.TrainingSample(x, int(y)))
               for x, y in zip(X, t)]
    assert loss == pytest.approx(np.mean([l for l, _ in singles]), abs=1e-14)
    for i, arr in enumerate(g.arrays()):
        ref = np.mean([s[1].arrays()[i] for s in singles], axis=0)
        assert np.allclose(arr, ref, rtol=0, atol=1e-12)


def test_chunked_gradients_equal_unchunked(monkeypatch, tiny_model, rng):
    X = rng.random((50, 10, 10))
    t = (rng.random(50) > 0.5).astype(float)
    _, whole = nn.batch_gradients(tiny_model, X, t)
    monkeypatch.setattr(nn, "_CHUNK_PIXELS", 700)
    _, parts = nn.batch_gradients(tiny_model, X, t)
    for a, b in zip(whole.arrays(), parts.arrays()):
        assert np.allclose(a, b, rtol=0, atol=1e-14)


def _toy_problem(rng, n=60):
    X = rng.random((n, 10, 10)) * 0.5
    t = (np.arange(n) % 2).astype(float)
    X[t == 1, 3:7, 3:7] += 0.5  # bright centre marks the positives
    return X, t


def test_train_is_deterministic_and_learns(tiny_model, rng):
    X, t = _toy_problem(rng)
    a, hist_a = nn.train(tiny_model, (X, t), epochs=30, batch_size=10, learning_rate=2.0, seed=3)
    b, hist_b = nn.train(tiny_model, (X, t), epochs=30, batch_size=10, learning_rate=2.0, seed=3)
    assert nn.model_to_bytes(a) == nn.model_to_bytes(b)
    assert hist_a == hist_b
    assert hist_a[-1] < 0.5 * hist_a[0]
    # input model is left untouched
    assert nn.model_to_bytes(tiny_model) == nn.model_to_bytes(nn.init_model(TINY, 7))


def test_train_accepts_sample_lists(tiny_model, rng):
    X, t = _toy_problem(rng, 12)
    samples = [nn.TrainingSample(x, int(y)) for x, y in zip(X, t)]
    a, _ = nn.train(tiny_model, samples, epochs=2, batch_size=5, seed=1)
    b, _ = nn.train(tiny_model, (X, t), epochs=2, batch_size=5, seed=1)
    assert nn.model_to_bytes(a) == nn.model_to_bytes(b)


def test_train_rejects_bad_arguments(tiny_model):
    X, t = np.zeros((4, 10, 10)), np.zeros(4)
    with pytest.raises(ValueError):
        nn.train(tiny_model, (X, t), batch_size=0)
    with pytest.raises(ValueError):
        nn.train(tiny_model, (X[:0], t[:0]))


def test_training_blowup_is_reported(tiny_model, rng):
    X, t = _toy_problem(rng, 10)
    with pytest.raises(ValueError):
        nn.train(tiny_model, (X, t), epochs=1, batch_size=10, learning_rate=np.inf)


# -- serialization ---------------------------------------------------------------

@pytest.mark.parametrize("name", sorted(PRESETS))
def test_round_trip_is_bit_exact(name):
    m = nn.init_model(PRESETS[name], 11)
    m.conv_biases += 0.1
    blob = nn.model_to_bytes(m)
    back = nn.model_from_bytes(blob)
    assert back.config == m.config
    assert nn.model_to_bytes(back) == blob


def test_round_trip_through_files(tmp_path, tiny_model):
    path = tmp_path / "m.pnet"
    nn.save_model(tiny_model, path)
    assert nn.model_digest(nn.load_model(path)) == nn.model_digest(tiny_model)
    buf = io.BytesIO()
    nn.save_model(tiny_model, buf)
    buf.seek(0)
    assert nn.model_digest(nn.load_model(buf)) == nn.model_digest(tiny_model)


def test_format_errors_are_distinct(tiny_model):
    blob = nn.model_to_bytes(tiny_model)
    with pytest.raises(nn.BadMagicError):
        nn.model_from_bytes(b"XNET" + blob[4:])
    with pytest.raises(nn.VersionMismatchError):
        nn.model_from_bytes(blob[:4] + (2).to_bytes(4, "little") + blob[8:])
    with pytest.raises(nn.TruncatedStreamError):
        nn.model_from_bytes(blob[:-3])
    with pytest.raises(nn.TruncatedStreamError):
        nn.model_from_bytes(blob[:10])
    with pytest.raises(nn.DimensionMismatchError):
        nn.model_from_bytes(blob + b"\0" * 8)
    bad_cfg = blob[:8] + (3).to_bytes(4, "little") + blob[12:]  # input smaller than kernel
    with pytest.raises(nn.DimensionMismatchError):
        nn.model_from_bytes(bad_cfg)


def test_non_finite_weights_rejected(tiny_model):
    m = tiny_model.copy()
    m.fc_weights[0, 0] = np.nan
    with pytest.raises(ValueError):
        m.check()
