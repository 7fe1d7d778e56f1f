"""Dual-encoder forward pass, init determinism, parameter plumbing."""

import numpy as np
import pytest

from proxylab.errors import ConfigError, ContractError, ShapeError
from proxylab.models import EncoderSpec, init_model

from conftest import NUM_CLASSES, build_proxy, build_target


def test_encoder_spec_validation():
    with pytest.raises(ConfigError):
        EncoderSpec(input_dim=0, hidden_dims=(4,), embed_dim=2)
    with pytest.raises(ConfigError):
        EncoderSpec(input_dim=4, hidden_dims=(-1,), embed_dim=2)
    with pytest.raises(ConfigError):
        EncoderSpec(input_dim=4, hidden_dims=(4,), embed_dim=2, activation="gelu")


def test_spec_layer_dims_and_param_count():
    spec = EncoderSpec(input_dim=5, hidden_dims=(3, 7), embed_dim=2)
    assert spec.layer_dims() == [(5, 3), (3, 7), (7, 2)]
    assert spec.param_count() == 5 * 3 + 3 + 3 * 7 + 7 + 7 * 2 + 2


def test_init_determinism():
    a = build_target(seed=11)
    b = build_target(seed=11)
    for pa, pb in zip(a.parameters(), b.parameters()):
        assert np.array_equal(pa.data, pb.data)
    c = build_target(seed=12)
    assert any(not np.array_equal(pa.data, pc.data)
               for pa, pc in zip(a.parameters(), c.parameters()))


def test_init_seed_type_checked():
    spec = EncoderSpec(input_dim=4, hidden_dims=(3,), embed_dim=2)
    txt = EncoderSpec(input_dim=2, hidden_dims=(3,), embed_dim=2)
    with pytest.raises(ContractError):
        init_model(spec, txt, 2, seed=1.5)


def test_model_invariant_checks():
    img = EncoderSpec(input_dim=4, hidden_dims=(3,), embed_dim=2)
    txt_bad_embed = EncoderSpec(input_dim=2, hidden_dims=(3,), embed_dim=5)
    with pytest.raises(ConfigError):
        init_model(img, txt_bad_embed, 2, seed=0)
    # text tower consumes one-hot class tokens, so its input is the class count
    txt_bad_input = EncoderSpec(input_dim=3, hidden_dims=(3,), embed_dim=2)
    with pytest.raises(ConfigError):
        init_model(img, txt_bad_input, 2, seed=0)
    txt = EncoderSpec(input_dim=2, hidden_dims=(3,), embed_dim=2)
    with pytest.raises(ConfigError):
        init_model(img, txt, 2, seed=0, temperature=0.0)


def test_embeddings_are_unit_rows(target, rng):
    x = rng.uniform(0, 1, size=(9, 16))
    img = target.encode_image(x)
    assert np.allclose(np.linalg.norm(img.data, axis=1), 1.0, atol=1e-12)
    txt = target.encode_text()
    assert txt.shape == (NUM_CLASSES, 6)
    assert np.allclose(np.linalg.norm(txt.data, axis=1), 1.0, atol=1e-12)


def test_similarity_logits_match_manual_forward(target, rng):
    x = rng.uniform(0, 1, size=(5, 16))

    def mlp(h, params, act):
        n = len(params) // 2
        for i in range(n):
            w, b = params[2 * i].data, params[2 * i + 1].data
            h = h @ w + b
            if i < n - 1:
                h = np.maximum(h, 0) if act == "relu" else np.tanh(h)
        return h / np.linalg.norm(h, axis=1, keepdims=True)

    img = mlp(x, target.theta, target.image_spec.activation)
    txt = mlp(np.eye(NUM_CLASSES), target.phi, target.text_spec.activation)
    want = target.temperature * (img @ txt.T)
    got = target.similarity_logits(x).data
    assert np.allclose(got, want, atol=1e-10)
    # cosine times temperature is bounded by the temperature
    assert np.abs(got).max() <= target.temperature + 1e-9


def test_predict_matches_argmax(target, rng):
    x = rng.uniform(0, 1, size=(20, 16))
    logits = target.similarity_logits(x).data
    assert np.array_equal(target.predict(x), logits.argmax(axis=1))


def test_clone_is_independent(target, rng):
    c = target.clone()
    before = [p.data.copy() for p in target.parameters()]
    c.theta[0].data[:] = 0.0
    for p, b in zip(target.parameters(), before):
        assert np.array_equal(p.data, b)


def test_param_arrays_round_trip(target):
    arrays = target.param_arrays()
    other = build_target(seed=99)
    other.set_param_arrays(arrays)
    for p, q in zip(target.parameters(), other.parameters()):
        assert np.array_equal(p.data, q.data)


def test_set_param_arrays_shape_errors(target):
    arrays = target.param_arrays()
    with pytest.raises(ShapeError):
        target.set_param_arrays(arrays[:-1])
    bad = [a.copy() for a in arrays]
    bad[0] = bad[0][:, :1]
    with pytest.raises(ShapeError):
        target.set_param_arrays(bad)


def test_param_names_align_with_parameters(target):
    names = target.param_names()
    assert len(names) == len(target.parameters())
    assert names[0] == "theta.0.W" and names[1] == "theta.0.b"
    assert names[-1].startswith("phi.")


def test_input_dim_mismatch_rejected(target, rng):
    from proxylab.errors import ShapeError as SE
    with pytest.raises((SE, ContractError)):
        target.encode_image(rng.uniform(0, 1, size=(3, 11)))


def test_architectures_differ(target, proxy):
    # the two stand-ins must not be the same network
    assert target.image_spec.hidden_dims != proxy.image_spec.hidden_dims
    assert target.image_spec.activation != proxy.image_spec.activation
