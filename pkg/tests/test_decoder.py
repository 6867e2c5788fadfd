import numpy as np
import pytest

from gsavatar.core import GaussianModel, ResidualSet, ValidationError, apply_residuals
from gsavatar.decoder import (
    DecoderParams,
    decode,
    decode_all,
    decode_backward,
    decode_forward,
    init_embeddings,
    load_decoder,
    save_decoder,
    DecoderArtifacts,
    DecoderTrainConfig,
)

from helpers import random_model


def test_init_embeddings_shape_and_center():
    rng = np.random.default_rng(0)
    model = random_model(rng, k=9)
    emb = init_embeddings(model, 48, 8)
    assert emb.shape == (9, 48)
    # a gaussian at the bbox center has mu_hat = 0: sin blocks 0, cos blocks 1
    center = 0.5 * (model.positions.min(axis=0) + model.positions.max(axis=0))
    positions = model.positions.copy()
    positions[4] = center
    model2 = GaussianModel(positions, model.scales, model.rotations,
                           model.opacities, model.sh)
    emb2 = init_embeddings(model2, 48, 8)
    blocks = emb2[4].reshape(16, 3)  # [sin_j, cos_j] pairs
    assert np.allclose(blocks[0::2], 0.0, atol=1e-12)
    assert np.allclose(blocks[1::2], 1.0, atol=1e-12)


def test_init_embeddings_identical_positions():
    rng = np.random.default_rng(1)
    model = random_model(rng, k=4)
    positions = model.positions.copy()
    positions[2] = positions[1]
    model = GaussianModel(positions, model.scales, model.rotations,
                          model.opacities, model.sh)
    emb = init_embeddings(model)
    assert np.array_equal(emb[1], emb[2])


def test_init_embeddings_spot_value():
    # x_hat = 0.25 at frequency j=1: sin(2 pi 0.25) = 1
    positions = np.zeros((3, 3))
    positions[0] = [-1.0, 0.0, 0.0]
    positions[1] = [1.0, 0.0, 0.0]
    positions[2] = [0.25, 0.0, 0.0]
    model = GaussianModel(positions, np.full((3, 3), 0.1),
                          [[1, 0, 0, 0]] * 3, [0.5] * 3, np.zeros((3, 3, 16)))
    emb = init_embeddings(model)
    # block layout: [sin_0(3), cos_0(3), sin_1(3), cos_1(3), ...]
    sin1_x = emb[2, 6]
    assert np.isclose(sin1_x, 1.0, atol=1e-12)


def test_zero_decoder_reproduces_template():
    rng = np.random.default_rng(2)
    template = random_model(rng, k=6)
    params = DecoderParams.create(seed=0)
    emb = init_embeddings(template)
    code = rng.standard_normal(64)
    residuals = decode_all(params, code, emb)
    assert np.all(residuals.as_matrix() == 0.0)
    out = apply_residuals(template, residuals)
    assert np.allclose(out.positions, template.positions)
    assert np.allclose(out.opacities, template.opacities, atol=1e-12)


def test_decode_single_matches_batch():
    rng = np.random.default_rng(3)
    template = random_model(rng, k=5)
    params = DecoderParams.create(seed=1)
    # give the head nonzero weights so outputs are nontrivial
    params.w3[:] = rng.normal(scale=0.05, size=params.w3.shape)
    params.b3[:] = rng.normal(scale=0.05, size=params.b3.shape)
    emb = init_embeddings(template)
    code = rng.standard_normal(64)
    batch = decode_all(params, code, emb).as_matrix()
    for k in range(5):
        single = decode(params, code, emb[k])
        assert np.allclose(single, batch[k])


def test_tiny_decoder_hand_evaluated():
    # 1 hidden unit per layer, hand-computed forward pass
    params = DecoderParams(
        w1=np.full((3, 1), 0.5), b1=np.array([0.1]),
        w2=np.array([[2.0]]), b2=np.array([-0.2]),
        w3=np.full((1, 59), 1.5), b3=np.full(59, 0.25),
    )
    code = np.array([0.2, -0.1])
    emb = np.array([[0.3]])
    # z1 = 0.5*(0.2 - 0.1 + 0.3) + 0.1 = 0.3; a1 = 0.3
    # z2 = 2*0.3 - 0.2 = 0.4; a2 = 0.4
    # out = 1.5*0.4 + 0.25 = 0.85
    out, _ = decode_forward(params, code, emb)
    assert np.allclose(out, 0.85)


def test_decoder_dimension_mismatch():
    params = DecoderParams.create()
    with pytest.raises(ValidationError):
        decode_forward(params, np.zeros(10), np.zeros((4, 48)))


def test_decode_backward_matches_fd():
    rng = np.random.default_rng(4)
    params = DecoderParams.create(code_dim=8, embed_dim=6, hidden=16, seed=2)
    params.w3[:] = rng.normal(scale=0.1, size=params.w3.shape)
    code = rng.standard_normal(8)
    emb = rng.standard_normal((3, 6))
    weights = rng.normal(size=(3, 59))

    def loss(p, c, e):
        out, _ = decode_forward(p, c, e)
        return float(np.sum(weights * out))

    out, cache = decode_forward(params, code, emb)
    g_params, g_code, g_embed = decode_backward(params, cache, weights)

    h = 1e-6
    for i in range(8):
        cp, cm = code.copy(), code.copy()
        cp[i] += h
        cm[i] -= h
        fd = (loss(params, cp, emb) - loss(params, cm, emb)) / (2 * h)
        assert abs(fd - g_code[i]) < 1e-6 * max(1.0, abs(fd))
    for (i, j) in [(0, 0), (3, 5), (7, 11)]:
        pp, pm = params.copy(), params.copy()
        pp.w1[i, j] += h
        pm.w1[i, j] -= h
        fd = (loss(pp, code, emb) - loss(pm, code, emb)) / (2 * h)
        assert abs(fd - g_params.w1[i, j]) < 1e-6 * max(1.0, abs(fd))
    ep, em = emb.copy(), emb.copy()
    ep[1, 2] += h
    em[1, 2] -= h
    fd = (loss(params, code, ep) - loss(params, code, em)) / (2 * h)
    assert abs(fd - g_embed[1, 2]) < 1e-6 * max(1.0, abs(fd))


def test_decoder_artifact_roundtrip(tmp_path):
    rng = np.random.default_rng(5)
    template = random_model(rng, k=4)
    params = DecoderParams.create(seed=3)
    params.w3[:] = rng.normal(scale=0.01, size=params.w3.shape)
    emb = init_embeddings(template)
    artifacts = DecoderArtifacts(params, {"s0": rng.standard_normal(64)},
                                 emb, template, [1.0, 0.5], DecoderTrainConfig())
    path = tmp_path / "decoder.zip"
    save_decoder(artifacts, path)
    loaded = load_decoder(path, template)
    for a, b in zip(loaded.params.arrays(), params.arrays()):
        assert np.array_equal(a, b)
    assert np.array_equal(loaded.embeddings, emb)
    assert loaded.loss_trace == [1.0, 0.5]
    # template mismatch rejected
    other = random_model(rng, k=4)
    with pytest.raises(ValidationError):
        load_decoder(path, other)
