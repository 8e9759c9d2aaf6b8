import numpy as np
import pytest

from vsalign.config import ModelConfig
from vsalign.encoder import encode_pyramid, init_encoder
from vsalign.tensor import ShapeError


@pytest.fixture(scope="module")
def params():
    return init_encoder(ModelConfig(dtype="float64"), np.random.default_rng(0))


def test_desk_strides(params):
    feats = encode_pyramid(np.random.default_rng(1).uniform(size=(2, 3, 64, 96)), params)
    assert feats.p3.shape == (2, 32, 8, 12)
    assert feats.p4.shape == (2, 32, 4, 6)
    assert feats.p5.shape == (2, 32, 2, 3)


def test_full_scale_strides(params):
    feats = encode_pyramid(np.full((1, 3, 256, 320), 0.5), params)
    assert feats.p3.shape[2:] == (32, 40)
    assert feats.p4.shape[2:] == (16, 20)
    assert feats.p5.shape[2:] == (8, 10)


@pytest.mark.parametrize("hw", [(64, 80), (48, 96), (65, 96)])
def test_extent_not_multiple_of_32(params, hw):
    with pytest.raises(ShapeError, match="multiple of 32"):
        encode_pyramid(np.zeros((1, 3) + hw), params)


def test_pixel_range_checked(params):
    with pytest.raises(ValueError, match=r"\[0, 1\]"):
        encode_pyramid(np.full((1, 3, 32, 32), 1.5), params)


def test_siamese_weight_sharing(params):
    frame = np.random.default_rng(2).uniform(size=(1, 3, 64, 96))
    feats = encode_pyramid(np.concatenate([frame, frame]), params)
    for lv in ("p3", "p4", "p5"):
        a = feats.level(lv).data
        np.testing.assert_array_equal(a[0], a[1])


def test_batch_independence(params):
    # each frame's features do not depend on the other frames in the batch
    rng = np.random.default_rng(3)
    frames = rng.uniform(size=(3, 3, 32, 64))
    together = encode_pyramid(frames, params)
    alone = encode_pyramid(frames[1:2], params)
    np.testing.assert_allclose(together.p3.data[1], alone.p3.data[0], rtol=0, atol=1e-12)


def test_deterministic_init():
    cfg = ModelConfig()
    a = init_encoder(cfg, np.random.default_rng(5))
    b = init_encoder(cfg, np.random.default_rng(5))
    np.testing.assert_array_equal(a.stages[0][0].w.data, b.stages[0][0].w.data)
    assert a.stages[0][0].w.dtype == np.float32
