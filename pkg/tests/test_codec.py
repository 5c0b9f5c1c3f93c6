import numpy as np
import pytest

from vidfill.codec import (CHANNEL_LIFT, LatentClip, LatentCodec, MaskClip,
                           VideoClip, downsample_mask, make_masked_video)

from oracles import direct_cubic_downsample


def _random_video(rng, t=2, h=8, w=8):
    return VideoClip(rng.uniform(0, 1, (t, 3, h, w)).astype(np.float32))


def test_lift_is_orthonormal():
    assert np.allclose(CHANNEL_LIFT.T @ CHANNEL_LIFT, np.eye(3), atol=1e-12)


def test_constant_gray_roundtrip_exact():
    codec = LatentCodec()
    v = VideoClip(np.full((2, 3, 8, 8), 0.5, dtype=np.float32))
    z = codec.encode(v)
    assert np.allclose(z.data, 0.0, atol=1e-7)
    assert np.array_equal(codec.decode(z).frames, v.frames)


def test_blockwise_constant_roundtrip_exact():
    rng = np.random.default_rng(0)
    codec = LatentCodec()
    coarse = rng.uniform(0, 1, (2, 3, 4, 4)).astype(np.float32)
    v = VideoClip(coarse.repeat(2, axis=2).repeat(2, axis=3))
    out = codec.decode(codec.encode(v))
    assert np.abs(out.frames - v.frames).max() < 1e-6


def test_zero_video_latent_is_lift_of_offset():
    codec = LatentCodec()
    z = codec.encode(VideoClip(np.zeros((1, 3, 4, 4), dtype=np.float32)))
    expected = (CHANNEL_LIFT / np.sqrt(3)) @ np.array([-1.0, -1.0, -1.0])
    assert np.allclose(z.data[0, :, 0, 0], expected, atol=1e-6)
    assert np.allclose(z.data, expected[None, :, None, None], atol=1e-6)


def test_roundtrip_equals_block_mean():
    rng = np.random.default_rng(1)
    codec = LatentCodec()
    v = _random_video(rng)
    out = codec.decode(codec.encode(v))
    block_mean = v.frames.reshape(2, 3, 4, 2, 4, 2).mean(axis=(3, 5))
    expected = block_mean.repeat(2, axis=2).repeat(2, axis=3)
    assert np.abs(out.frames - expected).max() < 1e-6


def test_encode_rejects_indivisible_extents():
    codec = LatentCodec()
    with pytest.raises(ValueError):
        codec.encode(VideoClip(np.zeros((1, 3, 5, 8), dtype=np.float32)))


def test_encode_values_within_unit_range():
    rng = np.random.default_rng(2)
    z = LatentCodec().encode(_random_video(rng))
    assert z.data.min() >= -1.0 and z.data.max() <= 1.0


def test_all_negative_one_latent_decodes_to_black():
    codec = LatentCodec()
    z = LatentClip(np.full((1, 4, 4, 4), -1.0, dtype=np.float32))
    assert np.array_equal(codec.decode(z).frames, np.zeros((1, 3, 8, 8), dtype=np.float32))


def test_decode_shape_contract():
    codec = LatentCodec()
    out = codec.decode(LatentClip(np.zeros((3, 4, 5, 6), dtype=np.float32)))
    assert out.frames.shape == (3, 3, 10, 12)


def test_codec_idempotence_on_latent_image():
    rng = np.random.default_rng(3)
    codec = LatentCodec()
    z = codec.encode(_random_video(rng))
    z2 = codec.encode(codec.decode(z))
    assert np.abs(z2.data - z.data).max() < 1e-6


def test_downsample_mask_constant_masks():
    ones = MaskClip(np.ones((2, 1, 8, 8), dtype=np.uint8))
    zeros = MaskClip(np.zeros((2, 1, 8, 8), dtype=np.uint8))
    assert np.allclose(downsample_mask(ones, (4, 4)), 1.0, atol=1e-6)
    assert np.allclose(downsample_mask(zeros, (4, 4)), 0.0)


def test_downsample_mask_matches_direct_cubic_oracle():
    m = np.zeros((1, 1, 8, 8), dtype=np.uint8)
    m[:, :, :, :4] = 1
    got = downsample_mask(MaskClip(m), (4, 4))[0, 0]
    want = direct_cubic_downsample(m[0, 0].astype(np.float64), 4, 4)
    assert np.abs(got - want).max() < 1e-6


def test_downsample_mask_random_vs_oracle():
    rng = np.random.default_rng(4)
    m = (rng.uniform(0, 1, (1, 1, 12, 10)) > 0.5).astype(np.uint8)
    got = downsample_mask(MaskClip(m), (5, 7))[0, 0]
    want = direct_cubic_downsample(m[0, 0].astype(np.float64), 5, 7)
    assert np.abs(got - want).max() < 1e-6


def test_downsample_mask_output_in_unit_interval():
    rng = np.random.default_rng(5)
    m = (rng.uniform(0, 1, (2, 1, 16, 16)) > 0.3).astype(np.uint8)
    out = downsample_mask(MaskClip(m), (8, 8))
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_downsample_mask_rejects_zero_extent():
    with pytest.raises(ValueError):
        downsample_mask(MaskClip(np.ones((1, 1, 8, 8), dtype=np.uint8)), (0, 4))


def test_make_masked_video_identity_when_mask_empty():
    rng = np.random.default_rng(6)
    v = _random_video(rng)
    out = make_masked_video(v, MaskClip(np.zeros((2, 1, 8, 8), dtype=np.uint8)))
    assert np.array_equal(out.frames, v.frames)


def test_make_masked_video_full_mask_is_gray():
    rng = np.random.default_rng(7)
    v = _random_video(rng)
    out = make_masked_video(v, MaskClip(np.ones((2, 1, 8, 8), dtype=np.uint8)))
    assert np.array_equal(out.frames, np.full_like(v.frames, 0.5))


def test_make_masked_video_checker_selection():
    rng = np.random.default_rng(8)
    v = _random_video(rng)
    checker = np.indices((8, 8)).sum(axis=0) % 2
    m = MaskClip(np.broadcast_to(checker[None, None], (2, 1, 8, 8)).astype(np.uint8).copy())
    out = make_masked_video(v, m)
    for t in range(2):
        for y in range(8):
            for x in range(8):
                if checker[y, x]:
                    assert (out.frames[t, :, y, x] == 0.5).all()
                else:
                    assert np.array_equal(out.frames[t, :, y, x], v.frames[t, :, y, x])


def test_make_masked_video_extent_mismatch():
    rng = np.random.default_rng(9)
    with pytest.raises(ValueError):
        make_masked_video(_random_video(rng), MaskClip(np.zeros((2, 1, 4, 4), dtype=np.uint8)))


def test_clip_validation():
    with pytest.raises(ValueError):
        VideoClip(np.full((1, 3, 2, 2), 1.5, dtype=np.float32))
    with pytest.raises(ValueError):
        MaskClip(np.full((1, 1, 2, 2), 2, dtype=np.uint8))
