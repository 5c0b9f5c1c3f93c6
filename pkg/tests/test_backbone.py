import math

import numpy as np
import pytest

from vidfill import autodiff as ad
from vidfill.autodiff import Tensor
from vidfill.backbone import (Backbone, BackboneConfig, Conditioning,
                              positional_encoding, timestep_sinusoid)


def tiny_config(**kw):
    base = dict(n_layers=2, d_model=16, n_heads=2, patch=2, caption_vocab=4,
                mode="t2v", latent_channels=4)
    base.update(kw)
    return BackboneConfig(**base)


def _latent(rng, t=2, c=4, h=8, w=8):
    return rng.uniform(-1, 1, (t, c, h, w)).astype(np.float32)


def test_config_validation():
    with pytest.raises(ValueError):
        tiny_config(n_layers=3)
    with pytest.raises(ValueError):
        tiny_config(d_model=15, n_heads=2)
    with pytest.raises(ValueError):
        tiny_config(mode="video")


def test_patchify_token_count():
    bb = Backbone(tiny_config())
    seq = bb.patchify(_latent(np.random.default_rng(0), t=2, h=8, w=8))
    assert len(seq) == 2 * 4 * 4
    assert seq.grid == (2, 4, 4)


def test_patchify_grid_bijection():
    bb = Backbone(tiny_config())
    seq = bb.patchify(_latent(np.random.default_rng(1)))
    for idx in range(len(seq)):
        assert seq.index_of(*seq.coords_of(idx)) == idx


def test_patchify_locality():
    rng = np.random.default_rng(2)
    bb = Backbone(tiny_config(positional=True))
    z1 = _latent(rng)
    z2 = z1.copy()
    z2[1, :, 2:4, 4:6] += 0.5  # one patch at (t=1, gy=1, gx=2)
    t1 = bb.patchify(z1).tokens.data
    t2 = bb.patchify(z2).tokens.data
    diff_rows = np.flatnonzero(np.abs(t1 - t2).max(axis=1))
    assert diff_rows.tolist() == [bb.patchify(z1).index_of(1, 1, 2)]


def test_unpatchify_pseudo_inverse_oracle():
    rng = np.random.default_rng(3)
    bb = Backbone(tiny_config(positional=False))
    z = _latent(rng)
    w_in = bb.patch_w.data.astype(np.float64)
    bb.out_w.data = np.linalg.pinv(w_in).astype(np.float32)
    bb.out_b.data = (-(bb.patch_b.data.astype(np.float64) @ np.linalg.pinv(w_in))).astype(np.float32)
    out = bb.unpatchify(bb.patchify(z))
    assert np.abs(out.data - z).max() < 1e-4


def test_unpatchify_shape_roundtrip():
    bb = Backbone(tiny_config())
    z = _latent(np.random.default_rng(4))
    assert bb.unpatchify(bb.patchify(z)).shape == z.shape


def test_unpatchify_zero_tokens_bias_broadcast():
    bb = Backbone(tiny_config())
    bb.out_b.data = np.arange(16, dtype=np.float32) * 0.01
    seq = bb.patchify(np.zeros((1, 4, 4, 4), dtype=np.float32))
    seq.tokens = Tensor(np.zeros_like(seq.tokens.data))
    out = bb.unpatchify(seq)
    patch_vals = out.data.reshape(1, 4, 2, 2, 2, 2).transpose(0, 2, 4, 1, 3, 5).reshape(4, 16)
    assert np.allclose(patch_vals, bb.out_b.data, atol=1e-7)


def test_timestep_sinusoid_closed_form_at_zero():
    emb = timestep_sinusoid(0, 16)
    assert np.array_equal(emb, np.concatenate([np.ones(8), np.zeros(8)]).astype(np.float32))


def test_timestep_sinusoid_closed_form_general():
    d = 12
    t = 7
    half = d // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / half)
    want = np.concatenate([np.cos(t * freqs), np.sin(t * freqs)]).astype(np.float32)
    assert np.allclose(timestep_sinusoid(t, d), want, atol=1e-7)


def test_embeddings_deterministic_and_distinct():
    bb = Backbone(tiny_config())
    a = bb.embed_caption(1).data
    b = bb.embed_caption(1).data
    c = bb.embed_caption(2).data
    assert np.array_equal(a, b)
    assert not np.array_equal(a, c)
    t1 = bb.embed_timestep(5).data
    t2 = bb.embed_timestep(5).data
    assert np.array_equal(t1, t2)


def test_embed_caption_range_check():
    bb = Backbone(tiny_config())
    with pytest.raises(ValueError):
        bb.embed_caption(99)


def test_hook_neutrality_zero_injections():
    rng = np.random.default_rng(5)
    bb = Backbone(tiny_config())
    seq = bb.patchify(_latent(rng))
    cond = Conditioning(timestep=3, caption_id=1)
    plain = bb.forward(bb.patchify(_latent(rng, t=2)), cond)  # warm distinct instance

    z = _latent(rng)
    base = bb.forward(bb.patchify(z), cond).tokens.data
    zeros = [Tensor(np.zeros((32, 16), dtype=np.float32)) for _ in range(2)]
    hooked = bb.forward(bb.patchify(z), cond, injections=zeros).tokens.data
    assert np.abs(base - hooked).max() == 0.0
    empty_kv = [(np.zeros((0, 16), dtype=np.float32), np.zeros((0, 16), dtype=np.float32))] * 2
    hooked2 = bb.forward(bb.patchify(z), cond, extra_kv=empty_kv).tokens.data
    assert np.abs(base - hooked2).max() == 0.0


def test_extra_kv_constant_values_unchanged():
    rng = np.random.default_rng(6)
    cfg = tiny_config()
    bb = Backbone(cfg)
    z = _latent(rng)
    cond = Conditioning(timestep=1, caption_id=0)

    const_row = rng.uniform(-0.5, 0.5, (1, 16)).astype(np.float32)
    # Force every V row to the same constant: zero value projection, bias = row.
    for block in bb.blocks:
        block.wv.data = np.zeros_like(block.wv.data)
        block.bv.data = const_row[0].copy()
    base = bb.forward(bb.patchify(z), cond).tokens.data
    kv = []
    for block in bb.blocks:
        k_id = rng.uniform(-1, 1, (3, 16)).astype(np.float32)
        v_id = np.tile(const_row, (3, 1))
        kv.append((k_id, v_id))
    hooked = bb.forward(bb.patchify(z), cond, extra_kv=kv).tokens.data
    assert np.abs(base - hooked).max() < 1e-5


def test_output_shape_matches_input_tokens():
    rng = np.random.default_rng(7)
    bb = Backbone(tiny_config())
    seq = bb.patchify(_latent(rng))
    out = bb.forward(seq, Conditioning(timestep=2, caption_id=3))
    assert out.tokens.shape == seq.tokens.shape
    assert out.grid == seq.grid


def test_injection_layer_locality():
    rng = np.random.default_rng(8)
    bb = Backbone(tiny_config())
    z = _latent(rng)
    cond = Conditioning(timestep=4, caption_id=2)
    inj = [None, Tensor(rng.uniform(-1, 1, (32, 16)).astype(np.float32))]
    base_hidden, hooked_hidden = [], []
    bb.forward(bb.patchify(z), cond, collect_hidden=base_hidden)
    bb.forward(bb.patchify(z), cond, injections=inj, collect_hidden=hooked_hidden)
    # layer 1 hidden identical; layer 2 hidden differs
    assert np.array_equal(base_hidden[0], hooked_hidden[0])
    assert not np.array_equal(base_hidden[1], hooked_hidden[1])


def test_gradients_flow_through_hooks():
    rng = np.random.default_rng(9)
    bb = Backbone(tiny_config())
    z = _latent(rng)
    cond = Conditioning(timestep=2, caption_id=1)
    inj = [Tensor(np.zeros((32, 16), dtype=np.float32), requires_grad=True), None]
    k_id = Tensor(rng.uniform(-1, 1, (2, 16)).astype(np.float32), requires_grad=True)
    v_id = Tensor(rng.uniform(-1, 1, (2, 16)).astype(np.float32), requires_grad=True)
    out = bb.forward(bb.patchify(z), cond, injections=inj, extra_kv=[(k_id, v_id), None])
    ad.backward(ad.tsum(ad.mul(out.tokens, out.tokens)))
    assert inj[0].grad is not None and np.abs(inj[0].grad).max() > 0
    assert k_id.grad is not None and np.abs(k_id.grad).max() > 0
    assert v_id.grad is not None and np.abs(v_id.grad).max() > 0


def test_injection_shape_validation():
    rng = np.random.default_rng(10)
    bb = Backbone(tiny_config())
    seq = bb.patchify(_latent(rng))
    cond = Conditioning(timestep=1, caption_id=0)
    with pytest.raises(ValueError):
        bb.forward(seq, cond, injections=[Tensor(np.zeros((5, 16), dtype=np.float32)), None])
    with pytest.raises(Exception):
        bad_kv = [(np.zeros((2, 12), dtype=np.float32), np.zeros((2, 12), dtype=np.float32)), None]
        bb.forward(bb.patchify(_latent(rng)), cond, extra_kv=bad_kv)


def test_i2v_requires_condition_and_t2v_rejects_it():
    rng = np.random.default_rng(11)
    bb_i = Backbone(tiny_config(mode="i2v"))
    seq = bb_i.patchify(_latent(rng))
    with pytest.raises(ValueError):
        bb_i.forward(seq, Conditioning(timestep=1, caption_id=0))
    cond_latent = _latent(rng, t=1)
    out = bb_i.forward(seq, Conditioning(timestep=1, caption_id=0,
                                         first_frame=np.zeros((3, 16, 16))),
                       cond_latent=cond_latent)
    assert out.tokens.shape == seq.tokens.shape

    bb_t = Backbone(tiny_config(mode="t2v"))
    with pytest.raises(ValueError):
        bb_t.forward(bb_t.patchify(_latent(rng)),
                     Conditioning(timestep=1, caption_id=0, first_frame=np.zeros((3, 16, 16))))


def test_positional_encoding_deterministic_distinct():
    pe = positional_encoding((2, 2, 2), 16)
    assert pe.shape == (8, 16)
    assert np.array_equal(pe, positional_encoding((2, 2, 2), 16))
    assert not np.array_equal(pe[0], pe[1])
    pe_cond = positional_encoding((1, 2, 2), 16, t_offset=-1)
    assert not np.array_equal(pe_cond[0], pe[0])


def test_forward_bit_deterministic():
    rng = np.random.default_rng(12)
    bb = Backbone(tiny_config())
    z = _latent(rng)
    cond = Conditioning(timestep=6, caption_id=1)
    a = bb.forward(bb.patchify(z), cond).tokens.data
    b = bb.forward(bb.patchify(z), cond).tokens.data
    assert np.array_equal(a, b)
