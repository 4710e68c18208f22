import numpy as np
import pytest

from rgbxtrack.backbone import Backbone, encode, join_features, split_features
from rgbxtrack.config import ModelConfig
from rgbxtrack.errors import UsageError
from rgbxtrack.numcore import Tensor, layer_norm
from rgbxtrack.scm import CompactFeature


def feature(cfg, rng, n_q=None):
    n_q = cfg.n_q if n_q is None else n_q
    tokens = Tensor(rng.normal(size=(2 * n_q + cfg.n_zs, cfg.d)))
    return CompactFeature(tokens, n_q, cfg.n_z, cfg.n_s, cfg.grid)


def test_shape_preserved(rng, cfg):
    f = feature(cfg, rng)
    out = Backbone(cfg, rng)(f)
    assert out.tokens.shape == f.tokens.shape


def test_zero_projections_reduce_to_final_norm(rng, cfg):
    bb = Backbone(cfg, rng)
    for blk in bb.blocks:
        blk.attn.out.zero_()
        blk.ffn.fc2.zero_()
    f = feature(cfg, rng)
    out = bb(f).tokens.data
    d = cfg.d
    want = layer_norm(f.tokens, Tensor(np.ones(d)), Tensor(np.zeros(d))).data
    np.testing.assert_allclose(out, want, atol=1e-12)


def test_attention_rows_sum_to_one(rng, cfg):
    weights = []
    encode(feature(cfg, rng), Backbone(cfg, rng), weights)
    assert len(weights) == cfg.n_layers
    for w in weights:
        assert w.shape == (cfg.n_heads, 32, 32)
        np.testing.assert_allclose(w.sum(axis=-1), 1.0, atol=1e-12)
        assert np.all(w > 0)


def test_split_layout(rng, cfg):
    f = feature(cfg, rng)
    q_r, q_x, z_c, s_c = split_features(f)
    t = f.tokens.data
    np.testing.assert_array_equal(s_c.data, t[16:32])
    np.testing.assert_array_equal(z_c.data, t[8:16])
    np.testing.assert_array_equal(join_features(q_r, q_x, z_c, s_c).data, t)


def test_split_without_queries(rng, cfg):
    f = feature(cfg, rng, n_q=0)
    q_r, q_x, z_c, s_c = split_features(f)
    assert q_r.shape == (0, cfg.d) and q_x.shape == (0, cfg.d)
    np.testing.assert_array_equal(z_c.data, f.tokens.data[:8])


def test_split_detects_corruption(rng, cfg):
    f = feature(cfg, rng)
    f.n_q = 3
    with pytest.raises(UsageError):
        split_features(f)


def test_search_permutation_equivariance(rng, cfg):
    bb = Backbone(cfg, rng)
    f = feature(cfg, rng)
    perm = np.arange(32)
    perm[16:] = 16 + rng.permutation(16)
    out = bb(f).tokens.data
    shuffled = f.with_tokens(Tensor(f.tokens.data[perm]))
    np.testing.assert_allclose(bb(shuffled).tokens.data, out[perm], atol=1e-10)
