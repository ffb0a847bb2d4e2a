"""Permutation-invariance contracts of the hierarchical summaries and
their independence from padding contents."""

import numpy as np
import pytest

from mixedflow.errors import ConfigError
from mixedflow.nn.tensor import Tensor
from mixedflow.summary import SummaryConfig, SummaryNetwork


CFG = SummaryConfig(width=16, blocks=2, heads=2, dropout=0.0)


def make_net(d=2, seed=0):
    return SummaryNetwork(d, CFG, np.random.default_rng(seed), dtype=np.float64)


def random_batch(seed=1, b=2, m=4, n=6, d=2, phantom=False):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(b, m, n, d))
    Z = X.copy()
    y = rng.normal(size=(b, m, n))
    mask = rng.random((b, m, n)) < 0.8
    mask[:, :, 0] = True  # no empty groups
    group_mask = np.ones((b, m), dtype=bool)
    if phantom:
        group_mask[:, -1] = False
        mask[:, -1] = False
    X *= mask[..., None]
    Z *= mask[..., None]
    y *= mask
    return X, Z, y, mask, group_mask


class TestEmbedding:
    def test_zero_row_embeds_to_bias(self):
        net = make_net()
        net.embed.b.data = np.random.default_rng(99).normal(size=CFG.width)
        X, Z, y, mask, gm = random_batch()
        emb = net.embed_rows(np.zeros_like(X), np.zeros_like(Z), np.zeros_like(y), mask)
        expected = np.tile(net.embed.b.data, (int(mask.sum()), 1))
        np.testing.assert_allclose(emb.data[mask], expected, atol=1e-12)

    def test_padded_rows_embed_to_zero(self):
        net = make_net()
        X, Z, y, mask, gm = random_batch()
        emb = net.embed_rows(X, Z, y, mask)
        np.testing.assert_array_equal(emb.data[~mask], 0.0)

    def test_wrong_d_rejected(self):
        net = make_net(d=2)
        X, Z, y, mask, gm = random_batch(d=3)
        with pytest.raises(ConfigError):
            net.embed_rows(X, Z, y, mask)


class TestLocalSummaries:
    def test_within_group_permutation_invariance(self):
        net = make_net()
        X, Z, y, mask, gm = random_batch(seed=2)
        base = net(X, Z, y, mask, gm)[0].data
        rng = np.random.default_rng(3)
        for _ in range(5):
            Xp, Zp, yp, maskp = X.copy(), Z.copy(), y.copy(), mask.copy()
            for b in range(X.shape[0]):
                for i in range(X.shape[1]):
                    perm = rng.permutation(X.shape[2])
                    Xp[b, i] = Xp[b, i][perm]
                    Zp[b, i] = Zp[b, i][perm]
                    yp[b, i] = yp[b, i][perm]
                    maskp[b, i] = maskp[b, i][perm]
            out = net(Xp, Zp, yp, maskp, gm)[0].data
            np.testing.assert_allclose(out, base, atol=1e-5)

    def test_single_observation_group(self):
        net = make_net()
        rng = np.random.default_rng(4)
        X = rng.normal(size=(1, 1, 1, 2))
        emb = net.embed_rows(X, X.copy(), rng.normal(size=(1, 1, 1)), np.ones((1, 1, 1), bool))
        s = net.summarize_local(emb, np.ones((1, 1, 1), bool))
        enc = net.local_encoder(emb.reshape(1, 1, CFG.width), np.ones((1, 1), bool))
        np.testing.assert_allclose(s.data[0, 0], enc.data[0, 0], atol=1e-12)

    def test_duplicating_observations_keeps_mean(self):
        net = make_net()
        rng = np.random.default_rng(5)
        n = 4
        X = rng.normal(size=(1, 1, n, 2))
        y = rng.normal(size=(1, 1, n))
        mask = np.ones((1, 1, n), bool)
        s1 = net(X, X.copy(), y, mask)[0].data
        X2 = np.concatenate([X, X], axis=2)
        y2 = np.concatenate([y, y], axis=2)
        mask2 = np.ones((1, 1, 2 * n), bool)
        s2 = net(X2, X2.copy(), y2, mask2)[0].data
        np.testing.assert_allclose(s2, s1, atol=1e-5)

    def test_empty_group_rejected_without_group_mask(self):
        net = make_net()
        X, Z, y, mask, gm = random_batch(seed=6)
        mask[0, 1] = False
        emb = net.embed_rows(X, Z, y, mask)
        with pytest.raises(ConfigError):
            net.summarize_local(emb, mask)


class TestGlobalSummary:
    def test_group_permutation_invariance(self):
        net = make_net()
        X, Z, y, mask, gm = random_batch(seed=7)
        base = net(X, Z, y, mask, gm)[1].data
        rng = np.random.default_rng(8)
        for _ in range(5):
            perm = rng.permutation(X.shape[1])
            out = net(X[:, perm], Z[:, perm], y[:, perm], mask[:, perm], gm)[1].data
            np.testing.assert_allclose(out, base, atol=1e-5)

    def test_single_group(self):
        net = make_net()
        rng = np.random.default_rng(9)
        s_local = Tensor(rng.normal(size=(1, 1, CFG.width)))
        out = net.summarize_global(s_local)
        enc = net.global_encoder(s_local, np.ones((1, 1), bool))
        np.testing.assert_allclose(out.data[0], enc.data[0, 0], atol=1e-12)

    def test_phantom_groups_do_not_matter(self):
        net = make_net()
        X, Z, y, mask, gm = random_batch(seed=10, phantom=True)
        s_local, s_global = net(X, Z, y, mask, gm)
        # rewrite phantom-group contents wildly
        X2, Z2, y2 = X.copy(), Z.copy(), y.copy()
        X2[:, -1] = 37.0
        Z2[:, -1] = -11.0
        y2[:, -1] = 5.0
        s_local2, s_global2 = net(X2, Z2, y2, mask, gm)
        np.testing.assert_allclose(s_global2.data, s_global.data, atol=1e-10)
        np.testing.assert_allclose(s_local2.data[:, :-1], s_local.data[:, :-1], atol=1e-10)

    def test_pad_content_randomization(self):
        net = make_net()
        X, Z, y, mask, gm = random_batch(seed=11)
        base_local, base_global = net(X, Z, y, mask, gm)
        rng = np.random.default_rng(12)
        X2, Z2, y2 = X.copy(), Z.copy(), y.copy()
        X2[~mask] = rng.normal(size=(~mask).sum() * 2).reshape(-1, 2) * 100
        Z2[~mask] = rng.normal(size=(~mask).sum() * 2).reshape(-1, 2) * 100
        y2[~mask] = rng.normal(size=(~mask).sum()) * 100
        out_local, out_global = net(X2, Z2, y2, mask, gm)
        np.testing.assert_allclose(out_local.data, base_local.data, atol=1e-10)
        np.testing.assert_allclose(out_global.data, base_global.data, atol=1e-10)
