"""Tests for core.nnet: shapes, parameter counts, pooling and weight files."""

import numpy as np
import pytest
import torch

from core.config import NetworkConfig
from core.errors import InputError
from core.nnet import (
    AttentiveStatsPool,
    aggregate_embeddings,
    attentive_stats_pool,
    build_network,
    count_parameters,
    embed,
    load_weights,
    pooled_width,
    save_weights,
    stage_shapes,
    stats_pool,
    trunk_forward,
    weighted_stats,
)


def analytic_parameter_count(D, M, pooling="SP", K=1, hidden=128):
    """Per-layer sum for the half-channel ResNet-34 and its heads."""
    channels = [32, 64, 128, 256]
    blocks = [3, 4, 6, 3]
    total = 9 * 1 * 32 + 2 * 32
    cin = 32
    for c, n in zip(channels, blocks):
        for _ in range(n):
            total += 9 * cin * c + 2 * c + 9 * c * c + 2 * c
            if cin != c:
                total += cin * c + 2 * c
            cin = c
    for c in [256, 128, 64][:K]:
        total += 64 * D * M + M
        if pooling == "ASP":
            total += c * hidden + hidden + hidden + 1
    if K > 1:
        total += K * M
    return total


# ---------------------------------------------------------------------------
# Construction
# ---------------------------------------------------------------------------


class TestBuildNetwork:
    def test_parameter_count_matches_analytic_sum(self):
        net = build_network(NetworkConfig(feat_dim=40, embed_dim=256), init_seed=0)
        assert count_parameters(net) == analytic_parameter_count(40, 256) == 5978976
        assert 5.0e6 <= count_parameters(net) <= 7.0e6

    @pytest.mark.parametrize("name", ["H/SP-160", "H/ASP-512", "H2/SP-256", "H3/SP-256", "H3/ASP-256"])
    def test_variant_counts(self, name):
        cfg = NetworkConfig.from_system_name(name, feat_dim=40)
        net = build_network(cfg, init_seed=0, dtype=torch.float32)
        expected = analytic_parameter_count(40, cfg.embed_dim, cfg.pooling, cfg.aggregate_stages)
        assert count_parameters(net) == expected

    def test_channels_per_stage(self):
        net = build_network(NetworkConfig(feat_dim=8, embed_dim=16), init_seed=0)
        widths = [stage[0].conv1.out_channels for stage in net.trunk.stages]
        assert widths == [32, 64, 128, 256]
        assert [len(stage) for stage in net.trunk.stages] == [3, 4, 6, 3]
        assert net.trunk.conv1.stride == (1, 1)

    def test_same_seed_same_weights(self, small_net_cfg):
        a = build_network(small_net_cfg, init_seed=3).state_dict()
        b = build_network(small_net_cfg, init_seed=3).state_dict()
        assert all(torch.equal(a[k], b[k]) for k in a)

    def test_different_seed_different_weights(self, small_net_cfg):
        a = build_network(small_net_cfg, init_seed=3).state_dict()
        b = build_network(small_net_cfg, init_seed=4).state_dict()
        assert not torch.equal(a["trunk.conv1.weight"], b["trunk.conv1.weight"])

    def test_invalid_feature_dimension(self):
        with pytest.raises(InputError):
            NetworkConfig(feat_dim=36)


# ---------------------------------------------------------------------------
# Trunk shapes
# ---------------------------------------------------------------------------


class TestTrunkShapes:
    @pytest.mark.parametrize("D", [40, 64])
    @pytest.mark.parametrize("L", [100, 198, 200])
    def test_stage_shapes(self, D, L):
        cfg = NetworkConfig(feat_dim=D, embed_dim=256)
        net = build_network(cfg, init_seed=1, dtype=torch.float32)
        feat = np.random.default_rng(L).normal(size=(L, D)).astype(np.float32)
        outputs = trunk_forward(net, feat)
        expected = [
            (32, D, L),
            (32, D, L),
            (64, D // 2, -(-L // 2)),
            (128, D // 4, -(-L // 4)),
            (256, D // 8, -(-L // 8)),
        ]
        assert [tuple(o.shape) for o in outputs] == expected == stage_shapes(cfg, L)
        assert pooled_width(cfg) == 64 * D
        assert stats_pool(outputs[-1]).shape == (64 * D,)

    def test_res4_for_forty_by_two_hundred(self):
        assert stage_shapes(NetworkConfig(feat_dim=40), 200)[-1] == (256, 5, 25)

    def test_zero_input_gives_zero_activations(self, small_net_cfg):
        net = build_network(small_net_cfg, init_seed=2)
        for out in trunk_forward(net, np.zeros((40, 8))):
            assert torch.isfinite(out).all()
            assert torch.count_nonzero(out) == 0

    def test_doubling_length_doubles_time_axis(self, small_net_cfg):
        net = build_network(small_net_cfg, init_seed=2)
        short = trunk_forward(net, np.random.default_rng(0).normal(size=(96, 8)))
        long = trunk_forward(net, np.random.default_rng(0).normal(size=(192, 8)))
        for a, b in zip(short, long):
            assert a.shape[:2] == b.shape[:2]
            assert b.shape[2] == 2 * a.shape[2]

    def test_too_few_frames(self, small_net_cfg):
        net = build_network(small_net_cfg, init_seed=2)
        with pytest.raises(InputError):
            trunk_forward(net, np.zeros((7, 8)))


# ---------------------------------------------------------------------------
# Pooling
# ---------------------------------------------------------------------------


class TestStatsPool:
    def test_constant_over_time_has_zero_std(self):
        x = torch.ones(4, 3, 10, dtype=torch.float64) * torch.arange(12, dtype=torch.float64).reshape(4, 3, 1)
        pooled = stats_pool(x)
        assert torch.count_nonzero(pooled[12:]) == 0

    def test_single_frame_has_zero_std(self):
        pooled = stats_pool(torch.randn(4, 3, 1, dtype=torch.float64))
        assert torch.count_nonzero(pooled[12:]) == 0

    def test_matches_two_pass_oracle(self, rng):
        x = rng.normal(size=(5, 3, 17))
        means, stds = [], []
        for c in range(5):
            for f in range(3):
                m = sum(x[c, f]) / 17
                means.append(m)
                stds.append(np.sqrt(sum((v - m) ** 2 for v in x[c, f]) / 17))
        pooled = stats_pool(torch.from_numpy(x)).numpy()
        np.testing.assert_allclose(pooled, np.array(means + stds), atol=1e-9)


class TestAttentiveStatsPool:
    def _pool(self, channels=5, hidden=7):
        torch.manual_seed(0)
        return AttentiveStatsPool(channels, hidden).double()

    def test_uniform_attention_equals_stats_pool(self, rng):
        pool = self._pool()
        with torch.no_grad():
            pool.linear2.weight.zero_()
            pool.linear2.bias.zero_()
        x = torch.from_numpy(rng.normal(size=(5, 3, 12)))
        torch.testing.assert_close(attentive_stats_pool(x, pool), stats_pool(x), atol=1e-12, rtol=0)

    def test_weights_sum_to_one(self, rng):
        pool = self._pool()
        x = torch.from_numpy(rng.normal(size=(2, 5, 3, 12)))
        weights = pool.attention(x)
        assert weights.shape == (2, 12)
        torch.testing.assert_close(weights.sum(dim=-1), torch.ones(2, dtype=torch.float64), atol=1e-9, rtol=0)

    def test_weighted_std_oracle(self, rng):
        x = rng.normal(size=(1, 4, 2, 9))
        w = rng.random(9)
        w /= w.sum()
        pooled = weighted_stats(torch.from_numpy(x), torch.from_numpy(w[None, :])).numpy()[0]
        mean = np.sum(w * x[0], axis=-1)
        std = np.sqrt(np.sum(w * x[0] ** 2, axis=-1) - mean ** 2)
        np.testing.assert_allclose(pooled, np.concatenate([mean.ravel(), std.ravel()]), atol=1e-9)


# ---------------------------------------------------------------------------
# Embeddings
# ---------------------------------------------------------------------------


class TestEmbed:
    def test_embedding_shape_and_determinism(self, small_net_cfg, rng):
        feat = rng.normal(size=(50, 8))
        a = embed(build_network(small_net_cfg, init_seed=5), feat)
        b = embed(build_network(small_net_cfg, init_seed=5), feat)
        assert a.shape == (16,)
        assert np.all(np.isfinite(a))
        np.testing.assert_array_equal(a, b)

    def test_batch_matches_single(self, small_net_cfg, rng):
        net = build_network(small_net_cfg, init_seed=5)
        batch = rng.normal(size=(3, 40, 8))
        out = embed(net, batch)
        assert out.shape == (3, 16)
        for i in range(3):
            np.testing.assert_allclose(out[i], embed(net, batch[i]), atol=1e-12)

    @pytest.mark.parametrize("name", ["H2/SP-16", "H3/ASP-16"])
    def test_aggregated_networks(self, name, rng):
        net = build_network(NetworkConfig.from_system_name(name, feat_dim=8), init_seed=1)
        assert embed(net, rng.normal(size=(40, 8))).shape == (16,)

    def test_zero_aggregation_weights_average_stages(self):
        embs = [torch.full((4,), float(v), dtype=torch.float64) for v in (1.0, 2.0, 6.0)]
        out = aggregate_embeddings(embs, torch.zeros(3, 4, dtype=torch.float64))
        torch.testing.assert_close(out, torch.full((4,), 3.0, dtype=torch.float64))

    def test_aggregation_shape_mismatch(self):
        with pytest.raises(InputError):
            aggregate_embeddings([torch.zeros(4), torch.zeros(5)], torch.zeros(2, 4))


class TestWeightFile:
    def test_round_trip_is_bit_exact(self, tmp_path, rng):
        cfg = NetworkConfig.from_system_name("H2/ASP-16", feat_dim=8)
        net = build_network(cfg, init_seed=9)
        path = tmp_path / "net.bin"
        save_weights(net, path)
        loaded = load_weights(path)
        assert loaded.cfg == net.cfg
        original, restored = net.state_dict(), loaded.state_dict()
        for key in original:
            if not key.endswith("num_batches_tracked"):
                assert torch.equal(original[key], restored[key]), key
        feat = rng.normal(size=(30, 8))
        np.testing.assert_array_equal(embed(net, feat), embed(loaded, feat))

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.bin"
        path.write_bytes(b"NOTAWEIGHTFILE")
        with pytest.raises(InputError):
            load_weights(path)

    def test_truncated(self, tmp_path, small_net_cfg):
        path = tmp_path / "net.bin"
        save_weights(build_network(small_net_cfg, init_seed=1), path)
        path.write_bytes(path.read_bytes()[:-10])
        with pytest.raises(InputError):
            load_weights(path)
