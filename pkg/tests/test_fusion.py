import math
import unittest

import numpy as np

from app.errors import CacheIncompleteError, DomainError, RoutingInvariantError
from app.flow.toy_dit import init_toy_dit
from app.fusion.cache import (
    FusionConfig,
    alpha_cos2,
    alpha_linear,
    assemble_attention_inputs,
    blend_cache,
    init_cache,
    maybe_reset,
)
from app.models.latent import BlockKV
from app.models.routing import TokenRouting
from app.tensor.core import FlopCounter
from app.tensor.rng import SplitMix64
from tests.test_flow_model import small_config, small_inputs


def random_kv(blocks: int, n: int, m: int, d: int, seed: int) -> list[BlockKV]:
    rng = SplitMix64(seed)
    out = []
    for b in range(blocks):
        keys = {"prompt": rng.normal((m, d)), "image": rng.normal((n, d)), "condition": rng.normal((n, d))}
        values = {"prompt": rng.normal((m, d)), "image": rng.normal((n, d)), "condition": rng.normal((n, d))}
        out.append(BlockKV(block=b, keys=keys, values=values))
    return out


class TestAlphaSchedules(unittest.TestCase):
    def test_cos2_endpoints_exact(self):
        self.assertEqual(alpha_cos2(0.0), 1.0)
        self.assertEqual(alpha_cos2(1.0), 0.0)
        self.assertAlmostEqual(alpha_cos2(0.5), 0.5, places=12)

    def test_cos2_monotone(self):
        grid = [alpha_cos2(i / 1000) for i in range(1001)]
        self.assertTrue(all(b <= a for a, b in zip(grid, grid[1:])))

    def test_domain(self):
        for bad in (-0.01, 1.01, math.nan):
            with self.assertRaises(DomainError):
                alpha_cos2(bad)
        with self.assertRaises(DomainError):
            alpha_linear(2.0)
        self.assertEqual(alpha_linear(0.25), 0.75)


class TestBlend(unittest.TestCase):
    def setUp(self):
        self.kv = random_kv(2, 6, 2, 3, seed=1)
        self.routing = TokenRouting.from_active([0, 3], 6)

    def test_blend_moves_reused_rows_toward_condition(self):
        cache = init_cache(self.kv, 10, 6)
        before = [blk.image_k.copy() for blk in cache.blocks]
        blend_cache(cache, 0.4, self.routing, FusionConfig())
        a = alpha_cos2(0.4)
        for b, blk in enumerate(cache.blocks):
            reuse = self.routing.reuse
            expected = a * before[b][reuse] + (1 - a) * blk.condition_k[reuse]
            np.testing.assert_allclose(blk.image_k[reuse], expected)
            np.testing.assert_array_equal(blk.image_k[self.routing.active], before[b][self.routing.active])
            lo = np.minimum(before[b][reuse], blk.condition_k[reuse])
            hi = np.maximum(before[b][reuse], blk.condition_k[reuse])
            self.assertTrue(np.all((blk.image_k[reuse] >= lo - 1e-15) & (blk.image_k[reuse] <= hi + 1e-15)))

    def test_blend_at_t_one_is_the_condition(self):
        cache = init_cache(self.kv, 10, 6)
        blend_cache(cache, 1.0, self.routing, FusionConfig())
        reuse = self.routing.reuse
        np.testing.assert_array_equal(cache.blocks[1].image_v[reuse], cache.blocks[1].condition_v[reuse])

    def test_static_and_naive_skip(self):
        cache = init_cache(self.kv, 10, 6)
        blend_cache(cache, 0.4, self.routing, FusionConfig(mode="static"))
        np.testing.assert_array_equal(cache.blocks[0].image_k, self.kv[0].keys["image"])

        blend_cache(cache, 0.4, self.routing, FusionConfig(mode="naive-skip"))
        np.testing.assert_array_equal(cache.dropped, self.routing.reuse)
        np.testing.assert_array_equal(cache.blocks[0].image_k, self.kv[0].keys["image"])

    def test_static_and_spotfusion_separate(self):
        static = init_cache(self.kv, 10, 6)
        fused = init_cache(self.kv, 10, 6)
        for t in (0.9, 0.6, 0.3):
            blend_cache(static, t, self.routing, FusionConfig(mode="static"))
            blend_cache(fused, t, self.routing, FusionConfig(mode="spotfusion"))
        reuse = self.routing.reuse
        for b in range(2):
            np.testing.assert_array_equal(static.blocks[b].image_k[reuse], self.kv[b].keys["image"][reuse])
            gap_static = np.abs(static.blocks[b].image_k[reuse] - static.blocks[b].condition_k[reuse]).sum()
            gap_fused = np.abs(fused.blocks[b].image_k[reuse] - fused.blocks[b].condition_k[reuse]).sum()
            self.assertLess(gap_fused, gap_static)
            np.testing.assert_array_equal(
                fused.blocks[b].image_k[self.routing.active], static.blocks[b].image_k[self.routing.active]
            )

    def test_missing_tokens(self):
        cache = init_cache(self.kv, 10, 6)
        cache.blocks[1].image_valid[4] = False
        with self.assertRaises(CacheIncompleteError):
            blend_cache(cache, 0.4, self.routing, FusionConfig())

    def test_init_checks_block_count(self):
        with self.assertRaises(CacheIncompleteError):
            init_cache(self.kv, 10, 6, expected_blocks=3)

    def test_init_rejects_malformed_block_kv(self):
        del self.kv[1].values["condition"]
        with self.assertRaises(CacheIncompleteError):
            init_cache(self.kv, 10, 6)
        self.kv[1].values["condition"] = self.kv[1].keys["condition"][:, :-1].copy()
        with self.assertRaises(CacheIncompleteError):
            init_cache(self.kv, 10, 6)


class TestAssemble(unittest.TestCase):
    def setUp(self):
        self.kv = random_kv(1, 5, 2, 3, seed=2)
        self.cache = init_cache(self.kv, 0, 5)
        self.routing = TokenRouting.from_active([1, 4], 5)
        rng = SplitMix64(3)
        self.q_p = rng.normal((2, 3))
        self.q_a, self.k_a, self.v_a = rng.normal((2, 3)), rng.normal((2, 3)), rng.normal((2, 3))

    def test_order_prompt_active_reused_condition(self):
        q, k, v = assemble_attention_inputs(
            self.cache, 0, self.routing, self.q_p, self.q_a, self.k_a, self.v_a
        )
        self.assertEqual(q.shape, (4, 3))
        self.assertEqual(k.shape, (2 + 2 + 3 + 5, 3))
        np.testing.assert_array_equal(k[:2], self.kv[0].keys["prompt"])
        np.testing.assert_array_equal(k[2:4], self.k_a)
        np.testing.assert_array_equal(k[4:7], self.kv[0].keys["image"][[0, 2, 3]])
        np.testing.assert_array_equal(v[7:], self.kv[0].values["condition"])

    def test_naive_skip_drops_reused_keys(self):
        blend_cache(self.cache, 0.5, self.routing, FusionConfig(mode="naive-skip"))
        _, k, _ = assemble_attention_inputs(
            self.cache, 0, self.routing, self.q_p, self.q_a, self.k_a, self.v_a
        )
        self.assertEqual(k.shape[0], 2 + 2 + 5)

    def test_rejects_overlap_and_empty(self):
        bad = TokenRouting(
            active=np.array([1, 2]), reuse=np.array([0, 2, 3, 4]), tau=0.1, num_tokens=5
        )
        with self.assertRaises(RoutingInvariantError):
            assemble_attention_inputs(self.cache, 0, bad, self.q_p, self.q_a, self.k_a, self.v_a)
        empty = TokenRouting.from_active([], 5)
        with self.assertRaises(RoutingInvariantError):
            assemble_attention_inputs(
                self.cache, 0, empty, self.q_p, np.zeros((0, 3)), np.zeros((0, 3)), np.zeros((0, 3))
            )


class TestReset(unittest.TestCase):
    def test_counter_and_disabled(self):
        cache = init_cache(random_kv(1, 4, 1, 2, 5), 0, 4)
        calls = []

        def refresh():
            calls.append(1)
            return None

        config = FusionConfig(reset_interval=3)
        outcomes = [maybe_reset(cache, config, refresh, s) for s in range(6)]
        self.assertEqual(outcomes, ["kept", "kept", "refreshed", "kept", "kept", "refreshed"])
        self.assertEqual(cache.resets, 2)
        self.assertEqual(len(calls), 2)

        never = FusionConfig(reset_interval=math.inf)
        for s in range(50):
            self.assertEqual(maybe_reset(cache, never, refresh, s), "kept")

    def test_refresh_restores_fresh_forward(self):
        model = init_toy_dit(small_config(seed=4))
        x, y, p = small_inputs(8)
        _, kv_old = model.forward_full(x, y, p, 0.9, FlopCounter())
        cache = init_cache(kv_old, 9, 8)
        routing = TokenRouting.from_active([0, 1], 8)
        blend_cache(cache, 0.6, routing, FusionConfig())

        _, kv_fresh = model.forward_full(x, y, p, 0.5, FlopCounter())
        outcome = maybe_reset(cache, FusionConfig(reset_interval=1), lambda: kv_fresh, 5)
        self.assertEqual(outcome, "refreshed")
        self.assertEqual(cache.last_full_step, 5)
        for b, blk in enumerate(cache.blocks):
            np.testing.assert_allclose(blk.image_k, kv_fresh[b].keys["image"], atol=1e-12)
            np.testing.assert_allclose(blk.condition_v, kv_fresh[b].values["condition"], atol=1e-12)
            np.testing.assert_allclose(blk.prompt_k, kv_fresh[b].keys["prompt"], atol=1e-12)


if __name__ == "__main__":
    unittest.main()
