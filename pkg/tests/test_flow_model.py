import math
import unittest
from dataclasses import fields, replace

import numpy as np

from app.errors import CacheIncompleteError, ConfigError, DimensionError, DomainError
from app.flow.analytic import AnalyticVelocityModel, analytic_velocity
from app.flow.loader import get_model
from app.flow.toy_dit import ToyDiT, init_toy_dit, timestep_embedding
from app.fusion.cache import init_cache
from app.models.latent import ConditionLatent, LatentGrid, ModelConfig, PromptEmbedding
from app.models.routing import TokenRouting
from app.tensor.core import FlopCounter
from app.tensor.rng import SplitMix64


def small_config(seed: int = 0, blocks: int = 2, positional: bool = True) -> ModelConfig:
    return ModelConfig(
        kind="toy-dit",
        blocks=blocks,
        heads=1,
        d_model=4,
        d_head=4,
        seed=seed,
        channels=4,
        tokens=8,
        prompt_dim=4,
        positional=positional,
    )


def small_inputs(seed: int):
    rng = SplitMix64(seed)
    x = LatentGrid(rng.normal((2, 4, 4)))
    y = ConditionLatent(LatentGrid(rng.normal((2, 4, 4))))
    p = PromptEmbedding(rng.normal((4, 4)))
    return x, y, p


class TestAnalyticModel(unittest.TestCase):
    def test_reconstruction_is_the_target(self):
        rng = SplitMix64(1)
        target = LatentGrid(rng.normal((3, 3, 2)))
        x = LatentGrid(rng.normal((3, 3, 2)))
        for t in (1.0, 0.5, 0.02):
            v = analytic_velocity(x, target, t)
            np.testing.assert_allclose(x.data - t * v.data, target.data, atol=1e-12)

    def test_rejects_t_zero(self):
        g = LatentGrid.zeros(2, 2, 1)
        with self.assertRaises(DomainError):
            analytic_velocity(g, g, 0.0)

    def test_partial_matches_full_rows(self):
        rng = SplitMix64(2)
        target = LatentGrid(rng.normal((2, 2, 3)))
        x = LatentGrid(rng.normal((2, 2, 3)))
        model = AnalyticVelocityModel(target)
        y = ConditionLatent(LatentGrid.zeros(2, 2, 3))
        p = PromptEmbedding(np.ones((1, 3)))
        v_full, kv = model.forward_full(x, y, p, 0.4, FlopCounter())
        self.assertEqual(kv, [])
        routing = TokenRouting.from_active([1, 3], 4)
        cache = init_cache(kv, 0, 4)
        out = model.forward_partial(x.tokens()[[1, 3]], routing, p, 0.4, cache, FlopCounter())
        np.testing.assert_allclose(out.velocity, v_full.tokens()[[1, 3]])

    def test_loader_needs_target(self):
        with self.assertRaises(ConfigError):
            get_model(ModelConfig(kind="analytic", blocks=0))
        with self.assertRaises(ConfigError):
            get_model(ModelConfig(kind="unet"))


class TestToyDiT(unittest.TestCase):
    def test_seeded_weights_are_deterministic(self):
        a = init_toy_dit(small_config(seed=5))
        b = init_toy_dit(small_config(seed=5))
        c = init_toy_dit(small_config(seed=6))
        np.testing.assert_array_equal(a.weights.blocks[1].wq, b.weights.blocks[1].wq)
        self.assertFalse(np.array_equal(a.weights.blocks[1].wq, c.weights.blocks[1].wq))

    def test_positional_can_be_disabled(self):
        model = init_toy_dit(small_config(positional=False))
        self.assertFalse(np.any(model.weights.pos_image))

    def test_permutation_equivariant_without_positions(self):
        model = init_toy_dit(small_config(seed=2, positional=False))
        x, y, p = small_inputs(4)
        perm = np.array([5, 2, 7, 0, 3, 6, 1, 4])
        v, _ = model.forward_full(x, y, p, 0.6, FlopCounter())
        px = LatentGrid.from_tokens(x.tokens()[perm], 2, 4)
        py = ConditionLatent(LatentGrid.from_tokens(y.grid.tokens()[perm], 2, 4))
        pv, _ = model.forward_full(px, py, p, 0.6, FlopCounter())
        np.testing.assert_allclose(pv.tokens(), v.tokens()[perm], rtol=0, atol=1e-12)

    def test_zero_weights_give_zero_velocity(self):
        model = init_toy_dit(small_config())
        def zeroed(w):
            return replace(w, **{f.name: np.zeros_like(getattr(w, f.name)) for f in fields(w) if f.name != "blocks"})

        weights = replace(zeroed(model.weights), blocks=[zeroed(bw) for bw in model.weights.blocks])
        x, y, p = small_inputs(1)
        v, _ = ToyDiT(model.config, weights).forward_full(x, y, p, 0.3, FlopCounter())
        np.testing.assert_array_equal(v.data, np.zeros_like(v.data))

    def test_full_forward_shapes_and_counters(self):
        model = init_toy_dit(small_config())
        x, y, p = small_inputs(0)
        counter = FlopCounter()
        v, kv = model.forward_full(x, y, p, 0.5, counter)
        self.assertEqual(v.shape, (2, 4, 4))
        self.assertEqual(len(kv), 2)
        self.assertEqual(kv[0].keys["image"].shape, (8, 4))
        self.assertEqual(kv[0].keys["prompt"].shape, (4, 4))
        self.assertEqual(counter.attention_query_tokens, 4 + 2 * 8)
        self.assertGreater(counter.forward_flops, 0)

    def test_full_forward_rejects_wrong_token_count(self):
        model = init_toy_dit(small_config())
        rng = SplitMix64(0)
        x = LatentGrid(rng.normal((3, 3, 4)))
        y = ConditionLatent(LatentGrid(rng.normal((3, 3, 4))))
        with self.assertRaises(DimensionError):
            model.forward_full(x, y, PromptEmbedding(np.ones((4, 4))), 0.5, FlopCounter())

    def test_partial_with_exact_cache_matches_full(self):
        for trial in range(20):
            model = init_toy_dit(small_config(seed=trial))
            x, y, p = small_inputs(100 + trial)
            t = float(SplitMix64(trial).uniform((1,), 0.05, 1.0)[0])
            v_full, kv = model.forward_full(x, y, p, t, FlopCounter())

            picks = SplitMix64(200 + trial).uniform((8,)) < 0.5
            picks[trial % 8] = True
            routing = TokenRouting.from_active(np.flatnonzero(picks), 8)
            cache = init_cache(kv, 0, 8, expected_blocks=2)

            out = model.forward_partial(x.tokens()[routing.active], routing, p, t, cache, FlopCounter())
            np.testing.assert_allclose(out.velocity, v_full.tokens()[routing.active], rtol=0, atol=1e-9)
            for b, (k_a, v_a) in enumerate(out.image_kv):
                np.testing.assert_allclose(k_a, kv[b].keys["image"][routing.active], atol=1e-12)
                np.testing.assert_allclose(v_a, kv[b].values["image"][routing.active], atol=1e-12)

    def test_partial_with_recomputed_condition_matches_full(self):
        model = init_toy_dit(small_config(seed=3))
        x, y, p = small_inputs(7)
        v_full, kv = model.forward_full(x, y, p, 0.3, FlopCounter())
        routing = TokenRouting.from_active([0, 2, 5], 8)
        cache = init_cache(kv, 0, 8)
        counter = FlopCounter()
        out = model.forward_partial(x.tokens()[routing.active], routing, p, 0.3, cache, counter, condition=y)
        np.testing.assert_allclose(out.velocity, v_full.tokens()[[0, 2, 5]], atol=1e-9)
        self.assertEqual(counter.attention_query_tokens, 4 + 3 + 8)
        np.testing.assert_allclose(out.condition_kv[1][0], kv[1].keys["condition"], atol=1e-12)

    def test_partial_queries_only_prompt_and_active(self):
        model = init_toy_dit(small_config())
        x, y, p = small_inputs(1)
        _, kv = model.forward_full(x, y, p, 0.5, FlopCounter())
        routing = TokenRouting.from_active([4], 8)
        counter = FlopCounter()
        model.forward_partial(x.tokens()[[4]], routing, p, 0.5, init_cache(kv, 0, 8), counter)
        self.assertEqual(counter.attention_query_tokens, 4 + 1)

    def test_partial_needs_matching_cache(self):
        model = init_toy_dit(small_config())
        x, y, p = small_inputs(1)
        _, kv = model.forward_full(x, y, p, 0.5, FlopCounter())
        cache = init_cache(kv[:1], 0, 8)
        routing = TokenRouting.from_active([0], 8)
        with self.assertRaises(CacheIncompleteError):
            model.forward_partial(x.tokens()[[0]], routing, p, 0.5, cache, FlopCounter())


def _ln(x):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + 1e-6)


class TestHandSteppedTrace(unittest.TestCase):
    """Single-block, single-head forward re-derived step by step with plain numpy."""

    def test_single_block_trace(self):
        cfg = small_config(seed=11, blocks=1)
        model: ToyDiT = init_toy_dit(cfg)
        w = model.weights
        bw = w.blocks[0]
        x, y, p = small_inputs(12)
        t = 0.37
        d = 4

        freqs = np.array([math.exp(-math.log(10000.0) * i / d) for i in range(d)])
        temb = np.concatenate([np.cos(1000.0 * t * freqs), np.sin(1000.0 * t * freqs)])
        np.testing.assert_allclose(temb, timestep_embedding(t, d))

        mod = (temb @ bw.w_mod + bw.b_mod).reshape(4, d)
        h = np.concatenate(
            [
                p.tokens @ w.w_prompt,
                x.tokens() @ w.w_image + w.pos_image,
                y.grid.tokens() @ w.w_condition + w.pos_condition,
            ]
        )
        u = _ln(h) * (1.0 + mod[0]) + mod[1]
        q, k, v = u @ bw.wq, u @ bw.wk, u @ bw.wv
        logits = q @ k.T / 2.0
        a = np.exp(logits - logits.max(axis=1, keepdims=True))
        a /= a.sum(axis=1, keepdims=True)
        h = h + (a @ v) @ bw.wo
        u2 = _ln(h) * (1.0 + mod[2]) + mod[3]
        h = h + np.tanh(u2 @ bw.w1) @ bw.w2
        fm = (temb @ w.w_final_mod).reshape(2, d)
        expected = (_ln(h[4:12]) * (1.0 + fm[0]) + fm[1]) @ w.w_out

        v_model, kv = model.forward_full(x, y, p, t, FlopCounter())
        np.testing.assert_allclose(v_model.tokens(), expected, rtol=0, atol=1e-12)
        np.testing.assert_allclose(kv[0].keys["condition"], k[12:], atol=1e-12)


if __name__ == "__main__":
    unittest.main()
