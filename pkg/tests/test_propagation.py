import numpy as np
import pytest

from naive_reference import naive_layer, naive_propagate

from kgax.data import CollaborativeKG, IdMap, build_ckg, build_entity_space
from kgax.errors import KgaxError
from kgax.propagation import (
    aggregate_neighborhood,
    attention_weights,
    build_neighbor_plan,
    concat_layers,
    full_neighbor_plan,
    propagate_layer,
    propagate_layer_backward,
    triple_embedding,
)

SLOPE = 0.2


def intern_all(names):
    m = IdMap()
    for n in names:
        m.intern(n)
    return m


def chain_graph():
    """Two users, three items, interactions (u0,i0) (u0,i1) (u1,i1) (u1,i2)."""
    users = intern_all(["u0", "u1"])
    items = intern_all(["i0", "i1", "i2"])
    space = build_entity_space(users, items, IdMap(), {})
    pairs = np.array([[0, 0], [0, 1], [1, 1], [1, 2]])
    return build_ckg([], pairs, {}, space, n_base_relations=0)


def random_graph(rng, n_users=4, n_items=6):
    users = intern_all([f"u{k}" for k in range(n_users)])
    items = intern_all([f"i{k}" for k in range(n_items)])
    space = build_entity_space(users, items, IdMap(), {})
    pairs = []
    for u in range(n_users):
        for i in sorted(rng.choice(n_items, size=rng.integers(1, n_items), replace=False).tolist()):
            pairs.append((u, i))
    return build_ckg([], np.asarray(pairs), {}, space, n_base_relations=0)


def layer_params(rng, p, d_rel, q):
    w1 = 0.5 * rng.normal(size=(p, 2 * p + d_rel))
    w2 = 0.5 * rng.normal(size=(1, p))
    w_agg = 0.5 * rng.normal(size=(q, 2 * p))
    return w1, w2, w_agg


class TestTripleEmbedding:
    def test_hand_case_d1(self):
        w1 = np.array([[1.0, 1.0, 1.0]])
        out = triple_embedding(w1, np.array([2.0]), np.array([3.0]), np.array([4.0]))
        assert out.tolist() == [9.0]

    def test_zero_transform_zero_output(self):
        out = triple_embedding(np.zeros((2, 6)), np.ones(2), np.ones(2), np.ones(2))
        assert np.all(out == 0)

    def test_shape_mismatch_rejected(self):
        with pytest.raises(KgaxError):
            triple_embedding(np.zeros((2, 5)), np.ones(2), np.ones(2), np.ones(2))


class TestAttention:
    def test_softmax_hand_case(self):
        # pre-activations ln 1 and ln 3 are nonnegative, so the LeakyReLU
        # is the identity and the softmax gives exactly (0.25, 0.75)
        w2 = np.array([[1.0]])
        embs = np.array([[np.log(1.0)], [np.log(3.0)]])
        logits, pi = attention_weights(w2, embs, SLOPE)
        assert np.allclose(logits, [0.0, np.log(3.0)])
        assert np.allclose(pi, [0.25, 0.75], atol=1e-12)

    def test_equal_logits_uniform(self):
        w2 = np.array([[0.5, -0.2]])
        embs = np.tile(np.array([[1.0, 2.0]]), (4, 1))
        _, pi = attention_weights(w2, embs, SLOPE)
        assert np.allclose(pi, 0.25)

    def test_sums_to_one_random(self):
        rng = np.random.default_rng(0)
        for _ in range(40):
            n = int(rng.integers(1, 12))
            p = int(rng.integers(1, 6))
            w2 = rng.normal(size=(1, p))
            embs = rng.normal(scale=4.0, size=(n, p))
            _, pi = attention_weights(w2, embs, SLOPE)
            assert abs(pi.sum() - 1.0) < 1e-9
            assert np.all(pi >= 0)

    def test_uniform_mode_ignores_w2(self):
        embs = np.arange(6.0).reshape(3, 2)
        _, pi_a = attention_weights(np.array([[1.0, 2.0]]), embs, SLOPE, mode="uniform")
        _, pi_b = attention_weights(np.array([[-9.0, 4.0]]), embs, SLOPE, mode="uniform")
        assert np.array_equal(pi_a, pi_b)
        assert np.allclose(pi_a, 1.0 / 3.0)

    def test_empty_neighborhood_rejected(self):
        with pytest.raises(KgaxError):
            attention_weights(np.array([[1.0]]), np.zeros((0, 1)), SLOPE)


class TestAggregate:
    def test_hand_case(self):
        out = aggregate_neighborhood(np.array([0.25, 0.75]), np.array([[2.0], [4.0]]))
        assert out.tolist() == [3.5]

    def test_single_neighbor_passthrough(self):
        emb = np.array([[1.5, -2.0]])
        assert np.allclose(aggregate_neighborhood(np.array([1.0]), emb), emb[0])

    def test_empty_gives_zeros(self):
        out = aggregate_neighborhood(np.zeros(0), np.zeros((0, 3)))
        assert out.shape == (3,) and np.all(out == 0)


class TestConcat:
    def test_dims_add_up(self):
        reps = [np.ones((2, 4)), 2 * np.ones((2, 3)), 3 * np.ones((2, 2))]
        out = concat_layers(reps)
        assert out.shape == (2, 9)
        assert np.all(out[:, :4] == 1) and np.all(out[:, 7:] == 3)

    def test_single_layer_copy(self):
        rep = np.ones((2, 3))
        out = concat_layers([rep])
        out[0, 0] = 9
        assert rep[0, 0] == 1.0

    def test_empty_rejected(self):
        with pytest.raises(KgaxError):
            concat_layers([])


class TestPlans:
    def test_full_plan_matches_graph(self):
        g = chain_graph()
        plan = full_neighbor_plan(g)
        assert plan.n_edges == g.triples.shape[0]
        assert np.array_equal(plan.offsets, g.head_offsets)
        assert np.array_equal(plan.heads, g.triples[:, 0])

    def test_capped_plan_respects_cap(self):
        rng = np.random.default_rng(1)
        g = random_graph(rng)
        plan = build_neighbor_plan(g, cap=2, rng=np.random.default_rng(2))
        assert np.all(plan.counts() <= 2)
        # every sampled edge must exist in the graph
        for k in range(plan.n_edges):
            assert (plan.heads[k], plan.rels[k], plan.tails[k]) in g.triple_set

    def test_plan_deterministic_per_stream(self):
        rng = np.random.default_rng(3)
        g = random_graph(rng)
        a = build_neighbor_plan(g, cap=2, rng=np.random.default_rng(7))
        b = build_neighbor_plan(g, cap=2, rng=np.random.default_rng(7))
        assert np.array_equal(a.tails, b.tails)


class TestLayerForward:
    def test_matches_naive_reference(self):
        g = chain_graph()
        plan = full_neighbor_plan(g)
        rng = np.random.default_rng(4)
        p, q = 3, 2
        h_prev = rng.normal(size=(g.entity_count, p))
        relation = rng.normal(size=(g.relation_count, p))
        w1, w2, w_agg = layer_params(rng, p, p, q)
        edges = list(map(tuple, g.triples.tolist()))

        for mode in ("learned", "uniform"):
            ours, _ = propagate_layer(h_prev, relation, w1, w2, w_agg, plan,
                                      SLOPE, attention_mode=mode)
            naive = naive_layer(h_prev, relation, w1, w2, w_agg, edges,
                                g.entity_count, SLOPE, uniform=(mode == "uniform"))
            assert np.allclose(ours, naive, atol=1e-12), mode

    def test_isolated_entity_sees_only_itself(self):
        # entity 4 (i2) has no edges when u1-i2 is removed
        users = intern_all(["u0", "u1"])
        items = intern_all(["i0", "i1", "i2"])
        space = build_entity_space(users, items, IdMap(), {})
        g = build_ckg([], np.array([[0, 0], [0, 1], [1, 1]]), {}, space, 0)
        plan = full_neighbor_plan(g)
        rng = np.random.default_rng(5)
        h_prev = rng.normal(size=(g.entity_count, 2))
        relation = rng.normal(size=(g.relation_count, 2))
        w1, w2, w_agg = layer_params(rng, 2, 2, 2)
        out, _ = propagate_layer(h_prev, relation, w1, w2, w_agg, plan, SLOPE)
        from kgax.numeric import leaky_relu
        expect = leaky_relu(w_agg @ np.concatenate([h_prev[4], np.zeros(2)]), SLOPE)
        assert np.allclose(out[4], expect)

    def test_all_dropped_equals_isolated_update(self):
        g = chain_graph()
        plan = full_neighbor_plan(g)
        rng = np.random.default_rng(6)
        h_prev = rng.normal(size=(g.entity_count, 2))
        relation = rng.normal(size=(g.relation_count, 2))
        w1, w2, w_agg = layer_params(rng, 2, 2, 2)
        zeros = np.zeros(g.entity_count)
        out, _ = propagate_layer(h_prev, relation, w1, w2, w_agg, plan, SLOPE,
                                 drop_scale=zeros)
        from kgax.numeric import leaky_relu
        for ent in range(g.entity_count):
            expect = leaky_relu(
                w_agg @ np.concatenate([h_prev[ent], np.zeros(2)]), SLOPE)
            assert np.allclose(out[ent], expect)

    def test_drop_scale_rescales_messages(self):
        g = chain_graph()
        plan = full_neighbor_plan(g)
        rng = np.random.default_rng(7)
        h_prev = rng.normal(size=(g.entity_count, 2))
        relation = rng.normal(size=(g.relation_count, 2))
        w1, w2, w_agg = layer_params(rng, 2, 2, 2)
        keep_all = np.ones(g.entity_count)
        eval_out, _ = propagate_layer(h_prev, relation, w1, w2, w_agg, plan, SLOPE)
        unit_out, _ = propagate_layer(h_prev, relation, w1, w2, w_agg, plan, SLOPE,
                                      drop_scale=keep_all)
        assert np.allclose(eval_out, unit_out)

    def test_uniform_output_independent_of_w2(self):
        g = chain_graph()
        plan = full_neighbor_plan(g)
        rng = np.random.default_rng(8)
        h_prev = rng.normal(size=(g.entity_count, 3))
        relation = rng.normal(size=(g.relation_count, 3))
        w1, w2, w_agg = layer_params(rng, 3, 3, 2)
        out_a, _ = propagate_layer(h_prev, relation, w1, w2, w_agg, plan, SLOPE,
                                   attention_mode="uniform")
        out_b, _ = propagate_layer(h_prev, relation, w1, w2 + 100.0, w_agg, plan,
                                   SLOPE, attention_mode="uniform")
        assert np.array_equal(out_a, out_b)

    def test_pi_sums_to_one_per_neighborhood(self):
        rng = np.random.default_rng(9)
        for trial in range(10):
            g = random_graph(rng)
            plan = full_neighbor_plan(g)
            h_prev = rng.normal(size=(g.entity_count, 3))
            relation = rng.normal(size=(g.relation_count, 3))
            w1, w2, w_agg = layer_params(rng, 3, 3, 2)
            for mode in ("learned", "uniform"):
                _, cache = propagate_layer(h_prev, relation, w1, w2, w_agg, plan,
                                           SLOPE, attention_mode=mode)
                sums = np.add.reduceat(cache["pi"], plan.offsets[:-1][plan.counts() > 0])
                assert np.all(np.abs(sums - 1.0) < 1e-9), (trial, mode)

    def test_bad_w1_shape_rejected(self):
        g = chain_graph()
        plan = full_neighbor_plan(g)
        with pytest.raises(KgaxError, match="triple transform"):
            propagate_layer(np.zeros((g.entity_count, 3)),
                            np.zeros((g.relation_count, 3)),
                            np.zeros((3, 7)), np.zeros((1, 3)), np.zeros((2, 6)),
                            plan, SLOPE)

    def test_bad_w_agg_shape_rejected(self):
        g = chain_graph()
        plan = full_neighbor_plan(g)
        with pytest.raises(KgaxError, match="update transform"):
            propagate_layer(np.zeros((g.entity_count, 3)),
                            np.zeros((g.relation_count, 3)),
                            np.zeros((3, 9)), np.zeros((1, 3)), np.zeros((2, 5)),
                            plan, SLOPE)


class TestLayerBackward:
    def run_gradcheck(self, mode, drop=False):
        g = chain_graph()
        plan = full_neighbor_plan(g)
        rng = np.random.default_rng(10)
        p, q = 3, 2
        params = {
            "h_prev": rng.normal(size=(g.entity_count, p)),
            "relation": rng.normal(size=(g.relation_count, p)),
        }
        w1, w2, w_agg = layer_params(rng, p, p, q)
        params.update({"w1": w1, "w2": w2, "w_agg": w_agg})
        g_out = rng.normal(size=(g.entity_count, q))
        drop_scale = None
        if drop:
            drop_scale = rng.choice([0.0, 2.0], size=g.entity_count)

        def loss_fn(ps):
            out, cache = propagate_layer(ps["h_prev"], ps["relation"], ps["w1"],
                                         ps["w2"], ps["w_agg"], plan, SLOPE,
                                         attention_mode=mode, drop_scale=drop_scale)
            loss = float(np.sum(out * g_out))
            d_w1 = np.zeros_like(ps["w1"])
            d_w2 = np.zeros_like(ps["w2"])
            d_w_agg = np.zeros_like(ps["w_agg"])
            d_relation = np.zeros_like(ps["relation"])
            g_h = propagate_layer_backward(g_out, cache, ps["w1"], ps["w2"],
                                           ps["w_agg"], plan, SLOPE, mode,
                                           d_w1, d_w2, d_w_agg, d_relation)
            grads = {"h_prev": g_h, "relation": d_relation,
                     "w1": d_w1, "w_agg": d_w_agg}
            if mode == "learned":
                grads["w2"] = d_w2
            return loss, grads

        from kgax.numeric import finite_diff_gradcheck
        return finite_diff_gradcheck(loss_fn, params, h=1e-6, tol=1e-6)

    def test_learned_mode_gradients(self):
        report = self.run_gradcheck("learned")
        assert report.passed, report.summary_lines()[-1]

    def test_uniform_mode_gradients(self):
        report = self.run_gradcheck("uniform")
        assert report.passed, report.summary_lines()[-1]

    def test_dropout_gradients(self):
        report = self.run_gradcheck("learned", drop=True)
        assert report.passed, report.summary_lines()[-1]


def test_multi_layer_forward_matches_naive():
    g = chain_graph()
    plan = full_neighbor_plan(g)
    rng = np.random.default_rng(11)
    d0, d1, d2 = 4, 3, 2
    entity = rng.normal(size=(g.entity_count, d0))
    relation = rng.normal(size=(g.relation_count, d0))
    w1_a, w2_a, wagg_a = layer_params(rng, d0, d0, d1)
    w1_b = 0.5 * rng.normal(size=(d1, 2 * d1 + d0))
    w2_b = 0.5 * rng.normal(size=(1, d1))
    wagg_b = 0.5 * rng.normal(size=(d2, 2 * d1))
    edges = list(map(tuple, g.triples.tolist()))

    h0 = entity
    h1, _ = propagate_layer(h0, relation, w1_a, w2_a, wagg_a, plan, SLOPE)
    h2, _ = propagate_layer(h1, relation, w1_b, w2_b, wagg_b, plan, SLOPE)
    ours = np.concatenate([h0, h1, h2], axis=1)

    naive = naive_propagate(entity, relation,
                            [(w1_a, w2_a, wagg_a), (w1_b, w2_b, wagg_b)],
                            edges, SLOPE)
    assert ours.shape == (g.entity_count, d0 + d1 + d2)
    assert np.allclose(ours, naive, atol=1e-12)
