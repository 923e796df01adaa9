import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from imcgae.data import build_dataset, load_dataset, ratings_from_arrays
from imcgae.graph import (
    DropoutPlan,
    build_graph,
    layer_probabilities,
    propagate,
    sample_dropout,
)

from conftest import random_dataset


def _dense(graph, level):
    lv = graph.levels[level]
    a = np.zeros((graph.n_nodes, graph.n_nodes))
    for r in range(graph.n_nodes):
        for k in range(lv.indptr[r], lv.indptr[r + 1]):
            a[r, lv.indices[k]] += lv.coef[k]
    return a


class TestBuild:
    def test_single_triple(self):
        g = build_graph(build_dataset(ratings_from_arrays([0], [0], [4])))
        lv = g.levels[0]
        assert (lv.edge_users[0], lv.edge_items[0]) == (0, 1)
        assert lv.edge_coef[0] == 1.0

    def test_degree_four_and_nine(self):
        # user 0 rates items 0..3 at level 1; item 0 is rated by users 0..8
        u = [0, 0, 0, 0] + list(range(1, 9))
        i = [0, 1, 2, 3] + [0] * 8
        g = build_graph(build_dataset(ratings_from_arrays(u, i, [1] * len(u))))
        a = _dense(g, 0)
        item0 = g.n_users
        assert a[0, item0] == pytest.approx(1.0 / 6.0, abs=1e-15)

    def test_edges_partition_triples(self, toy):
        g = build_graph(toy)
        assert sum(lv.n_edges for lv in g.levels) == len(toy)
        for t, lv in enumerate(g.levels):
            sel = toy.level_idx == t
            got = set(zip(lv.edge_users.tolist(), (lv.edge_items - toy.n_users).tolist()))
            assert got == set(zip(toy.users[sel].tolist(), toy.items[sel].tolist()))
            assert np.all(lv.edge_users < toy.n_users)
            assert np.all(lv.edge_items >= toy.n_users)

    def test_coefficients_symmetric_positive(self, toy):
        g = build_graph(toy)
        for t in range(g.n_levels):
            a = _dense(g, t)
            np.testing.assert_array_equal(a, a.T)
            assert np.all(g.levels[t].coef > 0)

    def test_degrees_match_edges(self, toy):
        g = build_graph(toy)
        total = np.bincount(toy.users, minlength=toy.n_users)
        np.testing.assert_array_equal(g.total_degree()[: toy.n_users], total)

    def test_expand_isolates_new_nodes(self, toy):
        g = build_graph(toy)
        big = g.expand(toy.n_users + 2, toy.n_items + 3)
        assert big.n_nodes == g.n_nodes + 5
        deg = big.total_degree()
        assert np.all(deg[toy.n_users:toy.n_users + 2] == 0)
        assert np.all(deg[-3:] == 0)
        np.testing.assert_array_equal(deg[: toy.n_users], g.total_degree()[: toy.n_users])
        np.testing.assert_array_equal(deg[toy.n_users + 2:-3], g.total_degree()[toy.n_users:])

    def test_ml100k_edge_count(self, ml100k):
        train = load_dataset(ml100k / "u1.base")
        g = build_graph(train)
        assert sum(lv.n_edges for lv in g.levels) == 80000
        for lv in g.levels:
            np.testing.assert_array_equal(
                lv.edge_coef, 1.0 / np.sqrt(lv.degree[lv.edge_users] * lv.degree[lv.edge_items])
            )


class TestDropout:
    def test_layer_probabilities(self):
        np.testing.assert_allclose(layer_probabilities(0.2, 0.1, 3), [0.2, 0.1, 0.0], atol=1e-15)

    def test_clamped_at_zero(self):
        np.testing.assert_array_equal(layer_probabilities(0.1, 0.3, 4)[1:], 0.0)

    @pytest.mark.parametrize("p0", [1.0, 1.5, -0.1])
    def test_bad_p0(self, p0):
        with pytest.raises(ValueError):
            layer_probabilities(p0, 0.1, 2)

    def test_zero_p0_keeps_everything(self):
        plan = sample_dropout(0.0, 0.1, 3, 50, 7)
        assert plan.keep.all()
        np.testing.assert_array_equal(plan.sender_scale(1), np.ones(50))

    def test_seed_determinism(self):
        a = sample_dropout(0.5, 0.1, 3, 200, 11)
        b = sample_dropout(0.5, 0.1, 3, 200, 11)
        np.testing.assert_array_equal(a.keep, b.keep)
        c = sample_dropout(0.5, 0.1, 3, 200, 12)
        assert not np.array_equal(a.keep, c.keep)

    def test_rescale(self):
        plan = sample_dropout(0.5, 0.25, 2, 1000, 0)
        s1 = plan.sender_scale(1)
        assert set(np.unique(s1)) <= {0.0, 2.0}
        s2 = plan.sender_scale(2)
        assert set(np.unique(s2)) <= {0.0, 1.0 / 0.75}
        # keep rate near 1 - p
        assert abs(plan.keep[0].mean() - 0.5) < 0.06


class TestPropagate:
    def test_single_edge(self):
        g = build_graph(build_dataset(ratings_from_arrays([0], [0], [1])))
        x = np.array([[0.0, 0.0], [1.0, 0.0]])
        np.testing.assert_array_equal(propagate(x, g, 0)[0], [1.0, 0.0])

    def test_dropped_sender_contributes_nothing(self):
        g = build_graph(build_dataset(ratings_from_arrays([0], [0], [1])))
        x = np.array([[5.0, 5.0], [1.0, 0.0]])
        out = propagate(x, g, 0, np.array([1.0, 0.0]))
        np.testing.assert_array_equal(out[0], [0.0, 0.0])
        # the dropped node still receives
        np.testing.assert_array_equal(out[1], [5.0, 5.0])

    def test_path_graph(self):
        # users 0 and 1 both rate item 0: u - i - u'
        g = build_graph(build_dataset(ratings_from_arrays([0, 1], [0, 0], [2, 2])))
        x = np.ones((3, 1))
        out = propagate(x, g, 0)
        assert out[2, 0] == pytest.approx(2.0 / math.sqrt(2.0), abs=1e-15)
        assert out[0, 0] == pytest.approx(1.0 / math.sqrt(2.0), abs=1e-15)

    def test_isolated_node_gets_zero(self, toy):
        g = build_graph(toy).expand(toy.n_users + 1, toy.n_items)
        x = np.random.default_rng(0).normal(size=(g.n_nodes, 3))
        for t in range(g.n_levels):
            out = propagate(x, g, t)
            isolated = g.levels[t].degree == 0
            assert isolated[toy.n_users]
            assert np.all(out[isolated] == 0.0)

    def test_matches_dense(self, toy):
        g = build_graph(toy)
        rng = np.random.default_rng(1)
        x = rng.normal(size=(g.n_nodes, 4))
        s = rng.random(g.n_nodes)
        for t in range(g.n_levels):
            np.testing.assert_allclose(propagate(x, g, t, s), _dense(g, t) @ (s[:, None] * x), rtol=1e-13, atol=1e-14)

    def test_dimension_errors(self, toy):
        g = build_graph(toy)
        with pytest.raises(ValueError):
            propagate(np.ones((g.n_nodes + 1, 2)), g, 0)
        with pytest.raises(ValueError):
            propagate(np.ones((g.n_nodes, 2)), g, 0, np.ones(3))

    def test_small_p_approaches_unmasked(self, toy):
        g = build_graph(toy)
        x = np.random.default_rng(2).normal(size=(g.n_nodes, 2))
        plan = sample_dropout(1e-9, 0.0, 1, g.n_nodes, 0)
        np.testing.assert_allclose(propagate(x, g, 0, plan.sender_scale(1)), propagate(x, g, 0), rtol=1e-8)

    def test_disabled_plan(self, toy):
        g = build_graph(toy)
        plan = DropoutPlan.disabled(2, g.n_nodes)
        x = np.random.default_rng(3).normal(size=(g.n_nodes, 2))
        np.testing.assert_array_equal(propagate(x, g, 1, plan.sender_scale(2)), propagate(x, g, 1))


class TestProperties:
    @settings(max_examples=40, deadline=None)
    @given(
        st.integers(2, 7), st.integers(2, 7), st.integers(0, 10_000),
        st.floats(-3, 3), st.floats(-3, 3),
    )
    def test_linearity(self, nu, ni, seed, alpha, beta):
        ds = random_dataset(nu, ni, 0.4, levels=(1, 2, 3), seed=seed)
        g = build_graph(ds)
        rng = np.random.default_rng(seed)
        x, y = rng.normal(size=(2, g.n_nodes, 3))
        mask = sample_dropout(0.3, 0.0, 1, g.n_nodes, rng).sender_scale(1)
        for t in range(g.n_levels):
            lhs = propagate(alpha * x + beta * y, g, t, mask)
            rhs = alpha * propagate(x, g, t, mask) + beta * propagate(y, g, t, mask)
            np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    @settings(max_examples=40, deadline=None)
    @given(st.integers(1, 8), st.integers(1, 8), st.integers(0, 10_000))
    def test_partition_and_symmetry(self, nu, ni, seed):
        ds = random_dataset(nu, ni, 0.5, seed=seed)
        g = build_graph(ds)
        assert sum(lv.n_edges for lv in g.levels) == len(ds)
        for t in range(g.n_levels):
            a = _dense(g, t)
            np.testing.assert_array_equal(a, a.T)
