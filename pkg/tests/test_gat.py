import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from gafrnet.autodiff import DimensionError, Param, Tape, gradcheck
from gafrnet.gat import GatLayerParams, dense_forward, gat_forward, init_layer, stack_layers
from gafrnet.simgraph import from_edges
from oracles import dense_gat_layer, elu, random_adjacency


def adjacency(g):
    adj = np.zeros((g.n, g.n), dtype=bool)
    for u, v in g.edges():
        adj[u, v] = adj[v, u] = True
    return adj


def layer_values(layer):
    return [W.value for W in layer.W], [a.value for a in layer.a]


def dense_coefs(alphas, dst, src):
    return np.stack([al[dst, src] for al in alphas], axis=1)


def test_self_only_node():
    rng = np.random.default_rng(0)
    g = from_edges(3, [(0, 1)])
    layer = init_layer(rng, 4, 3, 2, "concat", "t")
    h = rng.normal(size=(3, 4))
    t = Tape()
    out, coef = gat_forward(t, t.const(h), g, layer)
    dst, src = g.attention_pairs()
    assert coef[(dst == 2) & (src == 2)].tolist() == [[1.0, 1.0]]
    expect = np.concatenate([elu(h[2] @ W.value) for W in layer.W])
    np.testing.assert_allclose(out.value[2], expect, rtol=1e-14)


def test_identical_neighbors_get_uniform_attention():
    rng = np.random.default_rng(1)
    g = from_edges(4, [(0, 1), (0, 2), (0, 3)])
    layer = init_layer(rng, 3, 2, 3, "mean", "t")
    h = np.tile(rng.normal(size=3), (4, 1))
    t = Tape()
    _, coef = gat_forward(t, t.const(h), g, layer)
    dst, _ = g.attention_pairs()
    np.testing.assert_allclose(coef[dst == 0], 0.25, atol=1e-15)


def test_zero_attention_vector_is_uniform():
    rng = np.random.default_rng(2)
    g = from_edges(5, [(0, 1), (0, 2), (1, 2), (3, 4)])
    layer = init_layer(rng, 3, 2, 2, "mean", "t")
    for a in layer.a:
        a.value[:] = 0.0
    t = Tape()
    _, coef = gat_forward(t, t.const(rng.normal(size=(5, 3))), g, layer)
    dst, _ = g.attention_pairs()
    counts = np.bincount(dst)
    np.testing.assert_allclose(coef, (1.0 / counts[dst])[:, None].repeat(2, 1), atol=1e-15)


@pytest.mark.parametrize("combine", ["concat", "mean"])
@pytest.mark.parametrize("uniform", [False, True])
def test_five_node_layer_matches_dense_oracle(combine, uniform):
    rng = np.random.default_rng(5)
    g = from_edges(5, [(0, 1), (1, 2), (2, 0), (2, 3)])  # node 4 isolated
    layer = init_layer(rng, 4, 3, 2, combine, "t")
    h = rng.normal(size=(5, 4))
    t = Tape()
    out, coef = gat_forward(t, t.const(h), g, layer, uniform=uniform)
    want, alphas = dense_gat_layer(h, adjacency(g), *layer_values(layer), combine, uniform=uniform)
    np.testing.assert_allclose(out.value, want, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(coef, dense_coefs(alphas, *g.attention_pairs()), rtol=1e-12)


def test_two_layers_on_twelve_nodes_match_dense_oracle():
    rng = np.random.default_rng(12)
    adj = random_adjacency(rng, 12, 0.25)
    g = from_edges(12, [(u, v) for u in range(12) for v in range(u + 1, 12) if adj[u, v]])
    l0 = init_layer(rng, 5, 4, 3, "concat", "l0")
    l1 = init_layer(rng, 12, 4, 3, "mean", "l1")
    h = rng.normal(size=(12, 5))
    t = Tape()
    out, rec = stack_layers(t, t.const(h), g, [l0, l1])
    mid, a0 = dense_gat_layer(h, adj, *layer_values(l0), "concat")
    want, a1 = dense_gat_layer(mid, adj, *layer_values(l1), "mean")
    np.testing.assert_allclose(out.value, want, rtol=1e-12, atol=1e-14)
    np.testing.assert_allclose(rec.layers[0], dense_coefs(a0, rec.dst, rec.src), rtol=1e-12)
    np.testing.assert_allclose(rec.layers[1], dense_coefs(a1, rec.dst, rec.src), rtol=1e-12)


def test_without_self_loops_matches_oracle():
    rng = np.random.default_rng(3)
    g = from_edges(4, [(0, 1), (1, 2), (2, 3)], self_loops=False)
    layer = init_layer(rng, 2, 2, 1, "mean", "t")
    h = rng.normal(size=(4, 2))
    t = Tape()
    out, _ = gat_forward(t, t.const(h), g, layer)
    want, _ = dense_gat_layer(h, adjacency(g), *layer_values(layer), "mean", self_loops=False)
    np.testing.assert_allclose(out.value, want, rtol=1e-12)


def test_zero_layers_identity_and_one_layer_equals_forward():
    rng = np.random.default_rng(4)
    g = from_edges(4, [(0, 1), (2, 3)])
    h = rng.normal(size=(4, 3))
    t = Tape()
    out, rec = stack_layers(t, t.const(h), g, [])
    np.testing.assert_array_equal(out.value, h)
    assert rec.layers == []
    layer = init_layer(rng, 3, 2, 2, "mean", "t")
    t1, t2 = Tape(), Tape()
    a, _ = stack_layers(t1, t1.const(h), g, [layer])
    b, _ = gat_forward(t2, t2.const(h), g, layer)
    np.testing.assert_array_equal(a.value, b.value)


def test_dense_forward_is_self_attention():
    rng = np.random.default_rng(6)
    layer = init_layer(rng, 3, 2, 2, "concat", "t")
    h = rng.normal(size=(5, 3))
    t = Tape()
    out = dense_forward(t, t.const(h), layer)
    want, _ = dense_gat_layer(h, np.zeros((5, 5)), *layer_values(layer), "concat")
    np.testing.assert_allclose(out.value, want, rtol=1e-14)


def test_shape_contracts():
    rng = np.random.default_rng(0)
    layer = init_layer(rng, 3, 2, 2, "concat", "t")
    assert (layer.heads, layer.d_in, layer.d_head, layer.d_out) == (2, 3, 2, 4)
    assert init_layer(rng, 3, 2, 2, "mean", "t").d_out == 2
    g = from_edges(3, [])
    t = Tape()
    with pytest.raises(DimensionError):
        gat_forward(t, t.const(np.ones((3, 4))), g, layer)
    with pytest.raises(ValueError):
        GatLayerParams([], [])
    with pytest.raises(DimensionError):
        GatLayerParams([Param("W", np.ones((3, 2)))], [Param("a", np.ones((3, 1)))])


@given(st.integers(2, 15), st.floats(0.0, 0.6), st.integers(1, 3), st.integers(0, 10**6))
def test_attention_normalized_and_equivariant(n, p, heads, seed):
    rng = np.random.default_rng(seed)
    adj = random_adjacency(rng, n, p)
    edges = [(u, v) for u in range(n) for v in range(u + 1, n) if adj[u, v]]
    layer = init_layer(rng, 3, 2, heads, "concat", "t")
    h = rng.normal(0, 3, size=(n, 3))
    t = Tape()
    out, coef = gat_forward(t, t.const(h), from_edges(n, edges), layer)
    dst, _ = from_edges(n, edges).attention_pairs()
    sums = np.zeros((n, heads))
    np.add.at(sums, dst, coef)
    np.testing.assert_allclose(sums, 1.0, atol=1e-9)
    assert (coef >= 0).all()

    perm = rng.permutation(n)
    inv = np.argsort(perm)
    pedges = [(inv[u], inv[v]) for u, v in edges]
    t2 = Tape()
    pout, _ = gat_forward(t2, t2.const(h[perm]), from_edges(n, pedges), layer)
    np.testing.assert_allclose(pout.value, out.value[perm], rtol=1e-11, atol=1e-13)


def test_layer_params_pass_gradcheck():
    rng = np.random.default_rng(9)
    adj = random_adjacency(rng, 12, 0.3)
    g = from_edges(12, [(u, v) for u in range(12) for v in range(u + 1, 12) if adj[u, v]])
    layers = [init_layer(rng, 4, 3, 2, "concat", "l0"), init_layer(rng, 6, 3, 2, "mean", "l1")]
    h = rng.normal(size=(12, 4))
    target = rng.normal(size=(12, 3))

    def f(t):
        out, _ = stack_layers(t, t.const(h), g, layers)
        return t.sum(t.square(t.add(out, t.const(-target))))

    params = [p for layer in layers for p in layer.params()]
    report = gradcheck(f, params, probe_count=6, rng=np.random.default_rng(0))
    assert all(r.passed for r in report), [(r.name, r.max_rel_error) for r in report]
