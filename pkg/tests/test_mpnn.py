import numpy as np
import numpy.testing as npt
import pytest

from gmamba.errors import ConfigError
from gmamba.mpnn import gatedgcn_forward, init_gatedgcn_params
from gmamba import ops

from oracles import dense_gatedgcn


def random_graph_edges(rng, num_nodes, num_undirected):
    pairs = set()
    while len(pairs) < num_undirected:
        a, b = rng.integers(num_nodes, size=2)
        if a != b:
            pairs.add((int(min(a, b)), int(max(a, b))))
    edges = sorted(pairs)
    edges = edges + [(b, a) for a, b in edges]
    return np.asarray(edges, dtype=np.int64)


def setup(rng, num_nodes=5, num_undirected=6, d=4):
    edges = random_graph_edges(rng, num_nodes, num_undirected)
    params = init_gatedgcn_params(d, rng)
    x = rng.standard_normal((num_nodes, d))
    e = rng.standard_normal((len(edges), d))
    return x, e, edges, params


def test_matches_dense_oracle():
    rng = np.random.default_rng(0)
    x, e, edges, p = setup(rng)
    x_hat, e_hat, _ = gatedgcn_forward(x, e, edges, p)
    ox, oe = dense_gatedgcn(
        x, e, [tuple(row) for row in edges],
        p.u.data, p.v.data, p.p.data, p.q.data, p.r.data, p.b_e.data,
        p.ln_g.data, p.ln_b.data,
    )
    npt.assert_allclose(x_hat, ox, atol=1e-12)
    npt.assert_allclose(e_hat, oe, atol=1e-12)


def test_zero_edge_graph():
    rng = np.random.default_rng(1)
    d = 3
    p = init_gatedgcn_params(d, rng)
    x = rng.standard_normal((4, d))
    e = np.zeros((0, d))
    x_hat, e_hat, _ = gatedgcn_forward(x, e, np.zeros((0, 2), dtype=np.int64), p)
    pre, _ = ops.linear(x, p.u.data)
    normed, _ = ops.layer_norm(pre, p.ln_g.data, p.ln_b.data)
    npt.assert_allclose(x_hat, np.maximum(normed, 0.0), atol=1e-14)
    assert e_hat.shape == (0, d)


def test_single_directed_edge_only_updates_destination_aggregate():
    rng = np.random.default_rng(2)
    d = 3
    p = init_gatedgcn_params(d, rng)
    x = rng.standard_normal((2, d))
    e = rng.standard_normal((1, d))
    edges = np.array([[0, 1]], dtype=np.int64)
    x_hat, _, _ = gatedgcn_forward(x, e, edges, p)
    # node 0 must equal its no-aggregation form; node 1 must not
    pre0, _ = ops.linear(x, p.u.data)
    normed, _ = ops.layer_norm(pre0, p.ln_g.data, p.ln_b.data)
    iso = np.maximum(normed, 0.0)
    npt.assert_allclose(x_hat[0], iso[0], atol=1e-14)
    assert not np.allclose(x_hat[1], iso[1])


def test_dangling_edge_rejected():
    rng = np.random.default_rng(3)
    p = init_gatedgcn_params(2, rng)
    with pytest.raises(ConfigError, match="dangling"):
        gatedgcn_forward(np.zeros((2, 2)), np.zeros((1, 2)),
                         np.array([[0, 2]]), p)


def test_gate_normalization_bounded():
    rng = np.random.default_rng(4)
    x, e, edges, p = setup(rng, num_nodes=6, num_undirected=8)
    e_hat, = [gatedgcn_forward(x, e, edges, p)[1]]
    sig = 1.0 / (1.0 + np.exp(-e_hat))
    denom = np.full((6, e_hat.shape[1]), 1e-6)
    np.add.at(denom, edges[:, 1], sig)
    eta = sig / denom[edges[:, 1]]
    sums = np.zeros_like(denom)
    np.add.at(sums, edges[:, 1], eta)
    in_deg = np.bincount(edges[:, 1], minlength=6)
    with_neighbors = in_deg > 0
    assert np.all(sums[with_neighbors] > 0.0)
    assert np.all(sums[with_neighbors] <= 1.0)


def test_permutation_equivariance_exact():
    rng = np.random.default_rng(5)
    x, e, edges, p = setup(rng, num_nodes=6, num_undirected=7)
    x_hat, e_hat, _ = gatedgcn_forward(x, e, edges, p)
    perm = rng.permutation(6)
    edges2 = np.stack([perm[edges[:, 0]], perm[edges[:, 1]]], axis=1)
    x2 = np.empty_like(x)
    x2[perm] = x
    x_hat2, e_hat2, _ = gatedgcn_forward(x2, e, edges2, p)
    npt.assert_array_equal(x_hat2[perm], x_hat)
    npt.assert_array_equal(e_hat2, e_hat)


def test_locality():
    rng = np.random.default_rng(6)
    d = 3
    p = init_gatedgcn_params(d, rng)
    # path 0-1-2-3 stored both directions
    edges = np.array([[0, 1], [1, 0], [1, 2], [2, 1], [2, 3], [3, 2]])
    x = rng.standard_normal((4, d))
    e = rng.standard_normal((len(edges), d))
    base, _, _ = gatedgcn_forward(x, e, edges, p)
    x2 = x.copy()
    x2[3] += 5.0
    pert, _, _ = gatedgcn_forward(x2, e, edges, p)
    # nodes 0 and 1 are not adjacent to 3: unchanged
    npt.assert_array_equal(base[0], pert[0])
    npt.assert_array_equal(base[1], pert[1])
    assert not np.allclose(base[2], pert[2])


def test_grad_check_small_graph():
    rng = np.random.default_rng(7)
    x, e, edges, p = setup(rng, num_nodes=4, num_undirected=4, d=3)
    proj_x = rng.standard_normal(x.shape)
    proj_e = rng.standard_normal(e.shape)
    tensors = [p.u, p.v, p.p, p.q, p.r, p.b_e, p.ln_g, p.ln_b]

    def f():
        xh, eh, _ = gatedgcn_forward(x, e, edges, p)
        return float((xh * proj_x).sum() + (eh * proj_e).sum())

    xh, eh, bwd = gatedgcn_forward(x, e, edges, p)
    dx, de = bwd(proj_x, proj_e)
    arrays = [x, e] + [t.data for t in tensors]
    analytic = [dx, de] + [t.grad for t in tensors]
    assert ops.grad_check(f, arrays, analytic) < 1e-5


def test_zero_upstream_zero_grads():
    rng = np.random.default_rng(8)
    x, e, edges, p = setup(rng, num_nodes=4, num_undirected=4, d=3)
    _, _, bwd = gatedgcn_forward(x, e, edges, p)
    dx, de = bwd(np.zeros_like(x), np.zeros_like(e))
    npt.assert_array_equal(dx, 0.0)
    npt.assert_array_equal(de, 0.0)
    for t in (p.u, p.v, p.p, p.q, p.r):
        npt.assert_array_equal(t.grad, 0.0)


def test_isolated_node_excludes_aggregation_grads():
    rng = np.random.default_rng(9)
    d = 3
    p = init_gatedgcn_params(d, rng)
    # node 2 is isolated
    edges = np.array([[0, 1], [1, 0]])
    x = rng.standard_normal((3, d))
    e = rng.standard_normal((2, d))
    _, _, bwd = gatedgcn_forward(x, e, edges, p)
    # only node 2's output gradient set: V receives no gradient (no messages)
    dx_hat = np.zeros((3, d))
    dx_hat[2] = 1.0
    bwd(dx_hat, np.zeros_like(e))
    npt.assert_array_equal(p.v.grad, 0.0)
    npt.assert_array_equal(p.p.grad, 0.0)
    assert np.any(p.u.grad != 0.0)
