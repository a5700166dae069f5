import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from harfuse import autodiff as ad
from harfuse.autodiff import Tape, Tensor
from harfuse.data import SkeletonTopology, default_topology
from harfuse.gradcheck import grad_check
from harfuse.graph import PoolingMap, build_adjacency, graph_conv, graph_pool

from oracles import sym_norm_adjacency


def topo(J, edges, pooling=None):
    return SkeletonTopology(J, tuple(edges), tuple(pooling or [0] * J))


def test_two_joint_adjacency():
    adj = build_adjacency(topo(2, [(0, 1)]))
    np.testing.assert_allclose(adj.matrix, [[0.5, 0.5], [0.5, 0.5]], atol=1e-6)


def test_three_joint_chain_adjacency():
    m = build_adjacency(topo(3, [(0, 1), (1, 2)])).matrix
    np.testing.assert_allclose(np.diag(m), [1 / 2, 1 / 3, 1 / 2], atol=1e-6)
    assert m[0, 1] == pytest.approx(1 / np.sqrt(6), abs=1e-6)
    assert m[0, 2] == 0


def test_no_edges_gives_identity():
    np.testing.assert_array_equal(build_adjacency(topo(3, [])).matrix, np.eye(3))


@st.composite
def topologies(draw):
    J = draw(st.integers(2, 9))
    pairs = [(i, j) for i in range(J) for j in range(i + 1, J)]
    edges = draw(st.lists(st.sampled_from(pairs), unique=True, max_size=len(pairs)))
    return topo(J, edges)


@given(topologies())
def test_adjacency_matches_loop_oracle(t):
    m = build_adjacency(t).matrix
    np.testing.assert_allclose(m, sym_norm_adjacency(t.joint_count, t.edges), atol=1e-6)
    np.testing.assert_array_equal(m, m.T)


def test_adjacency_records_topology_hash():
    t = default_topology()
    assert build_adjacency(t).source_topology_hash == t.fingerprint()


def test_graph_conv_identity(rng):
    x = rng.normal(size=(3, 4, 2)).astype(np.float32)
    adj = build_adjacency(topo(2, []))
    out = graph_conv(Tensor(x), adj, Tensor(np.eye(3)))
    np.testing.assert_allclose(out.data, x, rtol=1e-6)


def test_graph_conv_constant_features_on_two_joints():
    x = np.full((2, 3, 2), 4.0)
    out = graph_conv(Tensor(x), build_adjacency(topo(2, [(0, 1)])), Tensor(np.eye(2)))
    np.testing.assert_allclose(out.data, x)


def test_graph_conv_matches_einsum(rng):
    t = default_topology()
    adj = build_adjacency(t)
    x, w = rng.normal(size=(3, 5, 8)), rng.normal(size=(4, 3))
    out = graph_conv(Tensor(x), adj, Tensor(w))
    ref = np.einsum("oc,ctj,jk->otk", w, x, adj.matrix.astype(np.float64))
    np.testing.assert_allclose(out.data, ref, rtol=1e-4, atol=1e-5)


def test_graph_conv_grad_wrt_w(rng):
    adj = build_adjacency(topo(3, [(0, 1), (1, 2)]))
    x = Tensor(rng.normal(size=(2, 2, 3)))
    w = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
    c = rng.normal(size=(2, 2, 3))
    assert grad_check(lambda: ad.sum_(ad.mul(graph_conv(x, adj, w), Tensor(c))), [w]) < 1e-3


def test_graph_conv_shape_error():
    with pytest.raises(ad.ShapeError):
        graph_conv(Tensor(np.zeros((2, 3, 4))), build_adjacency(topo(3, [])), Tensor(np.zeros((2, 2))))


def test_pool_pairs_mean():
    pmap = PoolingMap((0, 0, 1, 1), ())
    x = Tensor(np.array([1.0, 3.0, 5.0, 7.0]).reshape(1, 1, 4))
    np.testing.assert_allclose(graph_pool(x, pmap).data.ravel(), [2, 6])


def test_pool_identity_map(rng):
    x = rng.normal(size=(2, 3, 4)).astype(np.float32)
    np.testing.assert_array_equal(graph_pool(Tensor(x), PoolingMap((0, 1, 2, 3), ())).data, x)


def test_pool_backward_splits_gradient():
    pmap = PoolingMap((0, 0, 0, 1), ())
    x = Tensor(np.zeros((1, 1, 4)), requires_grad=True)
    g = np.array([6.0, 5.0])
    with Tape() as tape:
        loss = ad.sum_(ad.mul(graph_pool(x, pmap), Tensor(g.reshape(1, 1, 2))))
    tape.backward(loss)
    np.testing.assert_allclose(x.grad.ravel(), [2, 2, 2, 5])


def test_pooled_topology_of_default():
    pmap = PoolingMap.from_topology(default_topology())
    assert pmap.pooled_count == 4
    assert pmap.pooled_edges == ((0, 1), (0, 2), (0, 3))
    assert pmap.pooled_adjacency().matrix.shape == (4, 4)
