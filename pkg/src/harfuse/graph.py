"""Skeleton graph operators: normalized adjacency, graph convolution, pooling."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import ShapeError, Tensor
from .data import SkeletonTopology


@dataclass(frozen=True)
class NormalizedAdjacency:
    matrix: np.ndarray  # (J, J) float32
    source_topology_hash: str

    @property
    def joints(self) -> int:
        return self.matrix.shape[0]


def adjacency_matrix(joint_count: int, edges) -> np.ndarray:
    """Binary symmetric adjacency without self-loops (float64)."""
    A = np.zeros((joint_count, joint_count))
    for i, j in edges:
        A[i, j] = A[j, i] = 1.0
    return A


def build_adjacency(topology: SkeletonTopology) -> NormalizedAdjacency:
    """``D^-1/2 (A + I) D^-1/2`` with D the degree matrix of ``A + I``."""
    A_hat = adjacency_matrix(topology.joint_count, topology.edges) + np.eye(topology.joint_count)
    d = 1.0 / np.sqrt(A_hat.sum(axis=1))
    norm = d[:, None] * A_hat * d[None, :]
    return NormalizedAdjacency(norm.astype(np.float32), topology.fingerprint())


@dataclass(frozen=True)
class PoolingMap:
    clusters: tuple[int, ...]
    pooled_edges: tuple[tuple[int, int], ...]

    @classmethod
    def from_topology(cls, topology: SkeletonTopology) -> "PoolingMap":
        cl = topology.pooling_map
        edges = set()
        for i, j in topology.edges:
            a, b = cl[i], cl[j]
            if a != b:
                edges.add((min(a, b), max(a, b)))
        return cls(cl, tuple(sorted(edges)))

    @property
    def pooled_count(self) -> int:
        return max(self.clusters) + 1

    def matrix(self) -> np.ndarray:
        """(J, J') averaging matrix; column c holds 1/|c| on its members."""
        J, Jp = len(self.clusters), self.pooled_count
        P = np.zeros((J, Jp))
        P[np.arange(J), self.clusters] = 1.0
        P /= P.sum(axis=0, keepdims=True)
        return P.astype(np.float32)

    def pooled_topology(self) -> SkeletonTopology:
        # singleton pooling map: the pooled graph is not pooled again
        Jp = self.pooled_count
        return SkeletonTopology(Jp, self.pooled_edges, tuple([0] * Jp) if Jp > 1 else (0,))

    def pooled_adjacency(self) -> NormalizedAdjacency:
        return build_adjacency(self.pooled_topology())


def graph_conv(x: Tensor, adj: NormalizedAdjacency, w: Tensor) -> Tensor:
    """Per frame ``W @ X[:, t, :] @ A`` for ``x`` of shape (C_in, T, J)."""
    if x.ndim != 3 or w.ndim != 2 or w.shape[1] != x.shape[0] or x.shape[2] != adj.joints:
        raise ShapeError(
            f"graph_conv shapes: x={x.shape}, w={w.shape}, adjacency={adj.matrix.shape}"
        )
    c_in, T, J = x.shape
    mixed = ad.matmul(w, ad.reshape(x, (c_in, T * J)))
    out = ad.matmul(ad.reshape(mixed, (w.shape[0] * T, J)), Tensor(adj.matrix))
    return ad.reshape(out, (w.shape[0], T, J))


def graph_pool(x: Tensor, pmap: PoolingMap) -> Tensor:
    """Mean over the joints of each cluster: (C, T, J) -> (C, T, J')."""
    if x.ndim != 3 or x.shape[2] != len(pmap.clusters):
        raise ShapeError(f"graph_pool input {x.shape} does not match {len(pmap.clusters)} joints")
    C, T, J = x.shape
    out = ad.matmul(ad.reshape(x, (C * T, J)), Tensor(pmap.matrix()))
    return ad.reshape(out, (C, T, pmap.pooled_count))
