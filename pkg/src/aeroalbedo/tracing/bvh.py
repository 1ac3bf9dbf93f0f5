"""Flat bounding-volume hierarchy shared by both tracing backends."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LEAF_SIZE = 4


@dataclass(frozen=True, eq=False)
class FlatBVH:
    # node arrays; a node is a leaf iff count > 0
    bmin: np.ndarray    # (n, 3)
    bmax: np.ndarray    # (n, 3)
    left: np.ndarray    # (n,) int64, -1 for leaves
    right: np.ndarray   # (n,) int64
    start: np.ndarray   # (n,) int64, first triangle slot for leaves
    count: np.ndarray   # (n,) int64
    # triangles in leaf order
    v0: np.ndarray      # (m, 3)
    e1: np.ndarray      # (m, 3)
    e2: np.ndarray      # (m, 3)
    tri_index: np.ndarray  # slot -> original triangle id

    @property
    def n_nodes(self) -> int:
        return len(self.left)


def build_flat_bvh(a, b, c, leaf_size: int = LEAF_SIZE, pad: float = 0.0) -> FlatBVH:
    """Median-split BVH over triangles with corners a, b, c (each (m, 3))."""
    m = len(a)
    tmin = np.minimum(np.minimum(a, b), c)
    tmax = np.maximum(np.maximum(a, b), c)
    cent = (tmin + tmax) * 0.5

    bmin, bmax, left, right, start, count = [], [], [], [], [], []
    order = []

    def new_node():
        bmin.append(None)
        bmax.append(None)
        left.append(-1)
        right.append(-1)
        start.append(0)
        count.append(0)
        return len(left) - 1

    root = new_node()
    stack = [(root, np.arange(m))]
    while stack:
        node, idx = stack.pop()
        bmin[node] = tmin[idx].min(axis=0) - pad
        bmax[node] = tmax[idx].max(axis=0) + pad
        if len(idx) <= leaf_size:
            start[node] = len(order)
            count[node] = len(idx)
            order.extend(idx.tolist())
            continue
        cmin, cmax = cent[idx].min(axis=0), cent[idx].max(axis=0)
        axis = int(np.argmax(cmax - cmin))
        if cmax[axis] - cmin[axis] <= 0.0:
            # coincident centroids: split by position in the list
            srt = idx
        else:
            srt = idx[np.argsort(cent[idx, axis], kind="stable")]
        half = len(srt) // 2
        lo, hi = new_node(), new_node()
        left[node], right[node] = lo, hi
        # push right first so the left subtree is laid out first
        stack.append((hi, srt[half:]))
        stack.append((lo, srt[:half]))

    order = np.asarray(order, dtype=np.int64)
    return FlatBVH(
        bmin=np.ascontiguousarray(bmin, dtype=np.float64),
        bmax=np.ascontiguousarray(bmax, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        start=np.asarray(start, dtype=np.int64),
        count=np.asarray(count, dtype=np.int64),
        v0=np.ascontiguousarray(a[order]),
        e1=np.ascontiguousarray(b[order] - a[order]),
        e2=np.ascontiguousarray(c[order] - a[order]),
        tri_index=order,
    )
