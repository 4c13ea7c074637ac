"""Exact betweenness accumulation (Brandes) over CSR adjacency.

The hop-count kernel is compiled with numba. Sources are split into a fixed
number of contiguous chunks, each accumulating into its own row, and the rows
are summed in chunk order, so the result does not depend on thread scheduling.
Cost is O(|V|·|E|) time and O(chunks·|V|) memory.

Both entry points return the *ordered-pair* dependency sum: every unordered
pair (s, t) contributes twice. Divide by (n-1)(n-2) to normalize to [0, 1].
"""

from __future__ import annotations

import heapq
import math

import numba as nb
import numpy as np

CHUNKS = 64

# skip probing an outdated TBB (it only produces a warning) when others exist
nb.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]


@nb.njit(cache=True)
def _accumulate(indptr, indices, lo, hi, out):
    n = indptr.shape[0] - 1
    dist = np.empty(n, np.int32)
    sigma = np.empty(n, np.float64)
    delta = np.empty(n, np.float64)
    order = np.empty(n, np.int32)
    for s in range(lo, hi):
        dist[:] = -1
        sigma[:] = 0.0
        delta[:] = 0.0
        dist[s] = 0
        sigma[s] = 1.0
        order[0] = s
        head = 0
        tail = 1
        while head < tail:
            v = order[head]
            head += 1
            dv = dist[v] + 1
            sv = sigma[v]
            for k in range(indptr[v], indptr[v + 1]):
                w = indices[k]
                if dist[w] < 0:
                    dist[w] = dv
                    order[tail] = w
                    tail += 1
                if dist[w] == dv:
                    sigma[w] += sv
        for i in range(tail - 1, 0, -1):
            w = order[i]
            dw = dist[w] - 1
            coeff = (1.0 + delta[w]) / sigma[w]
            for k in range(indptr[w], indptr[w + 1]):
                v = indices[k]
                if dist[v] == dw:
                    delta[v] += sigma[v] * coeff
            out[w] += delta[w]


@nb.njit(parallel=True, cache=True)
def _chunked(indptr, indices, bounds, parts):
    for c in nb.prange(parts.shape[0]):
        _accumulate(indptr, indices, bounds[c], bounds[c + 1], parts[c])


def hop_dependencies(indptr: np.ndarray, indices: np.ndarray) -> np.ndarray:
    """Ordered-pair betweenness sums for an unweighted undirected CSR graph."""
    n = len(indptr) - 1
    if n == 0:
        return np.zeros(0)
    chunks = min(CHUNKS, n)
    bounds = np.linspace(0, n, chunks + 1).round().astype(np.int64)
    parts = np.zeros((chunks, n))
    _chunked(np.ascontiguousarray(indptr, dtype=np.int64),
             np.ascontiguousarray(indices, dtype=np.int32), bounds, parts)
    return parts.sum(axis=0)


def weighted_dependencies(n: int, adjacency: list[list[tuple[int, float]]],
                          rel_tol: float = 1e-12) -> np.ndarray:
    """Ordered-pair betweenness sums with positive edge lengths (Dijkstra variant).

    Path lengths within ``rel_tol`` of each other count as equal, so float
    noise in 1/weight sums does not split tied shortest paths.
    """
    out = np.zeros(n)
    for s in range(n):
        dist = [math.inf] * n
        sigma = [0.0] * n
        preds: list[list[int]] = [[] for _ in range(n)]
        dist[s] = 0.0
        sigma[s] = 1.0
        order = []
        done = [False] * n
        heap = [(0.0, s)]
        while heap:
            d, v = heapq.heappop(heap)
            if done[v]:
                continue
            done[v] = True
            order.append(v)
            for w, length in adjacency[v]:
                nd = d + length
                tol = rel_tol * max(nd, 1.0)
                if dist[w] == math.inf or nd < dist[w] - tol:
                    dist[w] = nd
                    sigma[w] = sigma[v]
                    preds[w] = [v]
                    heapq.heappush(heap, (nd, w))
                elif abs(nd - dist[w]) <= tol and not done[w]:
                    sigma[w] += sigma[v]
                    preds[w].append(v)
        delta = [0.0] * n
        for w in reversed(order):
            for v in preds[w]:
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w])
            if w != s:
                out[w] += delta[w]
    return out
