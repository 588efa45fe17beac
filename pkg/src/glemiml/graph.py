"""Mutual-KNN graphs with Gaussian edge weights, Laplacians, and propagation.

The feature-producing interaction used by the enhancer is adjacency-weighted
neighbor aggregation (``propagate_embeddings``); the scalar quadratic form over
the Laplacian is kept as the ``smoothness_energy`` diagnostic.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NumericError, ShapeError

WIDTH_FLOOR = 1e-8

# Instrumented so ablations can prove the instance-graph branch never runs.
_build_count = 0


def graph_build_count() -> int:
    return _build_count


def reset_graph_build_count() -> None:
    global _build_count
    _build_count = 0


@dataclass(frozen=True)
class WeightedGraph:
    adjacency: np.ndarray  # (n, n) symmetric, zero diagonal, entries in [0, 1]
    width: float
    k_neighbors: int

    @property
    def num_nodes(self) -> int:
        return self.adjacency.shape[0]


@dataclass(frozen=True)
class LaplacianMatrix:
    matrix: np.ndarray  # degree minus adjacency


def pairwise_sq_dists(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def median_width(points: np.ndarray) -> float:
    """Median of squared pairwise distances, floored; 1.0 when < 2 points."""
    n = points.shape[0]
    if n < 2:
        return 1.0
    d2 = pairwise_sq_dists(points)
    vals = d2[np.triu_indices(n, k=1)]
    return float(max(np.median(vals), WIDTH_FLOOR))


def _mutual_mask(d2: np.ndarray, k: int) -> np.ndarray:
    """Symmetric boolean mask of mutually-K-nearest pairs (self excluded)."""
    n = d2.shape[0]
    k = min(k, n - 1)
    if k < 1:
        return np.zeros((n, n), dtype=bool)
    d2_self = d2 + np.diag(np.full(n, np.inf))
    order = np.argsort(d2_self, axis=1, kind="stable")
    nbr = np.zeros((n, n), dtype=bool)
    rows = np.repeat(np.arange(n), k)
    nbr[rows, order[:, :k].ravel()] = True
    return nbr & nbr.T


def mutual_knn_adjacency(points: np.ndarray, k: int, width: float) -> WeightedGraph:
    """Gaussian-weighted mutual-KNN adjacency; K is clamped to n-1 internally."""
    global _build_count
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2 or points.shape[0] < 1:
        raise ShapeError("points must be a non-empty 2-D matrix")
    if not np.all(np.isfinite(points)):
        raise NumericError("points contain non-finite values")
    if width <= 0:
        raise ConfigError(f"width must be positive, got {width!r}")
    if k < 1:
        raise ConfigError(f"k must be >= 1, got {k}")
    _build_count += 1
    d2 = pairwise_sq_dists(points)
    mask = _mutual_mask(d2, k)
    adj = np.where(mask, np.exp(-d2 / (2.0 * width)), 0.0)
    np.fill_diagonal(adj, 0.0)
    return WeightedGraph(adjacency=adj, width=float(width), k_neighbors=int(k))


def laplacian(g: WeightedGraph) -> LaplacianMatrix:
    adj = g.adjacency
    return LaplacianMatrix(matrix=np.diag(adj.sum(axis=1)) - adj)


def propagate_embeddings(embeddings: np.ndarray, g: WeightedGraph) -> np.ndarray:
    """Adjacency-weighted neighbor aggregation: row k becomes sum_m a_km * row m."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.shape[0] != g.num_nodes:
        raise ShapeError(
            f"embedding rows {embeddings.shape[0]} != graph nodes {g.num_nodes}"
        )
    return g.adjacency @ embeddings


def smoothness_energy(embeddings: np.ndarray, lap: LaplacianMatrix) -> float:
    """trace(E^T L E); equals half the weighted sum of squared neighbor gaps."""
    embeddings = np.asarray(embeddings, dtype=np.float64)
    if embeddings.shape[0] != lap.matrix.shape[0]:
        raise ShapeError(
            f"embedding rows {embeddings.shape[0]} != Laplacian size {lap.matrix.shape[0]}"
        )
    return float(np.trace(embeddings.T @ lap.matrix @ embeddings))


def mutual_knn_median(points: np.ndarray, k: int):
    """Adjacency with the median-heuristic width, plus a cache for backprop.

    Returns (adjacency, cache). The cache records everything needed to push a
    gradient on the adjacency entries back onto the input points, including the
    dependence of the width on the median pairwise squared distance.
    """
    global _build_count
    _build_count += 1
    points = np.asarray(points, dtype=np.float64)
    n = points.shape[0]
    if n < 2:
        return np.zeros((n, n)), {"n": n, "points": points}
    d2 = pairwise_sq_dists(points)
    iu = np.triu_indices(n, k=1)
    vals = d2[iu]
    order = np.argsort(vals, kind="stable")
    m = len(vals)
    if m % 2 == 1:
        med_pairs = [(iu[0][order[m // 2]], iu[1][order[m // 2]], 1.0)]
        med_raw = vals[order[m // 2]]
    else:
        lo, hi = order[m // 2 - 1], order[m // 2]
        med_pairs = [(iu[0][lo], iu[1][lo], 0.5), (iu[0][hi], iu[1][hi], 0.5)]
        med_raw = 0.5 * (vals[lo] + vals[hi])
    floored = med_raw < WIDTH_FLOOR
    width = max(float(med_raw), WIDTH_FLOOR)

    mask = _mutual_mask(d2, k)
    adj = np.where(mask, np.exp(-d2 / (2.0 * width)), 0.0)
    np.fill_diagonal(adj, 0.0)
    cache = {
        "n": n, "points": points, "d2": d2, "mask": mask, "adj": adj,
        "width": width, "med_pairs": med_pairs, "floored": floored,
    }
    return adj, cache


def mutual_knn_median_backward(cache, grad_adj: np.ndarray) -> np.ndarray:
    """Gradient of a scalar through the adjacency back to the input points.

    The KNN selection and the median choice are treated as locally constant
    (both are piecewise constant in the points); the Gaussian weights and the
    median width itself are differentiated exactly.
    """
    n = cache["n"]
    if n < 2:
        return np.zeros_like(cache["points"])
    points, d2 = cache["points"], cache["d2"]
    mask, adj, width = cache["mask"], cache["adj"], cache["width"]

    g_masked = np.where(mask, grad_adj, 0.0)
    # direct dependence: a = exp(-d2 / (2 w))  =>  da/dd2 = -a / (2 w)
    g_d2 = g_masked * adj * (-1.0 / (2.0 * width))
    if not cache["floored"]:
        # width dependence: da/dw = a * d2 / (2 w^2), routed to the median pair(s)
        g_width = float(np.sum(g_masked * adj * d2) / (2.0 * width * width))
        for (a_idx, b_idx, w) in cache["med_pairs"]:
            g_d2[a_idx, b_idx] += w * g_width
    # d d2[k,m] / d p_k = 2 (p_k - p_m); both (k,m) and (m,k) entries contribute
    sym = g_d2 + g_d2.T
    return 2.0 * (sym.sum(axis=1)[:, None] * points - sym @ points)
