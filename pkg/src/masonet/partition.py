"""Input-space partition analytics.

The joint VQ codes of the selector layers tile the input space into
regions on which the network is one fixed affine map.  This module scans
lattices and datasets for the distinct codes they touch, counts region
occupancy, and measures closeness of two inputs by the fraction of units
whose codes disagree (a normalized Hamming distance, hence a
pseudometric; two inputs at distance 0 share every selected region).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .layers import Network, network_forward_batch
from .maso import HardSelection
from .ndcore import DomainError, ShapeError, Tensor, as_tensor

__all__ = [
    "LayerCode",
    "RegionTable",
    "layer_codes_batch",
    "layer_code",
    "grid_scan",
    "region_stats",
    "vq_distance",
    "nearest_neighbors",
]


@dataclass(frozen=True)
class LayerCode:
    """Hard selections of the selector layers inside one layer prefix."""

    codes: tuple

    def __post_init__(self):
        entries = tuple(
            c if isinstance(c, HardSelection) else HardSelection(np.asarray(c))
            for c in self.codes
        )
        object.__setattr__(self, "codes", entries)

    def flat(self) -> np.ndarray:
        if not self.codes:
            return np.zeros(0, dtype=np.int64)
        return np.concatenate([c.codes for c in self.codes])


@dataclass
class RegionTable:
    """Distinct joint codes with occupancy counts and a representative.

    entries maps the flattened code tuple to {"count", "representative"},
    the representative being the lowest scan index that produced the code.
    total is the number of scanned points (the counts sum to it).
    """

    entries: dict
    total: int


def _code_matrix(net: Network, X: Tensor, layer_prefix: int) -> np.ndarray:
    """(n, total units) int matrix of selector codes within the prefix."""
    if not 0 <= layer_prefix <= len(net.layers):
        raise ShapeError(
            f"layer prefix {layer_prefix} out of range for {len(net.layers)} layers"
        )
    _, codes = network_forward_batch(net, X)
    selected = [c for c in codes[:layer_prefix] if c is not None]
    if not selected:
        return np.zeros((X.shape[0], 0), dtype=np.int64)
    return np.concatenate(selected, axis=1)


def layer_codes_batch(net: Network, X: Tensor, layer_prefix: int) -> np.ndarray:
    """Concatenated selector codes per row of X, within the layer prefix."""
    X = as_tensor(X)
    if X.ndim != 2:
        raise ShapeError(f"expected a 2-D dataset, got shape {X.shape}")
    return _code_matrix(net, X, layer_prefix)


def layer_code(net: Network, x: Tensor, layer_prefix: int) -> LayerCode:
    """The LayerCode of one input under the first `layer_prefix` layers."""
    x = as_tensor(x).reshape(1, -1)
    if not 0 <= layer_prefix <= len(net.layers):
        raise ShapeError(
            f"layer prefix {layer_prefix} out of range for {len(net.layers)} layers"
        )
    _, codes = network_forward_batch(net, x)
    return LayerCode(
        tuple(HardSelection(c[0]) for c in codes[:layer_prefix] if c is not None)
    )


def grid_scan(net: Network, bounds, resolution, layer_prefix: int):
    """Joint codes on a rectangular lattice.

    bounds is one [lo, hi] pair per input dimension (at most 3 dimensions,
    this is a visualization-scale scan) and resolution the per-dimension
    point count (scalar or one per dimension, at least 2).  Returns
    (RegionTable, points, code_ids): the lattice in row-major order and,
    per point, the id of its code.  Ids are ranks in the lexicographic
    order of the distinct code tuples, so they do not depend on traversal
    order.
    """
    bounds = [(float(lo), float(hi)) for lo, hi in bounds]
    d = len(bounds)
    if d < 1 or d > 3:
        raise DomainError(f"grid scans support 1 to 3 input dimensions, got {d}")
    if d != net.dims[0]:
        raise ShapeError(f"network expects {net.dims[0]} input dims, bounds give {d}")
    res = np.broadcast_to(np.asarray(resolution, dtype=np.int64), (d,))
    if np.any(res < 2):
        raise DomainError("resolution must be at least 2 points per dimension")
    axes = [np.linspace(lo, hi, r) for (lo, hi), r in zip(bounds, res)]
    mesh = np.meshgrid(*axes, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    mat = _code_matrix(net, points, layer_prefix)
    table, ids = _tabulate(mat)
    return table, points, ids


def _tabulate(mat: np.ndarray) -> tuple[RegionTable, np.ndarray]:
    n = mat.shape[0]
    if mat.shape[1] == 0:
        entries = {(): {"count": n, "representative": 0}}
        return RegionTable(entries, n), np.zeros(n, dtype=np.int64)
    uniq, ids, counts = np.unique(mat, axis=0, return_inverse=True, return_counts=True)
    first = np.full(uniq.shape[0], n, dtype=np.int64)
    np.minimum.at(first, ids, np.arange(n))
    entries = {
        tuple(int(v) for v in uniq[i]): {"count": int(counts[i]), "representative": int(first[i])}
        for i in range(uniq.shape[0])
    }
    return RegionTable(entries, n), ids.astype(np.int64)


def region_stats(net: Network, dataset: Tensor, layer_prefix: int) -> dict:
    """Distinct-code count and descending occupancy histogram of a dataset."""
    X = as_tensor(dataset)
    if X.ndim != 2 or X.shape[0] < 1:
        raise ShapeError("dataset must be a nonempty (n, D) array")
    mat = _code_matrix(net, X, layer_prefix)
    table, _ = _tabulate(mat)
    hist = sorted((e["count"] for e in table.entries.values()), reverse=True)
    return {"nonempty_count": len(table.entries), "histogram": hist}


def vq_distance(c1: LayerCode, c2: LayerCode) -> float:
    """Fraction of units whose codes differ; 0 iff every code agrees."""
    a, b = c1.flat(), c2.flat()
    if a.shape != b.shape:
        raise ShapeError(f"code shapes differ: {a.shape} vs {b.shape}")
    if a.size == 0:
        return 0.0
    return float(np.mean(a != b))


def nearest_neighbors(
    net: Network, layer: int, query_index: int, dataset: Tensor, k: int
) -> list:
    """Indices of the k nearest dataset points in code distance at a layer.

    Ties are broken by input-space Euclidean distance, then by index; the
    query point itself is excluded.
    """
    X = as_tensor(dataset)
    if X.ndim != 2:
        raise ShapeError(f"expected a 2-D dataset, got shape {X.shape}")
    n = X.shape[0]
    if not 0 <= query_index < n:
        raise DomainError(f"query index {query_index} out of range")
    if k > n - 1:
        raise DomainError(f"asked for {k} neighbors among {n - 1} candidates")
    mat = _code_matrix(net, X, layer)
    if mat.shape[1]:
        dist = np.mean(mat != mat[query_index], axis=1)
    else:
        dist = np.zeros(n)
    euclid = np.linalg.norm(X - X[query_index], axis=1)
    order = sorted(
        (i for i in range(n) if i != query_index),
        key=lambda i: (dist[i], euclid[i], i),
    )
    return order[:k]
