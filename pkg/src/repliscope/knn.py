"""Exact Euclidean nearest neighbours by blocked distance computation.

Squared distances are first screened tile by tile with the expansion
``|x|^2 + |y|^2 - 2 x.y`` in float64. Every reference that could still be
among the answers once the expansion's rounding error is accounted for is
then re-measured directly as ``sum((x - y)^2)``. Reported distances and the
index tie-break therefore come from the direct computation only, which makes
results exact (duplicate rows give exactly 0) and independent of BLAS
threading or the number of workers.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .vecstore import VectorDataset

QUERY_TILE = 256
REF_TILE = 4096
_EPS = np.finfo(np.float64).eps


@dataclass(frozen=True)
class MinDistanceResult:
    distances: np.ndarray  # (n_queries,) float64
    indices: np.ndarray  # (n_queries,) int64

    def __len__(self):
        return len(self.distances)


@dataclass(frozen=True)
class NeighborTable:
    """Per-query neighbours sorted by (distance, index)."""

    indices: np.ndarray  # (query_count, k) int64
    distances: np.ndarray  # (query_count, k) float64

    @property
    def query_count(self) -> int:
        return self.indices.shape[0]

    @property
    def k(self) -> int:
        return self.indices.shape[1]

    def entries(self, i: int) -> list:
        return list(zip(self.indices[i].tolist(), self.distances[i].tolist()))


def resolve_workers(workers) -> int:
    if workers is None or workers <= 0:
        return os.cpu_count() or 1
    return int(workers)


def _check_compatible(a: VectorDataset, b: VectorDataset):
    if a.dim != b.dim:
        raise ValueError(f"dimension mismatch: {a.dim} vs {b.dim}")
    if a.space_tag != b.space_tag:
        raise ValueError(
            f"space_tag mismatch: {a.space_tag.label} vs {b.space_tag.label}; "
            "distances are only comparable within one space"
        )


class _Refs:
    """Reference rows with cached squared norms."""

    def __init__(self, values: np.ndarray):
        self.values = values
        self.n, self.dim = values.shape
        norms = np.empty(self.n)
        for r0 in range(0, self.n, REF_TILE):
            block = values[r0:r0 + REF_TILE].astype(np.float64)
            norms[r0:r0 + REF_TILE] = np.einsum("ij,ij->i", block, block)
        self.sq_norms = norms
        self.max_sq_norm = float(norms.max())

    def screen(self, q: np.ndarray, q_sq: np.ndarray) -> np.ndarray:
        out = np.empty((q.shape[0], self.n))
        for r0 in range(0, self.n, REF_TILE):
            block = self.values[r0:r0 + REF_TILE].astype(np.float64)
            out[:, r0:r0 + REF_TILE] = (
                q_sq[:, None] + self.sq_norms[None, r0:r0 + REF_TILE] - 2.0 * (q @ block.T)
            )
        np.maximum(out, 0.0, out=out)
        return out

    def margin(self, q_sq: np.ndarray) -> np.ndarray:
        # generous bound on the expansion's rounding error, per query row
        return 4.0 * (self.dim + 2) * _EPS * (q_sq + self.max_sq_norm)

    def exact_sq(self, q_row: np.ndarray, idx: np.ndarray) -> np.ndarray:
        diff = self.values[idx].astype(np.float64) - q_row
        return np.einsum("ij,ij->i", diff, diff)


def _select(refs: _Refs, queries: np.ndarray, q0: int, q1: int, k: int, exclude_offset):
    q = queries[q0:q1].astype(np.float64)
    q_sq = np.einsum("ij,ij->i", q, q)
    approx = refs.screen(q, q_sq)
    rows = np.arange(q1 - q0)
    if exclude_offset is not None:
        approx[rows, rows + q0 - exclude_offset] = np.inf
    kth = np.partition(approx, k - 1, axis=1)[:, k - 1]
    cutoff = kth + refs.margin(q_sq)

    idx_out = np.empty((q1 - q0, k), dtype=np.int64)
    dist_out = np.empty((q1 - q0, k))
    for r in rows:
        cand = np.flatnonzero(approx[r] <= cutoff[r])
        exact = refs.exact_sq(q[r], cand)
        order = np.lexsort((cand, exact))[:k]
        idx_out[r] = cand[order]
        dist_out[r] = np.sqrt(exact[order])
    return idx_out, dist_out


def _run_tiles(refs: _Refs, queries: np.ndarray, k: int, exclude_self: bool, workers):
    n = queries.shape[0]
    bounds = [(q0, min(q0 + QUERY_TILE, n)) for q0 in range(0, n, QUERY_TILE)]
    offset = 0 if exclude_self else None

    def work(b):
        return _select(refs, queries, b[0], b[1], k, offset)

    n_workers = min(resolve_workers(workers), len(bounds))
    if n_workers <= 1:
        parts = [work(b) for b in bounds]
    else:
        with ThreadPoolExecutor(max_workers=n_workers) as pool:
            parts = list(pool.map(work, bounds))
    return (
        np.concatenate([p[0] for p in parts]),
        np.concatenate([p[1] for p in parts]),
    )


def min_distances(queries: VectorDataset, refs: VectorDataset, workers=None) -> MinDistanceResult:
    """Exact nearest reference (distance and index) for every query row.

    Ties go to the smallest reference index.
    """
    _check_compatible(queries, refs)
    idx, dist = _run_tiles(_Refs(refs.values), queries.values, 1, False, workers)
    return MinDistanceResult(dist[:, 0], idx[:, 0])


def knn_table(ds: VectorDataset, k_max: int, exclude_self: bool = True, workers=None) -> NeighborTable:
    """The ``k_max`` nearest rows of ``ds`` for every row of ``ds``."""
    if k_max < 1:
        raise ValueError("k_max must be >= 1")
    need = k_max + (1 if exclude_self else 0)
    if ds.count < need:
        raise ValueError(
            f"k_max={k_max} needs at least {need} rows, dataset has {ds.count}"
        )
    idx, dist = _run_tiles(_Refs(ds.values), ds.values, k_max, exclude_self, workers)
    return NeighborTable(idx, dist)


def write_min_distance_csv(result: MinDistanceResult, queries: VectorDataset,
                           refs: VectorDataset, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["query_id", "ref_id", "distance"])
        for i, (j, d) in enumerate(zip(result.indices.tolist(), result.distances.tolist())):
            w.writerow([queries.row_id(i), refs.row_id(j), f"{d:.6g}"])
