"""Pairwise label statistics: minimum inter-label distances and average
volume ratios over a training set.

Minimum distances are computed from inner-boundary voxels only; for
disjoint voxel sets the closest pair always lies on the 6-connected inner
boundaries, so this is exact, not an approximation.
"""

import itertools
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from ._parallel import thread_map
from .errors import DegenerateLabelError, GridMismatchError, MergeSplitError
from .volumes import unique_labels


@dataclass(frozen=True)
class DistanceMatrix:
    """Symmetric matrix of minimum voxel-centre distances (mm) between the
    pooled supports of every label pair; zero iff supports intersect."""

    label_table: tuple
    values: np.ndarray

    def get(self, l1, l2):
        i = self.label_table.index(int(l1))
        j = self.label_table.index(int(l2))
        return float(self.values[i, j])


@dataclass(frozen=True)
class RatioMatrix:
    """Symmetric matrix of average-volume ratios (larger / smaller >= 1)."""

    label_table: tuple
    mean_volumes_mm3: np.ndarray
    values: np.ndarray

    def get(self, l1, l2):
        i = self.label_table.index(int(l1))
        j = self.label_table.index(int(l2))
        return float(self.values[i, j])


def inner_boundary(mask):
    """Voxels of the mask with a 6-connected neighbour outside it (grid
    faces count as outside), as an (N, 3) index array in scan order."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise MergeSplitError("inner boundary of an empty voxel set is undefined")
    interior = mask.copy()
    for ax in range(mask.ndim):
        lo = [slice(None)] * mask.ndim
        hi = [slice(None)] * mask.ndim
        lo[ax] = slice(None, -1)
        hi[ax] = slice(1, None)
        shifted = np.zeros_like(mask)
        shifted[tuple(lo)] = mask[tuple(hi)]   # neighbour in +ax direction
        interior &= shifted
        shifted = np.zeros_like(mask)
        shifted[tuple(hi)] = mask[tuple(lo)]   # neighbour in -ax direction
        interior &= shifted
    return np.argwhere(mask & ~interior)


def _pair_min_sq(pts_a, mm_a, pts_b, tree_b, spacing_sq):
    """Exact minimum squared distance (mm^2) between two boundary voxel
    sets. The k-d tree only locates a nearest neighbour; the squared
    distance is recomputed from integer index deltas so no square-root
    rounding leaks into the result."""
    _, nn = tree_b.query(mm_a, k=1)
    deltas = pts_a - pts_b[nn]
    sq = (deltas.astype(np.float64) ** 2 * spacing_sq).sum(axis=1)
    return float(sq.min())


def min_distance_matrix(support_map, threads=0):
    """Minimum pooled-support distance for every label pair.

    Each entry is the smallest voxel-centre distance between any supported
    voxel of one label and any of the other, over all training volumes.
    """
    labels = [int(l) for l in support_map.label_table]
    if not labels:
        raise MergeSplitError("support map has no labels")
    spacing = np.asarray(support_map.meta.spacing, dtype=np.float64)
    spacing_sq = spacing ** 2

    boundaries = {}
    mm_points = {}
    trees = {}
    for label in labels:
        pts = inner_boundary(support_map.support_mask(label))
        boundaries[label] = pts
        mm_points[label] = pts * spacing
        trees[label] = cKDTree(mm_points[label])

    n = len(labels)
    values = np.zeros((n, n), dtype=np.float64)
    pairs = list(itertools.combinations(range(n), 2))

    def one_pair(ij):
        i, j = ij
        la, lb = labels[i], labels[j]
        shared = np.intersect1d(support_map.support(la)[0],
                                support_map.support(lb)[0],
                                assume_unique=True)
        if shared.size:
            return 0.0
        if boundaries[la].shape[0] > boundaries[lb].shape[0]:
            la, lb = lb, la
        return _pair_min_sq(boundaries[la], mm_points[la],
                            boundaries[lb], trees[lb], spacing_sq)

    for (i, j), sq in zip(pairs, thread_map(one_pair, pairs, threads)):
        d = np.sqrt(sq)
        values[i, j] = d
        values[j, i] = d
    return DistanceMatrix(tuple(labels), values)


def volume_ratio_matrix(training_vols, label_table=None):
    """Average label volumes (mm^3) over the training set and their
    pairwise larger/smaller ratios."""
    vols = list(training_vols)
    if not vols:
        raise MergeSplitError("need at least one training volume")
    meta = vols[0].meta
    for pos, vol in enumerate(vols):
        if not meta.compatible(vol.meta):
            raise GridMismatchError(f"training volume #{pos} is on a different grid")

    totals = {}
    for vol in vols:
        for label, count in unique_labels(vol):
            totals[label] = totals.get(label, 0) + count
    if label_table is None:
        label_table = sorted(totals)
    labels = [int(l) for l in label_table]
    mean_counts = np.array([totals.get(l, 0) / len(vols) for l in labels])
    return _ratio_matrix(labels, mean_counts, meta.voxel_volume_mm3)


def ratio_matrix_from_support(support_map):
    """Same ratios, derived from a support map (count sums are identical
    to tallying the training volumes directly)."""
    labels = [int(l) for l in support_map.label_table]
    mean_counts = np.array([support_map.mean_voxel_count(l) for l in labels])
    return _ratio_matrix(labels, mean_counts,
                         support_map.meta.voxel_volume_mm3)


def _ratio_matrix(labels, mean_counts, voxel_volume):
    for label, mean in zip(labels, mean_counts):
        if mean <= 0:
            raise DegenerateLabelError(
                f"label {label} has zero mean volume over the training set")
    mean_volumes = mean_counts * voxel_volume
    values = (np.maximum.outer(mean_volumes, mean_volumes)
              / np.minimum.outer(mean_volumes, mean_volumes))
    return RatioMatrix(tuple(labels), mean_volumes, values)


def matrix_csv_bytes(label_table, values, decimals=6):
    """Square matrix as CSV: header row/column carry the label IDs."""
    lines = ["label," + ",".join(str(l) for l in label_table)]
    for label, row in zip(label_table, values):
        lines.append(str(label) + ","
                     + ",".join(f"{v:.{decimals}f}" for v in row))
    return ("\n".join(lines) + "\n").encode()


def mean_volumes_csv_bytes(ratio_matrix):
    lines = ["label,mean_volume_mm3"]
    for label, vol in zip(ratio_matrix.label_table, ratio_matrix.mean_volumes_mm3):
        lines.append(f"{label},{vol:.6f}")
    return ("\n".join(lines) + "\n").encode()
