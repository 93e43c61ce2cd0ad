"""Synthetic label volumes with controlled geometry, and a perturbation
model that stands in for an imperfect segmentation model.

Blob placement, per-subject jitter and perturbations are all driven by a
single seed, so every output is reproducible. The generator records true
pooled inter-label distances and volumes by direct measurement of the
rasterised data, for use as an independent cross-check of the pairwise
statistics.
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._parallel import thread_map
from .errors import MergeSplitError
from .volumes import GridMeta, LabelVolume

SPEC_VERSION = 1
_SENTINEL = np.iinfo(np.int32).max
PERTURB_KINDS = ("dilate", "erode", "boundary_jitter")


@dataclass(frozen=True)
class Blob:
    label: int
    center: tuple    # voxel coordinates, may be fractional
    radius: float    # voxels; spheres: Euclidean radius, boxes: half-width


@dataclass(frozen=True)
class PhantomSpec:
    dims: tuple
    spacing: tuple
    n_train: int
    shape: str              # "sphere" | "box"
    jitter: int             # per-subject centre jitter, voxels per axis
    seed: int
    min_gap_mm: float       # designed lower bound on pairwise gaps
    blobs: tuple

    def __post_init__(self):
        if self.shape not in ("sphere", "box"):
            raise MergeSplitError(f"unknown blob shape {self.shape!r}")
        if self.n_train < 1:
            raise MergeSplitError("n_train must be >= 1")
        if self.jitter < 0 or self.min_gap_mm < 0:
            raise MergeSplitError("jitter and min_gap_mm must be >= 0")
        labels = [b.label for b in self.blobs]
        if len(set(labels)) != len(labels):
            raise MergeSplitError("duplicate blob labels")
        if any(l <= 0 for l in labels):
            raise MergeSplitError("blob labels must be positive")

    @property
    def meta(self):
        return GridMeta(self.dims, self.spacing)

    @property
    def labels(self):
        return tuple(sorted(b.label for b in self.blobs))


@dataclass(frozen=True)
class PhantomMetadata:
    """Ground-truth bookkeeping measured from the generated volumes."""

    labels: tuple
    gap_mm: np.ndarray          # pooled min centre distance per label pair
    mean_voxel_counts: dict
    mean_volumes_mm3: dict
    centers: np.ndarray         # (n_train, n_blobs, 3) jittered centres


def spec_to_json(spec):
    doc = {
        "version": SPEC_VERSION,
        "dims": list(spec.dims),
        "spacing": list(spec.spacing),
        "n_train": spec.n_train,
        "shape": spec.shape,
        "jitter": spec.jitter,
        "seed": spec.seed,
        "min_gap_mm": spec.min_gap_mm,
        "blobs": [{"label": b.label, "center": list(b.center),
                   "radius": b.radius} for b in spec.blobs],
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


def spec_from_json(text):
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MergeSplitError(f"invalid phantom spec JSON: {exc}") from exc
    if doc.get("version") != SPEC_VERSION:
        raise MergeSplitError(f"unsupported phantom spec version "
                              f"{doc.get('version')!r}")
    blobs = tuple(Blob(int(b["label"]), tuple(float(c) for c in b["center"]),
                       float(b["radius"]))
                  for b in doc["blobs"])
    return PhantomSpec(
        dims=tuple(int(d) for d in doc["dims"]),
        spacing=tuple(float(s) for s in doc["spacing"]),
        n_train=int(doc["n_train"]),
        shape=str(doc["shape"]),
        jitter=int(doc["jitter"]),
        seed=int(doc["seed"]),
        min_gap_mm=float(doc["min_gap_mm"]),
        blobs=blobs,
    )


def load_phantom_spec(path):
    path = Path(path)
    if not path.is_file():
        raise MergeSplitError(f"no phantom spec at {path}")
    return spec_from_json(path.read_text())


# ---------------------------------------------------------------------------
# builders

def chain_phantom_spec(dims, spacing, n_labels, n_train, *, shape="sphere",
                       radius_range=(2.5, 3.5), gap_range_mm=(2.0, 20.0),
                       jitter=0, seed=0, max_tries=4000):
    """Place blobs as a random chain whose consecutive gaps are drawn from
    ``gap_range_mm``; all other pairs keep at least the lower bound.

    Gap arithmetic assumes (near-)isotropic spacing; the generator records
    exact gaps regardless. Raises when the chain cannot be packed.
    """
    rng = np.random.default_rng(seed)
    dims = tuple(int(d) for d in dims)
    gap_lo, gap_hi = float(gap_range_mm[0]), float(gap_range_mm[1])
    if gap_lo <= 0 or gap_hi < gap_lo:
        raise MergeSplitError("gap range must satisfy 0 < lo <= hi")
    radii = rng.uniform(radius_range[0], radius_range[1], n_labels)
    # Jitter moves each centre by <= jitter per axis, both blobs may move.
    slack = 2.0 * jitter * math.sqrt(3.0) + 1e-9

    def in_bounds(center, radius):
        return all(radius + jitter + 0.5 <= c <= d - 1.5 - radius - jitter
                   for c, d in zip(center, dims))

    centers = []
    lo = [radii[0] + jitter + 1.0] * 3
    hi = [d - 2.0 - radii[0] - jitter for d in dims]
    if any(a > b for a, b in zip(lo, hi)):
        raise MergeSplitError("first blob does not fit in the grid")
    centers.append(np.array([rng.uniform(a, b) for a, b in zip(lo, hi)]))

    for k in range(1, n_labels):
        gap = rng.uniform(gap_lo, gap_hi)
        dist = radii[k - 1] + radii[k] + gap + slack
        placed = False
        for _ in range(max_tries):
            direction = rng.normal(size=3)
            norm = np.linalg.norm(direction)
            if norm < 1e-12:
                continue
            cand = centers[k - 1] + direction / norm * dist
            if not in_bounds(cand, radii[k]):
                continue
            ok = True
            for j in range(k - 1):
                need = radii[j] + radii[k] + gap_lo + slack
                if np.linalg.norm(cand - centers[j]) < need:
                    ok = False
                    break
            if ok:
                centers.append(cand)
                placed = True
                break
        if not placed:
            raise MergeSplitError(
                f"cannot pack blob {k + 1} of {n_labels} into grid {dims}; "
                "reduce radii/gaps or enlarge the grid")

    blobs = tuple(Blob(k + 1, tuple(float(c) for c in centers[k]),
                       float(radii[k]))
                  for k in range(n_labels))
    return PhantomSpec(dims=dims, spacing=tuple(float(s) for s in spacing),
                       n_train=int(n_train), shape=shape, jitter=int(jitter),
                       seed=int(seed), min_gap_mm=gap_lo, blobs=blobs)


def clustered_phantom_spec(dims, spacing, n_clusters, cluster_size, n_train,
                           *, shape="sphere", radius=3.0, intra_gap_mm=2.0,
                           inter_gap_mm=16.0, jitter=0, seed=0):
    """Clusters of nearby blobs, with the clusters themselves far apart:
    members of a cluster sit ``intra_gap_mm`` from each other while
    distinct clusters keep at least ``inter_gap_mm`` of separation.

    Members are arranged on a regular polygon in the xy-plane, so for
    cluster sizes up to 3 every within-cluster pair is at the designed
    intra gap.
    """
    dims = tuple(int(d) for d in dims)
    side = 2.0 * radius + intra_gap_mm
    circum = side / (2.0 * math.sin(math.pi / cluster_size)) \
        if cluster_size > 1 else 0.0
    extent = 2.0 * (circum + radius + jitter)
    pitch = extent + inter_gap_mm + 2.0 * jitter * math.sqrt(3.0) + 1.0

    per_side = max(1, math.ceil(n_clusters ** (1.0 / 3.0)))
    anchors = [np.array([cx, cy, cz], dtype=float) * pitch
               for cx in range(per_side)
               for cy in range(per_side)
               for cz in range(per_side)][:n_clusters]
    margin = circum + radius + jitter + 1.0
    blobs = []
    label = 1
    for c in range(n_clusters):
        anchor = anchors[c] + margin
        for m in range(cluster_size):
            angle = 2.0 * math.pi * m / cluster_size
            offset = np.array([circum * math.cos(angle),
                               circum * math.sin(angle), 0.0])
            center = anchor + offset
            if any(not (radius + jitter + 0.5 <= x <= d - 1.5 - radius - jitter)
                   for x, d in zip(center, dims)):
                raise MergeSplitError(
                    f"cluster layout does not fit in grid {dims}; "
                    "enlarge the grid or shrink gaps")
            blobs.append(Blob(label, tuple(float(x) for x in center),
                              float(radius)))
            label += 1
    return PhantomSpec(dims=dims, spacing=tuple(float(s) for s in spacing),
                       n_train=int(n_train), shape=shape, jitter=int(jitter),
                       seed=int(seed), min_gap_mm=float(min(intra_gap_mm,
                                                            inter_gap_mm)),
                       blobs=tuple(blobs))


# ---------------------------------------------------------------------------
# generation

def _rasterize(spec, centers):
    canvas = np.zeros(spec.dims, dtype=np.int32, order="F")
    for blob, center in sorted(zip(spec.blobs, centers),
                               key=lambda bc: bc[0].label):
        lo = [max(0, int(math.floor(c - blob.radius))) for c in center]
        hi = [min(d - 1, int(math.ceil(c + blob.radius)))
              for c, d in zip(center, spec.dims)]
        if any(a > b for a, b in zip(lo, hi)):
            raise MergeSplitError(f"blob {blob.label} lies outside the grid")
        grids = np.ogrid[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]
        if spec.shape == "sphere":
            mask = sum((g - c) ** 2 for g, c in zip(grids, center)) \
                <= blob.radius ** 2
        else:
            mask = np.ones([b - a + 1 for a, b in zip(lo, hi)], dtype=bool)
            for g, c in zip(grids, center):
                mask &= np.abs(g - c) <= blob.radius
        if not mask.any():
            raise MergeSplitError(f"blob {blob.label} rasterises to no voxels")
        window = canvas[lo[0]:hi[0] + 1, lo[1]:hi[1] + 1, lo[2]:hi[2] + 1]
        if np.any(window[mask] != 0):
            raise MergeSplitError(
                f"blob {blob.label} overlaps another blob; unsatisfiable spec")
        window[mask] = blob.label
    return canvas


def _fits(spec, blob):
    reach = blob.radius + spec.jitter
    return all(-0.5 <= c - reach and c + reach <= d - 0.5
               for c, d in zip(blob.center, spec.dims))


def _min_sq_between(coords_a, coords_b, spacing_sq, chunk=512):
    best = np.inf
    for start in range(0, coords_a.shape[0], chunk):
        block = coords_a[start:start + chunk]
        d = block[:, None, :] - coords_b[None, :, :]
        sq = (d.astype(np.float64) ** 2 * spacing_sq).sum(axis=2)
        best = min(best, float(sq.min()))
    return best


def generate_phantom(spec, threads=0):
    """Rasterise the spec into n_train jittered volumes plus measured
    ground-truth metadata (pooled pair gaps, per-label volumes)."""
    for blob in spec.blobs:
        if not _fits(spec, blob):
            raise MergeSplitError(
                f"blob {blob.label} (radius {blob.radius}, jitter "
                f"{spec.jitter}) does not fit in grid {spec.dims}")
    rng = np.random.default_rng(spec.seed)
    n_blobs = len(spec.blobs)
    offsets = rng.integers(-spec.jitter, spec.jitter + 1,
                           size=(spec.n_train, n_blobs, 3))
    base = np.array([b.center for b in spec.blobs], dtype=np.float64)
    centers = base[None, :, :] + offsets

    meta = spec.meta
    canvases = thread_map(lambda i: _rasterize(spec, centers[i]),
                          range(spec.n_train), threads)
    vols = [LabelVolume(meta, c) for c in canvases]

    labels = spec.labels
    spacing_sq = np.asarray(meta.spacing, dtype=np.float64) ** 2
    pooled = {}
    total_counts = {l: 0 for l in labels}
    for canvas in canvases:
        for label in labels:
            coords = np.argwhere(canvas == label)
            total_counts[label] += coords.shape[0]
            pooled.setdefault(label, []).append(coords)
    coords_by_label = {
        l: np.unique(np.concatenate(pooled[l]), axis=0) for l in labels}

    n = len(labels)
    gap = np.zeros((n, n), dtype=np.float64)
    for i in range(n):
        for j in range(i + 1, n):
            sq = _min_sq_between(coords_by_label[labels[i]],
                                 coords_by_label[labels[j]], spacing_sq)
            gap[i, j] = gap[j, i] = np.sqrt(sq)

    mean_counts = {l: total_counts[l] / spec.n_train for l in labels}
    mean_volumes = {l: mean_counts[l] * meta.voxel_volume_mm3 for l in labels}
    metadata = PhantomMetadata(labels=labels, gap_mm=gap,
                               mean_voxel_counts=mean_counts,
                               mean_volumes_mm3=mean_volumes,
                               centers=centers)
    return vols, metadata


def metadata_to_json(metadata, spec):
    doc = {
        "version": SPEC_VERSION,
        "labels": list(metadata.labels),
        "gap_mm": [[float(x) for x in row] for row in metadata.gap_mm],
        "mean_voxel_counts": {str(l): metadata.mean_voxel_counts[l]
                              for l in metadata.labels},
        "mean_volumes_mm3": {str(l): metadata.mean_volumes_mm3[l]
                             for l in metadata.labels},
        "centers": [[[float(x) for x in c] for c in subject]
                    for subject in metadata.centers],
        "spec": json.loads(spec_to_json(spec)),
    }
    return json.dumps(doc, sort_keys=True, indent=2) + "\n"


# ---------------------------------------------------------------------------
# perturbation

def _neighbor(arr, axis, step, fill):
    out = np.full_like(arr, fill)
    lo = [slice(None)] * arr.ndim
    hi = [slice(None)] * arr.ndim
    if step > 0:
        lo[axis] = slice(None, -1)
        hi[axis] = slice(1, None)
        out[tuple(lo)] = arr[tuple(hi)]
    else:
        lo[axis] = slice(1, None)
        hi[axis] = slice(None, -1)
        out[tuple(lo)] = arr[tuple(hi)]
    return out


def _dilate_once(arr):
    candidate = np.full_like(arr, _SENTINEL)
    for axis in range(3):
        for step in (1, -1):
            nbr = _neighbor(arr, axis, step, 0)
            takeable = (arr == 0) & (nbr > 0)
            candidate[takeable] = np.minimum(candidate[takeable], nbr[takeable])
    out = arr.copy()
    grow = candidate != _SENTINEL
    out[grow] = candidate[grow]
    return out


def _erode_once(arr):
    survive = arr > 0
    for axis in range(3):
        for step in (1, -1):
            survive &= _neighbor(arr, axis, step, 0) == arr
    return np.where(survive, arr, 0).astype(np.int32)


def _jitter_once(arr, rng):
    neighbors = np.stack([_neighbor(arr, axis, step, -1)
                          for axis in range(3) for step in (1, -1)])
    valid = neighbors >= 0
    differs = valid & (neighbors != arr[None])
    boundary = np.argwhere(differs.any(axis=0))
    if boundary.size == 0:
        return arr.copy()
    bi, bj, bk = boundary[:, 0], boundary[:, 1], boundary[:, 2]
    valid_b = valid[:, bi, bj, bk]            # (6, n_boundary)
    n_valid = valid_b.sum(axis=0)
    # Uniform pick among each voxel's in-bounds face neighbours.
    pick = rng.integers(0, n_valid)
    order = np.cumsum(valid_b, axis=0) - 1
    chosen_dir = np.argmax((order == pick) & valid_b, axis=0)
    out = arr.copy()
    out[bi, bj, bk] = neighbors[chosen_dir, bi, bj, bk]
    return out


def perturb(vol, kind, radius, seed=0):
    """Morphological corruption of a label volume.

    dilate grows every region into background (smallest label wins a
    contested voxel); erode peels each region's 6-connected boundary;
    boundary_jitter reassigns every boundary voxel the label of a
    uniformly chosen face neighbour. ``radius`` is the number of passes.
    Never introduces labels absent from the input.
    """
    if kind not in PERTURB_KINDS:
        raise MergeSplitError(f"unknown perturbation kind {kind!r}")
    if radius < 0:
        raise MergeSplitError("radius must be >= 0")
    arr = np.array(vol.voxels, order="F")
    rng = np.random.default_rng(seed)
    for _ in range(int(radius)):
        if kind == "dilate":
            arr = _dilate_once(arr)
        elif kind == "erode":
            arr = _erode_once(arr)
        else:
            arr = _jitter_once(arr, rng)
    return LabelVolume(vol.meta, arr)
