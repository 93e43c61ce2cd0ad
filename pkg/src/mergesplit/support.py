"""Label support map over a training set, and the priors derived from it.

The support map counts, per voxel and per label, how many training
segmentations carry that label there. It is held sparsely per label
(linear voxel index -> count); a dense array over all labels would not
scale to high-cardinality parcellations.
"""

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._parallel import thread_map
from .edt import distance_transform
from .errors import (DegenerateLabelError, GridMismatchError, MergeSplitError,
                     UnknownLabelError)
from .volumes import GridMeta, ScalarVolume, training_set_digest

MANIFEST_NAME = "manifest.json"
_BLOB_DTYPE = np.dtype([("index", "<u4"), ("count", "<u2")])
MAX_TRAIN = np.iinfo(np.uint16).max


class SupportMap:
    """Per-label sparse voxel occurrence counts over a training set."""

    def __init__(self, meta, n_train, sparse, training_hash=""):
        if n_train < 1:
            raise MergeSplitError("support map needs at least one training volume")
        if n_train > MAX_TRAIN:
            raise MergeSplitError(f"n_train {n_train} exceeds the uint16 "
                                  "count range of the bundle format")
        self.meta = meta
        self.n_train = int(n_train)
        self.training_hash = training_hash
        self._sparse = {}
        for label in sorted(sparse):
            indices, counts = sparse[label]
            indices = np.asarray(indices, dtype=np.int64)
            counts = np.asarray(counts, dtype=np.int64)
            if indices.size == 0:
                continue
            if np.any(np.diff(indices) <= 0):
                raise MergeSplitError(f"label {label}: voxel indices must be "
                                      "strictly ascending")
            if counts.min() < 1 or counts.max() > self.n_train:
                raise MergeSplitError(f"label {label}: counts outside "
                                      f"[1, {self.n_train}]")
            self._sparse[int(label)] = (indices, counts)
        self.label_table = np.array(sorted(self._sparse), dtype=np.int64)

    @property
    def n_labels(self):
        return int(self.label_table.size)

    def __contains__(self, label):
        return int(label) in self._sparse

    def support(self, label):
        """(linear voxel indices, counts) for one label; indices ascending."""
        try:
            return self._sparse[int(label)]
        except KeyError:
            raise UnknownLabelError(f"label {label} not in support map") from None

    def support_size(self, label):
        return int(self.support(label)[0].size)

    def mean_voxel_count(self, label):
        """Average number of voxels the label occupies per training volume."""
        return float(self.support(label)[1].sum()) / self.n_train

    def count_field(self, label):
        """Dense int32 field of per-voxel counts for one label."""
        indices, counts = self.support(label)
        field = np.zeros(self.meta.n_voxels, dtype=np.int32)
        field[indices] = counts
        return field.reshape(self.meta.dims, order="F")

    def support_mask(self, label):
        """Dense boolean mask of voxels with non-zero support for the label."""
        indices, _ = self.support(label)
        mask = np.zeros(self.meta.n_voxels, dtype=bool)
        mask[indices] = True
        return mask.reshape(self.meta.dims, order="F")


@dataclass(frozen=True)
class FudgedPrior:
    """Strictly positive per-label likelihood field: the normalised support
    where observed, an exponentially decayed distance elsewhere."""

    label: int
    field: ScalarVolume


def _label_indices(vol):
    """Per-label ascending linear voxel indices for one volume."""
    flat = vol.voxels.ravel(order="F")
    order = np.argsort(flat, kind="stable")
    ordered = flat[order]
    cuts = np.flatnonzero(np.diff(ordered)) + 1
    starts = np.concatenate(([0], cuts))
    ends = np.concatenate((cuts, [ordered.size]))
    return {int(ordered[a]): np.sort(order[a:b]).astype(np.int64)
            for a, b in zip(starts, ends)}


def build_support_map(training_vols, threads=0):
    """Tally per-voxel label occurrences across a training set.

    All volumes must share the grid; the offending volume is named
    otherwise.
    """
    vols = list(training_vols)
    if not vols:
        raise MergeSplitError("need at least one training volume")
    meta = vols[0].meta
    for pos, vol in enumerate(vols):
        if not meta.compatible(vol.meta):
            raise GridMismatchError(
                f"training volume #{pos} grid {vol.meta.dims}/{vol.meta.spacing} "
                f"differs from #{0} grid {meta.dims}/{meta.spacing}")

    per_vol = thread_map(_label_indices, vols, threads)
    labels = sorted({label for d in per_vol for label in d})
    sparse = {}
    for label in labels:
        chunks = [d[label] for d in per_vol if label in d]
        pooled = np.concatenate(chunks) if len(chunks) > 1 else chunks[0]
        indices, counts = np.unique(pooled, return_counts=True)
        sparse[label] = (indices, counts)
    return SupportMap(meta, len(vols), sparse,
                      training_hash=training_set_digest(vols))


def fuzzy_prior(support_map, label):
    """Empirical per-voxel probability of a label: counts / n_train."""
    field = support_map.count_field(label).astype(np.float64)
    field /= support_map.n_train
    return ScalarVolume(support_map.meta, field)


def fudged_prior(support_map, label):
    """Fuzzy prior made strictly positive: voxels with no support get
    exp(-d) / n_train, d = exact Euclidean distance (mm) to the label's
    nearest supported voxel."""
    indices, counts = support_map.support(label)
    if indices.size == 0:
        raise DegenerateLabelError(f"label {label} has empty support")
    mask = support_map.support_mask(label)
    dist = distance_transform(mask, support_map.meta.spacing)
    field = np.exp(-dist) / support_map.n_train
    flat = field.ravel(order="F")
    flat[indices] = counts / support_map.n_train
    return FudgedPrior(int(label),
                       ScalarVolume(support_map.meta,
                                    flat.reshape(support_map.meta.dims, order="F")))


def save_support_map(support_map, directory):
    """Write the bundle: manifest.json + one sparse blob per label."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    manifest = {
        "version": 1,
        "n_train": support_map.n_train,
        "dims": list(support_map.meta.dims),
        "spacing": list(support_map.meta.spacing),
        "label_table": [int(l) for l in support_map.label_table],
        "training_hash": support_map.training_hash,
    }
    blob = json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    (directory / MANIFEST_NAME).write_text(blob)
    for label in support_map.label_table:
        indices, counts = support_map.support(label)
        records = np.empty(indices.size, dtype=_BLOB_DTYPE)
        records["index"] = indices
        records["count"] = counts
        (directory / f"label_{int(label)}.bin").write_bytes(records.tobytes())


def load_support_map(directory):
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise MergeSplitError(f"no support bundle manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("version") != 1:
        raise MergeSplitError(f"unsupported support bundle version "
                              f"{manifest.get('version')!r}")
    meta = GridMeta(tuple(manifest["dims"]), tuple(manifest["spacing"]))
    n_train = int(manifest["n_train"])
    sparse = {}
    for label in manifest["label_table"]:
        blob = (directory / f"label_{int(label)}.bin").read_bytes()
        records = np.frombuffer(blob, dtype=_BLOB_DTYPE)
        sparse[int(label)] = (records["index"].astype(np.int64),
                              records["count"].astype(np.int64))
    smap = SupportMap(meta, n_train, sparse,
                      training_hash=manifest.get("training_hash", ""))
    _validate_column_sums(smap)
    return smap


def _validate_column_sums(support_map):
    """Every voxel must be claimed exactly n_train times across labels."""
    total = np.zeros(support_map.meta.n_voxels, dtype=np.int64)
    for label in support_map.label_table:
        indices, counts = support_map.support(label)
        total[indices] += counts
    if not np.all(total == support_map.n_train):
        bad = int(np.flatnonzero(total != support_map.n_train)[0])
        raise MergeSplitError(
            f"support bundle is inconsistent: voxel {bad} is claimed "
            f"{int(total[bad])} times, expected {support_map.n_train}")


def support_map_digest(support_map):
    """Content hash of the support map (and its training lineage)."""
    h = hashlib.sha256()
    h.update(support_map.n_train.to_bytes(8, "little"))
    h.update(np.asarray(support_map.meta.dims, dtype="<i8").tobytes())
    h.update(np.asarray(support_map.meta.spacing, dtype="<f8").tobytes())
    for label in support_map.label_table:
        indices, counts = support_map.support(label)
        h.update(int(label).to_bytes(8, "little", signed=True))
        h.update(indices.astype("<i8").tobytes())
        h.update(counts.astype("<i8").tobytes())
    return h.hexdigest()
