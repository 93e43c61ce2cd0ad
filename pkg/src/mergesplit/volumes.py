"""Label and scalar volumes on a shared voxel grid."""

import hashlib
from dataclasses import dataclass

import numpy as np

from . import nifti
from .errors import MergeSplitError

SPACING_TOL_MM = 1e-6
MAX_LABEL = np.iinfo(np.int32).max


@dataclass(frozen=True)
class GridMeta:
    """Voxel grid geometry: dimensions and per-axis spacing in mm."""

    dims: tuple
    spacing: tuple

    def __post_init__(self):
        dims = tuple(int(d) for d in self.dims)
        spacing = tuple(float(s) for s in self.spacing)
        if len(dims) != 3 or len(spacing) != 3:
            raise MergeSplitError("GridMeta needs 3 dims and 3 spacings")
        if any(d < 1 for d in dims):
            raise MergeSplitError(f"non-positive grid dimension in {dims}")
        if any(not np.isfinite(s) or s <= 0 for s in spacing):
            raise MergeSplitError(f"non-positive voxel spacing in {spacing}")
        object.__setattr__(self, "dims", dims)
        object.__setattr__(self, "spacing", spacing)

    @property
    def n_voxels(self):
        nx, ny, nz = self.dims
        return nx * ny * nz

    @property
    def voxel_volume_mm3(self):
        sx, sy, sz = self.spacing
        return sx * sy * sz

    def compatible(self, other):
        """Same dims and spacing equal within SPACING_TOL_MM."""
        return (self.dims == other.dims
                and all(abs(a - b) <= SPACING_TOL_MM
                        for a, b in zip(self.spacing, other.spacing)))


def _as_fortran(voxels, dtype):
    # Copy so freezing the array never mutates caller-owned data.
    arr = np.array(voxels, dtype=dtype, order="F")
    arr.flags.writeable = False
    return arr


class LabelVolume:
    """Dense 3D grid of non-negative integer label IDs; 0 is background."""

    def __init__(self, meta, voxels):
        voxels = np.asarray(voxels)
        if voxels.shape != meta.dims:
            raise MergeSplitError(
                f"voxel shape {voxels.shape} does not match grid {meta.dims}")
        if voxels.dtype.kind not in "iu":
            raise MergeSplitError(f"label voxels must be integers, got {voxels.dtype}")
        if voxels.size and (voxels.min() < 0 or voxels.max() > MAX_LABEL):
            raise MergeSplitError("label values must fit non-negative 32-bit integers")
        self.meta = meta
        self.voxels = _as_fortran(voxels, np.int32)

    def __eq__(self, other):
        return (isinstance(other, LabelVolume) and self.meta == other.meta
                and np.array_equal(self.voxels, other.voxels))

    def __repr__(self):
        return f"LabelVolume(dims={self.meta.dims}, spacing={self.meta.spacing})"


class ScalarVolume:
    """Dense 3D grid of finite reals (priors, distance fields)."""

    def __init__(self, meta, voxels):
        voxels = np.asarray(voxels, dtype=np.float64)
        if voxels.shape != meta.dims:
            raise MergeSplitError(
                f"voxel shape {voxels.shape} does not match grid {meta.dims}")
        if not np.all(np.isfinite(voxels)):
            raise MergeSplitError("scalar volume contains NaN or Inf")
        self.meta = meta
        self.voxels = _as_fortran(voxels, np.float64)

    def __eq__(self, other):
        return (isinstance(other, ScalarVolume) and self.meta == other.meta
                and np.array_equal(self.voxels, other.voxels))

    def __repr__(self):
        return f"ScalarVolume(dims={self.meta.dims}, spacing={self.meta.spacing})"


def load_volume(path):
    """Load a NIfTI-1 volume; integer files become LabelVolume, floating
    files become ScalarVolume."""
    data, spacing = nifti.read(path)
    meta = GridMeta(data.shape, spacing)
    if data.dtype.kind in "iu":
        if data.size and data.min() < 0:
            raise MergeSplitError(f"{path}: negative label values in integer volume")
        return LabelVolume(meta, data)
    return ScalarVolume(meta, data)


def save_volume(vol, path):
    """Write a volume as NIfTI-1: labels as int32, scalars as float32.

    Label volumes round-trip bit-exactly; scalar values round-trip exactly
    when representable in 32-bit floats.
    """
    nifti.write(path, vol.voxels, vol.meta.spacing)


def unique_labels(vol):
    """Sorted (label, voxel_count) pairs occurring in the volume."""
    values, counts = np.unique(vol.voxels, return_counts=True)
    return [(int(v), int(c)) for v, c in zip(values, counts)]


def linear_indices(voxels_or_mask):
    """Linear voxel indices (x varies fastest) of the nonzero entries."""
    flat = np.asarray(voxels_or_mask).ravel(order="F")
    return np.flatnonzero(flat)


def volume_digest(vol):
    """Content hash of a volume: grid meta plus voxel payload."""
    h = hashlib.sha256()
    h.update(np.asarray(vol.meta.dims, dtype="<i8").tobytes())
    h.update(np.asarray(vol.meta.spacing, dtype="<f8").tobytes())
    h.update(np.ascontiguousarray(vol.voxels.ravel(order="F")).tobytes())
    return h.hexdigest()


def training_set_digest(vols):
    """Combined content hash over an ordered set of volumes."""
    h = hashlib.sha256()
    h.update(len(vols).to_bytes(8, "little"))
    for vol in vols:
        h.update(bytes.fromhex(volume_digest(vol)))
    return h.hexdigest()
