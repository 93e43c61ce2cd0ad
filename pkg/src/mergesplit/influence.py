"""Influence region maps and label splitting.

For each merged label, every voxel is assigned the group member whose
fudged prior is highest there (ties: smallest ID). Splitting a merged
prediction is then a voxel-wise lookup in the map of the predicted merged
label. Only one group's priors are alive at a time, so peak memory scales
with the group size, not the full label count.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ._parallel import thread_map
from .errors import (DegenerateLabelError, DigestMismatchError,
                     GridMismatchError, MergeSplitError, UnknownLabelError)
from .merging import plan_digest
from .support import fudged_prior
from .volumes import LabelVolume, load_volume, save_volume

MANIFEST_NAME = "manifest.json"
MAP_VERSION = 1


@dataclass(frozen=True)
class InfluenceMap:
    """Voxel-wise most-likely original label within one merged group."""

    merged_label: int
    members: tuple
    field: LabelVolume


def build_influence_map(plan, merged_id, support_map):
    """Argmax of the member fudged priors at every voxel."""
    members = plan.members(merged_id)
    for label in members:
        if label not in support_map or support_map.support_size(label) == 0:
            raise DegenerateLabelError(
                f"merged label {merged_id}: member {label} has no support")
    best_label = None
    best_value = None
    for label in members:     # ascending IDs; strict > keeps the smallest on ties
        value = fudged_prior(support_map, label).field.voxels
        if best_value is None:
            best_value = np.array(value)
            best_label = np.full(support_map.meta.dims, label,
                                 dtype=np.int32, order="F")
        else:
            better = value > best_value
            best_value[better] = value[better]
            best_label[better] = label
    return InfluenceMap(int(merged_id), tuple(members),
                        LabelVolume(support_map.meta, best_label))


def build_all_influence_maps(plan, support_map, threads=0):
    """One influence map per merged label, keyed by merged ID."""
    ids = list(range(1, plan.n_merged + 1))
    maps = thread_map(lambda m: build_influence_map(plan, m, support_map),
                      ids, threads)
    return dict(zip(ids, maps))


def split(merged_vol, plan, maps):
    """Replace every merged label with the original label its influence
    map assigns at that voxel; background stays background."""
    present = [int(v) for v in np.unique(merged_vol.voxels)]
    for m in present:
        if m == 0:
            continue
        if m not in maps:
            raise UnknownLabelError(f"no influence map for merged label {m}")
        if not merged_vol.meta.compatible(maps[m].field.meta):
            raise GridMismatchError(
                f"influence map {m} grid does not match the prediction grid")
    out = np.zeros(merged_vol.meta.dims, dtype=np.int32, order="F")
    for m in present:
        sel = merged_vol.voxels == m
        if m == 0:
            if plan.background != 0:
                out[sel] = plan.background
            continue
        out[sel] = maps[m].field.voxels[sel]
    return LabelVolume(merged_vol.meta, out)


def save_influence_maps(maps, plan, directory):
    """Persist maps as one integer NIfTI per merged label plus a manifest
    that binds them to the plan's content digest."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = {}
    for m in sorted(maps):
        name = f"influence_{m}.nii.gz"
        save_volume(maps[m].field, directory / name)
        files[str(m)] = name
    manifest = {
        "version": MAP_VERSION,
        "plan_digest": plan_digest(plan),
        "files": files,
    }
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def load_influence_maps(directory, plan):
    """Load a map directory, refusing manifests from a different plan."""
    directory = Path(directory)
    manifest_path = directory / MANIFEST_NAME
    if not manifest_path.is_file():
        raise MergeSplitError(f"no influence manifest at {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    if manifest.get("version") != MAP_VERSION:
        raise MergeSplitError(
            f"unsupported influence manifest version {manifest.get('version')!r}")
    expected = plan_digest(plan)
    if manifest.get("plan_digest") != expected:
        raise DigestMismatchError(
            "influence maps were built for a different plan "
            f"(manifest digest {manifest.get('plan_digest')!r})")
    maps = {}
    for key, name in manifest["files"].items():
        m = int(key)
        field = load_volume(directory / name)
        if not isinstance(field, LabelVolume):
            raise MergeSplitError(f"influence map {name} is not a label volume")
        members = plan.members(m)
        stray = np.setdiff1d(np.unique(field.voxels), np.asarray(members))
        if stray.size:
            raise MergeSplitError(
                f"influence map {name} contains label {int(stray[0])} "
                f"outside merged group {m}")
        maps[m] = InfluenceMap(m, tuple(members), field)
    return maps
