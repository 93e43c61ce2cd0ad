import json

import numpy as np
import pytest

from mergesplit import (Blob, GridMeta, LabelVolume, MergeSplitError,
                        PhantomSpec, build_support_map, chain_phantom_spec,
                        clustered_phantom_spec, dice, generate_phantom,
                        min_distance_matrix, perturb, spec_from_json,
                        spec_to_json, unique_labels)
from oracles import brute_min_pair_sq, pooled_masks


def simple_spec(**overrides):
    params = dict(dims=(24, 24, 24), spacing=(1.0, 1.0, 1.0), n_train=2,
                  shape="sphere", jitter=0, seed=1, min_gap_mm=2.0,
                  blobs=(Blob(1, (6.0, 6.0, 6.0), 3.0),
                         Blob(2, (16.0, 16.0, 16.0), 3.0)))
    params.update(overrides)
    return PhantomSpec(**params)


class TestGeneratePhantom:
    def test_seed_determinism(self):
        spec = simple_spec(jitter=1, n_train=3)
        vols_a, meta_a = generate_phantom(spec)
        vols_b, meta_b = generate_phantom(spec)
        for a, b in zip(vols_a, vols_b):
            assert a == b
        assert np.array_equal(meta_a.gap_mm, meta_b.gap_mm)
        assert np.array_equal(meta_a.centers, meta_b.centers)

    def test_different_seeds_differ(self):
        vols_a, _ = generate_phantom(simple_spec(jitter=2, seed=1, n_train=4))
        vols_b, _ = generate_phantom(simple_spec(jitter=2, seed=2, n_train=4))
        assert any(not np.array_equal(a.voxels, b.voxels)
                   for a, b in zip(vols_a, vols_b))

    def test_axis_aligned_spheres_gap(self):
        # centres 20 voxels apart on the x axis, radius 3 each
        spec = simple_spec(dims=(32, 16, 16), n_train=1,
                           blobs=(Blob(1, (4.0, 8.0, 8.0), 3.0),
                                  Blob(2, (24.0, 8.0, 8.0), 3.0)))
        vols, metadata = generate_phantom(spec)
        assert metadata.gap_mm[0, 1] == 14.0
        masks = pooled_masks(vols, [1, 2])
        sq = brute_min_pair_sq(np.argwhere(masks[1]), np.argwhere(masks[2]),
                               spec.spacing)
        assert np.sqrt(sq) == 14.0

    def test_single_subject_metadata_matches_volume(self):
        spec = simple_spec(n_train=1)
        vols, metadata = generate_phantom(spec)
        counts = dict(unique_labels(vols[0]))
        for label in spec.labels:
            assert metadata.mean_voxel_counts[label] == counts[label]
        assert np.array_equal(metadata.centers[0],
                              [b.center for b in spec.blobs])

    def test_gaps_match_pairwise_statistics(self):
        spec = chain_phantom_spec((28, 28, 28), (1.0, 1.0, 1.0), n_labels=4,
                                  n_train=3, radius_range=(2.0, 3.0),
                                  gap_range_mm=(2.0, 8.0), jitter=1, seed=5)
        vols, metadata = generate_phantom(spec)
        smap = build_support_map(vols)
        dmat = min_distance_matrix(smap)
        for i, la in enumerate(metadata.labels):
            for j, lb in enumerate(metadata.labels):
                if i < j:
                    assert dmat.get(la, lb) == metadata.gap_mm[i, j]

    def test_blob_outside_grid_rejected(self):
        spec = simple_spec(blobs=(Blob(1, (2.0, 2.0, 2.0), 5.0),))
        with pytest.raises(MergeSplitError, match="does not fit"):
            generate_phantom(spec)

    def test_overlapping_blobs_rejected(self):
        spec = simple_spec(blobs=(Blob(1, (8.0, 8.0, 8.0), 4.0),
                                  Blob(2, (10.0, 8.0, 8.0), 4.0)))
        with pytest.raises(MergeSplitError, match="overlap"):
            generate_phantom(spec)

    def test_box_shape(self):
        spec = simple_spec(shape="box", n_train=1,
                           blobs=(Blob(3, (8.0, 8.0, 8.0), 2.0),))
        vols, metadata = generate_phantom(spec)
        assert dict(unique_labels(vols[0]))[3] == 5 ** 3


class TestBuilders:
    def test_chain_respects_gap_floor(self):
        spec = chain_phantom_spec((48, 48, 48), (1.0, 1.0, 1.0), n_labels=6,
                                  n_train=2, gap_range_mm=(3.0, 10.0),
                                  jitter=1, seed=3)
        _, metadata = generate_phantom(spec)
        off_diag = metadata.gap_mm[~np.eye(len(metadata.labels), dtype=bool)]
        assert off_diag.min() >= 3.0

    def test_chain_unpackable_grid(self):
        with pytest.raises(MergeSplitError, match="pack|fit"):
            chain_phantom_spec((16, 16, 16), (1.0, 1.0, 1.0), n_labels=30,
                               n_train=1, gap_range_mm=(8.0, 10.0), seed=0)

    def test_cluster_geometry(self):
        spec = clustered_phantom_spec((64, 64, 64), (1.0, 1.0, 1.0),
                                      n_clusters=4, cluster_size=3, n_train=2,
                                      radius=3.0, intra_gap_mm=2.0,
                                      inter_gap_mm=16.0, seed=0)
        assert len(spec.blobs) == 12
        _, metadata = generate_phantom(spec)
        gap = metadata.gap_mm
        labels = list(metadata.labels)
        for i, la in enumerate(labels):
            for j, lb in enumerate(labels):
                if i >= j:
                    continue
                same_cluster = (la - 1) // 3 == (lb - 1) // 3
                if same_cluster:
                    assert gap[i, j] <= 5.0
                else:
                    assert gap[i, j] > 16.0


class TestSpecJson:
    def test_round_trip(self):
        spec = simple_spec(jitter=2)
        assert spec_from_json(spec_to_json(spec)) == spec

    def test_version_checked(self):
        doc = json.loads(spec_to_json(simple_spec()))
        doc["version"] = 99
        with pytest.raises(MergeSplitError, match="version"):
            spec_from_json(json.dumps(doc))


class TestPerturb:
    def base(self):
        meta = GridMeta((16, 16, 16), (1.0, 1.0, 1.0))
        arr = np.zeros(meta.dims, dtype=np.int32)
        arr[7, 7, 7] = 5
        return LabelVolume(meta, arr)

    def sphere(self):
        spec = simple_spec(dims=(20, 20, 20), n_train=1,
                           blobs=(Blob(1, (9.0, 9.0, 9.0), 5.0),))
        return generate_phantom(spec)[0][0]

    def test_radius_zero_is_identity(self):
        vol = self.sphere()
        for kind in ("dilate", "erode", "boundary_jitter"):
            assert perturb(vol, kind, 0) == vol

    def test_dilate_single_voxel_makes_cross(self):
        out = perturb(self.base(), "dilate", 1)
        assert dict(unique_labels(out))[5] == 7
        assert out.voxels[6, 7, 7] == 5
        assert out.voxels[6, 6, 7] == 0

    def test_dilate_contested_voxel_goes_to_smaller_label(self):
        meta = GridMeta((5, 1, 1), (1.0, 1.0, 1.0))
        arr = np.zeros(meta.dims, dtype=np.int32)
        arr[0, 0, 0] = 9
        arr[2, 0, 0] = 4
        out = perturb(LabelVolume(meta, arr), "dilate", 1)
        assert out.voxels[1, 0, 0] == 4

    def test_erode_single_voxel_disappears(self):
        out = perturb(self.base(), "erode", 1)
        assert np.all(out.voxels == 0)

    def test_dice_decreases_with_radius(self):
        vol = self.sphere()
        last = 1.0
        for radius in (1, 2, 3):
            d = dice(perturb(vol, "dilate", radius), vol, 1)
            assert d < last
            last = d

    def test_jitter_is_seeded(self):
        vol = self.sphere()
        a = perturb(vol, "boundary_jitter", 1, seed=7)
        b = perturb(vol, "boundary_jitter", 1, seed=7)
        c = perturb(vol, "boundary_jitter", 1, seed=8)
        assert a == b
        assert a != c

    def test_jitter_touches_only_boundary(self):
        vol = self.sphere()
        out = perturb(vol, "boundary_jitter", 1, seed=3)
        changed = out.voxels != vol.voxels
        # interior of the sphere and deep background are untouched
        assert not changed[9, 9, 9]
        assert not changed[0, 0, 0]
        assert changed.sum() > 0

    def test_no_new_labels_ever(self):
        vol = self.sphere()
        allowed = {l for l, _ in unique_labels(vol)}
        for kind in ("dilate", "erode", "boundary_jitter"):
            out = perturb(vol, kind, 2, seed=1)
            assert {l for l, _ in unique_labels(out)} <= allowed

    def test_unknown_kind_rejected(self):
        with pytest.raises(MergeSplitError, match="kind"):
            perturb(self.base(), "blur", 1)
