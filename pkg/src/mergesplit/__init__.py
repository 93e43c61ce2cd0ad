"""Label merge-and-split for high-cardinality segmentation volumes.

Groups spatially separate, volume-compatible labels into merged labels via
greedy graph colouring, and restores the original labels from merged
predictions using atlas-derived influence regions.
"""

__version__ = "0.1.0"

from .edt import distance_transform, edt
from .errors import (DegenerateLabelError, DigestMismatchError, FormatError,
                     GridMismatchError, MergeSplitError,
                     UnknownLabelError, UnsupportedDatatypeError)
from .influence import (InfluenceMap, build_all_influence_maps,
                        build_influence_map, load_influence_maps,
                        save_influence_maps, split)
from .merging import (ConstraintGraph, MergePlan, apply_merge, build_graph,
                      build_merge_plan, greedy_color, load_merge_plan,
                      plan_digest, plan_from_matrices, save_merge_plan,
                      smallest_last_order, smallest_last_trace, sweep)
from .metrics import (MetricsReport, dice, relative_volume_error, report,
                      report_csv_bytes)
from .pairwise import (DistanceMatrix, RatioMatrix, inner_boundary,
                       matrix_csv_bytes, min_distance_matrix,
                       ratio_matrix_from_support, volume_ratio_matrix)
from .phantom import (Blob, PhantomSpec, chain_phantom_spec,
                      clustered_phantom_spec, generate_phantom,
                      load_phantom_spec, perturb, spec_from_json,
                      spec_to_json)
from .support import (FudgedPrior, SupportMap, build_support_map,
                      fudged_prior, fuzzy_prior, load_support_map,
                      save_support_map)
from .volumes import (GridMeta, LabelVolume, ScalarVolume, load_volume,
                      save_volume, unique_labels)

__all__ = [name for name in dir() if not name.startswith("_")]
