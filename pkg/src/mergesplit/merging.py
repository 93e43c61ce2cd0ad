"""Constraint graph, greedy colouring and merge plans.

An edge between two labels forbids merging them; labels are mergeable when
their pooled supports are farther apart than the distance threshold AND
their average volumes differ by less than the ratio threshold. Colour
classes of the complement-free greedy colouring become the merged labels.

The ordering and colouring use fixed smallest-ID tie-breaks so identical
inputs always produce identical plans.
"""

import hashlib
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import MergeSplitError, UnknownLabelError
from .volumes import LabelVolume

PLAN_VERSION = 1


class ConstraintGraph:
    """Undirected graph on mergeable labels; an edge forbids a merge."""

    def __init__(self, vertices, edges):
        self.vertices = tuple(sorted(int(v) for v in vertices))
        vertex_set = set(self.vertices)
        if len(vertex_set) != len(self.vertices):
            raise MergeSplitError("duplicate vertices")
        self.adj = {v: set() for v in self.vertices}
        for a, b in edges:
            a, b = int(a), int(b)
            if a == b:
                raise MergeSplitError(f"self-loop on vertex {a}")
            if a not in vertex_set or b not in vertex_set:
                raise MergeSplitError(f"edge ({a}, {b}) uses unknown vertex")
            self.adj[a].add(b)
            self.adj[b].add(a)

    @property
    def n_vertices(self):
        return len(self.vertices)

    @property
    def n_edges(self):
        return sum(len(nbrs) for nbrs in self.adj.values()) // 2

    def neighbors(self, v):
        return self.adj[v]

    def degree(self, v):
        return len(self.adj[v])

    def has_edge(self, a, b):
        return int(b) in self.adj[int(a)]


def build_graph(distance_matrix, ratio_matrix, delta_d, delta_v,
                pins=(), background=0):
    """Threshold the matrices into the merge-constraint graph.

    Labels l1, l2 stay unconnected (mergeable) iff D > delta_d and
    V < delta_v, both strict. Pinned labels connect to every other vertex,
    so they can never merge. Background is not a vertex.
    """
    if distance_matrix.label_table != ratio_matrix.label_table:
        raise MergeSplitError("distance and ratio matrices use different "
                              "label tables")
    if delta_d < 0:
        raise MergeSplitError(f"delta_d must be >= 0, got {delta_d}")
    if delta_v < 1:
        raise MergeSplitError(f"delta_v must be >= 1, got {delta_v}")
    table = distance_matrix.label_table
    vertices = [l for l in table if l != background]
    vertex_set = set(vertices)
    pins = sorted({int(p) for p in pins})
    for pin in pins:
        if pin not in vertex_set:
            raise UnknownLabelError(
                f"pinned label {pin} is not a mergeable label")
    pin_set = set(pins)

    index = {l: i for i, l in enumerate(table)}
    d = distance_matrix.values
    v = ratio_matrix.values
    edges = []
    for a_pos, a in enumerate(vertices):
        for b in vertices[a_pos + 1:]:
            if a in pin_set or b in pin_set:
                edges.append((a, b))
                continue
            i, j = index[a], index[b]
            if not (d[i, j] > delta_d and v[i, j] < delta_v):
                edges.append((a, b))
    return ConstraintGraph(vertices, edges)


def smallest_last_trace(graph):
    """Removal sequence of repeatedly deleting a minimum-degree vertex
    (ties: smallest label ID), as (vertex, degree_at_removal) pairs.

    The maximum degree over the trace is the graph degeneracy, which
    bounds the greedy colour count.
    """
    degrees = {v: graph.degree(v) for v in graph.vertices}
    remaining = set(graph.vertices)
    trace = []
    while remaining:
        pick = min(remaining, key=lambda v: (degrees[v], v))
        trace.append((pick, degrees[pick]))
        remaining.remove(pick)
        for nbr in graph.neighbors(pick):
            if nbr in remaining:
                degrees[nbr] -= 1
    return trace


def smallest_last_order(graph):
    """Reverse of the minimum-degree removal sequence."""
    return [v for v, _ in reversed(smallest_last_trace(graph))]


def greedy_color(graph, order):
    """First-available colouring along the given vertex order."""
    if sorted(order) != list(graph.vertices):
        raise MergeSplitError("order is not a permutation of the vertices")
    colors = {}
    for v in order:
        used = {colors[u] for u in graph.neighbors(v) if u in colors}
        c = 0
        while c in used:
            c += 1
        colors[v] = c
    return colors


@dataclass(frozen=True)
class MergePlan:
    """Grouping of original labels into merged labels.

    Merged IDs run 1..len(groups) in order of each group's smallest
    member; background maps to merged 0.
    """

    delta_d_mm: float
    delta_v: float
    pins: tuple
    background: int
    label_table: tuple
    groups: tuple           # tuple of tuples of original IDs
    mapping: dict           # original ID -> merged ID
    provenance: dict

    @property
    def n_merged(self):
        return len(self.groups)

    def members(self, merged_id):
        if not 1 <= merged_id <= self.n_merged:
            raise UnknownLabelError(f"no merged label {merged_id} in plan")
        return self.groups[merged_id - 1]


def build_merge_plan(coloring, label_table, *, delta_d, delta_v, pins=(),
                     background=0, provenance=None):
    """Turn colour classes into a merge plan with deterministic numbering."""
    label_table = tuple(int(l) for l in label_table)
    expected = {l for l in label_table if l != background}
    if set(coloring) != expected:
        raise MergeSplitError("colouring does not cover the mergeable labels")
    by_color = {}
    for label, color in coloring.items():
        by_color.setdefault(color, []).append(label)
    groups = sorted((sorted(g) for g in by_color.values()), key=lambda g: g[0])
    mapping = {}
    if background in label_table:
        mapping[background] = 0
    for k, group in enumerate(groups, start=1):
        for label in group:
            mapping[label] = k
    return MergePlan(
        delta_d_mm=float(delta_d),
        delta_v=float(delta_v),
        pins=tuple(sorted(int(p) for p in pins)),
        background=int(background),
        label_table=label_table,
        groups=tuple(tuple(g) for g in groups),
        mapping=mapping,
        provenance=dict(provenance or {}),
    )


def plan_from_matrices(distance_matrix, ratio_matrix, delta_d, delta_v,
                       pins=(), background=0, provenance=None):
    """Full planning pipeline: graph -> ordering -> colouring -> plan."""
    graph = build_graph(distance_matrix, ratio_matrix, delta_d, delta_v,
                        pins=pins, background=background)
    coloring = greedy_color(graph, smallest_last_order(graph))
    return build_merge_plan(coloring, distance_matrix.label_table,
                            delta_d=delta_d, delta_v=delta_v, pins=pins,
                            background=background, provenance=provenance)


def apply_merge(vol, plan):
    """Relabel a volume through the plan's original -> merged mapping."""
    present = np.unique(vol.voxels)
    table = np.array(sorted(plan.mapping), dtype=np.int64)
    known = np.isin(present, table)
    if not known.all():
        bad = int(present[~known][0])
        count = int((vol.voxels == bad).sum())
        raise UnknownLabelError(
            f"volume contains label {bad} ({count} voxels) not covered by the plan")
    lut = np.array([plan.mapping[int(l)] for l in table], dtype=np.int32)
    merged = lut[np.searchsorted(table, vol.voxels.astype(np.int64))]
    return LabelVolume(vol.meta, merged)


def sweep(distance_matrix, ratio_matrix, delta_d_list, delta_v_list,
          pins=(), background=0):
    """Merged-label counts over a threshold grid, as
    (delta_d, delta_v, n_merged) rows in input order."""
    delta_d_list = list(delta_d_list)
    delta_v_list = list(delta_v_list)
    if not delta_d_list or not delta_v_list:
        raise MergeSplitError("sweep needs at least one value per threshold")
    rows = []
    for dd in delta_d_list:
        for dv in delta_v_list:
            graph = build_graph(distance_matrix, ratio_matrix, dd, dv,
                                pins=pins, background=background)
            coloring = greedy_color(graph, smallest_last_order(graph))
            n_merged = len(set(coloring.values()))
            rows.append((float(dd), float(dv), n_merged))
    return rows


def sweep_csv_bytes(rows):
    lines = ["delta_d_mm,delta_v,n_merged_labels"]
    for dd, dv, n in rows:
        lines.append(f"{dd:.6f},{dv:.6f},{n}")
    return ("\n".join(lines) + "\n").encode()


def _plan_dict(plan):
    return {
        "version": PLAN_VERSION,
        "delta_d_mm": plan.delta_d_mm,
        "delta_v": plan.delta_v,
        "pins": list(plan.pins),
        "background": plan.background,
        "label_table": list(plan.label_table),
        "groups": [list(g) for g in plan.groups],
        "mapping": {str(k): v for k, v in plan.mapping.items()},
        "provenance": dict(plan.provenance),
    }


def plan_json_bytes(plan):
    """Canonical JSON encoding; the plan digest is taken over these bytes."""
    if not math.isfinite(plan.delta_v) or not math.isfinite(plan.delta_d_mm):
        raise MergeSplitError("plan thresholds must be finite for serialisation")
    return (json.dumps(_plan_dict(plan), sort_keys=True, indent=2) + "\n").encode()


def plan_digest(plan):
    return hashlib.sha256(plan_json_bytes(plan)).hexdigest()


def save_merge_plan(plan, path):
    Path(path).write_bytes(plan_json_bytes(plan))


def load_merge_plan(path):
    path = Path(path)
    if not path.is_file():
        raise MergeSplitError(f"no merge plan at {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MergeSplitError(f"{path}: invalid plan JSON ({exc})") from exc
    if data.get("version") != PLAN_VERSION:
        raise MergeSplitError(f"unsupported plan version {data.get('version')!r}")
    plan = MergePlan(
        delta_d_mm=float(data["delta_d_mm"]),
        delta_v=float(data["delta_v"]),
        pins=tuple(int(p) for p in data["pins"]),
        background=int(data["background"]),
        label_table=tuple(int(l) for l in data["label_table"]),
        groups=tuple(tuple(int(l) for l in g) for g in data["groups"]),
        mapping={int(k): int(v) for k, v in data["mapping"].items()},
        provenance=dict(data.get("provenance", {})),
    )
    _validate_plan(plan)
    return plan


def _validate_plan(plan):
    seen = set()
    for k, group in enumerate(plan.groups, start=1):
        if not group:
            raise MergeSplitError("plan contains an empty group")
        for label in group:
            if label in seen:
                raise MergeSplitError(f"label {label} appears in two groups")
            seen.add(label)
            if plan.mapping.get(label) != k:
                raise MergeSplitError(f"mapping for label {label} disagrees "
                                      "with its group")
    mergeable = {l for l in plan.label_table if l != plan.background}
    if seen != mergeable:
        raise MergeSplitError("groups do not cover the plan's label table")
    if plan.background in plan.label_table and \
            plan.mapping.get(plan.background) != 0:
        raise MergeSplitError("background must map to merged label 0")
