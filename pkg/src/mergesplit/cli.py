"""Batch pipeline driver.

Every pipeline stage is a subcommand producing files; a shared JSON config
provides defaults and explicit flags override it. Exit codes: 0 success,
2 invalid input or usage, 1 internal error. Failures print a single
machine-readable JSON line on stderr.
"""

import argparse
import dataclasses
import glob
import hashlib
import json
import sys
from pathlib import Path

from . import __version__
from .errors import MergeSplitError
from .influence import (build_all_influence_maps, load_influence_maps,
                        save_influence_maps, split)
from .merging import (apply_merge, load_merge_plan, plan_from_matrices,
                      save_merge_plan, sweep, sweep_csv_bytes)
from .metrics import report, report_csv_bytes
from .pairwise import (matrix_csv_bytes, mean_volumes_csv_bytes,
                       min_distance_matrix, ratio_matrix_from_support)
from .phantom import generate_phantom, load_phantom_spec, metadata_to_json
from .support import build_support_map, load_support_map, save_support_map
from .volumes import LabelVolume, load_volume, save_volume

CONFIG_VERSION = 1
CONFIG_DEFAULTS = {
    "training_dir": None,
    "predictions_dir": None,
    "ground_truth_dir": None,
    "output_dir": None,
    "delta_d_mm": 10.0,
    "delta_v": 3.5,
    "pins": [],
    "background": 0,
    "threads": 0,
    "seed": 0,
}


def load_config(path):
    path = Path(path)
    if not path.is_file():
        raise MergeSplitError(f"no config file at {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise MergeSplitError(f"{path}: invalid config JSON ({exc})") from exc
    if doc.get("version") != CONFIG_VERSION:
        raise MergeSplitError(f"unsupported config version {doc.get('version')!r}")
    unknown = set(doc) - set(CONFIG_DEFAULTS) - {"version"}
    if unknown:
        raise MergeSplitError(f"unknown config keys: {sorted(unknown)}")
    merged = dict(CONFIG_DEFAULTS)
    merged.update({k: doc[k] for k in doc if k != "version"})
    return merged


def _effective(args, key, fallback=None):
    """Flag value if given, else config value, else the built-in default."""
    value = getattr(args, key, None)
    if value is not None:
        return value
    config = getattr(args, "_config", None)
    if config is not None and config.get(key) is not None:
        return config[key]
    if fallback is not None:
        return fallback
    return CONFIG_DEFAULTS.get(key)


def _parse_pins(text):
    if text is None or text == "":
        return []
    try:
        return [int(x) for x in text.split(",")]
    except ValueError:
        raise MergeSplitError(f"cannot parse pin list {text!r}") from None


def _parse_float_list(text, what):
    try:
        return [float(x) for x in text.split(",")]
    except ValueError:
        raise MergeSplitError(f"cannot parse {what} list {text!r}") from None


def _input_files(spec_str):
    """Volume files from a directory or a glob pattern, sorted by name."""
    if any(ch in spec_str for ch in "*?["):
        files = sorted(Path(p) for p in glob.glob(spec_str))
    else:
        root = Path(spec_str)
        if not root.is_dir():
            raise MergeSplitError(f"input directory {root} does not exist")
        files = sorted(p for p in root.iterdir()
                       if p.name.endswith((".nii", ".nii.gz")))
    if not files:
        raise MergeSplitError(f"no .nii/.nii.gz inputs match {spec_str}")
    return files


def _stem(path):
    name = Path(path).name
    for suffix in (".nii.gz", ".nii"):
        if name.endswith(suffix):
            return name[:-len(suffix)]
    return name


def _case_name(path):
    stem = _stem(path)
    while True:
        for suffix in ("_merged", "_split"):
            if stem.endswith(suffix):
                stem = stem[:-len(suffix)]
                break
        else:
            return stem


def _load_labels(files):
    vols = []
    for path in files:
        vol = load_volume(path)
        if not isinstance(vol, LabelVolume):
            raise MergeSplitError(f"{path} is not an integer label volume")
        vols.append(vol)
    return vols


def _check_grids(files, vols):
    for path, vol in zip(files, vols):
        if not vols[0].meta.compatible(vol.meta):
            raise MergeSplitError(
                f"{path}: grid {vol.meta.dims}/{vol.meta.spacing} does not "
                f"match {files[0]}")


def _out_dir(args):
    out = _effective(args, "out", fallback=_effective(args, "output_dir"))
    if out is None:
        raise MergeSplitError("no output location: pass --out or set "
                              "output_dir in the config")
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommands

def cmd_phantom(args):
    spec = load_phantom_spec(args.spec)
    if args.seed is not None:
        spec = dataclasses.replace(spec, seed=args.seed)
    out = _out_dir(args)
    vols, metadata = generate_phantom(spec, threads=_effective(args, "threads"))
    width = max(3, len(str(len(vols) - 1)))
    for i, vol in enumerate(vols):
        save_volume(vol, out / f"train_{i:0{width}d}.nii.gz")
    (out / "metadata.json").write_text(metadata_to_json(metadata, spec))
    print(f"phantom: {len(vols)} volumes, {len(spec.labels)} labels -> {out}")
    return 0


def cmd_support(args):
    train = _effective(args, "train", fallback=_effective(args, "training_dir"))
    if train is None:
        raise MergeSplitError("no training inputs: pass --train or set "
                              "training_dir in the config")
    files = _input_files(str(train))
    vols = _load_labels(files)
    _check_grids(files, vols)
    smap = build_support_map(vols, threads=_effective(args, "threads"))
    out = _out_dir(args)
    save_support_map(smap, out)
    print(f"support: {smap.n_train} volumes, {smap.n_labels} labels -> {out}")
    return 0


def cmd_plan(args):
    smap = load_support_map(args.support)
    delta_d = float(_effective(args, "delta_d", fallback=_effective(args, "delta_d_mm")))
    delta_v = float(_effective(args, "delta_v"))
    background = int(_effective(args, "background"))
    pins = args.pins if args.pins is not None else _effective(args, "pins")
    if isinstance(pins, str):
        pins = _parse_pins(pins)
    threads = _effective(args, "threads")

    dmat = min_distance_matrix(smap, threads=threads)
    vmat = ratio_matrix_from_support(smap)
    d_csv = matrix_csv_bytes(dmat.label_table, dmat.values)
    v_csv = matrix_csv_bytes(vmat.label_table, vmat.values)
    provenance = {
        "training_hash": smap.training_hash,
        "d_matrix_digest": hashlib.sha256(d_csv).hexdigest(),
        "v_matrix_digest": hashlib.sha256(v_csv).hexdigest(),
    }
    plan = plan_from_matrices(dmat, vmat, delta_d, delta_v, pins=pins,
                              background=background, provenance=provenance)
    out = _out_dir(args)
    (out / "distance_matrix.csv").write_bytes(d_csv)
    (out / "volume_ratio_matrix.csv").write_bytes(v_csv)
    (out / "mean_volumes.csv").write_bytes(mean_volumes_csv_bytes(vmat))
    save_merge_plan(plan, out / "merge_plan.json")
    n_orig = len([l for l in plan.label_table if l != background])
    print(f"plan: {n_orig} original labels -> {plan.n_merged} merged "
          f"(delta_d={delta_d}, delta_v={delta_v}) -> {out}")
    return 0


def cmd_merge(args):
    plan = load_merge_plan(args.plan)
    files = _input_files(args.inputs)
    out = _out_dir(args)
    for path in files:
        vol = load_volume(path)
        if not isinstance(vol, LabelVolume):
            raise MergeSplitError(f"{path} is not an integer label volume")
        merged = apply_merge(vol, plan)
        save_volume(merged, out / f"{_stem(path)}_merged.nii.gz")
    print(f"merge: {len(files)} volumes -> {out}")
    return 0


def cmd_influence(args):
    smap = load_support_map(args.support)
    plan = load_merge_plan(args.plan)
    maps = build_all_influence_maps(plan, smap,
                                    threads=_effective(args, "threads"))
    out = _out_dir(args)
    save_influence_maps(maps, plan, out)
    print(f"influence: {len(maps)} maps -> {out}")
    return 0


def cmd_split(args):
    plan = load_merge_plan(args.plan)
    maps = load_influence_maps(args.maps, plan)
    files = _input_files(args.inputs)
    out = _out_dir(args)
    for path in files:
        vol = load_volume(path)
        if not isinstance(vol, LabelVolume):
            raise MergeSplitError(f"{path} is not an integer label volume")
        restored = split(vol, plan, maps)
        save_volume(restored, out / f"{_stem(path)}_split.nii.gz")
    print(f"split: {len(files)} volumes -> {out}")
    return 0


def cmd_evaluate(args):
    pred_dir = _effective(args, "pred", fallback=_effective(args, "predictions_dir"))
    gt_dir = _effective(args, "gt", fallback=_effective(args, "ground_truth_dir"))
    if pred_dir is None or gt_dir is None:
        raise MergeSplitError("evaluate needs --pred and --gt (or config "
                              "predictions_dir / ground_truth_dir)")
    background = int(_effective(args, "background"))
    pred_files = {_case_name(p): p for p in _input_files(str(pred_dir))}
    gt_files = {_case_name(p): p for p in _input_files(str(gt_dir))}
    if set(pred_files) != set(gt_files):
        missing = sorted(set(pred_files) ^ set(gt_files))
        raise MergeSplitError(f"prediction/ground-truth cases do not match: "
                              f"{missing}")
    out = _out_dir(args)
    cases = {}
    for case in sorted(pred_files):
        pred = load_volume(pred_files[case])
        gt = load_volume(gt_files[case])
        rep = report(pred, gt, background=background)
        (out / f"{case}_metrics.csv").write_bytes(report_csv_bytes(rep))
        cases[case] = {"mean_dice": rep.mean_dice,
                       "n_labels": len(rep.rows)}
    defined = [c["mean_dice"] for c in cases.values()
               if c["mean_dice"] is not None]
    summary = {
        "version": 1,
        "cases": cases,
        "mean_dice": sum(defined) / len(defined) if defined else None,
    }
    (out / "summary.json").write_text(
        json.dumps(summary, sort_keys=True, indent=2) + "\n")
    overall = summary["mean_dice"]
    print(f"evaluate: {len(cases)} cases, mean dice "
          f"{overall if overall is None else round(overall, 6)} -> {out}")
    return 0


def cmd_sweep(args):
    smap = load_support_map(args.support)
    delta_d_list = _parse_float_list(args.delta_d_list, "delta_d")
    delta_v_list = _parse_float_list(args.delta_v_list, "delta_v")
    pins = _parse_pins(args.pins) if args.pins is not None \
        else _effective(args, "pins")
    background = int(_effective(args, "background"))
    dmat = min_distance_matrix(smap, threads=_effective(args, "threads"))
    vmat = ratio_matrix_from_support(smap)
    rows = sweep(dmat, vmat, delta_d_list, delta_v_list, pins=pins,
                 background=background)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_bytes(sweep_csv_bytes(rows))
    print(f"sweep: {len(rows)} configurations -> {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing

def _add_common(sub):
    sub.add_argument("--config", help="pipeline config JSON")
    sub.add_argument("--threads", type=int, help="worker threads (0 = auto)")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="mergesplit",
        description="Merge spatially separate labels for compact model "
                    "training and split predictions back afterwards.")
    parser.add_argument("--version", action="version", version=__version__)
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("phantom", help="generate a synthetic label dataset")
    p.add_argument("--spec", required=True, help="phantom spec JSON")
    p.add_argument("--seed", type=int, help="override the spec seed")
    p.add_argument("--out", help="output directory")
    _add_common(p)
    p.set_defaults(func=cmd_phantom)

    p = subs.add_parser("support", help="build the label support bundle")
    p.add_argument("--train", help="training label directory or glob")
    p.add_argument("--out", help="bundle output directory")
    _add_common(p)
    p.set_defaults(func=cmd_support)

    p = subs.add_parser("plan", help="compute matrices and the merge plan")
    p.add_argument("--support", required=True, help="support bundle directory")
    p.add_argument("--delta-d", dest="delta_d", type=float,
                   help="minimum-distance threshold in mm (default 10)")
    p.add_argument("--delta-v", dest="delta_v", type=float,
                   help="volume-ratio threshold (default 3.5)")
    p.add_argument("--pins", help="comma-separated labels excluded from merging")
    p.add_argument("--background", type=int, help="background label (default 0)")
    p.add_argument("--out", help="output directory")
    _add_common(p)
    p.set_defaults(func=cmd_plan)

    p = subs.add_parser("merge", help="relabel volumes through a plan")
    p.add_argument("--plan", required=True, help="merge plan JSON")
    p.add_argument("--in", dest="inputs", required=True,
                   help="input directory or glob")
    p.add_argument("--out", help="output directory")
    _add_common(p)
    p.set_defaults(func=cmd_merge)

    p = subs.add_parser("influence", help="build influence region maps")
    p.add_argument("--support", required=True, help="support bundle directory")
    p.add_argument("--plan", required=True, help="merge plan JSON")
    p.add_argument("--out", help="output directory")
    _add_common(p)
    p.set_defaults(func=cmd_influence)

    p = subs.add_parser("split", help="restore original labels in predictions")
    p.add_argument("--plan", required=True, help="merge plan JSON")
    p.add_argument("--maps", required=True, help="influence map directory")
    p.add_argument("--in", dest="inputs", required=True,
                   help="merged prediction directory or glob")
    p.add_argument("--out", help="output directory")
    _add_common(p)
    p.set_defaults(func=cmd_split)

    p = subs.add_parser("evaluate", help="per-label metrics against ground truth")
    p.add_argument("--pred", help="prediction directory or glob")
    p.add_argument("--gt", help="ground truth directory or glob")
    p.add_argument("--background", type=int, help="background label (default 0)")
    p.add_argument("--out", help="output directory")
    _add_common(p)
    p.set_defaults(func=cmd_evaluate)

    p = subs.add_parser("sweep", help="merged-label counts over threshold grids")
    p.add_argument("--support", required=True, help="support bundle directory")
    p.add_argument("--delta-d-list", dest="delta_d_list", required=True,
                   help="comma-separated distance thresholds")
    p.add_argument("--delta-v-list", dest="delta_v_list", required=True,
                   help="comma-separated ratio thresholds (inf allowed)")
    p.add_argument("--pins", help="comma-separated labels excluded from merging")
    p.add_argument("--background", type=int, help="background label (default 0)")
    p.add_argument("--out", required=True, help="output CSV path")
    _add_common(p)
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args._config = load_config(args.config) if args.config else None
        return args.func(args)
    except MergeSplitError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - the CLI boundary reports all bugs
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
