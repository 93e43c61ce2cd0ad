"""Per-label overlap metrics between predicted and reference label volumes."""

from dataclasses import dataclass

import numpy as np

from .errors import GridMismatchError


def _check_grids(pred, gt):
    if not pred.meta.compatible(gt.meta):
        raise GridMismatchError(
            f"prediction grid {pred.meta.dims}/{pred.meta.spacing} does not "
            f"match ground truth {gt.meta.dims}/{gt.meta.spacing}")


def dice(pred, gt, label):
    """Dice coefficient 2|A∩B| / (|A|+|B|) for one label; None when the
    label is absent from both volumes."""
    _check_grids(pred, gt)
    a = pred.voxels == label
    b = gt.voxels == label
    na = int(a.sum())
    nb = int(b.sum())
    if na + nb == 0:
        return None
    return 2.0 * int((a & b).sum()) / (na + nb)


def relative_volume_error(pred, gt, label):
    """Signed (|A| - |B|) / |B|; None when the label is absent from the
    ground truth. Positive means over-segmentation."""
    _check_grids(pred, gt)
    na = int((pred.voxels == label).sum())
    nb = int((gt.voxels == label).sum())
    if nb == 0:
        return None
    return (na - nb) / nb


@dataclass(frozen=True)
class MetricRow:
    label: int
    dice: float          # None when undefined
    rel_vol_err: float   # None when undefined
    gt_voxels: int
    pred_voxels: int


@dataclass(frozen=True)
class MetricsReport:
    rows: tuple
    mean_dice: float     # mean over labels present in the ground truth

    def row(self, label):
        for r in self.rows:
            if r.label == label:
                return r
        raise KeyError(label)


def report(pred, gt, background=0):
    """Per-label metrics for every non-background label present in either
    volume, plus the mean Dice over labels present in the ground truth."""
    _check_grids(pred, gt)
    table = np.union1d(np.unique(pred.voxels), np.unique(gt.voxels))
    n = table.size
    pred_idx = np.searchsorted(table, pred.voxels.ravel(order="F"))
    gt_idx = np.searchsorted(table, gt.voxels.ravel(order="F"))
    confusion = np.bincount(gt_idx * n + pred_idx,
                            minlength=n * n).reshape(n, n)
    gt_counts = confusion.sum(axis=1)
    pred_counts = confusion.sum(axis=0)
    inter = np.diag(confusion)

    rows = []
    dice_sum = 0.0
    dice_n = 0
    for i, label in enumerate(table):
        label = int(label)
        if label == background:
            continue
        na, nb, ni = int(pred_counts[i]), int(gt_counts[i]), int(inter[i])
        d = 2.0 * ni / (na + nb) if na + nb else None
        rve = (na - nb) / nb if nb else None
        rows.append(MetricRow(label, d, rve, nb, na))
        if nb and d is not None:
            dice_sum += d
            dice_n += 1
    mean = dice_sum / dice_n if dice_n else None
    return MetricsReport(tuple(rows), mean)


def report_csv_bytes(rep):
    """CSV rows per label; undefined metrics stay as empty cells."""
    lines = ["label_id,dice,rel_vol_err,gt_voxels,pred_voxels"]
    for r in rep.rows:
        d = f"{r.dice:.6f}" if r.dice is not None else ""
        rve = f"{r.rel_vol_err:.6f}" if r.rel_vol_err is not None else ""
        lines.append(f"{r.label},{d},{rve},{r.gt_voxels},{r.pred_voxels}")
    return ("\n".join(lines) + "\n").encode()
