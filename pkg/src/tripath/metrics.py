"""Streaming confusion matrix and the four change-detection metrics.

Conventions (documented because the usual formulas have ambiguous corners):

* ``q[i][j]`` counts pixels predicted as class ``i`` whose ground truth is
  ``j``; class 0 is the no-change background.
* ``IoU_nc`` uses the union form ``q00 / (row0 + col0 - q00)``.
* The separated-kappa statistics zero only the ``q[0][0]`` entry before
  computing agreement, so genuine change/background confusions still count.
* Degenerate denominators yield ``None`` ("undefined"), never a silent 0.0.
"""

import json
import math
from dataclasses import dataclass, asdict

import numpy as np

from .errors import EmptyMatrix, InvalidArg, LabelOutOfRange, ShapeMismatch


class ConfusionMatrix:
    """(N+1)x(N+1) integer counts for N change classes plus background."""

    def __init__(self, num_classes):
        if num_classes < 1:
            raise InvalidArg("need at least one change class")
        self.num_classes = int(num_classes)
        side = self.num_classes + 1
        self.matrix = np.zeros((side, side), dtype=np.int64)

    @classmethod
    def from_matrix(cls, matrix):
        arr = np.asarray(matrix, dtype=np.int64)
        if arr.ndim != 2 or arr.shape[0] != arr.shape[1] or arr.shape[0] < 2:
            raise ShapeMismatch("matrix must be square with side >= 2")
        if (arr < 0).any():
            raise InvalidArg("counts must be nonnegative")
        cm = cls(arr.shape[0] - 1)
        cm.matrix = arr.copy()
        return cm

    @property
    def total(self):
        return int(self.matrix.sum())

    def accumulate(self, pred_mask, gt_mask):
        """Add per-pixel counts; associative and commutative across calls."""
        pred = np.asarray(pred_mask)
        gt = np.asarray(gt_mask)
        if pred.shape != gt.shape:
            raise ShapeMismatch(f"pred {pred.shape} vs gt {gt.shape}")
        pred = pred.reshape(-1).astype(np.int64)
        gt = gt.reshape(-1).astype(np.int64)
        side = self.num_classes + 1
        for name, arr in (("pred", pred), ("gt", gt)):
            if arr.size and (arr.min() < 0 or arr.max() >= side):
                raise LabelOutOfRange(f"{name} mask values must lie in [0, {side - 1}]")
        counts = np.bincount(pred * side + gt, minlength=side * side)
        self.matrix += counts.reshape(side, side)
        return self

    def merge(self, other):
        if self.num_classes != other.num_classes:
            raise ShapeMismatch("cannot merge matrices of different sizes")
        out = ConfusionMatrix(self.num_classes)
        out.matrix = self.matrix + other.matrix
        return out

    def __add__(self, other):
        return self.merge(other)

    def copy(self):
        return ConfusionMatrix.from_matrix(self.matrix)


@dataclass
class MetricsReport:
    OA: float
    mIoU: float | None
    IoU_nc: float | None
    IoU_c: float | None
    SeK: float | None
    rho: float | None
    eta: float | None
    P_scd: float | None
    R_scd: float | None
    F_scd: float | None
    per_class_iou: list

    def to_dict(self):
        return asdict(self)


def overall_accuracy(cm: ConfusionMatrix):
    q = cm.matrix
    total = q.sum()
    if total == 0:
        raise EmptyMatrix("confusion matrix holds no pixels")
    return float(np.trace(q) / total)


def miou(cm: ConfusionMatrix):
    """-> (mIoU, IoU_nc, IoU_c); background IoU and pooled-change IoU."""
    q = cm.matrix
    q00 = int(q[0, 0])
    nc_denom = int(q[0, :].sum() + q[:, 0].sum() - q00)
    iou_nc = q00 / nc_denom if nc_denom > 0 else None
    c_denom = int(q.sum() - q00)
    iou_c = float(q[1:, 1:].sum()) / c_denom if c_denom > 0 else None
    if iou_nc is None or iou_c is None:
        return None, iou_nc, iou_c
    return (iou_nc + iou_c) / 2.0, iou_nc, iou_c


def sek(cm: ConfusionMatrix):
    """-> (SeK, rho, eta) on the matrix with the background agreement removed."""
    q_hat = cm.matrix.astype(np.float64).copy()
    q_hat[0, 0] = 0.0
    s = q_hat.sum()
    if s == 0:
        return None, None, None
    rho = float(np.diag(q_hat)[1:].sum() / s)
    eta = float((q_hat.sum(axis=1) * q_hat.sum(axis=0)).sum() / (s * s))
    _, _, iou_c = miou(cm)
    if eta == 1.0 or iou_c is None:
        return None, rho, eta
    return math.exp(iou_c - 1.0) * (rho - eta) / (1.0 - eta), rho, eta


def f_scd(cm: ConfusionMatrix):
    """-> (F_scd, P_scd, R_scd) restricted to the change classes."""
    q = cm.matrix
    hits = float(np.diag(q)[1:].sum())
    p_denom = float(q[1:, :].sum())
    r_denom = float(q[:, 1:].sum())
    p = hits / p_denom if p_denom > 0 else None
    r = hits / r_denom if r_denom > 0 else None
    if p is None and r is None:
        f = None
    elif p is None or r is None:
        # the shared numerator is zero, so the defined side is zero
        f = 0.0
    elif p + r == 0.0:
        f = 0.0
    else:
        f = 2.0 * p * r / (p + r)
    return f, p, r


def per_class_iou(cm: ConfusionMatrix):
    q = cm.matrix
    out = []
    for c in range(cm.num_classes + 1):
        denom = int(q[c, :].sum() + q[:, c].sum() - q[c, c])
        out.append(float(q[c, c]) / denom if denom > 0 else None)
    return out


def compute_report(cm: ConfusionMatrix) -> MetricsReport:
    oa = overall_accuracy(cm)
    m, iou_nc, iou_c = miou(cm)
    s, rho, eta = sek(cm)
    f, p, r = f_scd(cm)
    return MetricsReport(
        OA=oa, mIoU=m, IoU_nc=iou_nc, IoU_c=iou_c,
        SeK=s, rho=rho, eta=eta,
        P_scd=p, R_scd=r, F_scd=f,
        per_class_iou=per_class_iou(cm),
    )


def report_dict(cm: ConfusionMatrix, class_names=None):
    """JSON-ready report: the ten metric values plus the raw counts."""
    out = compute_report(cm).to_dict()
    out["matrix"] = cm.matrix.tolist()
    out["num_classes"] = cm.num_classes
    out["class_names"] = list(class_names) if class_names else None
    return out


def write_report(path, cm: ConfusionMatrix, class_names=None):
    with open(path, "w") as fh:
        json.dump(report_dict(cm, class_names), fh, indent=2)
        fh.write("\n")
