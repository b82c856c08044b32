"""Classification metrics (OA, AA, Cohen's kappa) and map rendering.

The confusion matrix counts test pixels only, rows indexed by the true class
and columns by the prediction. AA averages per-class recall over classes that
actually appear in the test set. The rendered map is a plain-ASCII pixmap
(PPM P3) over a fixed 16-color palette; labels beyond the palette wrap around
modulo its size with a warning record.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .hsi_data import GroundTruth

# 16 distinguishable RGB colors; class k maps to PALETTE[k - 1], unlabeled to black.
PALETTE = (
    (230, 25, 75), (60, 180, 75), (255, 225, 25), (0, 130, 200),
    (245, 130, 48), (145, 30, 180), (70, 240, 240), (240, 50, 230),
    (210, 245, 60), (250, 190, 190), (0, 128, 128), (230, 190, 255),
    (170, 110, 40), (255, 250, 200), (128, 0, 0), (170, 255, 195),
)


@dataclass(frozen=True)
class EvalReport:
    confusion: np.ndarray
    oa: float
    aa: float
    kappa: float
    per_class_accuracy: np.ndarray

    def __post_init__(self):
        self.confusion.setflags(write=False)
        self.per_class_accuracy.setflags(write=False)


@dataclass(frozen=True)
class RenderedMap:
    text: str
    warnings: tuple[str, ...]


def confusion_matrix(pred: np.ndarray, gt: GroundTruth, test_indices: np.ndarray) -> np.ndarray:
    """Count matrix over the test pixels: element (t-1, p-1) counts truth t, prediction p."""
    pred = np.asarray(pred)
    test_indices = np.asarray(test_indices, dtype=np.int64)
    if pred.shape[0] != gt.height * gt.width:
        raise DataError(f"prediction length {pred.shape[0]} does not cover the "
                        f"{gt.height * gt.width}-pixel image")
    truth = gt.flat_labels()[test_indices]
    guess = pred[test_indices]
    c = gt.num_classes
    if (truth < 1).any():
        raise DataError("test indices include unlabeled pixels")
    if (guess < 1).any() or (guess > c).any():
        raise DataError("predictions do not cover all test pixels with labels in 1..c")
    conf = np.zeros((c, c), dtype=np.int64)
    np.add.at(conf, (truth - 1, guess - 1), 1)
    return conf


def report_from_confusion(confusion: np.ndarray) -> EvalReport:
    """Compute OA, AA, kappa, and per-class recall from a count matrix."""
    conf = np.asarray(confusion, dtype=np.int64)
    total = conf.sum()
    if total == 0:
        raise DataError("empty confusion matrix")
    oa = float(np.trace(conf) / total)
    row = conf.sum(axis=1)
    col = conf.sum(axis=0)
    with np.errstate(invalid="ignore", divide="ignore"):
        recall = np.where(row > 0, np.diag(conf) / np.where(row > 0, row, 1), np.nan)
    aa = float(np.nanmean(recall)) if (row > 0).any() else float("nan")
    p_e = float((row * col).sum() / (total * total))
    kappa = 0.0 if p_e >= 1.0 else float((oa - p_e) / (1.0 - p_e))
    return EvalReport(confusion=conf, oa=oa, aa=aa, kappa=kappa,
                      per_class_accuracy=recall)


def evaluate(pred: np.ndarray, gt: GroundTruth, test_indices: np.ndarray) -> EvalReport:
    return report_from_confusion(confusion_matrix(pred, gt, test_indices))


def render_map(pred: np.ndarray, gt: GroundTruth) -> RenderedMap:
    """Render predictions as a P3 pixmap; ground-truth-unlabeled pixels are black."""
    pred = np.asarray(pred).reshape(gt.height, gt.width)
    warnings: list[str] = []
    lines = ["P3", f"{gt.width} {gt.height}", "255"]
    wrapped: set[int] = set()
    for r in range(gt.height):
        row: list[str] = []
        for c in range(gt.width):
            if gt.labels[r, c] == 0:
                row.append("0 0 0")
                continue
            lab = int(pred[r, c])
            if lab > len(PALETTE) and lab not in wrapped:
                wrapped.add(lab)
                warnings.append(f"label {lab} exceeds the {len(PALETTE)}-color "
                                f"palette; wrapped modulo {len(PALETTE)}")
            rgb = PALETTE[(lab - 1) % len(PALETTE)]
            row.append(f"{rgb[0]} {rgb[1]} {rgb[2]}")
        lines.append(" ".join(row))
    return RenderedMap(text="\n".join(lines) + "\n", warnings=tuple(sorted(warnings)))


def parse_map(text: str) -> np.ndarray:
    """Read a P3 pixmap back into an (height, width, 3) integer array."""
    tokens = text.split()
    if tokens[0] != "P3":
        raise DataError("not a P3 pixmap")
    width, height = int(tokens[1]), int(tokens[2])
    values = np.asarray(tokens[4:], dtype=np.int64)
    if values.size != width * height * 3:
        raise DataError("pixmap token count does not match its dimensions")
    return values.reshape(height, width, 3)


def report_lines(report: EvalReport):
    """Stable key=value export: oa, aa, kappa, then per-class recalls."""
    yield ("oa", f"{report.oa!r}")
    yield ("aa", f"{report.aa!r}")
    yield ("kappa", f"{report.kappa!r}")
    for k, recall in enumerate(report.per_class_accuracy, start=1):
        yield (f"class_{k}_recall", f"{float(recall)!r}")
