"""Detection evaluation: greedy matching, PR curves, AP, FP_N, confusion.

AP is the area under the precision envelope of the PR curve sampled at
every unique detection score (all-point interpolation); 101-point and
raw trapezoid integration are available for comparison. Classes without
ground truth are reported as undefined and excluded from the mean, and
images tagged with the ``negatives`` split are scored separately by
FP_N (false positives per negative image) instead of contributing to
AP.

AP over a pooled set is not the weighted mean of per-subset APs, so
subset reports always recompute the union from pooled detections.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Collection, Optional, Sequence

import numpy as np

from pastekit.corekit.dataset import Dataset
from pastekit.corekit.geometry import BoundingBox, iou
from pastekit.detections import Detection

AP_SCHEMES = ("envelope", "101point", "trapezoid")


@dataclass(frozen=True)
class MatchResult:
    """Greedy score-ordered matching for one image and class.

    assignments[i] is the matched gt index for detection i (input
    order), or None for a false positive.
    """

    assignments: tuple[Optional[int], ...]
    gt_matched: tuple[bool, ...]
    iou_thresh: float

    @property
    def tp_count(self) -> int:
        return sum(1 for a in self.assignments if a is not None)


def match(
    detections: Sequence[Detection],
    gt_boxes: Sequence[BoundingBox],
    iou_thresh: float,
) -> MatchResult:
    """Match detections to ground truth at one IoU threshold.

    Detections are processed in descending score order (ties keep input
    order); each takes the unmatched gt with the highest IoU at or
    above the threshold, lowest gt index on equal IoU.
    """
    order = sorted(range(len(detections)), key=lambda i: (-detections[i].score, i))
    assignments: list[Optional[int]] = [None] * len(detections)
    taken = [False] * len(gt_boxes)
    for i in order:
        best_j, best_iou = None, 0.0
        for j, gt in enumerate(gt_boxes):
            if taken[j]:
                continue
            v = iou(detections[i].bbox, gt)
            if v >= iou_thresh and v > best_iou:
                best_j, best_iou = j, v
        if best_j is not None:
            assignments[i] = best_j
            taken[best_j] = True
    return MatchResult(
        assignments=tuple(assignments), gt_matched=tuple(taken), iou_thresh=iou_thresh
    )


def pr_curve(
    scores: Sequence[float], tp_flags: Sequence[bool], gt_count: int
) -> list[tuple[float, float]]:
    """(recall, precision) at every unique score threshold, descending.

    scores and tp_flags describe all detections of one class across the
    dataset; ties in score keep their input order in the cumulative
    counts (the curve point lands after the whole tie group).
    """
    if gt_count < 1:
        raise ValueError("pr_curve needs at least one ground truth")
    if len(scores) != len(tp_flags):
        raise ValueError("scores and tp_flags must have equal length")
    order = sorted(range(len(scores)), key=lambda i: (-scores[i], i))
    curve = []
    tp = fp = 0
    for pos, i in enumerate(order):
        if tp_flags[i]:
            tp += 1
        else:
            fp += 1
        nxt = order[pos + 1] if pos + 1 < len(order) else None
        if nxt is not None and scores[nxt] == scores[i]:
            continue  # threshold sits after the full tie group
        curve.append((tp / gt_count, tp / (tp + fp)))
    return curve


def average_precision(
    curve: Sequence[tuple[float, float]], scheme: str = "envelope"
) -> float:
    """Area under a PR curve.

    envelope: precision at each recall replaced by the maximum
    precision at any recall >= it, integrated exactly (all-point).
    101point: envelope sampled at recalls 0.00..1.00.
    trapezoid: raw curve integrated as-is.
    """
    if scheme not in AP_SCHEMES:
        raise ValueError(f"unknown AP scheme {scheme!r}")
    if not curve:
        return 0.0
    recalls = [r for r, _ in curve]
    precisions = [p for _, p in curve]
    if scheme == "trapezoid":
        area = 0.0
        prev_r, prev_p = 0.0, precisions[0]
        for r, p in curve:
            area += (r - prev_r) * (p + prev_p) / 2.0
            prev_r, prev_p = r, p
        return area
    # Suffix maximum: envelope[i] = max precision at recall >= recalls[i].
    envelope = list(precisions)
    for i in range(len(envelope) - 2, -1, -1):
        envelope[i] = max(envelope[i], envelope[i + 1])
    if scheme == "101point":
        total = 0.0
        for k in range(101):
            t = k / 100.0
            idx = next((i for i, r in enumerate(recalls) if r >= t - 1e-12), None)
            total += envelope[idx] if idx is not None else 0.0
        return total / 101.0
    area = 0.0
    prev_r = 0.0
    for i, r in enumerate(recalls):
        area += (r - prev_r) * envelope[i]
        prev_r = r
    return area


@dataclass(frozen=True)
class ClassAP:
    category_id: int
    name: str
    gt_count: int
    det_count: int
    ap: Optional[float]  # None when the class has no ground truth


@dataclass(frozen=True)
class EvalReport:
    iou_thresh: float
    scheme: str
    classes: tuple[ClassAP, ...]
    mean_ap: float
    image_count: int
    fp_n: Optional[float] = None
    negative_count: int = 0
    confusion: Optional[tuple[tuple[int, ...], ...]] = None
    confusion_labels: tuple[str, ...] = ()
    subsets: dict = field(default_factory=dict)

    def class_ap(self, category_id: int) -> Optional[float]:
        for c in self.classes:
            if c.category_id == category_id:
                return c.ap
        raise KeyError(category_id)

    def as_dict(self) -> dict:
        doc: dict = {
            "iou_thresh": self.iou_thresh,
            "scheme": self.scheme,
            "mean_ap": self.mean_ap,
            "image_count": self.image_count,
            "classes": [
                {
                    "category_id": c.category_id,
                    "name": c.name,
                    "gt_count": c.gt_count,
                    "det_count": c.det_count,
                    "ap": c.ap,
                }
                for c in self.classes
            ],
        }
        if self.fp_n is not None:
            doc["fp_n"] = self.fp_n
            doc["negative_count"] = self.negative_count
        if self.confusion is not None:
            doc["confusion"] = {
                "labels": list(self.confusion_labels),
                "matrix": [list(row) for row in self.confusion],
            }
        if self.subsets:
            doc["subsets"] = {tag: rep.as_dict() for tag, rep in sorted(self.subsets.items())}
        return doc


def _check_references(dataset: Dataset, detections: Sequence[Detection]) -> None:
    image_ids = {im.id for im in dataset.images}
    cat_ids = {c.id for c in dataset.categories}
    for d in detections:
        if d.image_id not in image_ids:
            raise ValueError(f"detection references unknown image {d.image_id}")
        if d.category_id not in cat_ids:
            raise ValueError(f"detection references unknown category {d.category_id}")


def _class_curves(
    dataset: Dataset,
    detections: Sequence[Detection],
    iou_thresh: float,
    image_ids: Collection[int],
):
    """Per-class pooled (scores, tp_flags, gt_count) over the given images."""
    ids = set(image_ids)
    dets_by_image: dict[int, dict[int, list[tuple[int, Detection]]]] = {}
    for pos, d in enumerate(detections):
        if d.image_id in ids:
            dets_by_image.setdefault(d.image_id, {}).setdefault(
                d.category_id, []
            ).append((pos, d))
    gt_counts = {c.id: 0 for c in dataset.categories}
    flagged: list[tuple[int, float, int, bool]] = []  # (input pos, score, class, tp)
    for im in dataset.images:
        if im.id not in ids:
            continue
        by_class: dict[int, list[BoundingBox]] = {}
        for obj in im.objects:
            by_class.setdefault(obj.category_id, []).append(obj.bbox)
            gt_counts[obj.category_id] += 1
        image_dets = dets_by_image.get(im.id, {})
        for cid in set(by_class) | set(image_dets):
            entries = image_dets.get(cid, [])
            result = match([d for _, d in entries], by_class.get(cid, []), iou_thresh)
            for (pos, d), a in zip(entries, result.assignments):
                flagged.append((pos, d.score, cid, a is not None))
    flagged.sort(key=lambda t: t[0])  # global stable input order for ties
    out: dict[int, tuple[list[float], list[bool], int]] = {
        c.id: ([], [], gt_counts[c.id]) for c in dataset.categories
    }
    for _, score, cid, is_tp in flagged:
        out[cid][0].append(score)
        out[cid][1].append(is_tp)
    return out


def _scored_image_ids(dataset: Dataset) -> list[int]:
    return [im.id for im in dataset.images if im.split != "negatives"]


def ap50(
    dataset: Dataset,
    detections: Sequence[Detection],
    iou_thresh: float = 0.50,
    scheme: str = "envelope",
) -> tuple[dict[int, Optional[float]], float]:
    """Per-class AP at the given IoU threshold, plus the mean.

    Classes with zero ground truth map to None and are excluded from
    the mean. Images tagged ``negatives`` are not scored here.
    """
    _check_references(dataset, detections)
    curves = _class_curves(dataset, detections, iou_thresh, _scored_image_ids(dataset))
    per_class: dict[int, Optional[float]] = {}
    for cid, (scores, flags, gt_count) in curves.items():
        if gt_count == 0:
            per_class[cid] = None
            continue
        per_class[cid] = average_precision(pr_curve(scores, flags, gt_count), scheme)
    defined = [v for v in per_class.values() if v is not None]
    return per_class, (sum(defined) / len(defined) if defined else 0.0)


def fp_n(
    detections: Sequence[Detection],
    negative_image_ids: Collection[int],
    min_conf: float = 0.10,
) -> float:
    """False positives per negative image at a confidence floor."""
    ids = set(negative_image_ids)
    if not ids:
        raise ValueError("negative image set is empty")
    count = sum(1 for d in detections if d.image_id in ids and d.score >= min_conf)
    return count / len(ids)


def confusion_matrix(
    dataset: Dataset,
    detections: Sequence[Detection],
    min_conf: float = 0.25,
    iou_thresh: float = 0.45,
) -> tuple[tuple[tuple[int, ...], ...], tuple[str, ...]]:
    """Class-confusion counts with a trailing background row/column.

    Detections below min_conf are dropped. Within each image, gt/det
    pairs are matched greedily by descending IoU regardless of class;
    matched pairs count into (gt class, pred class), unmatched gts into
    (gt class, background), unmatched detections into (background,
    pred class).
    """
    _check_references(dataset, detections)
    cats = list(dataset.categories)
    index = {c.id: i for i, c in enumerate(cats)}
    k = len(cats)
    m = np.zeros((k + 1, k + 1), dtype=np.int64)
    by_image: dict[int, list[Detection]] = {}
    for d in detections:
        if d.score >= min_conf:
            by_image.setdefault(d.image_id, []).append(d)
    for im in dataset.images:
        if im.split == "negatives":
            continue
        gts = list(im.objects)
        dets = by_image.get(im.id, [])
        pairs = []
        for gi, g in enumerate(gts):
            for di, d in enumerate(dets):
                v = iou(g.bbox, d.bbox)
                if v >= iou_thresh:
                    pairs.append((v, gi, di))
        pairs.sort(key=lambda t: (-t[0], t[1], t[2]))
        gt_used = [False] * len(gts)
        det_used = [False] * len(dets)
        for _, gi, di in pairs:
            if gt_used[gi] or det_used[di]:
                continue
            gt_used[gi] = True
            det_used[di] = True
            m[index[gts[gi].category_id], index[dets[di].category_id]] += 1
        for gi, used in enumerate(gt_used):
            if not used:
                m[index[gts[gi].category_id], k] += 1
        for di, used in enumerate(det_used):
            if not used:
                m[k, index[dets[di].category_id]] += 1
    labels = tuple(c.name for c in cats) + ("background",)
    return tuple(tuple(int(v) for v in row) for row in m), labels


def _build_report(
    dataset: Dataset,
    detections: Sequence[Detection],
    image_ids: Collection[int],
    iou_thresh: float,
    scheme: str,
) -> EvalReport:
    curves = _class_curves(dataset, detections, iou_thresh, image_ids)
    classes = []
    for c in dataset.categories:
        scores, flags, gt_count = curves[c.id]
        ap = (
            average_precision(pr_curve(scores, flags, gt_count), scheme)
            if gt_count > 0
            else None
        )
        classes.append(
            ClassAP(
                category_id=c.id, name=c.name,
                gt_count=gt_count, det_count=len(scores), ap=ap,
            )
        )
    defined = [c.ap for c in classes if c.ap is not None]
    return EvalReport(
        iou_thresh=iou_thresh,
        scheme=scheme,
        classes=tuple(classes),
        mean_ap=sum(defined) / len(defined) if defined else 0.0,
        image_count=len(set(image_ids)),
    )


def subset_report(
    dataset: Dataset,
    detections: Sequence[Detection],
    tags: Optional[Sequence[str]] = None,
    iou_thresh: float = 0.50,
    scheme: str = "envelope",
) -> EvalReport:
    """Union report plus independent per-subset reports.

    The union is computed from pooled detections over all scored
    images; per-subset APs are not averaged into it (AP is not additive
    across subsets).
    """
    _check_references(dataset, detections)
    present = {im.split for im in dataset.images if im.split != "negatives"}
    if tags is None:
        tags = sorted(present)
    unknown = [t for t in tags if t not in present]
    if unknown:
        raise ValueError(f"unknown subset tags {unknown}; dataset has {sorted(present)}")
    report = _build_report(
        dataset, detections, _scored_image_ids(dataset), iou_thresh, scheme
    )
    subsets = {}
    for tag in tags:
        ids = [im.id for im in dataset.images if im.split == tag]
        subsets[tag] = _build_report(dataset, detections, ids, iou_thresh, scheme)
    return EvalReport(
        iou_thresh=report.iou_thresh,
        scheme=report.scheme,
        classes=report.classes,
        mean_ap=report.mean_ap,
        image_count=report.image_count,
        subsets=subsets,
    )


def evaluate(
    dataset: Dataset,
    detections: Sequence[Detection],
    iou_thresh: float = 0.50,
    scheme: str = "envelope",
    fp_min_conf: float = 0.10,
    confusion_min_conf: float = 0.25,
    confusion_iou: float = 0.45,
    subset_tags: Optional[Sequence[str]] = None,
) -> EvalReport:
    """Full evaluation: AP per class and mean, FP_N, confusion, subsets."""
    _check_references(dataset, detections)
    negative_ids = [im.id for im in dataset.images if im.split == "negatives"]
    for im in dataset.images:
        if im.split == "negatives" and im.objects:
            raise ValueError(f"negative image {im.id} has ground-truth objects")
    base = subset_report(dataset, detections, subset_tags, iou_thresh, scheme)
    matrix, labels = confusion_matrix(
        dataset, detections, confusion_min_conf, confusion_iou
    )
    return EvalReport(
        iou_thresh=base.iou_thresh,
        scheme=base.scheme,
        classes=base.classes,
        mean_ap=base.mean_ap,
        image_count=base.image_count,
        fp_n=fp_n(detections, negative_ids, fp_min_conf) if negative_ids else None,
        negative_count=len(negative_ids),
        confusion=matrix,
        confusion_labels=labels,
        subsets=base.subsets,
    )


def report_text(report: EvalReport) -> str:
    """Fixed-width text table over classes, then dataset-level lines."""
    width = max([len("class")] + [len(c.name) for c in report.classes])
    lines = [
        f"{'class':<{width}}  {'gt':>6}  {'det':>6}  {'AP@%.2f' % report.iou_thresh:>10}"
    ]
    for c in report.classes:
        ap = f"{c.ap:.4f}" if c.ap is not None else "undef"
        lines.append(f"{c.name:<{width}}  {c.gt_count:>6}  {c.det_count:>6}  {ap:>10}")
    defined = sum(1 for c in report.classes if c.ap is not None)
    lines.append(
        f"mean AP {report.mean_ap:.4f} over {defined}/{len(report.classes)} classes, "
        f"{report.image_count} images"
    )
    if report.fp_n is not None:
        lines.append(
            f"FP_N {report.fp_n:.4f} over {report.negative_count} negative images"
        )
    for tag, sub in sorted(report.subsets.items()):
        lines.append(
            f"subset {tag}: mean AP {sub.mean_ap:.4f} over {sub.image_count} images"
        )
    return "\n".join(lines) + "\n"


def confusion_csv(report: EvalReport) -> str:
    """Confusion matrix as CSV, gt on rows and predictions on columns."""
    if report.confusion is None:
        raise ValueError("report carries no confusion matrix")
    header = "gt\\pred," + ",".join(report.confusion_labels)
    lines = [header]
    for label, row in zip(report.confusion_labels, report.confusion):
        lines.append(label + "," + ",".join(str(v) for v in row))
    return "\n".join(lines) + "\n"
