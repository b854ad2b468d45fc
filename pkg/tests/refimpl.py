"""Hand-written reference evaluation, kept deliberately naive.

Everything here works on plain tuples with nested loops: boxes are
(x, y, w, h), detections are (image_id, category_id, box, score). The
point is an implementation that shares no code or structure with
pastekit.evalkit, for cross-checking AP values exactly.
"""


def ref_iou(a, b):
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0.0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0.0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    if inter <= 0.0:
        return 0.0
    return inter / (aw * ah + bw * bh - inter)


def ref_match(dets, gts, thresh):
    """dets: list of (score, box) in input order. Returns tp flag per det.

    Highest score first (input order on ties), each detection takes the
    free ground truth with the highest IoU at or above the threshold,
    lowest index winning ties.
    """
    order = sorted(range(len(dets)), key=lambda i: -dets[i][0])
    used = [False] * len(gts)
    tp = [False] * len(dets)
    for i in order:
        best, best_v = None, 0.0
        for j in range(len(gts)):
            if used[j]:
                continue
            v = ref_iou(dets[i][1], gts[j])
            if v >= thresh and v > best_v:
                best, best_v = j, v
        if best is not None:
            used[best] = True
            tp[i] = True
    return tp


def ref_ap(scores, flags, gt_count):
    """All-point interpolated AP by explicit threshold enumeration."""
    if not scores:
        return 0.0
    points = []
    for s in sorted(set(scores), reverse=True):
        tp = sum(1 for sc, f in zip(scores, flags) if sc >= s and f)
        fp = sum(1 for sc, f in zip(scores, flags) if sc >= s and not f)
        points.append((tp / gt_count, tp / (tp + fp)))
    ap = 0.0
    prev = 0.0
    for r in sorted({r for r, _ in points}):
        env = max(p for rp, p in points if rp >= r)
        ap += (r - prev) * env
        prev = r
    return ap


def ref_ap50(images, category_ids, dets, thresh):
    """Per-class AP dict plus mean, matching evalkit.ap50 semantics.

    images: list of (image_id, [(category_id, box), ...]).
    dets: list of (image_id, category_id, box, score), input order.
    """
    flags_by_group = {}
    for image_id, objs in images:
        for cid in category_ids:
            gts = [b for c, b in objs if c == cid]
            group = [
                (s, b) for iid, c, b, s in dets if iid == image_id and c == cid
            ]
            flags_by_group[(image_id, cid)] = ref_match(group, gts, thresh)
    consumed = {key: 0 for key in flags_by_group}
    pooled = {cid: ([], []) for cid in category_ids}
    for image_id, cid, box, score in dets:
        k = (image_id, cid)
        flag = flags_by_group[k][consumed[k]]
        consumed[k] += 1
        pooled[cid][0].append(score)
        pooled[cid][1].append(flag)
    per_class = {}
    for cid in category_ids:
        gt_count = sum(1 for _, objs in images for c, _ in objs if c == cid)
        if gt_count == 0:
            per_class[cid] = None
        else:
            scores, flags = pooled[cid]
            per_class[cid] = ref_ap(scores, flags, gt_count)
    defined = [v for v in per_class.values() if v is not None]
    mean = sum(defined) / len(defined) if defined else 0.0
    return per_class, mean


def random_eval_case(rng, max_images=3, max_classes=3, max_gts=3, max_dets=5):
    """One randomized scenario on a 100x100 canvas with chunky coordinates.

    Returns (images, category_ids, dets). Coarse grids and a discrete
    score set force frequent IoU and score ties.
    """
    category_ids = list(range(1, int(rng.integers(1, max_classes + 1)) + 1))
    images = []
    dets = []
    score_choices = [round(0.1 * k, 1) for k in range(1, 10)]
    for image_id in range(1, int(rng.integers(1, max_images + 1)) + 1):
        objs = []
        for _ in range(int(rng.integers(0, max_gts + 1))):
            x, y = (int(v) * 10 for v in rng.integers(0, 7, 2))
            w, h = (int(v) * 10 for v in rng.integers(1, 4, 2))
            objs.append((int(rng.choice(category_ids)), (x, y, w, h)))
        images.append((image_id, objs))
        for _ in range(int(rng.integers(0, max_dets + 1))):
            x, y = (int(v) * 5 for v in rng.integers(0, 14, 2))
            w, h = (int(v) * 5 for v in rng.integers(1, 8, 2))
            dets.append(
                (
                    image_id,
                    int(rng.choice(category_ids)),
                    (x, y, w, h),
                    float(rng.choice(score_choices)),
                )
            )
    return images, category_ids, dets
