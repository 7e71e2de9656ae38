"""Brute-force reference metrics, written in plain Python loops.

Deliberately shares no code with ``openad.evaluation``: matching, PR
accumulation and both AP variants are re-derived from their definitions.
"""

import math


def iou(a, b):
    ax0, ay0, ax1, ay1 = a
    bx0, by0, bx1, by1 = b
    iw = min(ax1, bx1) - max(ax0, bx0)
    ih = min(ay1, by1) - max(ay0, by0)
    if iw <= 0 or ih <= 0:
        return 0.0
    inter = iw * ih
    return inter / ((ax1 - ax0) * (ay1 - ay0) + (bx1 - bx0) * (by1 - by0) - inter)


def ground_distance(a, b):
    return math.sqrt((a[0] - b[0]) ** 2 + (a[1] - b[1]) ** 2)


def dot(u, v):
    return sum(x * y for x, y in zip(u, v))


def greedy_match(preds, gts, pos_thr, sem_thr, task):
    """preds: list of dicts (box, emb, conf, camera) already in visiting order.
    gts: list of dicts (box, emb, camera). Returns list of matched gt index or None."""
    taken = [False] * len(gts)
    out = []
    for p in preds:
        best, best_score = None, None
        for j, g in enumerate(gts):
            if taken[j]:
                continue
            if task == "2d":
                if p["camera"] != g["camera"]:
                    continue
                score = iou(p["box"], g["box"])
                ok = score >= pos_thr
            else:
                d = ground_distance(p["box"], g["box"])
                score = -d
                ok = d <= pos_thr
            if not ok or dot(p["emb"], g["emb"]) < sem_thr:
                continue
            if best is None or score > best_score:
                best, best_score = j, score
        if best is not None:
            taken[best] = True
        out.append(best)
    return out


def pr_points(flags, n_gt):
    pts, tp, fp = [], 0, 0
    for f in flags:
        if f:
            tp += 1
        else:
            fp += 1
        pts.append((tp / n_gt, tp / (tp + fp)))
    return pts


def ap_coco(pts):
    total = 0.0
    for k in range(101):
        r = k / 100
        cands = [p for rec, p in pts if rec >= r]
        total += max(cands) if cands else 0.0
    return total / 101


def _linear_precision(pts, r):
    # best precision per distinct recall, then straight lines between them
    best = {}
    for rec, p in pts:
        best[rec] = max(best.get(rec, 0.0), p)
    recs = sorted(best)
    if r <= recs[0]:
        return best[recs[0]]
    if r > recs[-1]:
        return 0.0
    for lo, hi in zip(recs, recs[1:]):
        if lo <= r <= hi:
            if r == hi:
                return best[hi]
            t = (r - lo) / (hi - lo)
            return best[lo] + t * (best[hi] - best[lo])
    raise AssertionError("unreachable")


def ap_nuscenes(pts):
    if not pts:
        return 0.0
    kept = [max(_linear_precision(pts, k / 100) - 0.1, 0.0) for k in range(11, 101)]
    return max(sum(kept) / len(kept) / 0.9, 0.0)


def evaluate(scenes, task, grid):
    """scenes: list of (scene_id, preds, gts) with preds carrying ``conf``.

    Predictions are ranked globally by (-confidence, scene_id, index within
    the scene's confidence-sorted list); AP and AR are plain means over grid.
    """
    n_gt = sum(len(g) for _, _, g in scenes)
    aps, ars = [], []
    for pos_thr, sem_thr in grid:
        records = []
        tps = 0
        for sid, preds, gts in scenes:
            order = sorted(range(len(preds)), key=lambda i: (-preds[i]["conf"], i))
            ranked = [preds[i] for i in order]
            matched = greedy_match(ranked, gts, pos_thr, sem_thr, task)
            for rank, (p, m) in enumerate(zip(ranked, matched)):
                records.append(((-p["conf"], sid, rank), m is not None))
                tps += m is not None
        records.sort(key=lambda r: r[0])
        pts = pr_points([f for _, f in records], n_gt)
        if not pts:
            ap = 0.0
        else:
            ap = ap_coco(pts) if task == "2d" else ap_nuscenes(pts)
        aps.append(ap)
        ars.append(tps / n_gt)
    return sum(aps) / len(aps), sum(ars) / len(ars)
