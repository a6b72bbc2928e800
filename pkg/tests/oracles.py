"""Brute-force reference implementations, independent of the package.

Everything here works on plain (start, end) / (start, end, score) tuples and
recomputes results straight from the definitions with plain loops. Slow on
purpose; the tests adapt package objects down to tuples before comparing.
"""

from __future__ import annotations

import numpy as np

GRID = tuple(0.50 + 0.05 * i for i in range(10))


def oracle_tiou(a, b):
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    if inter <= 0.0:
        return 0.0
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union


def mc_tiou(a, b, samples, rng):
    """Membership-count estimate of tIoU over the pair's bounding span."""
    lo = min(a[0], b[0])
    hi = max(a[1], b[1])
    pts = rng.uniform(lo, hi, size=samples)
    in_a = (pts >= a[0]) & (pts < a[1])
    in_b = (pts >= b[0]) & (pts < b[1])
    either = int(np.count_nonzero(in_a | in_b))
    both = int(np.count_nonzero(in_a & in_b))
    if either == 0:
        return 0.0
    return both / either


def _rank_key(p):
    # score desc, then earlier start, then shorter
    return (-p[2], p[0], p[1] - p[0])


def brute_recall(props, gt, an, threshold):
    """props: vid -> [(s, e, score)], gt: vid -> [(s, e)]. Pooled over videos."""
    recalled = 0
    total = 0
    for vid, instances in gt.items():
        if not instances:
            continue
        total += len(instances)
        kept = sorted(props.get(vid, []), key=_rank_key)[:an]
        for g in instances:
            if any(oracle_tiou((p[0], p[1]), g) >= threshold for p in kept):
                recalled += 1
    return recalled / total


def brute_average_recall(props, gt, an, grid=GRID):
    return float(np.mean([brute_recall(props, gt, an, t) for t in grid]))


def brute_ar_an(props, gt, an_max, grid=GRID):
    ar = [brute_average_recall(props, gt, an, grid) for an in range(1, an_max + 1)]
    return ar, float(np.mean(ar))


def brute_ap(preds, gt, threshold):
    """preds: [(vid, s, e, score)], gt: vid -> [(s, e)]. Greedy best-IoU match,
    all-points interpolation via the definitional suffix-max envelope."""
    total = sum(len(v) for v in gt.values())
    if not preds:
        return 0.0
    ordered = sorted(preds, key=lambda p: (-p[3], p[1], p[2] - p[1], p[0]))
    used = {vid: set() for vid in gt}
    tp = []
    for vid, s, e, _score in ordered:
        best_iou, best_gi = 0.0, -1
        for gi, g in enumerate(gt.get(vid, [])):
            if gi in used.get(vid, set()):
                continue
            v = oracle_tiou((s, e), g)
            if v > best_iou:
                best_iou, best_gi = v, gi
        if best_gi >= 0 and best_iou >= threshold:
            used.setdefault(vid, set()).add(best_gi)
            tp.append(1)
        else:
            tp.append(0)

    precision = []
    recall = []
    running = 0
    for k, flag in enumerate(tp):
        running += flag
        precision.append(running / (k + 1))
        recall.append(running / total)
    ap = 0.0
    prev = 0.0
    for k, flag in enumerate(tp):
        if flag:
            ap += (recall[k] - prev) * max(precision[k:])
            prev = recall[k]
    return ap


def brute_mean_ap(loc, gt_labeled, threshold):
    """loc: vid -> [(label, s, e, score)], gt_labeled: vid -> [(label, s, e)].
    Mean of per-class AP over the classes that appear in the ground truth."""
    classes = sorted({label for rows in gt_labeled.values() for label, _s, _e in rows})
    aps = []
    for cls in classes:
        gt_c = {}
        for vid, rows in gt_labeled.items():
            spans = [(s, e) for label, s, e in rows if label == cls]
            if spans:
                gt_c[vid] = spans
        preds_c = [
            (vid, s, e, score)
            for vid, rows in loc.items()
            for label, s, e, score in rows
            if label == cls
        ]
        aps.append(brute_ap(preds_c, gt_c, threshold))
    return float(np.mean(aps))


def brute_fragments(values, tau, min_frag=1):
    runs = []
    start = None
    for t, v in enumerate(values):
        if v >= tau:
            if start is None:
                start = t
        else:
            if start is not None and t - start >= min_frag:
                runs.append((start, t))
            start = None
    if start is not None and len(values) - start >= min_frag:
        runs.append((start, len(values)))
    return runs


def brute_group(values, tau, gamma, min_frag=1):
    """Every (fragment start, fragment end) pair checked directly against the
    coverage definition; no scan order, no cutoff."""
    frags = brute_fragments(values, tau, min_frag)
    starts = [f[0] for f in frags]
    ends = [f[1] for f in frags]
    regions = set()
    for a in starts:
        for b in ends:
            if a >= b:
                continue
            covered = sum(fe - fs for fs, fe in frags if a <= fs and fe <= b)
            if covered / (b - a) >= gamma:
                regions.add((a, b))
    return sorted(regions)


def brute_nms(props, threshold, max_keep):
    """Full greedy pass (suppress tiou strictly above threshold, plus exact
    duplicate intervals), then truncate."""
    remaining = sorted(props, key=_rank_key)
    kept = []
    while remaining:
        top = remaining.pop(0)
        kept.append(top)
        survivors = []
        for p in remaining:
            if (p[0], p[1]) == (top[0], top[1]):
                continue
            if oracle_tiou((p[0], p[1]), (top[0], top[1])) > threshold:
                continue
            survivors.append(p)
        remaining = survivors
    return kept[:max_keep]
