"""Brute-force reference implementations used only by tests.

Written independently of the library: explicit loops, explicit sorting,
exhaustive search where feasible. They stay deliberately slow and simple.
"""

import itertools


def _memo(f):
    cache = {}

    def wrapped(*args):
        if args not in cache:
            cache[args] = f(*args)
        return cache[args]

    return wrapped


def oracle_ap(records, n_positive):
    """records: (score, is_tp) in rank order. Integrates the running
    precision envelope rectangle by rectangle."""
    if n_positive == 0:
        return 0.0
    tps = 0
    points = []
    for rank, (_, hit) in enumerate(records, start=1):
        if hit:
            tps += 1
        points.append((tps / n_positive, tps / rank))
    ap = 0.0
    prev_recall = 0.0
    for i, (recall, _) in enumerate(points):
        if recall == prev_recall:
            continue
        best = max(p for r, p in points[i:] if r >= recall)
        ap += (recall - prev_recall) * best
        prev_recall = recall
    return ap


def oracle_tad_map(predictions, ground_truth, thresholds):
    out = {}
    classes = sorted({g.class_id for gts in ground_truth.values() for g in gts})
    for thr in thresholds:
        aps = []
        for c in classes:
            flat = []
            for vid, preds in predictions.items():
                for p in preds:
                    if p.class_id == c:
                        flat.append((vid, p))
            flat.sort(key=lambda vp: (-vp[1].score, vp[0], vp[1].start, vp[1].end))
            remaining = {vid: [g for g in gts if g.class_id == c] for vid, gts in ground_truth.items()}
            n_pos = sum(len(v) for v in remaining.values())
            records = []
            for vid, p in flat:
                best, best_iou = None, 0.0
                for g in remaining.get(vid, []):
                    inter = max(0.0, min(p.end, g.end) - max(p.start, g.start))
                    union = (p.end - p.start) + (g.end - g.start) - inter
                    iou = inter / union if union > 0 else 0.0
                    if iou >= thr and iou > best_iou:
                        best, best_iou = g, iou
                if best is not None:
                    remaining[vid].remove(best)
                    records.append((p.score, True))
                else:
                    records.append((p.score, False))
            aps.append(oracle_ap(records, n_pos))
        out[thr] = sum(aps) / len(aps) if aps else 0.0
    return out


def oracle_f1_counts(pred_labels, gt_labels, overlap):
    """Segmental F1 counts following the MS-TCN matching rule."""

    def runs(labels):
        out = []
        start = 0
        for i in range(1, len(labels) + 1):
            if i == len(labels) or labels[i] != labels[start]:
                out.append((start, i, labels[start]))  # end exclusive
                start = i
        return out

    pred, gt = runs(pred_labels), runs(gt_labels)
    used = set()
    tp = fp = 0
    for ps, pe, pc in pred:
        ious = []
        for gs, ge, gc in gt:
            inter = min(pe, ge) - max(ps, gs)
            union = max(pe, ge) - min(ps, gs)
            ious.append((max(inter, 0) / union) if pc == gc else 0.0)
        best_j = max(range(len(gt)), key=lambda j: ious[j], default=None)
        if best_j is not None and ious[best_j] >= overlap and best_j not in used:
            used.add(best_j)
            tp += 1
        else:
            fp += 1
    return tp, fp, len(gt) - len(used)


def oracle_levenshtein(a, b):
    @_memo
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(
            d(i - 1, j) + 1,
            d(i, j - 1) + 1,
            d(i - 1, j - 1) + (a[i - 1] != b[j - 1]),
        )

    return d(len(a), len(b))


def oracle_max_matching(eligible):
    """Exhaustive maximum bipartite matching (feasible for <= 8 per side)."""
    n_pred, n_gt = eligible.shape
    for k in range(min(n_pred, n_gt), 0, -1):
        for pred_subset in itertools.combinations(range(n_pred), k):
            for gt_perm in itertools.permutations(range(n_gt), k):
                if all(eligible[p, g] for p, g in zip(pred_subset, gt_perm)):
                    return k
    return 0
