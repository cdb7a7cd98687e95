"""Evaluation protocols for the three tasks.

Detection: mean average precision over temporal-IoU thresholds, all-point
precision-envelope integration, greedy best-IoU matching with each ground
truth consumable once. Segmentation: frame accuracy, segmental edit score
(normalized Levenshtein over segment label strings) and segmental overlap
F1@k following the MS-TCN protocol. Boundaries: F1 over relative-distance
thresholds with exact maximum-cardinality matching per video.

Detection and boundary scores are fractions in [0, 1]; segmentation scores
follow the percentage convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .codec import TadInstance, TasSegment, temporal_iou


@dataclass(frozen=True)
class TadEvalConfig:
    tiou_thresholds: tuple[float, ...] = (0.3, 0.4, 0.5, 0.6, 0.7)

    def __post_init__(self):
        t = self.tiou_thresholds
        if not t or any(not 0.0 < x <= 1.0 for x in t) or list(t) != sorted(t):
            raise ValueError("thresholds must be ascending values in (0, 1]")


@dataclass(frozen=True)
class GebdEvalConfig:
    rel_dis_thresholds: tuple[float, ...] = (0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50)

    def __post_init__(self):
        t = self.rel_dis_thresholds
        if not t or any(x <= 0 for x in t) or list(t) != sorted(t):
            raise ValueError("thresholds must be ascending positive values")


def _average_precision(scored_hits: list[tuple[float, bool]], n_positive: int) -> float:
    """All-point interpolated AP from (score-ordered) hit flags."""
    if n_positive == 0:
        return 0.0
    tp = np.cumsum([1.0 if hit else 0.0 for _, hit in scored_hits])
    fp = np.cumsum([0.0 if hit else 1.0 for _, hit in scored_hits])
    if len(tp) == 0 or tp[-1] == 0:
        return 0.0
    precision = tp / (tp + fp)
    recall = tp / n_positive
    mprec = np.concatenate([[0.0], precision, [0.0]])
    mrec = np.concatenate([[0.0], recall, [1.0]])
    for i in range(len(mprec) - 2, -1, -1):
        mprec[i] = max(mprec[i], mprec[i + 1])
    idx = np.where(mrec[1:] != mrec[:-1])[0] + 1
    return float(((mrec[idx] - mrec[idx - 1]) * mprec[idx]).sum())


def tad_map(
    predictions: dict[str, list[TadInstance]],
    ground_truth: dict[str, list[TadInstance]],
    config: TadEvalConfig = TadEvalConfig(),
) -> tuple[dict[float, float], float]:
    """mAP per tIoU threshold plus their average.

    Predictions are ranked by score; a prediction is a true positive iff its
    best IoU against the not-yet-matched same-class ground truths of its
    video reaches the threshold (that ground truth is then consumed). Classes
    absent from the ground truth are excluded from the mean.
    """
    classes = sorted({g.class_id for gts in ground_truth.values() for g in gts})
    preds_by_class: dict[int, list[tuple[str, TadInstance]]] = {c: [] for c in classes}
    for vid, preds in predictions.items():
        for p in preds:
            if p.score is None:
                raise ValueError("detection predictions must carry scores")
            if p.class_id in preds_by_class:
                preds_by_class[p.class_id].append((vid, p))

    result: dict[float, float] = {}
    for thr in config.tiou_thresholds:
        aps = []
        for c in classes:
            gts = {vid: [g for g in ground_truth.get(vid, []) if g.class_id == c] for vid in ground_truth}
            n_pos = sum(len(v) for v in gts.values())
            matched = {vid: [False] * len(v) for vid, v in gts.items()}
            ranked = sorted(preds_by_class[c], key=lambda vp: (-vp[1].score, vp[0], vp[1].start, vp[1].end))
            hits = []
            for vid, p in ranked:
                best_iou, best_j = 0.0, -1
                for j, g in enumerate(gts.get(vid, [])):
                    if matched[vid][j]:
                        continue
                    iou = temporal_iou((p.start, p.end), (g.start, g.end))
                    if iou >= thr and iou > best_iou:
                        best_iou, best_j = iou, j
                if best_j >= 0:
                    matched[vid][best_j] = True
                    hits.append((p.score, True))
                else:
                    hits.append((p.score, False))
            aps.append(_average_precision(hits, n_pos))
        result[thr] = float(np.mean(aps)) if aps else 0.0
    return result, float(np.mean(list(result.values())))


# --------------------------- segmentation -----------------------------------


def frame_labels_from_segments(segments: list[TasSegment], n_frames: int) -> list[int]:
    """Expand a segment tiling back to per-frame labels, validating the tiling."""
    ordered = sorted(segments, key=lambda s: s.start_frame)
    labels = [None] * n_frames
    cursor = 0
    for seg in ordered:
        if seg.start_frame != cursor or seg.end_frame < seg.start_frame:
            raise ValueError("predicted segments must tile the frame range with no gaps or overlaps")
        if seg.end_frame >= n_frames:
            raise ValueError("segment extends past the video's frame range")
        for f in range(seg.start_frame, seg.end_frame + 1):
            labels[f] = seg.class_id
        cursor = seg.end_frame + 1
    if cursor != n_frames:
        raise ValueError("predicted segments must cover every frame")
    return labels


def segments_from_labels(labels) -> list[TasSegment]:
    segments = []
    i = 0
    n = len(labels)
    while i < n:
        j = i
        while j + 1 < n and labels[j + 1] == labels[i]:
            j += 1
        segments.append(TasSegment(i, j, int(labels[i])))
        i = j + 1
    return segments


def levenshtein(a: list, b: list) -> int:
    m, n = len(a), len(b)
    dist = np.zeros((m + 1, n + 1), dtype=np.int64)
    dist[:, 0] = np.arange(m + 1)
    dist[0, :] = np.arange(n + 1)
    for i in range(1, m + 1):
        for j in range(1, n + 1):
            if a[i - 1] == b[j - 1]:
                dist[i, j] = dist[i - 1, j - 1]
            else:
                dist[i, j] = 1 + min(dist[i - 1, j], dist[i, j - 1], dist[i - 1, j - 1])
    return int(dist[m, n])


def edit_score(pred_labels: list[int], gt_labels: list[int]) -> float:
    """100 * (1 - Levenshtein / max length) over the two segment label strings."""
    p = [s.class_id for s in segments_from_labels(pred_labels)]
    y = [s.class_id for s in segments_from_labels(gt_labels)]
    if not p and not y:
        return 100.0
    return 100.0 * (1.0 - levenshtein(p, y) / max(len(p), len(y)))


def _segment_f1_counts(pred_labels, gt_labels, overlap: float) -> tuple[int, int, int]:
    """MS-TCN-style counts: each prediction goes to its best-IoU same-class
    ground truth; hit only if that one is free and the IoU clears the bar."""
    pred = segments_from_labels(pred_labels)
    gt = segments_from_labels(gt_labels)
    hits = [False] * len(gt)
    tp = fp = 0
    for p in pred:
        best_iou, best_j = -1.0, -1
        for j, g in enumerate(gt):
            if g.class_id != p.class_id:
                iou = 0.0
            else:
                inter = min(p.end_frame + 1, g.end_frame + 1) - max(p.start_frame, g.start_frame)
                union = max(p.end_frame + 1, g.end_frame + 1) - min(p.start_frame, g.start_frame)
                iou = max(inter, 0) / union
            if iou > best_iou:
                best_iou, best_j = iou, j
        if best_j >= 0 and best_iou >= overlap and not hits[best_j]:
            hits[best_j] = True
            tp += 1
        else:
            fp += 1
    fn = len(gt) - sum(hits)
    return tp, fp, fn


def tas_scores(
    predictions: dict[str, list[TasSegment]],
    ground_truth: dict[str, list[int]],
    overlap_thresholds: tuple[int, ...] = (10, 25, 50),
) -> dict:
    """Frame accuracy and edit score plus segmental F1@k over the corpus.

    Accuracy and F1 pool frames/segments across videos; the edit score is
    averaged per video. All three use the percentage convention.
    """
    correct = total = 0
    edit_sum = 0.0
    counts = {k: [0, 0, 0] for k in overlap_thresholds}
    for vid, gt_labels in ground_truth.items():
        if vid not in predictions:
            raise ValueError(f"missing predictions for video {vid}")
        pred_labels = frame_labels_from_segments(predictions[vid], len(gt_labels))
        correct += sum(1 for p, g in zip(pred_labels, gt_labels) if p == g)
        total += len(gt_labels)
        edit_sum += edit_score(pred_labels, gt_labels)
        for k in overlap_thresholds:
            tp, fp, fn = _segment_f1_counts(pred_labels, gt_labels, k / 100.0)
            counts[k][0] += tp
            counts[k][1] += fp
            counts[k][2] += fn
    f1 = {}
    for k, (tp, fp, fn) in counts.items():
        precision = tp / (tp + fp) if tp + fp else 0.0
        recall = tp / (tp + fn) if tp + fn else 0.0
        f1[k] = 100.0 * 2 * precision * recall / (precision + recall) if precision + recall else 0.0
    return {
        "acc": 100.0 * correct / total if total else 0.0,
        "edit": edit_sum / len(ground_truth) if ground_truth else 0.0,
        "f1": f1,
    }


# --------------------------- boundaries --------------------------------------


def max_bipartite_matching(eligible: np.ndarray) -> int:
    """Maximum-cardinality matching size via augmenting paths.

    eligible[i, j] says prediction i may match ground truth j. Exact and
    order-independent, unlike a greedy one-pass matcher.
    """
    n_pred, n_gt = eligible.shape
    match_of_gt = [-1] * n_gt

    def try_assign(i, seen):
        for j in range(n_gt):
            if eligible[i, j] and not seen[j]:
                seen[j] = True
                if match_of_gt[j] < 0 or try_assign(match_of_gt[j], seen):
                    match_of_gt[j] = i
                    return True
        return False

    size = 0
    for i in range(n_pred):
        if try_assign(i, [False] * n_gt):
            size += 1
    return size


def gebd_f1(
    predictions: dict[str, list[float]],
    ground_truth: dict[str, list[float]],
    reference_durations: dict[str, float],
    config: GebdEvalConfig = GebdEvalConfig(),
) -> tuple[dict[float, float], float]:
    """Boundary F1 per relative-distance threshold plus the average.

    A prediction may match a ground truth iff |pred - gt| / reference
    duration is within the threshold; matches are one-to-one and of maximum
    cardinality; F1 is computed from corpus-level counts.
    """
    for vid in ground_truth:
        if reference_durations.get(vid, 0.0) <= 0.0:
            raise ValueError(f"missing or non-positive reference duration for {vid}")
    result = {}
    for thr in config.rel_dis_thresholds:
        tp = fp = fn = 0
        for vid, gts in ground_truth.items():
            preds = predictions.get(vid, [])
            ref = reference_durations[vid]
            if preds and gts:
                rel = np.abs(np.subtract.outer(np.asarray(preds), np.asarray(gts))) / ref
                m = max_bipartite_matching(rel <= thr)
            else:
                m = 0
            tp += m
            fp += len(preds) - m
            fn += len(gts) - m
        result[thr] = 2.0 * tp / (2.0 * tp + fp + fn) if (2 * tp + fp + fn) else 1.0
    return result, float(np.mean(list(result.values())))
