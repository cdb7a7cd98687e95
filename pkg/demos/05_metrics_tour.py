"""The three evaluation protocols on hand-built predictions.

Detection mAP over temporal-IoU thresholds, segmentation accuracy / edit /
F1@k, and boundary F1 over relative-distance thresholds. Each example is
small enough to verify by hand.
"""

from timetok.codec import TadInstance, TasSegment
from timetok.metrics import gebd_f1, segments_from_labels, tad_map, tas_scores

# --- detection mAP ----------------------------------------------------------
ground_truth = {"v1": [TadInstance(2.0, 6.0, 0), TadInstance(10.0, 14.0, 1)]}
predictions = {
    "v1": [
        TadInstance(2.1, 6.2, 0, score=0.95),   # good hit
        TadInstance(10.5, 13.0, 1, score=0.80),  # decent hit (IoU ~ 0.71)
        TadInstance(20.0, 22.0, 0, score=0.60),  # false positive
    ]
}
per_threshold, average = tad_map(predictions, ground_truth)
print("detection AP by tIoU threshold")
for thr, value in per_threshold.items():
    print(f"  {thr:.1f} -> {value:.3f}")
print(f"  Avg -> {average:.3f}")
print("  (the class-1 hit stops matching once the threshold passes its IoU)")

# --- segmentation -----------------------------------------------------------
gt_labels = {"v1": [0] * 30 + [1] * 30 + [0] * 40}
pred_labels = [0] * 28 + [1] * 35 + [0] * 37  # boundaries off by a couple frames
scores = tas_scores({"v1": segments_from_labels(pred_labels)}, gt_labels)
print("\nsegmentation scores (percent)")
print(f"  Acc  {scores['acc']:.1f}")
print(f"  Edit {scores['edit']:.1f}")
for k, value in scores["f1"].items():
    print(f"  F1@{k} {value:.1f}")

# an over-segmented prediction: same frames right, worse Edit / F1
choppy = [0] * 28 + [1] * 5 + [0] * 2 + [1] * 28 + [0] * 37
scores = tas_scores({"v1": segments_from_labels(choppy)}, gt_labels)
print(f"  over-segmented variant: Acc {scores['acc']:.1f} but Edit {scores['edit']:.1f}")

# --- boundaries --------------------------------------------------------------
gt_bounds = {"v1": [3.0, 7.0, 12.0]}
pred_bounds = {"v1": [3.1, 7.9, 17.0]}  # hit, near miss, far miss
per_threshold, average = gebd_f1(pred_bounds, gt_bounds, {"v1": 20.0})
print("\nboundary F1 by relative-distance threshold (duration 20 s)")
for thr in (0.05, 0.1, 0.25, 0.5):
    print(f"  {thr:.2f} -> {per_threshold[thr]:.3f}")
print(f"  Avg -> {average:.3f}")
