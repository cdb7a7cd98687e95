"""Annotations to token sequences and back.

Each task has its own encoding: detection emits sparse (start, end, class)
triples closed by a stop token; segmentation and boundary detection emit one
token per frame. Decoding inverts each of them, then 1-D NMS and
cross-window merging turn raw window outputs into video-level predictions.
"""

import numpy as np

from timetok.codec import (
    GebdBoundary,
    TadInstance,
    Window,
    detokenize_gebd,
    detokenize_tad,
    detokenize_tas,
    merge_windows,
    nms_1d,
    tokenize_gebd,
    tokenize_tad,
    tokenize_tas,
)
from timetok.vocab import Task, build_layout

layout = build_layout(150, 20, 48)

# --- detection: a 20 s window holding two actions --------------------------
window = Window("demo", start_time=0.0, duration=20.0, frame_count=150, sample_rate=7.5)
instances = [TadInstance(5.0, 10.0, class_id=3), TadInstance(12.5, 16.0, class_id=7)]
seq = tokenize_tad(instances, window, layout)
print("detection tokens:", seq.tokens)

decoded = detokenize_tad(seq, [1.0] * len(seq), window, layout)
for inst in decoded:
    print(f"  decoded [{inst.start:5.2f}, {inst.end:5.2f}] class {inst.class_id}")
print("  (boundaries land on bin centers, so they move by at most one bin)")

# --- segmentation: labels -> tokens -> segments ----------------------------
w4 = Window("demo", 0.0, 4.0, 4, 1.0)
labels = [0, 0, 5, 5]
segments = detokenize_tas(tokenize_tas(labels, w4, layout), layout)
print("\nsegmentation of", labels, "->", [(s.start_frame, s.end_frame, s.class_id) for s in segments])

# --- boundaries: timestamps -> binary frame tokens -> timestamps -----------
w5 = Window("demo", 0.0, 5.0, 150, 30.0)
bounds = [1.2, 2.5]
back = detokenize_gebd(tokenize_gebd(bounds, w5, layout), w5, layout)
print("\nboundaries", bounds, "->", [round(b.timestamp, 3) for b in back])

# --- NMS: overlapping same-class detections are suppressed -----------------
noisy = [
    TadInstance(5.0, 10.0, 3, score=0.9),
    TadInstance(5.2, 10.1, 3, score=0.6),  # duplicate of the first
    TadInstance(12.0, 6.0 + 10.0, 3, score=0.5),
]
kept = nms_1d(noisy, iou_threshold=0.5)
print("\nNMS kept", [(round(k.start, 1), round(k.end, 1), k.score) for k in kept])

# --- cross-window merging ---------------------------------------------------
w_a = Window("demo", 0.0, 5.0, 150, 30.0)
w_b = Window("demo", 2.5, 5.0, 150, 30.0)
merged = merge_windows(
    Task.GEBD,
    [(w_a, [GebdBoundary(3.0)]), (w_b, [GebdBoundary(3.01)])],  # same boundary seen twice
    video_duration=7.5,
)
print("overlapping boundary reports merge to", [round(b.timestamp, 3) for b in merged])
