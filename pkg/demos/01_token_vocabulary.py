"""A tour of the shared token vocabulary.

One flat integer space covers all three temporal tasks: time tokens for
detection boundaries, two class ranges, the boundary/background pair, task
prompts and the control tokens. Run this script to see the layout printed,
the quantization round trip and the per-role legality masks.
"""

import numpy as np

from timetok.vocab import Role, Task, build_layout, class_to_token, legal_mask, time_to_token, token_to_time

# The reference configuration: 150 time bins, 20 detection classes,
# 48 segmentation classes.
layout = build_layout(time_token_count=150, tad_classes=20, tas_classes=48)

print("vocabulary layout")
for name, value in layout.to_dict().items():
    print(f"  {name:22s} {value}")

# Boundaries are normalized into [0, 1] relative to their window and
# quantized by flooring into one of the 150 bins.
print("\ntime quantization")
for position in (0.0, 0.25, 0.5, 0.999, 1.0):
    tok = time_to_token(position, layout)
    print(f"  {position:5.3f} -> token {tok:3d} -> bin center {token_to_time(tok, layout):.4f}")

# The inverse is exact at bin centers: every token survives the round trip.
assert all(time_to_token(token_to_time(k, layout), layout) == k for k in range(150))
print("  round trip over all 150 bins: exact")

print("\nclass tokens")
print("  detection class 3   ->", class_to_token(Task.TAD, 3, layout))
print("  segmentation class 0->", class_to_token(Task.TAS, 0, layout))

# During constrained generation each position may only emit the tokens legal
# for its role; everything else is masked out before the softmax.
print("\nlegality mask sizes")
for task, role in (
    (Task.TAD, Role.TAD_START),
    (Task.TAD, Role.TAD_CLASS),
    (Task.TAS, Role.TAS_FRAME_CLASS),
    (Task.GEBD, Role.GEBD_FRAME_BINARY),
):
    mask = legal_mask(task, role, layout)
    lo, hi = np.flatnonzero(mask).min(), np.flatnonzero(mask).max()
    print(f"  {task.value:4s} {role.value:18s} -> {int(mask.sum()):3d} legal tokens in [{lo}, {hi}]")
