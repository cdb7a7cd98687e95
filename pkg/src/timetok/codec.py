"""Conversion between task annotations, token sequences and predictions.

Training direction: annotations restricted to a sampled window become target
token sequences. Inference direction: generated token sequences become scored
intervals (detection), labeled segments (segmentation) or boundary
timestamps, followed by 1-D NMS and cross-window merging.

All operations here are pure functions over immutable inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .vocab import Role, Task, VocabLayout, class_to_token, time_to_token, token_to_class, token_to_time


class DecodeError(Exception):
    """A token sequence violated the generation contract for its task."""


@dataclass(frozen=True)
class Window:
    """A fixed-length sampling window into a source video.

    frame_count is the model's clip length; sample_rate is frames per second
    after temporal striding, so frame_count == round(duration * sample_rate).
    """

    video_id: str
    start_time: float
    duration: float
    frame_count: int
    sample_rate: float

    def __post_init__(self):
        if self.duration <= 0:
            raise ValueError("window duration must be positive")


@dataclass(frozen=True)
class TadInstance:
    start: float
    end: float
    class_id: int
    score: float | None = None


@dataclass(frozen=True)
class TasSegment:
    start_frame: int
    end_frame: int  # inclusive
    class_id: int


@dataclass(frozen=True)
class GebdBoundary:
    timestamp: float
    score: float | None = None


@dataclass(frozen=True)
class TargetSequence:
    """A task-tagged token sequence with one role per position."""

    task: Task
    tokens: tuple[int, ...]
    roles: tuple[Role, ...]

    def __post_init__(self):
        if len(self.tokens) != len(self.roles):
            raise ValueError("tokens and roles must have equal length")

    def __len__(self) -> int:
        return len(self.tokens)


BACKGROUND_LABEL = -1  # frame label for "no action" in dense detection mode


def _prompt_sequence(task: Task, tokens: list[int], roles: list[Role], layout: VocabLayout) -> TargetSequence:
    return TargetSequence(
        task=task,
        tokens=tuple([layout.prompt_index(task)] + tokens),
        roles=tuple([Role.PROMPT] + roles),
    )


def tokenize_tad(instances: list[TadInstance], window: Window, layout: VocabLayout) -> TargetSequence:
    """Encode action instances as (start, end, class) token triples.

    Instances are clipped to the window; anything shorter than one time bin
    after clipping is dropped. Triples are ordered by start time so the
    training target is unique. The sequence is closed by the stop token.
    """
    bin_seconds = window.duration / layout.time_token_count
    window_end = window.start_time + window.duration
    kept = []
    for inst in instances:
        s = max(inst.start, window.start_time)
        e = min(inst.end, window_end)
        if e - s < bin_seconds:
            continue
        kept.append((s, e, inst.class_id))
    kept.sort()
    tokens: list[int] = []
    roles: list[Role] = []
    for s, e, class_id in kept:
        # clipping guarantees [0, 1] up to float error; clamp the residue
        s_rel = min(max((s - window.start_time) / window.duration, 0.0), 1.0)
        e_rel = min(max((e - window.start_time) / window.duration, 0.0), 1.0)
        tokens.append(time_to_token(s_rel, layout))
        tokens.append(time_to_token(e_rel, layout))
        tokens.append(class_to_token(Task.TAD, class_id, layout))
        roles.extend([Role.TAD_START, Role.TAD_END, Role.TAD_CLASS])
    tokens.append(layout.eos_index)
    roles.append(Role.EOS)
    return _prompt_sequence(Task.TAD, tokens, roles, layout)


def tokenize_tad_dense(frame_labels: list[int], window: Window, layout: VocabLayout) -> TargetSequence:
    """Alternate dense detection encoding: one class-or-background token per frame.

    Background frames reuse the GEBD background index, keeping the vocabulary
    unchanged between the two detection paradigms.
    """
    if len(frame_labels) != window.frame_count:
        raise ValueError(f"expected {window.frame_count} frame labels, got {len(frame_labels)}")
    tokens = []
    for label in frame_labels:
        if label == BACKGROUND_LABEL:
            tokens.append(layout.gebd_background_index)
        else:
            tokens.append(class_to_token(Task.TAD, label, layout))
    return _prompt_sequence(Task.TAD, tokens, [Role.TAD_CLASS] * len(tokens), layout)


def rasterize_tad(instances: list[TadInstance], window: Window) -> list[int]:
    """Per-frame class-or-background labels for the dense detection paradigm.

    A frame belongs to the instance containing its center (instances are
    assumed non-overlapping); all other frames are background.
    """
    span = window.duration / window.frame_count
    labels = [BACKGROUND_LABEL] * window.frame_count
    for inst in instances:
        for i in range(window.frame_count):
            center = window.start_time + (i + 0.5) * span
            if inst.start <= center < inst.end:
                labels[i] = inst.class_id
    return labels


def tokenize_tas(frame_labels: list[int], window: Window, layout: VocabLayout) -> TargetSequence:
    """Encode per-frame segmentation labels, one class token per frame."""
    if len(frame_labels) != window.frame_count:
        raise ValueError(f"expected {window.frame_count} frame labels, got {len(frame_labels)}")
    tokens = [class_to_token(Task.TAS, label, layout) for label in frame_labels]
    return _prompt_sequence(Task.TAS, tokens, [Role.TAS_FRAME_CLASS] * len(tokens), layout)


def tokenize_gebd(boundaries: list[float], window: Window, layout: VocabLayout) -> TargetSequence:
    """Encode event boundaries as per-frame binary tokens.

    Frame i is a boundary frame iff some boundary timestamp falls inside its
    span; multiple boundaries in one frame collapse to one boundary token.
    """
    count = window.frame_count
    span = window.duration / count
    is_boundary = [False] * count
    for b in boundaries:
        idx = int(np.floor((b - window.start_time) / span))
        if 0 <= idx < count:
            is_boundary[idx] = True
    tokens = [
        layout.gebd_boundary_index if flag else layout.gebd_background_index
        for flag in is_boundary
    ]
    return _prompt_sequence(Task.GEBD, tokens, [Role.GEBD_FRAME_BINARY] * count, layout)


def _check_prompt(seq: TargetSequence, task: Task, layout: VocabLayout):
    if len(seq) == 0 or seq.tokens[0] != layout.prompt_index(task) or seq.roles[0] is not Role.PROMPT:
        raise DecodeError(f"sequence does not start with the {task.value} prompt")


def detokenize_tad(
    tokens: TargetSequence,
    token_probs: list[float],
    window: Window,
    layout: VocabLayout,
) -> list[TadInstance]:
    """Decode (start, end, class) triples into scored instances.

    token_probs holds the emission probability of every position (the prompt
    gets 1.0); each instance's score is the probability of its class token.
    Triples whose start bin is not strictly before the end bin are dropped.
    """
    _check_prompt(tokens, Task.TAD, layout)
    if len(token_probs) != len(tokens):
        raise DecodeError("token_probs length does not match sequence length")
    body = tokens.tokens[1:]
    if len(body) == 0 or body[-1] != layout.eos_index or (len(body) - 1) % 3 != 0:
        raise DecodeError("detection sequence is not complete triples plus eos")
    instances = []
    for i in range(0, len(body) - 1, 3):
        a, b, c = body[i], body[i + 1], body[i + 2]
        if not (0 <= a < layout.time_token_count and 0 <= b < layout.time_token_count):
            raise DecodeError("boundary slot holds a non-time token")
        task, class_id = token_to_class(c, layout)
        if task is not Task.TAD:
            raise DecodeError("class slot holds a non-detection token")
        if a >= b:
            continue
        instances.append(
            TadInstance(
                start=window.start_time + token_to_time(a, layout) * window.duration,
                end=window.start_time + token_to_time(b, layout) * window.duration,
                class_id=class_id,
                score=float(token_probs[1 + i + 2]),
            )
        )
    return instances


def dense_frame_labels(tokens: TargetSequence, layout: VocabLayout) -> list[int]:
    """Recover per-frame class-or-background labels from a dense detection sequence."""
    _check_prompt(tokens, Task.TAD, layout)
    labels = []
    for t in tokens.tokens[1:]:
        if t == layout.gebd_background_index:
            labels.append(BACKGROUND_LABEL)
        else:
            task, class_id = token_to_class(t, layout)
            if task is not Task.TAD:
                raise DecodeError("dense detection slot holds a non-detection token")
            labels.append(class_id)
    return labels


def detokenize_tad_dense(
    tokens: TargetSequence,
    token_probs: list[float],
    window: Window,
    layout: VocabLayout,
) -> list[TadInstance]:
    """Stitch dense per-frame detection tokens into scored instances.

    Maximal runs of one class become instances spanning their frames; the
    score is the mean emission probability over the run. Background runs are
    discarded.
    """
    labels = dense_frame_labels(tokens, layout)
    if len(token_probs) != len(tokens):
        raise DecodeError("token_probs length does not match sequence length")
    span = window.duration / window.frame_count
    probs = token_probs[1:]
    instances = []
    i = 0
    while i < len(labels):
        j = i
        while j + 1 < len(labels) and labels[j + 1] == labels[i]:
            j += 1
        if labels[i] != BACKGROUND_LABEL:
            instances.append(
                TadInstance(
                    start=window.start_time + i * span,
                    end=window.start_time + (j + 1) * span,
                    class_id=labels[i],
                    score=float(np.mean(probs[i : j + 1])),
                )
            )
        i = j + 1
    return instances


def detokenize_tas(tokens: TargetSequence, layout: VocabLayout) -> list[TasSegment]:
    """Stitch per-frame class tokens into maximal same-class segments.

    Segments tile the frame range: each segment ends where the next begins.
    """
    _check_prompt(tokens, Task.TAS, layout)
    labels = []
    for t in tokens.tokens[1:]:
        if not layout.tas_class_offset <= t < layout.gebd_boundary_index:
            raise DecodeError("segmentation slot holds a non-segmentation token")
        labels.append(t - layout.tas_class_offset)
    segments = []
    i = 0
    while i < len(labels):
        j = i
        while j + 1 < len(labels) and labels[j + 1] == labels[i]:
            j += 1
        segments.append(TasSegment(start_frame=i, end_frame=j, class_id=labels[i]))
        i = j + 1
    return segments


def detokenize_gebd(tokens: TargetSequence, window: Window, layout: VocabLayout,
                    token_probs: list[float] | None = None) -> list[GebdBoundary]:
    """Decode per-frame binary tokens into boundary timestamps at frame centers."""
    _check_prompt(tokens, Task.GEBD, layout)
    span = window.duration / window.frame_count
    boundaries = []
    for i, t in enumerate(tokens.tokens[1:]):
        if t == layout.gebd_boundary_index:
            score = None if token_probs is None else float(token_probs[1 + i])
            boundaries.append(GebdBoundary(timestamp=window.start_time + (i + 0.5) * span, score=score))
        elif t != layout.gebd_background_index:
            raise DecodeError("boundary slot holds a non-binary token")
    return boundaries


def temporal_iou(a: tuple[float, float], b: tuple[float, float]) -> float:
    inter = max(0.0, min(a[1], b[1]) - max(a[0], b[0]))
    if inter == 0.0:
        return 0.0
    union = (a[1] - a[0]) + (b[1] - b[0]) - inter
    return inter / union


def nms_1d(instances: list[TadInstance], iou_threshold: float) -> list[TadInstance]:
    """Greedy per-class non-maximum suppression over scored intervals.

    Instances are visited by descending score (start time breaking ties);
    one is kept iff its IoU with every already-kept instance of the same
    class stays below the threshold.
    """
    if not 0.0 <= iou_threshold <= 1.0:
        raise ValueError("iou threshold must lie in [0, 1]")
    order = sorted(instances, key=lambda r: (-(r.score or 0.0), r.start, r.end, r.class_id))
    kept: list[TadInstance] = []
    for cand in order:
        ok = True
        for prev in kept:
            if prev.class_id != cand.class_id:
                continue
            if temporal_iou((prev.start, prev.end), (cand.start, cand.end)) >= iou_threshold:
                ok = False
                break
        if ok:
            kept.append(cand)
    return kept


def merge_windows(
    task: Task,
    per_window: list[tuple[Window, object]],
    video_duration: float,
    nms_threshold: float = 0.5,
):
    """Fuse per-window predictions for one video.

    Detection: pool instances across windows and run NMS. Segmentation: per
    video frame, average the class probabilities of every covering window
    (majority vote when only labels are available) and re-stitch segments.
    Boundaries: pool timestamps and merge any pair closer than one frame span
    into their mean.
    """
    if task is Task.TAD:
        pooled = [inst for _, instances in per_window for inst in instances]
        return nms_1d(pooled, nms_threshold)

    if task is Task.TAS:
        return _merge_tas(per_window, video_duration)

    if task is Task.GEBD:
        return _merge_gebd(per_window)

    raise ValueError(f"unknown task {task}")


def _merge_tas(per_window: list[tuple[Window, object]], video_duration: float) -> list[TasSegment]:
    if not per_window:
        raise DecodeError("no windows to merge")
    rate = per_window[0][0].sample_rate
    n_frames = int(round(video_duration * rate))
    votes: list[np.ndarray | None] = [None] * n_frames
    for window, payload in per_window:
        probs = np.asarray(payload, dtype=np.float64)
        if probs.ndim == 1:  # labels only: one-hot majority vote
            n_classes = int(probs.max()) + 1 if probs.size else 1
            onehot = np.zeros((probs.shape[0], n_classes))
            onehot[np.arange(probs.shape[0]), probs.astype(int)] = 1.0
            probs = onehot
        for f in range(n_frames):
            center = (f + 0.5) / rate
            if window.start_time <= center <= window.start_time + window.duration:
                j = int(np.floor((center - window.start_time) * rate))
                j = min(max(j, 0), window.frame_count - 1)
                row = probs[j]
                if votes[f] is None:
                    votes[f] = np.zeros(max(row.shape[0], 1))
                if votes[f].shape[0] < row.shape[0]:
                    votes[f] = np.pad(votes[f], (0, row.shape[0] - votes[f].shape[0]))
                votes[f][: row.shape[0]] += row
    labels = []
    for f, v in enumerate(votes):
        if v is None:
            raise DecodeError(f"video frame {f} is covered by no window")
        labels.append(int(np.argmax(v)))
    segments = []
    i = 0
    while i < n_frames:
        j = i
        while j + 1 < n_frames and labels[j + 1] == labels[i]:
            j += 1
        segments.append(TasSegment(start_frame=i, end_frame=j, class_id=labels[i]))
        i = j + 1
    return segments


def _merge_gebd(per_window: list[tuple[Window, object]]) -> list[GebdBoundary]:
    if not per_window:
        return []
    span = per_window[0][0].duration / per_window[0][0].frame_count
    pooled = sorted(
        (b for _, boundaries in per_window for b in boundaries),
        key=lambda b: b.timestamp,
    )
    merged: list[GebdBoundary] = []
    cluster: list[GebdBoundary] = []
    for b in pooled:
        if cluster and b.timestamp - cluster[-1].timestamp >= span:
            merged.append(_cluster_mean(cluster))
            cluster = []
        cluster.append(b)
    if cluster:
        merged.append(_cluster_mean(cluster))
    return merged


def _cluster_mean(cluster: list[GebdBoundary]) -> GebdBoundary:
    ts = float(np.mean([b.timestamp for b in cluster]))
    scores = [b.score for b in cluster if b.score is not None]
    return GebdBoundary(timestamp=ts, score=float(np.mean(scores)) if scores else None)


# ---------------------------------------------------------------------------
# Annotation and prediction files: one JSON record per line, one video per
# record, fields {video_id, duration, fps, stride, task, payload}. Floats
# round-trip bit-exactly through json's repr formatting, so score ranking is
# reproducible.
# ---------------------------------------------------------------------------


@dataclass
class VideoAnnotation:
    video_id: str
    duration: float
    fps: float
    stride: int
    task: Task
    instances: list[TadInstance] | None = None
    frame_labels: list[int] | None = None
    boundaries: list[float] | None = None

    @property
    def sample_rate(self) -> float:
        return self.fps / self.stride


@dataclass
class PredictionSet:
    video_id: str
    duration: float
    task: Task
    instances: list[TadInstance] | None = None
    segments: list[TasSegment] | None = None
    boundaries: list[GebdBoundary] | None = None


def _annotation_payload(ann: VideoAnnotation):
    if ann.task is Task.TAD:
        return [[i.start, i.end, i.class_id] for i in ann.instances]
    if ann.task is Task.TAS:
        return list(ann.frame_labels)
    return list(ann.boundaries)


def save_annotations(path, annotations: list[VideoAnnotation]):
    with open(path, "w") as f:
        for ann in annotations:
            rec = {
                "video_id": ann.video_id,
                "duration": ann.duration,
                "fps": ann.fps,
                "stride": ann.stride,
                "task": ann.task.value,
                "payload": _annotation_payload(ann),
            }
            f.write(json.dumps(rec) + "\n")


def load_annotations(path) -> list[VideoAnnotation]:
    out = []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            task = Task(rec["task"])
            ann = VideoAnnotation(
                video_id=rec["video_id"],
                duration=rec["duration"],
                fps=rec["fps"],
                stride=rec["stride"],
                task=task,
            )
            if task is Task.TAD:
                ann.instances = [TadInstance(s, e, int(c)) for s, e, c in rec["payload"]]
            elif task is Task.TAS:
                ann.frame_labels = [int(v) for v in rec["payload"]]
            else:
                ann.boundaries = [float(b) for b in rec["payload"]]
            out.append(ann)
    return out


def save_predictions(path, predictions: list[PredictionSet]):
    with open(path, "w") as f:
        for pred in predictions:
            if pred.task is Task.TAD:
                payload = [[i.start, i.end, i.class_id, i.score] for i in pred.instances]
            elif pred.task is Task.TAS:
                payload = [[s.start_frame, s.end_frame, s.class_id] for s in pred.segments]
            else:
                payload = [[b.timestamp, b.score] for b in pred.boundaries]
            rec = {
                "video_id": pred.video_id,
                "duration": pred.duration,
                "task": pred.task.value,
                "payload": payload,
            }
            f.write(json.dumps(rec) + "\n")


def load_predictions(path) -> list[PredictionSet]:
    out = []
    with open(path) as f:
        for line in f:
            if not line.strip():
                continue
            rec = json.loads(line)
            task = Task(rec["task"])
            pred = PredictionSet(video_id=rec["video_id"], duration=rec["duration"], task=task)
            if task is Task.TAD:
                pred.instances = [TadInstance(s, e, int(c), score) for s, e, c, score in rec["payload"]]
            elif task is Task.TAS:
                pred.segments = [TasSegment(int(s), int(e), int(c)) for s, e, c in rec["payload"]]
            else:
                pred.boundaries = [GebdBoundary(float(t), None if s is None else float(s)) for t, s in rec["payload"]]
            out.append(pred)
    return out
