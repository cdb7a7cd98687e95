"""Datasets, window cropping, joint-training schedules and synthetic data.

A dataset is a list of videos (feature stream plus annotation) with a
sampling spec. Epoch plans are pure functions of (datasets, seed, mode):
they fix every video choice and window start up front, so two processes with
the same seed train on identical batches.

Synthetic videos substitute for extracted video features: each class is a
fixed random direction in feature space injected exactly over its annotated
span, on top of white noise.
"""

from __future__ import annotations

import json
import os
import struct
from dataclasses import dataclass, field

import numpy as np

from .codec import TadInstance, VideoAnnotation, Window, _annotation_payload
from .vocab import Task

# Paper-scale sampling configurations (window seconds, stride, batch size)
# for the three reference corpora; all give 150-frame clips. Kept for
# documentation and spec tests; desk-scale runs use smaller clips.
REFERENCE_SPECS = {
    Task.TAD: dict(fps=30.0, stride=4, window_seconds=20.0, clip_frames=150, batch_size=4),
    Task.TAS: dict(fps=15.0, stride=4, window_seconds=40.0, clip_frames=150, batch_size=28),
    Task.GEBD: dict(fps=30.0, stride=1, window_seconds=5.0, clip_frames=150, batch_size=32),
}


@dataclass(frozen=True)
class DatasetSpec:
    task: Task
    fps: float
    stride: int
    window_seconds: float
    clip_frames: int
    batch_size: int

    def __post_init__(self):
        expected = int(round(self.window_seconds * self.fps / self.stride))
        if expected != self.clip_frames:
            raise ValueError(
                f"clip_frames {self.clip_frames} != round(window_seconds * fps / stride) = {expected}"
            )

    @property
    def sample_rate(self) -> float:
        return self.fps / self.stride


@dataclass
class SyntheticVideo:
    video_id: str
    duration: float
    features: np.ndarray  # (frames, feature_dim) at fps/stride
    annotation: VideoAnnotation
    meta: dict = field(default_factory=dict)


@dataclass
class Dataset:
    spec: DatasetSpec
    videos: list[SyntheticVideo]
    meta: dict = field(default_factory=dict)

    def __len__(self) -> int:
        return len(self.videos)

    @property
    def task(self) -> Task:
        return self.spec.task

    def group_count(self) -> int:
        """Number of batches this dataset contributes per cycle."""
        return -(-len(self.videos) // self.spec.batch_size)


@dataclass(frozen=True)
class FeatureClip:
    window: Window
    features: np.ndarray  # (clip_frames, feature_dim)


@dataclass(frozen=True)
class PlannedSample:
    dataset_index: int
    video_index: int
    task: Task
    window_start: float


def _frame_indices(start: float, rate: float, count: int, n_source: int) -> np.ndarray:
    # nearest source frame for each clip frame center; edges clamp (pad)
    idx = np.floor(start * rate + np.arange(count) + 0.5).astype(int)
    return np.clip(idx, 0, n_source - 1)


def crop_window(video: SyntheticVideo, spec: DatasetSpec, start: float):
    """Materialize the clip at a given window start (see crop_random_window)."""
    window = Window(
        video_id=video.video_id,
        start_time=start,
        duration=spec.window_seconds,
        frame_count=spec.clip_frames,
        sample_rate=spec.sample_rate,
    )
    idx = _frame_indices(start, spec.sample_rate, spec.clip_frames, video.features.shape[0])
    clip = FeatureClip(window=window, features=video.features[idx])
    ann = video.annotation
    if spec.task is Task.TAD:
        end = start + spec.window_seconds
        restricted = []
        for inst in ann.instances:
            s, e = max(inst.start, start), min(inst.end, end)
            if e > s:
                restricted.append(TadInstance(s, e, inst.class_id))
        return clip, restricted
    if spec.task is Task.TAS:
        labels = np.asarray(ann.frame_labels)
        return clip, [int(v) for v in labels[idx]]
    end = start + spec.window_seconds
    return clip, [b for b in ann.boundaries if start <= b < end]


def crop_random_window(video: SyntheticVideo, spec: DatasetSpec, rng: np.random.Generator):
    """Uniformly random fixed-length crop; short videos are edge-padded at start 0.

    Returns the feature clip and the annotation restricted to the window
    (instances clipped, frame labels resampled, boundaries filtered).
    """
    if video.features.shape[0] == 0:
        raise ValueError(f"video {video.video_id} has no frames")
    slack = video.duration - spec.window_seconds
    start = float(rng.uniform(0.0, slack)) if slack > 0 else 0.0
    return crop_window(video, spec, start)


def draw_window_start(video: SyntheticVideo, spec: DatasetSpec, rng: np.random.Generator) -> float:
    slack = video.duration - spec.window_seconds
    return float(rng.uniform(0.0, slack)) if slack > 0 else 0.0


# --------------------------- epoch planning ---------------------------------


def plan_epoch_data_mixing(datasets: list[Dataset], batch_size: int, rng: np.random.Generator) -> list[list[PlannedSample]]:
    """One random clip per video from every dataset, globally shuffled, split
    into batches (the last may be short). Mixed-task batches are expected."""
    if not datasets:
        raise ValueError("no datasets")
    if batch_size < 1:
        raise ValueError("batch_size must be >= 1")
    samples = []
    for di, ds in enumerate(datasets):
        for vi, video in enumerate(ds.videos):
            samples.append(
                PlannedSample(di, vi, ds.task, draw_window_start(video, ds.spec, rng))
            )
    order = rng.permutation(len(samples))
    shuffled = [samples[i] for i in order]
    return [shuffled[i : i + batch_size] for i in range(0, len(shuffled), batch_size)]


def _partition(ds: Dataset, di: int, rng: np.random.Generator) -> list[list[PlannedSample]]:
    order = rng.permutation(len(ds.videos))
    batches = []
    b = ds.spec.batch_size
    for i in range(0, len(order), b):
        batch = [
            PlannedSample(di, int(vi), ds.task, draw_window_start(ds.videos[int(vi)], ds.spec, rng))
            for vi in order[i : i + b]
        ]
        batches.append(batch)
    return batches


def plan_epoch_batch_mixing(
    datasets: list[Dataset], rng: np.random.Generator, balance: bool = False
) -> list[list[PlannedSample]]:
    """Single-task batches, one per task per iteration.

    Each dataset is pre-partitioned into batches of its own batch size;
    datasets with fewer groups restart cyclically (reshuffled). Without
    balance the epoch runs until the largest dataset is exhausted; with
    balance it stops once every non-GEBD dataset is exhausted, so an
    oversized GEBD corpus stops being drawn beyond that point.
    """
    if not datasets:
        raise ValueError("no datasets")
    counts = [ds.group_count() for ds in datasets]
    if balance:
        non_gebd = [c for ds, c in zip(datasets, counts) if ds.task is not Task.GEBD]
        epoch_len = max(non_gebd) if non_gebd else max(counts)
    else:
        epoch_len = max(counts)
    queues: list[list[list[PlannedSample]]] = [_partition(ds, di, rng) for di, ds in enumerate(datasets)]
    plan: list[list[PlannedSample]] = []
    for _ in range(epoch_len):
        for di, ds in enumerate(datasets):
            if not queues[di]:
                queues[di] = _partition(ds, di, rng)
            plan.append(queues[di].pop(0))
    return plan


def balanced_gebd_cap(datasets: list[Dataset]) -> int | None:
    """Per-epoch GEBD sample budget implied by the batch-mixing alignment:
    max(non-GEBD group counts) times the GEBD batch size."""
    gebd = [ds for ds in datasets if ds.task is Task.GEBD]
    others = [ds for ds in datasets if ds.task is not Task.GEBD]
    if not gebd or not others:
        return None
    return max(ds.group_count() for ds in others) * gebd[0].spec.batch_size


def apply_balance(datasets: list[Dataset], mode: str, rng: np.random.Generator) -> list[Dataset]:
    """Data balance before planning an epoch.

    Under data mixing the GEBD dataset is subsampled (uniformly, per epoch)
    down to the batch-mixing alignment budget; the other tasks are never
    touched. Under batch mixing the datasets pass through unchanged and the
    balancing happens in the epoch-termination rule of the planner.
    """
    if mode not in ("data_mixing", "batch_mixing"):
        raise ValueError(f"unknown mixing mode {mode}")
    if mode == "batch_mixing":
        return datasets
    cap = balanced_gebd_cap(datasets)
    out = []
    for ds in datasets:
        if ds.task is Task.GEBD and cap is not None and len(ds.videos) > cap:
            chosen = rng.choice(len(ds.videos), size=cap, replace=False)
            out.append(Dataset(spec=ds.spec, videos=[ds.videos[int(i)] for i in sorted(chosen)], meta=ds.meta))
        else:
            out.append(ds)
    return out


def sliding_windows(video_id: str, duration: float, spec: DatasetSpec, stride_seconds: float) -> list[Window]:
    """Inference windows at a fixed stride plus a right-aligned final window
    so the union always covers [0, duration]."""
    if stride_seconds <= 0:
        raise ValueError("stride must be positive")
    if stride_seconds > spec.window_seconds:
        raise ValueError("stride larger than the window would leave uncovered gaps")
    w = spec.window_seconds
    mk = lambda s: Window(video_id, s, w, spec.clip_frames, spec.sample_rate)
    if duration <= w:
        return [mk(0.0)]
    eps = 1e-9
    starts = []
    s = 0.0
    while s + w <= duration + eps:
        starts.append(s)
        s += stride_seconds
    last = duration - w
    if starts[-1] < last - eps:
        starts.append(last)
    return [mk(s) for s in starts]


# --------------------------- synthetic generator ----------------------------


def class_directions(count: int, dim: int, rng: np.random.Generator) -> np.ndarray:
    """Fixed random unit directions, one per class."""
    d = rng.standard_normal((count, dim))
    return d / np.linalg.norm(d, axis=1, keepdims=True)


def _snap_duration(rng, duration_range, rate):
    d = rng.uniform(*duration_range)
    n = max(int(round(d * rate)), 1)
    return n / rate, n


def synth_generate(
    task: Task,
    video_count: int,
    classes: int,
    duration_range: tuple[float, float],
    noise_level: float,
    rng: np.random.Generator,
    spec: DatasetSpec,
    feature_dim: int = 32,
    directions: np.ndarray | None = None,
    boundary_direction: np.ndarray | None = None,
    id_prefix: str = "",
    instance_count_range: tuple[int, int] = (1, 4),
    instance_length_range: tuple[float, float] = (1.5, 5.0),
    segment_count_range: tuple[int, int] = (2, 6),
    boundary_count_range: tuple[int, int] = (2, 6),
    min_boundary_gap: float = 1.0,
) -> Dataset:
    """Plant class-specific feature directions and emit matching annotations.

    Detection: 1..k non-overlapping instances per video, background frames
    pure noise. Segmentation: segments tile the video. Boundaries: piecewise
    unit directions with a localized spike of a dedicated boundary direction
    at each boundary frame. noise_level is the white-noise standard deviation
    per feature component (signal directions have unit norm).
    """
    rate = spec.sample_rate
    if directions is None:
        directions = class_directions(classes, feature_dim, rng)
    if directions.shape[0] < classes:
        raise ValueError("not enough directions for the requested class count")
    if boundary_direction is None:
        boundary_direction = class_directions(1, feature_dim, rng)[0] * 2.0
    boundary_dir = boundary_direction

    videos = []
    for v in range(video_count):
        vid = f"{id_prefix}{task.value}_{v:04d}"
        duration, n = _snap_duration(rng, duration_range, rate)
        feats = noise_level * rng.standard_normal((n, feature_dim))
        centers = (np.arange(n) + 0.5) / rate
        ann = VideoAnnotation(
            video_id=vid, duration=duration, fps=spec.fps, stride=spec.stride, task=task
        )
        if task is Task.TAD:
            k = int(rng.integers(instance_count_range[0], instance_count_range[1] + 1))
            lo, hi = instance_length_range
            if k * lo > duration:
                raise ValueError(f"cannot pack {k} instances of >= {lo}s into {duration}s")
            lengths = rng.uniform(lo, min(hi, duration / k), size=k)
            free = duration - lengths.sum()
            cuts = np.sort(rng.uniform(0.0, free, size=k))
            instances = []
            offset = 0.0
            for i in range(k):
                s = cuts[i] + offset
                e = s + lengths[i]
                offset += lengths[i]
                c = int(rng.integers(classes))
                instances.append(TadInstance(float(s), float(e), c))
                mask = (centers >= s) & (centers < e)
                feats[mask] += directions[c]
            ann.instances = instances
        elif task is Task.TAS:
            n_seg = int(rng.integers(segment_count_range[0], segment_count_range[1] + 1))
            cuts = np.sort(rng.uniform(0.0, duration, size=n_seg - 1)) if n_seg > 1 else np.array([])
            bounds = np.concatenate([[0.0], cuts, [duration]])
            labels_per_seg = []
            prev = -1
            for _ in range(n_seg):
                c = int(rng.integers(classes))
                while c == prev and classes > 1:
                    c = int(rng.integers(classes))
                labels_per_seg.append(c)
                prev = c
            frame_labels = np.zeros(n, dtype=int)
            for i in range(n_seg):
                mask = (centers >= bounds[i]) & (centers < bounds[i + 1])
                frame_labels[mask] = labels_per_seg[i]
                feats[mask] += directions[labels_per_seg[i]]
            ann.frame_labels = [int(x) for x in frame_labels]
        else:
            k = int(rng.integers(boundary_count_range[0], boundary_count_range[1] + 1))
            if (k + 1) * min_boundary_gap > duration:
                raise ValueError(f"cannot place {k} boundaries {min_boundary_gap}s apart in {duration}s")
            free = duration - (k + 1) * min_boundary_gap
            cuts = np.sort(rng.uniform(0.0, free, size=k))
            boundaries = [float(cuts[i] + (i + 1) * min_boundary_gap) for i in range(k)]
            unit_bounds = np.concatenate([[0.0], boundaries, [duration]])
            prev = -1
            for i in range(len(unit_bounds) - 1):
                c = int(rng.integers(classes))
                while c == prev and classes > 1:
                    c = int(rng.integers(classes))
                prev = c
                mask = (centers >= unit_bounds[i]) & (centers < unit_bounds[i + 1])
                feats[mask] += directions[c]
            for b in boundaries:
                feats[int(np.floor(b * rate))] += boundary_dir
            ann.boundaries = boundaries
        videos.append(
            SyntheticVideo(
                video_id=vid,
                duration=duration,
                features=feats.astype(np.float32),
                annotation=ann,
                meta={"noise_level": noise_level},
            )
        )
    meta = {
        "classes": classes,
        "noise_level": noise_level,
        "feature_dim": feature_dim,
        "directions": directions,
        "boundary_direction": boundary_dir,
    }
    return Dataset(spec=spec, videos=videos, meta=meta)


def oracle_frame_accuracy(dataset: Dataset) -> float:
    """Frame accuracy of a nearest-direction classifier on planted features.

    The separability check for a noise level: near-zero noise must score
    ~100%. Detection/segmentation classify class directions (detection adds
    a background decision at correlation 0.5); boundary videos classify the
    spike direction.
    """
    directions = dataset.meta["directions"]
    correct = 0
    total = 0
    for video in dataset.videos:
        ann = video.annotation
        rate = dataset.spec.sample_rate
        n = video.features.shape[0]
        centers = (np.arange(n) + 0.5) / rate
        if dataset.task is Task.TAS:
            truth = np.asarray(ann.frame_labels)
            pred = (video.features @ directions.T).argmax(axis=1)
        elif dataset.task is Task.TAD:
            truth = np.full(n, -1)
            for inst in ann.instances:
                truth[(centers >= inst.start) & (centers < inst.end)] = inst.class_id
            corr = video.features @ directions.T
            pred = corr.argmax(axis=1)
            pred[corr.max(axis=1) < 0.5] = -1
        else:
            truth = np.zeros(n, dtype=bool)
            for b in ann.boundaries:
                truth[int(np.floor(b * rate))] = True
            bdir = dataset.meta["boundary_direction"]
            pred = (video.features @ bdir) / float(bdir @ bdir) >= 0.5
        correct += int((pred == truth).sum())
        total += n
    return correct / total


# --------------------------- on-disk format ---------------------------------

_FEATURE_MAGIC = b"TTF1"


def save_features(path, features: np.ndarray):
    arr = np.ascontiguousarray(features, dtype="<f4")
    with open(path, "wb") as f:
        f.write(_FEATURE_MAGIC)
        f.write(struct.pack("<II", arr.shape[0], arr.shape[1]))
        f.write(arr.tobytes())


def load_features(path) -> np.ndarray:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != _FEATURE_MAGIC:
        raise ValueError(f"{path} is not a feature file")
    n, c = struct.unpack_from("<II", blob, 4)
    return np.frombuffer(blob, dtype="<f4", count=n * c, offset=12).reshape(n, c).copy()


def save_dataset(directory, name: str, dataset: Dataset):
    """Write feature blobs plus a line-delimited manifest.

    The first manifest record carries the dataset spec and generator
    metadata; each following record pairs one video's feature file with its
    annotation payload.
    """
    os.makedirs(os.path.join(directory, f"{name}_features"), exist_ok=True)
    manifest = os.path.join(directory, f"{name}_manifest.jsonl")
    with open(manifest, "w") as f:
        header = {
            "kind": "dataset",
            "task": dataset.task.value,
            "fps": dataset.spec.fps,
            "stride": dataset.spec.stride,
            "window_seconds": dataset.spec.window_seconds,
            "clip_frames": dataset.spec.clip_frames,
            "batch_size": dataset.spec.batch_size,
            "classes": dataset.meta.get("classes"),
            "noise_level": dataset.meta.get("noise_level"),
            "feature_dim": dataset.meta.get("feature_dim"),
            "directions": None
            if dataset.meta.get("directions") is None
            else np.asarray(dataset.meta["directions"]).tolist(),
            "boundary_direction": None
            if dataset.meta.get("boundary_direction") is None
            else np.asarray(dataset.meta["boundary_direction"]).tolist(),
        }
        f.write(json.dumps(header) + "\n")
        for video in dataset.videos:
            rel = os.path.join(f"{name}_features", f"{video.video_id}.bin")
            save_features(os.path.join(directory, rel), video.features)
            rec = {
                "kind": "video",
                "video_id": video.video_id,
                "duration": video.duration,
                "fps": dataset.spec.fps,
                "stride": dataset.spec.stride,
                "feature_file": rel,
                "frames": int(video.features.shape[0]),
                "payload": _annotation_payload(video.annotation),
                "meta": video.meta,
            }
            f.write(json.dumps(rec) + "\n")
    return manifest


def load_dataset(manifest_path) -> Dataset:
    directory = os.path.dirname(manifest_path)
    with open(manifest_path) as f:
        lines = [json.loads(line) for line in f if line.strip()]
    header = lines[0]
    task = Task(header["task"])
    spec = DatasetSpec(
        task=task,
        fps=header["fps"],
        stride=header["stride"],
        window_seconds=header["window_seconds"],
        clip_frames=header["clip_frames"],
        batch_size=header["batch_size"],
    )
    meta = {
        "classes": header.get("classes"),
        "noise_level": header.get("noise_level"),
        "feature_dim": header.get("feature_dim"),
        "directions": None if header.get("directions") is None else np.asarray(header["directions"]),
        "boundary_direction": None
        if header.get("boundary_direction") is None
        else np.asarray(header["boundary_direction"]),
    }
    videos = []
    for rec in lines[1:]:
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
        videos.append(
            SyntheticVideo(
                video_id=rec["video_id"],
                duration=rec["duration"],
                features=load_features(os.path.join(directory, rec["feature_file"])),
                annotation=ann,
                meta=rec.get("meta", {}),
            )
        )
    return Dataset(spec=spec, videos=videos, meta=meta)
