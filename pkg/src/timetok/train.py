"""Training loop, optimizer, inference driver and metric evaluation.

Everything is seed-deterministic: parameter init, window draws, epoch plans
and dropout each consume their own child of one seed sequence, so two runs
of the same config produce bit-identical checkpoints and predictions.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass

import numpy as np

from . import codec, datapipe, metrics
from .checkpoint import save_checkpoint
from .config import ConfigError, ExperimentConfig, save_config
from .losses import LossConfig, NumericError
from .model import ModelConfig, forward_backward, generate, init_params, parameter_count, _embed_features_fwd, _encode_fwd
from .vocab import Task, VocabLayout, build_layout


class AdamW:
    """Decoupled weight decay Adam; decay applies to matrices only."""

    def __init__(self, params, lr=2e-4, beta1=0.9, beta2=0.999, eps=1e-8, weight_decay=1e-4):
        self.lr, self.beta1, self.beta2, self.eps, self.weight_decay = lr, beta1, beta2, eps, weight_decay
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}
        self.t = 0

    def step(self, params, grads):
        self.t += 1
        bc1 = 1.0 - self.beta1**self.t
        bc2 = 1.0 - self.beta2**self.t
        for k, p in params.items():
            g = grads[k]
            self.m[k] = self.beta1 * self.m[k] + (1.0 - self.beta1) * g
            self.v[k] = self.beta2 * self.v[k] + (1.0 - self.beta2) * g * g
            update = self.lr * (self.m[k] / bc1) / (np.sqrt(self.v[k] / bc2) + self.eps)
            if p.ndim >= 2:
                update = update + self.lr * self.weight_decay * p
            p -= update


def layout_from_datasets(datasets: list[datapipe.Dataset], time_tokens: int) -> VocabLayout:
    """Vocabulary layout from the class counts of all listed datasets.

    Single-task baselines list all three datasets so every run shares one
    layout (and therefore one parameter count); a missing task contributes a
    single placeholder class.
    """
    tad = max((ds.meta.get("classes") or 1 for ds in datasets if ds.task is Task.TAD), default=1)
    tas = max((ds.meta.get("classes") or 1 for ds in datasets if ds.task is Task.TAS), default=1)
    return build_layout(time_tokens, tad, tas)


def model_config_from(exp: ExperimentConfig, layout: VocabLayout) -> ModelConfig:
    return ModelConfig(
        input_dim=exp.gen_feature_dim if exp.model_input_dim == 0 else exp.model_input_dim,
        model_dim=exp.model_dim,
        encoder_layers=exp.model_encoder_layers,
        decoder_layers=exp.model_decoder_layers,
        attention_heads=exp.model_heads,
        feedforward_dim=exp.model_ffn_dim,
        frame_count=exp.model_frames,
        max_target_len=exp.resolved_max_target_len(),
        vocab_size=layout.total_size,
        dropout_rate=exp.model_dropout,
        param_dtype=exp.model_dtype,
    )


def loss_config_from(exp: ExperimentConfig, layout: VocabLayout) -> LossConfig:
    return LossConfig(
        smooth_weight=exp.loss_smooth_weight,
        boundary_space=layout.time_token_count,
        tas_class_columns=(layout.tas_class_offset, layout.gebd_boundary_index),
        tad_distance_weighting=exp.loss_tad_distance_weighting,
        tad_distance_scale=exp.loss_tad_distance_scale,
    )


def make_target(task: Task, clip_annotation, window: codec.Window, layout: VocabLayout, dense_tad: bool):
    if task is Task.TAD:
        if dense_tad:
            return codec.tokenize_tad_dense(codec.rasterize_tad(clip_annotation, window), window, layout)
        return codec.tokenize_tad(clip_annotation, window, layout)
    if task is Task.TAS:
        return codec.tokenize_tas(clip_annotation, window, layout)
    return codec.tokenize_gebd(clip_annotation, window, layout)


@dataclass
class TrainResult:
    params: dict
    model_config: ModelConfig
    layout: VocabLayout
    checkpoint_path: str
    log_path: str
    epoch_records: list[dict]


def run_training(exp: ExperimentConfig, datasets: list[datapipe.Dataset], out_dir: str | None = None) -> TrainResult:
    """Train per the configured schedule and write checkpoint, log and
    resolved config into the output directory."""
    if not datasets:
        raise ConfigError("no datasets to train on")
    for ds in datasets:
        if ds.spec.clip_frames != exp.model_frames:
            raise ConfigError(
                f"dataset {ds.task.value} clip_frames {ds.spec.clip_frames} != model.frames {exp.model_frames}"
            )

    out_dir = out_dir or exp.resolve_output_dir()
    os.makedirs(out_dir, exist_ok=True)
    layout = layout_from_datasets(datasets, exp.time_tokens)
    mcfg = model_config_from(exp, layout)
    lcfg = loss_config_from(exp, layout)

    root = np.random.SeedSequence(exp.seed)
    init_ss, plan_ss, balance_ss, dropout_ss = root.spawn(4)
    params = init_params(mcfg, np.random.default_rng(init_ss))
    plan_rng = np.random.default_rng(plan_ss)
    balance_rng = np.random.default_rng(balance_ss)
    dropout_rng = np.random.default_rng(dropout_ss) if exp.model_dropout > 0 else None

    opt = AdamW(
        params,
        lr=exp.learning_rate,
        beta1=exp.adam_beta1,
        beta2=exp.adam_beta2,
        eps=exp.adam_eps,
        weight_decay=exp.weight_decay,
    )

    if exp.mixing == "single_task":
        train_sets = [ds for ds in datasets if ds.task is Task(exp.task)]
        if not train_sets:
            raise ConfigError(f"single_task mixing needs a {exp.task} dataset")
    else:
        train_sets = datasets

    dense = exp.tad_paradigm == "dense"
    log_path = os.path.join(out_dir, "train_log.jsonl")
    ckpt_path = os.path.join(out_dir, "model.ckpt")
    save_config(exp, os.path.join(out_dir, "resolved_config.txt"))
    with open(os.path.join(out_dir, "vocab_layout.json"), "w") as f:
        json.dump(layout.to_dict(), f, indent=2)  # decoding stays reproducible without the checkpoint

    records = []
    with open(log_path, "w") as log:
        try:
            _training_loop(exp, train_sets, layout, mcfg, lcfg, params, opt,
                           plan_rng, balance_rng, dropout_rng, dense, log, records, ckpt_path)
        except NumericError as err:
            # leave the last periodic checkpoint in place and record the abort
            log.write(json.dumps({"aborted_epoch": len(records), "error": str(err)}) + "\n")
            raise
    save_checkpoint(ckpt_path, params, mcfg, layout)
    return TrainResult(
        params=params,
        model_config=mcfg,
        layout=layout,
        checkpoint_path=ckpt_path,
        log_path=log_path,
        epoch_records=records,
    )


def _training_loop(exp, train_sets, layout, mcfg, lcfg, params, opt,
                   plan_rng, balance_rng, dropout_rng, dense, log, records, ckpt_path):
    for epoch in range(exp.epochs):
        if exp.mixing == "batch_mixing":
            plan = datapipe.plan_epoch_batch_mixing(train_sets, plan_rng, balance=exp.balance)
        elif exp.mixing == "data_mixing":
            eff = datapipe.apply_balance(train_sets, "data_mixing", balance_rng) if exp.balance else train_sets
            plan = datapipe.plan_epoch_data_mixing(eff, exp.mix_batch_size, plan_rng)
        else:
            plan = datapipe.plan_epoch_data_mixing(train_sets, train_sets[0].spec.batch_size, plan_rng)

        task_loss_sums: dict[str, float] = {}
        task_counts: dict[str, int] = {}
        for batch_plan in plan:
            batch = []
            for sample in batch_plan:
                ds = train_sets[sample.dataset_index]
                clip, ann = datapipe.crop_window(ds.videos[sample.video_index], ds.spec, sample.window_start)
                target = make_target(sample.task, ann, clip.window, layout, dense)
                batch.append((clip.features, target, sample.task))
            loss, grads, item_losses = forward_backward(
                batch, params, mcfg, lcfg, rng=dropout_rng, return_item_losses=True
            )
            opt.step(params, grads)
            for (_, _, task), item in zip(batch, item_losses):
                task_loss_sums[task.value] = task_loss_sums.get(task.value, 0.0) + item
                task_counts[task.value] = task_counts.get(task.value, 0) + 1
        # under batch mixing an iteration is one batch per task
        iterations = len(plan) // len(train_sets) if exp.mixing == "batch_mixing" else len(plan)
        record = {
            "epoch": epoch,
            "iterations": iterations,
            "batches": len(plan),
            "samples": dict(task_counts),
        }
        for task_name, total in task_loss_sums.items():
            record[f"loss_{task_name}"] = total / task_counts[task_name]
        records.append(record)
        log.write(json.dumps(record) + "\n")
        log.flush()
        if (epoch + 1) % exp.checkpoint_every == 0:
            save_checkpoint(ckpt_path, params, mcfg, layout)


# --------------------------- inference ---------------------------------------


def _drop_edge_truncated(instances, window: codec.Window, video_duration: float, layout: VocabLayout):
    """Discard detections cut off by an interior window edge.

    A clipped action reappears whole in a neighboring window (window stride
    at inference is small enough for any instance to fit in some window), so
    the truncated view is a duplicate that NMS cannot reliably remove.
    Edges shared with the video itself are kept.
    """
    margin = 2.0 * window.duration / layout.time_token_count
    lo = window.start_time
    hi = window.start_time + window.duration
    kept = []
    for inst in instances:
        if inst.start - lo < margin and lo > 1e-9:
            continue
        if hi - inst.end < margin and hi < video_duration - 1e-9:
            continue
        kept.append(inst)
    return kept


def run_inference(
    params,
    mcfg: ModelConfig,
    layout: VocabLayout,
    dataset: datapipe.Dataset,
    nms_threshold: float = 0.5,
    stride_seconds: float | None = None,
    dense_tad: bool = False,
    batch_size: int = 32,
) -> list[codec.PredictionSet]:
    """Sliding-window constrained generation, detokenization and merging."""
    task = dataset.task
    spec = dataset.spec
    if spec.clip_frames != mcfg.frame_count:
        raise ConfigError(f"dataset clips {spec.clip_frames} frames but the model expects {mcfg.frame_count}")
    stride = stride_seconds if stride_seconds else spec.window_seconds / 2.0

    jobs = []  # (video index, window, features)
    for vi, video in enumerate(dataset.videos):
        for window in datapipe.sliding_windows(video.video_id, video.duration, spec, stride):
            clip, _ = datapipe.crop_window(video, spec, window.start_time)
            jobs.append((vi, clip.window, clip.features))

    per_video: dict[int, list] = {vi: [] for vi in range(len(dataset.videos))}
    for i in range(0, len(jobs), batch_size):
        chunk = jobs[i : i + batch_size]
        feats = np.stack([f for _, _, f in chunk]).astype(mcfg.dtype)
        emb, _ = _embed_features_fwd(feats, params, mcfg)
        hidden, _ = _encode_fwd(emb, params, mcfg, rng=None)
        outputs = generate(hidden, task, layout, params, mcfg, dense_tad=dense_tad)
        for (vi, window, _), gen in zip(chunk, outputs):
            if task is Task.TAD:
                detok = codec.detokenize_tad_dense if dense_tad else codec.detokenize_tad
                payload = detok(gen.sequence, gen.token_probs, window, layout)
                payload = _drop_edge_truncated(payload, window, dataset.videos[vi].duration, layout)
            elif task is Task.TAS:
                payload = gen.frame_rows
            else:
                payload = codec.detokenize_gebd(gen.sequence, window, layout, gen.token_probs)
            per_video[vi].append((window, payload))

    predictions = []
    for vi, video in enumerate(dataset.videos):
        merged = codec.merge_windows(task, per_video[vi], video.duration, nms_threshold)
        pred = codec.PredictionSet(video_id=video.video_id, duration=video.duration, task=task)
        if task is Task.TAD:
            pred.instances = merged
        elif task is Task.TAS:
            pred.segments = merged
        else:
            pred.boundaries = merged
        predictions.append(pred)
    return predictions


# --------------------------- evaluation --------------------------------------


def evaluate_predictions(
    predictions: list[codec.PredictionSet],
    annotations: list[codec.VideoAnnotation],
    task: Task,
    tad_config: metrics.TadEvalConfig = metrics.TadEvalConfig(),
    gebd_config: metrics.GebdEvalConfig = metrics.GebdEvalConfig(),
) -> dict:
    """Compute the task's full metric table from prediction/annotation records."""
    pred_ids = {p.video_id for p in predictions}
    gt_ids = {a.video_id for a in annotations}
    if pred_ids != gt_ids:
        missing = sorted(gt_ids - pred_ids)
        extra = sorted(pred_ids - gt_ids)
        raise ValueError(f"video id mismatch: missing={missing} extra={extra}")

    if task is Task.TAD:
        per_thr, avg = metrics.tad_map(
            {p.video_id: p.instances for p in predictions},
            {a.video_id: a.instances for a in annotations},
            tad_config,
        )
        return {"task": task.value, "per_threshold": {str(k): v for k, v in per_thr.items()}, "average": avg}
    if task is Task.TAS:
        scores = metrics.tas_scores(
            {p.video_id: p.segments for p in predictions},
            {a.video_id: a.frame_labels for a in annotations},
        )
        return {
            "task": task.value,
            "f1": {str(k): v for k, v in scores["f1"].items()},
            "edit": scores["edit"],
            "acc": scores["acc"],
        }
    per_thr, avg = metrics.gebd_f1(
        {p.video_id: [b.timestamp for b in p.boundaries] for p in predictions},
        {a.video_id: a.boundaries for a in annotations},
        {a.video_id: a.duration for a in annotations},
        gebd_config,
    )
    return {"task": task.value, "per_threshold": {str(k): v for k, v in per_thr.items()}, "average": avg}


def format_report(result: dict) -> str:
    """Human-readable metric table: one row per threshold plus the average."""
    lines = [f"task: {result['task']}"]
    if "per_threshold" in result:
        width = max(len(k) for k in result["per_threshold"])
        for k, v in result["per_threshold"].items():
            lines.append(f"  {k:>{width}}  {v:.4f}")
        lines.append(f"  {'Avg':>{width}}  {result['average']:.4f}")
    else:
        for k, v in result["f1"].items():
            lines.append(f"  F1@{k}  {v:.2f}")
        lines.append(f"  Edit   {result['edit']:.2f}")
        lines.append(f"  Acc    {result['acc']:.2f}")
    return "\n".join(lines)
