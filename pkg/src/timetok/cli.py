"""Command line entry points: gen-data, train, infer, eval, ablate.

Every command takes a key=value config file (--config) plus repeatable
--set key=value overrides. Exit codes: 0 success, 2 config/input error,
3 numeric error, 4 io error.
"""

from __future__ import annotations

import argparse
import copy
import filecmp
import json
import os
import sys

import numpy as np

from . import codec, datapipe
from .checkpoint import load_checkpoint
from .config import ConfigError, ExperimentConfig, load_config, save_config
from .losses import NumericError
from .train import evaluate_predictions, format_report, run_inference, run_training
from .vocab import Task


def _dataset_spec(exp: ExperimentConfig, task: Task) -> datapipe.DatasetSpec:
    clip = int(round(exp.gen_window_seconds * exp.gen_fps / exp.gen_stride))
    if clip != exp.model_frames:
        raise ConfigError(
            f"gen window gives {clip} clip frames but model.frames = {exp.model_frames}"
        )
    batch = {Task.TAD: exp.gen_tad_batch, Task.TAS: exp.gen_tas_batch, Task.GEBD: exp.gen_gebd_batch}[task]
    return datapipe.DatasetSpec(
        task=task,
        fps=exp.gen_fps,
        stride=exp.gen_stride,
        window_seconds=exp.gen_window_seconds,
        clip_frames=clip,
        batch_size=batch,
    )


def cmd_gen_data(exp: ExperimentConfig, tasks: list[Task]) -> dict[str, str]:
    """Generate synthetic train/eval datasets and write manifests plus
    annotation files. Idempotent: identical flags give identical bytes."""
    out_dir = exp.resolve_output_dir()
    os.makedirs(out_dir, exist_ok=True)
    children = np.random.SeedSequence(exp.seed).spawn(9)
    slots = {
        (Task.TAD, "train"): 0, (Task.TAD, "eval"): 1,
        (Task.TAS, "train"): 2, (Task.TAS, "eval"): 3,
        (Task.GEBD, "train"): 4, (Task.GEBD, "eval"): 5,
    }
    # one direction set per task, shared by its train and eval splits so the
    # feature-to-class mapping generalizes across the split
    direction_slots = {Task.TAD: 6, Task.TAS: 7, Task.GEBD: 8}
    counts = {
        Task.TAD: (exp.gen_tad_videos, exp.gen_tad_eval_videos),
        Task.TAS: (exp.gen_tas_videos, exp.gen_tas_eval_videos),
        Task.GEBD: (exp.gen_gebd_videos, exp.gen_gebd_eval_videos),
    }
    written = {}
    tas_directions = None
    ordered = [t for t in (Task.TAD, Task.TAS, Task.GEBD) if t in tasks]
    if Task.GEBD in ordered and exp.gen_gebd_share_tas_directions:
        # GEBD unit directions reuse the segmentation class directions, which
        # must therefore exist first
        ordered = [t for t in (Task.TAS, Task.TAD, Task.GEBD) if t in tasks]
    for task in ordered:
        spec = _dataset_spec(exp, task)
        dir_rng = np.random.default_rng(children[direction_slots[task]])
        shared = {
            "directions": datapipe.class_directions(
                {Task.TAD: exp.gen_tad_classes, Task.TAS: exp.gen_tas_classes, Task.GEBD: exp.gen_gebd_units}[task],
                exp.gen_feature_dim,
                dir_rng,
            ),
            "boundary_direction": datapipe.class_directions(1, exp.gen_feature_dim, dir_rng)[0] * exp.gen_gebd_spike,
        }
        for split_idx, split in enumerate(("train", "eval")):
            rng = np.random.default_rng(children[slots[(task, split)]])
            kwargs = dict(shared)
            if task is Task.TAD:
                classes = exp.gen_tad_classes
                dur = (exp.gen_tad_duration_min, exp.gen_tad_duration_max)
                kwargs["instance_count_range"] = (exp.gen_tad_instances_min, exp.gen_tad_instances_max)
                kwargs["instance_length_range"] = (exp.gen_tad_length_min, exp.gen_tad_length_max)
            elif task is Task.TAS:
                classes = exp.gen_tas_classes
                dur = (exp.gen_tas_duration_min, exp.gen_tas_duration_max)
                kwargs["segment_count_range"] = (exp.gen_tas_segments_min, exp.gen_tas_segments_max)
            else:
                classes = exp.gen_gebd_units
                dur = (exp.gen_gebd_duration_min, exp.gen_gebd_duration_max)
                kwargs["boundary_count_range"] = (exp.gen_gebd_boundaries_min, exp.gen_gebd_boundaries_max)
                if exp.gen_gebd_share_tas_directions:
                    if tas_directions is None:
                        raise ConfigError("sharing directions requires generating the tas dataset too")
                    kwargs["directions"] = tas_directions
            dataset = datapipe.synth_generate(
                task=task,
                video_count=counts[task][split_idx],
                classes=classes,
                duration_range=dur,
                noise_level=exp.gen_noise,
                rng=rng,
                spec=spec,
                feature_dim=exp.gen_feature_dim,
                id_prefix=f"{split}_",
                **kwargs,
            )
            if task is Task.TAS and split == "train":
                tas_directions = dataset.meta["directions"]
            name = f"{task.value}_{split}"
            manifest = datapipe.save_dataset(out_dir, name, dataset)
            codec.save_annotations(
                os.path.join(out_dir, f"{name}_annotations.jsonl"),
                [v.annotation for v in dataset.videos],
            )
            written[name] = manifest
    return written


def _load_train_datasets(exp: ExperimentConfig) -> list[datapipe.Dataset]:
    paths = [(Task.TAD, exp.data_tad), (Task.TAS, exp.data_tas), (Task.GEBD, exp.data_gebd)]
    datasets = []
    for task, path in paths:
        if not path:
            continue
        ds = datapipe.load_dataset(path)
        if ds.task is not task:
            raise ConfigError(f"{path} holds a {ds.task.value} dataset, expected {task.value}")
        datasets.append(ds)
    if not datasets:
        raise ConfigError("no dataset manifests configured (data.tad / data.tas / data.gebd)")
    return datasets


def cmd_train(exp: ExperimentConfig):
    datasets = _load_train_datasets(exp)
    result = run_training(exp, datasets)
    final = result.epoch_records[-1] if result.epoch_records else {}
    print(json.dumps({"checkpoint": result.checkpoint_path, "final_epoch": final}))
    return result


def cmd_infer(exp: ExperimentConfig, checkpoint: str, manifest: str, out_path: str):
    params, mcfg, layout = load_checkpoint(checkpoint)
    dataset = datapipe.load_dataset(manifest)
    classes = dataset.meta.get("classes") or 1
    limit = layout.tad_class_count if dataset.task is Task.TAD else layout.tas_class_count
    if dataset.task in (Task.TAD, Task.TAS) and classes > limit:
        raise ConfigError(
            f"dataset has {classes} {dataset.task.value} classes but the checkpoint vocabulary holds {limit}"
        )
    predictions = run_inference(
        params,
        mcfg,
        layout,
        dataset,
        nms_threshold=exp.nms_threshold,
        stride_seconds=exp.infer_stride or None,
        dense_tad=exp.tad_paradigm == "dense",
        batch_size=exp.infer_batch,
    )
    codec.save_predictions(out_path, predictions)
    print(json.dumps({"predictions": out_path, "videos": len(predictions)}))
    return predictions


def _load_ground_truth(path: str) -> list[codec.VideoAnnotation]:
    with open(path) as f:
        first = json.loads(f.readline())
    if first.get("kind") == "dataset":
        return [v.annotation for v in datapipe.load_dataset(path).videos]
    return codec.load_annotations(path)


def cmd_eval(exp: ExperimentConfig, predictions_path: str, truth_path: str, report_path: str | None):
    predictions = codec.load_predictions(predictions_path)
    if not predictions:
        raise ValueError(f"{predictions_path} holds no predictions")
    task = predictions[0].task
    annotations = [a for a in _load_ground_truth(truth_path) if a.task is task]
    result = evaluate_predictions(predictions, annotations, task)
    print(format_report(result))
    if report_path:
        with open(report_path, "w") as f:
            f.write(json.dumps(result) + "\n")
    return result


def _train_infer_eval(exp: ExperimentConfig, label: str):
    sub = copy.deepcopy(exp)
    sub.output_dir = os.path.join(exp.resolve_output_dir(), label)
    datasets = _load_train_datasets(sub)
    result = run_training(sub, datasets)
    eval_manifest = {"tad": sub.data_tad_eval, "tas": sub.data_tas_eval, "gebd": sub.data_gebd_eval}[sub.task]
    if not eval_manifest:
        raise ConfigError(f"ablation needs data.{sub.task}_eval")
    dataset = datapipe.load_dataset(eval_manifest)
    predictions = run_inference(
        result.params,
        result.model_config,
        result.layout,
        dataset,
        nms_threshold=sub.nms_threshold,
        stride_seconds=sub.infer_stride or None,
        dense_tad=sub.tad_paradigm == "dense",
        batch_size=sub.infer_batch,
    )
    pred_path = os.path.join(sub.output_dir, "predictions.jsonl")
    codec.save_predictions(pred_path, predictions)
    annotations = [v.annotation for v in dataset.videos]
    metrics_result = evaluate_predictions(predictions, annotations, dataset.task)
    return result, metrics_result


def cmd_ablate(exp: ExperimentConfig, study: str):
    """The two paper-style ablation harnesses on synthetic detection data."""
    out_dir = exp.resolve_output_dir()
    os.makedirs(out_dir, exist_ok=True)
    exp = copy.deepcopy(exp)
    exp.mixing = "single_task"
    exp.task = "tad"
    rows = []
    if study == "weight-loss":
        arms = [
            ("weight_loss", dict(loss_tad_distance_weighting=True, loss_tad_distance_scale=1.0)),
            ("cross_entropy", dict(loss_tad_distance_weighting=False)),
            ("unit_weight", dict(loss_tad_distance_weighting=True, loss_tad_distance_scale=0.0)),
        ]
    elif study == "tad-paradigm":
        arms = [("sparse", dict(tad_paradigm="sparse")), ("dense", dict(tad_paradigm="dense"))]
    else:
        raise ConfigError(f"unknown ablation study {study!r}")
    results = {}
    for label, overrides in arms:
        arm_exp = copy.deepcopy(exp)
        for key, value in overrides.items():
            setattr(arm_exp, key, value)
        train_result, metric = _train_infer_eval(arm_exp, label)
        results[label] = (train_result, metric)
        rows.append({"study": study, "arm": label, "avg_map": metric["average"]})
    if study == "weight-loss":
        ce_ckpt = results["cross_entropy"][0].checkpoint_path
        unit_ckpt = results["unit_weight"][0].checkpoint_path
        rows.append(
            {
                "study": study,
                "check": "unit_weight_reproduces_cross_entropy",
                "identical": filecmp.cmp(ce_ckpt, unit_ckpt, shallow=False),
            }
        )
    report_path = os.path.join(out_dir, f"ablation_{study}.jsonl")
    with open(report_path, "w") as f:
        for row in rows:
            f.write(json.dumps(row) + "\n")
            print(json.dumps(row))
    return rows


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="timetok", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key")

    p = sub.add_parser("gen-data", help="generate synthetic datasets")
    common(p)
    p.add_argument("--tasks", default="tad,tas,gebd", help="comma-separated task subset")

    p = sub.add_parser("train", help="train per the configured schedule")
    common(p)

    p = sub.add_parser("infer", help="sliding-window inference from a checkpoint")
    common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    common(p)
    p.add_argument("--predictions", required=True)
    p.add_argument("--truth", required=True, help="dataset manifest or annotations file")
    p.add_argument("--report", default=None)

    p = sub.add_parser("ablate", help="paper-style ablation harnesses")
    common(p)
    p.add_argument("--study", required=True, choices=["weight-loss", "tad-paradigm"])
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        exp = load_config(args.config, args.set)
        if args.command == "gen-data":
            tasks = [Task(t.strip()) for t in args.tasks.split(",") if t.strip()]
            written = cmd_gen_data(exp, tasks)
            print(json.dumps(written))
        elif args.command == "train":
            cmd_train(exp)
        elif args.command == "infer":
            cmd_infer(exp, args.checkpoint, args.manifest, args.out)
        elif args.command == "eval":
            cmd_eval(exp, args.predictions, args.truth, args.report)
        elif args.command == "ablate":
            cmd_ablate(exp, args.study)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2
    except ValueError as err:
        print(f"input error: {err}", file=sys.stderr)
        return 2
    except NumericError as err:
        print(f"numeric error: {err}", file=sys.stderr)
        return 3
    except OSError as err:
        print(f"io error: {err}", file=sys.stderr)
        return 4
    return 0


if __name__ == "__main__":
    sys.exit(main())
