"""The two joint-training schedules and the data balance strategy.

Data mixing pools one clip per video from every task into one shuffled
stream; batch mixing interleaves single-task batches, one per task per
iteration, cycling the smaller datasets. The balance strategy keeps an
oversized boundary-detection corpus from dominating an epoch: batch mixing
stops when the other tasks are exhausted, data mixing subsamples the corpus
to the batch-mixing-aligned budget up front.

This script inspects epoch plans (no training), then runs a short joint
training to show the mixed per-task losses in the log.
"""

import collections

import numpy as np

from timetok import datapipe
from timetok.cli import cmd_gen_data
from timetok.config import load_config
from timetok.train import run_training
from timetok.vocab import Task

WORKDIR = "demo_runs/joint"

config = load_config(None, [
    f"output_dir={WORKDIR}/data",
    "seed=6",
    "gen_tad_videos=32",
    "gen_tas_videos=24",
    "gen_gebd_videos=240",  # deliberately oversized
    "gen_tad_eval_videos=4", "gen_tas_eval_videos=4", "gen_gebd_eval_videos=4",
])
cmd_gen_data(config, [Task.TAD, Task.TAS, Task.GEBD])
datasets = [
    datapipe.load_dataset(f"{WORKDIR}/data/{t}_train_manifest.jsonl") for t in ("tad", "tas", "gebd")
]
for ds in datasets:
    print(f"{ds.task.value:4s}: {len(ds):3d} videos, batch {ds.spec.batch_size}, {ds.group_count()} groups/epoch")

rng = np.random.default_rng(0)

print("\ndata mixing: one global shuffle, mixed batches")
plan = datapipe.plan_epoch_data_mixing(datasets, batch_size=32, rng=rng)
tasks_in_first = collections.Counter(s.task.value for s in plan[0])
print(f"  {len(plan)} batches; first batch mixes {dict(tasks_in_first)}")

print("\nbatch mixing without balance: epoch runs until the largest task is done")
plan = datapipe.plan_epoch_batch_mixing(datasets, rng)
print(f"  {len(plan) // 3} iterations x one batch per task")

print("\nbatch mixing with balance: epoch ends with the non-GEBD tasks")
plan = datapipe.plan_epoch_batch_mixing(datasets, rng, balance=True)
counts = collections.Counter(b[0].task.value for b in plan)
print(f"  {len(plan) // 3} iterations; batches per task: {dict(counts)}")

cap = datapipe.balanced_gebd_cap(datasets)
print(f"\ndata mixing with balance subsamples GEBD to {cap} clips per epoch")
balanced = datapipe.apply_balance(datasets, "data_mixing", rng)
print(f"  GEBD corpus seen by the epoch: {len(balanced[2])} of {len(datasets[2])} videos")

print("\nshort joint training (batch mixing, balance on) ...")
config = load_config(None, [
    f"output_dir={WORKDIR}/run",
    "seed=6",
    "mixing=batch_mixing",
    "balance=true",
    "epochs=5",
    f"data_tad={WORKDIR}/data/tad_train_manifest.jsonl",
    f"data_tas={WORKDIR}/data/tas_train_manifest.jsonl",
    f"data_gebd={WORKDIR}/data/gebd_train_manifest.jsonl",
])
result = run_training(config, datasets)
for record in result.epoch_records:
    losses = {k: round(v, 3) for k, v in record.items() if k.startswith("loss_")}
    print(f"  epoch {record['epoch']}: {record['iterations']} iterations, {losses}")
