import filecmp
import json
import os

import numpy as np
import pytest

from timetok import datapipe
from timetok.checkpoint import load_checkpoint
from timetok.cli import cmd_gen_data, main
from timetok.config import load_config
from timetok.vocab import Task

FAST = [
    "gen_fps=8", "gen_stride=2", "gen_window_seconds=8", "model_frames=32",
    "gen_tad_videos=6", "gen_tad_eval_videos=3",
    "gen_tas_videos=6", "gen_tas_eval_videos=3",
    "gen_gebd_videos=6", "gen_gebd_eval_videos=3",
]


def setflags(*pairs):
    out = []
    for p in pairs:
        out += ["--set", p]
    return out


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    root = tmp_path_factory.mktemp("corpus")
    exp = load_config(None, [f"output_dir={root}", "seed=21"] + FAST)
    cmd_gen_data(exp, [Task.TAD, Task.TAS, Task.GEBD])
    return root


class TestGenData:
    def test_idempotent_byte_identical(self, tmp_path):
        for sub in ("x", "y"):
            exp = load_config(None, [f"output_dir={tmp_path/sub}", "seed=21"] + FAST)
            cmd_gen_data(exp, [Task.TAS])
        assert filecmp.cmp(tmp_path / "x/tas_train_manifest.jsonl", tmp_path / "y/tas_train_manifest.jsonl", shallow=False)
        for f in (tmp_path / "x/tas_train_features").iterdir():
            assert filecmp.cmp(f, tmp_path / "y/tas_train_features" / f.name, shallow=False)

    def test_three_tasks_three_manifests(self, corpus):
        for task in ("tad", "tas", "gebd"):
            assert (corpus / f"{task}_train_manifest.jsonl").exists()
            assert (corpus / f"{task}_eval_manifest.jsonl").exists()
            assert (corpus / f"{task}_train_annotations.jsonl").exists()

    def test_class_counts_recorded(self, corpus):
        ds = datapipe.load_dataset(corpus / "tad_train_manifest.jsonl")
        assert ds.meta["classes"] == 6

    def test_train_and_eval_share_directions(self, corpus):
        train = datapipe.load_dataset(corpus / "tas_train_manifest.jsonl")
        evald = datapipe.load_dataset(corpus / "tas_eval_manifest.jsonl")
        assert np.array_equal(train.meta["directions"], evald.meta["directions"])


@pytest.fixture(scope="module")
def run_dir(corpus, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    rc = main(
        ["train"]
        + setflags(
            f"output_dir={out}", "mixing=single_task", "task=tas", "epochs=2",
            f"data_tas={corpus}/tas_train_manifest.jsonl", *FAST,
        )
    )
    assert rc == 0
    return out


class TestTrainInferEval:
    def test_artifacts_exist(self, run_dir):
        assert (run_dir / "model.ckpt").exists()
        assert (run_dir / "train_log.jsonl").exists()
        assert (run_dir / "resolved_config.txt").exists()

    def test_resolved_config_reloads(self, run_dir):
        cfg = load_config(str(run_dir / "resolved_config.txt"))
        assert cfg.task == "tas" and cfg.epochs == 2

    def test_log_is_per_epoch_per_task(self, run_dir):
        records = [json.loads(line) for line in open(run_dir / "train_log.jsonl")]
        assert len(records) == 2
        assert all("loss_tas" in r and "loss_tad" not in r for r in records)
        assert all(r["iterations"] >= 1 for r in records)

    def test_single_task_determinism(self, corpus, tmp_path):
        outs = []
        for sub in ("r1", "r2"):
            out = tmp_path / sub
            rc = main(
                ["train"]
                + setflags(
                    f"output_dir={out}", "mixing=single_task", "task=gebd", "epochs=2",
                    f"data_gebd={corpus}/gebd_train_manifest.jsonl", *FAST,
                )
            )
            assert rc == 0
            outs.append(json.loads(open(out / "train_log.jsonl").readlines()[-1]))
        assert outs[0]["loss_gebd"] == outs[1]["loss_gebd"]

    def test_batch_mixing_logs_iterations_as_max_group_count(self, corpus, tmp_path):
        out = tmp_path / "joint"
        rc = main(
            ["train"]
            + setflags(
                f"output_dir={out}", "mixing=batch_mixing", "balance=true", "epochs=1",
                f"data_tad={corpus}/tad_train_manifest.jsonl",
                f"data_tas={corpus}/tas_train_manifest.jsonl",
                f"data_gebd={corpus}/gebd_train_manifest.jsonl", *FAST,
            )
        )
        assert rc == 0
        record = json.loads(open(out / "train_log.jsonl").readline())
        # 6 videos per task: tad groups ceil(6/8)=1, tas 1 -> max = 1
        assert record["iterations"] == 1
        assert record["batches"] == 3
        assert {"loss_tad", "loss_tas", "loss_gebd"} <= set(record)

    def test_infer_eval_round_trip(self, corpus, run_dir, tmp_path):
        preds = tmp_path / "p.jsonl"
        rc = main(
            ["infer", "--checkpoint", str(run_dir / "model.ckpt"),
             "--manifest", str(corpus / "tas_eval_manifest.jsonl"), "--out", str(preds)]
            + setflags(*FAST)
        )
        assert rc == 0
        report = tmp_path / "report.jsonl"
        rc = main(
            ["eval", "--predictions", str(preds), "--truth", str(corpus / "tas_eval_manifest.jsonl"),
             "--report", str(report)]
        )
        assert rc == 0
        result = json.loads(open(report).read())
        assert result["task"] == "tas"
        assert set(result["f1"]) == {"10", "25", "50"}

    def test_eval_accepts_annotation_files(self, corpus, run_dir, tmp_path):
        preds = tmp_path / "p2.jsonl"
        main(["infer", "--checkpoint", str(run_dir / "model.ckpt"),
              "--manifest", str(corpus / "tas_eval_manifest.jsonl"), "--out", str(preds)] + setflags(*FAST))
        rc = main(["eval", "--predictions", str(preds), "--truth", str(corpus / "tas_eval_annotations.jsonl")])
        assert rc == 0

    def test_checkpoint_layout_matches_dataset(self, run_dir):
        params, mcfg, layout = load_checkpoint(run_dir / "model.ckpt")
        assert layout.time_token_count == 150
        assert mcfg.vocab_size == layout.total_size


class TestExitCodes:
    def test_config_error_is_2(self):
        assert main(["train", "--set", "mixing=nonsense"]) == 2

    def test_missing_dataset_is_io_error(self):
        rc = main(["train", "--set", "data_tas=/nonexistent.jsonl", "--set", "mixing=single_task", "--set", "task=tas"])
        assert rc == 4

    def test_io_error_is_4(self, corpus):
        rc = main(["eval", "--predictions", "/nonexistent/preds.jsonl",
                   "--truth", str(corpus / "tas_eval_manifest.jsonl")])
        assert rc == 4

    def test_unknown_key_is_2(self):
        assert main(["train", "--set", "nope=1"]) == 2

    def test_success_is_0(self, corpus, tmp_path):
        rc = main(["gen-data", "--tasks", "tas"] + setflags(f"output_dir={tmp_path}", "seed=3", *FAST))
        assert rc == 0


class TestAblate:
    def test_weight_loss_harness(self, corpus, tmp_path):
        rc = main(
            ["ablate", "--study", "weight-loss"]
            + setflags(
                f"output_dir={tmp_path}", "epochs=2",
                f"data_tad={corpus}/tad_train_manifest.jsonl",
                f"data_tad_eval={corpus}/tad_eval_manifest.jsonl", *FAST,
            )
        )
        assert rc == 0
        rows = [json.loads(line) for line in open(tmp_path / "ablation_weight-loss.jsonl")]
        arms = {r["arm"] for r in rows if "arm" in r}
        assert arms == {"weight_loss", "cross_entropy", "unit_weight"}
        check = [r for r in rows if "check" in r][0]
        assert check["identical"] is True

    def test_paradigm_harness(self, corpus, tmp_path):
        rc = main(
            ["ablate", "--study", "tad-paradigm"]
            + setflags(
                f"output_dir={tmp_path}", "epochs=2",
                f"data_tad={corpus}/tad_train_manifest.jsonl",
                f"data_tad_eval={corpus}/tad_eval_manifest.jsonl", *FAST,
            )
        )
        assert rc == 0
        rows = [json.loads(line) for line in open(tmp_path / "ablation_tad-paradigm.jsonl")]
        assert {r["arm"] for r in rows} == {"sparse", "dense"}
        assert all("avg_map" in r for r in rows)
