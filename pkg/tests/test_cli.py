"""CLI surface: the full command pipeline on a miniature problem, the
documented exit codes, and reproducibility of draw files."""

import json

import numpy as np
import pytest

from mixedflow.cli import main
from mixedflow import io as mfio

TINY_TRAIN = {"width": 16, "summary_blocks": 1, "heads": 2, "flow_blocks": 2,
              "flow_hidden": 16, "eval_every": 10, "val_sets": 8, "warmup_steps": 5}


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "train.json"
    cfg.write_text(json.dumps(TINY_TRAIN))
    assert main(["simulate", "--d", "2", "--q", "1", "--count", "12", "--seed", "5",
                 "--toy", "--out", str(root / "sets.jsonl")]) == 0
    assert main(["train", "--d", "2", "--q", "1", "--budget", "160", "--batch", "8",
                 "--seed", "5", "--toy", "--config", str(cfg),
                 "--out", str(root / "run")]) == 0
    return root


class TestPipeline:
    def test_simulate_outputs(self, workdir):
        sets = mfio.load_datasets(workdir / "sets.jsonl")
        assert len(sets) == 12
        assert (workdir / "sets.jsonl.manifest.json").exists()

    def test_train_artifacts(self, workdir):
        assert (workdir / "run" / "best.ckpt").exists()
        assert (workdir / "run" / "curve.csv").exists()
        manifest = json.loads((workdir / "run" / "manifest.json").read_text())
        assert manifest["command"] == "train"

    def test_infer_and_determinism(self, workdir):
        out1, out2 = workdir / "draws1.jsonl", workdir / "draws2.jsonl"
        input_bytes = (workdir / "sets.jsonl").read_bytes()
        base = ["infer", "--checkpoint", str(workdir / "run" / "best.ckpt"),
                "--data", str(workdir / "sets.jsonl"), "--k", "50", "--seed", "9"]
        assert main(base + ["--out", str(out1)]) == 0
        assert main(base + ["--out", str(out2)]) == 0
        assert out1.read_bytes() == out2.read_bytes()
        assert (workdir / "sets.jsonl").read_bytes() == input_bytes  # inputs untouched
        draws = mfio.load_draws(out1)
        assert len(draws) == 12
        assert draws[0][0].global_std.shape == (50, 4)

    def test_calibrate_then_conformal_infer(self, workdir):
        table_path = workdir / "table.json"
        assert main(["calibrate", "--checkpoint", str(workdir / "run" / "best.ckpt"),
                     "--sets", str(workdir / "sets.jsonl"), "--k", "40",
                     "--seed", "11", "--out", str(table_path)]) == 0
        table = json.loads(table_path.read_text())
        assert set(table["adjustments"]) <= {"fixed", "variance", "random"}
        assert table["low_confidence"]  # only 12 calibration sets
        out = workdir / "draws_conformal.jsonl"
        assert main(["infer", "--checkpoint", str(workdir / "run" / "best.ckpt"),
                     "--data", str(workdir / "sets.jsonl"), "--k", "40", "--seed", "9",
                     "--refine", "conformal", "--conformal-table", str(table_path),
                     "--out", str(out)]) == 0

    def test_importance_refined_infer(self, workdir):
        out = workdir / "draws_is.jsonl"
        assert main(["infer", "--checkpoint", str(workdir / "run" / "best.ckpt"),
                     "--data", str(workdir / "sets.jsonl"), "--k", "40", "--seed", "9",
                     "--refine", "is", "--out", str(out)]) == 0
        (draws, rec), *_ = mfio.load_draws(out)
        assert draws.weights is not None
        assert abs(draws.weights.sum() - draws.k) < 1e-8

    def test_evaluate_and_report(self, workdir):
        eval_dir = workdir / "eval"
        assert main(["evaluate", "--checkpoint", str(workdir / "run" / "best.ckpt"),
                     "--data", str(workdir / "sets.jsonl"), "--k", "40", "--seed", "13",
                     "--out", str(eval_dir)]) == 0
        assert (eval_dir / "report.csv").exists()
        assert (eval_dir / "recovery_fixed.svg").exists()
        assert (eval_dir / "coverage_fixed.svg").exists()
        report_dir = workdir / "report"
        assert main(["report", "--draws", f"mine={workdir / 'draws1.jsonl'}",
                     "--data", str(workdir / "sets.jsonl"),
                     "--out", str(report_dir)]) == 0
        text = (report_dir / "report.txt").read_text()
        assert "mine:r" in text.splitlines()[0]
        assert (report_dir / "split_n_mine.csv").exists()

    def test_csv_inference(self, workdir, tmp_path):
        obs = tmp_path / "obs.csv"
        rows = ["group_id,y,x_1"]
        rng = np.random.default_rng(0)
        for g in ("a", "b", "c"):
            for _ in range(8):
                rows.append(f"{g},{rng.normal():.4f},{rng.normal():.4f}")
        obs.write_text("\n".join(rows) + "\n")
        prior = tmp_path / "prior.json"
        prior.write_text(json.dumps({"nu_beta": [0.0, 0.0], "tau_beta": [2.0, 2.0],
                                     "tau_sigma": [1.0], "tau_eps": 1.0}))
        out = tmp_path / "csv_draws.jsonl"
        assert main(["infer", "--checkpoint", str(workdir / "run" / "best.ckpt"),
                     "--data", str(obs), "--q", "1", "--prior", str(prior),
                     "--k", "30", "--seed", "3", "--out", str(out)]) == 0
        (draws, _), = mfio.load_draws(out)
        assert draws.global_std.shape == (30, 4)


class TestExitCodes:
    def test_config_error_is_2(self, workdir, tmp_path):
        # dimension mismatch: checkpoint (d=2) vs d=3 CSV data
        obs = tmp_path / "obs3.csv"
        obs.write_text("group_id,y,x_1,x_2\na,1.0,0.5,0.2\na,2.0,0.1,0.4\n")
        prior = tmp_path / "p.json"
        prior.write_text(json.dumps({"nu_beta": [0, 0, 0], "tau_beta": [1, 1, 1],
                                     "tau_sigma": [1], "tau_eps": 1.0}))
        code = main(["infer", "--checkpoint", str(workdir / "run" / "best.ckpt"),
                     "--data", str(obs), "--q", "1", "--prior", str(prior),
                     "--out", str(tmp_path / "x.jsonl")])
        assert code == 2

    def test_io_error_is_4(self, workdir, tmp_path):
        code = main(["infer", "--checkpoint", str(workdir / "run" / "best.ckpt"),
                     "--data", str(tmp_path / "missing.jsonl"),
                     "--out", str(tmp_path / "x.jsonl")])
        assert code == 4

    def test_bad_format_is_4(self, workdir, tmp_path):
        bad = tmp_path / "bad.jsonl"
        bad.write_text("not json\n")
        code = main(["infer", "--checkpoint", str(workdir / "run" / "best.ckpt"),
                     "--data", str(bad), "--out", str(tmp_path / "x.jsonl")])
        assert code == 4
