import json
from pathlib import Path

import pytest

from multicam.cli import main


def tree(root: Path) -> dict[str, bytes]:
    return {str(p.relative_to(root)): p.read_bytes() for p in sorted(root.rglob("*")) if p.is_file()}


@pytest.fixture(scope="module")
def clean_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("clean")
    assert main(["--seed", "3", "simulate", "--preset", "fullvis-clean", "-n", "4",
                 "--n-frames", "300", "--out", str(out)]) == 0
    return out


class TestSimulate:
    def test_count(self, tmp_path):
        assert main(["simulate", "--preset", "fullvis-clean", "-n", "20", "--n-frames", "50",
                     "--out", str(tmp_path)]) == 0
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert len(manifest["sessions"]) == 20
        assert len(list((tmp_path / "sessions").iterdir())) == 60

    def test_same_seed_identical_tree(self, tmp_path):
        args = ["simulate", "--preset", "occluded-noisy", "-n", "2", "--n-frames", "500", "--seed", "7"]
        assert main(args + ["--out", str(tmp_path / "a")]) == 0
        assert main(args + ["--out", str(tmp_path / "b")]) == 0
        assert tree(tmp_path / "a") == tree(tmp_path / "b")
        assert main(args[:-1] + ["8", "--out", str(tmp_path / "c")]) == 0
        assert tree(tmp_path / "a") != tree(tmp_path / "c")

    def test_zero_sessions(self, tmp_path):
        assert main(["simulate", "-n", "0", "--out", str(tmp_path)]) == 0
        assert json.loads((tmp_path / "manifest.json").read_text())["sessions"] == []

    def test_bad_config_exit_2(self, tmp_path, capsys):
        cfg = tmp_path / "bad.json"
        cfg.write_text(json.dumps({"noise": {"miss_prob": 2.0}}))
        assert main(["simulate", "--config", str(cfg), "--out", str(tmp_path / "o")]) == 2
        assert "noise.miss_prob" in capsys.readouterr().err

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"n_frames": 40, "seed": 1}))
        assert main(["simulate", "--config", str(cfg), "-n", "1", "--out", str(tmp_path / "o")]) == 0
        assert json.loads((tmp_path / "o" / "scenario.json").read_text())["n_frames"] == 40


class TestPipeline:
    def test_fuse_top(self, clean_dir, tmp_path):
        assert main(["fuse", "--manifest", str(clean_dir / "manifest.json"), "--cameras", "top",
                     "--out", str(tmp_path)]) == 0
        files = sorted(p.name for p in tmp_path.iterdir())
        assert files == [f"s00{i}_top.csv" for i in range(4)]
        # noise-free, fully visible: fused labels equal the truth tables
        assert main(["label", "--manifest", str(clean_dir / "manifest.json"),
                     "--out", str(tmp_path / "truth")]) == 0
        for i in range(4):
            assert ((tmp_path / f"s00{i}_top.csv").read_text()
                    == (tmp_path / "truth" / f"s00{i}_truth.csv").read_text())

    def test_label_single_file(self, clean_dir, tmp_path):
        src = clean_dir / "sessions" / "s000_intervals.csv"
        assert main(["label", "--intervals", str(src), "--out", str(tmp_path / "l.csv")]) == 0
        lines = (tmp_path / "l.csv").read_text().splitlines()
        assert lines[0] == "frame,SR,SL,AR,AL" and len(lines) == 301

    def test_featurize(self, clean_dir, tmp_path):
        assert main(["featurize-cache", "--manifest", str(clean_dir / "manifest.json"),
                     "--out", str(tmp_path)]) == 0
        assert (tmp_path / "s000.feat").stat().st_size == 20 + 300 * 4 * 50 * 4

    def test_train_predict(self, clean_dir, tmp_path):
        ckpt = tmp_path / "m.ckpt"
        assert main(["train", "--manifest", str(clean_dir / "manifest.json"), "--variant", "low",
                     "--epochs", "2", "--samples-per-video", "8", "--out", str(ckpt)]) == 0
        assert (tmp_path / "m.ckpt.loss.csv").read_text().startswith("epoch,loss\n0,")
        assert main(["predict", "--manifest", str(clean_dir / "manifest.json"),
                     "--checkpoint", str(ckpt), "--out", str(tmp_path / "p")]) == 0
        assert (tmp_path / "p" / "s003_low.csv").exists()

    def test_evaluate_and_report(self, clean_dir, tmp_path, capsys):
        out = tmp_path / "rep"
        assert main(["evaluate", "--manifest", str(clean_dir / "manifest.json"),
                     "--variants", "both-naive,mcc", "--folds", "2", "--epochs", "1",
                     "--samples-per-video", "8", "--out", str(out)]) == 0
        printed = capsys.readouterr().out
        assert printed == (out / "aggregate.txt").read_text()
        assert printed.splitlines()[0].split() == ["Metric", "Naive", "MCC"]
        assert main(["report", "--results", str(out / "results.json"), "--compare", "paper",
                     "--format", "csv"]) == 0
        header = capsys.readouterr().out.splitlines()[0]
        assert header == "Metric,Naive,Naive (ref),MCC,MCC (ref)"

    def test_report_reference_only(self, capsys):
        assert main(["report", "--compare", "paper"]) == 0
        text = capsys.readouterr().out
        assert "MCC" in text and "0.93" in text and "0.94" in text

    def test_no_train_refuses(self, clean_dir, tmp_path):
        assert main(["evaluate", "--manifest", str(clean_dir / "manifest.json"), "--variants", "mcc",
                     "--folds", "2", "--no-train", "--out", str(tmp_path)]) == 2


class TestExitCodes:
    def test_missing_manifest(self, tmp_path):
        assert main(["fuse", "--manifest", str(tmp_path / "none.json"), "--out", str(tmp_path)]) == 2

    def test_usage_error(self):
        with pytest.raises(SystemExit) as e:
            main(["fuse"])
        assert e.value.code == 2

    def test_numerical_failure(self, clean_dir, tmp_path, capsys):
        code = main(["train", "--manifest", str(clean_dir / "manifest.json"), "--variant", "high",
                     "--epochs", "3", "--samples-per-video", "16", "--optimizer", "sgd",
                     "--lr", "1e308", "--out", str(tmp_path / "m.ckpt")])
        assert code == 3
        assert "epoch 0" in capsys.readouterr().err
