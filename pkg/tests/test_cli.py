import subprocess
import sys

import pytest

from proxyvqa import storage
from proxyvqa.cli import EXIT_OK, EXIT_RUNTIME, EXIT_VALIDATION, main


def run_pipeline(root):
    """Every subcommand once on a tiny corpus; returns the produced paths."""
    p = {k: root / v for k, v in dict(
        clips="clips", targets="targets.csv", labels="labels.csv", ckpt="ckpt", feats="features.csv",
        ridge="ridge.bin", svr="svr.bin", std="std.csv", few="few.csv", zero="zero.csv",
        scatter="scatter.svg", report="report").items()}
    steps = [
        ["generate", "--seed", "3", "--contents", "6", "--frames", "4", "--size", "32", "--out", p["clips"]],
        ["compute-fr", "--manifest", p["clips"] / "manifest.txt", "--out", p["targets"],
         "--labels-out", p["labels"]],
        ["pretrain", "--manifest", p["clips"] / "manifest.txt", "--targets", p["targets"], "--epochs", "2",
         "--out", p["ckpt"]],
        ["extract-features", "--checkpoint", p["ckpt"] / "final.bin", "--manifest", p["clips"] / "manifest.txt",
         "--out", p["feats"]],
        ["fit-head", "--features", p["feats"], "--labels", p["labels"], "--model", "ridge", "--out", p["ridge"]],
        ["fit-head", "--features", p["feats"], "--labels", p["labels"], "--model", "svr", "--C", "1",
         "--out", p["svr"]],
        ["evaluate", "--protocol", "standard", "--features", p["feats"], "--labels", p["labels"], "--runs", "2",
         "--out", p["std"]],
        ["evaluate", "--protocol", "fewshot", "--features", p["feats"], "--labels", p["labels"], "--k", "5,10",
         "--samplings", "3", "--out", p["few"]],
        ["evaluate", "--protocol", "zeroshot", "--features", p["feats"], "--labels", p["labels"],
         "--source-features", p["feats"], "--source-labels", p["labels"], "--scatter", p["scatter"],
         "--out", p["zero"]],
        ["report", p["ckpt"] / "train_log.csv", p["std"], p["few"], p["zero"], "--out-dir", p["report"]],
    ]
    for argv in steps:
        assert main(["--threads", "1"] + [str(a) for a in argv]) == EXIT_OK, argv[0]
    return p


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    return run_pipeline(tmp_path_factory.mktemp("a")), run_pipeline(tmp_path_factory.mktemp("b"))


def test_pipeline_artifacts(runs):
    p, _ = runs
    assert len(storage.read_manifest(p["clips"]).entries) == 36
    assert (p["ckpt"] / "epoch_001.bin").is_file() and (p["ckpt"] / "epoch_002.bin").is_file()
    head = p["targets"].read_text().splitlines()[:3]
    assert head[0].startswith("# proxyvqa compute-fr config_sha256=")
    assert head[1].startswith("# ms_ssim_scales=2")
    assert head[2] == "content_id,level,frame_index,ssim,ms_ssim,psnr_norm"
    assert storage.read_features(p["feats"]).values.shape == (30, 64)
    std = storage.read_csv(p["std"])
    assert [r["run_id"] for r in std] == ["0", "1", "median"]
    few = [r for r in storage.read_csv(p["few"]) if r["run_id"] == "median"]
    assert [r["K"] for r in few] == ["5", "10"]
    assert p["scatter"].read_text().lstrip().startswith("<?xml")
    summary = storage.read_csv(p["report"] / "report_summary.csv")
    assert {r["kind"] for r in summary} == {"train", "evaluation"}
    for name in ("train_log.png", "std.png", "few.png", "zero.png"):
        assert (p["report"] / name).stat().st_size > 0


@pytest.mark.parametrize("key", ["targets", "labels", "feats", "ridge", "svr", "std", "few", "zero", "scatter"])
def test_reruns_are_byte_identical(runs, key):
    a, b = runs
    assert a[key].read_bytes() == b[key].read_bytes()


def test_checkpoints_and_figures_byte_identical(runs):
    a, b = runs
    assert (a["ckpt"] / "final.bin").read_bytes() == (b["ckpt"] / "final.bin").read_bytes()
    assert (a["report"] / "few.png").read_bytes() == (b["report"] / "few.png").read_bytes()


def test_validation_errors_exit_2(tmp_path, capsys):
    assert main(["compute-fr", "--manifest", str(tmp_path / "none.txt"), "--out", "x.csv"]) == EXIT_VALIDATION
    assert "not found" in capsys.readouterr().err
    assert main(["generate", "--contents", "2", "--size", "4", "--out", str(tmp_path / "c")]) == EXIT_VALIDATION
    (tmp_path / "bad.cfg").write_text("[data]\nshape = 3\n")
    assert main(["--config", str(tmp_path / "bad.cfg"), "generate", "--out", str(tmp_path / "c")]) \
        == EXIT_VALIDATION
    with pytest.raises(SystemExit) as exc:
        main(["evaluate", "--protocol", "sideways", "--features", "f", "--labels", "l", "--out", "o"])
    assert exc.value.code == 2


def test_mismatched_artifacts_rejected_before_work(runs, tmp_path):
    p, _ = runs
    main(["generate", "--seed", "1", "--contents", "2", "--frames", "2", "--size", "24",
          "--out", str(tmp_path / "other")])
    rc = main(["extract-features", "--checkpoint", str(p["ckpt"] / "final.bin"),
               "--manifest", str(tmp_path / "other" / "manifest.txt"), "--out", str(tmp_path / "f.csv")])
    assert rc == EXIT_VALIDATION and not (tmp_path / "f.csv").exists()
    rc = main(["pretrain", "--manifest", str(p["clips"] / "manifest.txt"), "--targets", str(p["targets"]),
               "--tasks", "ssim,vmaf", "--out", str(tmp_path / "ck")])
    assert rc == EXIT_VALIDATION


def test_divergent_training_exits_3(runs, tmp_path):
    p, _ = runs
    rc = main(["pretrain", "--manifest", str(p["clips"] / "manifest.txt"), "--targets", str(p["targets"]),
               "--epochs", "2", "--learning-rate", "1e30", "--out", str(tmp_path / "ck")])
    assert rc == EXIT_RUNTIME


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "proxyvqa", "--version"], capture_output=True, text=True)
    assert out.returncode == 0 and out.stdout.strip()
