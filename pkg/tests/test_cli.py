import hashlib
import subprocess
import sys

import numpy as np
import pytest

from tensorchart.cli import main
from tensorchart.features import DissimilarityMatrix
from tensorchart.io import write_dissimilarity
from tensorchart.pipeline import PipelineConfig, parse_report

SMALL = """
[generate]
n_samples = 40
[train]
epochs = 4
[evaluate]
metric_k = 3
"""

ARTIFACTS = ["dataset.ccds", "features.ccft", "geodesic.ccdm", "model.ccnn", "loss.csv", "report.txt", "chart.svg", "isomap_report.txt", "isomap.svg"]


def _run(*argv):
    return main([str(a) for a in argv])


def _pipeline(out, config, *extra):
    codes = [_run(cmd, "--config", config, "--out", out, *extra) for cmd in ("generate", "featurize", "train", "evaluate", "baseline-isomap")]
    assert codes == [0] * 5


def _digests(out):
    return {name: hashlib.sha256((out / name).read_bytes()).hexdigest() for name in ARTIFACTS}


@pytest.fixture(scope="module")
def small_config(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.ini"
    path.write_text(SMALL)
    return path


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, small_config):
    out = tmp_path_factory.mktemp("run")
    _pipeline(out, small_config)
    return out


def test_print_config_round_trips(capsys):
    assert _run("print-config") == 0
    text = capsys.readouterr().out
    cfg = PipelineConfig.from_text(text)
    assert cfg == PipelineConfig()
    assert cfg.train.epochs == 300 and cfg.train.batch_size == 32 and cfg.train.learning_rate == 1e-3
    assert cfg.generate.n_samples == 1000 and cfg.features.h_p == 17


def test_console_entry_point():
    res = subprocess.run([sys.executable, "-m", "tensorchart.cli", "print-config"], capture_output=True, text=True)
    assert res.returncode == 0 and "[network]" in res.stdout


def test_generate_prints_summary(tmp_path, small_config, capsys):
    assert _run("generate", "--config", small_config, "--out", tmp_path, "--seed", "7", "--snr", "0") == 0
    out = parse_report(capsys.readouterr().out)
    assert out["samples"] == "40" and out["seed"] == "7" and len(out["config_digest"]) == 16


def test_pipeline_artifacts(run_dir):
    for name in ARTIFACTS:
        assert (run_dir / name).stat().st_size > 0
    rows = (run_dir / "loss.csv").read_text().splitlines()
    assert rows[0] == "epoch,mean_loss" and len(rows) == 1 + 4
    assert [int(r.split(",")[0]) for r in rows[1:]] == [1, 2, 3, 4]


def test_report_schema(run_dir):
    for name in ("report.txt", "isomap_report.txt"):
        rep = parse_report((run_dir / name).read_text())
        assert 0 <= float(rep["ct"]) <= 1 and 0 <= float(rep["tw"]) <= 1 and float(rep["ks"]) >= 0
        assert rep["k"] == "3" and rep["n"] == "40" and rep["scenario"] == "clean"


def test_svg_has_two_points_per_sample(run_dir):
    for name in ("chart.svg", "isomap.svg"):
        svg = (run_dir / name).read_text()
        assert svg.count("<circle") == 80
        assert svg.count('class="truth"') == 40 and svg.count('class="chart"') == 40


def test_train_prints_parameter_count(tmp_path, run_dir, small_config, capsys):
    assert _run("train", "--config", small_config, "--out", run_dir, "--model", tmp_path / "m.ccnn", "--loss-log", tmp_path / "l.csv") == 0
    assert parse_report(capsys.readouterr().out)["parameters"] == "11970"


def test_every_stage_is_bit_identical(tmp_path, run_dir, small_config):
    _pipeline(tmp_path, small_config)
    assert _digests(tmp_path) == _digests(run_dir)


def test_hopping_keeps_feature_shape(tmp_path, small_config, capsys):
    assert _run("generate", "--config", small_config, "--out", tmp_path, "--hopping", "17") == 0
    assert _run("featurize", "--config", small_config, "--out", tmp_path) == 0
    assert "feature_shape = 32x32x24" in capsys.readouterr().out


def test_missing_input_is_io_error(tmp_path, capsys):
    assert _run("featurize", "--out", tmp_path) == 2
    assert "error" in capsys.readouterr().err


def test_corrupt_dataset_exit_code(tmp_path, run_dir, capsys):
    raw = (run_dir / "dataset.ccds").read_bytes()
    (tmp_path / "dataset.ccds").write_bytes(raw[: len(raw) // 3])
    assert _run("featurize", "--out", tmp_path) == 3
    assert "at byte" in capsys.readouterr().err


def test_bad_magic_exit_code(tmp_path, run_dir):
    (tmp_path / "model.ccnn").write_bytes(b"NOPE" + (run_dir / "model.ccnn").read_bytes()[4:])
    assert _run("evaluate", "--out", run_dir, "--model", tmp_path / "model.ccnn") == 3


def test_inconsistent_artifacts_exit_code(tmp_path, run_dir, capsys):
    other = DissimilarityMatrix(np.ones((5, 5)) - np.eye(5), "geodesic")
    write_dissimilarity(tmp_path / "g.ccdm", other)
    assert _run("evaluate", "--out", run_dir, "--dissimilarity", tmp_path / "g.ccdm") == 5
    assert "dissimilarity" in capsys.readouterr().err


def test_isomap_rejects_direct_input(tmp_path, run_dir):
    write_dissimilarity(tmp_path / "d.ccdm", DissimilarityMatrix(np.ones((40, 40)) - np.eye(40), "direct"))
    assert _run("baseline-isomap", "--out", run_dir, "--dissimilarity", tmp_path / "d.ccdm") == 5


def test_divergence_exit_code(tmp_path, run_dir, capsys):
    cfg = tmp_path / "hot.ini"
    cfg.write_text(SMALL.replace("epochs = 4", "epochs = 4\nlearning_rate = 1e200"))
    code = _run("train", "--config", cfg, "--out", run_dir, "--model", tmp_path / "m.ccnn", "--loss-log", tmp_path / "l.csv")
    assert code == 4
    assert "last finite epoch" in capsys.readouterr().err
    assert not (tmp_path / "m.ccnn").exists()


def test_unknown_config_key(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[train]\nepocs = 3\n")
    assert _run("print-config", "--config", cfg) == 5
