import json
import logging

import numpy as np
import pytest

from pumap.cli import RunConfig, main, resolve_config
from pumap.io import read_csv_matrix, save_dataset

# field -> (config-file text, expected file value, flag argv, expected flag value)
PRECEDENCE = {
    "input": ("a.csv", "a.csv", ["--input", "b.csv"], "b.csv"),
    "output": ("outA", "outA", ["--output", "outB"], "outB"),
    "labels": ("la.csv", "la.csv", ["--labels", "lb.csv"], "lb.csv"),
    "model": ("ma.bin", "ma.bin", ["--model", "mb.bin"], "mb.bin"),
    "embedding": ("ea.csv", "ea.csv", ["--embedding", "eb.csv"], "eb.csv"),
    "n_neighbors": ("7", 7, ["--n-neighbors", "9"], 9),
    "min_dist": ("0.3", 0.3, ["--min-dist", "0.5"], 0.5),
    "dim": ("3", 3, ["--dim", "4"], 4),
    "epochs": ("11", 11, ["--epochs", "12"], 12),
    "seed": ("5", 5, ["--seed", "6"], 6),
    "threads": ("2", 2, ["--threads", "3"], 3),
    "weight_umap": ("0.5", 0.5, ["--weight-umap", "0.25"], 0.25),
    "weight_recon": ("2", 2.0, ["--weight-recon", "3"], 3.0),
    "weight_global": ("0.1", 0.1, ["--weight-global", "0.2"], 0.2),
    "weight_classifier": ("4", 4.0, ["--weight-classifier", "5"], 5.0),
    "decoder": ("false", False, ["--decoder"], True),
    "hidden": ("8,8", "8,8", ["--hidden", "16"], "16"),
    "batch_size": ("64", 64, ["--batch-size", "32"], 32),
    "learning_rate": ("0.01", 0.01, ["--learning-rate", "0.02"], 0.02),
    "n_samples": ("100", 100, ["--n-samples", "200"], 200),
    "n_labeled": ("2", 2, ["--n-labeled", "3"], 3),
    "n_test": ("50", 50, ["--n-test", "60"], 60),
    "format": ("csv", "csv", ["--format", "f64le-binary"], "f64le-binary"),
}


def test_precedence_table_covers_every_field():
    from dataclasses import fields

    assert set(PRECEDENCE) == {f.name for f in fields(RunConfig)} - {"command"}


@pytest.mark.parametrize("name", sorted(PRECEDENCE))
def test_precedence_defaults_file_flags(tmp_path, name):
    file_text, file_value, flag, flag_value = PRECEDENCE[name]
    default = getattr(RunConfig(), name)
    assert getattr(resolve_config(["fit"]), name) == default
    cfg_path = tmp_path / "run.cfg"
    cfg_path.write_text(f"# comment\n{name} = {file_text}\n")
    assert getattr(resolve_config(["fit", "--config", str(cfg_path)]), name) == file_value
    assert getattr(resolve_config(["fit", "--config", str(cfg_path), *flag]), name) == flag_value
    assert file_value != flag_value


def test_documented_defaults():
    cfg = resolve_config(["fit"])
    assert (cfg.n_neighbors, cfg.min_dist, cfg.dim, cfg.threads) == (15, 0.1, 2, 1)


def run_cli(capsys, *argv):
    code = main(list(argv))
    err = capsys.readouterr().err.strip()
    return code, err


@pytest.mark.parametrize(
    "argv, code, reason",
    [
        (["fit", "--n-neighbors", "1", "--input", "builtin:moons"], 2, "config-error"),
        (["fit", "--min-dist", "-1", "--input", "builtin:moons"], 2, "config-error"),
        (["fit", "--dim", "0", "--input", "builtin:moons"], 2, "config-error"),
        (["fit"], 2, "config-error"),
        (["transform", "--input", "builtin:moons"], 2, "missing-model"),
        (["transform", "--input", "builtin:moons", "--model", "nope.bin"], 2, "missing-model"),
        (["fit", "--input", "does-not-exist.csv"], 3, "data-error"),
        (["fit", "--input", "builtin:nothing"], 2, "config-error"),
    ],
)
def test_exit_codes(capsys, tmp_path, argv, code, reason):
    got, err = run_cli(capsys, *argv, "--output", str(tmp_path))
    assert got == code
    assert err.startswith(f"pumap-error: {reason}: ")
    assert "\n" not in err


def test_unknown_config_key(capsys, tmp_path):
    cfg = tmp_path / "bad.cfg"
    cfg.write_text("neighbours = 3\n")
    code, err = run_cli(capsys, "fit", "--config", str(cfg))
    assert code == 2 and "unknown key" in err


def test_bad_data_exit_code(capsys, tmp_path):
    p = tmp_path / "d.csv"
    p.write_text("1,2\n3\n")
    assert run_cli(capsys, "fit", "--input", str(p), "--output", str(tmp_path))[0] == 3


def test_numeric_failure_exit_code(capsys, tmp_path):
    p = tmp_path / "d.csv"
    save_dataset(p, np.array([[1e300, 0.0], [-1e300, 1.0], [0.0, 2.0], [5.0, 3.0]] * 10))
    code, err = run_cli(
        capsys, "fit-parametric", "--input", str(p), "--n-neighbors", "3", "--epochs", "2", "--output", str(tmp_path)
    )
    assert code == 4 and err.startswith("pumap-error: numeric-failure: ")


def test_metrics_identity_embedding(capsys, tmp_path):
    x = np.random.default_rng(0).normal(size=(60, 3))
    save_dataset(tmp_path / "d.csv", x)
    from pumap.io import write_embedding_csv

    write_embedding_csv(tmp_path / "e.csv", x)
    code = main(["metrics", "--input", str(tmp_path / "d.csv"), "--embedding", str(tmp_path / "e.csv"), "--output", str(tmp_path)])
    assert code == 0
    report = json.loads((tmp_path / "metrics.json").read_text())
    assert report["trustworthiness"] == 1.0
    assert "trust" in capsys.readouterr().out.splitlines()[0]


def test_parametric_pipeline_round_trip(tmp_path):
    fit_dir, tr_dir, inv_dir = tmp_path / "fit", tmp_path / "tr", tmp_path / "inv"
    common = ["--input", "builtin:moons", "--epochs", "2", "--hidden", "16,16"]
    assert main(["fit-parametric", *common, "--decoder", "--output", str(fit_dir)]) == 0
    assert (fit_dir / "model.bin.json").exists()
    assert main(["transform", "--input", "builtin:moons", "--model", str(fit_dir / "model.bin"), "--output", str(tr_dir)]) == 0
    assert (fit_dir / "embedding.csv").read_bytes() == (tr_dir / "embedding.csv").read_bytes()
    assert main(["inverse", "--input", str(tr_dir / "embedding.csv"), "--model", str(fit_dir / "model.bin"), "--output", str(inv_dir)]) == 0
    recon = read_csv_matrix(inv_dir / "reconstruction.csv")[1]
    assert recon.shape == (1000, 2)
    header, loss = read_csv_matrix(fit_dir / "loss.csv")
    assert header[0] == "epoch" and np.all(np.diff(loss[:, 0]) > 0)
    assert read_csv_matrix(fit_dir / "plot.csv")[0] == ["x", "y", "label"]


def test_inverse_without_decoder_is_config_error(capsys, tmp_path):
    assert main(["fit-parametric", "--input", "builtin:moons", "--epochs", "1", "--hidden", "8", "--output", str(tmp_path)]) == 0
    code, err = run_cli(
        capsys, "inverse", "--input", str(tmp_path / "embedding.csv"), "--model", str(tmp_path / "model.bin"), "--output", str(tmp_path)
    )
    assert code == 2 and "decoder" in err


def test_ssl_train_outputs(tmp_path):
    assert main(["ssl-train", "--input", "builtin:moons", "--n-labeled", "2", "--epochs", "3", "--hidden", "32", "--output", str(tmp_path)]) == 0
    report = json.loads((tmp_path / "ssl_report.json").read_text())
    assert report["n_labeled"] == 4
    assert report["train_accuracy"] == 1.0
    header, pred = read_csv_matrix(tmp_path / "predictions.csv")
    assert header == ["prediction"] and pred.shape == (1000, 1)


def test_ssl_train_without_labels(capsys, tmp_path):
    save_dataset(tmp_path / "d.csv", np.random.default_rng(0).normal(size=(40, 2)))
    code, _ = run_cli(capsys, "ssl-train", "--input", str(tmp_path / "d.csv"), "--output", str(tmp_path))
    assert code == 2


def test_benchmark_timing_file(tmp_path):
    assert main(["benchmark", "--n-samples", "300", "--n-test", "200", "--epochs", "1", "--hidden", "16", "--output", str(tmp_path)]) == 0
    rows = (tmp_path / "timing.csv").read_text().splitlines()
    assert rows[0] == "stage,rows,seconds"
    stages = [r.split(",")[0] for r in rows[1:]]
    assert stages == ["parametric_train", "parametric_transform", "nonparametric_refit", "speedup"]


def test_log_level_from_environment(monkeypatch, caplog, tmp_path):
    monkeypatch.setenv("PUMAP_LOG", "info")
    assert main(["fit", "--input", "builtin:moons", "--epochs", "5", "--output", str(tmp_path)]) == 0
    assert any("loaded builtin:moons" in r.getMessage() for r in caplog.records)
    caplog.clear()
    monkeypatch.setenv("PUMAP_LOG", "error")
    assert main(["fit", "--input", "builtin:moons", "--epochs", "5", "--output", str(tmp_path)]) == 0
    assert not [r for r in caplog.records if r.levelno < logging.ERROR]
