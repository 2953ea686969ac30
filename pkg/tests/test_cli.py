"""CLI: grammar, exit codes, config overlay, artifact plumbing."""

import json
import os

import pytest

from hdlab import cli, dataset, trainer


def run(argv):
    return cli.run(argv)


def test_parse_mix():
    assert cli.parse_mix("N25+H75") == dataset.MixSpec(25, 75)
    assert cli.parse_mix("H50") == dataset.MixSpec(0, 50)
    assert cli.parse_mix("N50") == dataset.MixSpec(50, 0)
    for bad in ("N-5+H5", "25+75", "N25H75", "", "H"):
        with pytest.raises(cli.UsageError):
            cli.parse_mix(bad)


def test_usage_errors_exit_1(tmp_path, capsys):
    assert run([]) == 1
    assert run(["collect", "--task", "juggling", "--mode", "naive",
                "--episodes", "1", "--out", str(tmp_path)]) == 1
    assert run(["collect", "--task", "teacup", "--mode", "naive",
                "--episodes", "0", "--out", str(tmp_path)]) == 1
    assert run(["collect", "--task", "teacup", "--mode", "naive",
                "--episodes", "1", "--out", str(tmp_path),
                "--spaces", "0"]) == 1
    assert "error" in capsys.readouterr().err


def test_collect_exact_count(tmp_path, capsys):
    out = tmp_path / "d"
    code = run(["collect", "--task", "teacup", "--mode", "hd",
                "--episodes", "2", "--seed", "7", "--out", str(out)])
    assert code == 0
    files = sorted(p for p in os.listdir(out) if p.endswith(".hdse"))
    assert len(files) == 2
    for name in files:
        header = dataset.read_header(str(out / name))
        assert header["mode"] == "hd"


def test_collect_jobs_matches_serial(tmp_path):
    serial = tmp_path / "serial"
    parallel = tmp_path / "parallel"
    for out, jobs in ((serial, "1"), (parallel, "2")):
        assert run(["collect", "--task", "teacup", "--mode", "naive",
                    "--episodes", "2", "--seed", "3", "--out", str(out),
                    "--jobs", jobs]) == 0
    names = sorted(os.listdir(serial))
    assert names == sorted(os.listdir(parallel))
    for n in names:
        assert (serial / n).read_bytes() == (parallel / n).read_bytes()


@pytest.fixture(scope="module")
def cli_artifacts(tmp_path_factory):
    """A tiny corpus, checkpoint and eval JSON produced via the CLI."""
    root = tmp_path_factory.mktemp("cli")
    data = root / "data"
    for mode, extra in (("naive", []), ("hd", [])):
        assert cli.run(["collect", "--task", "teacup", "--mode", mode,
                        "--episodes", "4", "--seed", "0",
                        "--out", str(data)] + extra) == 0
    ckpt = root / "policy.hdcp"
    assert cli.run(["train", "--data", str(data), "--mix", "N2+H2",
                    "--seed", "0", "--steps", "120",
                    "--out", str(ckpt)]) == 0
    report = root / "metrics.json"
    assert cli.run(["eval", "--ckpt", str(ckpt), "--task", "teacup",
                    "--episodes", "3", "--seed", "5",
                    "--json", str(report)]) == 0
    return root, data, ckpt, report


def test_train_writes_manifest(cli_artifacts):
    root, data, ckpt, _ = cli_artifacts
    assert ckpt.exists()
    manifest = json.loads((root / "policy.hdcp.manifest.json").read_text())
    assert len(manifest["episodes"]) == 4
    params = trainer.load_checkpoint(str(ckpt))
    assert params.flat.size == params.config.param_count()


def test_eval_json_output(cli_artifacts):
    _, _, _, report = cli_artifacts
    payload = json.loads(report.read_text())
    assert payload["n"] == 3
    assert set(payload) >= {"n", "sr", "mean_completed", "failures",
                            "mean_steps"}


def test_eval_jobs_matches_serial(cli_artifacts, tmp_path):
    _, _, ckpt, report = cli_artifacts
    out = tmp_path / "metrics2.json"
    assert run(["eval", "--ckpt", str(ckpt), "--task", "teacup",
                "--episodes", "3", "--seed", "5", "--json", str(out),
                "--jobs", "2"]) == 0
    assert json.loads(out.read_text()) == json.loads(report.read_text())


def test_report_outputs(cli_artifacts, tmp_path):
    _, _, _, report = cli_artifacts
    prefix = tmp_path / "cmp"
    assert run(["report", "--inputs", str(report), str(report),
                "--out", str(prefix)]) == 0
    assert (tmp_path / "cmp.md").exists()
    assert (tmp_path / "cmp.csv").exists()


def test_io_errors_exit_2(tmp_path, capsys):
    missing = str(tmp_path / "nope.hdcp")
    assert run(["eval", "--ckpt", missing, "--task", "teacup",
                "--episodes", "1", "--seed", "0"]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert run(["report", "--inputs", str(bad),
                "--out", str(tmp_path / "x")]) == 2
    assert run(["train", "--data", str(tmp_path), "--mix", "N5",
                "--out", str(tmp_path / "p.hdcp")]) == 2
    capsys.readouterr()


def test_config_overlay(cli_artifacts, tmp_path):
    _, _, ckpt, _ = cli_artifacts
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"episodes": 2, "seed": 5}))
    out = tmp_path / "m.json"
    # flags win over the config file: episodes 1 beats the config's 2
    assert run(["eval", "--ckpt", str(ckpt), "--task", "teacup",
                "--episodes", "1", "--json", str(out),
                "--config", str(config)]) == 0
    assert json.loads(out.read_text())["n"] == 1
    # config supplies values for omitted flags
    assert run(["eval", "--ckpt", str(ckpt), "--task", "teacup",
                "--config", str(config), "--json", str(out)]) == 0
    assert json.loads(out.read_text())["n"] == 2


def test_config_unknown_key(cli_artifacts, tmp_path, capsys):
    _, _, ckpt, _ = cli_artifacts
    config = tmp_path / "cfg.json"
    config.write_text(json.dumps({"velocity": 3}))
    assert run(["eval", "--ckpt", str(ckpt), "--task", "teacup",
                "--episodes", "1", "--config", str(config)]) == 1
    assert "unknown config key" in capsys.readouterr().err
