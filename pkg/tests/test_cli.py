import csv
import hashlib
import json

import pytest

from rapnid.cli import main


def run(capsys, *argv):
    code = main(list(argv))
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def workdir(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--k", "4", "--n", "30", "--d", "6", "--sep", "10", "--labeled-frac", "0.3",
                 "--known-frac", "0.75", "--seed", "2", "--test-frac", "0.2", "-o", str(d / "data.jsonl")]) == 0
    (d / "run.cfg").write_text("# tiny run\nepochs = 3\nwarmup_epochs = 2\nembed_dim = 8\nomega = 1.5\n")
    assert main(["train", "--data", str(d / "data.jsonl"), "--config", str(d / "run.cfg"),
                 "--out", str(d / "run")]) == 0
    return d


def test_synth_counts_and_determinism(tmp_path, capsys):
    args = ["synth", "--k", "20", "--n", "100", "--d", "16", "--sep", "6", "--sigma", "1",
            "--labeled-frac", "0.1", "--known-frac", "0.75", "--seed", "1"]
    assert run(capsys, *args, "-o", str(tmp_path / "a.jsonl"))[0] == 0
    assert run(capsys, *args, "-o", str(tmp_path / "b.jsonl"))[0] == 0
    lines = (tmp_path / "a.jsonl").read_text().splitlines()
    assert len(lines) == 2001
    assert len(json.loads(lines[0])["task"]["known_classes"]) == 15
    digest = lambda p: hashlib.sha256(p.read_bytes()).hexdigest()
    assert digest(tmp_path / "a.jsonl") == digest(tmp_path / "b.jsonl")


def test_synth_missing_output_is_usage_error(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["synth", "--k", "2", "--n", "3", "--d", "2"])
    assert exc.value.code != 0


def test_train_artifacts(workdir):
    run = workdir / "run"
    assert (run / "ckpt").exists()
    rows = list(csv.DictReader((run / "epochs.csv").open()))
    assert list(rows[0]) == ["epoch", "L_all", "L_r", "L_a", "L_ce", "val_nmi", "within", "between"]
    assert len(rows) == 3
    manifest = json.loads((run / "manifest.json").read_text())
    assert manifest["config"]["omega"] == 1.5 and manifest["seed"] == 0
    assert len(manifest["dataset"]["sha256"]) == 64
    assert set(manifest["artifacts"]) >= {"checkpoint", "epoch_log"}
    assert 0 <= manifest["metrics"]["nmi"] <= 1


def test_flag_overrides_config_file(workdir, capsys):
    out = workdir / "run0"
    code, _, _ = run(capsys, "train", "--data", str(workdir / "data.jsonl"), "--config",
                     str(workdir / "run.cfg"), "--out", str(out), "--omega", "0")
    assert code == 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["config"]["omega"] == 0.0 and manifest["config"]["epochs"] == 3
    for row in csv.DictReader((out / "epochs.csv").open()):
        assert abs(float(row["L_all"]) - float(row["L_a"]) - float(row["L_ce"])) < 1e-9


def test_invalid_config_key(workdir, capsys):
    (workdir / "bad.cfg").write_text("learning_rat = 0.1\n")
    code, _, err = run(capsys, "train", "--data", str(workdir / "data.jsonl"), "--config",
                       str(workdir / "bad.cfg"), "--out", str(workdir / "bad"))
    assert code != 0 and "learning_rat" in err and len(err.strip().splitlines()) == 1


def test_eval_prints_metrics_and_dumps(workdir, capsys):
    dump = workdir / "emb.csv"
    code, out, _ = run(capsys, "eval", "--data", str(workdir / "data.jsonl"), "--ckpt",
                       str(workdir / "run" / "ckpt"), "--dump-embeddings", str(dump))
    assert code == 0
    for word in ("NMI", "ARI", "ACC", "within", "between"):
        assert word in out
    report = json.loads(out.strip().splitlines()[-1])
    assert report["split"] == "test" and report["n"] == 24
    rows = list(csv.reader(dump.open()))
    assert rows[0][0] == "id" and rows[0][-2:] == ["cluster", "eval_label"]
    assert len(rows[0]) == 1 + 8 + 2 and len(rows) == 25
    assert all(r[-1] for r in rows[1:])


def test_eval_dimension_mismatch(workdir, capsys):
    assert main(["synth", "--k", "3", "--n", "5", "--d", "4", "-o", str(workdir / "d4.jsonl")]) == 0
    code, _, err = run(capsys, "eval", "--data", str(workdir / "d4.jsonl"), "--ckpt", str(workdir / "run"))
    assert code != 0 and "dim" in err


def test_estimate_k(workdir, capsys):
    code, out, _ = run(capsys, "estimate-k", "--data", str(workdir / "data.jsonl"), "--ckpt",
                       str(workdir / "run" / "ckpt"), "--k-init", "2x")
    assert code == 0 and "estimated K" in out and "error" in out
    code, out, _ = run(capsys, "estimate-k", "--data", str(workdir / "data.jsonl"), "--k-init", "8",
                       "--drop-ratio", "0.5")
    assert code == 0 and out.startswith("estimated K = 4")
    code, _, err = run(capsys, "estimate-k", "--data", str(workdir / "data.jsonl"), "--drop-ratio", "2")
    assert code != 0 and "drop_ratio" in err


def test_rap_log_levels(workdir, capsys, monkeypatch):
    monkeypatch.setenv("RAP_LOG", "loud")
    code, _, err = run(capsys, "estimate-k", "--data", str(workdir / "data.jsonl"))
    assert code != 0 and "RAP_LOG" in err


def test_missing_data_file(tmp_path, capsys):
    code, _, err = run(capsys, "eval", "--data", str(tmp_path / "x.jsonl"), "--ckpt", str(tmp_path))
    assert code != 0 and err.count("\n") == 1
