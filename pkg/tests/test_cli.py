import json

import pytest

from geoctx.cli import EXIT_OK, EXIT_USAGE, main


def run(*argv):
    return main(list(argv))


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """synth + 1-epoch pretrain on a quarter-size city, shared by CLI tests."""
    root = tmp_path_factory.mktemp("cli")
    city = root / "city"
    assert run("synth", "--out", str(city), "--seed", "1", "--set", "extent=500.0") == EXIT_OK
    train_dir = root / "run"
    assert run("pretrain", "--data", str(city / "city.jsonl"), "--out", str(train_dir),
               "--seed", "1", "--set", "epochs=1",
               "--set", "window_stride=500.0") == EXIT_OK
    return root


class TestUsageErrors:
    def test_unknown_verb_exits_2(self, capsys):
        assert run("frobnicate") == EXIT_USAGE
        capsys.readouterr()

    def test_no_verb_exits_2(self, capsys):
        assert run() == EXIT_USAGE
        capsys.readouterr()

    def test_missing_file_exits_2(self, tmp_path):
        assert run("pretrain", "--data", str(tmp_path / "nope.jsonl"),
                   "--out", str(tmp_path / "o")) == EXIT_USAGE

    def test_unknown_config_key_exits_2(self, tmp_path):
        assert run("synth", "--out", str(tmp_path / "c"),
                   "--set", "bogus_key=1") == EXIT_USAGE

    def test_bad_set_syntax_exits_2(self, tmp_path):
        assert run("synth", "--out", str(tmp_path / "c"), "--set", "oops") == EXIT_USAGE


class TestSynth:
    def test_artifacts_and_determinism(self, tmp_path):
        out1, out2 = tmp_path / "a", tmp_path / "b"
        assert run("synth", "--out", str(out1), "--seed", "3") == EXIT_OK
        assert run("synth", "--out", str(out2), "--seed", "3") == EXIT_OK
        assert (out1 / "city.jsonl").read_bytes() == (out2 / "city.jsonl").read_bytes()
        assert (out1 / "labels.jsonl").exists()
        echo = json.loads((out1 / "synth_config.json").read_text())
        assert echo["city"]["seed"] == 3


class TestPretrain:
    def test_outputs(self, workspace):
        run_dir = workspace / "run"
        assert (run_dir / "checkpoint.json").exists()
        assert (run_dir / "train_log.jsonl").exists()
        entry = json.loads((run_dir / "train_log.jsonl").read_text().splitlines()[0])
        assert {"epoch", "l_total", "lr", "grad_norm"} <= set(entry)
        doc = json.loads((run_dir / "checkpoint.json").read_text())
        assert doc["config"]["epochs"] == 1
        assert "codebook" in doc["seeds"]

    def test_config_file_plus_override(self, workspace, tmp_path):
        cfg_path = tmp_path / "cfg.json"
        cfg_path.write_text(json.dumps({"epochs": 1, "loss": {"alpha_rsr": 5.0}}))
        out = tmp_path / "run2"
        code = run("pretrain", "--data", str(workspace / "city" / "city.jsonl"),
                   "--out", str(out), "--config", str(cfg_path), "--seed", "1",
                   "--set", "window_stride=500.0", "--set", "loss.alpha_acc=0.5")
        assert code == EXIT_OK
        doc = json.loads((out / "checkpoint.json").read_text())
        assert doc["config"]["loss"]["alpha_rsr"] == 5.0
        assert doc["config"]["loss"]["alpha_acc"] == 0.5


class TestEmbedAndProbes:
    def test_embed(self, workspace, tmp_path):
        out = tmp_path / "emb.jsonl"
        ck = workspace / "run" / "checkpoint.json"
        data = workspace / "city" / "city.jsonl"
        labels = json.loads((workspace / "city" / "labels.jsonl").read_text().splitlines()[0])
        some_id = labels["id"]
        assert run("embed", "--checkpoint", str(ck), "--data", str(data),
                   "--out", str(out), "--ids", str(some_id)) == EXIT_OK
        rec = json.loads(out.read_text().splitlines()[0])
        assert rec["id"] == some_id and len(rec["h_fused"]) == 32

    def test_embed_unknown_id_exits_2(self, workspace, tmp_path):
        code = run("embed", "--checkpoint", str(workspace / "run" / "checkpoint.json"),
                   "--data", str(workspace / "city" / "city.jsonl"),
                   "--out", str(tmp_path / "x.jsonl"), "--ids", "999999")
        assert code == EXIT_USAGE

    def test_probe_classify(self, workspace, tmp_path):
        out = tmp_path / "zone.json"
        code = run("probe-classify",
                   "--checkpoint", str(workspace / "run" / "checkpoint.json"),
                   "--data", str(workspace / "city" / "city.jsonl"),
                   "--labels", str(workspace / "city" / "labels.jsonl"),
                   "--out", str(out), "--seed", "0")
        assert code == EXIT_OK
        report = json.loads(out.read_text())
        assert {"macro_f1", "weighted_f1", "accuracy"} <= set(report["metrics"])
        assert report["train_config"]["epochs"] == 1

    def test_probe_regress(self, workspace, tmp_path):
        out = tmp_path / "speed.json"
        code = run("probe-regress",
                   "--checkpoint", str(workspace / "run" / "checkpoint.json"),
                   "--data", str(workspace / "city" / "city.jsonl"),
                   "--labels", str(workspace / "city" / "labels.jsonl"),
                   "--out", str(out), "--seed", "0", "--neighbor-mean")
        assert code == EXIT_OK
        report = json.loads(out.read_text())
        assert {"rmse", "mae", "r2", "mape"} <= set(report["metrics"])


class TestChecks:
    def test_gradcheck_passes(self, capsys):
        assert run("gradcheck", "--seed", "0", "--windows", "2") == EXIT_OK
        out = capsys.readouterr().out
        assert "joint" in out and "PASS" in out

    def test_relcheck_passes(self, capsys):
        assert run("relcheck", "--seed", "0", "--pairs", "60") == EXIT_OK
        report = json.loads(capsys.readouterr().out.splitlines()[0])
        assert report["checked"] == 60 and report["mismatches"] == 0
