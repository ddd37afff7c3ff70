import json

import pytest

from sgld_privacy.cli import main
from sgld_privacy.errors import SgldPrivacyError
from sgld_privacy.experiment import MetricsRecord, emit, read_records
from sgld_privacy.privacy import read_mpl_reports

FAST = ["--set", "dataset.source=synthetic", "--set", "dataset.n_per_class=60",
        "--set", "split.train=50", "--set", "split.holdout=20", "--set", "split.test=50",
        "--set", "model.hidden=[8]", "--set", "optimizer.epochs=3"]


class TestVerbs:
    def test_train_then_attack_from_snapshots(self, tmp_path, capsys):
        assert main(["train", *FAST, "--strategy", "sgld", "--out", str(tmp_path / "run")]) == 0
        assert (tmp_path / "run" / "snapshots.bin").exists()
        assert main(["attack", *FAST, "--strategy", "sgld", "--snapshots",
                     str(tmp_path / "run" / "snapshots.bin"), "--out", str(tmp_path / "atk")]) == 0
        from_snapshots = read_records(tmp_path / "atk" / "metrics.csv")[0]
        assert main(["attack", *FAST, "--strategy", "sgld", "--out", str(tmp_path / "direct")]) == 0
        direct = read_records(tmp_path / "direct" / "metrics.csv")[0]
        assert from_snapshots.without_runtime() == direct.without_runtime()
        assert "AUC" in capsys.readouterr().out

    def test_compare_with_seeds(self, tmp_path, capsys):
        out = tmp_path / "cmp"
        assert main(["compare", *FAST, "--strategies", "sgd,sgld", "--seeds", "0,1", "--out", str(out)]) == 0
        rows = read_records(out / "metrics.csv")
        assert [r.strategy for r in rows] == ["sgd", "sgld"]
        assert len(read_records(out / "metrics_per_seed.csv")) == 4
        assert json.loads((out / "manifest.json").read_text())["master_seeds"] == [0, 1]

    def test_audit(self, tmp_path, capsys):
        assert main(["audit", *FAST, "--strategy", "sgld_ensemble", "--out", str(tmp_path)]) == 0
        reports = read_mpl_reports(tmp_path / "mpl_reports.csv")
        assert len(reports) == 100
        assert all(r.mpl <= r.bound + 1e-12 for r in reports)
        assert "bound violations 0" in capsys.readouterr().out

    def test_validate_schedule(self, capsys):
        assert main(["validate-schedule", "--kind", "constant", "--lr", "0.01", "--horizon", "50"]) == 0
        report = json.loads(capsys.readouterr().out)
        assert report["constant"] and report["total"] == pytest.approx(0.5)

    def test_seed_bundle_deterministic(self, tmp_path):
        for name in ("a", "b"):
            assert main(["attack", *FAST, "--seed-bundle", "3", "--out", str(tmp_path / name)]) == 0
        a = read_records(tmp_path / "a" / "metrics.csv")[0]
        b = read_records(tmp_path / "b" / "metrics.csv")[0]
        assert a.without_runtime() == b.without_runtime()

    def test_config_file(self, tmp_path):
        cfg = tmp_path / "c.yaml"
        cfg.write_text("strategy: sgd\ndataset:\n  source: synthetic\n  n_per_class: 40\n"
                       "split: {train: 30, holdout: 10, test: 30}\nmodel: {hidden: [4]}\n"
                       "optimizer: {epochs: 2}\n")
        assert main(["train", "--config", str(cfg)]) == 0


class TestExitCodes:
    def test_config_error(self, capsys):
        assert main(["train", "--set", "optimizer.lr=-1"]) == 3
        assert "error:" in capsys.readouterr().err

    def test_unknown_strategy_list(self):
        assert main(["compare", *FAST, "--strategies", "sgd,adam"]) == 3

    def test_parse_error(self, tmp_path):
        (tmp_path / "d.csv").write_text("1,0\n2\n")
        (tmp_path / "s.yaml").write_text("label_column: 1\n")
        assert main(["train", "--set", "dataset.source=csv", "--set", f"dataset.path={tmp_path / 'd.csv'}",
                     "--set", f"dataset.schema={tmp_path / 's.yaml'}"]) == 4

    def test_snapshot_parse_error(self, tmp_path):
        (tmp_path / "bad.bin").write_bytes(b"garbage")
        assert main(["attack", *FAST, "--snapshots", str(tmp_path / "bad.bin")]) == 4

    def test_numeric_error(self):
        assert main(["train", *FAST, "--strategy", "sgd", "--set", "optimizer.lr=1e300"]) == 5

    def test_schedule_error(self):
        assert main(["validate-schedule", "--horizon", "1"]) == 3

    def test_usage_error(self):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2


def test_emit_unwritable_path(tmp_path):
    (tmp_path / "file").write_text("")
    with pytest.raises(SgldPrivacyError):
        emit([MetricsRecord("sgd", 0, 0, 0, 0, 0, 0)], tmp_path / "file" / "m.csv")
