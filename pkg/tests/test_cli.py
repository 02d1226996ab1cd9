import csv
import io
import json
import shutil
import struct
import subprocess
import sys

import numpy as np
import pytest

from confidence_nets.cli import PREDICT_COLUMNS, main

from conftest import FIXTURE20

FAST = ["--epochs", "40", "--n-trees", "30", "--hidden-units", "16", "--conv-channels", "4"]


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


@pytest.fixture(scope="module")
def trained_default(tmp_path_factory):
    out = tmp_path_factory.mktemp("default")
    assert main(["train", "--dataset", str(FIXTURE20), "--target", "y", "--out", str(out)]) == 0
    return out / "model.cnet"


@pytest.fixture
def model(tmp_path, capsys):
    code, _, _ = run(capsys, "train", "--dataset", FIXTURE20, "--target", "y", "--out", tmp_path, *FAST)
    assert code == 0
    return tmp_path / "model.cnet"


def read_csv(text):
    return list(csv.DictReader(io.StringIO(text)))


class TestTrain:
    def test_writes_model_and_reports(self, tmp_path, capsys):
        code, out, _ = run(capsys, "train", "--dataset", FIXTURE20, "--target", "y", "--out", tmp_path, *FAST)
        assert code == 0
        assert (tmp_path / "model.cnet").is_file()
        assert "l_n:" in out and "omega:" in out and "train rows: 18" in out

    def test_identical_bytes_across_runs(self, tmp_path, capsys):
        for d in ("a", "b"):
            assert run(capsys, "train", "--dataset", FIXTURE20, "--target", "y", "--out", tmp_path / d, *FAST)[0] == 0
        assert (tmp_path / "a" / "model.cnet").read_bytes() == (tmp_path / "b" / "model.cnet").read_bytes()

    def test_seed_changes_model(self, tmp_path, capsys):
        run(capsys, "train", "--dataset", FIXTURE20, "--target", "y", "--out", tmp_path / "a", *FAST)
        run(capsys, "train", "--dataset", FIXTURE20, "--target", "y", "--out", tmp_path / "b", "--seed", "3", *FAST)
        assert (tmp_path / "a" / "model.cnet").read_bytes() != (tmp_path / "b" / "model.cnet").read_bytes()

    def test_missing_dataset(self, tmp_path, capsys):
        missing = tmp_path / "absent.csv"
        code, _, err = run(capsys, "train", "--dataset", missing, "--out", tmp_path)
        assert code == 2 and str(missing) in err

    def test_unknown_target(self, tmp_path, capsys):
        code, _, err = run(capsys, "train", "--dataset", FIXTURE20, "--target", "zz", "--out", tmp_path)
        assert code == 2 and "zz" in err

    def test_config_file_and_precedence(self, tmp_path, capsys):
        cfg = tmp_path / "run.cfg"
        cfg.write_text(f"dataset={FIXTURE20}\ntarget=y\nepochs=7\nn_trees=3\nhidden_units=4\nconv_channels=2\n")
        code, _, _ = run(capsys, "train", "--config", cfg, "--out", tmp_path, "--n-trees", "5")
        assert code == 0
        code, out, _ = run(capsys, "inspect", tmp_path / "model.cnet")
        assert "config.epochs=7" in out and "config.n_trees=5" in out and "n_trees=5 " in out

    def test_bad_config_value(self, tmp_path, capsys):
        code, _, err = run(capsys, "train", "--dataset", FIXTURE20, "--epochs", "many", "--out", tmp_path)
        assert code == 2 and "epochs" in err

    def test_manifest(self, tmp_path, capsys):
        shutil.copy(FIXTURE20, tmp_path / "fx.csv")
        (tmp_path / "fx.manifest").write_text("name=fx\npath=fx.csv\ntarget=y\n")
        code, out, _ = run(capsys, "train", "--dataset", tmp_path / "fx.manifest", "--out", tmp_path, *FAST)
        assert code == 0 and "dataset: fx" in out


class TestPredict:
    def test_training_rows_are_memorized(self, model, tmp_path, capsys):
        # with the default 0.9 split and full memory, rows in the training split have d_e == 0
        code, out, _ = run(capsys, "predict", model, FIXTURE20)
        assert code == 0
        rows = read_csv(out)
        assert list(rows[0]) == PREDICT_COLUMNS and len(rows) == 20
        assert sum(float(r["d_e"]) == 0.0 for r in rows) == 18
        for r in rows:
            assert float(r["lower"]) <= float(r["y_f"]) <= float(r["upper"])
            assert float(r["half_width"]) >= 0

    def test_output_file(self, model, tmp_path, capsys):
        code, out, _ = run(capsys, "predict", model, FIXTURE20, "-o", tmp_path / "p.csv")
        assert code == 0 and out == ""
        assert len(read_csv((tmp_path / "p.csv").read_text())) == 20

    def test_column_order_free_and_target_optional(self, model, tmp_path, capsys):
        (tmp_path / "in.csv").write_text("x3,x1,x2\n0.5,0.1,0.2\n")
        (tmp_path / "ref.csv").write_text("x1,x2,x3\n0.1,0.2,0.5\n")
        a = run(capsys, "predict", model, tmp_path / "in.csv")[1]
        b = run(capsys, "predict", model, tmp_path / "ref.csv")[1]
        assert a == b and len(read_csv(a)) == 1

    def test_header_only(self, model, tmp_path, capsys):
        (tmp_path / "empty.csv").write_text("x1,x2,x3\n")
        code, out, _ = run(capsys, "predict", model, tmp_path / "empty.csv")
        assert code == 0 and out == ",".join(PREDICT_COLUMNS) + "\n"

    def test_unexpected_column(self, model, tmp_path, capsys):
        (tmp_path / "bad.csv").write_text("x1,x2,x3,x4\n1,2,3,4\n")
        code, _, err = run(capsys, "predict", model, tmp_path / "bad.csv")
        assert code == 2 and "x4" in err

    def test_missing_column(self, model, tmp_path, capsys):
        (tmp_path / "bad.csv").write_text("x1,x2\n1,2\n")
        code, _, err = run(capsys, "predict", model, tmp_path / "bad.csv")
        assert code == 2 and "x3" in err

    def test_bad_model(self, tmp_path, capsys):
        (tmp_path / "junk.cnet").write_bytes(b"not a model")
        code, _, err = run(capsys, "predict", tmp_path / "junk.cnet", FIXTURE20)
        assert code == 2 and "corrupt" in err


class TestEvaluate:
    ARGS = ["--fractions", "0.7,0.5", "--seeds", "0", *FAST]

    def test_outputs(self, tmp_path, capsys):
        code, _, _ = run(capsys, "evaluate", "--dataset", FIXTURE20, "--target", "y", "--out", tmp_path, *self.ARGS)
        assert code == 0
        summary = read_csv((tmp_path / "summary.csv").read_text())
        assert len(summary) == 2
        for row in summary:
            assert 0 <= float(row["inclusion_rate_confidence"]) <= 1
            assert 0 <= float(row["inclusion_rate_ann"]) <= 1
        assert len(read_csv((tmp_path / "aggregate.csv").read_text())) == 2
        records = sorted(p.name for p in (tmp_path / "records").iterdir())
        assert records == ["fixture20_f0.5_s0.csv", "fixture20_f0.7_s0.csv"]
        assert len(read_csv((tmp_path / "records" / records[0]).read_text())) == 10
        log = json.loads((tmp_path / "run_log.json").read_text())
        assert len(log["cells"]) == 2 and log["config"]["fractions"] == "0.7,0.5"

    def test_rerun_identical(self, tmp_path, capsys):
        for d in ("a", "b"):
            run(capsys, "evaluate", "--dataset", FIXTURE20, "--target", "y", "--out", tmp_path / d, *self.ARGS)
        for name in ("summary.csv", "aggregate.csv", "records/fixture20_f0.7_s0.csv"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_no_seeds(self, tmp_path, capsys):
        code, _, _ = run(capsys, "evaluate", "--dataset", FIXTURE20, "--seeds", "", "--out", tmp_path)
        assert code == 1


class TestInspect:
    def test_defaults(self, trained_default, capsys):
        code, out, _ = run(capsys, "inspect", trained_default)
        assert code == 0
        assert "n_trees=500 " in out and "max_depth=4" in out
        assert "memory rows: 18" in out and "omega:" in out and "l_n:" in out
        assert "conv: W(16, 1, 3)" in out and "hidden1: W(48, 100)" in out
        assert "config.epochs=500" in out

    def test_truncated(self, trained_default, tmp_path, capsys):
        (tmp_path / "t.cnet").write_bytes(trained_default.read_bytes()[:100])
        code, _, err = run(capsys, "inspect", tmp_path / "t.cnet")
        assert code == 2 and "corrupt" in err

    def test_future_version(self, trained_default, tmp_path, capsys):
        data = bytearray(trained_default.read_bytes())
        data[4:8] = struct.pack("<I", 99)
        (tmp_path / "v.cnet").write_bytes(bytes(data))
        code, _, err = run(capsys, "inspect", tmp_path / "v.cnet")
        assert code == 2 and "unsupported version 99" in err


class TestUsage:
    def test_no_command(self, capsys):
        assert run(capsys)[0] == 1

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as exc:
            main(["train", "--bogus"])
        assert exc.value.code == 1

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["fly"])
        assert exc.value.code == 1

    def test_module_entry_point(self, tmp_path):
        proc = subprocess.run([sys.executable, "-m", "confidence_nets", "predict", str(tmp_path / "none.cnet"),
                               str(FIXTURE20)], capture_output=True, text=True)
        assert proc.returncode == 2 and "not found" in proc.stderr
