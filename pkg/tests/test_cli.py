import json
import re
import subprocess
import sys
import time

import pytest

from relnet.cli import main

SMALL = ["--num-series", "150", "--horizon-days", "400", "--seed", "2"]
TINY_MODEL = [
    "--encoder-depth", "2", "--encoder-width", "16", "--repr-dim", "8",
    "--relation-width", "8", "--aggregate-width", "8", "--head-width", "8",
    "--n-related", "2", "--split-day", "300", "--batch-size", "16",
]


@pytest.fixture(scope="module")
def market(tmp_path_factory):
    path = tmp_path_factory.mktemp("cli") / "market.jsonl"
    assert main(["generate", *SMALL, "--out", str(path)]) == 0
    return path


@pytest.fixture(scope="module")
def trained(market, tmp_path_factory):
    ckpt = tmp_path_factory.mktemp("ckpt") / "model.json"
    code = main(["train", "--dataset", str(market), "--checkpoint", str(ckpt), "--epochs", "2", *TINY_MODEL])
    assert code == 0
    return ckpt


def printed_r2(text):
    return float(re.search(r"test R\^2 (-?[0-9.]+)", text).group(1))


class TestGenerate:
    def test_byte_identical(self, tmp_path, capsys):
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert main(["generate", *SMALL, "--out", str(a)]) == 0
        assert main(["generate", *SMALL, "--out", str(b)]) == 0
        assert a.read_bytes() == b.read_bytes()
        assert "log view count mean" in capsys.readouterr().out

    def test_zero_series(self, tmp_path, capsys):
        assert main(["generate", "--num-series", "0", "--out", str(tmp_path / "x")]) == 2
        assert "num_series" in capsys.readouterr().err

    def test_bad_value(self, tmp_path):
        assert main(["generate", "--num-series", "many", "--out", str(tmp_path / "x")]) == 2

    def test_unwritable(self, tmp_path):
        assert main(["generate", *SMALL, "--out", str(tmp_path / "missing" / "dir" / "x")]) == 3


class TestTrainEval:
    def test_missing_dataset(self, tmp_path):
        assert main(["train", "--dataset", str(tmp_path / "nope.jsonl")]) == 3

    def test_rn_without_related(self, market, tmp_path, capsys):
        code = main(["train", "--dataset", str(market), "--variant", "dnn_rn_mtl", "--n-related", "0",
                     "--checkpoint", str(tmp_path / "m.json")])
        assert code == 2
        assert "n_related" in capsys.readouterr().err

    def test_train_fast_and_eval_agrees(self, market, tmp_path, capsys):
        ckpt = tmp_path / "m.json"
        start = time.perf_counter()
        assert main(["train", "--dataset", str(market), "--checkpoint", str(ckpt), "--epochs", "1", *TINY_MODEL]) == 0
        assert time.perf_counter() - start < 60
        train_r2 = printed_r2(capsys.readouterr().out)
        report = json.loads((tmp_path / "m.json.report.json").read_text())
        assert report["eval"]["r_squared"] == pytest.approx(train_r2, abs=1e-6)
        assert main(["eval", "--dataset", str(market), "--checkpoint", str(ckpt)]) == 0
        assert printed_r2(capsys.readouterr().out) == train_r2

    def test_corrupt_checkpoint(self, market, trained, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(trained.read_text()[:-100])
        assert main(["eval", "--dataset", str(market), "--checkpoint", str(bad)]) == 3

    def test_split_day_changes_test_size(self, market, trained, tmp_path):
        sizes = []
        for day in ("250", "330"):
            out = tmp_path / f"e{day}.json"
            assert main(["eval", "--dataset", str(market), "--checkpoint", str(trained),
                         "--split-day", day, "--out", str(out)]) == 0
            sizes.append(json.loads(out.read_text())["eval"]["n_samples"])
        assert sizes[0] > sizes[1]

    def test_width_mismatch(self, trained, tmp_path):
        other = tmp_path / "other.jsonl"
        assert main(["generate", *SMALL, "--genre-cardinality", "7", "--out", str(other)]) == 0
        assert main(["eval", "--dataset", str(other), "--checkpoint", str(trained)]) == 2

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_exit(self, market, tmp_path):
        code = main(["train", "--dataset", str(market), "--checkpoint", str(tmp_path / "m.json"),
                     "--epochs", "30", "--learning-rate", "100", *TINY_MODEL])
        assert code == 4
        assert json.loads((tmp_path / "m.json.report.json").read_text())["train"]["diverged"]
        assert not (tmp_path / "m.json").exists()


class TestGradcheck:
    def test_default_passes(self, capsys):
        assert main(["gradcheck"]) == 0
        out = capsys.readouterr().out
        assert "FAIL" not in out and "model[all_pairs]" in out

    def test_zero_tolerance_fails(self, capsys):
        assert main(["gradcheck", "--tolerance", "0"]) == 5
        assert "worst parameter" in capsys.readouterr().err

    def test_single_layer(self, capsys):
        assert main(["gradcheck", "--layer", "batchnorm"]) == 0
        lines = [l for l in capsys.readouterr().out.splitlines() if l.startswith(("pass", "FAIL"))]
        assert len(lines) == 1 and "batchnorm" in lines[0]

    def test_unknown_layer(self):
        assert main(["gradcheck", "--layer", "conv"]) == 2


class TestConfigFile:
    def test_precedence(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("# market\nnum_series = 40\nhorizon_days = 200\nseed = 9\n")
        a, b = tmp_path / "a.jsonl", tmp_path / "b.jsonl"
        assert main(["generate", "--config", str(cfg), "--out", str(a)]) == 0
        assert main(["generate", "--config", str(cfg), "--num-series", "30", "--out", str(b)]) == 0
        assert len(a.read_text().splitlines()) == 41
        assert len(b.read_text().splitlines()) == 31

    def test_unknown_key(self, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("num_serie = 40\n")
        assert main(["generate", "--config", str(cfg), "--out", str(tmp_path / "x")]) == 2

    def test_missing_file(self, tmp_path):
        assert main(["generate", "--config", str(tmp_path / "none.cfg")]) == 3


class TestAblate:
    def test_grid(self, market, tmp_path, capsys):
        out = tmp_path / "abl.json"
        code = main(["ablate", "--dataset", str(market), "--seeds", "0,1", "--offsets", "7,30",
                     "--epochs", "1", "--out", str(out), *TINY_MODEL])
        assert code == 0
        doc = json.loads(out.read_text())
        assert len(doc["cells"]) == 2 * 2 * 3
        assert set(doc["summary"]) == {"7", "30"}
        table = capsys.readouterr().out
        assert table == out.with_suffix(".txt").read_text()
        assert "30 days" in table and "DNN+RN+MTL" in table

    def test_rejects_no_related(self, market, tmp_path):
        assert main(["ablate", "--dataset", str(market), "--n-related", "0", "--out", str(tmp_path / "a.json")]) == 2


def test_console_entry_point(tmp_path):
    proc = subprocess.run(
        [sys.executable, "-m", "relnet.cli", "generate", "--num-series", "10", "--out", str(tmp_path / "m.jsonl")],
        capture_output=True, text=True, timeout=120,
    )
    assert proc.returncode == 0, proc.stderr
    proc = subprocess.run([sys.executable, "-m", "relnet.cli", "frobnicate"], capture_output=True, text=True)
    assert proc.returncode == 2
