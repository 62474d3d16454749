import json
import subprocess
import sys

import numpy as np
import pytest

from naln import io as nio
from naln.cli import main

TINY = ["--classes", "8", "--embed-dim", "4", "--channels", "4", "--samples", "32",
        "--train-reps", "4", "--test-reps", "1", "--noise", "0.3",
        "--hyper", "temporal_kernel=5", "--hyper", "temporal_filters=2",
        "--hyper", "spatial_filters=3", "--hyper", "pool_width=2"]
FAST = ["--max-epochs", "3", "--patience", "2", "--batch-size", "16", "--learning-rate", "1e-3"]


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    assert main(["synth", "--out", str(root / "data"), "--extra-images", "5", "--recording", *TINY]) == 0
    manifest = str(root / "data" / "manifest.json")
    ck = root / "ck"
    assert main(["train", "--manifest", manifest, "--embeddings", "aligned", "--seeds", "2",
                 "--out", str(ck), *FAST]) == 0
    return root, manifest, ck


class TestExitCodes:
    def test_no_subcommand(self, capsys):
        assert main([]) == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag(self):
        assert main(["synth", "--out", "x", "--bogus"]) == 2

    def test_unknown_subcommand(self):
        assert main(["frobnicate"]) == 2

    def test_help(self, capsys):
        assert main(["evaluate", "--help"]) == 0
        assert "--database" in capsys.readouterr().out

    def test_runtime_error(self, tmp_path, capsys):
        assert main(["train", "--manifest", str(tmp_path / "missing.json")]) == 1
        assert "missing.json" in capsys.readouterr().err

    def test_bad_hyper(self, tmp_path):
        assert main(["synth", "--out", str(tmp_path), "--hyper", "pool_width"]) == 2

    def test_bad_thread_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("NALN_THREADS", "zero")
        assert main(["synth", "--out", str(tmp_path), *TINY]) == 2

    def test_thread_env(self, tmp_path, monkeypatch):
        monkeypatch.setenv("NALN_THREADS", "1")
        assert main(["synth", "--out", str(tmp_path), *TINY]) == 0

    def test_module_entry_point(self):
        proc = subprocess.run([sys.executable, "-m", "naln"], capture_output=True, text=True)
        assert proc.returncode == 2


class TestPipeline:
    def test_synth_outputs(self, trained):
        root, manifest, _ = trained
        m = nio.load_manifest(manifest)
        assert set(m.images["embeddings"]) == {"aligned", "misaligned"}
        assert nio.read_tensor(m.resolve(m.train["epochs"])).shape == (32, 4, 32)
        assert nio.read_tensor(m.resolve(m.images["embeddings"]["aligned"])).shape == (13, 4)
        assert m.encoder["hyper"]["pool_width"] == 2

    def test_train_report_mean_row(self, trained):
        root, manifest, ck = trained
        report = json.loads((ck / "train_report.json").read_text())
        assert sorted(report["seeds"]) == ["seed0", "seed1"]
        rows = nio.read_csv_rows(ck / "train_report.csv")
        assert [r["unit"] for r in rows] == ["seed0", "seed1", "mean"]
        mean = np.mean([float(r["best_val_loss"]) for r in rows[:2]])
        assert float(rows[2]["best_val_loss"]) == pytest.approx(mean, abs=1e-6)

    def test_train_seeds_flag(self, trained, tmp_path):
        _, manifest, _ = trained
        assert main(["train", "--manifest", manifest, "--seeds", "5", "--out", str(tmp_path),
                     "--max-epochs", "1", "--patience", "1", "--batch-size", "16"]) == 0
        assert sorted(p.name for p in tmp_path.glob("seed*")) == [f"seed{i}" for i in range(5)]
        assert len(nio.read_csv_rows(tmp_path / "train_report.csv")) == 6

    def test_evaluate_two_ks(self, trained, tmp_path, capsys):
        _, manifest, ck = trained
        assert main(["evaluate", "--manifest", manifest, "--embeddings", "aligned", "--checkpoint", str(ck),
                     "--k", "1", "--k", "5", "--out", str(tmp_path / "ev")]) == 0
        rows = nio.read_csv_rows(tmp_path / "ev.csv")
        per_seed = [r for r in rows if r["unit"].startswith("seed")]
        assert sorted({int(r["k"]) for r in per_seed}) == [1, 5]
        assert all(r["database_size"] == "8" for r in per_seed)
        for unit in ("seed0", "seed1"):
            acc = {int(r["k"]): float(r["accuracy"]) for r in per_seed if r["unit"] == unit}
            assert acc[1] <= acc[5]
        assert "8-way" in capsys.readouterr().out

    def test_evaluate_extended(self, trained, tmp_path):
        _, manifest, ck = trained
        assert main(["evaluate", "--manifest", manifest, "--checkpoint", str(ck / "seed0"),
                     "--database", "extended", "--out", str(tmp_path / "ev")]) == 0
        rows = nio.read_csv_rows(tmp_path / "ev.csv")
        assert {r["database_size"] for r in rows} == {"13"}

    def test_attribute(self, trained, tmp_path, capsys):
        _, manifest, ck = trained
        assert main(["attribute", "--manifest", manifest, "--embeddings", "aligned", "--checkpoint", str(ck),
                     "--against", str(ck), "--against-embeddings", "aligned", "--out", str(tmp_path)]) == 0
        hist = nio.read_csv_rows(tmp_path / "histogram.csv")
        assert len(hist) == 32 and hist[1]["time_ms"] == "4.000000"
        bands = nio.read_csv_rows(tmp_path / "bands.csv")
        assert [r["unit"] for r in bands] == ["seed0", "seed1"]
        electrodes = nio.read_csv_rows(tmp_path / "electrodes.csv")
        assert sum(float(r["score"]) for r in electrodes) == pytest.approx(1.0, abs=1e-5)
        compare = nio.read_csv_rows(tmp_path / "bands_compare.csv")
        assert [r["band"] for r in compare] == ["delta", "theta", "alpha", "beta", "gamma"]
        assert "early-window mass" in capsys.readouterr().out

    def test_stats_from_evaluate_reports(self, trained, tmp_path, capsys):
        _, manifest, ck = trained
        for name in ("aligned", "misaligned"):
            assert main(["evaluate", "--manifest", manifest, "--embeddings", name, "--checkpoint", str(ck),
                         "--out", str(tmp_path / name)]) == 0
        assert main(["stats", "--a", str(tmp_path / "aligned.csv"), "--b", str(tmp_path / "misaligned.csv"),
                     "--k", "5", "--test", "unpaired", "--out", str(tmp_path / "st")]) == 0
        a = [float(r["accuracy"]) for r in nio.read_csv_rows(tmp_path / "aligned.csv")
             if r["unit"].startswith("seed") and r["k"] == "5"]
        row = nio.read_csv_rows(tmp_path / "st.csv")[0]
        assert row["label"] == "unpaired" and row["df"] == "2"
        assert float(row["mean_a"]) == pytest.approx(np.mean(a), abs=1e-6)

    def test_stats_scores(self, tmp_path, capsys):
        (tmp_path / "a.csv").write_text("unit,score\ns1,0.9\ns2,0.5\ns3,0.7\n")
        (tmp_path / "b.csv").write_text("unit,score\ns3,0.3\ns1,0.6\ns2,0.2\n")
        assert main(["stats", "--a", str(tmp_path / "a.csv"), "--b", str(tmp_path / "b.csv"),
                     "--pairing", "subjects", "--out", str(tmp_path / "st")]) == 0
        row = nio.read_csv_rows(tmp_path / "st.csv")[0]
        assert row["label"] == "paired over subjects" and row["df"] == "2"

    def test_stats_zero_variance(self, tmp_path):
        (tmp_path / "a.csv").write_text("unit,score\ns1,1\ns2,2\n")
        (tmp_path / "b.csv").write_text("unit,score\ns1,0\ns2,1\n")
        assert main(["stats", "--a", str(tmp_path / "a.csv"), "--b", str(tmp_path / "b.csv")]) == 1

    def test_preprocess(self, trained, tmp_path):
        root, _, _ = trained
        data = root / "data"
        assert main(["preprocess", "--recording", str(data / "recording.naln"), "--events",
                     str(data / "events.naln"), "--fs", "250", "--out", str(tmp_path), "--band", "1", "40",
                     "--window", "0", "128", "--baseline-ms", "40", "--average"]) == 0
        ep = nio.read_tensor(tmp_path / "epochs.naln")
        assert ep.shape == (8, 4, 32)
        assert sorted(nio.read_ints(tmp_path / "labels.naln").tolist()) == list(range(8))

    def test_unknown_embedding_name(self, trained):
        _, manifest, ck = trained
        assert main(["evaluate", "--manifest", manifest, "--embeddings", "nope", "--checkpoint", str(ck)]) == 1


class TestDeterminism:
    def test_reports_byte_identical(self, tmp_path):
        outputs = []
        for run in ("a", "b"):
            root = tmp_path / run
            assert main(["synth", "--out", str(root / "data"), *TINY]) == 0
            m = str(root / "data" / "manifest.json")
            assert main(["train", "--manifest", m, "--seeds", "2", "--out", str(root / "ck"), *FAST]) == 0
            assert main(["evaluate", "--manifest", m, "--checkpoint", str(root / "ck"),
                         "--out", str(root / "rep" / "eval")]) == 0
            assert main(["attribute", "--manifest", m, "--checkpoint", str(root / "ck"),
                         "--out", str(root / "rep")]) == 0
            files = sorted(p for p in (root / "rep").iterdir())
            files += [root / "ck" / "train_report.csv", root / "ck" / "train_report.txt"]
            outputs.append({p.name: p.read_bytes() for p in files})
        assert outputs[0] == outputs[1] and len(outputs[0]) >= 8
