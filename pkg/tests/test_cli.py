import json
import subprocess
import sys

import pytest

import gudn.cli as cli
from gudn.harness import DivergenceError

FAST_SET = [
    "--set", "encoder.num_layers=1",
    "--set", "encoder.hidden_dim=16",
    "--set", "encoder.num_heads=2",
    "--set", "encoder.ffn_dim=32",
    "--set", "max_input_len=24",
    "--set", "epochs=1",
    "--set", "holdout_fraction=0.0",
    "--set", "dropout_rate=0.1",
]


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "data"
    rc = cli.main(["gen-synth", "--out", str(out), "--L", "8", "--n-train", "12",
                   "--n-test", "4", "--labels-per-sample", "2", "--noise-tokens", "3",
                   "--max-input-len", "24", "--seed", "3"])
    assert rc == 0
    return out


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory, data_dir):
    out = tmp_path_factory.mktemp("cli") / "run"
    rc = cli.main(["train", "--data", str(data_dir), "--out", str(out), *FAST_SET])
    assert rc == 0
    return out


class TestGenSynth:
    def test_deterministic_output_bytes(self, tmp_path, capsys):
        args = ["gen-synth", "--L", "6", "--n-train", "10", "--n-test", "3",
                "--noise-tokens", "2", "--seed", "5", "--max-input-len", "24"]
        assert cli.main([*args, "--out", str(tmp_path / "a")]) == 0
        assert cli.main([*args, "--out", str(tmp_path / "b")]) == 0
        for name in ("train.jsonl", "test.jsonl", "labels.tsv", "meta.json"):
            assert (tmp_path / "a" / name).read_bytes() == \
                (tmp_path / "b" / name).read_bytes()
        assert "TRN=10 TST=3 LBL=6" in capsys.readouterr().out

    def test_bad_arguments(self, tmp_path, capsys):
        rc = cli.main(["gen-synth", "--out", str(tmp_path / "x"), "--L", "0"])
        assert rc == 2
        assert "labels_per_sample" in capsys.readouterr().err


class TestTrainEvalPredict:
    def test_train_reports_checkpoint(self, run_dir, capsys):
        # fixture already ran training; re-check its artifacts
        assert (run_dir / "model.npz").exists()
        assert (run_dir / "run.json").exists()

    def test_eval_prints_metric_table(self, data_dir, run_dir, capsys):
        rc = cli.main(["eval", "--checkpoint", str(run_dir / "model.npz"),
                       "--data", str(data_dir)])
        assert rc == 0
        out = capsys.readouterr().out
        assert "instances: 4" in out
        assert "P" in out and "nDCG" in out and "PSP" in out

    def test_eval_psp_normalized_flag(self, data_dir, run_dir):
        rc = cli.main(["eval", "--checkpoint", str(run_dir / "model.npz"),
                       "--data", str(data_dir), "--psp-normalized"])
        assert rc == 0

    def test_predict_emits_json_lines(self, run_dir, tmp_path, capsys):
        inp = tmp_path / "texts.jsonl"
        inp.write_text('{"text": "sig000a sig000b filler01", "sample_id": 7}\n'
                       '{"text": "sig001a sig001b"}\n')
        rc = cli.main(["predict", "--checkpoint", str(run_dir / "model.npz"),
                       "--input", str(inp), "--top-k", "3"])
        assert rc == 0
        lines = [json.loads(l) for l in capsys.readouterr().out.splitlines()]
        assert [l["sample_id"] for l in lines] == ["7", "2"]
        for line in lines:
            assert len(line["labels"]) == 3
            assert len(line["label_texts"]) == 3
            assert sorted(line["scores"], reverse=True) == line["scores"]

    def test_predict_top_k_capped_at_label_count(self, run_dir, tmp_path, capsys):
        inp = tmp_path / "one.jsonl"
        inp.write_text('{"text": "anything"}\n')
        rc = cli.main(["predict", "--checkpoint", str(run_dir / "model.npz"),
                       "--input", str(inp), "--top-k", "99"])
        assert rc == 0
        line = json.loads(capsys.readouterr().out)
        assert len(line["labels"]) == 8


class TestCluster:
    def test_writes_index(self, data_dir, tmp_path, capsys):
        out = tmp_path / "clusters.json"
        rc = cli.main(["cluster", "--data", str(data_dir), "--C", "4",
                       "--out", str(out)])
        assert rc == 0
        assert json.loads(out.read_text())["C"] == 4
        assert "C=4" in capsys.readouterr().out

    def test_non_power_of_two_is_config_error(self, data_dir, tmp_path, capsys):
        rc = cli.main(["cluster", "--data", str(data_dir), "--C", "3",
                       "--out", str(tmp_path / "x.json")])
        assert rc == 2
        assert "power of 2" in capsys.readouterr().err


class TestErrorPaths:
    def test_invalid_config_file(self, data_dir, tmp_path, capsys):
        bad = tmp_path / "bad.json"
        bad.write_text("{not json")
        rc = cli.main(["train", "--config", str(bad), "--data", str(data_dir),
                       "--out", str(tmp_path / "out")])
        assert rc == 2
        assert "config error" in capsys.readouterr().err

    def test_unknown_set_key(self, data_dir, tmp_path, capsys):
        rc = cli.main(["train", "--data", str(data_dir),
                       "--out", str(tmp_path / "out"), "--set", "epohcs=3"])
        assert rc == 2
        assert "unknown config keys" in capsys.readouterr().err

    def test_missing_data_dir(self, tmp_path, capsys):
        rc = cli.main(["train", "--data", str(tmp_path / "nowhere"),
                       "--out", str(tmp_path / "out")])
        assert rc == 3

    def test_missing_predict_input(self, run_dir, tmp_path, capsys):
        rc = cli.main(["predict", "--checkpoint", str(run_dir / "model.npz"),
                       "--input", str(tmp_path / "absent.jsonl")])
        assert rc == 3
        assert "not found" in capsys.readouterr().err

    def test_missing_checkpoint(self, data_dir, tmp_path):
        rc = cli.main(["eval", "--checkpoint", str(tmp_path / "no.npz"),
                       "--data", str(data_dir)])
        assert rc == 3

    def test_divergence_exit_code(self, data_dir, tmp_path, monkeypatch, capsys):
        def blow_up(cfg, bundle, out_dir=None):
            raise DivergenceError("non-finite loss at epoch 0 batch 1")

        monkeypatch.setattr(cli, "train", blow_up)
        rc = cli.main(["train", "--data", str(data_dir),
                       "--out", str(tmp_path / "out")])
        assert rc == 4
        assert "divergence" in capsys.readouterr().err

    def test_no_subcommand_exits_via_argparse(self):
        with pytest.raises(SystemExit):
            cli.main([])


class TestAblateCommand:
    def test_reinforce_axis_table(self, data_dir, tmp_path, capsys):
        rc = cli.main(["ablate", "--data", str(data_dir), "--axes", "reinforce_mode",
                       "--out", str(tmp_path / "sweep"), *FAST_SET])
        assert rc == 0
        out = capsys.readouterr().out
        assert "reinforce_mode" in out
        assert "disordered" in out
        assert (tmp_path / "sweep" / "comparison.txt").exists()

    def test_empty_axes_rejected(self, data_dir, tmp_path, capsys):
        rc = cli.main(["ablate", "--data", str(data_dir), "--axes", " , ",
                       "--out", str(tmp_path / "x")])
        assert rc == 2


class TestPlotMetrics:
    def test_writes_png(self, run_dir, tmp_path, capsys):
        out = tmp_path / "chart.png"
        rc = cli.main(["plot-metrics", "--runs", str(run_dir), "--out", str(out)])
        assert rc == 0
        assert out.exists() and out.stat().st_size > 0

    def test_no_runs_found(self, tmp_path, capsys):
        rc = cli.main(["plot-metrics", "--runs", str(tmp_path), "--out",
                       str(tmp_path / "c.png")])
        assert rc == 3
        assert "no run.json" in capsys.readouterr().err

    def test_bad_extension(self, run_dir, tmp_path, capsys):
        rc = cli.main(["plot-metrics", "--runs", str(run_dir), "--out",
                       str(tmp_path / "c.pdf")])
        assert rc == 2


def test_module_entry_point_help():
    proc = subprocess.run([sys.executable, "-m", "gudn.cli", "--help"],
                          capture_output=True, text=True)
    assert proc.returncode == 0
    assert "gen-synth" in proc.stdout
