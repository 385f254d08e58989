import json
import os
import subprocess
import sys

import pytest

from kcln.cli import main
from kcln.config import ConfigError, merge, parse_config
from kcln.network import load_checkpoint


@pytest.fixture(scope="module")
def data(tmp_path_factory):
    out = tmp_path_factory.mktemp("synth")
    assert main(["gen", "--out", str(out), "--entities", "120", "--seed", "3"]) == 0
    return out


def data_flags(d, advice=True):
    flags = ["--nodes", str(d / "nodes.tsv"), "--edges", str(d / "edges.tsv"),
             "--vocab", str(d / "vocab.tsv")]
    return flags + (["--advice", str(d / "advice.adv")] if advice else [])


def train_args(d, tmp_path, *extra):
    return ["train", *data_flags(d), "--layers", "1", "--hidden", "4", "--epochs", "3",
            "--checkpoint", str(tmp_path / "m.npz"), "--log", str(tmp_path / "log.csv"), *extra]


class TestConfig:
    def test_parse(self):
        cfg = parse_config("# c\nhidden = 40\ncorrupt-advice = yes\nseeds = 1, 2 3\nalpha=0.5 # x\n")
        assert cfg == {"hidden": 40, "corrupt_advice": True, "seeds": (1, 2, 3), "alpha": 0.5}

    @pytest.mark.parametrize("text", ["bogus = 1", "hidden", "hidden = forty", "directed = maybe"])
    def test_rejects(self, text):
        with pytest.raises(ConfigError):
            parse_config(text)

    def test_flags_win(self):
        assert merge({"alpha": 0.3, "hidden": None}, {"alpha": 0.9, "hidden": 8},
                     {"alpha": 1.0, "hidden": 40, "layers": 10}) == \
            {"alpha": 0.3, "hidden": 8, "layers": 10}


class TestGen:
    def test_five_files(self, data):
        assert sorted(p.name for p in data.iterdir()) == sorted(
            ["nodes.tsv", "edges.tsv", "vocab.tsv", "advice.adv", "report.json"])

    def test_noise_propagates(self, tmp_path):
        assert main(["gen", "--out", str(tmp_path), "--entities", "100", "--noise", "0.1"]) == 0
        assert json.loads((tmp_path / "report.json").read_text())["spec"]["label_noise"] == 0.1

    def test_invalid_spec(self, tmp_path):
        assert main(["gen", "--out", str(tmp_path), "--rules", "9"]) == 1

    def test_deterministic(self, tmp_path):
        for name in ("a", "b"):
            main(["gen", "--out", str(tmp_path / name), "--entities", "80", "--seed", "4"])
        assert (tmp_path / "a" / "nodes.tsv").read_bytes() == (tmp_path / "b" / "nodes.tsv").read_bytes()


class TestTrainEval:
    def test_train_writes_outputs(self, data, tmp_path, capsys):
        assert main(train_args(data, tmp_path)) == 0
        assert (tmp_path / "m.npz").is_file()
        assert len((tmp_path / "log.csv").read_text().splitlines()) == 4
        assert "test_f1" in capsys.readouterr().out

    def test_vanilla_without_advice(self, data, tmp_path):
        args = ["train", *data_flags(data, advice=False), "--layers", "1", "--epochs", "2",
                "--checkpoint", str(tmp_path / "v.npz"), "--log", str(tmp_path / "v.csv")]
        assert main(args) == 0

    def test_alpha_out_of_range(self, data, tmp_path, capsys):
        assert main(train_args(data, tmp_path, "--alpha", "1.5")) == 1
        assert "alpha" in capsys.readouterr().err

    def test_bad_advice_lists_diagnostics(self, data, tmp_path, capsys):
        bad = tmp_path / "bad.adv"
        bad.write_text("Cites(A,B) => label(A,label0)+\n")
        args = train_args(data, tmp_path)
        args[args.index("--advice") + 1] = str(bad)
        assert main(args) == 1
        assert "unknown-relation" in capsys.readouterr().err

    def test_numeric_failure_exit_2(self, data, tmp_path):
        assert main(train_args(data, tmp_path, "--lr", "1e300")) == 2

    def test_config_file(self, data, tmp_path):
        cfg = tmp_path / "run.cfg"
        cfg.write_text("epochs = 2\nhidden = 3\n")
        assert main(train_args(data, tmp_path, "--config", str(cfg), "--epochs", "5")) == 0
        assert len((tmp_path / "log.csv").read_text().splitlines()) == 6
        cfg.write_text("nonsense = 1\n")
        assert main(train_args(data, tmp_path, "--config", str(cfg))) == 1

    def test_eval_multiclass(self, data, tmp_path, capsys):
        main(train_args(data, tmp_path))
        capsys.readouterr()
        assert main(["eval", *data_flags(data, advice=False), "--checkpoint",
                     str(tmp_path / "m.npz")]) == 0
        out = capsys.readouterr().out
        assert out.startswith("micro_f1") and "auc_pr" not in out

    def test_eval_missing_checkpoint(self, data, tmp_path):
        assert main(["eval", *data_flags(data, advice=False), "--checkpoint",
                     str(tmp_path / "none.npz")]) == 1

    def test_eval_binary_memorises(self, tmp_path, capsys):
        d = tmp_path / "bin"
        main(["gen", "--out", str(d), "--entities", "40", "--labels", "2", "--rules", "1"])
        ckpt = tmp_path / "b.npz"
        assert main(["train", *data_flags(d), "--layers", "1", "--hidden", "40",
                     "--epochs", "400", "--lr", "0.05", "--checkpoint", str(ckpt),
                     "--log", str(tmp_path / "b.csv")]) == 0
        meta = load_checkpoint(ckpt)[3]
        ids = tmp_path / "ids.txt"
        ids.write_text("\n".join(meta["train_ids"]))
        capsys.readouterr()
        assert main(["eval", *data_flags(d, advice=False), "--checkpoint", str(ckpt),
                     "--ids", str(ids)]) == 0
        lines = dict(ln.split("\t") for ln in capsys.readouterr().out.splitlines())
        assert float(lines["micro_f1"]) == 1.0 and "auc_pr" in lines


class TestSweepMatch:
    def test_samples(self, data, tmp_path):
        args = ["sweep", *data_flags(data), "--protocol", "samples", "--fractions", "0.3",
                "--seeds", "1", "--epochs", "2", "--layers", "1", "--out", str(tmp_path)]
        assert main(args) == 0
        rows = (tmp_path / "sample_curve.csv").read_text().splitlines()
        assert len(rows) == 3

    def test_alpha_corrupt(self, data, tmp_path):
        args = ["sweep", *data_flags(data), "--protocol", "alpha", "--corrupt-advice",
                "--fractions", "0.3", "--seeds", "1", "--epochs", "2", "--layers", "1",
                "--out", str(tmp_path)]
        assert main(args) == 0
        rows = (tmp_path / "alpha_sweep.csv").read_text().splitlines()
        assert len(rows) == 1 + 5 + 1

    def test_unknown_protocol(self, data):
        assert main(["sweep", *data_flags(data), "--protocol", "nope"]) == 1

    def test_match_counts(self, data, tmp_path, capsys):
        dump = tmp_path / "m.tsv"
        assert main(["match", *data_flags(data), "--dump-masks", str(dump)]) == 0
        out = capsys.readouterr().out
        assert "rule 1 (line 2):" in out and "bindings" in out
        assert dump.read_text().startswith("entity\tkey\tvalue\n")

    def test_match_zero_bindings(self, data, tmp_path, capsys):
        adv = tmp_path / "none.adv"
        adv.write_text("HasWord(E,'key0') & HasWord(E,'key1') => label(E,label0)+\n")
        args = data_flags(data)
        args[args.index("--advice") + 1] = str(adv)
        assert main(["match", *args]) == 0
        assert "0 bindings" in capsys.readouterr().out


def test_plot_data_command(data, tmp_path, capsys):
    main(["sweep", *data_flags(data), "--protocol", "epochs", "--seeds", "1", "--epochs", "2",
          "--layers", "1", "--out", str(tmp_path)])
    capsys.readouterr()
    assert main(["plot-data", str(tmp_path / "epoch_curve.csv")]) == 0
    assert "# series method=kcln" in capsys.readouterr().out


def test_module_entry_and_help():
    env = dict(os.environ, KCLN_LOG="quiet")
    out = subprocess.run([sys.executable, "-m", "kcln", "train", "--help"], capture_output=True,
                         text=True, env=env)
    assert out.returncode == 0 and "seed + 1" in out.stdout


def test_bad_log_level(monkeypatch):
    monkeypatch.setenv("KCLN_LOG", "loud")
    assert main(["gen", "--out", "unused"]) == 1
