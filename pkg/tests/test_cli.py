"""
End-to-end tests of the advbench command line.

The hand-wired models classify the toy MNIST directory perfectly; an
epsilon of 0.5 flips every example and 0.3 flips none.
"""

import json
import logging

import numpy as np
import pytest

from advbench.cli import build_parser, main
from advbench.core.bench import parse_report
from advbench.core.container import read_archive
from advbench.core.models import load, save


@pytest.fixture(autouse=True)
def restore_logging():
    """main() reconfigures the root logger; put it back after each test."""
    root = logging.getLogger()
    handlers, level = root.handlers[:], root.level
    yield
    for handler in root.handlers:
        if handler not in handlers:
            handler.close()
    root.handlers[:] = handlers
    root.setLevel(level)


@pytest.fixture
def model_files(tmp_path, handmade):
    paths = {}
    for name, scale in (("m1", 1.0), ("m2", 2.0), ("m3", 3.0)):
        paths[name] = str(tmp_path / f"{name}.advw")
        save(handmade(name, scale=scale), paths[name])
    return paths


@pytest.fixture
def attack_args(model_files, toy_mnist_dir, tmp_path):
    def make(method="ai-fgm", out="adv.advw", *extra):
        return [
            "attack", "--method", method, "--source", model_files["m1"],
            "--data", str(toy_mnist_dir), "--n", "10", "--seed", "7",
            "--out", str(tmp_path / out), *extra,
        ]
    return make


class TestUsage:
    def test_no_command(self, capsys):
        assert main([]) == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_flag(self):
        with pytest.raises(SystemExit) as info:
            main(["attack", "--bogus"])
        assert info.value.code == 2

    def test_missing_data_is_usage_error(self, model_files, tmp_path, capsys):
        code = main(["attack", "--method", "fgsm", "--source", model_files["m1"], "--out", str(tmp_path / "a.advw")])
        assert code == 2
        captured = capsys.readouterr()
        assert "Missing required setting 'data'" in captured.out
        assert "usage" in captured.err

    def test_missing_config_file(self, tmp_path):
        assert main(["eval", "--config", str(tmp_path / "absent.hcl")]) == 1

    def test_every_command_has_a_parser(self):
        parser = build_parser()
        for command in ("train", "attack", "eval", "matrix", "sweep", "inspect"):
            assert parser.parse_args([command]).command == command


class TestTrain:
    def test_trains_and_saves(self, toy_mnist_dir, tmp_path):
        out = tmp_path / "net.advw"
        code = main([
            "train", "--arch", "mlp-a", "--data", str(toy_mnist_dir),
            "--epochs", "2", "--batch", "5", "--lr", "0.1", "--seed", "1", "--out", str(out),
        ])
        assert code == 0
        model = load(out)
        assert model.name == "net"
        assert model.info.epochs == 2
        assert model.info.seed == 1
        assert model.info.clean_accuracy is not None
        _, meta, _ = read_archive(out)
        assert meta["config.arch"] == '"mlp-a"'

    def test_adversarial_training(self, toy_mnist_dir, tmp_path):
        out = tmp_path / "adv_net.advw"
        code = main([
            "train", "--arch", "mlp-a", "--data", str(toy_mnist_dir), "--epochs", "1",
            "--adversarial", "--adv-eps", "0.2", "--adv-frac", "0.5", "--out", str(out),
        ])
        assert code == 0
        info = load(out).info
        assert info.adversarial
        assert info.adv_epsilon == 0.2

    def test_unknown_architecture(self, toy_mnist_dir, tmp_path, capsys):
        code = main(["train", "--arch", "vgg", "--data", str(toy_mnist_dir), "--out", str(tmp_path / "m.advw")])
        assert code == 1
        assert "arch" in capsys.readouterr().out

    def test_missing_mnist_files(self, tmp_path):
        code = main(["train", "--arch", "mlp-a", "--data", str(tmp_path), "--out", str(tmp_path / "m.advw")])
        assert code == 1


class TestAttack:
    def test_defaults_recorded(self, attack_args, tmp_path):
        assert main(attack_args()) == 0
        tensors, meta, _ = read_archive(tmp_path / "adv.advw")
        assert meta["kind"] == "adversarial"
        assert meta["attack"] == "ai-fgm"
        assert meta["source"] == "m1"
        assert (meta["beta1"], meta["beta2"], meta["delta"], meta["iterations"]) == ("0.99", "0.999", "1e-08", "10")
        assert meta["epsilon"] == "0.3"
        assert meta["attack_seed"] == "3007"
        assert meta["prng"] == "numpy.PCG64"
        assert meta["config.seed"] == "7"
        assert tensors["images"].shape == (10, 4, 4, 1)
        assert np.abs(tensors["images"] - tensors["originals"]).max() <= 0.3 + 1e-12

    def test_same_command_same_bytes(self, attack_args, tmp_path):
        assert main(attack_args("pgd")) == 0
        first = (tmp_path / "adv.advw").read_bytes()
        assert main(attack_args("pgd")) == 0
        assert (tmp_path / "adv.advw").read_bytes() == first

    def test_ensemble_source(self, attack_args, model_files, tmp_path):
        args = attack_args("mi-fgsm") + ["--source", model_files["m2"], "--ensemble-weights", "0.25,0.75"]
        assert main(args) == 0
        _, meta, _ = read_archive(tmp_path / "adv.advw")
        assert meta["source"] == "ens(m1+m2)"
        assert len(meta["source_hash"].split(",")) == 2

    def test_too_many_candidates(self, attack_args):
        args = attack_args()
        args[args.index("--n") + 1] = "50"
        assert main(args) == 1

    def test_invalid_epsilon(self, attack_args, capsys):
        assert main(attack_args("fgsm", "adv.advw", "--eps", "-1")) == 1
        assert "'eps'" in capsys.readouterr().out

    def test_config_is_logged(self, attack_args, capsys):
        assert main(attack_args("fgsm")) == 0
        out = capsys.readouterr().out
        assert "eps = 0.3" in out
        assert 'method = "fgsm"' in out


class TestEval:
    def test_large_epsilon_report(self, attack_args, model_files, tmp_path):
        assert main(attack_args("fgsm", "adv.advw", "--eps", "0.5")) == 0
        report_path = tmp_path / "report.csv"
        code = main([
            "eval", "--adv", str(tmp_path / "adv.advw"), "--target", model_files["m1"],
            "--target", model_files["m2"], "--out", str(report_path),
        ])
        assert code == 0
        lines = report_path.read_text().splitlines()
        assert lines[1] == "fgsm,m1,m1,0.5,10,0.99,0.999,1.0,7,10,1.0000"
        rows = parse_report(report_path).rows
        assert [(r.target_model, r.success_rate) for r in rows] == [("m1", 1.0), ("m2", 1.0)]

    def test_small_epsilon_report(self, attack_args, model_files, tmp_path):
        assert main(attack_args("i-fgsm")) == 0
        report_path = tmp_path / "report.json"
        code = main([
            "eval", "--adv", str(tmp_path / "adv.advw"), "--target", model_files["m3"],
            "--out", str(report_path), "--format", "json", "--timestamp", "2024-01-01T00:00:00+00:00",
        ])
        assert code == 0
        document = json.loads(report_path.read_text())
        assert document["rows"][0]["success_rate"] == 0.0
        assert document["metadata"]["timestamp"] == "2024-01-01T00:00:00+00:00"

    def test_model_file_is_not_an_adversarial_batch(self, model_files, tmp_path):
        code = main(["eval", "--adv", model_files["m1"], "--target", model_files["m1"], "--out", str(tmp_path / "r.csv")])
        assert code == 1


class TestMatrix:
    def _write_config(self, tmp_path, model_files, toy_mnist_dir, out):
        path = tmp_path / "matrix.hcl"
        path.write_text(
            f'sources = ["{model_files["m1"]}", "{model_files["m2"]}"]\n'
            f'targets = ["{model_files["m1"]}", "{model_files["m2"]}"]\n'
            f'data = "{toy_mnist_dir}"\n'
            'attacks = ["fgsm", "pgd", "ai-fgm"]\n'
            "eps = 0.5\n"
            "n = 10\n"
            'format = "json"\n'
            'timestamp = "2024-01-01T00:00:00+00:00"\n'
            f'out = "{out}"\n'
        )
        return path

    def test_config_file_run_is_reproducible(self, tmp_path, model_files, toy_mnist_dir):
        out = tmp_path / "matrix.json"
        config = self._write_config(tmp_path, model_files, toy_mnist_dir, out)
        assert main(["matrix", "--config", str(config), "--jobs", "2"]) == 0
        first = out.read_bytes()
        assert main(["matrix", "--config", str(config), "--jobs", "2"]) == 0
        assert out.read_bytes() == first
        threaded_rows = parse_report(out).rows
        assert main(["matrix", "--config", str(config)]) == 0
        assert parse_report(out).rows == threaded_rows

        report = parse_report(out)
        assert len(report.rows) == 3 * 2 * 2
        assert all(row.success_rate == 1.0 for row in report.rows)
        assert report.metadata["timestamp"] == "2024-01-01T00:00:00+00:00"

    def test_report_embeds_resolved_config(self, tmp_path, model_files, toy_mnist_dir):
        out = tmp_path / "matrix.json"
        config = self._write_config(tmp_path, model_files, toy_mnist_dir, out)
        assert main(["matrix", "--config", str(config), "--seed", "7"]) == 0
        metadata = parse_report(out).metadata
        assert metadata["config.eps"] == "0.5"
        assert metadata["config.n"] == "10"
        assert metadata["config.seed"] == "7"
        assert metadata["config.attacks"] == '["fgsm", "pgd", "ai-fgm"]'
        assert model_files["m2"] in metadata["config.sources"]
        assert str(toy_mnist_dir) in metadata["config.data"]

    def test_flags_override_config_file(self, tmp_path, model_files, toy_mnist_dir):
        out = tmp_path / "matrix.json"
        config = self._write_config(tmp_path, model_files, toy_mnist_dir, out)
        assert main(["matrix", "--config", str(config), "--eps", "0.3", "--attacks", "fgsm"]) == 0
        report = parse_report(out)
        assert len(report.rows) == 4
        assert all(row.success_rate == 0.0 for row in report.rows)

    def test_ensemble_mode(self, model_files, toy_mnist_dir, tmp_path):
        out = tmp_path / "ens.csv"
        code = main([
            "matrix", "--ensemble", "--source", model_files["m1"], "--source", model_files["m2"],
            "--target", model_files["m3"], "--attacks", "fgsm,ni-fgsm", "--eps", "0.5",
            "--data", str(toy_mnist_dir), "--n", "10", "--out", str(out),
        ])
        assert code == 0
        rows = parse_report(out).rows
        assert [(r.attack, r.source_model, r.target_model) for r in rows] == [
            ("fgsm", "ens(m1+m2)", "m3"), ("ni-fgsm", "ens(m1+m2)", "m3"),
        ]

    def test_ensemble_target_must_be_held_out(self, model_files, toy_mnist_dir, tmp_path):
        code = main([
            "matrix", "--ensemble", "--source", model_files["m1"], "--source", model_files["m2"],
            "--target", model_files["m2"], "--data", str(toy_mnist_dir), "--n", "10",
            "--out", str(tmp_path / "ens.csv"),
        ])
        assert code == 1


class TestSweep:
    def test_iteration_sweep(self, model_files, toy_mnist_dir, tmp_path):
        out = tmp_path / "iters.csv"
        code = main([
            "sweep", "--kind", "iterations", "--iteration-values", "1,3", "--attacks", "i-fgsm,ai-fgm",
            "--source", model_files["m1"], "--target", model_files["m1"], "--target", model_files["m2"],
            "--data", str(toy_mnist_dir), "--n", "10", "--out", str(out),
        ])
        assert code == 0
        rows = parse_report(out).rows
        assert len(rows) == 2 * 2 * 2
        assert {r.iterations for r in rows} == {1, 3}

    def test_beta_sweep(self, model_files, toy_mnist_dir, tmp_path):
        out = tmp_path / "beta.csv"
        code = main([
            "sweep", "--beta1-values", "0.01,0.99", "--beta2-values", "0.01,0.5,0.999",
            "--source", model_files["m1"], "--target", model_files["m2"],
            "--data", str(toy_mnist_dir), "--n", "10", "--out", str(out),
        ])
        assert code == 0
        rows = parse_report(out).rows
        assert len(rows) == 6
        assert {r.attack for r in rows} == {"ai-fgm"}

    def test_epsilon_sweep(self, model_files, toy_mnist_dir, tmp_path):
        out = tmp_path / "eps.csv"
        code = main([
            "sweep", "--kind", "epsilon", "--epsilon-values", "0,0.5", "--attacks", "fgsm",
            "--source", model_files["m1"], "--target", model_files["m2"],
            "--data", str(toy_mnist_dir), "--n", "10", "--out", str(out),
        ])
        assert code == 0
        assert [r.success_rate for r in parse_report(out).rows] == [0.0, 1.0]

    def test_unknown_kind(self, model_files, toy_mnist_dir, tmp_path):
        code = main([
            "sweep", "--kind", "gamma", "--source", model_files["m1"], "--target", model_files["m2"],
            "--data", str(toy_mnist_dir), "--out", str(tmp_path / "s.csv"),
        ])
        assert code == 1


class TestInspectAndLogging:
    def test_inspect_prints_topk(self, attack_args, model_files, tmp_path, capsys):
        assert main(attack_args("fgsm", "adv.advw", "--eps", "0.5")) == 0
        capsys.readouterr()
        code = main(["inspect", "--adv", str(tmp_path / "adv.advw"), "--model", model_files["m2"], "--k", "3", "--count", "2"])
        assert code == 0
        out = capsys.readouterr().out
        assert out.count("clean:") == 2
        assert out.count("adversarial:") == 2

    def test_log_file(self, attack_args, tmp_path):
        log_path = tmp_path / "logs" / "run.log"
        assert main(attack_args("fgsm", "adv.advw", "--log-file", str(log_path))) == 0
        text = log_path.read_text()
        assert "advbench.cli" in text
        assert "eps = 0.3" in text

    def test_quiet_console(self, attack_args, capsys):
        assert main(attack_args("fgsm", "adv.advw", "--log-level", "ERROR")) == 0
        assert capsys.readouterr().out == ""
