import csv
import json

import numpy as np
import pytest

from kgneg.cli import main
from kgneg.errors import ConfigError
from kgneg.evaluation import MetricsReport
from kgneg.experiment import ExperimentConfig, emit_report, preset_hparams, run_experiment
from kgneg.models import init_params, load_checkpoint, save_checkpoint
from kgneg.synthetic import write_typed_kg

FAST = dict(dim=8, max_epochs=2, batch_size=128, dev_sample=20, patience=5)


@pytest.fixture(scope="module")
def data_dir(tmp_path_factory):
    path = tmp_path_factory.mktemp("kg")
    write_typed_kg(path, seed=0)
    return path


def read_csv(path):
    with open(path, newline="") as fh:
        return [row for row in csv.reader(fh) if not row[0].startswith("#")]


class TestConfig:
    def test_text_round_trip(self):
        cfg = ExperimentConfig(data="d", model="rescal", sampler="nmiss", num_negatives=(1, 5), lr=0.01, frozen="f.npz")
        text = cfg.to_text()
        again = ExperimentConfig.from_text(text)
        assert again == cfg and again.to_text() == text

    def test_defaults(self):
        cfg = ExperimentConfig(data="d", model="transe", sampler="random")
        assert cfg.num_negatives == (1, 2, 5, 10, 20, 50, 100) and cfg.dim == 100

    def test_overrides_win_over_file(self, tmp_path):
        path = tmp_path / "c.txt"
        path.write_text(ExperimentConfig(data="d", model="transe", sampler="random", dim=10).to_text())
        assert ExperimentConfig.load(path, dim=20).dim == 20

    def test_fingerprint_ignores_out_dir(self):
        a = ExperimentConfig(data="d", model="transe", sampler="random", out="x")
        b = ExperimentConfig(data="d", model="transe", sampler="random", out="y")
        c = ExperimentConfig(data="d", model="transe", sampler="random", seed=1)
        assert a.fingerprint() == b.fingerprint() != c.fingerprint()

    def test_validation_lists_every_problem(self):
        cfg = ExperimentConfig(data="", model="bogus", sampler="nmiss", num_negatives=(0,))
        with pytest.raises(ConfigError) as info:
            cfg.validate()
        text = str(info.value)
        for key in ("data:", "model:", "num_negatives:", "frozen:"):
            assert key in text

    def test_typed_needs_type_file(self, tmp_path):
        assert any("types" in p for p in ExperimentConfig(data=str(tmp_path), model="transe", sampler="typed").problems())


class TestPresets:
    def test_freebase_complex(self):
        assert preset_hparams("freebase", "complex", 1) == (0.001, 1.31e-06)
        assert ExperimentConfig(data="d", model="complex", sampler="typed", dataset="freebase").hparams(50) == (0.001, 1.31e-06)

    @pytest.mark.parametrize("n_s,lr", [(1, 0.005), (5, 0.005), (10, 0.01), (20, 0.01), (100, 0.01)])
    def test_wordnet_rescal_lr_by_grid_point(self, n_s, lr):
        assert preset_hparams("wordnet", "rescal", n_s) == (lr, 7.48e-05)

    def test_explicit_values_never_overridden(self):
        cfg = ExperimentConfig(data="d", model="rescal", sampler="corrupt", dataset="wordnet", lr=0.123)
        assert cfg.hparams(20) == (0.123, 7.48e-05)
        cfg = ExperimentConfig(data="d", model="rescal", sampler="corrupt", dataset="wordnet", l2=0.0)
        assert cfg.hparams(1) == (0.005, 0.0)

    def test_no_preset_defaults(self):
        assert ExperimentConfig(data="d", model="transe", sampler="random").hparams(1) == (0.001, 0.0)


@pytest.fixture(scope="module")
def run(data_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("run")
    cfg = ExperimentConfig(data=str(data_dir), model="transe", sampler="random", num_negatives=(1, 2), out=str(out), **FAST)
    return cfg, out, run_experiment(cfg)


class TestRunExperiment:
    def test_grid_arity(self, run):
        cfg, out, reports = run
        assert [r.n_s for r in reports] == [1, 2]
        assert sorted(p.name for p in (out / "checkpoints").iterdir()) == ["transe_random_ns1.npz", "transe_random_ns2.npz"]
        mrr_rows = [r for r in read_csv(out / "metrics.csv")[1:] if r[4] == "mrr"]
        assert len(mrr_rows) == 2

    def test_provenance_columns(self, run):
        cfg, out, _ = run
        for name in ("metrics.csv", "slices.csv", "plot_series.csv"):
            header, *rows = read_csv(out / name)
            fp, seed = header.index("fingerprint"), header.index("seed")
            assert rows and all(r[fp] == cfg.fingerprint() and r[seed] == str(cfg.seed) for r in rows)

    def test_plot_series_annotation(self, run):
        _, out, _ = run
        assert "logarithmic" in (out / "plot_series.csv").read_text().splitlines()[0]

    def test_rerun_is_byte_identical(self, run, tmp_path):
        cfg, out, reports = run
        again = run_experiment(ExperimentConfig.from_mapping({**vars(cfg), "out": str(tmp_path)}))
        for name in ("metrics.csv", "slices.csv", "plot_series.csv"):
            assert (out / name).read_bytes() == (tmp_path / name).read_bytes()
        a = load_checkpoint(out / "checkpoints" / "transe_random_ns2.npz").params
        b = load_checkpoint(tmp_path / "checkpoints" / "transe_random_ns2.npz").params
        assert a.equals(b)
        assert [r.mrr for r in again] == [r.mrr for r in reports]

    def test_nmiss_fine_tunes_from_frozen(self, run, data_dir, tmp_path):
        cfg, out, _ = run
        frozen = out / "checkpoints" / "transe_random_ns1.npz"
        ft = ExperimentConfig.from_mapping(
            {**vars(cfg), "sampler": "nmiss", "frozen": str(frozen), "num_negatives": (2,), "fine_tune_epochs": 1, "out": str(tmp_path)}
        )
        (rep,) = run_experiment(ft)
        assert rep.sampler == "nmiss"
        assert not load_checkpoint(tmp_path / "checkpoints" / "transe_nmiss_ns2.npz").params.equals(load_checkpoint(frozen).params)


def fake_report(model, sampler, n_s, value):
    return MetricsReport(mrr=value, hits={10: value}, per_slice={}, n_evaluated=1, model=model, sampler=sampler, n_s=n_s)


def test_emit_report_series(tmp_path):
    reports = [fake_report("rescal", s, n, 0.1 * n) for s in ("corrupt", "nmiss") for n in (1, 2, 5)]
    paths = emit_report(reports, tmp_path)
    rows = read_csv(paths["plot"])[1:]
    series = {}
    for model, sampler, n_s, *_ in rows:
        series.setdefault((model, sampler), []).append(int(n_s))
    assert series == {("rescal", "corrupt"): [1, 2, 5], ("rescal", "nmiss"): [1, 2, 5]}
    with pytest.raises(ValueError):
        emit_report([], tmp_path)


class TestCli:
    def test_synth_stats_train_eval(self, tmp_path, capsys):
        data = tmp_path / "kg"
        assert main(["synth", "--out", str(data)]) == 0
        assert main(["stats", "--data", str(data), "--out", str(tmp_path / "stats")]) == 0
        assert "mean_degree_train\t2.0000" in capsys.readouterr().out
        out = tmp_path / "run"
        argv = ["train", "--data", str(data), "--model", "distmult", "--sampler", "typed", "--num-negatives", "1",
                "--dim", "8", "--max-epochs", "1", "--out", str(out)]
        assert main(argv) == 0
        assert (out / "config.txt").exists()
        capsys.readouterr()
        ckpt = out / "checkpoints" / "distmult_typed_ns1.npz"
        assert main(["eval", "--ckpt", str(ckpt), "--data", str(data), "--hits", "1,10", "--comparator", "strict"]) == 0
        summary = json.loads(capsys.readouterr().out)
        assert summary["comparator"] == "strict" and set(summary["hits"]) == {"hits@1", "hits@10"}

    def test_config_file_with_flag_override(self, data_dir, tmp_path):
        cfg_path = tmp_path / "exp.txt"
        base = ExperimentConfig(data=str(data_dir), model="transe", sampler="corrupt", num_negatives=(1,), out=str(tmp_path / "a"), **FAST)
        cfg_path.write_text(base.to_text())
        assert main(["train", "--config", str(cfg_path), "--out", str(tmp_path / "b")]) == 0
        assert (tmp_path / "b" / "metrics.csv").exists() and not (tmp_path / "a").exists()

    def test_errors_exit_nonzero(self, data_dir, tmp_path, capsys):
        assert main(["train", "--data", str(data_dir), "--model", "rescal", "--sampler", "nmiss", "--out", str(tmp_path)]) == 1
        assert "frozen" in capsys.readouterr().err
        assert main(["stats", "--data", str(tmp_path / "missing")]) == 1
        with pytest.raises(SystemExit) as info:
            main(["train", "--model", "bert"])
        assert info.value.code != 0

    def test_eval_rejects_mismatched_checkpoint(self, data_dir, tmp_path):
        path = save_checkpoint(tmp_path / "small.npz", init_params("distmult", 2, 3, 1))
        assert main(["eval", "--ckpt", str(path), "--data", str(data_dir)]) == 1

    def test_eval_rejects_corrupt_checkpoint(self, data_dir, tmp_path):
        path = tmp_path / "bad.npz"
        np.savez(path, junk=np.zeros(2))
        assert main(["eval", "--ckpt", str(path), "--data", str(data_dir)]) == 1
