import json
import statistics

import pytest
import yaml

from sparsemia.cli import main
from sparsemia.errors import ConfigurationError
from sparsemia.experiment import (PRESETS, ExperimentConfig, LevelConfig, TrialResult, derive_seed,
                                  load_config, load_preset, run_experiment, run_pipeline)
from sparsemia.mia import AttackResult, defense_score
from sparsemia.report import (TABLE_COLUMNS, aggregate, emit_report, load_report, report_table,
                              significance, tradeoff_ratio)

TINY_GRID = [{"hidden_layers": 1, "hidden_width": 8, "learning_rate": 0.01, "epochs": 2}]


def tiny_config(**overrides):
    d = {
        "name": "tiny",
        "dataset": {"kind": "synthetic", "synthetic": {"count": 160, "classes": 3, "shape": [5],
                                                       "separation": 2.0}},
        "subset_size": 40,
        "val_size": 8,
        "architecture": {"kind": "mlp", "hidden": [8]},
        "train": {"epochs": 2, "batch_size": 16, "initial_lr": 0.05, "lr_drop_epochs": []},
        "levels": [{"kind": "dense"}, {"kind": "imp", "rounds": 1}],
        "attack": {"n_noise": 2, "grid": TINY_GRID},
        "trials": 2,
        "master_seed": 1,
    }
    d.update(overrides)
    return d


def trial(level, t, acc, attack_acc, pct=100.0):
    res = AttackResult([attack_acc], [attack_acc], [{}], attack_acc, defense_score(attack_acc))
    return TrialResult(level, t, 0, acc, acc, pct, res)


class TestSeeds:
    def test_derived_seeds_are_distinct_and_stable(self):
        seeds = {derive_seed(0, t, s, r) for t in range(3) for s in range(6) for r in range(2)}
        assert len(seeds) == 36
        assert derive_seed(5, 1, 2) == derive_seed(5, 1, 2)
        assert derive_seed(5, 1, 2) != derive_seed(6, 1, 2)


class TestConfig:
    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigurationError, match="unknown"):
            ExperimentConfig.from_dict({"bogus": 1})

    def test_duplicate_levels_rejected(self):
        with pytest.raises(ConfigurationError, match="duplicate"):
            ExperimentConfig.from_dict(tiny_config(levels=[{"kind": "dense"}, {"kind": "dense"}]))

    def test_level_labels(self):
        assert LevelConfig("imp", rounds=2).labels() == ["imp-k0", "imp-k1", "imp-k2"]
        assert LevelConfig("butterfly", segments=1, factors=3).labels() == ["butterfly-S1-L3"]
        with pytest.raises(ConfigurationError):
            LevelConfig("butterfly", segments=0)

    @pytest.mark.parametrize("suffix", [".yaml", ".json"])
    def test_file_round_trip(self, tmp_path, suffix):
        cfg = ExperimentConfig.from_dict(tiny_config())
        path = tmp_path / f"c{suffix}"
        dump = yaml.safe_dump if suffix == ".yaml" else json.dumps
        path.write_text(dump(cfg.to_dict()))
        assert load_config(path).to_dict() == cfg.to_dict()

    def test_presets_load(self):
        for name in PRESETS:
            cfg = load_preset(name)
            assert cfg.name == name

    def test_full_size_preset_encodes_reference_setup(self):
        cfg = load_preset("paper-scale")
        assert cfg.train.epochs == 300 and cfg.train.initial_lr == 0.03
        assert cfg.train.lr_drop_epochs == [150, 225] and cfg.train.weight_decay == 0.005
        assert cfg.subset_size == 15000 and cfg.val_size == 1000
        imp = next(lv for lv in cfg.levels if lv.kind == "imp")
        assert imp.rounds == 24 and imp.prune_fraction == 0.2
        butterflies = {(lv.segments, lv.factors) for lv in cfg.levels if lv.kind == "butterfly"}
        assert butterflies == {(1, 2), (1, 3), (2, 2), (2, 3), (3, 2), (3, 3)}


class TestReport:
    def test_tradeoff_ratio_example(self):
        assert tradeoff_ratio(78.75, 68, 87.5, 50) == 3.6

    def test_tradeoff_ratio_undefined_without_accuracy_change(self):
        assert tradeoff_ratio(80, 60, 80, 50) is None

    def test_significance_rule(self):
        assert significance(60, 2, 50, 3) == "gain"
        assert significance(40, 2, 50, 3) == "loss"
        assert significance(54, 2, 50, 3) == "none"

    def test_aggregate_statistics(self):
        rows = [trial("dense", t, acc, a) for t, (acc, a) in enumerate([(80, 70), (82, 72), (84, 74)])]
        rows += [trial("imp-k1", t, acc, a, 80.0) for t, (acc, a) in enumerate([(78, 60), (79, 61),
                                                                                  (80, 62)])]
        report = aggregate(rows)
        dense, imp = report.level("dense"), report.level("imp-k1")
        assert dense.accuracy_mean == 82 and dense.accuracy_std == pytest.approx(2.0)
        assert dense.defense_mean == pytest.approx(56)
        assert dense.defense_std == pytest.approx(statistics.stdev([60, 56, 52]))
        assert imp.defense_mean == pytest.approx(78)
        assert imp.defense_significance == "gain"
        assert imp.tradeoff_ratio == pytest.approx((22 / 56) / (3 / 82))
        assert report.baseline == "dense"

    def test_single_trial_is_flagged(self):
        report = aggregate([trial("imp-k0", 0, 80, 60), trial("imp-k1", 0, 79, 58)])
        assert report.baseline == "imp-k0"
        assert all(lv.underpowered and lv.accuracy_std == 0 for lv in report.levels)

    def test_empty_rejected(self):
        with pytest.raises(ConfigurationError):
            aggregate([])

    def test_emit_and_load(self, tmp_path):
        report = aggregate([trial("dense", 0, 80, 60), trial("dense", 1, 82, 62)], name="x")
        json_path, csv_path = emit_report(report, tmp_path / "out")
        loaded = load_report(json_path)
        assert loaded.to_dict() == report.to_dict()
        header = csv_path.read_text().splitlines()[0]
        assert header.split(",") == TABLE_COLUMNS
        assert report_table(loaded) == csv_path.read_text()


class TestPipeline:
    def test_one_result_per_level(self):
        cfg = ExperimentConfig.from_dict(tiny_config())
        results = run_pipeline(cfg, trial=0)
        assert [r.level for r in results] == ["dense", "imp-k0", "imp-k1"]
        assert results[2].nonzero_pct < 100

    def test_trials_differ_but_repeat(self):
        cfg = ExperimentConfig.from_dict(tiny_config(trials=2))
        a = run_experiment(cfg)
        b = run_experiment(cfg)
        assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)
        seeds = {t.seed for t in a.trials}
        assert len(seeds) == len(a.trials)

    def test_butterfly_level_on_resnet(self):
        cfg = ExperimentConfig.from_dict(tiny_config(
            dataset={"kind": "synthetic", "synthetic": {"count": 64, "classes": 2,
                                                        "shape": [3, 8, 8]}},
            subset_size=16, val_size=4, trials=1,
            architecture={"kind": "resnet", "width": 2},
            train={"epochs": 1, "batch_size": 8, "initial_lr": 0.05, "lr_drop_epochs": []},
            levels=[{"kind": "butterfly", "segments": 1, "factors": 2}]))
        (result,) = run_pipeline(cfg)
        assert result.level == "butterfly-S1-L2"
        assert result.nonzero_pct < 100


@pytest.fixture
def tiny_config_file(tmp_path):
    path = tmp_path / "tiny.yaml"
    path.write_text(yaml.safe_dump(tiny_config()))
    return path


class TestCli:
    def test_usage_error_exits_1(self, capsys):
        assert main(["train"]) == 1
        assert main(["no-such-command"]) == 1

    def test_configuration_error_exits_1(self, tmp_path, capsys):
        bad = tmp_path / "bad.yaml"
        bad.write_text("bogus: 1\n")
        assert main(["experiment", "--config", str(bad), "--out", str(tmp_path / "r")]) == 1
        assert "unknown config keys" in capsys.readouterr().err

    def test_runtime_error_exits_2(self, tmp_path, tiny_config_file, capsys):
        missing = tmp_path / "missing.npz"
        code = main(["attack", "--config", str(tiny_config_file), "--target", str(missing),
                     "--shadow", str(missing)])
        assert code == 2

    def test_train_and_attack(self, tmp_path, tiny_config_file, capsys):
        target, shadow = tmp_path / "t.npz", tmp_path / "s.npz"
        assert main(["train", "--config", str(tiny_config_file), "--out", str(target)]) == 0
        assert main(["train", "--config", str(tiny_config_file), "--role", "shadow",
                     "--out", str(shadow)]) == 0
        capsys.readouterr()
        assert main(["attack", "--config", str(tiny_config_file), "--target", str(target),
                     "--shadow", str(shadow), "--export-dir", str(tmp_path / "sets"),
                     "--out", str(tmp_path / "attack.json")]) == 0
        result = json.loads((tmp_path / "attack.json").read_text())
        assert result["defense"] == 200 - 2 * result["strongest"]
        assert (tmp_path / "sets" / "target_attack.txt").is_file()

    def test_imp_writes_round_checkpoints(self, tmp_path, tiny_config_file):
        out = tmp_path / "imp"
        assert main(["imp", "--config", str(tiny_config_file), "--rounds", "2",
                     "--out-dir", str(out)]) == 0
        manifest = json.loads((out / "manifest.json").read_text())
        assert [r["round"] for r in manifest["rounds"]] == [0, 1, 2]
        for r in manifest["rounds"]:
            assert (out / r["checkpoint"]).is_file()
            assert r["checkpoint"].startswith(f"round{r['round']:02d}_nz")

    def test_experiment_and_report(self, tmp_path, tiny_config_file, capsys):
        prefix = tmp_path / "rep"
        assert main(["experiment", "--config", str(tiny_config_file), "--trials", "1",
                     "--set", "attack.n_noise=1", "--out", str(prefix)]) == 0
        table = capsys.readouterr().out
        assert table.startswith(",".join(TABLE_COLUMNS))
        report = json.loads(prefix.with_suffix(".json").read_text())
        assert report["config"]["attack"]["n_noise"] == 1
        assert main(["report", "--input", str(prefix.with_suffix(".json"))]) == 0
        assert capsys.readouterr().out == table

    def test_flag_overrides(self, tmp_path, tiny_config_file):
        prefix = tmp_path / "rep"
        assert main(["experiment", "--config", str(tiny_config_file), "--trials", "1",
                     "--epochs", "1", "--lr", "0.01", "--master-seed", "9",
                     "--out", str(prefix)]) == 0
        cfg = json.loads(prefix.with_suffix(".json").read_text())["config"]
        assert cfg["train"]["epochs"] == 1 and cfg["train"]["initial_lr"] == 0.01
        assert cfg["master_seed"] == 9 and cfg["trials"] == 1

    def test_bad_set_syntax(self, tmp_path, tiny_config_file):
        assert main(["experiment", "--config", str(tiny_config_file), "--set", "novalue",
                     "--out", str(tmp_path / "r")]) == 1
