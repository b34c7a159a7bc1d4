"""Configuration files, report round trips, and the experiment driver."""

import os

import numpy as np
import pytest

from lfvasr.errors import ConfigError
from lfvasr.experiment import (ExperimentConfig, ExperimentReport, ReportRow,
                               WerRow, format_report_table, parse_config_text,
                               read_report, run_experiment, write_report)


class TestConfigText:
    def test_basic_parsing(self):
        table = parse_config_text("""
        # an experiment
        unit_mode = phone
        train.lr = 0.1   # trailing comment
        seeds = 1, 2,3
        """)
        assert table == {"unit_mode": "phone", "train.lr": "0.1", "seeds": "1, 2,3"}

    def test_malformed_line_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("just words\n")

    def test_duplicate_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("a = 1\na = 2\n")

    def test_empty_key_rejected(self):
        with pytest.raises(ConfigError):
            parse_config_text("= 3\n")


class TestExperimentConfig:
    def test_defaults(self):
        config = ExperimentConfig()
        assert config.seeds == (1, 2, 3, 4, 5)
        assert config.epochs == 15
        assert config.lr == 0.2
        assert config.conditions == ("baseline", "append", "modulate")
        assert config.unit_mode == "grapheme"

    def test_from_mapping(self):
        config = ExperimentConfig.from_mapping({
            "unit_mode": "phone", "data_size": "low",
            "conditions": "baseline,modulate", "seeds": "7,8",
            "train.epochs": "3", "train.lr": "0.05", "wer.enabled": "true",
        })
        assert config.unit_mode == "phone"
        assert config.data_size == "low"
        assert config.conditions == ("baseline", "modulate")
        assert config.seeds == (7, 8)
        assert config.epochs == 3
        assert config.wer_enabled is True

    def test_unknown_key_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_mapping({"train.epoches": "3"})

    def test_bad_values_rejected(self):
        with pytest.raises(ConfigError):
            ExperimentConfig.from_mapping({"train.epochs": "three"})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_mapping({"wer.enabled": "yes"})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_mapping({"unit_mode": "syllable"})
        with pytest.raises(ConfigError):
            ExperimentConfig.from_mapping({"conditions": "baseline,magic"})

    def test_config_file_round_trip(self, tmp_path):
        path = tmp_path / "exp.cfg"
        path.write_text("unit_mode = phone\ntrain.epochs = 2\n")
        config = ExperimentConfig.from_file(path)
        assert config.unit_mode == "phone"
        assert config.epochs == 2


class TestReportFiles:
    def _report(self):
        report = ExperimentReport()
        report.rows = [
            ReportRow("baseline", "grapheme", "full", "lang0", 1, ter=31.25, wer=None),
            ReportRow("baseline", "grapheme", "full", "all", 1, ter=1 / 3 * 100, wer=None),
            ReportRow("modulate", "grapheme", "full", "lang0", 1, ter=28.0, wer=55.5),
            ReportRow("append", "grapheme", "full", "lang0", 2, ter=None, wer=None),
        ]
        return report

    def test_round_trip_preserves_rows_exactly(self, tmp_path):
        report = self._report()
        path = tmp_path / "report.tsv"
        write_report(report, path)
        back = read_report(path)
        assert back.rows == report.rows

    def test_failed_cells_written_as_failed(self, tmp_path):
        path = tmp_path / "report.tsv"
        write_report(self._report(), path)
        lines = path.read_text().splitlines()
        assert lines[0] == "condition\tunit_mode\tdata_size\tlanguage\tseed\tTER\tWER"
        assert lines[4].split("\t")[5] == "failed"

    def test_wrong_header_rejected(self, tmp_path):
        path = tmp_path / "report.tsv"
        path.write_text("nope\n")
        with pytest.raises(ConfigError):
            read_report(path)

    def test_medians(self):
        report = ExperimentReport()
        for seed, ter in ((1, 10.0), (2, 30.0), (3, 20.0)):
            report.rows.append(ReportRow("baseline", "grapheme", "full", "all",
                                         seed, ter=ter))
        report.rows.append(ReportRow("baseline", "grapheme", "full", "all", 4))
        assert report.median_ter("baseline") == 20.0
        assert report.median_ter("modulate") is None
        report.wer_rows = [WerRow("baseline", 1, 0.3, 40.0),
                           WerRow("baseline", 2, 0.3, 50.0)]
        assert report.median_wer("baseline", 0.3) == 45.0
        assert report.median_wer("baseline", 0.0) is None

    def test_table_formats(self):
        text = format_report_table(self._report())
        assert "baseline" in text
        assert "lang0" in text
        assert "all" in text


def _tiny_experiment_config(**overrides):
    table = {
        "seeds": "1",
        "conditions": "baseline,modulate",
        "corpus.languages": "3",
        "corpus.train_seconds": "6",
        "corpus.test_seconds": "3",
        "corpus.low_seconds": "2",
        "train.epochs": "1",
        "train.lr": "0.05",
        "train.batch_size": "4",
        "extractor.epochs": "1",
        "model.hidden": "6",
        "model.lfv_dim": "4",   # divides the 12-wide LSTM layers
    }
    table.update(overrides)
    return ExperimentConfig.from_mapping(table)


class TestRunExperiment:
    def test_tiny_sweep_produces_complete_report(self, tmp_path):
        config = _tiny_experiment_config()
        report = run_experiment(config, tmp_path / "out")
        # 2 conditions x (3 languages + overall) x 1 seed
        assert len(report.rows) == 8
        assert all(r.ter is not None for r in report.rows)
        conditions = {r.condition for r in report.rows}
        assert conditions == {"baseline", "modulate"}
        out = tmp_path / "out"
        for name in ("report.tsv", "report.txt", "train.log",
                     "ref_seed1.tsv", "hyp_seed1_baseline.tsv",
                     "hyp_seed1_modulate.tsv"):
            assert (out / name).exists(), name
        back = read_report(out / "report.tsv")
        assert back.rows == report.rows

    def test_identical_rerun_is_byte_identical(self, tmp_path):
        config = _tiny_experiment_config(conditions="baseline")
        run_experiment(config, tmp_path / "a")
        run_experiment(config, tmp_path / "b")
        a = (tmp_path / "a" / "report.tsv").read_bytes()
        b = (tmp_path / "b" / "report.tsv").read_bytes()
        assert a == b
        assert (tmp_path / "a" / "train.log").read_bytes() == \
               (tmp_path / "b" / "train.log").read_bytes()

    def test_failed_condition_recorded_without_stopping_run(self, tmp_path):
        # an indivisible modulation width breaks only the adapted condition
        config = _tiny_experiment_config(**{"model.lfv_dim": "7"})
        report = run_experiment(config, tmp_path / "out")
        baseline_rows = [r for r in report.rows if r.condition == "baseline"]
        modulate_rows = [r for r in report.rows if r.condition == "modulate"]
        assert baseline_rows and all(r.ter is not None for r in baseline_rows)
        assert modulate_rows and all(r.ter is None for r in modulate_rows)
        text = (tmp_path / "out" / "report.tsv").read_text()
        assert "failed" in text

    def test_wer_stage_fills_word_rates(self, tmp_path):
        config = _tiny_experiment_config(**{
            "conditions": "baseline",
            "wer.enabled": "true",
            "wer.language": "lang0",
            "wer.beam": "2",
            "lm.hidden": "8",
            "lm.epochs": "1",
        })
        report = run_experiment(config, tmp_path / "out")
        weights = {w.lm_weight for w in report.wer_rows}
        assert weights == {0.0, 0.3}
        lang0_rows = [r for r in report.rows if r.language == "lang0"]
        assert all(r.wer is not None for r in lang0_rows)
        assert (tmp_path / "out" / "hyp_seed1_baseline_lm.tsv").exists()
