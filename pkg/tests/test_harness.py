import json
from pathlib import Path

import numpy as np
import pytest

from bracketlab.cli import main as cli_main
from bracketlab.config import (CorpusConfig, EvalConfig, RunConfig,
                               canonical_json, config_hash, load_run_config,
                               run_config_from_dict)
from bracketlab.errors import ConfigError
from bracketlab.harness import (build_corpus, corpus_from_manifest,
                                corpus_manifest, emit_plots, run_compare,
                                run_gap, run_random_policy, run_train,
                                write_compare_outputs, write_gap_outputs)
from bracketlab.reporting import (aggregate_rows, read_report_json,
                                  read_svg_values, write_report_json)


def tiny_config(tmp_path, **overrides):
    data = {
        "seed": 11,
        "output_dir": str(tmp_path / "out"),
        "corpus": {"dynamic_scenes": 3, "static_scenes": 1, "width": 48,
                   "height": 48, "motion_range": [5.0, 25.0]},
        "eval_corpus": {"dynamic_scenes": 3, "static_scenes": 1, "width": 48,
                        "height": 48, "motion_range": [5.0, 25.0], "seed": 77},
        "train": {"episodes": 24, "episodes_per_epoch": 12},
        "eval": {"gap_scenes": 2, "gap_iso_indices": [6, 12],
                 "gap_shutter_indices": [5, 12]},
    }
    data.update(overrides)
    return run_config_from_dict(data)


class TestConfig:
    def test_defaults_and_sections(self, tmp_path):
        cfg = tiny_config(tmp_path)
        assert cfg.corpus.dynamic_scenes == 3
        assert cfg.camera.f_number == 2.8
        assert cfg.train.episodes == 24

    def test_unknown_field_rejected(self):
        with pytest.raises(ConfigError):
            run_config_from_dict({"corpus": {"bogus": 1}})
        with pytest.raises(ConfigError):
            run_config_from_dict({"bogus_section": {}})

    def test_sub_seed_derivation_stable_and_overridable(self, tmp_path):
        a = tiny_config(tmp_path)
        b = tiny_config(tmp_path)
        assert a.corpus.seed == b.corpus.seed
        assert a.eval_corpus.seed == 77  # explicit wins
        c = run_config_from_dict({"seed": 12})
        assert c.corpus.seed != a.corpus.seed

    def test_seed_override_rederives(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({"seed": 1, "corpus": {"dynamic_scenes": 2,
                                                          "static_scenes": 0}}))
        a = load_run_config(path)
        b = load_run_config(path, seed_override=2)
        assert a.seed == 1 and b.seed == 2
        assert a.corpus.seed != b.corpus.seed

    def test_hash_tracks_content(self, tmp_path):
        a = tiny_config(tmp_path)
        b = tiny_config(tmp_path, seed=12)
        assert config_hash(a) != config_hash(b)
        assert config_hash(a) == config_hash(tiny_config(tmp_path))

    def test_invalid_json_rejected(self, tmp_path):
        path = tmp_path / "broken.json"
        path.write_text("{nope")
        with pytest.raises(ConfigError):
            load_run_config(path)


class TestCorpus:
    def test_manifest_regenerates_identical_scenes(self, tmp_path):
        cfg = tiny_config(tmp_path)
        scenes = build_corpus(cfg.corpus)
        manifest = corpus_manifest(cfg.corpus)
        rebuilt = corpus_from_manifest(manifest)
        assert len(scenes) == len(rebuilt)
        for a, b in zip(scenes, rebuilt):
            assert np.array_equal(a.background, b.background)
            assert a.spec == b.spec

    def test_counts_and_static_flags(self, tmp_path):
        cfg = tiny_config(tmp_path)
        scenes = build_corpus(cfg.corpus)
        assert sum(1 for s in scenes if s.spec.static_flag) == 1
        assert sum(1 for s in scenes if not s.spec.static_flag) == 3


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    tmp_path = tmp_path_factory.mktemp("run")
    cfg = tiny_config(tmp_path)
    paths = run_train(cfg, Path(cfg.output_dir))
    return cfg, paths


class TestRunTrain:
    def test_artifacts_written(self, trained):
        _cfg, paths = trained
        for key in ("checkpoint", "curve", "config_echo", "corpus",
                    "checkpoint_shutter_only", "curve_shutter_only"):
            assert Path(paths[key]).exists(), key

    def test_curve_rerun_byte_identical(self, trained, tmp_path):
        cfg, paths = trained
        rerun = run_train(cfg, tmp_path / "again")
        assert (Path(paths["curve"]).read_bytes()
                == Path(rerun["curve"]).read_bytes())

    def test_config_echo_is_canonical(self, trained):
        cfg, paths = trained
        assert (Path(paths["config_echo"]).read_text()
                == canonical_json(cfg) + "\n")


class TestRunCompare:
    def test_rows_complete_and_aggregates_consistent(self, trained):
        cfg, paths = trained
        report = run_compare(cfg, paths["checkpoint"],
                             paths["checkpoint_shutter_only"])
        n_scenes = cfg.eval_corpus.dynamic_scenes + cfg.eval_corpus.static_scenes
        schedulers = {"agent", "fixed", "heuristic", "snr_optimal",
                      "shutter_only"}
        assert {r["scheduler"] for r in report.rows} == schedulers
        for s in schedulers:
            assert sum(1 for r in report.rows if r["scheduler"] == s) == n_scenes
        fresh_agg, fresh_buckets = aggregate_rows(report.rows,
                                                  cfg.eval.motion_buckets)
        assert fresh_agg == report.aggregates
        assert fresh_buckets == report.buckets

    def test_report_rerun_byte_identical(self, trained, tmp_path):
        cfg, paths = trained
        r1 = run_compare(cfg, paths["checkpoint"],
                         paths["checkpoint_shutter_only"])
        r2 = run_compare(cfg, paths["checkpoint"],
                         paths["checkpoint_shutter_only"])
        p1, p2 = tmp_path / "r1.json", tmp_path / "r2.json"
        write_report_json(r1, p1)
        write_report_json(r2, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_random_policy_report(self, trained):
        cfg, _paths = trained
        report = run_random_policy(cfg)
        assert {r["scheduler"] for r in report.rows} == {"random"}
        assert "random" in report.aggregates


class TestRunGap:
    def test_oracle_dominates_and_columns_present(self, trained):
        cfg, paths = trained
        report = run_gap(cfg, paths["checkpoint"])
        assert len(report.gap_rows) == cfg.eval.gap_scenes
        for row in report.gap_rows:
            assert row["ours"] <= row["best"] + 1e-12
            assert row["worst"] <= row["average"] <= row["best"]
        assert set(report.gap_summary) >= {"ours", "worst", "average", "best"}

    def test_gap_rerun_identical(self, trained, tmp_path):
        cfg, paths = trained
        r1 = run_gap(cfg, paths["checkpoint"])
        r2 = run_gap(cfg, paths["checkpoint"])
        p1, p2 = tmp_path / "g1.json", tmp_path / "g2.json"
        write_report_json(r1, p1)
        write_report_json(r2, p2)
        assert p1.read_bytes() == p2.read_bytes()


class TestPlots:
    def test_round_trip_matches_report(self, trained, tmp_path):
        cfg, paths = trained
        report = run_compare(cfg, paths["checkpoint"],
                             paths["checkpoint_shutter_only"])
        outdir = tmp_path / "plots"
        emit_plots(report, outdir)
        got = {series: value
               for series, _x, value in read_svg_values(outdir / "mean_psnr.svg")}
        for name, agg in report.aggregates.items():
            assert got[name] == pytest.approx(agg["mean_psnr_mu"], abs=5e-7)
        bucket_values = read_svg_values(outdir / "motion_buckets.svg")
        by_key = {(s, x): v for s, x, v in bucket_values}
        for name, blist in report.buckets.items():
            for b in blist:
                label = "0" if b["hi"] == 0.0 else f"({b['lo']:g},{b['hi']:g}]"
                if b["mean_psnr_mu"] is not None:
                    assert by_key[(name, label)] == pytest.approx(
                        b["mean_psnr_mu"], abs=5e-7)

    def test_identical_report_byte_identical_plots(self, trained, tmp_path):
        cfg, paths = trained
        report = run_compare(cfg, paths["checkpoint"],
                             paths["checkpoint_shutter_only"])
        d1, d2 = tmp_path / "p1", tmp_path / "p2"
        emit_plots(report, d1)
        emit_plots(report, d2)
        assert (d1 / "mean_psnr.svg").read_bytes() == (d2 / "mean_psnr.svg").read_bytes()
        assert (d1 / "motion_buckets.svg").read_bytes() == (d2 / "motion_buckets.svg").read_bytes()


class TestCli:
    def write_cfg(self, tmp_path):
        path = tmp_path / "cfg.json"
        path.write_text(json.dumps({
            "seed": 5,
            "output_dir": str(tmp_path / "out"),
            "corpus": {"dynamic_scenes": 2, "static_scenes": 1, "width": 48,
                       "height": 48, "motion_range": [5.0, 25.0]},
            "eval_corpus": {"dynamic_scenes": 2, "static_scenes": 1,
                            "width": 48, "height": 48, "seed": 6,
                            "motion_range": [5.0, 25.0]},
            "train": {"episodes": 8, "episodes_per_epoch": 4},
            "train_shutter_only": False,
            "eval": {"gap_scenes": 1, "gap_iso_indices": [6, 12],
                     "gap_shutter_indices": [5, 12], "compute_ssim": False},
        }))
        return path

    def test_generate_corpus_and_train_and_compare(self, tmp_path, capsys):
        cfg_path = self.write_cfg(tmp_path)
        assert cli_main(["generate-corpus", "--config", str(cfg_path)]) == 0
        assert (tmp_path / "out" / "corpus_train.json").exists()
        assert cli_main(["train", "--config", str(cfg_path)]) == 0
        ckpt = tmp_path / "out" / "checkpoint.npz"
        assert ckpt.exists()
        assert cli_main(["compare", "--config", str(cfg_path),
                         "--checkpoint", str(ckpt)]) == 0
        report = tmp_path / "out" / "report.json"
        assert report.exists()
        assert cli_main(["gap", "--config", str(cfg_path),
                         "--checkpoint", str(ckpt)]) == 0
        assert (tmp_path / "out" / "gap_report.json").exists()
        plots_dir = tmp_path / "plots"
        assert cli_main(["plot", "--report", str(report),
                         "--output-dir", str(plots_dir)]) == 0
        assert (plots_dir / "mean_psnr.svg").exists()

    def test_config_error_exit_code(self, tmp_path):
        bad = tmp_path / "bad.json"
        bad.write_text(json.dumps({"corpus": {"bogus": True}}))
        assert cli_main(["train", "--config", str(bad)]) == 1
        missing = tmp_path / "missing.json"
        assert cli_main(["train", "--config", str(missing)]) == 1

    def test_seed_override_changes_corpus(self, tmp_path):
        cfg_path = self.write_cfg(tmp_path)
        assert cli_main(["generate-corpus", "--config", str(cfg_path),
                         "--output-dir", str(tmp_path / "a")]) == 0
        assert cli_main(["generate-corpus", "--config", str(cfg_path),
                         "--seed", "99",
                         "--output-dir", str(tmp_path / "b")]) == 0
        a = (tmp_path / "a" / "corpus_train.json").read_text()
        b = (tmp_path / "b" / "corpus_train.json").read_text()
        assert a != b
