"""Experiment orchestration: corpus generation, training, comparison, gap.

Every artifact is a pure function of the run config and seeds: scene corpora
regenerate from manifests, sensor noise is state-keyed, reports carry the
config hash, and single-worker training is bit-reproducible.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from . import __version__
from .agent import (FeatureConfig, NearestGridAgent, RandomAgent, TrainedAgent,
                    load_checkpoint, run_episode, save_checkpoint, train)
from .baselines import (exhaustive_oracle, fixed_bracket,
                        histogram_heuristic_bracket, radiance_histogram,
                        schedule_of, shutter_only_agent, snr_optimal_bracket)
from .config import (CorpusConfig, RunConfig, canonical_json, config_hash,
                     config_to_dict)
from .env import ExposureEnv, state_from_schedule
from .errors import ConfigError, TrainingDivergenceError
from .reporting import (Report, aggregate_rows, bar_chart_svg, line_chart_svg,
                        write_curve_csv, write_report_json, write_rows_csv)
from .scene import RadianceScene, SceneSpec, generate_scene

COMPARE_COLUMNS = ["scheduler", "scene_id", "static", "motion", "psnr_mu",
                   "ssim_mu", "score", "frames"]
SCHEDULERS = ("agent", "fixed", "heuristic", "snr_optimal", "shutter_only")


def corpus_specs(cfg: CorpusConfig) -> list[SceneSpec]:
    """Deterministic scene spec list for a corpus config."""
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 31]))
    specs = []
    for i in range(cfg.dynamic_scenes):
        specs.append(SceneSpec(
            width=cfg.width, height=cfg.height,
            dynamic_range_stops=float(rng.uniform(*cfg.dynamic_range)),
            object_count=int(rng.integers(cfg.object_range[0],
                                          cfg.object_range[1] + 1)),
            motion_magnitude=float(rng.uniform(*cfg.motion_range)),
            static_flag=False,
            seed=int(rng.integers(0, 2 ** 31)),
        ))
    for i in range(cfg.static_scenes):
        specs.append(SceneSpec(
            width=cfg.width, height=cfg.height,
            dynamic_range_stops=float(rng.uniform(*cfg.dynamic_range)),
            object_count=int(rng.integers(cfg.object_range[0],
                                          cfg.object_range[1] + 1)),
            motion_magnitude=0.0, static_flag=True,
            seed=int(rng.integers(0, 2 ** 31)),
        ))
    return specs


def build_corpus(cfg: CorpusConfig) -> list[RadianceScene]:
    return [generate_scene(spec, frame_interval=cfg.frame_interval)
            for spec in corpus_specs(cfg)]


def corpus_manifest(cfg: CorpusConfig) -> dict:
    return {
        "corpus_config": {f: getattr(cfg, f) for f in
                          ("dynamic_scenes", "static_scenes", "width", "height",
                           "frame_interval", "seed")} | {
            "dynamic_range": list(cfg.dynamic_range),
            "motion_range": list(cfg.motion_range),
            "object_range": list(cfg.object_range)},
        "scenes": [
            {"width": s.width, "height": s.height,
             "dynamic_range_stops": s.dynamic_range_stops,
             "object_count": s.object_count,
             "motion_magnitude": s.motion_magnitude,
             "static_flag": s.static_flag, "seed": s.seed}
            for s in corpus_specs(cfg)
        ],
    }


def corpus_from_manifest(manifest: dict) -> list[RadianceScene]:
    interval = manifest["corpus_config"]["frame_interval"]
    return [generate_scene(SceneSpec(**spec), frame_interval=interval)
            for spec in manifest["scenes"]]


def write_manifest(manifest: dict, path) -> None:
    Path(path).write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")


def _metadata(cfg: RunConfig) -> dict:
    return {"config_hash": config_hash(cfg), "seed": cfg.seed,
            "version": __version__}


def run_generate_corpus(cfg: RunConfig, outdir: Path) -> dict:
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {}
    for name, corpus in (("train", cfg.corpus), ("eval", cfg.eval_corpus)):
        path = outdir / f"corpus_{name}.json"
        write_manifest(corpus_manifest(corpus), path)
        paths[name] = path
    (outdir / "config_echo.json").write_text(canonical_json(cfg) + "\n")
    return paths


def run_train(cfg: RunConfig, outdir: Path) -> dict:
    """Train the agent (and the shutter-only ablation), write artifacts."""
    outdir.mkdir(parents=True, exist_ok=True)
    scenes = build_corpus(cfg.corpus)
    try:
        result = train(scenes, cfg.camera, cfg.fusion, cfg.reward, cfg.train)
    except TrainingDivergenceError as exc:
        epoch = (exc.episode // cfg.train.episodes_per_epoch
                 if exc.episode is not None else None)
        raise TrainingDivergenceError(
            f"training diverged at epoch {epoch}: {exc}", episode=exc.episode,
            epoch=epoch) from exc
    echo = config_to_dict(cfg)
    paths = {
        "checkpoint": outdir / "checkpoint.npz",
        "curve": outdir / "curve.csv",
        "config_echo": outdir / "config_echo.json",
        "corpus": outdir / "corpus_train.json",
    }
    save_checkpoint(paths["checkpoint"], result.agent, cfg.train,
                    config_echo=echo)
    write_curve_csv(result.curve, paths["curve"])
    (outdir / "config_echo.json").write_text(canonical_json(cfg) + "\n")
    write_manifest(corpus_manifest(cfg.corpus), paths["corpus"])
    if cfg.train_shutter_only:
        ablation = shutter_only_agent(scenes, cfg.camera, cfg.fusion,
                                      cfg.reward, cfg.train)
        paths["checkpoint_shutter_only"] = outdir / "checkpoint_shutter_only.npz"
        paths["curve_shutter_only"] = outdir / "curve_shutter_only.csv"
        from dataclasses import replace
        save_checkpoint(paths["checkpoint_shutter_only"], ablation.agent,
                        replace(cfg.train, fixed_iso=200), config_echo=echo)
        write_curve_csv(ablation.curve, paths["curve_shutter_only"])
    paths["train_curve_rows"] = result.curve
    return paths


def _check_checkpoint_compatible(meta: dict, cfg: RunConfig) -> None:
    echo = meta.get("config_echo", {})
    if not echo:
        return
    for key in ("hist_bins", "semantic_grid", "max_frames"):
        want = getattr(cfg.train, key)
        got = echo.get("train", {}).get(key)
        if got is not None and got != want:
            raise ConfigError(
                f"checkpoint trained with train.{key}={got}, config has {want}")


def _scene_env(cfg: RunConfig, scene: RadianceScene, scene_id: int,
               iso_lock: int | None = None) -> ExposureEnv:
    seed = int(np.random.SeedSequence(
        [cfg.eval.seed, scene_id, 57]).generate_state(1)[0])
    return ExposureEnv(scene, cfg.camera, cfg.fusion, cfg.reward,
                       episode_seed=seed, max_frames=cfg.train.max_frames,
                       iso_lock=iso_lock)


def _evaluate_schedule(env: ExposureEnv, schedule, with_ssim: bool) -> dict:
    state = state_from_schedule(schedule)
    return env.evaluate_state(state, with_ssim=with_ssim)


def run_compare(cfg: RunConfig, checkpoint_path,
                shutter_checkpoint_path=None) -> Report:
    """Evaluate the trained agent against the reference schedulers."""
    agent, meta = load_checkpoint(checkpoint_path)
    _check_checkpoint_compatible(meta, cfg)
    shutter_agent = None
    if shutter_checkpoint_path is not None:
        shutter_agent, _ = load_checkpoint(shutter_checkpoint_path)
    scenes = build_corpus(cfg.eval_corpus)
    feature_cfg = agent.feature_cfg
    with_ssim = cfg.eval.compute_ssim
    budget = cfg.eval.snr_budget or cfg.eval_corpus.frame_interval
    rows = []
    traces = []
    for scene_id, scene in enumerate(scenes):
        env = _scene_env(cfg, scene, scene_id)

        def add_row(name: str, metrics: dict):
            row = {"scheduler": name, "scene_id": scene_id,
                   "static": scene.spec.static_flag,
                   "motion": scene.spec.motion_magnitude,
                   "psnr_mu": metrics["psnr_mu"], "score": metrics["score"],
                   "frames": metrics["frames"]}
            if with_ssim:
                row["ssim_mu"] = metrics["ssim_mu"]
            rows.append(row)

        trace, _ = run_episode(env, agent, feature_cfg, rng=None)
        add_row("agent", env.evaluate_state(trace.final_state, with_ssim))
        traces.append({"scene_id": scene_id} | trace.to_dict())

        fixed = fixed_bracket(scene, cfg.camera)
        add_row("fixed", _evaluate_schedule(env, fixed, with_ssim))

        previews = env.render_state(env.reset())
        mid_preview = previews[env.reset().ref_index]
        heuristic = histogram_heuristic_bracket(
            [mid_preview], cfg.camera, scene.frame_interval,
            seed=cfg.eval.seed, fallback=fixed)
        add_row("heuristic", _evaluate_schedule(env, heuristic, with_ssim))

        snr = snr_optimal_bracket(radiance_histogram(scene), budget, cfg.camera,
                                  fusion_cfg=cfg.fusion)
        add_row("snr_optimal", _evaluate_schedule(env, snr, with_ssim))

        if shutter_agent is not None:
            lock_env = _scene_env(cfg, scene, scene_id, iso_lock=200)
            trace, _ = run_episode(lock_env, shutter_agent, feature_cfg, rng=None)
            add_row("shutter_only",
                    lock_env.evaluate_state(trace.final_state, with_ssim))

    aggregates, buckets = aggregate_rows(rows, cfg.eval.motion_buckets)
    return Report(metadata=_metadata(cfg), rows=rows, aggregates=aggregates,
                  buckets=buckets, traces=traces)


def run_random_policy(cfg: RunConfig) -> Report:
    """Uniform-random policy over the same evaluation corpus."""
    scenes = build_corpus(cfg.eval_corpus)
    rows = []
    rng = np.random.default_rng(np.random.SeedSequence([cfg.eval.seed, 71]))
    feature_cfg = FeatureConfig(max_frames=cfg.train.max_frames)
    for scene_id, scene in enumerate(scenes):
        env = _scene_env(cfg, scene, scene_id)
        trace, _ = run_episode(env, RandomAgent(), feature_cfg, rng=rng)
        metrics = env.evaluate_state(trace.final_state, cfg.eval.compute_ssim)
        row = {"scheduler": "random", "scene_id": scene_id,
               "static": scene.spec.static_flag,
               "motion": scene.spec.motion_magnitude,
               "psnr_mu": metrics["psnr_mu"], "score": metrics["score"],
               "frames": metrics["frames"]}
        if cfg.eval.compute_ssim:
            row["ssim_mu"] = metrics["ssim_mu"]
        rows.append(row)
    aggregates, buckets = aggregate_rows(rows, cfg.eval.motion_buckets)
    return Report(metadata=_metadata(cfg), rows=rows, aggregates=aggregates,
                  buckets=buckets)


def run_gap(cfg: RunConfig, checkpoint_path) -> Report:
    """Oracle-gap study on reduced grids with 3-frame episodes."""
    agent, meta = load_checkpoint(checkpoint_path)
    _check_checkpoint_compatible(meta, cfg)
    restricted = NearestGridAgent(agent, cfg.eval.gap_iso_indices,
                                  cfg.eval.gap_shutter_indices)
    scenes = build_corpus(cfg.eval_corpus)[:cfg.eval.gap_scenes]
    gap_rows = []
    for scene_id, scene in enumerate(scenes):
        seed = int(np.random.SeedSequence(
            [cfg.eval.seed, scene_id, 57]).generate_state(1)[0])
        oracle = exhaustive_oracle(
            scene, cfg.eval.gap_iso_indices, cfg.eval.gap_shutter_indices,
            cfg.camera, cfg.fusion, cfg.reward,
            max_actions=cfg.eval.gap_max_actions, episode_seed=seed,
            max_frames=3)
        env = ExposureEnv(scene, cfg.camera, cfg.fusion, cfg.reward,
                          episode_seed=seed, max_frames=3)
        trace, _ = run_episode(env, restricted, agent.feature_cfg, rng=None)
        ours_state = trace.final_state
        qualities = [c.quality for c in oracle.candidates]
        psnr_ours = env.evaluate_state(ours_state, with_ssim=False)["psnr_mu"]
        psnr_best = env.evaluate_state(oracle.best_state,
                                       with_ssim=False)["psnr_mu"]
        gap_rows.append({
            "scene_id": scene_id, "motion": scene.spec.motion_magnitude,
            "static": scene.spec.static_flag,
            "ours": env.score_state(ours_state),
            "best": oracle.best_quality,
            "worst": float(min(qualities)),
            "average": float(np.mean(qualities)),
            "ours_psnr_mu": psnr_ours,
            "best_psnr_mu": psnr_best,
            "best_frames": len(oracle.best_state.frames),
        })
    summary = {
        "ours": float(np.mean([r["ours"] for r in gap_rows])),
        "best": float(np.mean([r["best"] for r in gap_rows])),
        "worst": float(np.mean([r["worst"] for r in gap_rows])),
        "average": float(np.mean([r["average"] for r in gap_rows])),
        "ours_psnr_mu": float(np.mean([r["ours_psnr_mu"] for r in gap_rows])),
        "best_psnr_mu": float(np.mean([r["best_psnr_mu"] for r in gap_rows])),
    }
    return Report(metadata=_metadata(cfg), gap_rows=gap_rows,
                  gap_summary=summary)


def emit_plots(report: Report, outdir: Path) -> list[Path]:
    """Deterministic SVG plots whose numbers mirror the report exactly."""
    outdir.mkdir(parents=True, exist_ok=True)
    written = []
    if report.aggregates:
        labels = sorted(report.aggregates)
        values = [report.aggregates[s]["mean_psnr_mu"] for s in labels]
        path = outdir / "mean_psnr.svg"
        bar_chart_svg("Mean PSNR-mu by scheduler", labels, values, path)
        written.append(path)
    if report.buckets:
        series = {}
        for name, blist in report.buckets.items():
            pts = []
            for b in blist:
                label = ("0" if b["hi"] == 0.0
                         else f"({b['lo']:g},{b['hi']:g}]")
                pts.append((label, b["mean_psnr_mu"]))
            series[name] = pts
        path = outdir / "motion_buckets.svg"
        line_chart_svg("PSNR-mu by motion bucket", series, path)
        written.append(path)
    if report.gap_rows:
        labels = ["ours", "worst", "average", "best"]
        values = [report.gap_summary[k] for k in labels]
        path = outdir / "oracle_gap.svg"
        bar_chart_svg("Quality score vs exhaustive oracle", labels, values,
                      path, unit="quality score")
        written.append(path)
    if report.curve:
        series = {"mean_score": [(str(r["epoch"]), r["mean_score"])
                                 for r in report.curve]}
        path = outdir / "training_curve.svg"
        line_chart_svg("Training curve", series, path, unit="quality score")
        written.append(path)
    return written


def write_compare_outputs(report: Report, outdir: Path) -> dict:
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {"report": outdir / "report.json",
             "rows": outdir / "report_rows.csv"}
    write_report_json(report, paths["report"])
    columns = [c for c in COMPARE_COLUMNS
               if any(c in r for r in report.rows)]
    write_rows_csv(report.rows, paths["rows"], columns)
    if report.traces:
        paths["traces"] = outdir / "agent_traces.json"
        paths["traces"].write_text(
            json.dumps(report.traces, sort_keys=True, indent=2) + "\n")
    for p in emit_plots(report, outdir):
        paths[p.stem] = p
    return paths


def write_gap_outputs(report: Report, outdir: Path) -> dict:
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {"report": outdir / "gap_report.json",
             "rows": outdir / "gap_rows.csv"}
    write_report_json(report, paths["report"])
    columns = ["scene_id", "static", "motion", "ours", "worst", "average",
               "best", "ours_psnr_mu", "best_psnr_mu", "best_frames"]
    write_rows_csv(report.gap_rows, paths["rows"], columns)
    for p in emit_plots(report, outdir):
        paths[p.stem] = p
    return paths
