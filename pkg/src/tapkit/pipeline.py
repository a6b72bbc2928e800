"""Stage orchestration: configuration, artifacts, and run manifests.

Every stage reads and writes files under one output directory, so a full
`pipeline` run is byte-identical to running the stages one at a time with the
same seed. Each command ends by writing a manifest with sha256 checksums of
the artifacts it produced.
"""

from __future__ import annotations

import copy
import dataclasses
import json
import logging
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .core import ProposalSet, Source, Subset
from .engine import Dense, ReLU, Sequential, Sigmoid, grad_check, load_model, mse_loss, save_model
from .errors import ConfigError, DataFormatError, DivergenceError, StageDependencyError
from .fusion import NmsConfig, RefineConfig, nms, refine
from .ingest import (
    SynthConfig,
    generate_synthetic,
    load_annotations,
    load_features,
    read_classification,
    read_results,
    save_annotations,
    save_features,
    write_classification,
    write_localization,
    write_results,
)
from .metrics import (
    ar_an,
    attach_labels,
    average_map,
    eval_at_n,
    gt_intervals,
    mean_ap,
    tiou_grid,
    uniform_random_proposals,
)
from .ssad import SsadConfig, build_anchor_pyramid, build_model, load_ssad, save_ssad
from .ssad import infer as ssad_infer
from .ssad import train as ssad_train
from .tag import TagConfig, build_mlp, predict_actionness, tag_proposals, train_actionness
from .util import KEY_GRADCHECK, map_ordered, rng_for, sha256_file, write_json_atomic

logger = logging.getLogger("tapkit")

NMS_PLACEMENTS = ("before", "after", "off")


@dataclass(frozen=True)
class EvalOptions:
    an_max: int = 100
    ar_at: tuple[int, ...] = (10, 100)
    at_n: tuple[int, ...] = (1, 5, 10, 25, 100)
    top_c: int = 1
    subset: str = "validation"
    map_points: tuple[float, ...] = (0.5, 0.75, 0.95)

    def validate(self) -> None:
        if self.an_max < 1:
            raise ConfigError("eval.an_max must be >= 1")
        if not self.ar_at or any(not 1 <= n <= self.an_max for n in self.ar_at):
            raise ConfigError(f"eval.ar_at values must lie in 1..{self.an_max}")
        if not self.at_n or any(n < 1 for n in self.at_n):
            raise ConfigError("eval.at_n values must be >= 1")
        if self.top_c < 1:
            raise ConfigError("eval.top_c must be >= 1")
        try:
            Subset(self.subset)
        except ValueError:
            raise ConfigError(f"eval.subset must be one of {[s.value for s in Subset]}") from None
        for t in self.map_points:
            if not 0.0 < t <= 1.0:
                raise ConfigError(f"eval.map_points values must lie in (0, 1], got {t}")


def _section_defaults(dc_cls, skip=()) -> dict:
    out = {}
    for f in dataclasses.fields(dc_cls):
        if f.name in skip:
            continue
        value = f.default if f.default is not dataclasses.MISSING else f.default_factory()
        out[f.name] = list(value) if isinstance(value, tuple) else value
    return out


def config_defaults() -> dict:
    return {
        "seed": 0,
        "output_dir": "tapkit_out",
        "annotations": None,
        "features_dir": None,
        "classification": None,
        "synth": _section_defaults(SynthConfig, skip=("seed",)),
        "ssad": _section_defaults(SsadConfig),
        "tag": _section_defaults(TagConfig),
        "refine": _section_defaults(RefineConfig),
        "nms": {**_section_defaults(NmsConfig), "placement": "after"},
        "eval": _section_defaults(EvalOptions),
    }


def _deep_merge(base: dict, override: dict, path: str = "") -> dict:
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ConfigError(f"config key {where!r} must be an object")
            _deep_merge(base[key], value, where + ".")
        else:
            base[key] = value
    return base


def apply_set_overrides(data: dict, assignments: list[str]) -> None:
    """Dotted-path overrides; values parse as JSON literals, else strings."""
    for assignment in assignments:
        key, sep, raw = assignment.partition("=")
        if not sep or not key:
            raise ConfigError(f"--set expects KEY=VALUE, got {assignment!r}")
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        node = data
        parts = key.split(".")
        for part in parts[:-1]:
            node = node.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"--set key {key!r} crosses a non-object value")
        node[parts[-1]] = value


def _build_section(dc_cls, section: dict, what: str, **extra):
    kwargs = dict(section)
    kwargs.update(extra)
    names = {f.name for f in dataclasses.fields(dc_cls)}
    unknown = sorted(set(kwargs) - names)
    if unknown:
        raise ConfigError(f"unknown {what} config key {unknown[0]!r}")
    for name, value in list(kwargs.items()):
        if isinstance(value, list):
            kwargs[name] = tuple(value)
    try:
        obj = dc_cls(**kwargs)
    except TypeError as exc:
        raise ConfigError(f"bad {what} config: {exc}") from exc
    if hasattr(obj, "validate"):
        obj.validate()
    return obj


@dataclass(frozen=True)
class PipelineConfig:
    seed: int
    output_dir: Path
    annotations: Path
    features_dir: Path
    classification: Path
    synth: SynthConfig
    ssad: SsadConfig
    tag: TagConfig
    refine: RefineConfig
    nms: NmsConfig
    nms_placement: str
    eval: EvalOptions
    snapshot: dict = field(repr=False)

    @staticmethod
    def from_dict(data: dict) -> "PipelineConfig":
        merged = _deep_merge(config_defaults(), data)
        if not isinstance(merged["seed"], int) or isinstance(merged["seed"], bool):
            raise ConfigError(f"seed must be an integer, got {merged['seed']!r}")
        out_dir = Path(merged["output_dir"])
        nms_section = dict(merged["nms"])
        placement = nms_section.pop("placement")
        if placement not in NMS_PLACEMENTS:
            raise ConfigError(f"nms.placement must be one of {NMS_PLACEMENTS}, got {placement!r}")
        cfg = PipelineConfig(
            seed=merged["seed"],
            output_dir=out_dir,
            annotations=Path(merged["annotations"]) if merged["annotations"] else out_dir / "annotations.json",
            features_dir=Path(merged["features_dir"]) if merged["features_dir"] else out_dir / "features",
            classification=Path(merged["classification"]) if merged["classification"] else out_dir / "classification.json",
            synth=_build_section(SynthConfig, merged["synth"], "synth", seed=merged["seed"]),
            ssad=_build_section(SsadConfig, merged["ssad"], "ssad"),
            tag=_build_section(TagConfig, merged["tag"], "tag"),
            refine=_build_section(RefineConfig, merged["refine"], "refine"),
            nms=_build_section(NmsConfig, nms_section, "nms"),
            nms_placement=placement,
            eval=_build_section(EvalOptions, merged["eval"], "eval"),
            snapshot=merged,
        )
        return cfg


def load_config(
    config_path: str | None,
    set_overrides: list[str] | None = None,
    seed: int | None = None,
    output_dir: str | None = None,
) -> PipelineConfig:
    """Config file -> CLI flags -> --set pairs -> TAPKIT_SEED, in that order."""
    if config_path is not None:
        try:
            with open(config_path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except OSError as exc:
            raise ConfigError(f"cannot read config file {config_path}: {exc}") from exc
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path} is not valid JSON: {exc}") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config file {config_path} must hold a JSON object")
    else:
        data = {}
    if output_dir is not None:
        data["output_dir"] = output_dir
    if seed is not None:
        data["seed"] = seed
    apply_set_overrides(data, list(set_overrides or []))
    env_seed = os.environ.get("TAPKIT_SEED")
    if env_seed is not None:
        try:
            data["seed"] = int(env_seed)
        except ValueError:
            raise ConfigError(f"TAPKIT_SEED must be an integer, got {env_seed!r}") from None
    return PipelineConfig.from_dict(copy.deepcopy(data))


# --------------------------------------------------------------------------
# stage plumbing


def _require(path: Path, producer: str) -> None:
    if not path.exists():
        raise StageDependencyError(f"{path} not found; run `{producer}` first")


def _load_index(cfg: PipelineConfig):
    _require(cfg.annotations, "synth")
    return load_annotations(cfg.annotations)


def _feature_path(cfg: PipelineConfig, video_id: str) -> Path:
    return cfg.features_dir / f"{video_id}.feat"


def _load_feature_map(cfg: PipelineConfig, records):
    out = {}
    for rec in records:
        path = _feature_path(cfg, rec.video_id)
        _require(path, "synth")
        out[rec.video_id] = load_features(path, rec.video_id)
    return out


def _write_loss_csv(trace: list[float], path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("epoch,loss\n")
        for i, loss in enumerate(trace, start=1):
            f.write(f"{i},{loss!r}\n")


def _write_curve_csv(curve, path: Path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("an,ar\n")
        for an, value in enumerate(curve.ar, start=1):
            f.write(f"{an},{value!r}\n")


def _eval_subset(cfg: PipelineConfig) -> Subset:
    return Subset(cfg.eval.subset)


# --------------------------------------------------------------------------
# stages


def run_synth(cfg: PipelineConfig) -> list[Path]:
    index, features, classification = generate_synthetic(cfg.synth)
    save_annotations(index, cfg.annotations)
    paths = [cfg.annotations]
    for vid in sorted(features):
        path = _feature_path(cfg, vid)
        save_features(features[vid], path)
        paths.append(path)
    write_classification(classification, cfg.classification)
    paths.append(cfg.classification)
    n_train = len(index.subset_videos(Subset.TRAINING))
    n_val = len(index.subset_videos(Subset.VALIDATION))
    logger.info("synth: %d videos (%d training, %d validation), %d classes",
                len(index.videos), n_train, n_val, len(index.label_set))
    return paths


def run_train_ssad(cfg: PipelineConfig) -> list[Path]:
    index = _load_index(cfg)
    records = index.subset_videos(Subset.TRAINING)
    if not records:
        raise DataFormatError("no training videos in annotations")
    features = _load_feature_map(cfg, records)
    model = build_model(cfg.ssad, cfg.seed)
    trace = ssad_train(model, records, features, cfg.seed)
    model_path = cfg.output_dir / "ssad_model.tapm"
    save_ssad(model, model_path)
    loss_path = cfg.output_dir / "ssad_loss.csv"
    _write_loss_csv(trace, loss_path)
    if trace:
        logger.info("train-ssad: %d epochs, loss %.6f -> %.6f", len(trace), trace[0], trace[-1])
    else:
        logger.info("train-ssad: 0 epochs, model saved untrained")
    return [model_path, loss_path]


def run_train_tag(cfg: PipelineConfig) -> list[Path]:
    index = _load_index(cfg)
    records = index.subset_videos(Subset.TRAINING)
    if not records:
        raise DataFormatError("no training videos in annotations")
    features = _load_feature_map(cfg, records)
    feature_dim = features[records[0].video_id].feature_dim
    model = build_mlp(feature_dim, cfg.tag, cfg.seed)
    trace = train_actionness(model, records, features, cfg.tag, cfg.seed)
    model_path = cfg.output_dir / "tag_model.tapm"
    save_model(model.layers, model_path)
    loss_path = cfg.output_dir / "tag_loss.csv"
    _write_loss_csv(trace, loss_path)
    if trace:
        logger.info("train-tag: %d epochs, loss %.6f -> %.6f", len(trace), trace[0], trace[-1])
    else:
        logger.info("train-tag: 0 epochs, model saved untrained")
    return [model_path, loss_path]


def run_infer(cfg: PipelineConfig) -> list[Path]:
    index = _load_index(cfg)
    records = index.subset_videos(_eval_subset(cfg))
    if not records:
        raise DataFormatError(f"no {cfg.eval.subset} videos in annotations")
    features = _load_feature_map(cfg, records)
    ssad_model_path = cfg.output_dir / "ssad_model.tapm"
    _require(ssad_model_path, "train-ssad")
    model = load_ssad(ssad_model_path, cfg.ssad)
    tag_model_path = cfg.output_dir / "tag_model.tapm"
    _require(tag_model_path, "train-tag")
    mlp = Sequential(load_model(tag_model_path))
    pyramid = build_anchor_pyramid(cfg.ssad)

    def work(rec):
        p_ssad = ssad_infer(model, features[rec.video_id], rec, pyramid)
        actionness = predict_actionness(mlp, features[rec.video_id])
        p_tag = tag_proposals(actionness, cfg.tag, rec)
        return p_ssad, p_tag

    results = map_ordered(work, records)
    ssad_sets = {rec.video_id: pair[0] for rec, pair in zip(records, results)}
    tag_sets = {rec.video_id: pair[1] for rec, pair in zip(records, results)}
    ssad_path = cfg.output_dir / "proposals_ssad.json"
    tag_path = cfg.output_dir / "proposals_tag.json"
    write_results(ssad_sets, ssad_path)
    write_results(tag_sets, tag_path)
    n_tag = sum(len(s) for s in tag_sets.values())
    logger.info("infer: %d videos, %d anchor proposals/video, %d grouped proposals total",
                len(records), len(pyramid), n_tag)
    return [ssad_path, tag_path]


def run_refine(cfg: PipelineConfig) -> list[Path]:
    ssad_path = cfg.output_dir / "proposals_ssad.json"
    tag_path = cfg.output_dir / "proposals_tag.json"
    _require(ssad_path, "infer")
    _require(tag_path, "infer")
    ssad_sets = read_results(ssad_path)
    tag_sets = read_results(tag_path)

    refined = {}
    ssad_final = {}
    for vid in sorted(ssad_sets):
        p_ssad = ssad_sets[vid]
        p_tag = tag_sets.get(vid, ProposalSet(vid, ()))
        if cfg.nms_placement == "before":
            kept = nms(p_ssad, cfg.nms)
            ssad_final[vid] = kept
            refined[vid] = refine(kept, p_tag, cfg.refine)
        elif cfg.nms_placement == "after":
            ssad_final[vid] = nms(p_ssad, cfg.nms)
            refined[vid] = nms(refine(p_ssad, p_tag, cfg.refine), cfg.nms)
        else:
            ssad_final[vid] = p_ssad
            refined[vid] = refine(p_ssad, p_tag, cfg.refine)

    refined_path = cfg.output_dir / "proposals_refined.json"
    final_path = cfg.output_dir / "proposals_ssad_final.json"
    write_results(refined, refined_path)
    write_results(ssad_final, final_path)
    n_replaced = sum(
        1 for pset in refined.values() for p in pset if p.source == Source.REFINED
    )
    logger.info("refine: %d videos, %d boundaries replaced, nms placement %r",
                len(refined), n_replaced, cfg.nms_placement)
    return [refined_path, final_path]


def run_eval_prop(cfg: PipelineConfig) -> list[Path]:
    index = _load_index(cfg)
    subset = _eval_subset(cfg)
    gt = gt_intervals(index, subset)
    refined_path = cfg.output_dir / "proposals_refined.json"
    final_path = cfg.output_dir / "proposals_ssad_final.json"
    _require(refined_path, "refine")
    _require(final_path, "refine")

    sources = (
        ("refined", read_results(refined_path)),
        ("ssad", read_results(final_path)),
        ("baseline", uniform_random_proposals(index, subset, cfg.eval.an_max, cfg.seed)),
    )
    paths = []
    for name, props in sources:
        curve = ar_an(props, gt, cfg.eval.an_max)
        report = {
            "ar_at": {str(n): curve.ar_at(n) for n in cfg.eval.ar_at},
            "ar_an_area": curve.area,
            "curve": list(curve.ar),
        }
        report_path = cfg.output_dir / f"eval_prop_{name}.json"
        write_json_atomic(report_path, report)
        csv_path = cfg.output_dir / f"eval_prop_{name}_curve.csv"
        _write_curve_csv(curve, csv_path)
        paths += [report_path, csv_path]
        logger.info("eval-prop %s: ar_an_area=%.4f %s", name, curve.area,
                    " ".join(f"ar@{n}={curve.ar_at(n):.4f}" for n in cfg.eval.ar_at))
    return paths


def run_eval_loc(cfg: PipelineConfig) -> list[Path]:
    index = _load_index(cfg)
    subset = _eval_subset(cfg)
    refined_path = cfg.output_dir / "proposals_refined.json"
    _require(refined_path, "refine")
    _require(cfg.classification, "synth")
    proposals = read_results(refined_path)
    classification = read_classification(cfg.classification)

    localization = attach_labels(proposals, classification, cfg.eval.top_c)
    loc_path = cfg.output_dir / "localization.json"
    write_localization(localization, loc_path)

    grid = tiou_grid()
    report = {
        "map": {str(t): mean_ap(localization, index, t, subset) for t in cfg.eval.map_points},
        "average_map": average_map(localization, index, grid, subset),
        "at_n": {str(n): eval_at_n(localization, index, n, grid, subset) for n in cfg.eval.at_n},
    }
    report_path = cfg.output_dir / "eval_loc.json"
    write_json_atomic(report_path, report)
    csv_path = cfg.output_dir / "eval_loc.csv"
    with open(csv_path, "w", encoding="utf-8") as f:
        f.write("tiou,map\n")
        for t in grid:
            f.write(f"{t},{mean_ap(localization, index, t, subset)!r}\n")
    logger.info("eval-loc: average_map=%.4f %s", report["average_map"],
                " ".join(f"map@{k}={v:.4f}" for k, v in report["map"].items()))
    return [loc_path, report_path, csv_path]


def run_gradcheck(cfg: PipelineConfig) -> list[Path]:
    from .ssad import SsadModel

    rng = rng_for(cfg.seed, KEY_GRADCHECK)
    small = SsadConfig(input_length=16, feature_dim=4, hidden_channels=8)
    conv_model = SsadModel(small, rng=rng, dtype=np.float64)
    x = rng.standard_normal((2, 4, 16))
    conv_targets = rng.uniform(0.0, 1.0, size=(2, conv_model.num_anchors))
    conv_err = grad_check(conv_model, x, lambda y: mse_loss(y, conv_targets))

    mlp = Sequential([
        Dense(6, 8, rng=rng, dtype=np.float64),
        ReLU(),
        Dense(8, 1, rng=rng, dtype=np.float64),
        Sigmoid(),
    ])
    x2 = rng.standard_normal((32, 6))
    mlp_targets = rng.uniform(0.0, 1.0, size=(32, 1))
    mlp_err = grad_check(mlp, x2, lambda y: mse_loss(y, mlp_targets))

    worst = max(conv_err, mlp_err)
    payload = {
        "max_rel_error": worst,
        "threshold": 1e-3,
        "pass": bool(worst < 1e-3),
        "checks": {"conv_stack": conv_err, "mlp": mlp_err},
    }
    path = cfg.output_dir / "gradcheck.json"
    write_json_atomic(path, payload)
    logger.info("gradcheck: max relative error %.3e (threshold 1e-3)", worst)
    if worst >= 1e-3:
        raise DivergenceError(f"gradient check failed: max relative error {worst:.3e}")
    return [path]


def run_pipeline(cfg: PipelineConfig) -> list[Path]:
    paths = []
    for stage in (run_synth, run_train_ssad, run_train_tag, run_infer,
                  run_refine, run_eval_prop, run_eval_loc, run_gradcheck):
        paths += stage(cfg)
    return paths


STAGES = {
    "synth": run_synth,
    "train-ssad": run_train_ssad,
    "train-tag": run_train_tag,
    "infer": run_infer,
    "refine": run_refine,
    "eval-prop": run_eval_prop,
    "eval-loc": run_eval_loc,
    "gradcheck": run_gradcheck,
    "pipeline": run_pipeline,
}


def write_manifest(cfg: PipelineConfig, command: str, artifacts: list[Path], started: float) -> Path:
    checksums = {}
    for path in artifacts:
        try:
            key = str(path.relative_to(cfg.output_dir))
        except ValueError:
            key = str(path)
        checksums[key] = sha256_file(path)
    payload = {
        "command": command,
        "config": cfg.snapshot,
        "seed": cfg.seed,
        "artifacts": checksums,
        "wall_time_s": round(time.time() - started, 3),
        "version": __version__,
    }
    manifest_path = cfg.output_dir / f"manifest_{command}.json"
    write_json_atomic(manifest_path, payload)
    return manifest_path


def run_command(cfg: PipelineConfig, command: str) -> Path:
    if command not in STAGES:
        raise ConfigError(f"unknown command {command!r}")
    started = time.time()
    cfg.output_dir.mkdir(parents=True, exist_ok=True)
    artifacts = STAGES[command](cfg)
    manifest = write_manifest(cfg, command, artifacts, started)
    logger.info("%s: wrote %d artifacts, manifest %s", command, len(artifacts), manifest)
    return manifest
