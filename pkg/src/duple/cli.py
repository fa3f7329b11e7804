"""Command-line entry point: generate | features | train | eval | ablate.

Settings resolve as command-line flag > JSON config file > built-in default.
Every output document embeds the resolved config; a run writes into
``<out>/<command>-<config hash>`` so rerunning an identical config
overwrites the same directory with identical bytes.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import sys
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .dataio import SynthConfig, load_manifest, synth_generate
from .diffcore import ParamStore, load_checkpoint, save_checkpoint
from .episodic import (
    EvalConfig,
    ModelPredictor,
    PerfectPredictor,
    TrainConfig,
    evaluate,
    meta_train,
    prepare_data,
    write_confusion_csv,
)
from .featurize import FEATURE_NAMES
from .model import ABLATION_GRID, AblationConfig, build_model

log = logging.getLogger("duple")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2
COMMANDS = ("generate", "features", "train", "eval", "ablate")


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    data: str = "data"
    out: str = "runs"
    seed: int = 222
    # synthetic dataset
    n_classes: int = 3
    n_domains: int = 3
    per_cell: int = 60
    length: int = 4096
    sample_rate: float = 1000.0
    binary: bool = True
    # spectrogram
    window: int = 256
    hop: int = 128
    # episodes
    way: int = 3
    shot: int = 3
    query: int = 12
    train_query: int = 4
    train_episodes: int = 3000
    eval_episodes: int = 1000
    lr: float = 1e-3
    sources: list[str] = field(default_factory=lambda: ["d00", "d01"])
    target: str = "d02"
    # model
    enable_fpm: bool = True
    enable_sgn: bool = True
    enable_cdm: bool = True
    baseline: str = ""
    metric: str = "cosine"
    checkpoint: str = ""
    stub: str = ""
    workers: int = 1

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:12]

    @property
    def ablation(self) -> AblationConfig:
        return AblationConfig(self.enable_fpm, self.enable_sgn, self.enable_cdm)

    def validate(self):
        if self.baseline not in ("", "protonet"):
            raise ConfigError(f"baseline: unknown value {self.baseline!r}")
        if self.metric not in ("cosine", "euclidean"):
            raise ConfigError(f"metric: unknown value {self.metric!r}")
        if self.stub not in ("", "perfect"):
            raise ConfigError(f"stub: unknown value {self.stub!r}")
        for name in ("way", "shot", "query", "train_query", "workers", "per_cell", "length"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be >= 1")
        for name in ("train_episodes", "eval_episodes"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be >= 0")
        if self.target in self.sources:
            raise ConfigError(f"target: {self.target!r} is also listed in sources")


_FIELD_TYPES = {f.name: type(f.default_factory() if callable(f.default_factory) else f.default)
                for f in fields(RunConfig)}


def _coerce(key: str, value):
    want = _FIELD_TYPES[key]
    if want is list:
        if not isinstance(value, list) or not all(isinstance(v, str) for v in value):
            raise ConfigError(f"{key}: expected a list of strings")
        return list(value)
    if want is bool:
        if not isinstance(value, bool):
            raise ConfigError(f"{key}: expected true/false")
        return value
    if want is float and isinstance(value, (int, float)) and not isinstance(value, bool):
        return float(value)
    if want is int and isinstance(value, int) and not isinstance(value, bool):
        return value
    if want is str and isinstance(value, str):
        return value
    raise ConfigError(f"{key}: expected {want.__name__}, got {type(value).__name__}")


def resolve_config(file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    values = {}
    for source in (file_values or {}, overrides or {}):
        for k, v in source.items():
            if k not in _FIELD_TYPES:
                raise ConfigError(f"unknown config key {k!r}")
            values[k] = _coerce(k, v)
    cfg = RunConfig(**values)
    cfg.validate()
    return cfg


def read_config_file(path) -> dict:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as e:
        raise ConfigError(f"config file {path} is not valid JSON: {e}") from None
    if not isinstance(doc, dict):
        raise ConfigError(f"config file {path} must hold a JSON object")
    return doc


# outputs

def run_dir(cfg: RunConfig, command: str) -> Path:
    d = Path(cfg.out) / f"{command}-{cfg.digest()}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def write_json(path, doc):
    Path(path).write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def write_run_info(d: Path, command: str, cfg: RunConfig):
    # wall-clock details live apart from the metric documents so those stay reproducible
    write_json(d / "run_info.json", {"command": command, "config_hash": cfg.digest(),
                                     "started": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "argv": sys.argv[1:]})


def _document(command: str, cfg: RunConfig, **body) -> dict:
    return {"command": command, "config": cfg.to_dict(), "config_hash": cfg.digest(), "seed": cfg.seed, **body}


def _load(cfg: RunConfig):
    manifest = load_manifest(Path(cfg.data) / "manifest.jsonl")
    return prepare_data(manifest, cfg.window, cfg.hop)


def _train_config(cfg: RunConfig) -> TrainConfig:
    return TrainConfig(way=cfg.way, shot=cfg.shot, query=cfg.train_query, episodes=cfg.train_episodes,
                       lr=cfg.lr, seed=cfg.seed, sources=tuple(cfg.sources), target=cfg.target)


def _eval_config(cfg: RunConfig) -> EvalConfig:
    return EvalConfig(way=cfg.way, shot=cfg.shot, query=cfg.query, episodes=cfg.eval_episodes,
                      seed=cfg.seed, sources=tuple(cfg.sources), target=cfg.target, workers=cfg.workers)


def _progress(total: int):
    step = max(1, total // 20)

    def report(i, loss, acc):
        if (i + 1) % step == 0 or i + 1 == total:
            log.info("episode %d/%d loss %.4f acc %.3f", i + 1, total, loss, acc)

    return report


def _train(cfg: RunConfig, data, ablation: AblationConfig, d: Path):
    kind = "protonet" if cfg.baseline == "protonet" else "duple"
    store = ParamStore(cfg.seed)
    model = build_model(kind, store, data.length, data.spec_shape, ablation, metric=cfg.metric)
    tlog = meta_train(model, data, _train_config(cfg), _progress(cfg.train_episodes))
    tlog.to_csv(d / "training_log.csv")
    extra = {"model": model.describe(), "length": data.length, "spec_shape": list(data.spec_shape)}
    save_checkpoint(store, d / "checkpoint.json", config_hash=cfg.digest(), extra=extra)
    log.info("trained %d episodes in %.1fs", cfg.train_episodes, tlog.seconds)
    return model, tlog


def _write_report(d: Path, command: str, cfg: RunConfig, report, model_desc: dict, name="metrics"):
    write_json(d / f"{name}.json", _document(command, cfg, model=model_desc, metrics=report.to_dict()))
    write_confusion_csv(report, d / f"{name}_confusion.csv")


def _model_from_checkpoint(path):
    store, doc = load_checkpoint(path)
    extra = doc.get("extra") or {}
    desc = extra.get("model", {})
    kind = desc.get("kind", "duple")
    ablation = AblationConfig(desc.get("enable_fpm", True), desc.get("enable_sgn", True), desc.get("enable_cdm", True))
    model = build_model(kind, store, extra["length"], tuple(extra["spec_shape"]), ablation,
                        metric=desc.get("metric", "cosine"))
    return model


# commands

def cmd_generate(cfg: RunConfig) -> Path:
    synth = SynthConfig(n_classes=cfg.n_classes, n_domains=cfg.n_domains, per_cell=cfg.per_cell,
                        length=cfg.length, sample_rate=cfg.sample_rate, seed=cfg.seed)
    out = Path(cfg.data)
    manifest = synth_generate(synth, out, binary=cfg.binary)
    log.info("wrote %d signals to %s", len(manifest), out)
    return out


def cmd_features(cfg: RunConfig) -> Path:
    manifest = load_manifest(Path(cfg.data) / "manifest.jsonl")
    data = prepare_data(manifest, cfg.window, cfg.hop)
    d = run_dir(cfg, "features")
    write_run_info(d, "features", cfg)
    with open(d / "features.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["path", "class", "domain", *FEATURE_NAMES])
        for i, ref in enumerate(manifest.records):
            w.writerow([ref.path, ref.class_id, ref.domain_id, *(repr(float(v)) for v in data.stats[i])])
    return d


def cmd_train(cfg: RunConfig) -> Path:
    data = _load(cfg)
    d = run_dir(cfg, "train")
    write_run_info(d, "train", cfg)
    model, tlog = _train(cfg, data, cfg.ablation, d)
    write_json(d / "train_report.json", _document("train", cfg, model=model.describe(), episodes=len(tlog.rows),
                                                  final_loss=tlog.rows[-1][1] if tlog.rows else None,
                                                  domains_touched=sorted(data.domain_names[i]
                                                                         for i in tlog.domains_touched)))
    return d


def cmd_eval(cfg: RunConfig) -> Path:
    data = _load(cfg)
    d = run_dir(cfg, "eval")
    write_run_info(d, "eval", cfg)
    if cfg.stub == "perfect":
        predictor, desc = PerfectPredictor(), {"kind": "stub", "stub": "perfect"}
    elif cfg.checkpoint:
        model = _model_from_checkpoint(cfg.checkpoint)
        predictor, desc = ModelPredictor(model), model.describe()
    else:
        raise ConfigError("eval needs --checkpoint (or --stub perfect)")
    report = evaluate(predictor, data, _eval_config(cfg))
    _write_report(d, "eval", cfg, report, desc)
    log.info("accuracy %.4f macro-F1 %.4f over %d episodes", report.accuracy, report.macro_f1, report.episodes)
    return d


def cmd_ablate(cfg: RunConfig) -> Path:
    data = _load(cfg)
    d = run_dir(cfg, "ablate")
    write_run_info(d, "ablate", cfg)
    rows = []
    for ab in ABLATION_GRID:
        sub = d / ab.label.replace("+", "_")
        sub.mkdir(exist_ok=True)
        log.info("ablation row %s", ab.label)
        model, _ = _train(cfg, data, ab, sub)
        report = evaluate(ModelPredictor(model), data, _eval_config(cfg))
        _write_report(sub, "ablate", cfg, report, {**model.describe(), "label": ab.label})
        rows.append((ab.label, report))
    with open(d / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["config", "accuracy", "macro_precision", "macro_recall", "macro_f1"])
        for label, r in rows:
            w.writerow([label, repr(r.accuracy), repr(r.macro_precision), repr(r.macro_recall), repr(r.macro_f1)])
    return d


HANDLERS = {"generate": cmd_generate, "features": cmd_features, "train": cmd_train,
            "eval": cmd_eval, "ablate": cmd_ablate}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="duple", description="Dual-domain prototype few-shot classifier for fiber vibration signals.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="JSON file of settings")
    p.add_argument("--seed", type=int)
    p.add_argument("--source", action="append", dest="sources", metavar="DOMAIN")
    p.add_argument("--target", metavar="DOMAIN")
    p.add_argument("--episodes", type=int, help="episode count of the command (training for train, evaluation otherwise)")
    p.add_argument("--train-episodes", type=int, dest="train_episodes")
    p.add_argument("--eval-episodes", type=int, dest="eval_episodes")
    p.add_argument("--way", type=int)
    p.add_argument("--shot", type=int)
    p.add_argument("--query", type=int)
    p.add_argument("--train-query", type=int, dest="train_query")
    p.add_argument("--lr", type=float)
    p.add_argument("--baseline", choices=("protonet",))
    p.add_argument("--metric", choices=("cosine", "euclidean"))
    p.add_argument("--data", help="dataset directory (holds manifest.jsonl)")
    p.add_argument("--out", help="root directory for run outputs")
    p.add_argument("--checkpoint")
    p.add_argument("--stub", choices=("perfect",))
    p.add_argument("--workers", type=int)
    for flag in ("fpm", "sgn", "cdm"):
        p.add_argument(f"--no-{flag}", action="store_false", dest=f"enable_{flag}", default=None)
    p.add_argument("-q", "--quiet", action="store_true")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(asctime)s %(levelname)s %(message)s", stream=sys.stderr)
    flags = {k: v for k, v in vars(args).items()
             if v is not None and k not in ("command", "config", "quiet", "episodes")}
    if args.episodes is not None:
        flags["train_episodes" if args.command == "train" else "eval_episodes"] = args.episodes
    try:
        cfg = resolve_config(read_config_file(args.config) if args.config else {}, flags)
    except ConfigError as e:
        print(f"duple: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        out = HANDLERS[args.command](cfg)
    except ConfigError as e:
        print(f"duple: config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as e:  # any module failure becomes a one-line cause
        msg = " ".join(str(e).split()) or type(e).__name__
        print(f"duple: error: {type(e).__name__}: {msg}", file=sys.stderr)
        return EXIT_RUNTIME
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
