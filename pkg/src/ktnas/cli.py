"""Command-line driver.

    ktnas gen-data        synthetic interaction log (JSONL)
    ktnas prepare         ingest, split, window and scale -> prepared directory
    ktnas train-supernet  sandwich-train the weight-sharing supernet
    ktnas search          evolve architectures scored by the supernet
    ktnas train           train a fixed genome (file or preset), optionally warm-started
    ktnas eval            AUC/ACC/RMSE of a trained model on a split
    ktnas export          inspect a checkpoint, or turn a search log into JSON series
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import platform
import sys
import time
from collections import defaultdict
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .architecture import ModelConfig, build, count_parameters
from .checkpoint import CheckpointError, load_checkpoint, read_manifest, save_checkpoint
from .config import ConfigError, RunConfig, dump_config, load_config
from .dataset import (
    DataFormatError,
    FeatureVocabulary,
    WindowSet,
    build_windows,
    generate_synthetic,
    ingest,
    split,
    synthetic_vocabulary,
    write_jsonl,
)
from .evolution import search, write_search_log
from .genome import GenomeError, SearchSpace, decode, encode, load_genome, save_genome
from .preprocessing import FeatureScaler
from .presets import preset_names, resolve
from .supernet import Supernet, SupernetEvaluator, SupernetTrainer
from .training import TrainConfig, evaluate_predictions, fit_model, load_training_state, predict_proba

log = logging.getLogger("ktnas")

EXIT_CONFIG = 2
EXIT_MISSING = 3
SPLITS = ("train", "validation", "test")


class MissingInput(RuntimeError):
    pass


# ---------------------------------------------------------------- run setup


def make_run_dir(cfg: RunConfig, explicit: str | None = None) -> Path:
    if explicit:
        path = Path(explicit)
        path.mkdir(parents=True, exist_ok=True)
        return path
    stem = f"{time.strftime('%Y%m%d-%H%M%S')}-seed{cfg.seed}"
    base = Path(cfg.output_dir)
    path = base / stem
    k = 1
    while path.exists():
        path = base / f"{stem}.{k}"
        k += 1
    path.mkdir(parents=True)
    return path


def write_manifest(run_dir: Path, cfg: RunConfig, command: str, argv: list[str], extra: dict | None = None) -> None:
    manifest = {
        "command": command,
        "argv": argv,
        "version": __version__,
        "python": platform.python_version(),
        "torch": torch.__version__,
        "numpy": np.__version__,
        "seed": cfg.seed,
        "threads": cfg.threads,
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "config": cfg.to_dict(),
    }
    manifest.update(extra or {})
    (run_dir / "run_manifest.json").write_text(json.dumps(manifest, indent=1) + "\n")
    dump_config(cfg, run_dir / "config.yaml")


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingInput(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------- data


def load_prepared(directory: str | Path) -> tuple[dict[str, WindowSet], FeatureVocabulary]:
    directory = Path(_require(Path(directory), "prepared data directory"))
    windows = {s: WindowSet.load(_require(directory / f"{s}.npz", f"{s} windows")) for s in SPLITS}
    vocab = FeatureVocabulary.load(_require(directory / "vocab.json", "vocabulary"))
    return windows, vocab


def model_config(cfg: RunConfig, vocab: FeatureVocabulary, fusion: str = "hier") -> ModelConfig:
    m = cfg.model
    return ModelConfig.from_vocab(
        vocab,
        cfg.data.features,
        n_blocks=m.n_blocks,
        d_model=m.d_model,
        d_ff=m.d_ff,
        n_heads=m.n_heads,
        window_length=cfg.data.window_length,
        dropout=m.dropout,
        fusion=fusion,
        depthwise_conv=m.depthwise_conv,
    )


def _train_config(section, seed: int) -> TrainConfig:
    return TrainConfig(
        epochs=section.epochs,
        lr=section.lr,
        batch_size=section.batch_size,
        warmup=section.warmup,
        seed=seed,
        checkpoint_every=section.checkpoint_every,
    )


def _prepared_dir(args, cfg: RunConfig) -> Path:
    path = args.data or cfg.data.prepared
    if not path:
        raise ConfigError("no prepared data: pass --data or set data.prepared")
    return Path(path)


def load_supernet(directory: str | Path) -> Supernet:
    directory = Path(directory)
    read_manifest(directory)
    payload = json.loads(_require(directory / "model_config.json", "supernet model config").read_text())
    sn = Supernet(ModelConfig(**payload))
    load_training_state(directory, sn)
    sn.eval()
    return sn


# ---------------------------------------------------------------- commands


def cmd_gen_data(args, cfg: RunConfig, run_dir: Path) -> dict:
    records = generate_synthetic(cfg.data.n_students, cfg.data.n_exercises, seed=cfg.seed)
    out = Path(args.out) if args.out else run_dir / "interactions.jsonl"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_jsonl(records, out)
    synthetic_vocabulary(cfg.data.n_exercises).save(out.with_name("vocab.json"))
    print(f"wrote {len(records)} interactions to {out}")
    return {"interactions": str(out), "n_records": len(records)}


def cmd_prepare(args, cfg: RunConfig, run_dir: Path) -> dict:
    source = args.interactions or cfg.data.interactions
    if source:
        vocab_path = Path(source).with_name("vocab.json")
        schema = FeatureVocabulary.load(vocab_path) if vocab_path.exists() else None
        students, vocab = ingest(_require(Path(source), "interaction log"), schema)
    else:
        records = generate_synthetic(cfg.data.n_students, cfg.data.n_exercises, seed=cfg.seed)
        vocab = synthetic_vocabulary(cfg.data.n_exercises)
        grouped = defaultdict(list)
        for r in records:
            grouped[r.student_id].append(r)
        students = dict(grouped)
    parts = split(list(students), tuple(cfg.data.ratios), cfg.data.fold, cfg.seed)
    L = cfg.data.window_length
    windows = {
        "train": build_windows(students, L, parts.train),
        "validation": build_windows(students, L, parts.validation),
        "test": build_windows(students, L, parts.test),
    }
    scaler = FeatureScaler().fit(windows["train"])
    out = Path(args.out) if args.out else run_dir / "prepared"
    out.mkdir(parents=True, exist_ok=True)
    for name, ws in windows.items():
        scaler.transform(ws).save(out / f"{name}.npz")
    vocab.save(out / "vocab.json")
    (out / "scaler.json").write_text(json.dumps(scaler.to_json(), indent=1) + "\n")
    (out / "split.json").write_text(
        json.dumps({"fold": parts.fold, **{k: list(getattr(parts, k)) for k in SPLITS}}) + "\n"
    )
    sizes = {k: len(v) for k, v in windows.items()}
    print(f"prepared {sizes} windows of length {L} in {out}")
    return {"prepared": str(out), "windows": sizes}


def cmd_train_supernet(args, cfg: RunConfig, run_dir: Path) -> dict:
    windows, vocab = load_prepared(_prepared_dir(args, cfg))
    mcfg = model_config(cfg, vocab)
    torch.manual_seed(cfg.seed)
    sn = Supernet(mcfg)
    ckpt = Path(args.resume) if args.resume else run_dir / "supernet"
    if args.resume:
        read_manifest(ckpt)
    ckpt.mkdir(parents=True, exist_ok=True)
    (ckpt / "model_config.json").write_text(json.dumps(mcfg.to_json(), indent=1) + "\n")
    trainer = SupernetTrainer(sn, _train_config(cfg.supernet, cfg.seed), checkpoint_dir=ckpt)
    if args.resume:
        trainer.resume()
    history = trainer.fit(windows["train"])
    (run_dir / "supernet_history.json").write_text(json.dumps(history, indent=1) + "\n")
    c = trainer.counters
    print(f"supernet trained for {trainer.epoch} epochs ({c.batches} batches, {c.forwards} forwards); checkpoint {ckpt}")
    return {"supernet": str(ckpt)}


def cmd_search(args, cfg: RunConfig, run_dir: Path) -> dict:
    windows, _ = load_prepared(_prepared_dir(args, cfg))
    sn = load_supernet(_require(Path(args.supernet), "supernet checkpoint"))
    mcfg = sn.config
    reduction = cfg.search.reduction and not args.no_reduction
    evaluator = SupernetEvaluator(sn, windows["validation"], cfg.search.eval_batches, cfg.supernet.batch_size, cfg.seed)
    result = search(
        evaluator,
        SearchSpace.initial(mcfg.num_features, mcfg.n_blocks),
        pop=cfg.search.pop,
        gen=cfg.search.gen,
        seed=cfg.seed,
        budget=cfg.search.budget,
        param_count=lambda g: count_parameters(g, mcfg),
        reduction=reduction,
    )
    save_genome(result.best.genome, run_dir / "genome.json")
    write_search_log(result.log, run_dir / "search_log.csv")
    (run_dir / "best.json").write_text(
        json.dumps(
            {
                "genome": encode(result.best.genome),
                "validation_auc": result.best.auc,
                "parameters": count_parameters(result.best.genome, mcfg),
                "architecture": result.best.genome.describe(mcfg.features),
                "reduction": reduction,
                "evaluations": result.n_evaluations,
            },
            indent=1,
        )
        + "\n"
    )
    print(f"best validation AUC {result.best.auc:.4f}: {result.best.genome}")
    return {"genome": str(run_dir / "genome.json"), "reduction": reduction}


def _genome_arg(choice: str, mcfg_features, n_blocks: int, searched_path: str | None):
    num = len(mcfg_features)
    searched = load_genome(searched_path, num, n_blocks) if searched_path else None
    path = Path(choice)
    if path.suffix == ".json" or path.exists():
        return load_genome(_require(path, "genome file"), num, n_blocks), "hier", choice
    return (*resolve(choice, mcfg_features, n_blocks, searched), choice)


def cmd_train(args, cfg: RunConfig, run_dir: Path) -> dict:
    windows, vocab = load_prepared(_prepared_dir(args, cfg))
    base = model_config(cfg, vocab)
    genome, fusion, label = _genome_arg(args.genome, base.features, base.n_blocks, args.searched)
    if args.fusion:
        fusion = args.fusion
    mcfg = model_config(cfg, vocab, fusion)
    torch.manual_seed(cfg.seed)
    source = load_supernet(_require(Path(args.warm_start), "supernet checkpoint")) if args.warm_start else None
    model = build(genome, mcfg, source)
    history = fit_model(
        model, windows["train"], _train_config(cfg.retrain, cfg.seed), windows["validation"], run_dir / "train_state"
    )
    out = run_dir / "model"
    save_checkpoint(
        out,
        model.state_dict(),
        {"model_config": mcfg.to_json(), "genome": encode(genome), "preset": label, "history": history},
    )
    metrics = evaluate_predictions(predict_proba(model, windows["test"]), windows["test"])
    (run_dir / "metrics.json").write_text(json.dumps(metrics) + "\n")
    print(f"trained {label} ({count_parameters(genome, mcfg)} parameters); test {json.dumps(metrics)}")
    return {"model": str(out), "genome": encode(genome), "fusion": fusion}


def load_model(directory: str | Path):
    tensors, meta = load_checkpoint(directory)
    mcfg = ModelConfig(**meta["model_config"])
    genome = decode(meta["genome"], mcfg.num_features, mcfg.n_blocks)
    model = build(genome, mcfg, tensors)
    missing = set(model.state_dict()) - set(tensors)
    if missing:
        raise CheckpointError(f"model checkpoint lacks {sorted(missing)[:5]}")
    model.eval()
    return model


def cmd_eval(args, cfg: RunConfig, run_dir: Path) -> dict:
    windows, _ = load_prepared(_prepared_dir(args, cfg))
    model = load_model(_require(Path(args.model), "model checkpoint"))
    ws = windows[args.split]
    metrics = evaluate_predictions(predict_proba(model, ws), ws)
    text = json.dumps(metrics)
    (Path(args.out) if args.out else run_dir / "metrics.json").write_text(text + "\n")
    print(text)
    return {"metrics": metrics}


def cmd_export(args, cfg: RunConfig, run_dir: Path) -> dict:
    if args.search_log:
        rows = list(csv.DictReader(_require(Path(args.search_log), "search log").open()))
        payload = {
            "generation": [int(r["generation"]) for r in rows],
            "best_auc": [float(r["best_auc"]) for r in rows],
            "mean_auc": [float(r["mean_auc"]) for r in rows],
            "space_size": [int(r["space_size"]) for r in rows],
            "evaluations": [int(r["evaluations"]) for r in rows],
        }
    elif args.checkpoint:
        manifest = read_manifest(_require(Path(args.checkpoint), "checkpoint"))
        entries = manifest["tensors"]
        weights = [e for e in entries if not e["name"].startswith("optimizer/")]
        payload = {
            "format": manifest["format"],
            "tensors": len(entries),
            "parameters": int(sum(int(np.prod(e["shape"])) for e in weights)),
            "bytes": int(sum(e["nbytes"] for e in entries)),
            "meta_keys": sorted(manifest["meta"]),
            "names": [e["name"] for e in weights],
        }
    else:
        raise ConfigError("export needs --checkpoint or --search-log")
    text = json.dumps(payload, indent=1)
    out = Path(args.out) if args.out else run_dir / "export.json"
    out.write_text(text + "\n")
    print(text)
    return {"export": str(out)}


COMMANDS = {
    "gen-data": cmd_gen_data,
    "prepare": cmd_prepare,
    "train-supernet": cmd_train_supernet,
    "search": cmd_search,
    "train": cmd_train,
    "eval": cmd_eval,
    "export": cmd_export,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML run config")
    common.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config value, e.g. model.d_model=32 (repeatable)")
    common.add_argument("--seed", type=int, help="shorthand for --set seed=N")
    common.add_argument("--run-dir", help="write artifacts here instead of a fresh timestamped directory")
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="ktnas", description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", parents=[common], help="write a synthetic interaction log")
    p.add_argument("--out", help="output JSONL path")

    p = sub.add_parser("prepare", parents=[common], help="ingest, split, window and scale")
    p.add_argument("--interactions", help="JSONL/CSV log (default: data.interactions, else synthetic)")
    p.add_argument("--out", help="output directory")

    p = sub.add_parser("train-supernet", parents=[common], help="sandwich-train the supernet")
    p.add_argument("--data", help="prepared data directory")
    p.add_argument("--resume", help="existing supernet checkpoint directory to continue")

    p = sub.add_parser("search", parents=[common], help="evolutionary architecture search")
    p.add_argument("--data", help="prepared data directory")
    p.add_argument("--supernet", required=True, help="supernet checkpoint directory")
    p.add_argument("--no-reduction", action="store_true", help="disable search-space reduction")

    p = sub.add_parser("train", parents=[common], help="train a fixed genome")
    p.add_argument("--data", help="prepared data directory")
    p.add_argument("--genome", required=True, help=f"genome JSON file or preset ({', '.join(preset_names())})")
    p.add_argument("--searched", help="searched genome JSON used by the ablation presets")
    p.add_argument("--fusion", choices=("hier", "concat"), help="override the input fusion")
    p.add_argument("--warm-start", help="supernet checkpoint to inherit weights from")

    p = sub.add_parser("eval", parents=[common], help="metrics JSON for a trained model")
    p.add_argument("--data", help="prepared data directory")
    p.add_argument("--model", required=True, help="model checkpoint directory")
    p.add_argument("--split", choices=SPLITS, default="test")
    p.add_argument("--out", help="metrics JSON path")

    p = sub.add_parser("export", parents=[common], help="inspect a checkpoint or export a search log")
    p.add_argument("--checkpoint", help="checkpoint directory")
    p.add_argument("--search-log", help="search_log.csv to turn into plot series")
    p.add_argument("--out", help="output JSON path")
    return parser


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        overrides = list(args.set) + ([f"seed={args.seed}"] if args.seed is not None else [])
        cfg = load_config(args.config, overrides)
        torch.set_num_threads(cfg.threads)
        run_dir = make_run_dir(cfg, args.run_dir)
        write_manifest(run_dir, cfg, args.command, argv)
        extra = COMMANDS[args.command](args, cfg, run_dir)
        write_manifest(run_dir, cfg, args.command, argv, {"outputs": extra})
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (MissingInput, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_MISSING
    except (GenomeError, DataFormatError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
