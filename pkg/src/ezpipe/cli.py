"""``ez``: the command-line front end. Each pipeline stage is one subcommand."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

from .dataset import from_data_directory
from .errors import EZError
from .finetune import AugmentationSpec, LoRASpec
from .manifest import load_data_directory, validate_data_directory
from .modelhub import from_pretrained
from .reference import ToyClassifier, ToyCorpusSpec, generate_toy_corpus
from .trainer import Trainer, TrainConfig, load_checkpoint, load_config, prepare_model

PROG = "ez"


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(2, f"{self.prog.split()[0]}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog=PROG, description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("validate-datadir", help="check a Kaldi data directory")
    p.add_argument("datadir")

    p = sub.add_parser("gen-toy", help="write a synthetic tone corpus")
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--classes", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sample-rate", type=int, default=16000)

    p = sub.add_parser("collect-stats", help="run only the statistics phase")
    p.add_argument("--train-dir", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("train", help="collect stats and train")
    p.add_argument("--config", required=True)
    p.add_argument("--train-dir", required=True)
    p.add_argument("--valid-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--lora", action="store_true", help="enable the config's lora section (defaults if absent)")
    p.add_argument("--augment", action="store_true", help="enable the config's augmentation section")

    p = sub.add_parser("infer", help="predict with the best checkpoint")
    p.add_argument("--model-dir", required=True)
    p.add_argument("--data-dir", required=True)
    p.add_argument("--out", required=True)

    p = sub.add_parser("download", help="fetch a model through a registry")
    p.add_argument("--id", required=True)
    p.add_argument("--registry", required=True)
    p.add_argument("--cache-root", default=None)
    return parser


def _resolve_config(args, lora: bool = False, augment: bool = False) -> TrainConfig:
    cfg = load_config(args.config)
    cfg.lora = (cfg.lora or LoRASpec()) if lora else None
    cfg.augmentation = (cfg.augmentation or AugmentationSpec()) if augment else None
    return cfg


def _toy_model(train_dd, sample_rate: int) -> ToyClassifier:
    return ToyClassifier(sorted(set(train_dd.text.values())), sample_rate)


def _write_model_info(out: Path, model: ToyClassifier) -> None:
    out.mkdir(parents=True, exist_ok=True)
    info = {"type": "toy_classifier", "classes": model.classes, "sample_rate": model.sample_rate}
    (out / "model.json").write_text(json.dumps(info, indent=1) + "\n")


def cmd_validate(args) -> int:
    dd = load_data_directory(args.datadir, validate=False)
    violations = validate_data_directory(dd)
    for v in violations:
        print(v)
    if violations:
        print(f"{PROG}: error: {len(violations)} violation(s) in {args.datadir}", file=sys.stderr)
        return 1
    return 0


def cmd_gen_toy(args) -> int:
    spec = ToyCorpusSpec(n_utts=args.n, n_classes=args.classes, sample_rate=args.sample_rate, seed=args.seed)
    dd = generate_toy_corpus(spec, args.out)
    print(f"wrote {len(dd.wav)} utterances to {args.out}")
    return 0


def cmd_collect_stats(args) -> int:
    cfg = _resolve_config(args)
    dd = load_data_directory(args.train_dir)
    model = _toy_model(dd, cfg.sample_rate)
    records, _ = Trainer(model, cfg, args.out).collect_stats(from_data_directory(dd))
    print(f"collected shapes for {len(records)} items in {Path(args.out) / 'stats'}")
    return 0


def cmd_train(args) -> int:
    cfg = _resolve_config(args, lora=args.lora, augment=args.augment)
    train_dd = load_data_directory(args.train_dir)
    valid_dd = load_data_directory(args.valid_dir)
    model = _toy_model(train_dd, cfg.sample_rate)
    out = Path(args.out)
    _write_model_info(out, model)
    result = Trainer(model, cfg, out).train(from_data_directory(train_dd), from_data_directory(valid_dd))
    last = result.history[-1]
    print(
        f"trained {result.epochs_run} epoch(s); best epoch {result.best_epoch}; "
        f"final train_loss {last['train_loss']:.6f} valid_loss {last['valid_loss']:.6f}"
    )
    return 0


def load_trained_model(model_dir) -> tuple:
    """Rebuild the model saved by ``ez train`` and return ``(model, best_params)``."""
    model_dir = Path(model_dir)
    info = json.loads((model_dir / "model.json").read_text())
    cfg = load_config(model_dir / "config.resolved")
    model = prepare_model(ToyClassifier(info["classes"], info["sample_rate"]), cfg)
    ckpt = load_checkpoint(model_dir / "checkpoints" / "best", expected_hash=cfg.config_hash())
    return model, ckpt.params


def cmd_infer(args) -> int:
    model, params = load_trained_model(args.model_dir)
    ds = from_data_directory(load_data_directory(args.data_dir))
    with open(args.out, "w", encoding="utf-8") as fh:
        for i, uid in enumerate(ds.ids):
            fh.write(f"{uid}\t{model.predict(params, ds[i])}\n")
    print(f"wrote {len(ds)} predictions to {args.out}")
    return 0


def cmd_download(args) -> int:
    bundle = from_pretrained(args.id, cache_root=args.cache_root, registry=args.registry)
    print(bundle.config_path.parent)
    return 0


COMMANDS = {
    "validate-datadir": cmd_validate,
    "gen-toy": cmd_gen_toy,
    "collect-stats": cmd_collect_stats,
    "train": cmd_train,
    "infer": cmd_infer,
    "download": cmd_download,
}


def run_cli(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return COMMANDS[args.command](args)
    except (EZError, OSError, ValueError, KeyError) as exc:
        print(f"{PROG}: error: {exc}", file=sys.stderr)
        return 1


def main() -> None:
    sys.exit(run_cli())


if __name__ == "__main__":
    main()
