"""The Trainer: statistics collection, then an AdamW training loop with checkpoints.

Output directory layout::

    out_dir/
      config.resolved        # YAML echo of the full TrainConfig
      stats/                 # <field>_shape files, feats_stats.json, meta.json
      checkpoints/last       # written after every epoch
      checkpoints/best       # written when keep_best_on improves
      metrics.jsonl          # one JSON object per epoch
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import math
import os
import time
import zipfile
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Mapping, Optional, Sequence, Tuple

import numpy as np
import yaml

from . import stats as _stats
from .batching import BatchPlan, build_fixed_sampler, build_numel_sampler
from .errors import (
    ConfigError,
    CorruptCheckpoint,
    EmptyDataset,
    IncompatibleCheckpoint,
    IoError,
    NonFiniteGradient,
)
from .finetune import AugmentationSpec, LoRAModel, LoRASpec, augment, inject_lora
from .model import TrainableModel
from .optim import AdamState, adamw_step, clip_grad_norm, lr_at

logger = logging.getLogger(__name__)

# Fields that may change between a run and its resumption.
_RESUMABLE_FIELDS = ("max_epoch", "patience", "num_workers")


@dataclass
class TrainConfig:
    max_epoch: int = 10
    peak_lr: float = 1e-4
    warmup_steps: int = 15000
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0
    grad_clip: Optional[float] = None
    patience: int = 10
    seed: int = 0
    batch_type: str = "numel"
    batch_bins: int = 200000
    batch_size: int = 8
    valid_batch_size: Optional[int] = None
    keep_best_on: str = "valid_loss"
    num_workers: int = 0
    stats_fields: Optional[List[str]] = None
    augment_field: str = "speech"
    sample_rate: int = 16000
    lora: Optional[LoRASpec] = None
    augmentation: Optional[AugmentationSpec] = None

    def __post_init__(self):
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.max_epoch >= 1, "max_epoch must be positive")
        need(self.peak_lr > 0, "peak_lr must be positive")
        need(self.warmup_steps >= 1, "warmup_steps must be positive")
        need(0 < self.beta1 < 1 and 0 < self.beta2 < 1, "betas must lie in (0, 1)")
        need(self.eps > 0, "eps must be positive")
        need(self.weight_decay >= 0, "weight_decay must be non-negative")
        need(self.grad_clip is None or self.grad_clip > 0, "grad_clip must be positive")
        need(self.patience >= 1, "patience must be positive")
        need(self.batch_type in ("numel", "fixed"), "batch_type must be 'numel' or 'fixed'")
        need(self.batch_bins >= 1 and self.batch_size >= 1, "batch sizes must be positive")
        need(self.num_workers >= 0, "num_workers must be non-negative")
        if isinstance(self.lora, Mapping):
            self.lora = LoRASpec.from_dict(self.lora)
        if isinstance(self.augmentation, Mapping):
            self.augmentation = AugmentationSpec.from_dict(self.augmentation)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(d) - known)
        if unknown:
            raise ConfigError(f"unknown config keys: {unknown}")
        try:
            return cls(**d)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc

    def to_dict(self) -> Dict[str, Any]:
        d = {f.name: getattr(self, f.name) for f in dataclasses.fields(self)}
        d["lora"] = None if self.lora is None else self.lora.to_dict()
        d["augmentation"] = None if self.augmentation is None else self.augmentation.to_dict()
        return d

    def config_hash(self) -> str:
        d = {k: v for k, v in self.to_dict().items() if k not in _RESUMABLE_FIELDS}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()

    def best_metric(self) -> Tuple[str, bool]:
        """``(history key, higher_is_better)`` parsed from ``keep_best_on``."""
        name, _, mode = self.keep_best_on.partition(":")
        return name, mode == "max"


def load_config(path) -> TrainConfig:
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8")) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(doc, Mapping):
        raise ConfigError("config must be a key/value mapping")
    return TrainConfig.from_dict(doc)


def save_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False), encoding="utf-8")


@dataclass
class Checkpoint:
    epoch: int
    global_step: int
    params: Dict[str, np.ndarray]
    optimizer_state: AdamState
    rng_state: Dict[str, Any]
    best_valid_metric: float
    config_hash: str
    best_epoch: int = 0
    bad_epochs: int = 0
    history: List[Dict[str, Any]] = field(default_factory=list)

    def __eq__(self, other) -> bool:
        if not isinstance(other, Checkpoint):
            return NotImplemented

        def same(a, b):
            return a.keys() == b.keys() and all(np.array_equal(a[k], b[k]) for k in a)

        return (
            self.epoch == other.epoch
            and self.global_step == other.global_step
            and same(self.params, other.params)
            and self.optimizer_state.step == other.optimizer_state.step
            and same(self.optimizer_state.m, other.optimizer_state.m)
            and same(self.optimizer_state.v, other.optimizer_state.v)
            and self.rng_state == other.rng_state
            and (self.best_valid_metric == other.best_valid_metric
                 or (math.isnan(self.best_valid_metric) and math.isnan(other.best_valid_metric)))
            and self.config_hash == other.config_hash
            and self.best_epoch == other.best_epoch
            and self.bad_epochs == other.bad_epochs
            and self.history == other.history
        )


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    """Write ``ckpt`` atomically as an ``.npz`` archive (arrays plus a JSON header)."""
    if set(ckpt.optimizer_state.m) != set(ckpt.params) or set(ckpt.optimizer_state.v) != set(ckpt.params):
        raise ValueError("optimizer state keys must equal parameter keys")
    meta = {
        "epoch": ckpt.epoch,
        "global_step": ckpt.global_step,
        "opt_step": ckpt.optimizer_state.step,
        "rng_state": ckpt.rng_state,
        "best_valid_metric": ckpt.best_valid_metric,
        "config_hash": ckpt.config_hash,
        "best_epoch": ckpt.best_epoch,
        "bad_epochs": ckpt.bad_epochs,
        "history": ckpt.history,
        "names": list(ckpt.params),
    }
    arrays = {"meta": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)}
    for i, k in enumerate(ckpt.params):
        arrays[f"p{i}"] = ckpt.params[k]
        arrays[f"m{i}"] = ckpt.optimizer_state.m[k]
        arrays[f"v{i}"] = ckpt.optimizer_state.v[k]
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(tmp, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_checkpoint(path, expected_hash: Optional[str] = None) -> Checkpoint:
    try:
        with np.load(Path(path), allow_pickle=False) as npz:
            meta = json.loads(bytes(npz["meta"]).decode("utf-8"))
            names = meta["names"]
            params = {k: npz[f"p{i}"] for i, k in enumerate(names)}
            m = {k: npz[f"m{i}"] for i, k in enumerate(names)}
            v = {k: npz[f"v{i}"] for i, k in enumerate(names)}
    except FileNotFoundError:
        raise
    except (OSError, ValueError, KeyError, EOFError, zipfile.BadZipFile, UnicodeDecodeError) as exc:
        raise CorruptCheckpoint(f"cannot read checkpoint {path}: {exc}") from exc
    ckpt = Checkpoint(
        epoch=meta["epoch"],
        global_step=meta["global_step"],
        params=params,
        optimizer_state=AdamState(meta["opt_step"], m, v),
        rng_state=meta["rng_state"],
        best_valid_metric=meta["best_valid_metric"],
        config_hash=meta["config_hash"],
        best_epoch=meta["best_epoch"],
        bad_epochs=meta["bad_epochs"],
        history=meta["history"],
    )
    if expected_hash is not None and ckpt.config_hash != expected_hash:
        raise IncompatibleCheckpoint(
            f"checkpoint {path} was written with a different config ({ckpt.config_hash[:12]} != {expected_hash[:12]})"
        )
    return ckpt


@dataclass
class TrainResult:
    epochs_run: int
    history: List[Dict[str, Any]]
    best_epoch: int
    stopped_early: bool
    params: Dict[str, np.ndarray] = field(default_factory=dict)


def _item_seed(epoch_seed: int, uid: str) -> np.random.Generator:
    h = int.from_bytes(hashlib.blake2b(uid.encode("utf-8"), digest_size=8).digest(), "little")
    return np.random.default_rng([epoch_seed, h])


def _weighted_mean(values: Sequence[float], weights: Sequence[int]) -> float:
    return float(np.dot(values, weights) / np.sum(weights))


def evaluate(model: TrainableModel, ds, batch_size: int = 8, params=None) -> Dict[str, float]:
    """Mean loss (and model metrics) over ``ds``, batch means weighted by batch size."""
    if len(ds) == 0:
        raise EmptyDataset("cannot evaluate on an empty dataset")
    params = model.params if params is None else params
    plan = build_fixed_sampler(ds.ids, batch_size, 0, 0, shuffle=False)
    sums: Dict[str, float] = {}
    total = 0
    for batch_ids in plan:
        batch = [ds[i] for i in batch_ids]
        loss, _ = model.loss_and_grads(params, batch)
        values = {"loss": loss, **model.batch_metrics(params, batch)}
        for k, val in values.items():
            sums[k] = sums.get(k, 0.0) + float(val) * len(batch)
        total += len(batch)
    return {k: s / total for k, s in sums.items()}


def prepare_model(model: TrainableModel, cfg: TrainConfig) -> TrainableModel:
    """Apply the config's LoRA section, if any, to a plain model."""
    if cfg.lora is not None and not isinstance(model, LoRAModel):
        return inject_lora(model, cfg.lora, cfg.seed)
    return model


class Trainer:
    """Runs statistics collection and training for one model and output directory."""

    def __init__(self, model: TrainableModel, cfg: TrainConfig, out_dir):
        self.model = prepare_model(model, cfg)
        self.cfg = cfg
        self.out_dir = Path(out_dir)

    @property
    def stats_dir(self) -> Path:
        return self.out_dir / "stats"

    @property
    def ckpt_dir(self) -> Path:
        return self.out_dir / "checkpoints"

    # -- statistics ---------------------------------------------------------

    def _stats_key(self, ds, fields) -> Dict[str, Any]:
        ids_digest = hashlib.sha256("\n".join(ds.ids).encode("utf-8")).hexdigest()
        return {"config_hash": self.cfg.config_hash(), "n_items": len(ds), "ids": ids_digest, "fields": list(fields)}

    def collect_stats(self, ds) -> Tuple[List[_stats.ShapeRecord], Dict[str, _stats.FeatureStats]]:
        """Write shape and feature-stat files, or reuse them when still current."""
        fields = list(self.cfg.stats_fields or ds.fields)
        key = self._stats_key(ds, fields)
        meta_path = self.stats_dir / "meta.json"
        if meta_path.is_file():
            try:
                fresh = json.loads(meta_path.read_text()) == key
            except ValueError:
                fresh = False
            if fresh:
                logger.info("stats in %s are current; skipping collection", self.stats_dir)
                shapes = _stats.merge_shape_records(
                    {f: _stats.read_shape_file(self.stats_dir / f"{f}_shape", f) for f in fields}
                )
                return shapes, _stats.read_stats_file(self.stats_dir / "feats_stats.json")
        logger.info("collecting stats over %d items", len(ds))
        records, feats = _stats.collect_stats(ds, fields)
        self.stats_dir.mkdir(parents=True, exist_ok=True)
        for f in fields:
            _stats.write_shape_file(records, self.stats_dir / f"{f}_shape", f)
        _stats.write_stats_file(feats, self.stats_dir / "feats_stats.json")
        meta_path.write_text(json.dumps(key))
        return records, feats

    # -- training -----------------------------------------------------------

    def _plan(self, epoch: int, train_ds, shapes) -> BatchPlan:
        cfg = self.cfg
        if cfg.batch_type == "numel":
            return build_numel_sampler(shapes, cfg.batch_bins, cfg.seed, epoch)
        return build_fixed_sampler(train_ds.ids, cfg.batch_size, cfg.seed, epoch, shuffle=True)

    def _load_item(self, train_ds, uid: str, aug_seed: Optional[int]):
        item = train_ds[uid]
        spec = self.cfg.augmentation
        if aug_seed is not None and spec is not None and self.cfg.augment_field in item:
            item[self.cfg.augment_field] = augment(
                item[self.cfg.augment_field], spec, _item_seed(aug_seed, uid), self.cfg.sample_rate
            )
        return item

    def _is_better(self, value: float, best: float) -> bool:
        _, maximize = self.cfg.best_metric()
        if math.isnan(best):
            return True
        return value > best if maximize else value < best

    def train(self, train_ds, valid_ds, plan_override: Optional[BatchPlan] = None, resume: bool = True) -> TrainResult:
        cfg = self.cfg
        model = self.model
        self.out_dir.mkdir(parents=True, exist_ok=True)
        save_config(cfg, self.out_dir / "config.resolved")
        shapes = None
        if plan_override is None and cfg.batch_type == "numel":
            shapes, _ = self.collect_stats(train_ds)

        cfg_hash = cfg.config_hash()
        last_path = self.ckpt_dir / "last"
        trainable = model.trainable_names()
        if resume and last_path.is_file():
            ckpt = load_checkpoint(last_path, expected_hash=cfg_hash)
            logger.info("resuming from epoch %d (step %d)", ckpt.epoch, ckpt.global_step)
            params = {k: np.array(v) for k, v in ckpt.params.items()}
            opt = ckpt.optimizer_state
            rng = np.random.Generator(np.random.PCG64())
            rng.bit_generator.state = ckpt.rng_state
            start, step = ckpt.epoch + 1, ckpt.global_step
            best, best_epoch, bad = ckpt.best_valid_metric, ckpt.best_epoch, ckpt.bad_epochs
            history = list(ckpt.history)
        else:
            params = {k: np.array(v) for k, v in model.params.items()}
            opt = AdamState.zeros_like(params)
            rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed & (2**64 - 1))))
            start, step = 1, 0
            best, best_epoch, bad = float("nan"), 0, 0
            history = []
        self._rewrite_metrics(history)

        metric_name, _ = cfg.best_metric()
        valid_bs = cfg.valid_batch_size or cfg.batch_size
        pool = ThreadPoolExecutor(cfg.num_workers) if cfg.num_workers > 0 else None
        stopped_early = bad >= cfg.patience
        try:
            for epoch in range(start, cfg.max_epoch + 1):
                if stopped_early:
                    break
                t0 = time.perf_counter()
                aug_seed = int(rng.integers(2**63))
                plan = plan_override if plan_override is not None else self._plan(epoch, train_ds, shapes)
                losses, sizes = [], []
                lr = lr_at(max(step, 1), cfg)
                for batch_ids in plan:
                    load = lambda uid: self._load_item(train_ds, uid, aug_seed)  # noqa: E731
                    batch = list(pool.map(load, batch_ids)) if pool else [load(u) for u in batch_ids]
                    loss, grads = model.loss_and_grads(params, batch)
                    step += 1
                    bad_names = [k for k in trainable if k in grads and not np.all(np.isfinite(grads[k]))]
                    if bad_names or not math.isfinite(loss):
                        raise NonFiniteGradient(step, bad_names or ["<loss>"])
                    grads = {k: grads[k] for k in trainable if k in grads}
                    if cfg.grad_clip is not None:
                        grads, _ = clip_grad_norm(grads, cfg.grad_clip, trainable)
                    lr = lr_at(step, cfg)
                    params, opt = adamw_step(params, grads, opt, lr, cfg, names=trainable)
                    losses.append(loss)
                    sizes.append(len(batch))

                valid = evaluate(model, valid_ds, valid_bs, params)
                record = {
                    "epoch": epoch,
                    "step": step,
                    "train_loss": _weighted_mean(losses, sizes),
                    "valid_loss": valid["loss"],
                    "lr": lr,
                    "wall_time_sec": time.perf_counter() - t0,
                }
                record.update({f"valid_{k}": v for k, v in valid.items() if k != "loss"})
                history.append(record)
                if metric_name not in record:
                    raise ConfigError(f"keep_best_on metric {metric_name!r} not among {sorted(record)}")
                improved = self._is_better(record[metric_name], best)
                if improved:
                    best, best_epoch, bad = record[metric_name], epoch, 0
                else:
                    bad += 1
                ckpt = Checkpoint(epoch, step, params, opt, rng.bit_generator.state, best, cfg_hash, best_epoch, bad, history)
                save_checkpoint(last_path, ckpt)
                if improved:
                    save_checkpoint(self.ckpt_dir / "best", ckpt)
                with open(self.out_dir / "metrics.jsonl", "a", encoding="utf-8") as fh:
                    fh.write(json.dumps(record) + "\n")
                logger.info(
                    "epoch %d step %d train_loss %.6f valid_loss %.6f lr %.3g",
                    epoch, step, record["train_loss"], record["valid_loss"], lr,
                )
                if bad >= cfg.patience and epoch < cfg.max_epoch:
                    stopped_early = True
        finally:
            if pool:
                pool.shutdown()
        return TrainResult(len(history), history, best_epoch, stopped_early, params)

    def _rewrite_metrics(self, history) -> None:
        body = "".join(json.dumps(r) + "\n" for r in history)
        (self.out_dir / "metrics.jsonl").write_text(body, encoding="utf-8")


def collect_stats_phase(trainer: Trainer, ds):
    return trainer.collect_stats(ds)


def train(
    model: TrainableModel,
    train_ds,
    valid_ds,
    cfg: TrainConfig,
    out_dir,
    plan_override: Optional[BatchPlan] = None,
    resume: bool = True,
) -> TrainResult:
    return Trainer(model, cfg, out_dir).train(train_ds, valid_ds, plan_override, resume)
