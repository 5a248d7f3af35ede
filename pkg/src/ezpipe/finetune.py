"""Fine-tuning helpers: low-rank adapters with parameter freezing, plus waveform augmentation."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Tuple

import numpy as np

from .errors import BadFactor, NotAdapted, NoTargetsMatched, SchemaError
from .model import Batch, Params, TrainableModel, match_names

# ---------------------------------------------------------------------------
# LoRA


@dataclass(frozen=True)
class LoRASpec:
    target_patterns: Tuple[str, ...] = ("W",)
    rank: int = 8
    alpha: float = 8.0
    a_init_scale: float = 0.01
    train_patterns: Tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "target_patterns", tuple(self.target_patterns))
        object.__setattr__(self, "train_patterns", tuple(self.train_patterns))
        if self.rank < 1:
            raise SchemaError("LoRA rank must be >= 1")
        if self.alpha <= 0 or self.a_init_scale <= 0:
            raise SchemaError("LoRA alpha and a_init_scale must be positive")

    @property
    def scale(self) -> float:
        return self.alpha / self.rank

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "LoRASpec":
        try:
            return cls(**d)
        except TypeError as exc:
            raise SchemaError(f"bad lora section: {exc}") from exc

    def to_dict(self) -> Dict[str, Any]:
        return {
            "target_patterns": list(self.target_patterns),
            "rank": self.rank,
            "alpha": self.alpha,
            "a_init_scale": self.a_init_scale,
            "train_patterns": list(self.train_patterns),
        }


def lora_names(target: str) -> Tuple[str, str]:
    return f"{target}.lora_A", f"{target}.lora_B"


class LoRAModel(TrainableModel):
    """Wraps a base model; each target ``W`` is replaced by ``W + (alpha/r) B A`` in every forward."""

    def __init__(self, base: TrainableModel, spec: LoRASpec, targets: Sequence[str], params: Params, frozen):
        super().__init__(params, frozen)
        self.base = base
        self.spec = spec
        self.targets = tuple(targets)

    def effective_params(self, params: Params) -> Params:
        eff = {k: params[k] for k in self.base.params}
        s = self.spec.scale
        for t in self.targets:
            a, b = lora_names(t)
            eff[t] = params[t] + s * (params[b] @ params[a])
        return eff

    def loss_and_grads(self, params: Params, batch: Batch):
        loss, g = self.base.loss_and_grads(self.effective_params(params), batch)
        grads = dict(g)
        s = self.spec.scale
        for t in self.targets:
            a, b = lora_names(t)
            gw = g[t]
            grads[a] = s * (params[b].T @ gw)
            grads[b] = s * (gw @ params[a].T)
        return loss, grads

    def predict(self, params: Params, item):
        return self.base.predict(self.effective_params(params), item)

    def batch_metrics(self, params: Params, batch: Batch):
        return self.base.batch_metrics(self.effective_params(params), batch)


def inject_lora(model: TrainableModel, spec: LoRASpec, seed: int = 0) -> LoRAModel:
    """Attach rank-``r`` adapters to every matrix parameter matching ``spec.target_patterns``.

    ``A`` is drawn uniformly from ``±a_init_scale`` and ``B`` starts at zero, so
    the adapted model is exactly the base model at injection time. Every base
    parameter is frozen except those matching ``spec.train_patterns``.
    Non-matrix parameters are never targeted.
    """
    if isinstance(model, LoRAModel):
        raise SchemaError("model already carries LoRA adapters")
    targets = [n for n in match_names(model.params, spec.target_patterns) if model.params[n].ndim == 2]
    if not targets:
        raise NoTargetsMatched(f"no matrix parameter matches {list(spec.target_patterns)}")
    rng = np.random.default_rng(seed)
    params = dict(model.params)
    for t in targets:
        d_out, d_in = model.params[t].shape
        a, b = lora_names(t)
        params[a] = rng.uniform(-spec.a_init_scale, spec.a_init_scale, (spec.rank, d_in))
        params[b] = np.zeros((d_out, spec.rank))
    whitelisted = set(match_names(model.params, spec.train_patterns))
    frozen = [k for k in model.params if k not in whitelisted]
    return LoRAModel(model, spec, targets, params, frozen)


def merge_lora(model: TrainableModel) -> TrainableModel:
    """Fold the adapters into the base weights and return a plain base model."""
    if not isinstance(model, LoRAModel):
        raise NotAdapted("model has no LoRA adapters to merge")
    return model.base.with_params(model.effective_params(model.params))


def freeze(model: TrainableModel, patterns: Iterable[str]) -> TrainableModel:
    return model.with_frozen(model.frozen | set(match_names(model.params, patterns)))


def unfreeze(model: TrainableModel, patterns: Iterable[str]) -> TrainableModel:
    return model.with_frozen(model.frozen - set(match_names(model.params, patterns)))


def count_trainable(model: TrainableModel) -> int:
    return sum(int(np.size(v)) for k, v in model.params.items() if k not in model.frozen)


# ---------------------------------------------------------------------------
# Waveform augmentation

TEMPO_FRAME = 1024
TEMPO_RADIUS = 256


def _check_factor(factor: float) -> None:
    if not 0.5 <= factor <= 2.0:
        raise BadFactor(f"factor {factor} outside [0.5, 2.0]")


def apply_volume(wave: np.ndarray, gain: float) -> np.ndarray:
    if gain <= 0:
        raise BadFactor(f"gain must be positive, got {gain}")
    return np.clip(np.asarray(wave, dtype=np.float64) * gain, -1.0, 1.0)


def apply_speed(wave: np.ndarray, factor: float, sample_rate: int = 16000) -> np.ndarray:
    """Resample by linear interpolation; ``factor < 1`` slows down and lowers pitch."""
    _check_factor(factor)
    x = np.asarray(wave, dtype=np.float64)
    if factor == 1.0 or x.size == 0:
        return x.copy()
    n_out = int(round(x.size / factor))
    return np.interp(np.arange(n_out) * factor, np.arange(x.size), x)


def _window_energy(x: np.ndarray, length: int) -> np.ndarray:
    c = np.concatenate(([0.0], np.cumsum(x * x)))
    return c[length:] - c[:-length]


def apply_tempo(
    wave: np.ndarray,
    factor: float,
    sample_rate: int = 16000,
    frame: int = TEMPO_FRAME,
    radius: int = TEMPO_RADIUS,
) -> np.ndarray:
    """Time-stretch by waveform-similarity overlap-add, keeping pitch.

    Output frames advance by ``frame // 2``; input frames advance by that hop
    times ``factor``, each shifted within ``±radius`` samples to best continue
    the previous frame (normalized cross-correlation over the overlap). The
    result is trimmed or zero-padded to ``round(len / factor)`` samples.
    Inputs shorter than one frame are returned unchanged.
    """
    _check_factor(factor)
    x = np.asarray(wave, dtype=np.float64)
    n = x.size
    if n < frame:
        return x.copy()
    hop = frame // 2
    overlap = frame - hop
    n_out = int(round(n / factor))
    n_frames = -(-n_out // hop) + 1
    pad = radius + frame
    xp = np.pad(x, (pad, pad + 2 * frame + int(np.ceil(2 * hop * factor))))
    win = 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(frame) / frame)
    y = np.zeros(n_frames * hop + frame)
    wsum = np.zeros_like(y)
    deltas = np.arange(-radius, radius + 1)
    by_distance = np.argsort(np.abs(deltas), kind="stable")
    prev = 0
    for k in range(n_frames):
        nominal = int(round(k * hop * factor))
        if k == 0:
            pos = nominal
        else:
            t0 = pad + prev + hop
            template = xp[t0 : t0 + overlap]
            s0 = pad + nominal - radius
            region = xp[s0 : s0 + 2 * radius + overlap]
            corr = np.correlate(region, template, mode="valid")
            score = corr / np.sqrt(_window_energy(region, overlap) + 1e-12)
            best = by_distance[np.argmax(score[by_distance])]
            pos = nominal + int(deltas[best])
        y[k * hop : k * hop + frame] += win * xp[pad + pos : pad + pos + frame]
        wsum[k * hop : k * hop + frame] += win
        prev = pos
    nz = wsum > 1e-3
    y[nz] /= wsum[nz]
    return y[:n_out]


@dataclass(frozen=True)
class AugmentationSpec:
    p: float = 0.3
    ops: Tuple[Tuple[str, Tuple[float, ...]], ...] = (
        ("volume", (0.9, 1.1)),
        ("speed", (0.9,)),
        ("tempo", (0.9,)),
    )

    def __post_init__(self):
        ops = tuple((str(kind), tuple(float(f) for f in factors)) for kind, factors in self.ops)
        object.__setattr__(self, "ops", ops)
        if not 0.0 <= self.p <= 1.0:
            raise SchemaError("augmentation p must lie in [0, 1]")
        if not ops:
            raise SchemaError("augmentation needs at least one op")
        for kind, factors in ops:
            if kind not in _OPS:
                raise SchemaError(f"unknown augmentation {kind!r}")
            if not factors or any(f <= 0 for f in factors):
                raise SchemaError(f"{kind}: factors must be positive and non-empty")

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "AugmentationSpec":
        d = dict(d)
        if "ops" in d:
            ops = d["ops"]
            if isinstance(ops, Mapping):
                ops = list(ops.items())
            d["ops"] = tuple((kind, tuple(factors)) for kind, factors in ops)
        try:
            return cls(**d)
        except TypeError as exc:
            raise SchemaError(f"bad augmentation section: {exc}") from exc

    def to_dict(self) -> Dict[str, Any]:
        return {"p": self.p, "ops": {kind: list(factors) for kind, factors in self.ops}}


_OPS = {
    "volume": lambda w, f, sr: apply_volume(w, f),
    "speed": apply_speed,
    "tempo": apply_tempo,
}


def draw_augmentation(spec: AugmentationSpec, rng: np.random.Generator) -> Optional[Tuple[str, float]]:
    """Decide what :func:`augment` would do: ``None`` or ``(kind, factor)``."""
    if not rng.random() < spec.p:
        return None
    kind, factors = spec.ops[int(rng.integers(len(spec.ops)))]
    return kind, factors[int(rng.integers(len(factors)))]


def augment(wave: np.ndarray, spec: AugmentationSpec, rng: np.random.Generator, sample_rate: int = 16000) -> np.ndarray:
    choice = draw_augmentation(spec, rng)
    if choice is None:
        return np.asarray(wave, dtype=np.float64)
    kind, factor = choice
    return _OPS[kind](wave, factor, sample_rate)
