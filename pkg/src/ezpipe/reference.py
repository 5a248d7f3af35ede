"""Desk-scale fixtures: a synthetic tone corpus and a softmax classifier with analytic gradients."""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Sequence, Tuple

import numpy as np

from .audio import write_wav
from .errors import LabelError
from .manifest import DataDirectory, write_data_directory
from .model import Batch, Params, TrainableModel

FRAME = 400
HOP = 160
NFFT = 512
NUM_BANDS = 16
LOG_FLOOR = 1e-10


@dataclass(frozen=True)
class ToyCorpusSpec:
    n_utts: int = 200
    n_classes: int = 4
    sample_rate: int = 16000
    duration_range_sec: Tuple[float, float] = (0.2, 1.0)
    seed: int = 0

    def __post_init__(self):
        if self.n_utts < 1:
            raise ValueError("n_utts must be positive")
        if not 2 <= self.n_classes <= 16:
            raise ValueError("n_classes must be in [2, 16]")
        lo, hi = self.duration_range_sec
        if not 0 < lo <= hi:
            raise ValueError("bad duration range")


def class_name(c: int) -> str:
    return f"class{c}"


def class_frequency(c: int) -> float:
    return 200.0 * (c + 1)


def synth_utterance(spec: ToyCorpusSpec, index: int) -> Tuple[np.ndarray, int]:
    """Waveform and class for utterance ``index``; a pure function of ``(spec.seed, index)``."""
    rng = np.random.default_rng([spec.seed & (2**64 - 1), index])
    c = index % spec.n_classes
    n = int(round(rng.uniform(*spec.duration_range_sec) * spec.sample_rate))
    phase = rng.uniform(0.0, 2 * np.pi)
    t = np.arange(n) / spec.sample_rate
    wave = 0.5 * np.sin(2 * np.pi * class_frequency(c) * t + phase) + rng.normal(0.0, 0.01, n)
    return wave, c


def generate_toy_corpus(spec: ToyCorpusSpec, out_dir) -> DataDirectory:
    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    n_spk = math.ceil(spec.n_utts / 10)
    wav, text, utt2spk = {}, {}, {}
    for i in range(spec.n_utts):
        uid = f"utt{i:05d}"
        samples, c = synth_utterance(spec, i)
        path = (wav_dir / f"{uid}.wav").resolve()
        write_wav(path, samples, spec.sample_rate)
        wav[uid] = str(path)
        text[uid] = class_name(c)
        utt2spk[uid] = f"spk{i % n_spk:03d}"
    dd = DataDirectory.from_maps(wav, text, utt2spk)
    write_data_directory(dd, out_dir)
    return dd


def _hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f) / 700.0)


def _mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m) / 2595.0) - 1.0)


@lru_cache(maxsize=8)
def filterbank(sample_rate: int) -> np.ndarray:
    """(16, 257) mel-spaced triangular filters over the one-sided 512-point spectrum."""
    edges = _mel_to_hz(np.linspace(0.0, _hz_to_mel(sample_rate / 2), NUM_BANDS + 2))
    freqs = np.arange(NFFT // 2 + 1) * sample_rate / NFFT
    fb = np.zeros((NUM_BANDS, freqs.size))
    for m in range(NUM_BANDS):
        lo, mid, hi = edges[m : m + 3]
        fb[m] = np.maximum(0.0, np.minimum((freqs - lo) / (mid - lo), (hi - freqs) / (hi - mid)))
    fb.setflags(write=False)
    return fb


def frame_signal(wave: np.ndarray) -> np.ndarray:
    wave = np.asarray(wave, dtype=np.float64)
    if wave.size < FRAME:
        wave = np.pad(wave, (0, FRAME - wave.size))
    n_frames = 1 + (wave.size - FRAME) // HOP
    idx = np.arange(FRAME)[None, :] + HOP * np.arange(n_frames)[:, None]
    return wave[idx]


def toy_features(wave: np.ndarray, sample_rate: int = 16000) -> np.ndarray:
    """Log mel-band energies, shape ``(frames, 16)``; 400-sample Hamming frames, hop 160."""
    wave = np.asarray(wave, dtype=np.float64)
    if wave.size == 0:
        raise ValueError("empty waveform")
    frames = frame_signal(wave) * np.hamming(FRAME)
    power = np.abs(np.fft.rfft(frames, n=NFFT, axis=1)) ** 2
    energies = power @ filterbank(int(sample_rate)).T
    return np.log(np.maximum(energies, LOG_FLOOR))


def _softmax(z: np.ndarray) -> np.ndarray:
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


class ToyClassifier(TrainableModel):
    """Linear softmax classifier over mean-pooled :func:`toy_features`.

    Items need ``speech`` (or precomputed ``feats``) and, for training, a
    ``text`` class token. An optional ``(mean, std)`` normalizer is applied
    to the pooled features.
    """

    def __init__(
        self,
        classes: Sequence[str],
        sample_rate: int = 16000,
        normalizer: Optional[Tuple[np.ndarray, np.ndarray]] = None,
        params: Optional[Mapping[str, np.ndarray]] = None,
    ):
        self.classes = list(classes)
        self.class_index = {c: i for i, c in enumerate(self.classes)}
        self.sample_rate = sample_rate
        self.normalizer = normalizer
        k = len(self.classes)
        if params is None:
            params = {"W": np.zeros((k, NUM_BANDS)), "b": np.zeros(k)}
        super().__init__(params)

    def pooled(self, item: Mapping[str, Any]) -> np.ndarray:
        feats = item.get("feats")
        if feats is None:
            feats = toy_features(item["speech"], self.sample_rate)
        x = np.asarray(feats, dtype=np.float64).mean(axis=0)
        if self.normalizer is not None:
            mean, std = self.normalizer
            x = (x - mean) / std
        return x

    def _inputs(self, batch: Batch) -> np.ndarray:
        return np.stack([self.pooled(item) for item in batch])

    def _labels(self, batch: Batch) -> np.ndarray:
        try:
            return np.array([self.class_index[item["text"]] for item in batch])
        except KeyError as exc:
            raise LabelError(f"unknown class token {exc.args[0]!r}") from None

    def logits(self, params: Params, x: np.ndarray) -> np.ndarray:
        return x @ params["W"].T + params["b"]

    def loss_and_grads(self, params: Params, batch: Batch) -> Tuple[float, Params]:
        x = self._inputs(batch)
        y = self._labels(batch)
        p = _softmax(self.logits(params, x))
        rows = np.arange(len(y))
        loss = float(-np.mean(np.log(p[rows, y])))
        d = p.copy()
        d[rows, y] -= 1.0
        d /= len(y)
        return loss, {"W": d.T @ x, "b": d.sum(axis=0)}

    def predict(self, params: Params, item: Mapping[str, Any]) -> str:
        z = self.logits(params, self.pooled(item)[None, :])
        return self.classes[int(np.argmax(z[0]))]

    def batch_metrics(self, params: Params, batch: Batch) -> Dict[str, float]:
        y = self._labels(batch)
        z = self.logits(params, self._inputs(batch))
        return {"accuracy": float(np.mean(np.argmax(z, axis=1) == y))}


def toy_loss_and_grads(params: Params, batch: Batch, classes: Sequence[str], sample_rate: int = 16000):
    return ToyClassifier(classes, sample_rate).loss_and_grads(params, batch)
