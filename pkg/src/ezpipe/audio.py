"""16-bit PCM mono WAV I/O and the default ``audio_loader`` for data directories."""

from __future__ import annotations

import io
import subprocess
import wave
from pathlib import Path
from typing import Optional, Tuple

import numpy as np

from .errors import IoError

# int16 <-> float uses a 2**15 scale so that read(write(read(x))) is sample-exact.
_SCALE = 32768.0


def to_pcm16(wave_: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(wave_, dtype=np.float64) * _SCALE), -32768, 32767).astype("<i2")


def write_wav(path, samples: np.ndarray, sample_rate: int) -> None:
    pcm = to_pcm16(samples)
    if pcm.ndim != 1:
        raise ValueError("only mono waveforms are supported")
    try:
        with wave.open(str(path), "wb") as fh:
            fh.setnchannels(1)
            fh.setsampwidth(2)
            fh.setframerate(int(sample_rate))
            fh.writeframes(pcm.tobytes())
    except OSError as exc:
        raise IoError(str(exc)) from exc


def _decode(fh) -> Tuple[np.ndarray, int]:
    with wave.open(fh, "rb") as w:
        if w.getsampwidth() != 2 or w.getnchannels() != 1:
            raise ValueError("expected 16-bit mono PCM")
        rate = w.getframerate()
        data = w.readframes(w.getnframes())
    return np.frombuffer(data, dtype="<i2").astype(np.float64) / _SCALE, rate


def read_wav(source) -> Tuple[np.ndarray, int]:
    """Read a WAV file, or the stdout of a Kaldi pipe command ending in ``|``."""
    if isinstance(source, str) and source.rstrip().endswith("|"):
        cmd = source.rstrip()[:-1]
        proc = subprocess.run(cmd, shell=True, capture_output=True)
        if proc.returncode != 0:
            raise IoError(f"pipe command failed ({proc.returncode}): {cmd}")
        return _decode(io.BytesIO(proc.stdout))
    try:
        with open(Path(source), "rb") as fh:
            return _decode(fh)
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_audio(source: str, segment: Optional[Tuple[str, float, float]] = None) -> np.ndarray:
    """Default loader: read ``source`` and trim to ``segment`` (recording, start, end) seconds."""
    samples, rate = read_wav(source)
    if segment is not None:
        _, start, end = segment
        samples = samples[int(round(start * rate)) : int(round(end * rate))]
    return samples
