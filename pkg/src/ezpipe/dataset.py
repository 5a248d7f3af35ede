"""Map-style datasets defined by named extractor functions.

A dataset is a source (anything with ``len`` and integer indexing) plus an
ordered mapping ``field name -> extractor``. Extractors run lazily, once per
field per :meth:`EZDataset.__getitem__` call, so nothing is dumped to disk
ahead of training.

>>> ds = EZDataset([("a", 1), ("b", 2)], {"text": lambda r: r[0]})
>>> ds[1]
{'text': 'b'}
"""

from __future__ import annotations

from pathlib import Path
from typing import Any, Callable, Dict, Mapping, Optional, Sequence, Union

import numpy as np

from . import audio as _audio
from .errors import DuplicateKey, ExtractionError, SchemaError
from .manifest import DataDirectory, resolve_segments, write_data_directory

Extractor = Callable[[Any], Any]
DataInfo = Mapping[str, Extractor]


def _check_data_info(data_info: DataInfo) -> Dict[str, Extractor]:
    info = dict(data_info)
    if not info:
        raise SchemaError("data_info needs at least one field")
    for name, fn in info.items():
        if not isinstance(name, str) or not name:
            raise SchemaError(f"bad field name {name!r}")
        if not callable(fn):
            raise SchemaError(f"extractor for {name!r} is not callable")
    return info


def _check_value(value):
    if isinstance(value, str):
        return value
    arr = np.asarray(value)
    if arr.dtype.kind not in "biuf":
        raise TypeError(f"field value must be a string or real array, got {arr.dtype}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("field value contains NaN or Inf")
    return arr


class EZDataset:
    """Lazy dataset over ``source``; items are addressable by index or string id."""

    def __init__(self, source, data_info: DataInfo, ids: Optional[Sequence[str]] = None):
        self.source = source
        self.data_info = _check_data_info(data_info)
        n = len(source)
        if ids is None:
            ids = [str(i) for i in range(n)]
        ids = [str(i) for i in ids]
        if len(ids) != n:
            raise SchemaError(f"{len(ids)} ids for {n} records")
        index: Dict[str, int] = {}
        for i, key in enumerate(ids):
            if key in index:
                raise DuplicateKey(key)
            index[key] = i
        self.ids = tuple(ids)
        self._index = index

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def fields(self):
        return tuple(self.data_info)

    def position(self, key: Union[int, str]) -> int:
        if isinstance(key, str):
            try:
                return self._index[key]
            except KeyError:
                raise KeyError(f"unknown id {key!r}") from None
        i = int(key)
        if not 0 <= i < len(self.ids):
            raise IndexError(f"index {i} out of range for dataset of length {len(self.ids)}")
        return i

    def __getitem__(self, key: Union[int, str]) -> Dict[str, Any]:
        i = self.position(key)
        record = self.source[i]
        item = {}
        for name, fn in self.data_info.items():
            try:
                item[name] = _check_value(fn(record))
            except Exception as exc:
                raise ExtractionError(name, self.ids[i], exc) from exc
        return item

    def __iter__(self):
        for i in range(len(self)):
            yield self[i]

    def __repr__(self) -> str:
        return f"EZDataset(n={len(self)}, fields={list(self.data_info)})"


def build_dataset(source, data_info: DataInfo, ids: Optional[Sequence[str]] = None) -> EZDataset:
    return EZDataset(source, data_info, ids)


def get_item(ds: EZDataset, index_or_id) -> Dict[str, Any]:
    return ds[index_or_id]


def from_data_directory(
    dd: DataDirectory,
    audio_loader: Callable = _audio.load_audio,
) -> EZDataset:
    """Expose a Kaldi data directory as a dataset with ``speech``, ``text`` and ``speaker``."""
    utts = resolve_segments(dd)
    return EZDataset(
        utts,
        {
            "speech": lambda u: audio_loader(u.audio_source, u.segment),
            "text": lambda u: u.transcript,
            "speaker": lambda u: u.speaker_id,
        },
        ids=[u.id for u in utts],
    )


def to_data_directory(ds: EZDataset, out_path, sample_rate_hz: int) -> DataDirectory:
    """Dump ``ds`` as WAV files plus manifests under ``out_path``.

    Each id becomes its own speaker unless the dataset has a ``speaker`` field.
    """
    for required in ("speech", "text"):
        if required not in ds.data_info:
            raise SchemaError(f"dataset lacks required field {required!r}")
    if sample_rate_hz <= 0:
        raise ValueError("sample_rate_hz must be positive")
    out_path = Path(out_path)
    wav_dir = out_path / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    wav, text, utt2spk = {}, {}, {}
    for i, uid in enumerate(ds.ids):
        item = ds[i]
        speech = np.asarray(item["speech"])
        if speech.ndim != 1:
            raise SchemaError(f"speech for {uid!r} must be a mono waveform")
        if not isinstance(item["text"], str):
            raise SchemaError(f"text for {uid!r} must be a string")
        target = (wav_dir / f"{uid}.wav").resolve()
        _audio.write_wav(target, speech, sample_rate_hz)
        wav[uid] = str(target)
        text[uid] = item["text"]
        utt2spk[uid] = str(item["speaker"]) if "speaker" in item else uid
    dd = DataDirectory.from_maps(wav, text, utt2spk)
    write_data_directory(dd, out_path)
    return dd
