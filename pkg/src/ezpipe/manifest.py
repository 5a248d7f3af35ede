"""Kaldi-style data directories: ``wav.scp``, ``text``, ``utt2spk``, ``spk2utt``, ``segments``.

Values may contain spaces (pipe commands such as ``sox a.flac -t wav - |``), so
every line is split on the first run of blanks only.
"""

from __future__ import annotations

import enum
import os
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, NamedTuple, Optional, Tuple

from .errors import DuplicateKey, IoError, MalformedLine, MissingManifest, ValidationFailure

REQUIRED_FILES = ("wav.scp", "text", "utt2spk")

_BLANK = " \t\r"
_SPLIT = re.compile(r"[ \t]+")

Segment = Tuple[str, float, float]


@dataclass(frozen=True)
class Utterance:
    id: str
    audio_source: str
    speaker_id: str
    transcript: str
    segment: Optional[Segment] = None

    def __post_init__(self):
        if not self.id or _SPLIT.search(self.id):
            raise ValueError(f"bad utterance id {self.id!r}")
        if self.segment is not None:
            _, start, end = self.segment
            if not 0 <= start < end:
                raise ValueError(f"bad segment bounds for {self.id}: {start}..{end}")


@dataclass
class DataDirectory:
    wav: Dict[str, str] = field(default_factory=dict)
    text: Dict[str, str] = field(default_factory=dict)
    utt2spk: Dict[str, str] = field(default_factory=dict)
    spk2utt: Dict[str, List[str]] = field(default_factory=dict)
    segments: Optional[Dict[str, Segment]] = None

    @classmethod
    def from_maps(cls, wav, text, utt2spk, segments=None) -> "DataDirectory":
        """Build a directory, deriving ``spk2utt`` from ``utt2spk``."""
        return cls(
            wav=dict(wav),
            text=dict(text),
            utt2spk=dict(utt2spk),
            spk2utt=invert_speaker_map(utt2spk),
            segments=None if segments is None else dict(segments),
        )

    def utterance_ids(self) -> List[str]:
        keys = self.segments if self.segments is not None else self.wav
        return sorted(keys)


class ViolationKind(str, enum.Enum):
    BadId = "BadId"
    BadValue = "BadValue"
    MissingAudio = "MissingAudio"
    MissingText = "MissingText"
    MissingSpeaker = "MissingSpeaker"
    SpeakerMapMismatch = "SpeakerMapMismatch"
    BadSegment = "BadSegment"
    UnknownRecording = "UnknownRecording"

    def __str__(self) -> str:
        return self.value


class Violation(NamedTuple):
    kind: ViolationKind
    id: str
    message: str = ""

    def __str__(self) -> str:
        return f"{self.kind}\t{self.id}\t{self.message}"


def _decode_lines(content):
    if isinstance(content, str):
        yield from enumerate(content.split("\n"), start=1)
        return
    for lineno, raw in enumerate(bytes(content).split(b"\n"), start=1):
        try:
            yield lineno, raw.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise MalformedLine(f"invalid UTF-8: {exc.reason}", lineno) from exc


def parse_scp_text(content) -> Dict[str, str]:
    """Parse ``.scp``-style text (``str`` or UTF-8 ``bytes``) into an ordered key/value map.

    Blank lines are skipped. The key is the first token; the value is the rest
    of the line with surrounding blanks stripped.
    """
    out: Dict[str, str] = {}
    for lineno, line in _decode_lines(content):
        line = line.strip(_BLANK)
        if not line:
            continue
        parts = _SPLIT.split(line, maxsplit=1)
        if len(parts) < 2 or not parts[1].strip(_BLANK):
            raise MalformedLine(f"no value for key {parts[0]!r}", lineno)
        key, value = parts[0], parts[1].strip(_BLANK)
        if key in out:
            raise DuplicateKey(key, lineno)
        out[key] = value
    return out


def format_scp(entries: Dict[str, str]) -> str:
    return "".join(f"{k} {entries[k]}\n" for k in sorted(entries))


def invert_speaker_map(utt2spk: Dict[str, str]) -> Dict[str, List[str]]:
    spk2utt: Dict[str, List[str]] = {}
    for utt, spk in utt2spk.items():
        spk2utt.setdefault(spk, []).append(utt)
    return {spk: sorted(spk2utt[spk]) for spk in sorted(spk2utt)}


def _parse_spk2utt(content) -> Dict[str, List[str]]:
    return {spk: _SPLIT.split(rest) for spk, rest in parse_scp_text(content).items()}


def _parse_segments(content) -> Dict[str, Segment]:
    segments: Dict[str, Segment] = {}
    for seg_id, rest in parse_scp_text(content).items():
        parts = _SPLIT.split(rest)
        if len(parts) != 3:
            raise MalformedLine(f"segment {seg_id!r} needs '<rec> <start> <end>'")
        try:
            segments[seg_id] = (parts[0], float(parts[1]), float(parts[2]))
        except ValueError as exc:
            raise MalformedLine(f"segment {seg_id!r}: {exc}") from exc
    return segments


def _read(path: Path) -> bytes:
    try:
        return path.read_bytes()
    except OSError as exc:
        raise IoError(str(exc)) from exc


def load_data_directory(path, validate: bool = True) -> DataDirectory:
    """Read a data directory.

    ``spk2utt`` is regenerated from ``utt2spk`` when absent. With ``validate``
    (the default) every invariant violation is collected and raised together as
    :class:`ValidationFailure`.
    """
    path = Path(path)
    for name in REQUIRED_FILES:
        if not (path / name).is_file():
            raise MissingManifest(name)
    wav = parse_scp_text(_read(path / "wav.scp"))
    text = parse_scp_text(_read(path / "text"))
    utt2spk = parse_scp_text(_read(path / "utt2spk"))
    if (path / "spk2utt").is_file():
        spk2utt = _parse_spk2utt(_read(path / "spk2utt"))
    else:
        spk2utt = invert_speaker_map(utt2spk)
    segments = None
    if (path / "segments").is_file():
        segments = _parse_segments(_read(path / "segments"))
    dd = DataDirectory(wav=wav, text=text, utt2spk=utt2spk, spk2utt=spk2utt, segments=segments)
    if validate:
        violations = validate_data_directory(dd)
        if violations:
            raise ValidationFailure(violations)
    return dd


def _bad_value(value: str) -> bool:
    return not value or value != value.strip(_BLANK) or "\n" in value


def validate_data_directory(dd: DataDirectory) -> List[Violation]:
    """Return every invariant violation in ``dd``; an empty list means valid."""
    V, K = Violation, ViolationKind
    out: List[Violation] = []

    audio_keys = set(dd.segments) if dd.segments is not None else set(dd.wav)
    named = [("wav.scp", dd.wav), ("text", dd.text), ("utt2spk", dd.utt2spk)]
    if dd.segments is not None:
        named.append(("segments", dd.segments))
    for fname, mapping in named:
        for key in sorted(mapping):
            if not key or _SPLIT.search(key) or "\n" in key:
                out.append(V(K.BadId, key, f"key in {fname} is empty or has whitespace"))
    for fname, mapping in (("wav.scp", dd.wav), ("text", dd.text), ("utt2spk", dd.utt2spk)):
        for key in sorted(mapping):
            if _bad_value(mapping[key]):
                out.append(V(K.BadValue, key, f"value in {fname} is empty or not single-line"))
            elif fname == "utt2spk" and _SPLIT.search(mapping[key]):
                out.append(V(K.BadValue, key, "speaker id contains whitespace"))

    for utt in sorted((set(dd.text) | set(dd.utt2spk)) - audio_keys):
        out.append(V(K.MissingAudio, utt, "listed in text/utt2spk but has no audio entry"))
    for utt in sorted(audio_keys - set(dd.text)):
        out.append(V(K.MissingText, utt, "no transcript in text"))
    for utt in sorted(audio_keys - set(dd.utt2spk)):
        out.append(V(K.MissingSpeaker, utt, "no speaker in utt2spk"))

    expected = invert_speaker_map(dd.utt2spk)
    for spk in sorted(set(expected) | set(dd.spk2utt)):
        if expected.get(spk) != dd.spk2utt.get(spk):
            out.append(V(K.SpeakerMapMismatch, spk, "spk2utt is not the inverse of utt2spk"))

    if dd.segments is not None:
        for seg_id in sorted(dd.segments):
            rec, start, end = dd.segments[seg_id]
            if not (0 <= start < end):
                out.append(V(K.BadSegment, seg_id, f"need 0 <= start < end, got {start}..{end}"))
            if rec not in dd.wav:
                out.append(V(K.UnknownRecording, seg_id, f"recording {rec!r} not in wav.scp"))
    return out


def _fmt_time(t: float) -> str:
    return repr(float(t))


def write_data_directory(dd: DataDirectory, path) -> None:
    """Write ``dd`` with sorted keys, one single-space-separated record per line."""
    path = Path(path)
    files = {
        "wav.scp": format_scp(dd.wav),
        "text": format_scp(dd.text),
        "utt2spk": format_scp(dd.utt2spk),
        "spk2utt": format_scp({s: " ".join(u) for s, u in dd.spk2utt.items()}),
    }
    if dd.segments is not None:
        files["segments"] = format_scp(
            {k: f"{r} {_fmt_time(s)} {_fmt_time(e)}" for k, (r, s, e) in dd.segments.items()}
        )
    try:
        path.mkdir(parents=True, exist_ok=True)
        for name, body in files.items():
            tmp = path / f".{name}.tmp"
            tmp.write_bytes(body.encode("utf-8"))
            os.replace(tmp, path / name)
        if dd.segments is None and (path / "segments").exists():
            (path / "segments").unlink()
    except OSError as exc:
        raise IoError(str(exc)) from exc


def resolve_segments(dd: DataDirectory) -> List[Utterance]:
    """Flatten ``dd`` into one :class:`Utterance` per segment (or per recording)."""
    if dd.segments is None:
        return [
            Utterance(u, dd.wav[u], dd.utt2spk[u], dd.text[u]) for u in sorted(dd.wav)
        ]
    return [
        Utterance(seg, dd.wav[rec], dd.utt2spk[seg], dd.text[seg], (rec, float(s), float(e)))
        for seg, (rec, s, e) in sorted(dd.segments.items())
    ]
