"""``from_pretrained``: fetch checksum-verified model archives named in a JSON registry.

Registry document::

    {"my-model": {"url": "https://host/my-model.tar.gz",
                  "sha256": "<64 hex chars>",
                  "files": [{"path": "config.yaml", "role": "config"},
                            {"path": "model.npz", "role": "weights"}]}}

Archives are cached under ``<cache_root>/models/<id>/<sha256[:12]>/``. The cache
root defaults to ``$EZ_HOME`` and then to ``~/.cache/ezpipe``.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import shutil
import tarfile
import tempfile
import urllib.error
import urllib.request
from dataclasses import dataclass
from pathlib import Path, PurePosixPath
from typing import Callable, Dict, Iterable, Iterator, Optional, Tuple

from filelock import FileLock

from .errors import ChecksumMismatch, DownloadError, MalformedRegistry, UnknownModel

_SHA256 = re.compile(r"^[0-9a-f]{64}$")
_MODEL_ID = re.compile(r"^[A-Za-z0-9._-]+$")
_MARKER = ".ez_complete"
_CHUNK = 1 << 16

# ``transport(url, offset)`` yields the resource's bytes starting at ``offset``.
# It may ignore ``offset`` only by raising; partial downloads rely on it.
Transport = Callable[[str, int], Iterable[bytes]]


@dataclass(frozen=True)
class ModelRef:
    id: str
    url: str
    sha256: str
    files: Tuple[Tuple[str, str], ...]

    def __post_init__(self):
        object.__setattr__(self, "files", tuple((str(p), str(r)) for p, r in self.files))
        if not _MODEL_ID.match(self.id) or self.id in (".", ".."):
            raise MalformedRegistry(f"model id {self.id!r} must be a single path component")
        if not _SHA256.match(self.sha256):
            raise MalformedRegistry(f"{self.id}: sha256 must be 64 lowercase hex chars")
        roles = [r for _, r in self.files]
        if roles.count("config") != 1 or roles.count("weights") != 1:
            raise MalformedRegistry(f"{self.id}: need exactly one config and one weights file")
        for p, _ in self.files:
            pp = PurePosixPath(p)
            if pp.is_absolute() or ".." in pp.parts:
                raise MalformedRegistry(f"{self.id}: file path {p!r} escapes the archive")

    def path_for(self, role: str) -> str:
        return next(p for p, r in self.files if r == role)

    def to_dict(self) -> Dict:
        return {"url": self.url, "sha256": self.sha256, "files": [{"path": p, "role": r} for p, r in self.files]}


@dataclass(frozen=True)
class ModelBundle:
    config_path: Path
    weights_path: Path
    resolved_ref: ModelRef


def parse_registry(text: str) -> Dict[str, ModelRef]:
    try:
        doc = json.loads(text)
        if not isinstance(doc, dict):
            raise TypeError("registry root must be an object")
        return {
            mid: ModelRef(mid, e["url"], e["sha256"], tuple((f["path"], f["role"]) for f in e["files"]))
            for mid, e in doc.items()
        }
    except (ValueError, KeyError, TypeError) as exc:
        if isinstance(exc, MalformedRegistry):
            raise
        raise MalformedRegistry(f"malformed registry: {exc}") from exc


def serialize_registry(refs: Dict[str, ModelRef]) -> str:
    return json.dumps({mid: ref.to_dict() for mid, ref in refs.items()}, indent=2, sort_keys=True) + "\n"


def urllib_transport(url: str, offset: int = 0) -> Iterator[bytes]:
    """Default transport: HTTP(S) with ``Range`` resumption, plus ``file://`` URLs."""
    req = urllib.request.Request(url)
    if offset:
        req.add_header("Range", f"bytes={offset}-")
    try:
        with urllib.request.urlopen(req, timeout=60) as resp:
            status = getattr(resp, "status", None)
            skip = offset if offset and status != 206 else 0
            while True:
                chunk = resp.read(_CHUNK)
                if not chunk:
                    return
                if skip:
                    drop = min(skip, len(chunk))
                    chunk, skip = chunk[drop:], skip - drop
                    if not chunk:
                        continue
                yield chunk
    except (urllib.error.URLError, OSError) as exc:
        raise DownloadError(f"cannot fetch {url}: {exc}") from exc


def _is_url(s: str) -> bool:
    return bool(re.match(r"^[a-z][a-z0-9+.-]*://", str(s)))


def resolve_model(model_id: str, registry, transport: Optional[Transport] = None) -> ModelRef:
    """Look up ``model_id`` in a registry file path or URL."""
    if _is_url(str(registry)):
        text = b"".join((transport or urllib_transport)(str(registry), 0)).decode("utf-8")
    else:
        try:
            text = Path(registry).read_text(encoding="utf-8")
        except OSError as exc:
            raise MalformedRegistry(f"cannot read registry {registry}: {exc}") from exc
    refs = parse_registry(text)
    if model_id not in refs:
        raise UnknownModel(f"model {model_id!r} not in registry")
    return refs[model_id]


def default_cache_root() -> Path:
    env = os.environ.get("EZ_HOME")
    if env:
        return Path(env)
    return Path(os.environ.get("XDG_CACHE_HOME", Path.home() / ".cache")) / "ezpipe"


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(_CHUNK), b""):
            h.update(chunk)
    return h.hexdigest()


def _bundle(entry: Path, ref: ModelRef) -> Optional[ModelBundle]:
    marker = entry / _MARKER
    if not marker.is_file() or marker.read_text().strip() != ref.sha256:
        return None
    cfg, wts = entry / ref.path_for("config"), entry / ref.path_for("weights")
    if not (cfg.is_file() and wts.is_file()):
        return None
    return ModelBundle(cfg, wts, ref)


def _safe_extract(archive: Path, dest: Path) -> None:
    with tarfile.open(archive) as tar:
        for member in tar.getmembers():
            p = PurePosixPath(member.name)
            if p.is_absolute() or ".." in p.parts or not (member.isfile() or member.isdir()):
                raise DownloadError(f"refusing unsafe archive member {member.name!r}")
        if hasattr(tarfile, "data_filter"):
            tar.extractall(dest, filter="data")
        else:
            tar.extractall(dest)


def _download(ref: ModelRef, partial: Path, transport: Transport) -> None:
    offset = partial.stat().st_size if partial.exists() else 0
    try:
        with open(partial, "ab") as fh:
            for chunk in transport(ref.url, offset):
                fh.write(chunk)
    except DownloadError:
        raise
    except Exception as exc:
        raise DownloadError(f"download of {ref.id} failed: {exc}") from exc


def from_pretrained(
    model_id: str,
    cache_root=None,
    registry=None,
    transport: Optional[Transport] = None,
) -> ModelBundle:
    """Return a verified local copy of ``model_id``, downloading it at most once.

    A warm cache is answered without touching ``transport``. Downloads go to a
    ``.partial`` file that survives failures (the next call resumes it); the
    checksum is verified before unpacking into a temp dir that is renamed into
    place, so an interrupted call never leaves an entry that looks complete.
    """
    if registry is None:
        raise MalformedRegistry("a registry path or URL is required")
    transport = transport or urllib_transport
    ref = resolve_model(model_id, registry, transport)
    root = Path(cache_root) if cache_root is not None else default_cache_root()
    model_dir = root / "models" / model_id
    entry = model_dir / ref.sha256[:12]

    found = _bundle(entry, ref)
    if found is not None:
        return found

    model_dir.mkdir(parents=True, exist_ok=True)
    with FileLock(str(model_dir / f"{ref.sha256[:12]}.lock")):
        found = _bundle(entry, ref)
        if found is not None:
            return found
        if entry.exists():
            shutil.rmtree(entry)
        partial = model_dir / f"{ref.sha256[:12]}.partial"
        _download(ref, partial, transport)
        digest = _sha256_file(partial)
        if digest != ref.sha256:
            partial.unlink()
            raise ChecksumMismatch(f"{model_id}: expected sha256 {ref.sha256}, got {digest}")
        tmp = Path(tempfile.mkdtemp(prefix=".unpack-", dir=model_dir))
        try:
            _safe_extract(partial, tmp)
            for p, _ in ref.files:
                if not (tmp / p).is_file():
                    raise MalformedRegistry(f"{model_id}: archive lacks {p!r}")
            (tmp / _MARKER).write_text(ref.sha256 + "\n")
            os.replace(tmp, entry)
        except tarfile.TarError as exc:
            raise DownloadError(f"{model_id}: cannot unpack archive: {exc}") from exc
        finally:
            if tmp.exists():
                shutil.rmtree(tmp, ignore_errors=True)
        partial.unlink()
    found = _bundle(entry, ref)
    assert found is not None
    return found
