"""
Fetching a model through a registry
===================================

Serve an archive from a local directory with a ``file://`` URL,
resolve it through a JSON registry and fetch it twice. The second
call is answered from the cache.
"""

import hashlib
import io
import json
import tarfile
import tempfile
from pathlib import Path

from ezpipe.modelhub import from_pretrained, urllib_transport

root = Path(tempfile.mkdtemp())

buf = io.BytesIO()
with tarfile.open(fileobj=buf, mode="w:gz") as tar:
    for name, data in [("config.yaml", b"classes: [a, b]\n"), ("model.npz", b"\x00" * 64)]:
        info = tarfile.TarInfo(name)
        info.size = len(data)
        tar.addfile(info, io.BytesIO(data))
(root / "demo.tar.gz").write_bytes(buf.getvalue())

registry = {
    "demo": {
        "url": (root / "demo.tar.gz").as_uri(),
        "sha256": hashlib.sha256(buf.getvalue()).hexdigest(),
        "files": [{"path": "config.yaml", "role": "config"}, {"path": "model.npz", "role": "weights"}],
    }
}
(root / "registry.json").write_text(json.dumps(registry))

calls = []


def counting(url, offset):
    calls.append(url)
    return urllib_transport(url, offset)


for _ in range(2):
    bundle = from_pretrained("demo", cache_root=root / "cache", registry=root / "registry.json", transport=counting)
    print(bundle.config_path, "downloads so far:", len(calls))
