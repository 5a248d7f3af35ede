"""
Reading and checking a Kaldi data directory
===========================================

Write a tiny corpus, load it back, then break it on purpose and
look at what the validator reports.
"""

import tempfile
from pathlib import Path

from ezpipe.manifest import DataDirectory, load_data_directory, validate_data_directory, write_data_directory
from ezpipe.reference import ToyCorpusSpec, generate_toy_corpus

root = Path(tempfile.mkdtemp())

# a generated corpus is already a valid data directory
dd = generate_toy_corpus(ToyCorpusSpec(n_utts=6, n_classes=2, seed=0), root / "toy")
print(sorted(p.name for p in (root / "toy").iterdir()))
print(dd.text)

# write/load is lossless
write_data_directory(dd, root / "copy")
assert load_data_directory(root / "copy") == dd

# drop one transcript and one speaker entry; every problem is listed
text = dict(dd.text)
text.pop("utt00000")
utt2spk = dict(dd.utt2spk)
utt2spk.pop("utt00001")
broken = DataDirectory.from_maps(wav=dd.wav, text=text, utt2spk=utt2spk)
for v in validate_data_directory(broken):
    print(v.kind.value, v.id, v.message)
