from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest

from ezpipe.audio import read_wav, write_wav
from ezpipe.dataset import EZDataset, build_dataset, from_data_directory, get_item, to_data_directory
from ezpipe.errors import DuplicateKey, ExtractionError, SchemaError
from ezpipe.manifest import DataDirectory, load_data_directory, write_data_directory


class Counting:
    def __init__(self, fn):
        self.fn = fn
        self.calls = 0

    def __call__(self, r):
        self.calls += 1
        return self.fn(r)


def test_build_has_length():
    src = [(np.zeros(4), "a"), (np.ones(4), "b"), (np.ones(2), "c")]
    ds = build_dataset(src, {"speech": lambda r: r[0], "text": lambda r: r[1]})
    assert len(ds) == 3
    assert ds.ids == ("0", "1", "2")


def test_duplicate_ids():
    with pytest.raises(DuplicateKey):
        build_dataset([1, 2], {"x": lambda r: r}, ids=["a", "a"])


def test_id_count_must_match():
    with pytest.raises(SchemaError):
        build_dataset([1, 2], {"x": lambda r: r}, ids=["a"])


def test_empty_data_info():
    with pytest.raises(SchemaError):
        build_dataset([1], {})


def test_laziness_and_deferred_failure():
    def fragile(r):
        if r == 2:
            raise RuntimeError("boom")
        return np.array([float(r)])

    counter = Counting(fragile)
    ds = build_dataset(list(range(4)), {"x": counter})
    assert counter.calls == 0
    assert get_item(ds, 1)["x"][0] == 1.0
    assert counter.calls == 1
    with pytest.raises(ExtractionError) as exc:
        ds[2]
    assert exc.value.field == "x" and exc.value.id == "2"
    assert isinstance(exc.value.cause, RuntimeError)


def test_identity_extractor():
    ds = build_dataset(["tok"], {"f": lambda r: r})
    assert ds[0] == {"f": "tok"}


def test_extractors_see_same_record_instance():
    seen = []

    class Rec:
        pass

    recs = [Rec()]
    ds = build_dataset(recs, {"a": lambda r: seen.append(r) or "a", "b": lambda r: seen.append(r) or "b"})
    ds[0]
    assert len(seen) == 2 and seen[0] is seen[1] is recs[0]


def test_get_item_matches_direct_application(rng):
    src = [rng.normal(size=(int(rng.integers(1, 9)), 3)) for _ in range(100)]
    info = {"feats": lambda r: r * 2.0, "frames": lambda r: str(r.shape[0])}
    ds = build_dataset(src, info, ids=[f"id{i:03d}" for i in range(100)])
    for i, rec in enumerate(src):
        item = ds[i]
        assert set(item) == set(info)
        np.testing.assert_array_equal(item["feats"], rec * 2.0)
        assert item["frames"] == str(rec.shape[0])
        np.testing.assert_array_equal(ds[f"id{i:03d}"]["feats"], item["feats"])


def test_index_errors():
    ds = build_dataset([1, 2], {"x": lambda r: np.array([r])})
    with pytest.raises(IndexError):
        ds[2]
    with pytest.raises(IndexError):
        ds[-1]
    with pytest.raises(KeyError):
        ds["missing"]


def test_non_finite_values_rejected():
    ds = build_dataset([1], {"x": lambda r: np.array([np.nan])})
    with pytest.raises(ExtractionError):
        ds[0]


def test_determinism_and_thread_safety(rng):
    src = [rng.normal(size=50) for _ in range(64)]
    ds = build_dataset(src, {"x": lambda r: np.cumsum(r)})
    serial = [ds[i]["x"] for i in range(len(ds))]
    with ThreadPoolExecutor(8) as pool:
        parallel = list(pool.map(lambda i: ds[i]["x"], range(len(ds))))
    for a, b in zip(serial, parallel):
        np.testing.assert_array_equal(a, b)


def _toy_dd(tmp_path, n=3, rate=16000, rng=None):
    rng = rng or np.random.default_rng(0)
    wav, text, spk = {}, {}, {}
    for i in range(n):
        uid = f"utt{i}"
        path = tmp_path / f"{uid}.wav"
        write_wav(path, rng.uniform(-0.5, 0.5, rate), rate)
        wav[uid], text[uid], spk[uid] = str(path), f"word{i} more", f"s{i % 2}"
    return DataDirectory.from_maps(wav, text, spk)


def test_from_data_directory_sorted_ids(tmp_path):
    dd = _toy_dd(tmp_path)
    ds = from_data_directory(dd)
    assert len(ds) == 3
    assert list(ds.ids) == sorted(ds.ids)


def test_segment_trimming(tmp_path):
    dd = _toy_dd(tmp_path, n=1)
    dd = DataDirectory.from_maps(
        {"rec": dd.wav["utt0"]}, {"seg": "hi"}, {"seg": "spk"}, {"seg": ("rec", 0.0, 0.5)}
    )
    assert from_data_directory(dd)[0]["speech"].shape == (8000,)


def test_transcripts_match_toy_corpus(toy_dir):
    dd = load_data_directory(toy_dir)
    ds = from_data_directory(dd)
    for uid in ds.ids:
        assert ds[uid]["text"] == dd.text[uid]


def test_loader_failure_surfaces(tmp_path):
    dd = DataDirectory.from_maps({"u": str(tmp_path / "nope.wav")}, {"u": "t"}, {"u": "s"})
    with pytest.raises(ExtractionError) as exc:
        from_data_directory(dd)[0]
    assert exc.value.field == "speech"


def test_to_data_directory_two_items(tmp_path):
    src = [(np.zeros(100), "a b"), (np.full(50, 0.25), "c")]
    ds = build_dataset(src, {"speech": lambda r: r[0], "text": lambda r: r[1]}, ids=["x", "y"])
    dd = to_data_directory(ds, tmp_path / "out", 16000)
    assert sorted(dd.wav) == ["x", "y"]
    assert dd.utt2spk == {"x": "x", "y": "y"}
    assert load_data_directory(tmp_path / "out") == dd


def test_to_data_directory_requires_text(tmp_path):
    ds = build_dataset([np.zeros(3)], {"speech": lambda r: r})
    with pytest.raises(SchemaError):
        to_data_directory(ds, tmp_path, 16000)


def test_legacy_round_trip_is_sample_exact(toy_dir, tmp_path):
    ds = from_data_directory(load_data_directory(toy_dir))
    back = from_data_directory(to_data_directory(ds, tmp_path / "dump", 16000))
    assert back.ids == ds.ids
    for uid in ds.ids:
        a, b = ds[uid], back[uid]
        assert a["text"] == b["text"] and a["speaker"] == b["speaker"]
        np.testing.assert_array_equal(a["speech"], b["speech"])


def test_pipe_command_audio(tmp_path):
    path = tmp_path / "a.wav"
    write_wav(path, np.linspace(-0.5, 0.5, 160), 16000)
    samples, rate = read_wav(f"cat {path} |")
    assert rate == 16000
    np.testing.assert_array_equal(samples, read_wav(str(path))[0])
