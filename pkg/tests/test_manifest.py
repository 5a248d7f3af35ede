import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ezpipe.errors import DuplicateKey, MalformedLine, MissingManifest, ValidationFailure
from ezpipe.manifest import (
    DataDirectory,
    Utterance,
    ViolationKind,
    invert_speaker_map,
    load_data_directory,
    parse_scp_text,
    resolve_segments,
    validate_data_directory,
    write_data_directory,
)

from factories import random_data_directory, random_id, random_text


def oracle_split(line):
    """Character-by-character split at the first run of spaces/tabs."""
    line = line.strip(" \t\r")
    i = 0
    while i < len(line) and line[i] not in " \t":
        i += 1
    key = line[:i]
    while i < len(line) and line[i] in " \t":
        i += 1
    return key, line[i:]


def small_dd():
    return DataDirectory.from_maps(
        {"u1": "/d/1.wav", "u2": "/d/2.wav", "u3": "/d/3.wav"},
        {"u1": "hello world", "u2": "foo", "u3": "bar baz"},
        {"u1": "s1", "u2": "s1", "u3": "s2"},
    )


class TestParseScp:
    def test_single_line(self):
        assert parse_scp_text("utt1 /d/a.wav\n") == {"utt1": "/d/a.wav"}

    def test_empty(self):
        assert parse_scp_text("") == {}

    def test_pipe_values_keep_spaces(self):
        assert parse_scp_text("u1 cat a.flac |\nu2 b.wav\n") == {"u1": "cat a.flac |", "u2": "b.wav"}

    def test_randomized_against_line_oracle(self, rng):
        for _ in range(50):
            n = int(rng.integers(0, 30))
            keys = list(dict.fromkeys(random_id(rng) for _ in range(n)))
            lines = []
            for k in keys:
                sep = rng.choice([" ", "\t", "  ", " \t "])
                lines.append(f"{k}{sep}{random_text(rng)}" + rng.choice(["", " ", "\t", "\r"]))
                if rng.random() < 0.2:
                    lines.append(rng.choice(["", "   "]))
            content = "\n".join(lines) + rng.choice(["", "\n"])
            expected = dict(oracle_split(l) for l in lines if l.strip(" \t\r"))
            got = parse_scp_text(content)
            assert got == expected
            assert list(got) == keys

    def test_bytes_input(self):
        assert parse_scp_text("u1 héllo\n".encode("utf-8")) == {"u1": "héllo"}

    def test_invalid_utf8_is_malformed(self):
        with pytest.raises(MalformedLine) as exc:
            parse_scp_text(b"u1 ok\nu2 \xff\xfe\n")
        assert exc.value.line == 2

    def test_duplicate_key_reports_line(self):
        with pytest.raises(DuplicateKey) as exc:
            parse_scp_text("a 1\nb 2\na 3\n")
        assert exc.value.line == 3

    def test_key_only_line(self):
        with pytest.raises(MalformedLine):
            parse_scp_text("a 1\nlonely\n")

    @given(st.dictionaries(st.from_regex(r"[A-Za-z0-9_]{1,8}", fullmatch=True),
                           st.from_regex(r"[a-z0-9/|][a-z0-9 /|.]{0,20}[a-z0-9/|.]", fullmatch=True)))
    def test_reserialization_is_idempotent(self, entries):
        from ezpipe.manifest import format_scp

        once = parse_scp_text(format_scp(entries))
        assert once == entries
        assert format_scp(once) == format_scp(entries)


class TestLoad:
    def test_toy_dir(self, tmp_path):
        write_data_directory(small_dd(), tmp_path)
        dd = load_data_directory(tmp_path)
        assert len(dd.wav) == 3
        assert len(dd.spk2utt) == 2

    def test_missing_text(self, tmp_path):
        write_data_directory(small_dd(), tmp_path)
        (tmp_path / "text").unlink()
        with pytest.raises(MissingManifest) as exc:
            load_data_directory(tmp_path)
        assert exc.value.name == "text"
        assert "text" in str(exc.value)

    def test_spk2utt_regenerated(self, tmp_path):
        write_data_directory(small_dd(), tmp_path)
        (tmp_path / "spk2utt").unlink()
        assert load_data_directory(tmp_path).spk2utt == {"s1": ["u1", "u2"], "s2": ["u3"]}

    def test_all_violations_reported(self, tmp_path):
        write_data_directory(small_dd(), tmp_path)
        (tmp_path / "text").write_text("u1 a\nu9 b\n")
        with pytest.raises(ValidationFailure) as exc:
            load_data_directory(tmp_path)
        kinds = {(v.kind, v.id) for v in exc.value.violations}
        assert kinds >= {(ViolationKind.MissingAudio, "u9"), (ViolationKind.MissingText, "u2"),
                         (ViolationKind.MissingText, "u3")}

    def test_toy_corpus_round_trips(self, toy_dir, tmp_path):
        dd = load_data_directory(toy_dir)
        write_data_directory(dd, tmp_path)
        assert load_data_directory(tmp_path) == dd


class TestValidate:
    def test_consistent(self):
        assert validate_data_directory(small_dd()) == []

    def test_text_without_audio(self):
        dd = small_dd()
        dd.text["u4"] = "extra"
        assert [(v.kind, v.id) for v in validate_data_directory(dd)] == [(ViolationKind.MissingAudio, "u4")]

    def test_empty_segment(self):
        dd = DataDirectory.from_maps(
            {"rec1": "/r.wav"}, {"s1": "hi"}, {"s1": "spk"}, {"s1": ("rec1", 1.0, 1.0)}
        )
        assert [(v.kind, v.id) for v in validate_data_directory(dd)] == [(ViolationKind.BadSegment, "s1")]

    def test_unknown_recording(self):
        dd = DataDirectory.from_maps({"rec1": "/r.wav"}, {"s1": "hi"}, {"s1": "spk"}, {"s1": ("rec9", 0.0, 1.0)})
        assert [v.kind for v in validate_data_directory(dd)] == [ViolationKind.UnknownRecording]

    def test_spk2utt_mismatch(self):
        dd = small_dd()
        dd.spk2utt["s2"] = ["u3", "u1"]
        assert [v.kind for v in validate_data_directory(dd)] == [ViolationKind.SpeakerMapMismatch]

    def test_bad_id(self):
        dd = small_dd()
        for m in (dd.wav, dd.text, dd.utt2spk):
            m["bad id"] = "v"
        dd.spk2utt = invert_speaker_map(dd.utt2spk)
        assert {v.kind for v in validate_data_directory(dd)} == {ViolationKind.BadId}

    def test_both_directions_on_random_fixtures(self, rng):
        mutations = [
            lambda dd: dd.text.pop(next(iter(dd.text))),
            lambda dd: dd.utt2spk.pop(next(iter(dd.utt2spk))),
            lambda dd: dd.text.__setitem__("zz_extra", "x"),
            lambda dd: dd.spk2utt.__setitem__("ghost", ["nobody"]),
            lambda dd: dd.text.__setitem__(next(iter(dd.text)), " padded "),
        ]
        for _ in range(100):
            dd = random_data_directory(rng, n=int(rng.integers(1, 20)))
            assert validate_data_directory(dd) == []
            mutations[int(rng.integers(len(mutations)))](dd)
            assert validate_data_directory(dd) != []


class TestInvert:
    def test_simple(self):
        assert invert_speaker_map({"u1": "s1", "u2": "s1"}) == {"s1": ["u1", "u2"]}

    def test_empty(self):
        assert invert_speaker_map({}) == {}

    def test_involution_by_flattening(self, rng):
        pairs = {f"u{rng.integers(10**9)}": f"s{rng.integers(30)}" for _ in range(1000)}
        inv = invert_speaker_map(pairs)
        flattened = {u: s for s, us in inv.items() for u in us}
        assert flattened == pairs
        assert sum(len(v) for v in inv.values()) == len(pairs)
        assert all(v == sorted(v) for v in inv.values())


class TestWrite:
    def test_random_round_trip(self, rng, tmp_path):
        for i in range(30):
            dd = random_data_directory(rng)
            write_data_directory(dd, tmp_path / str(i))
            assert load_data_directory(tmp_path / str(i)) == dd

    def test_pipe_source_byte_exact(self, tmp_path):
        cmd = "sox  -t flac a.flac -t wav -  rate 16k |"
        dd = DataDirectory.from_maps({"u": cmd}, {"u": "t"}, {"u": "s"})
        write_data_directory(dd, tmp_path)
        assert (tmp_path / "wav.scp").read_bytes() == f"u {cmd}\n".encode()
        assert load_data_directory(tmp_path).wav["u"] == cmd

    def test_empty_dd(self, tmp_path):
        write_data_directory(DataDirectory(), tmp_path)
        assert sorted(p.name for p in tmp_path.iterdir()) == ["spk2utt", "text", "utt2spk", "wav.scp"]
        assert all(p.read_bytes() == b"" for p in tmp_path.iterdir())

    def test_sorted_keys_and_format(self, tmp_path):
        dd = DataDirectory.from_maps({"b": "/b", "a": "/a"}, {"b": "B", "a": "A"}, {"b": "s", "a": "s"})
        write_data_directory(dd, tmp_path)
        assert (tmp_path / "wav.scp").read_text() == "a /a\nb /b\n"
        assert (tmp_path / "spk2utt").read_text() == "s a b\n"

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1))
    def test_round_trip_property(self, tmp_path_factory, seed):
        dd = random_data_directory(np.random.default_rng(seed))
        d = tmp_path_factory.mktemp("rt")
        write_data_directory(dd, d)
        assert load_data_directory(d) == dd


class TestResolveSegments:
    def test_without_segments(self):
        utts = resolve_segments(small_dd())
        assert len(utts) == 3
        assert all(u.segment is None for u in utts)
        assert utts[0] == Utterance("u1", "/d/1.wav", "s1", "hello world")

    def test_segment_bounds(self):
        dd = DataDirectory.from_maps({"rec1": "/r.wav"}, {"x": "hi"}, {"x": "spk"}, {"x": ("rec1", 0.0, 1.5)})
        (u,) = resolve_segments(dd)
        assert u.segment == ("rec1", 0.0, 1.5)
        assert u.audio_source == "/r.wav"

    def test_counts(self, rng):
        for _ in range(50):
            dd = random_data_directory(rng)
            expected = len(dd.segments) if dd.segments is not None else len(dd.wav)
            assert len(resolve_segments(dd)) == expected

    def test_utterance_invariants(self):
        with pytest.raises(ValueError):
            Utterance("a b", "/x", "s", "t")
        with pytest.raises(ValueError):
            Utterance("a", "/x", "s", "t", ("r", 2.0, 1.0))
