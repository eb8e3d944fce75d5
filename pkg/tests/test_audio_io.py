import struct
import wave

import numpy as np
import numpy.testing as npt
import pytest

from mvst import audio_io as aio
from mvst.audio_io import (AnnotationError, AudioClip, ClassLabel, DatasetManifest,
                           EmptyWavError, LabeledCycle, MalformedWavError,
                           ManifestEntry, UnsupportedWavError)


def oracle_write_pcm16(path, int_samples, rate, channels=1):
    """Independent writer: stdlib wave module, raw int16 values."""
    with wave.open(str(path), "wb") as w:
        w.setnchannels(channels)
        w.setsampwidth(2)
        w.setframerate(rate)
        w.writeframes(struct.pack(f"<{len(int_samples)}h", *int_samples))


def oracle_write_float32(path, samples, rate):
    """Independent writer: hand-packed RIFF float32 via struct."""
    payload = struct.pack(f"<{len(samples)}f", *samples)
    header = struct.pack("<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(payload), b"WAVE",
                         b"fmt ", 16, 3, 1, rate, rate * 4, 4, 32,
                         b"data", len(payload))
    path.write_bytes(header + payload)


class TestReadWav:
    def test_single_sample_scaling(self, tmp_path):
        p = tmp_path / "one.wav"
        oracle_write_pcm16(p, [16384], 4000)
        clip = aio.read_wav(p)
        assert clip.sample_rate == 4000
        npt.assert_array_equal(clip.samples, [0.5])

    @pytest.mark.parametrize("rate", [4000, 10000, 44100])
    def test_corpus_rates_load(self, tmp_path, rate):
        p = tmp_path / f"r{rate}.wav"
        oracle_write_pcm16(p, [0, 100, -100, 5], rate)
        assert aio.read_wav(p).sample_rate == rate

    def test_stereo_averaged_to_mono(self, tmp_path):
        p = tmp_path / "stereo.wav"
        # channels [0.2] and [0.6] interleaved
        oracle_write_pcm16(p, [6554, 19661], 4000, channels=2)
        clip = aio.read_wav(p)
        assert len(clip.samples) == 1
        npt.assert_allclose(clip.samples, [0.4], atol=2 ** -15)

    def test_roundtrip_against_oracle_writer(self, tmp_path):
        rng = np.random.default_rng(0)
        x = rng.uniform(-1, 1, 500)
        ints = np.clip(np.round(x * 32768), -32768, 32767).astype(int)
        p = tmp_path / "rt.wav"
        oracle_write_pcm16(p, list(ints), 8000)
        clip = aio.read_wav(p)
        npt.assert_allclose(clip.samples, x, atol=2 ** -15)

    def test_float32_supported(self, tmp_path):
        p = tmp_path / "f32.wav"
        oracle_write_float32(p, [0.25, -0.75, 1.0], 10000)
        clip = aio.read_wav(p)
        npt.assert_allclose(clip.samples, [0.25, -0.75, 1.0], atol=1e-7)

    def test_malformed_header(self, tmp_path):
        p = tmp_path / "bad.wav"
        p.write_bytes(b"NOTAWAVEFILE")
        with pytest.raises(MalformedWavError):
            aio.read_wav(p)

    def test_unsupported_bit_depth(self, tmp_path):
        p = tmp_path / "u8.wav"
        payload = b"\x80\x80"
        header = struct.pack("<4sI4s4sIHHIIHH4sI", b"RIFF", 36 + len(payload), b"WAVE",
                             b"fmt ", 16, 1, 1, 8000, 8000, 1, 8,
                             b"data", len(payload))
        p.write_bytes(header + payload)
        with pytest.raises(UnsupportedWavError):
            aio.read_wav(p)

    def test_zero_samples(self, tmp_path):
        p = tmp_path / "empty.wav"
        oracle_write_pcm16(p, [], 8000)
        with pytest.raises(EmptyWavError):
            aio.read_wav(p)

    def test_own_writer_roundtrip(self, tmp_path):
        rng = np.random.default_rng(1)
        x = rng.uniform(-1, 1, 300)
        p16, p32 = tmp_path / "w16.wav", tmp_path / "w32.wav"
        aio.write_wav(p16, x, 4000)
        aio.write_wav(p32, x, 4000, fmt="float32")
        npt.assert_allclose(aio.read_wav(p16).samples, x, atol=2 ** -15)
        npt.assert_allclose(aio.read_wav(p32).samples, x, atol=1e-7)


class TestAnnotations:
    def test_single_row(self):
        anns = aio.parse_annotations("0.0 2.5 0 0")
        assert len(anns) == 1
        ann = anns[0]
        assert (ann.start_s, ann.end_s, ann.crackle, ann.wheeze) == (0.0, 2.5, False, False)
        assert ann.label is ClassLabel.NORMAL

    def test_both_flags_map_to_both(self):
        assert aio.parse_annotations("0.0 2.0 1 1")[0].label is ClassLabel.BOTH

    def test_seven_rows_in_order(self):
        text = "\n".join(f"{i}.0 {i}.5 0 1" for i in range(7))
        anns = aio.parse_annotations(text)
        assert len(anns) == 7
        assert [a.start_s for a in anns] == [float(i) for i in range(7)]

    def test_non_numeric_field(self):
        with pytest.raises(AnnotationError):
            aio.parse_annotations("a 1.0 0 0")

    def test_end_not_after_start(self):
        with pytest.raises(AnnotationError):
            aio.parse_annotations("2.0 2.0 0 0")

    def test_flag_outside_binary(self):
        with pytest.raises(AnnotationError):
            aio.parse_annotations("0.0 1.0 2 0")

    def test_label_mapping_is_bijective(self):
        seen = {aio.ClassLabel.from_flags(c, w) for c in (False, True) for w in (False, True)}
        assert seen == set(ClassLabel)


class TestSliceCycles:
    def _clip(self, seconds=10.0, rate=4000):
        return AudioClip(np.arange(int(seconds * rate), dtype=np.float64) / 1e9, rate)

    def test_window_arithmetic(self):
        cycles, skipped = aio.slice_cycles(self._clip(), [aio.CycleAnnotation(2.0, 4.0, False, False)])
        assert skipped == 0
        assert len(cycles) == 1
        assert len(cycles[0].clip.samples) == 8000

    def test_empty_annotations(self):
        cycles, skipped = aio.slice_cycles(self._clip(), [])
        assert cycles == [] and skipped == 0

    def test_overrun_clamped(self):
        cycles, skipped = aio.slice_cycles(self._clip(), [aio.CycleAnnotation(9.5, 12.0, True, False)])
        assert skipped == 0
        assert len(cycles[0].clip.samples) == 2000

    def test_fully_outside_skipped(self):
        cycles, skipped = aio.slice_cycles(self._clip(), [aio.CycleAnnotation(11.0, 12.0, False, False)])
        assert cycles == [] and skipped == 1


class TestResample:
    def test_identity_at_target_rate(self):
        clip = AudioClip(np.zeros(16), 4000)
        assert aio.resample(clip, 4000) is clip

    def test_constant_preserved(self):
        clip = AudioClip(np.full(8000, 0.3), 8000)
        out = aio.resample(clip, 4000)
        assert out.sample_rate == 4000
        assert len(out.samples) == 4000
        npt.assert_allclose(out.samples, 0.3, atol=1e-12)

    def test_ramp_golden(self):
        # output sample i sits at input index i * 4/2 = 2i: golden [0.0, 2.0]
        out = aio.resample(AudioClip(np.array([0.0, 1.0, 2.0, 3.0]), 4), 2)
        assert out.sample_rate == 2
        npt.assert_array_equal(out.samples, [0.0, 2.0])

    def test_output_length_rule(self):
        rng = np.random.default_rng(2)
        for n, src, dst in [(100, 44100, 4000), (321, 10000, 4000), (50, 4000, 10000)]:
            out = aio.resample(AudioClip(rng.uniform(-1, 1, n), src), dst)
            assert len(out.samples) == int(round(n * dst / src))


class TestFixDuration:
    def _cycle(self, samples, rate=1000):
        return LabeledCycle(AudioClip(np.asarray(samples, dtype=np.float64), rate),
                            ClassLabel.NORMAL, "rec", 0)

    def test_exact_length_unchanged(self):
        c = self._cycle(np.arange(8000.0))
        assert aio.fix_duration(c, 8.0) is c

    def test_tiling_exact(self):
        pattern = np.array([0.1, -0.2, 0.3, 0.0])
        c = self._cycle(pattern, rate=2)  # 2 s at 2 Hz
        out = aio.fix_duration(c, 8.0)
        npt.assert_array_equal(out.clip.samples, np.tile(pattern, 4))

    def test_center_crop(self):
        rate = 1000
        c = self._cycle(np.arange(10 * rate, dtype=np.float64), rate)
        out = aio.fix_duration(c, 8.0)
        npt.assert_array_equal(out.clip.samples, np.arange(1 * rate, 9 * rate))

    def test_length_always_exact(self):
        rng = np.random.default_rng(3)
        for _ in range(20):
            n = int(rng.integers(1, 5000))
            rate = int(rng.choice([1000, 4000, 44100]))
            seconds = float(rng.uniform(0.5, 3.0))
            out = aio.fix_duration(self._cycle(rng.uniform(-1, 1, n), rate), seconds)
            assert len(out.clip.samples) == int(round(seconds * rate))

    def test_zero_length_rejected(self):
        with pytest.raises(EmptyWavError):
            aio.fix_duration(self._cycle([]), 1.0)


def _manifest_of(recordings, cycles_per=3):
    entries = []
    for r in recordings:
        for i in range(cycles_per):
            entries.append(ManifestEntry(r, i, ClassLabel.NORMAL, "train", f"{r}.wav"))
    return DatasetManifest(entries)


class TestSplitDataset:
    def test_sixty_forty(self):
        m = aio.split_dataset(_manifest_of([f"r{i}" for i in range(10)]), 0.6, seed=5)
        train = {e.recording_id for e in m.entries if e.split == "train"}
        test = {e.recording_id for e in m.entries if e.split == "test"}
        assert len(train) == 6 and len(test) == 4

    def test_same_seed_identical(self):
        base = _manifest_of([f"r{i}" for i in range(9)])
        a = aio.split_dataset(base, 0.6, seed=7)
        b = aio.split_dataset(base, 0.6, seed=7)
        assert [e.split for e in a.entries] == [e.split for e in b.entries]

    def test_recording_level_disjoint_over_many_seeds(self):
        rng = np.random.default_rng(4)
        for trial in range(1000):
            n_rec = int(rng.integers(2, 12))
            m = _manifest_of([f"t{trial}r{i}" for i in range(n_rec)],
                             cycles_per=int(rng.integers(1, 4)))
            out = aio.split_dataset(m, float(rng.uniform(0.2, 0.8)), seed=trial)
            split_of = {}
            for e in out.entries:
                assert split_of.setdefault(e.recording_id, e.split) == e.split
            train = {r for r, s in split_of.items() if s == "train"}
            test = {r for r, s in split_of.items() if s == "test"}
            assert not (train & test)
            assert train and test

    def test_explicit_assignment_overrides(self):
        m = _manifest_of(["a", "b", "c"])
        out = aio.split_dataset(m, 0.6, seed=0,
                                split_assignment={"a": "test", "b": "test", "c": "train"})
        split_of = {e.recording_id: e.split for e in out.entries}
        assert split_of == {"a": "test", "b": "test", "c": "train"}

    def test_too_few_recordings(self):
        with pytest.raises(ValueError):
            aio.split_dataset(_manifest_of(["only"]), 0.6, seed=0)


class TestManifestFile:
    def test_roundtrip(self, tmp_path):
        m = _manifest_of(["x", "y"])
        p = tmp_path / "m.tsv"
        m.write(p)
        back = DatasetManifest.read(p)
        assert [(e.recording_id, e.cycle_index, e.label, e.split) for e in back.entries] == \
               [(e.recording_id, e.cycle_index, e.label, e.split) for e in m.entries]

    def test_duplicate_entry_rejected(self):
        e = ManifestEntry("r", 0, ClassLabel.NORMAL, "train", "r.wav")
        with pytest.raises(ValueError):
            DatasetManifest([e, e])

    def test_recording_in_both_splits_rejected(self):
        with pytest.raises(ValueError):
            DatasetManifest([ManifestEntry("r", 0, ClassLabel.NORMAL, "train", "r.wav"),
                             ManifestEntry("r", 1, ClassLabel.NORMAL, "test", "r.wav")])


class TestSynthDataset:
    def test_determinism_byte_identical(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        aio.synth_dataset(3, seed=7, out_dir=a)
        aio.synth_dataset(3, seed=7, out_dir=b)
        files_a = sorted(p.name for p in a.iterdir())
        assert files_a == sorted(p.name for p in b.iterdir())
        for name in files_a:
            assert (a / name).read_bytes() == (b / name).read_bytes()

    def test_counts_balanced(self, tmp_path):
        m = aio.synth_dataset(50, seed=1, out_dir=tmp_path / "d")
        assert len(m.entries) == 200
        for label in ClassLabel:
            assert sum(1 for e in m.entries if e.label is label) == 50

    def test_split_stratified(self, tmp_path):
        m = aio.synth_dataset(10, seed=2, out_dir=tmp_path / "d", train_fraction=0.6)
        for label in ClassLabel:
            train = sum(1 for e in m.entries if e.label is label and e.split == "train")
            assert train == 6

    def test_wheeze_spectrum_peak_in_band(self, tmp_path):
        m = aio.synth_dataset(2, seed=3, out_dir=tmp_path / "d")
        wheeze = next(e for e in m.entries if e.label is ClassLabel.WHEEZE)
        clip = aio.read_wav(wheeze.path)
        power = np.abs(np.fft.rfft(clip.samples)) ** 2
        freqs = np.fft.rfftfreq(len(clip.samples), d=1.0 / clip.sample_rate)
        peak = freqs[int(np.argmax(power))]
        assert 200.0 <= peak <= 800.0

    def test_loadable_cycles(self, tmp_path):
        m = aio.synth_dataset(1, seed=4, out_dir=tmp_path / "d")
        for e in m.entries:
            cyc = aio.load_labeled_cycle(e.path, e.cycle_index, e.recording_id,
                                         sample_rate=4000, duration_s=8.0)
            assert cyc.label is e.label
            assert len(cyc.clip.samples) == 32000


class TestPrepareManifest:
    def _write_recording(self, d, stem, n_cycles=3):
        rate = 4000
        x = np.random.default_rng(0).uniform(-0.5, 0.5, rate * n_cycles)
        aio.write_wav(d / f"{stem}.wav", x, rate)
        rows = "".join(f"{i}.0 {i}.9 0 0\n" for i in range(n_cycles))
        (d / f"{stem}.txt").write_text(rows)

    def test_two_recordings_three_cycles(self, tmp_path):
        self._write_recording(tmp_path, "rec_a")
        self._write_recording(tmp_path, "rec_b")
        manifest, warnings = aio.prepare_manifest(tmp_path, 0.5, seed=0)
        assert len(manifest.entries) == 6
        assert warnings == []

    def test_orphans_reported(self, tmp_path):
        self._write_recording(tmp_path, "rec_a")
        self._write_recording(tmp_path, "rec_b")
        aio.write_wav(tmp_path / "lonely.wav", np.zeros(100), 4000)
        (tmp_path / "phantom.txt").write_text("0.0 1.0 0 0\n")
        _, warnings = aio.prepare_manifest(tmp_path, 0.5, seed=0)
        assert any("lonely" in w for w in warnings)
        assert any("phantom" in w for w in warnings)

    def test_empty_dir_fails(self, tmp_path):
        with pytest.raises(aio.AudioIoError):
            aio.prepare_manifest(tmp_path, 0.6, seed=0)
