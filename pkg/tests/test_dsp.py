import numpy as np
import pytest

from lext import dsp


def test_stft_shapes():
    spec = dsp.stft(np.random.default_rng(0).standard_normal(8000), 16.0, 8.0)
    assert spec.num_bins == 65
    assert spec.num_frames == dsp.num_frames(8000, 16.0, 8.0) == 125
    # One hop of front padding shifts the count by one relative to the bare
    # left-aligned framing; see the round-trip tests for why it is needed.
    assert dsp.num_frames(128, 16.0, 8.0) == 2
    assert dsp.num_frames(64, 16.0, 8.0) == 1
    assert dsp.num_frames(1, 16.0, 8.0) == 1


def test_stft_rejects_bad_config():
    w = np.ones(100)
    with pytest.raises(ValueError):
        dsp.stft(w, 16.3, 8.0)  # non-integer sample count
    with pytest.raises(ValueError):
        dsp.stft(w, 16.0, 7.0)  # hop does not divide window
    with pytest.raises(ValueError):
        dsp.stft(w, 8.0, 8.0)  # no overlap
    with pytest.raises(ValueError):
        dsp.stft(np.zeros(0))  # empty waveform


def test_roundtrip_random_signals():
    rng = np.random.default_rng(42)
    for _ in range(10):
        w = rng.standard_normal(8000)
        back = dsp.istft(dsp.stft(w), w.size)
        assert np.linalg.norm(back - w) / np.linalg.norm(w) < 1e-6


def test_roundtrip_awkward_lengths():
    rng = np.random.default_rng(3)
    for n in (1, 37, 64, 65, 127, 128, 129, 4000, 12345):
        w = rng.standard_normal(n)
        back = dsp.istft(dsp.stft(w), n)
        assert np.linalg.norm(back - w) <= 1e-9 * max(np.linalg.norm(w), 1.0)


def test_roundtrip_impulse_position():
    w = np.zeros(1000)
    w[317] = 1.0
    back = dsp.istft(dsp.stft(w), w.size)
    assert np.argmax(np.abs(back)) == 317
    assert abs(back[317] - 1.0) < 1e-9


def test_istft_zero_spec_and_length_handling():
    spec = dsp.stft(np.ones(500))
    spec.real_part[:] = 0.0
    spec.imag_part[:] = 0.0
    assert np.all(dsp.istft(spec, 500) == 0.0)
    # Truncation and zero-padding of the requested output length.
    spec2 = dsp.stft(np.arange(500, dtype=float) / 500.0)
    assert dsp.istft(spec2, 100).size == 100
    longer = dsp.istft(spec2, 900)
    assert longer.size == 900 and np.all(longer[520:] == 0.0)


def test_stft_linearity():
    rng = np.random.default_rng(9)
    w1, w2 = rng.standard_normal(3000), rng.standard_normal(3000)
    a, b = 0.7, -1.3
    lhs = dsp.stft(a * w1 + b * w2)
    r1, r2 = dsp.stft(w1), dsp.stft(w2)
    assert np.allclose(lhs.real_part, a * r1.real_part + b * r2.real_part, atol=1e-9)
    assert np.allclose(lhs.imag_part, a * r1.imag_part + b * r2.imag_part, atol=1e-9)


def test_sample_std_examples():
    assert dsp.sample_std(np.array([1.0, -1.0, 1.0, -1.0])) == 1.0
    assert dsp.sample_std(np.array([2.0, -2.0, 2.0, -2.0])) == 2.0
    assert dsp.sample_std(np.array([0.0, 0.0, 0.0])) == 0.0
    with pytest.raises(ValueError):
        dsp.sample_std(np.zeros(0))


def test_normalize_gain_examples():
    y = np.array([2.0, -2.0, 2.0, -2.0])
    s = np.ones(4)
    e = np.array([0.5, -0.5, 0.5, -0.5])
    s2, y2, e2, scales = dsp.normalize_gain(s, y, e)
    assert np.allclose(y2, [1, -1, 1, -1])
    assert np.allclose(s2, [0.5, 0.5, 0.5, 0.5])
    assert np.allclose(e2, [1, -1, 1, -1])
    assert scales.sigma_y == 2.0 and scales.sigma_e == 0.5
    # Unit-std input is unchanged.
    _, y3, _, sc3 = dsp.normalize_gain(s, y2, e)
    assert np.allclose(y3, y2) and sc3.sigma_y == 1.0


def test_normalize_gain_roundtrip_and_errors():
    rng = np.random.default_rng(5)
    s, y, e = rng.standard_normal(100), rng.standard_normal(100), rng.standard_normal(80)
    s2, y2, e2, sc = dsp.normalize_gain(s, y, e)
    assert np.allclose(s2 * sc.sigma_y, s, atol=1e-9)
    assert np.allclose(y2 * sc.sigma_y, y, atol=1e-9)
    assert np.allclose(e2 * sc.sigma_e, e, atol=1e-9)
    assert abs(dsp.sample_std(y2) - 1.0) < 1e-9
    assert abs(dsp.sample_std(e2) - 1.0) < 1e-9
    with pytest.raises(dsp.DegenerateSignalError):
        dsp.normalize_gain(s, np.zeros(100), e)
    with pytest.raises(dsp.DegenerateSignalError):
        dsp.normalize_gain(s, y, np.ones(80))


def _tone(n, freq=443.0, amp=0.5):
    return amp * np.sin(2 * np.pi * freq * np.arange(n) / dsp.SAMPLE_RATE)


def test_detect_speech_silence_and_full_tone():
    assert dsp.detect_speech(np.zeros(8000)) == []
    segs = dsp.detect_speech(_tone(8000))
    assert len(segs) == 1
    start, end = segs[0]
    assert start == 0 and end == 8000


def test_detect_speech_tone_gap_tone():
    hop = int(dsp.SAD_HOP_MS * dsp.SAMPLE_RATE / 1000)
    w = np.concatenate([_tone(8000), np.zeros(8000), _tone(8000)])
    segs = dsp.detect_speech(w, threshold_db=-40.0)
    assert len(segs) == 2
    (s0, e0), (s1, e1) = segs
    assert abs(s0 - 0) <= hop and abs(e0 - 8000) <= hop
    assert abs(s1 - 16000) <= hop and abs(e1 - 24000) <= hop


def test_detect_speech_deterministic_and_drops_short():
    rng = np.random.default_rng(1)
    w = np.concatenate([np.zeros(4000), rng.standard_normal(2000), np.zeros(4000)])
    assert dsp.detect_speech(w) == dsp.detect_speech(w)
    # A 20 ms blip is below the 50 ms minimum segment duration.
    blip = np.zeros(8000)
    blip[4000:4160] = 1.0
    assert dsp.detect_speech(blip) == []


def test_splice_active():
    w = np.arange(8, dtype=float)
    assert np.array_equal(dsp.splice_active(w, [(0, 3), (5, 8)]), [0, 1, 2, 5, 6, 7])
    assert np.array_equal(dsp.splice_active(w, [(0, 8)]), w)
    assert dsp.splice_active(w, []).size == 0
    two = dsp.splice_active(np.ones(20000), [(0, 8000), (10000, 18000)])
    assert two.size == 16000
    with pytest.raises(ValueError):
        dsp.splice_active(w, [(5, 3)])
    with pytest.raises(ValueError):
        dsp.splice_active(w, [(0, 4), (2, 6)])  # overlapping


def test_wav_roundtrip(tmp_path):
    rng = np.random.default_rng(7)
    w = np.clip(rng.standard_normal(4000) * 0.2, -1, 1)
    f32 = tmp_path / "a.wav"
    dsp.write_wav(f32, w, "float32")
    back = dsp.read_wav(f32)
    assert np.allclose(back, w, atol=1e-7)
    p16 = tmp_path / "b.wav"
    dsp.write_wav(p16, w, "pcm16")
    assert np.allclose(dsp.read_wav(p16), w, atol=1.0 / 32768.0)


def test_wav_rejects_other_rates_unless_resampled(tmp_path):
    from scipy.io import wavfile

    path = tmp_path / "c.wav"
    wavfile.write(path, 16000, np.zeros(1600, dtype=np.float32))
    with pytest.raises(ValueError):
        dsp.read_wav(path)
    assert dsp.read_wav(path, resample=True).size == 800
