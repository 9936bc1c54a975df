import json
from pathlib import Path

import numpy as np
import pytest
from scipy import signal as sp_signal
from scipy import stats

from lext import dsp, synthgen
from lext.synthgen import GeneratorConfig


TINY = GeneratorConfig(
    num_train=6,
    num_valid=2,
    num_test=2,
    num_speakers=4,
    num_test_speakers=2,
    utterance_s=(1.2, 1.6),
    enroll_utterances=2,
    enroll_s=(1.5, 2.0),
)


@pytest.fixture(scope="module")
def profiles():
    return synthgen.make_speaker_profiles(6, np.random.default_rng(0))


def test_profiles_valid_and_distinct(profiles):
    f0s = [p.f0_base for p in profiles]
    assert len(set(f0s)) == len(f0s)
    for p in profiles:
        assert 80 <= p.f0_base <= 300
        assert p.formants[0] < p.formants[1] < p.formants[2]


def test_synth_utterance_contract(profiles):
    w = synthgen.synth_utterance(profiles[0], 4.0, np.random.default_rng(1))
    assert w.size == 32000
    assert abs(np.max(np.abs(w)) - 0.9) < 1e-12
    again = synthgen.synth_utterance(profiles[0], 4.0, np.random.default_rng(1))
    assert np.array_equal(w, again)


def test_synth_utterance_has_true_silences(profiles):
    w = synthgen.synth_utterance(profiles[0], 4.0, np.random.default_rng(2))
    segs = dsp.detect_speech(w)
    active = sum(e - s for s, e in segs)
    assert 0 < active < w.size  # silences exist and so does speech


def test_distinct_profiles_distinct_spectra(profiles):
    pa, pb = profiles[0], profiles[-1]
    assert abs(pa.f0_base - pb.f0_base) > 20
    wa = synthgen.synth_utterance(pa, 4.0, np.random.default_rng(3))
    wb = synthgen.synth_utterance(pb, 4.0, np.random.default_rng(4))
    freqs, psd_a = sp_signal.welch(wa, fs=synthgen.FS, nperseg=4096)
    _, psd_b = sp_signal.welch(wb, fs=synthgen.FS, nperseg=4096)
    # Energy near each speaker's fundamental should dominate the other's.
    ia = int(round(pa.f0_base / (freqs[1] - freqs[0])))
    ib = int(round(pb.f0_base / (freqs[1] - freqs[0])))
    a_at_a = 10 * np.log10(psd_a[ia - 1 : ia + 2].sum())
    b_at_a = 10 * np.log10(psd_b[ia - 1 : ia + 2].sum())
    b_at_b = 10 * np.log10(psd_b[ib - 1 : ib + 2].sum())
    a_at_b = 10 * np.log10(psd_a[ib - 1 : ib + 2].sum())
    assert a_at_a - b_at_a > 10.0
    assert b_at_b - a_at_b > 10.0


def test_mix_two_power_ratio(profiles):
    rng = np.random.default_rng(5)
    s1 = synthgen.synth_utterance(profiles[0], 2.0, rng)
    s2 = synthgen.synth_utterance(profiles[1], 2.0, rng)
    for sir in (0.0, 5.0, -3.2):
        rec = synthgen.mix_two(s1, s2, sir)
        p1 = np.mean(rec.sources[0] ** 2)
        p2 = np.mean(rec.sources[1] ** 2)
        assert abs(10 * np.log10(p1 / p2) - sir) < 1e-9
        assert np.max(np.abs(rec.mixture - rec.sources[0] - rec.sources[1])) < 1e-12


def test_mix_two_min_convention_and_errors():
    rng = np.random.default_rng(6)
    a, b = rng.standard_normal(32000), rng.standard_normal(30000)
    rec = synthgen.mix_two(a, b, 0.0)
    assert rec.mixture.size == 30000
    with pytest.raises(synthgen.DegenerateSourceError):
        synthgen.mix_two(np.zeros(100), b, 0.0)


def test_add_noise_snr_convention():
    rng = np.random.default_rng(7)
    s1, s2 = rng.standard_normal(8000), 0.4 * rng.standard_normal(8000)
    rec = synthgen.mix_two(s1, s2, 4.0)  # source 0 is louder by construction
    sources_before = [s.copy() for s in rec.sources]
    noise = synthgen.pink_noise(9000, rng)
    for snr in (0.0, -6.0, 3.0):
        noisy = synthgen.add_noise(rec, noise, snr)
        p_louder = max(np.mean(s**2) for s in noisy.sources)
        p_noise = np.mean(noisy.noise**2)
        assert abs(10 * np.log10(p_louder / p_noise) - snr) < 1e-9
        for before, after in zip(sources_before, noisy.sources):
            assert np.array_equal(before, after)
        assert np.max(np.abs(noisy.mixture - noisy.sources[0] - noisy.sources[1] - noisy.noise)) < 1e-12
    with pytest.raises(ValueError):
        synthgen.add_noise(rec, noise[:100], 0.0)


def test_reverberate_decay_and_limits():
    rng = np.random.default_rng(8)
    impulse = np.zeros(16000)
    impulse[0] = 1.0
    for t60 in (0.2, 1.0):
        wet, _ = synthgen.reverberate(impulse, t60, np.random.default_rng(9))
        # wet is the RIR itself; measure tail decay over windows.
        start = np.argmax(wet == 1.0) + int(0.002 * synthgen.FS)
        win = int(0.03 * synthgen.FS)
        head = wet[start : start + win]
        t60_idx = start + int(t60 * synthgen.FS)
        tail = wet[t60_idx : t60_idx + win]
        drop = 10 * np.log10(np.mean(head**2) / np.mean(tail**2))
        assert abs(drop - 60.0) < 3.0
    with pytest.raises(ValueError):
        synthgen.reverberate(impulse, 0.01, rng)


def test_reverberate_small_t60_close_to_direct(profiles):
    src = synthgen.synth_utterance(profiles[2], 1.5, np.random.default_rng(10))
    wet, direct = synthgen.reverberate(src, 0.05, np.random.default_rng(11))
    assert wet.size == direct.size == src.size
    ratio = np.sum((wet - direct) ** 2) / np.sum(direct**2)
    assert ratio < 1.0  # tail energy bound: reverb strictly below direct


def test_build_dataset_deterministic(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    synthgen.build_dataset(TINY, 11, a)
    synthgen.build_dataset(TINY, 11, b)
    files_a = sorted(p.relative_to(a) for p in a.rglob("*") if p.is_file())
    files_b = sorted(p.relative_to(b) for p in b.rglob("*") if p.is_file())
    assert files_a == files_b
    for rel in files_a:
        assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel


def test_build_dataset_invariants(tmp_path):
    out = tmp_path / "data"
    meta = synthgen.build_dataset(TINY, 12, out)
    train = synthgen.Manifest(out / "train.jsonl")
    test = synthgen.Manifest(out / "test.jsonl")
    train_speakers = {s for r in train.records for s in r["speakers"]}
    test_speakers = {s for r in test.records for s in r["speakers"]}
    assert train_speakers.isdisjoint(test_speakers)
    assert meta["splits"]["train"]["count"] == 6

    rec = train.load_record(0)
    assert np.max(np.abs(rec.mixture - rec.sources[0] - rec.sources[1])) < 1e-6
    for spk in rec.speaker_ids:
        assert len(rec.enrollments[spk]) >= 2
    assert rec.mixture.size >= int(TINY.utterance_s[0] * synthgen.FS)


def test_sir_distribution_uniform(tmp_path):
    cfg = GeneratorConfig(
        num_train=500, num_valid=2, num_test=2,
        num_speakers=6, num_test_speakers=2,
        utterance_s=(0.9, 1.1), enroll_utterances=2, enroll_s=(1.0, 1.2),
    )
    out = tmp_path / "sir"
    synthgen.build_dataset(cfg, 13, out)
    with open(out / "train.jsonl") as f:
        sirs = [json.loads(line)["sir_db"] for line in f]
    assert len(sirs) == 500
    assert min(sirs) < -4.0 and max(sirs) > 4.0
    ks = stats.kstest(sirs, stats.uniform(loc=-5, scale=10).cdf)
    assert ks.statistic < 0.1
