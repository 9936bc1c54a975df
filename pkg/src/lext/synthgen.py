"""Synthetic desk-scale mixture corpora.

Parametric source-filter "speakers" stand in for real recorded speech: a
jittered pulse train is shaped by per-speaker formant resonators and a
spectral tilt, then amplitude-modulated into pseudo-syllables separated by
true silences. Two-speaker mixtures follow the usual simulation protocol:
"min"-length truncation, a uniformly sampled speaker power ratio, optional
colored noise pinned to the louder speaker, and optional synthetic
reverberation with an exponentially decaying tail.

Everything is a pure function of (config, seed): per-record RNG streams are
derived statelessly, so regenerating a dataset is byte-identical.
"""

import json
from dataclasses import dataclass, asdict
from pathlib import Path
from typing import Dict, List, Optional, Tuple

import numpy as np
from scipy.signal import fftconvolve

from . import dsp, _kernels

FS = dsp.SAMPLE_RATE

_SOUND_SPEED = 343.0
_F0_RANGE = (88.0, 285.0)


class DegenerateSourceError(ValueError):
    """Raised when a source or noise signal has no energy to scale."""


@dataclass
class SpeakerProfile:
    """Source-filter voice parameters for one synthetic speaker."""

    speaker_id: int
    f0_base: float
    f0_jitter: float
    formants: Tuple[float, float, float]
    harmonic_rolloff: float

    def __post_init__(self):
        if not (80.0 <= self.f0_base <= 300.0):
            raise ValueError(f"f0_base {self.f0_base} outside [80, 300] Hz")
        if not (self.formants[0] < self.formants[1] < self.formants[2]):
            raise ValueError("formants must be strictly increasing")


@dataclass
class MixtureRecord:
    """One simulated example: mixture, per-source references, metadata."""

    mixture: np.ndarray
    sources: List[np.ndarray]
    enrollments: Dict[int, List[np.ndarray]]
    sir_db: float
    noise_snr_db: Optional[float] = None
    t60_s: Optional[float] = None
    seed: int = 0
    speaker_ids: Tuple[int, ...] = ()
    noise: Optional[np.ndarray] = None


@dataclass
class GeneratorConfig:
    """Full parameter snapshot for dataset generation."""

    scenario: str = "anechoic"  # anechoic | noisy | noisy-reverberant
    num_train: int = 2000
    num_valid: int = 200
    num_test: int = 200
    num_speakers: int = 40  # shared by train and valid
    num_test_speakers: int = 12  # disjoint from the above
    utterance_s: Tuple[float, float] = (4.2, 6.0)
    enroll_utterances: int = 3
    enroll_s: Tuple[float, float] = (6.5, 9.0)
    enroll_lead_silence_frac: Tuple[float, float] = (0.01, 0.05)
    sir_db: Tuple[float, float] = (-5.0, 5.0)
    snr_db: Tuple[float, float] = (-6.0, 3.0)
    t60_s: Tuple[float, float] = (0.2, 1.0)
    wav_format: str = "float32"

    def __post_init__(self):
        if self.scenario not in ("anechoic", "noisy", "noisy-reverberant"):
            raise ValueError(f"unknown scenario {self.scenario!r}")
        if self.num_speakers < 2 or self.num_test_speakers < 2:
            raise ValueError("need at least 2 speakers per split pool")
        if self.enroll_utterances < 2:
            raise ValueError("each speaker needs >= 2 enrollment utterances")

    @classmethod
    def from_dict(cls, d: dict) -> "GeneratorConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown generator config keys: {sorted(unknown)}")
        d = dict(d)
        for key in ("utterance_s", "enroll_s", "enroll_lead_silence_frac",
                    "sir_db", "snr_db", "t60_s"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def make_speaker_profiles(count: int, rng, id_offset: int = 0) -> List[SpeakerProfile]:
    """Sample distinct voice profiles, stratifying the pitch range."""
    lo, hi = _F0_RANGE
    order = rng.permutation(count)
    profiles = []
    for i in range(count):
        f0 = lo + (hi - lo) * (order[i] + rng.uniform(0.2, 0.8)) / count
        f1 = rng.uniform(300.0, 850.0)
        f2 = rng.uniform(max(950.0, f1 + 250.0), 2200.0)
        f3 = rng.uniform(max(2350.0, f2 + 300.0), 3500.0)
        profiles.append(
            SpeakerProfile(
                speaker_id=id_offset + i,
                f0_base=float(f0),
                f0_jitter=float(rng.uniform(0.01, 0.04)),
                formants=(float(f1), float(f2), float(f3)),
                harmonic_rolloff=float(rng.uniform(6.0, 16.0)),
            )
        )
    return profiles


def _resonator_sos(freq: float, bandwidth: float) -> np.ndarray:
    r = np.exp(-np.pi * bandwidth / FS)
    w0 = 2.0 * np.pi * freq / FS
    a1 = -2.0 * r * np.cos(w0)
    a2 = r * r
    # Unit gain at the resonance frequency.
    b0 = abs(1.0 + a1 * np.exp(-1j * w0) + a2 * np.exp(-2j * w0))
    return np.array([b0, 0.0, 0.0, 1.0, a1, a2])


def _voice_sos(p: SpeakerProfile) -> np.ndarray:
    rows = [
        _resonator_sos(f, 70.0 + 0.08 * f) for f in p.formants
    ]
    # Spectral tilt: one-pole lowpass mapped from the rolloff in dB/octave.
    fc = float(np.clip(3800.0 * 2.0 ** (-(p.harmonic_rolloff - 6.0) / 4.0), 250.0, 3800.0))
    pole = np.exp(-2.0 * np.pi * fc / FS)
    rows.append(np.array([1.0 - pole, 0.0, 0.0, 1.0, -pole, 0.0]))
    # DC blocker (the pulse train carries a DC component).
    rows.append(np.array([1.0, -1.0, 0.0, 1.0, -0.995, 0.0]))
    return np.stack(rows)


def _smooth_noise(n: int, ctrl_hz: float, rng) -> np.ndarray:
    num_ctrl = max(2, int(np.ceil(n / FS * ctrl_hz)) + 1)
    ctrl = rng.standard_normal(num_ctrl)
    xi = np.linspace(0.0, num_ctrl - 1.0, n)
    return np.interp(xi, np.arange(num_ctrl), ctrl)


def synth_utterance(
    p: SpeakerProfile,
    duration_s: float,
    rng,
    lead_silence_range: Tuple[float, float] = (0.02, 0.10),
    gap_range: Tuple[float, float] = (0.05, 0.18),
    voiced_range: Tuple[float, float] = (0.12, 0.35),
) -> np.ndarray:
    """Synthesize one utterance: pseudo-syllables with true inter-word silences."""
    if duration_s <= 0:
        raise ValueError("duration must be positive")
    n = int(round(duration_s * FS))

    env = np.zeros(n)
    attack = int(0.015 * FS)
    release = int(0.020 * FS)
    t = int(round(rng.uniform(*lead_silence_range) * FS))
    while t < n:
        length = int(round(rng.uniform(*voiced_range) * FS))
        end = min(t + length, n)
        seg = end - t
        if seg > attack + release:
            ramp_in = 0.5 - 0.5 * np.cos(np.pi * np.arange(attack) / attack)
            ramp_out = 0.5 + 0.5 * np.cos(np.pi * np.arange(release) / release)
            env[t : t + attack] = ramp_in
            env[t + attack : end - release] = 1.0
            env[end - release : end] = ramp_out
        elif seg > 0:
            env[t:end] = 0.5
        t = end + int(round(rng.uniform(*gap_range) * FS))
    if not np.any(env > 0):  # degenerate very-short request: one short burst
        env[: max(1, n // 2)] = 1.0

    voiced = env > 0
    f0 = p.f0_base * (1.0 + p.f0_jitter * np.clip(_smooth_noise(n, 3.0, rng), -2.5, 2.5))
    f0 = np.clip(f0, 60.0, 340.0)

    phase = np.cumsum(np.where(voiced, f0 / FS, 0.0))
    crossings = np.diff(np.floor(phase), prepend=0.0) > 0
    pulse_idx = np.nonzero(crossings & voiced)[0]
    excitation = np.zeros(n)
    excitation[pulse_idx] = 1.0 + 0.08 * rng.standard_normal(pulse_idx.size)
    excitation += 0.01 * rng.standard_normal(n) * voiced

    am = 1.0 + 0.15 * np.clip(_smooth_noise(n, 4.0, rng), -2.0, 2.0)
    y = _kernels.sos_filter(_voice_sos(p), excitation) * env * am
    # Room-tone floor at roughly -60 dB below the peak, so "silence" is quiet
    # but not the exact zero vector (degenerate for gain normalization).
    peak = np.max(np.abs(y))
    y += 1e-3 * peak * rng.standard_normal(n)
    peak = np.max(np.abs(y))
    if peak > 0:
        y *= 0.9 / peak
    return y


def mix_two(
    s1: np.ndarray, s2: np.ndarray, sir_db: float, speaker_ids: Tuple[int, int] = (0, 1)
) -> MixtureRecord:
    """Mix two sources fully overlapped at an exact power ratio.

    Both are truncated to the shorter length ("min" convention) and the
    second is rescaled so 10*log10(P(s1)/P(s2)) equals ``sir_db``. The
    returned per-source references are the as-mixed (scaled) signals, so the
    mixture is exactly their sum.
    """
    s1 = np.asarray(s1, dtype=np.float64)
    s2 = np.asarray(s2, dtype=np.float64)
    if s1.size == 0 or s2.size == 0:
        raise ValueError("sources must be nonempty")
    n = min(s1.size, s2.size)
    s1, s2 = s1[:n].copy(), s2[:n].copy()
    p1, p2 = np.mean(s1 * s1), np.mean(s2 * s2)
    if p1 <= 0 or p2 <= 0:
        raise DegenerateSourceError("zero-power source")
    gain = np.sqrt(p1 / p2 * 10.0 ** (-sir_db / 10.0))
    s2 *= gain
    return MixtureRecord(
        mixture=s1 + s2,
        sources=[s1, s2],
        enrollments={},
        sir_db=float(sir_db),
        speaker_ids=tuple(speaker_ids),
    )


_PINK_B = np.array([0.049922035, -0.095993537, 0.050612699, -0.004408786])
_PINK_A = np.array([1.0, -2.494956002, 2.017265875, -0.522189400])


def pink_noise(n: int, rng) -> np.ndarray:
    """Colored noise with slow burst-like amplitude modulation."""
    from scipy.signal import tf2sos

    # Classic 1/f approximation filter, unit sample variance on output.
    sos = tf2sos(_PINK_B, _PINK_A)
    x = _kernels.sos_filter(sos, rng.standard_normal(n))
    bursts = 1.0 + 0.6 * np.clip(_smooth_noise(n, 1.5, rng), -1.5, 1.5)
    x *= bursts
    std = np.std(x)
    return x / std if std > 0 else x


def add_noise(rec: MixtureRecord, noise: np.ndarray, snr_db: float) -> MixtureRecord:
    """Add noise scaled so the louder source sits ``snr_db`` above it."""
    noise = np.asarray(noise, dtype=np.float64)
    n = rec.mixture.size
    if noise.size < n:
        raise ValueError("noise shorter than the mixture")
    noise = noise[:n].copy()
    p_noise = np.mean(noise * noise)
    if p_noise <= 0:
        raise DegenerateSourceError("zero-power noise")
    p_louder = max(float(np.mean(s * s)) for s in rec.sources)
    noise *= np.sqrt(p_louder / p_noise * 10.0 ** (-snr_db / 10.0))
    return MixtureRecord(
        mixture=rec.mixture + noise,
        sources=[s.copy() for s in rec.sources],
        enrollments=rec.enrollments,
        sir_db=rec.sir_db,
        noise_snr_db=float(snr_db),
        t60_s=rec.t60_s,
        seed=rec.seed,
        speaker_ids=rec.speaker_ids,
        noise=noise,
    )


def reverberate(src: np.ndarray, t60_s: float, rng) -> Tuple[np.ndarray, np.ndarray]:
    """Convolve with a synthetic RIR; returns (wet, direct-path) signals.

    The RIR is a unit direct impulse at a randomized propagation delay plus
    an exponentially decaying white-noise tail whose energy envelope falls
    by 60 dB at ``t60_s``.
    """
    if not (0.05 <= t60_s <= 2.0):
        raise ValueError(f"t60 {t60_s} outside [0.05, 2.0] s")
    src = np.asarray(src, dtype=np.float64)
    delay = int(rng.integers(round(0.66 / _SOUND_SPEED * FS), round(2.0 / _SOUND_SPEED * FS) + 1))
    gap = int(0.002 * FS)
    tail_len = int(round(1.1 * t60_s * FS))
    t = np.arange(tail_len) / FS
    envelope = 10.0 ** (-3.0 * t / t60_s)
    tail = rng.standard_normal(tail_len) * envelope
    # Scale the tail for a plausible direct-to-reverberant energy ratio.
    drr_db = rng.uniform(2.0, 8.0)
    tail *= np.sqrt(10.0 ** (-drr_db / 10.0) / np.sum(tail * tail))
    rir = np.zeros(delay + gap + tail_len)
    rir[delay] = 1.0
    rir[delay + gap :] = tail
    wet = fftconvolve(src, rir)[: src.size]
    direct = np.concatenate([np.zeros(delay), src])[: src.size]
    return wet, direct


def _record_rng(seed: int, split_code: int, index: int):
    return np.random.default_rng(np.random.SeedSequence([seed, split_code, index]))


def _record_seed(seed: int, split_code: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, split_code, index]).generate_state(1)[0])


_SPLIT_CODES = {"train": 1, "valid": 2, "test": 3}


def _build_record(cfg: GeneratorConfig, seed: int, split: str, index: int,
                  profiles: Dict[int, SpeakerProfile], pool: List[int]) -> MixtureRecord:
    rng = _record_rng(seed, _SPLIT_CODES[split], index)
    ids = [int(i) for i in rng.choice(pool, size=2, replace=False)]
    durs = rng.uniform(*cfg.utterance_s, size=2)
    utts = [synth_utterance(profiles[ids[k]], durs[k], rng) for k in range(2)]
    sir = float(rng.uniform(*cfg.sir_db))

    t60 = None
    if cfg.scenario == "noisy-reverberant":
        t60 = float(rng.uniform(*cfg.t60_s))
        n = min(u.size for u in utts)
        wet, direct = zip(*[reverberate(u[:n], t60, rng) for u in utts])
        p = [float(np.mean(w * w)) for w in wet]
        if min(p) <= 0:
            raise DegenerateSourceError("zero-power reverberant source")
        gain = np.sqrt(p[0] / p[1] * 10.0 ** (-sir / 10.0))
        rec = MixtureRecord(
            mixture=wet[0] + gain * wet[1],
            sources=[direct[0].copy(), gain * direct[1]],
            enrollments={},
            sir_db=sir,
            t60_s=t60,
            speaker_ids=tuple(ids),
        )
    else:
        rec = mix_two(utts[0], utts[1], sir, (ids[0], ids[1]))

    if cfg.scenario in ("noisy", "noisy-reverberant"):
        snr = float(rng.uniform(*cfg.snr_db))
        rec = add_noise(rec, pink_noise(rec.mixture.size, rng), snr)
        rec.t60_s = t60
    rec.seed = _record_seed(seed, _SPLIT_CODES[split], index)
    return rec


def build_dataset(cfg: GeneratorConfig, seed: int, out_dir) -> dict:
    """Generate a corpus on disk; returns the dataset-level manifest dict.

    Layout: ``speakers/`` holds the shared per-speaker enrollment banks,
    ``<split>/`` the mixture and source WAVs, ``<split>.jsonl`` one record
    per line, and ``dataset.json`` the config snapshot and seed.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    prof_rng = np.random.default_rng(np.random.SeedSequence([seed, 0]))
    train_profiles = make_speaker_profiles(cfg.num_speakers, prof_rng, id_offset=0)
    test_profiles = make_speaker_profiles(cfg.num_test_speakers, prof_rng, id_offset=1000)
    profiles = {p.speaker_id: p for p in train_profiles + test_profiles}

    speaker_dir = out_dir / "speakers"
    speaker_dir.mkdir(exist_ok=True)
    enroll_paths: Dict[int, List[str]] = {}
    for spk, prof in profiles.items():
        erng = np.random.default_rng(np.random.SeedSequence([seed, 4, spk]))
        paths = []
        for j in range(cfg.enroll_utterances):
            dur = float(erng.uniform(*cfg.enroll_s))
            frac = erng.uniform(*cfg.enroll_lead_silence_frac)
            lead = (frac * dur, min((frac + 0.02) * dur, dur * 0.9))
            wav = synth_utterance(prof, dur, erng, lead_silence_range=lead)
            rel = f"speakers/spk{spk:04d}_enr{j}.wav"
            dsp.write_wav(out_dir / rel, wav, cfg.wav_format)
            paths.append(rel)
        enroll_paths[spk] = paths

    train_pool = [p.speaker_id for p in train_profiles]
    test_pool = [p.speaker_id for p in test_profiles]
    counts = {"train": cfg.num_train, "valid": cfg.num_valid, "test": cfg.num_test}

    manifest = {
        "config": asdict(cfg),
        "seed": seed,
        "splits": {},
        "speakers": {
            str(spk): {
                "f0_base": prof.f0_base,
                "f0_jitter": prof.f0_jitter,
                "formants": list(prof.formants),
                "harmonic_rolloff": prof.harmonic_rolloff,
                "enrollments": enroll_paths[spk],
            }
            for spk, prof in profiles.items()
        },
    }

    for split, count in counts.items():
        pool = test_pool if split == "test" else train_pool
        split_dir = out_dir / split
        split_dir.mkdir(exist_ok=True)
        lines = []
        for i in range(count):
            rec = _build_record(cfg, seed, split, i, profiles, pool)
            base = f"{split}/rec{i:05d}"
            dsp.write_wav(out_dir / f"{base}_mix.wav", rec.mixture, cfg.wav_format)
            for k, src in enumerate(rec.sources):
                dsp.write_wav(out_dir / f"{base}_s{k}.wav", src, cfg.wav_format)
            entry = {
                "id": f"{split}-{i:05d}",
                "mixture": f"{base}_mix.wav",
                "sources": [f"{base}_s{k}.wav" for k in range(len(rec.sources))],
                "speakers": list(rec.speaker_ids),
                "enrollments": {str(s): enroll_paths[s] for s in rec.speaker_ids},
                "sir_db": rec.sir_db,
                "noise_snr_db": rec.noise_snr_db,
                "t60_s": rec.t60_s,
                "num_samples": int(rec.mixture.size),
                "seed": rec.seed,
            }
            if rec.noise is not None:
                dsp.write_wav(out_dir / f"{base}_noise.wav", rec.noise, cfg.wav_format)
                entry["noise"] = f"{base}_noise.wav"
            lines.append(json.dumps(entry))
        (out_dir / f"{split}.jsonl").write_text("\n".join(lines) + "\n")
        manifest["splits"][split] = {"count": count, "manifest": f"{split}.jsonl"}

    (out_dir / "dataset.json").write_text(json.dumps(manifest, indent=2) + "\n")
    return manifest


class Manifest:
    """Loaded split manifest with lazy, cached waveform access."""

    def __init__(self, jsonl_path, resample: bool = False):
        self.path = Path(jsonl_path)
        self.root = self.path.parent
        self.resample = resample
        with open(self.path) as f:
            self.records = [json.loads(line) for line in f if line.strip()]
        self._cache: Dict[str, np.ndarray] = {}
        meta_path = self.root / "dataset.json"
        self.meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}

    def __len__(self):
        return len(self.records)

    def _load(self, rel: str) -> np.ndarray:
        if rel not in self._cache:
            if len(self._cache) > 512:
                self._cache.clear()
            self._cache[rel] = dsp.read_wav(self.root / rel, resample=self.resample)
        return self._cache[rel]

    def load_record(self, index: int) -> MixtureRecord:
        entry = self.records[index]
        return MixtureRecord(
            mixture=self._load(entry["mixture"]),
            sources=[self._load(p) for p in entry["sources"]],
            enrollments={
                int(spk): [self._load(p) for p in paths]
                for spk, paths in entry["enrollments"].items()
            },
            sir_db=entry["sir_db"],
            noise_snr_db=entry.get("noise_snr_db"),
            t60_s=entry.get("t60_s"),
            seed=entry.get("seed", 0),
            speaker_ids=tuple(entry["speakers"]),
        )
