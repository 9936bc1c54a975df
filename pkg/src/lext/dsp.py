"""Deterministic signal-processing primitives.

Everything in this module is a pure function of its inputs: STFT/iSTFT with a
square-root periodic Hann window, sample statistics and gain normalization,
energy-based speech activity detection, and mono WAV I/O at the project-wide
8 kHz sample rate. Waveforms are plain 1-D float numpy arrays.
"""

from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
from scipy.io import wavfile as _wavfile
from scipy.signal import resample_poly as _resample_poly

SAMPLE_RATE = 8000

# Speech activity detector defaults: 25 ms frames, 10 ms hop, threshold
# relative to the loudest frame, segments shorter than 50 ms dropped.
SAD_FRAME_MS = 25.0
SAD_HOP_MS = 10.0
SAD_THRESHOLD_DB = -40.0
SAD_MIN_SEGMENT_MS = 50.0

_ENV_FLOOR = 1e-10


class DegenerateSignalError(ValueError):
    """Raised when a signal is all-silent where nonzero energy is required."""


@dataclass
class Spectrogram:
    """Complex time-frequency representation stored as real/imaginary planes."""

    real_part: np.ndarray  # (T, F)
    imag_part: np.ndarray  # (T, F)
    window_ms: float
    hop_ms: float
    fft_size: int

    def __post_init__(self):
        if self.real_part.shape != self.imag_part.shape:
            raise ValueError("real and imaginary planes must have equal shape")
        if self.real_part.shape[1] != self.fft_size // 2 + 1:
            raise ValueError("frequency axis must have fft_size/2 + 1 bins")

    @property
    def num_frames(self) -> int:
        return self.real_part.shape[0]

    @property
    def num_bins(self) -> int:
        return self.real_part.shape[1]

    def to_complex(self) -> np.ndarray:
        return self.real_part + 1j * self.imag_part


@dataclass
class GainScales:
    """Standard deviations removed from the mixture and enrollment signals."""

    sigma_y: float
    sigma_e: float


def _window_sizes(window_ms: float, hop_ms: float) -> Tuple[int, int]:
    win = window_ms * SAMPLE_RATE / 1000.0
    hop = hop_ms * SAMPLE_RATE / 1000.0
    if abs(win - round(win)) > 1e-9 or abs(hop - round(hop)) > 1e-9:
        raise ValueError(
            f"window {window_ms} ms / hop {hop_ms} ms are not integer sample "
            f"counts at {SAMPLE_RATE} Hz"
        )
    win, hop = int(round(win)), int(round(hop))
    if win <= 0 or hop <= 0 or hop >= win or win % hop != 0:
        raise ValueError("hop must be a positive divisor of the window length")
    return win, hop


def _sqrt_hann(win: int) -> np.ndarray:
    # Periodic Hann; the square root is used for both analysis and synthesis.
    n = np.arange(win)
    return np.sqrt(0.5 - 0.5 * np.cos(2.0 * np.pi * n / win))


def num_frames(length: int, window_ms: float = 16.0, hop_ms: float = 8.0) -> int:
    """Frame count produced by stft for a signal of the given length."""
    win, hop = _window_sizes(window_ms, hop_ms)
    if length <= 0:
        raise ValueError("empty waveform")
    # One hop of leading zeros is added internally so that the very first
    # sample sits under a nonzero synthesis envelope (the window is zero at
    # index 0, which would otherwise destroy it irrecoverably).
    padded = length + (win - hop)
    return 1 + int(np.ceil(max(0, padded - win) / hop))


def stft(w: np.ndarray, window_ms: float = 16.0, hop_ms: float = 8.0) -> Spectrogram:
    """Short-time Fourier transform with a sqrt-Hann analysis window.

    The tail is zero-padded to a whole frame and one hop of zeros is
    prepended internally; istft removes both, so stft/istft round-trip
    exactly (up to float rounding) for any input.
    """
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError("waveform must be 1-D")
    if w.size == 0:
        raise ValueError("empty waveform")
    win, hop = _window_sizes(window_ms, hop_ms)
    frames = num_frames(w.size, window_ms, hop_ms)
    padded = np.zeros((frames - 1) * hop + win)
    padded[win - hop : win - hop + w.size] = w
    idx = np.arange(win)[None, :] + hop * np.arange(frames)[:, None]
    spec = np.fft.rfft(padded[idx] * _sqrt_hann(win)[None, :], axis=1)
    return Spectrogram(
        real_part=spec.real.copy(),
        imag_part=spec.imag.copy(),
        window_ms=window_ms,
        hop_ms=hop_ms,
        fft_size=win,
    )


def istft(spec: Spectrogram, out_length: int) -> np.ndarray:
    """Inverse STFT by overlap-add with the sqrt-Hann synthesis window."""
    win, hop = _window_sizes(spec.window_ms, spec.hop_ms)
    if win != spec.fft_size:
        raise ValueError("fft_size inconsistent with window length")
    if out_length < 0:
        raise ValueError("out_length must be non-negative")
    window = _sqrt_hann(win)
    frames = np.fft.irfft(spec.to_complex(), n=win, axis=1) * window[None, :]
    total = (spec.num_frames - 1) * hop + win
    y = np.zeros(total)
    env = np.zeros(total)
    wsq = window * window
    for k in range(spec.num_frames):
        y[k * hop : k * hop + win] += frames[k]
        env[k * hop : k * hop + win] += wsq
    y = np.where(env > _ENV_FLOOR, y / np.maximum(env, _ENV_FLOOR), 0.0)
    out = np.zeros(out_length)
    avail = min(out_length, total - (win - hop))
    out[:avail] = y[win - hop : win - hop + avail]
    return out


def sample_std(w: np.ndarray) -> float:
    """Mean-removed population standard deviation at the sample level."""
    w = np.asarray(w, dtype=np.float64)
    if w.size == 0:
        raise ValueError("sample_std of an empty waveform")
    return float(np.sqrt(np.mean((w - np.mean(w)) ** 2)))


def normalize_gain(
    s: np.ndarray, y: np.ndarray, e: np.ndarray
) -> Tuple[np.ndarray, np.ndarray, np.ndarray, GainScales]:
    """Scale the mixture/target pair by 1/std(y) and the enrollment by 1/std(e).

    The target shares the mixture's scale so their amplitude ratio is
    preserved; the returned scales invert the operation exactly.
    """
    sigma_y = sample_std(y)
    sigma_e = sample_std(e)
    if sigma_y <= 0.0:
        raise DegenerateSignalError("mixture has zero sample variance")
    if sigma_e <= 0.0:
        raise DegenerateSignalError("enrollment has zero sample variance")
    return (
        np.asarray(s, dtype=np.float64) / sigma_y,
        np.asarray(y, dtype=np.float64) / sigma_y,
        np.asarray(e, dtype=np.float64) / sigma_e,
        GainScales(sigma_y=sigma_y, sigma_e=sigma_e),
    )


def _frame_rms(w: np.ndarray, starts: np.ndarray, length: int) -> np.ndarray:
    out = np.empty(starts.size)
    for i, s in enumerate(starts):
        frame = w[s : s + length]
        out[i] = np.sqrt(np.mean(frame * frame)) if frame.size else 0.0
    return out


def _refine_edge(w, pos, limit, hop, thr, forward):
    """Snap a coarse segment edge to the first/last active hop-sized window."""
    if forward:
        p = pos
        while p < limit:
            seg = w[p : p + hop]
            if seg.size and np.sqrt(np.mean(seg * seg)) >= thr:
                return p
            p += hop
        return pos
    p = pos
    while p > limit:
        seg = w[max(0, p - hop) : p]
        if seg.size and np.sqrt(np.mean(seg * seg)) >= thr:
            return p
        p -= hop
    return pos


def detect_speech(
    w: np.ndarray,
    frame_ms: float = SAD_FRAME_MS,
    hop_ms: float = SAD_HOP_MS,
    threshold_db: float = SAD_THRESHOLD_DB,
    min_segment_ms: float = SAD_MIN_SEGMENT_MS,
) -> List[Tuple[int, int]]:
    """Energy-based speech activity detection.

    Frames whose RMS is within ``threshold_db`` (negative) of the loudest
    frame are active. Runs of active frames become segments whose edges are
    refined at hop resolution; segments shorter than ``min_segment_ms`` are
    dropped. Returns sorted, non-overlapping ``(start, end)`` sample
    intervals; silent input yields an empty list.
    """
    w = np.asarray(w, dtype=np.float64)
    if threshold_db >= 0:
        raise ValueError("threshold_db must be negative (relative to peak)")
    frame = int(round(frame_ms * SAMPLE_RATE / 1000.0))
    hop = int(round(hop_ms * SAMPLE_RATE / 1000.0))
    if frame <= 0 or hop <= 0 or hop > frame:
        raise ValueError("invalid SAD frame/hop configuration")
    if w.size == 0:
        return []
    starts = np.arange(0, w.size, hop)
    rms = _frame_rms(w, starts, frame)
    peak = float(np.max(rms))
    if peak <= 0.0:
        return []
    thr = peak * 10.0 ** (threshold_db / 20.0)
    active = rms >= thr

    segments: List[Tuple[int, int]] = []
    i = 0
    while i < active.size:
        if not active[i]:
            i += 1
            continue
        j = i
        while j + 1 < active.size and active[j + 1]:
            j += 1
        coarse_start = int(starts[i])
        coarse_end = int(min(starts[j] + frame, w.size))
        start = _refine_edge(w, coarse_start, coarse_end, hop, thr, forward=True)
        end = _refine_edge(w, coarse_end, start, hop, thr, forward=False)
        if end > start:
            segments.append((start, end))
        i = j + 1

    merged: List[Tuple[int, int]] = []
    for start, end in segments:
        if merged and start <= merged[-1][1]:
            merged[-1] = (merged[-1][0], max(merged[-1][1], end))
        else:
            merged.append((start, end))
    min_len = int(round(min_segment_ms * SAMPLE_RATE / 1000.0))
    return [(s, e) for s, e in merged if e - s >= min_len]


def splice_active(w: np.ndarray, segs: List[Tuple[int, int]]) -> np.ndarray:
    """Concatenate the active segments of a waveform in temporal order."""
    w = np.asarray(w, dtype=np.float64)
    prev_end = 0
    for start, end in segs:
        if not (0 <= start <= end <= w.size) or start < prev_end:
            raise ValueError(f"invalid segment ({start}, {end}) for length {w.size}")
        prev_end = end
    if not segs:
        return np.zeros(0)
    return np.concatenate([w[s:e] for s, e in segs])


def validate_waveform(w: np.ndarray, name: str = "waveform") -> np.ndarray:
    """Check finiteness and shape; returns the array as float64."""
    w = np.asarray(w, dtype=np.float64)
    if w.ndim != 1:
        raise ValueError(f"{name} must be 1-D")
    if not np.all(np.isfinite(w)):
        raise ValueError(f"{name} contains NaN or Inf samples")
    return w


def read_wav(path, resample: bool = False) -> np.ndarray:
    """Read a mono WAV file as float64 in [-1, 1] at 8 kHz.

    16-bit PCM and 32-bit float files are accepted. Other sample rates are
    rejected unless ``resample`` is set (the CLI exposes this as
    ``--resample``), in which case the signal is polyphase-resampled.
    """
    rate, data = _wavfile.read(path)
    if data.ndim != 1:
        raise ValueError(f"{path}: only mono WAV files are supported")
    if data.dtype == np.int16:
        x = data.astype(np.float64) / 32768.0
    elif data.dtype in (np.float32, np.float64):
        x = data.astype(np.float64)
    else:
        raise ValueError(f"{path}: unsupported sample format {data.dtype}")
    if rate != SAMPLE_RATE:
        if not resample:
            raise ValueError(
                f"{path}: sample rate {rate} != {SAMPLE_RATE}; pass --resample "
                "to convert on load"
            )
        x = _resample_poly(x, SAMPLE_RATE, rate)
    return validate_waveform(x, str(path))


def write_wav(path, w: np.ndarray, fmt: str = "float32") -> None:
    """Write a mono 8 kHz WAV file as 32-bit float or 16-bit PCM."""
    w = validate_waveform(w)
    if fmt == "float32":
        _wavfile.write(path, SAMPLE_RATE, w.astype(np.float32))
    elif fmt == "pcm16":
        clipped = np.clip(w, -1.0, 32767.0 / 32768.0)
        _wavfile.write(path, SAMPLE_RATE, np.round(clipped * 32768.0).astype(np.int16))
    else:
        raise ValueError(f"unknown WAV format {fmt!r}")
