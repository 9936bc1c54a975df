"""Onset-prompt assembly: enrollment fitting, glue signals, paired inputs.

An extraction example is built by concatenating an enrollment utterance of
the target speaker and a short constant "glue" delimiter onto the mixture, at
the waveform level. The target carries the same enrollment and glue, so the
network only has to differ from its input inside the mixture range. Gain
normalization happens here, inside :func:`assemble`, so an unnormalized pair
cannot be constructed.
"""

from dataclasses import dataclass

import numpy as np

from . import dsp

STRATEGIES = ("prepend", "append", "split")


@dataclass
class GlueSpec:
    """Constant delimiter between enrollment and mixture (32 ms of zeros)."""

    length_ms: float = 32.0
    value: float = 0.0

    @property
    def num_samples(self) -> int:
        if self.length_ms < 0:
            raise ValueError("glue length must be non-negative")
        return int(round(self.length_ms * dsp.SAMPLE_RATE / 1000.0))


@dataclass
class PromptBoundaries:
    """Sample counts of the five concatenated ranges of an augmented signal."""

    enroll_pre_len: int
    glue1_len: int
    mixture_len: int
    glue2_len: int = 0
    enroll_post_len: int = 0

    @property
    def total(self) -> int:
        return (
            self.enroll_pre_len
            + self.glue1_len
            + self.mixture_len
            + self.glue2_len
            + self.enroll_post_len
        )

    @property
    def mixture_start(self) -> int:
        return self.enroll_pre_len + self.glue1_len

    @property
    def mixture_end(self) -> int:
        return self.mixture_start + self.mixture_len

    def enroll_ranges(self):
        """Sample ranges holding enrollment material (pre and post)."""
        ranges = []
        if self.enroll_pre_len:
            ranges.append((0, self.enroll_pre_len))
        if self.enroll_post_len:
            ranges.append((self.total - self.enroll_post_len, self.total))
        return ranges

    def glue_ranges(self):
        ranges = []
        if self.glue1_len:
            ranges.append((self.enroll_pre_len, self.enroll_pre_len + self.glue1_len))
        if self.glue2_len:
            ranges.append((self.mixture_end, self.mixture_end + self.glue2_len))
        return ranges

    def to_dict(self):
        return {
            "enroll_pre_len": self.enroll_pre_len,
            "glue1_len": self.glue1_len,
            "mixture_len": self.mixture_len,
            "glue2_len": self.glue2_len,
            "enroll_post_len": self.enroll_post_len,
        }


@dataclass
class PromptedPair:
    """Augmented input/target pair with boundary and scale bookkeeping."""

    input: np.ndarray
    target: np.ndarray
    boundaries: PromptBoundaries
    scales: dsp.GainScales


def make_glue(spec: GlueSpec) -> np.ndarray:
    """Constant waveform of the configured length and sample value."""
    return np.full(spec.num_samples, float(spec.value))


def fit_enrollment(
    e_active: np.ndarray, target_len: int, mode: str = "eval", rng=None
) -> np.ndarray:
    """Fit an active (silence-free) enrollment to a fixed sample length.

    Shorter enrollments are zero-padded on the left, keeping the active
    speech adjacent to the mixture. Longer ones are cropped: a uniformly
    random contiguous segment in train mode, always the first segment in
    eval mode.
    """
    e_active = np.asarray(e_active, dtype=np.float64)
    if target_len <= 0:
        raise ValueError("target_len must be positive")
    if e_active.size == 0:
        raise ValueError("enrollment is entirely silent")
    if mode not in ("train", "eval"):
        raise ValueError(f"unknown mode {mode!r}")
    if e_active.size == target_len:
        return e_active.copy()
    if e_active.size < target_len:
        out = np.zeros(target_len)
        out[target_len - e_active.size :] = e_active
        return out
    if mode == "train":
        if rng is None:
            raise ValueError("train-mode cropping needs an rng")
        offset = int(rng.integers(0, e_active.size - target_len + 1))
    else:
        offset = 0
    return e_active[offset : offset + target_len].copy()


def _pad(x: np.ndarray, length: int, side: str) -> np.ndarray:
    if x.size > length:
        raise ValueError("segment longer than its padded slot")
    out = np.zeros(length)
    if side == "left":
        out[length - x.size :] = x
    else:
        out[: x.size] = x
    return out


def assemble(
    e: np.ndarray,
    y: np.ndarray,
    s: np.ndarray,
    glue: GlueSpec,
    strategy: str = "prepend",
    enroll_len: int = None,
) -> PromptedPair:
    """Build the augmented input/target pair under a concatenation strategy.

    ``e`` is the active enrollment material, already cropped to at most
    ``enroll_len`` samples (see :func:`fit_enrollment`); shorter material is
    zero-padded here according to the strategy: on the left for prepended
    segments, on the right for appended ones, so active speech stays close
    to the mixture. Gains are normalized before concatenation and recorded
    for later inversion. ``enroll_len`` of zero builds a promptless pair.
    """
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    y = np.asarray(y, dtype=np.float64)
    s = np.asarray(s, dtype=np.float64)
    e = np.asarray(e, dtype=np.float64)
    if y.size == 0 or y.size != s.size:
        raise ValueError("mixture and target must be nonempty and equal-length")
    if enroll_len is None:
        enroll_len = e.size
    if e.size > enroll_len:
        raise ValueError("enrollment material exceeds enroll_len; crop it first")
    if enroll_len > 0 and e.size == 0:
        raise ValueError("empty enrollment for a nonzero enrollment slot")

    if enroll_len == 0:
        sigma_y = dsp.sample_std(y)
        if sigma_y <= 0.0:
            raise dsp.DegenerateSignalError("mixture has zero sample variance")
        s_n, y_n = s / sigma_y, y / sigma_y
        e_n = np.zeros(0)
        scales = dsp.GainScales(sigma_y=sigma_y, sigma_e=1.0)
    else:
        s_n, y_n, e_n, scales = dsp.normalize_gain(s, y, e)

    g = make_glue(glue)
    n = y.size
    if strategy == "prepend" or enroll_len == 0:
        e_pre = _pad(e_n, enroll_len, "left")
        bounds = PromptBoundaries(enroll_len, g.size, n)
        inp = np.concatenate([e_pre, g, y_n])
        tgt = np.concatenate([e_pre, g, s_n])
    elif strategy == "append":
        e_post = _pad(e_n, enroll_len, "right")
        bounds = PromptBoundaries(0, 0, n, g.size, enroll_len)
        inp = np.concatenate([y_n, g, e_post])
        tgt = np.concatenate([s_n, g, e_post])
    else:  # split: [e_p; g; y; g; e_a]
        pre_len = (enroll_len + 1) // 2
        post_len = enroll_len // 2
        cut = (e_n.size + 1) // 2
        e_pre = _pad(e_n[:cut], pre_len, "left")
        e_post = _pad(e_n[cut:], post_len, "right")
        bounds = PromptBoundaries(pre_len, g.size, n, g.size, post_len)
        inp = np.concatenate([e_pre, g, y_n, g, e_post])
        tgt = np.concatenate([e_pre, g, s_n, g, e_post])
    return PromptedPair(input=inp, target=tgt, boundaries=bounds, scales=scales)


def strip_prompt(est: np.ndarray, b: PromptBoundaries) -> np.ndarray:
    """Discard enrollment and glue ranges, keeping the mixture-range slice."""
    est = np.asarray(est)
    if est.shape[-1] != b.total:
        raise ValueError(f"estimate length {est.shape[-1]} != boundaries total {b.total}")
    return est[..., b.mixture_start : b.mixture_end]


def denormalize(
    est: np.ndarray, b: PromptBoundaries, scales: dsp.GainScales
) -> np.ndarray:
    """Undo gain normalization: enrollment ranges by sigma_e, mixture by sigma_y.

    Glue-range samples are left unscaled; their predictions are discarded
    downstream anyway.
    """
    est = np.asarray(est, dtype=np.float64)
    if est.size != b.total:
        raise ValueError(f"estimate length {est.size} != boundaries total {b.total}")
    out = est.copy()
    for start, end in b.enroll_ranges():
        out[start:end] *= scales.sigma_e
    out[b.mixture_start : b.mixture_end] *= scales.sigma_y
    return out
