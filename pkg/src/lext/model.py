"""Compact dual-path time-frequency separation network.

The network regresses the real/imaginary STFT planes of the target directly
from the real/imaginary planes of the (prompted) input. Each block runs a
bidirectional GRU along frequency, a chunked bidirectional GRU along time,
and full-sequence multi-head self-attention over frames. The attention is
the only sublayer whose receptive field spans the whole concatenated signal,
which makes the enrollment-to-mixture information flow auditable through the
attention maps. No positional encodings are used on the time axis, so
train/test length mismatch costs nothing.

A second variant conditions the same trunk on a fixed-length vector instead:
the enrollment is encoded by the first block, mean-pooled to one embedding,
and injected by feature-wise affine modulation at every block input. It
serves as the sensitivity baseline for short enrollments.
"""

import logging
import warnings
from dataclasses import dataclass, asdict
from typing import List, Optional, Tuple

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from . import dsp
from .prompt import PromptBoundaries

log = logging.getLogger(__name__)

TIME_CHUNK = 64  # frames per intra-time GRU segment
CHECKPOINT_VERSION = 1

VARIANTS = ("lext", "fixed_embed_baseline")


@dataclass
class ModelConfig:
    embed_dim: int = 32
    num_blocks: int = 3
    attention_heads: int = 4
    hidden_units: int = 32
    variant: str = "lext"

    def __post_init__(self):
        if self.num_blocks < 1:
            raise ValueError("num_blocks must be >= 1")
        if self.embed_dim % self.attention_heads != 0:
            raise ValueError("embed_dim must be divisible by attention_heads")
        if self.variant not in VARIANTS:
            raise ValueError(f"unknown variant {self.variant!r}")

    @property
    def head_dim(self) -> int:
        return self.embed_dim // self.attention_heads


MICRO_CONFIG = ModelConfig(embed_dim=16, num_blocks=2, attention_heads=2, hidden_units=32)
DESK_CONFIG = ModelConfig(embed_dim=32, num_blocks=3, attention_heads=4, hidden_units=32)


@dataclass
class AttentionMaps:
    """Row-stochastic (block, head, T, T) self-attention maps with annotations."""

    maps: np.ndarray
    enroll_frames: List[Tuple[int, int]]
    glue_frames: List[Tuple[int, int]]
    mixture_frames: Optional[Tuple[int, int]]


class _Block(nn.Module):
    def __init__(self, cfg: ModelConfig):
        super().__init__()
        d, h = cfg.embed_dim, cfg.hidden_units
        self.heads = cfg.attention_heads
        self.head_dim = cfg.head_dim
        self.norm_freq = nn.LayerNorm(d)
        self.gru_freq = nn.GRU(d, h, batch_first=True, bidirectional=True)
        self.proj_freq = nn.Linear(2 * h, d)
        self.norm_time = nn.LayerNorm(d)
        self.gru_time = nn.GRU(d, h, batch_first=True, bidirectional=True)
        self.proj_time = nn.Linear(2 * h, d)
        self.norm_attn = nn.LayerNorm(d)
        self.query = nn.Linear(d, d)
        self.key = nn.Linear(d, d)
        self.value = nn.Linear(d, d)
        self.proj_attn = nn.Linear(d, d)

    def forward(self, x, collect_attention: bool = False):
        b, t, f, d = x.shape

        z = self.norm_freq(x).reshape(b * t, f, d)
        z, _ = self.gru_freq(z)
        x = x + self.proj_freq(z).reshape(b, t, f, d)

        z = self.norm_time(x).permute(0, 2, 1, 3).reshape(b * f, t, d)
        chunks = -(-t // TIME_CHUNK)
        pad = chunks * TIME_CHUNK - t
        if pad:
            z = F.pad(z, (0, 0, 0, pad))
        z = z.reshape(b * f * chunks, TIME_CHUNK, d)
        z, _ = self.gru_time(z)
        z = z.reshape(b * f, chunks * TIME_CHUNK, -1)[:, :t]
        x = x + self.proj_time(z).reshape(b, f, t, d).permute(0, 2, 1, 3)

        frame = self.norm_attn(x).mean(dim=2)  # (b, t, d)
        q = self.query(frame).reshape(b, t, self.heads, self.head_dim).transpose(1, 2)
        k = self.key(frame).reshape(b, t, self.heads, self.head_dim).transpose(1, 2)
        v = self.value(frame).reshape(b, t, self.heads, self.head_dim).transpose(1, 2)
        attn = torch.softmax(q @ k.transpose(-1, -2) / self.head_dim**0.5, dim=-1)
        out = (attn @ v).transpose(1, 2).reshape(b, t, d)
        x = x + self.proj_attn(out).unsqueeze(2)
        return x, (attn if collect_attention else None)


class SeparatorModel(nn.Module):
    """Trainable separator: configuration, parameters, and step counter."""

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        d = config.embed_dim
        self.encoder = nn.Linear(2, d)
        self.blocks = nn.ModuleList(_Block(config) for _ in range(config.num_blocks))
        self.decoder = nn.Linear(d, 2)
        if config.variant == "fixed_embed_baseline":
            self.film_scale = nn.ModuleList(
                nn.Linear(d, d) for _ in range(config.num_blocks)
            )
            self.film_shift = nn.ModuleList(
                nn.Linear(d, d) for _ in range(config.num_blocks)
            )
        self.step_count = 0

    def forward(self, x, collect_attention: bool = False):
        """Map (batch, T, F, 2) input RI planes to same-shape target RI planes."""
        if self.config.variant != "lext":
            raise ValueError("plain forward requires the lext variant")
        z = self.encoder(x)
        maps = []
        for block in self.blocks:
            z, attn = block(z, collect_attention)
            maps.append(attn)
        out = self.decoder(z) + x
        if collect_attention:
            return out, maps
        return out

    def embed_enrollment(self, enroll):
        """Fixed-length embedding: first block's features mean-pooled to a vector."""
        z = self.encoder(enroll)
        z, _ = self.blocks[0](z)
        return z.mean(dim=(1, 2))

    def forward_fixed_embed(self, mix, enroll):
        """Condition the trunk on a pooled enrollment embedding via FiLM."""
        if self.config.variant != "fixed_embed_baseline":
            raise ValueError("forward_fixed_embed requires the fixed_embed_baseline variant")
        emb = self.embed_enrollment(enroll)
        z = self.encoder(mix)
        for i, block in enumerate(self.blocks):
            scale = self.film_scale[i](emb)[:, None, None, :]
            shift = self.film_shift[i](emb)[:, None, None, :]
            z = z * (1.0 + scale) + shift
            z, _ = block(z)
        return self.decoder(z) + mix

    @property
    def num_parameters(self) -> int:
        return sum(p.numel() for p in self.parameters())


def init_model(cfg: ModelConfig, seed: int) -> SeparatorModel:
    """Deterministically initialize a model from (config, seed)."""
    if cfg.embed_dim >= 128 or cfg.hidden_units >= 200:
        warnings.warn(
            "full-scale model configuration; desk hardware expects the reduced "
            "defaults (see DESK_CONFIG)",
            RuntimeWarning,
        )
    with torch.random.fork_rng():
        torch.manual_seed(seed)
        model = SeparatorModel(cfg)
    model.eval()
    log.info("initialized %s model: %d parameters", cfg.variant, model.num_parameters)
    return model


def spec_to_tensor(spec: dsp.Spectrogram, dtype=torch.float32) -> torch.Tensor:
    """Stack a Spectrogram into a (1, T, F, 2) tensor."""
    ri = np.stack([spec.real_part, spec.imag_part], axis=-1)
    return torch.from_numpy(ri).to(dtype).unsqueeze(0)


def tensor_to_spec(x: torch.Tensor, like: dsp.Spectrogram) -> dsp.Spectrogram:
    """Unstack a (T, F, 2) tensor into a Spectrogram with the same framing."""
    arr = x.detach().cpu().numpy().astype(np.float64)
    return dsp.Spectrogram(
        real_part=arr[..., 0],
        imag_part=arr[..., 1],
        window_ms=like.window_ms,
        hop_ms=like.hop_ms,
        fft_size=like.fft_size,
    )


def forward(m: SeparatorModel, in_spec: dsp.Spectrogram) -> dsp.Spectrogram:
    """Evaluation-mode spectral mapping on a single spectrogram."""
    m.eval()
    with torch.no_grad():
        out = m(spec_to_tensor(in_spec, _model_dtype(m)))
    return tensor_to_spec(out[0], in_spec)


def forward_fixed_embed(
    m: SeparatorModel, mix_spec: dsp.Spectrogram, enroll_spec: dsp.Spectrogram
) -> dsp.Spectrogram:
    """Evaluation-mode mapping for the fixed-embedding baseline."""
    m.eval()
    with torch.no_grad():
        out = m.forward_fixed_embed(
            spec_to_tensor(mix_spec, _model_dtype(m)),
            spec_to_tensor(enroll_spec, _model_dtype(m)),
        )
    return tensor_to_spec(out[0], mix_spec)


def _model_dtype(m: SeparatorModel):
    return next(m.parameters()).dtype


def frame_index(sample: int, hop_ms: float) -> int:
    """STFT frame whose center lands on the given sample index."""
    hop = int(round(hop_ms * dsp.SAMPLE_RATE / 1000.0))
    return int(round(sample / hop))


def attention_maps(
    m: SeparatorModel,
    in_spec: dsp.Spectrogram,
    boundaries: Optional[PromptBoundaries] = None,
) -> AttentionMaps:
    """All (block, head) self-attention maps, plus prompt-range frame indices."""
    m.eval()
    with torch.no_grad():
        _, maps = m(spec_to_tensor(in_spec, _model_dtype(m)), collect_attention=True)
    stacked = np.stack([a[0].cpu().numpy() for a in maps])  # (blocks, heads, T, T)

    enroll_f: List[Tuple[int, int]] = []
    glue_f: List[Tuple[int, int]] = []
    mix_f = None
    if boundaries is not None:
        to_frame = lambda s: min(frame_index(s, in_spec.hop_ms), in_spec.num_frames)
        enroll_f = [(to_frame(a), to_frame(b)) for a, b in boundaries.enroll_ranges()]
        glue_f = [(to_frame(a), to_frame(b)) for a, b in boundaries.glue_ranges()]
        mix_f = (to_frame(boundaries.mixture_start), to_frame(boundaries.mixture_end))
    return AttentionMaps(
        maps=stacked, enroll_frames=enroll_f, glue_frames=glue_f, mixture_frames=mix_f
    )


def mixture_to_enroll_mass(am: AttentionMaps) -> np.ndarray:
    """Mean attention mass from mixture-range queries into enrollment-range keys.

    Returns a (num_blocks, num_heads) array; compare against the uniform
    baseline ``enroll_frames / T`` to see whether a head reads the prompt.
    """
    if am.mixture_frames is None or not am.enroll_frames:
        raise ValueError("attention maps carry no prompt annotations")
    q0, q1 = am.mixture_frames
    rows = am.maps[:, :, q0:q1, :]
    mass = np.zeros(am.maps.shape[:2])
    for k0, k1 in am.enroll_frames:
        mass += rows[:, :, :, k0:k1].sum(axis=-1).mean(axis=-1)
    return mass


def uniform_enroll_mass(am: AttentionMaps) -> float:
    """Enrollment share of the frame axis: the no-preference attention level."""
    total = am.maps.shape[-1]
    enroll = sum(b - a for a, b in am.enroll_frames)
    return enroll / total


def save_checkpoint(
    path,
    model: SeparatorModel,
    optimizer=None,
    train_config: Optional[dict] = None,
    metrics: Optional[dict] = None,
    extra: Optional[dict] = None,
) -> None:
    """Write a versioned checkpoint: config, parameters, optimizer, counters."""
    payload = {
        "format_version": CHECKPOINT_VERSION,
        "model_config": asdict(model.config),
        "state_dict": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "step_count": model.step_count,
        "train_config": train_config,
        "metrics": metrics or {},
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path) -> Tuple[SeparatorModel, dict]:
    """Load a checkpoint written by :func:`save_checkpoint`."""
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    model = SeparatorModel(ModelConfig(**payload["model_config"]))
    model.load_state_dict(payload["state_dict"])
    model.step_count = payload.get("step_count", 0)
    model.eval()
    return model, payload
