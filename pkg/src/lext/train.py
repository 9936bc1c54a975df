"""Masked SI-SDR training: loss computation, example sampling, optimization.

The loss is the negative scale-invariant signal-to-distortion ratio of the
estimate against the target, computed in the time domain after inverting the
predicted spectrogram, and only over the mixture range of the augmented
signal: predictions for the enrollment and glue ranges are sliced away
before the loss, so no gradient flows through them.

Every random decision is drawn from an rng derived statelessly from
(seed, epoch, step), which makes runs reproducible and checkpoint resumption
exact.
"""

import json
import logging
import math
import time
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from . import dsp, prompt
from .model import (
    DESK_CONFIG,
    ModelConfig,
    SeparatorModel,
    init_model,
    save_checkpoint,
    load_checkpoint,
)
from .prompt import GlueSpec, PromptedPair

log = logging.getLogger(__name__)

SI_SDR_CLAMP_DB = 60.0


class TrainDivergedError(RuntimeError):
    pass


def si_sdr(est: np.ndarray, ref: np.ndarray) -> float:
    """Scale-invariant signal-to-distortion ratio in dB, clamped to +/-60.

    The reference is rescaled by the least-squares projection coefficient
    of the estimate onto it; the value is the energy ratio of the scaled
    reference to the residual. Invariant to positive rescaling of the
    estimate.
    """
    est = np.asarray(est, dtype=np.float64)
    ref = np.asarray(ref, dtype=np.float64)
    if est.shape != ref.shape or est.ndim != 1 or est.size == 0:
        raise ValueError("si_sdr needs equal-length nonempty 1-D signals")
    ref_energy = float(np.dot(ref, ref))
    if ref_energy <= 0.0:
        raise ValueError("zero reference signal")
    alpha = float(np.dot(est, ref)) / ref_energy
    target = alpha * ref
    num = float(np.dot(target, target))
    den = float(np.dot(target - est, target - est))
    if num <= 0.0:
        return -SI_SDR_CLAMP_DB
    if den <= 0.0:
        return SI_SDR_CLAMP_DB
    return float(np.clip(10.0 * np.log10(num / den), -SI_SDR_CLAMP_DB, SI_SDR_CLAMP_DB))


def si_sdr_torch(est: torch.Tensor, ref: torch.Tensor, eps: float = 1e-10) -> torch.Tensor:
    """Batched differentiable SI-SDR over the last axis, clamped to +/-60 dB."""
    dot = (est * ref).sum(dim=-1, keepdim=True)
    energy = (ref * ref).sum(dim=-1, keepdim=True).clamp_min(eps)
    target = dot / energy * ref
    num = (target * target).sum(dim=-1)
    den = ((target - est) ** 2).sum(dim=-1)
    val = 10.0 * torch.log10((num + eps) / (den + eps))
    return val.clamp(-SI_SDR_CLAMP_DB, SI_SDR_CLAMP_DB)


def masked_loss(est_aug: np.ndarray, pair: PromptedPair) -> float:
    """Negative SI-SDR of the mixture-range slices of estimate and target."""
    est_aug = np.asarray(est_aug, dtype=np.float64)
    if est_aug.size != pair.boundaries.total:
        raise ValueError("estimate length does not match the pair")
    est = prompt.strip_prompt(est_aug, pair.boundaries)
    ref = prompt.strip_prompt(pair.target, pair.boundaries)
    return -si_sdr(est, ref)


def masked_loss_torch(
    est_aug: torch.Tensor, target_aug: torch.Tensor, b: prompt.PromptBoundaries
) -> torch.Tensor:
    """Batch-mean negative SI-SDR over the mixture range only."""
    sl = slice(b.mixture_start, b.mixture_end)
    return -si_sdr_torch(est_aug[:, sl], target_aug[:, sl]).mean()


def _sqrt_hann_torch(win: int, dtype) -> torch.Tensor:
    n = torch.arange(win, dtype=dtype)
    return torch.sqrt(0.5 - 0.5 * torch.cos(2.0 * math.pi * n / win))


def torch_istft(
    spec_ri: torch.Tensor, window_ms: float, hop_ms: float, out_length: int
) -> torch.Tensor:
    """Differentiable inverse STFT matching :func:`lext.dsp.istft` exactly.

    ``spec_ri`` is (batch, T, F, 2); returns (batch, out_length).
    """
    win = int(round(window_ms * dsp.SAMPLE_RATE / 1000.0))
    hop = int(round(hop_ms * dsp.SAMPLE_RATE / 1000.0))
    n_frames = spec_ri.shape[1]
    dtype = spec_ri.dtype
    window = _sqrt_hann_torch(win, dtype)
    spec = torch.complex(spec_ri[..., 0], spec_ri[..., 1])
    frames = torch.fft.irfft(spec, n=win, dim=-1) * window  # (B, T, win)

    total = (n_frames - 1) * hop + win
    folded = torch.nn.functional.fold(
        frames.transpose(1, 2),
        output_size=(1, total),
        kernel_size=(1, win),
        stride=(1, hop),
    ).reshape(frames.shape[0], total)
    wsq = (window * window).expand(n_frames, win)
    env = torch.nn.functional.fold(
        wsq.T.unsqueeze(0),
        output_size=(1, total),
        kernel_size=(1, win),
        stride=(1, hop),
    ).reshape(total)
    mask = (env > 1e-10).to(dtype)
    y = folded / env.clamp_min(1e-10) * mask
    start = win - hop
    return y[:, start : start + out_length]


@dataclass
class TrainConfig:
    """Everything that defines a training run (data framing included)."""

    enroll_len_s: float = 1.0
    mixture_seg_s: float = 4.0
    glue: GlueSpec = field(default_factory=GlueSpec)
    strategy: str = "prepend"
    batch_size: int = 4
    learning_rate: float = 1e-3
    max_epochs: int = 3
    grad_clip_norm: Optional[float] = 5.0
    seed: int = 0
    sad_enabled: bool = True
    model: ModelConfig = field(default_factory=lambda: ModelConfig(**asdict(DESK_CONFIG)))
    window_ms: float = 16.0
    hop_ms: float = 8.0
    steps_per_epoch: Optional[int] = None
    valid_rows: Optional[int] = None
    lr_halve_patience: Optional[int] = None

    def __post_init__(self):
        if self.enroll_len_s < 0:
            raise ValueError("enroll_len_s must be >= 0")
        if self.mixture_seg_s <= 0:
            raise ValueError("mixture_seg_s must be positive")
        if self.strategy not in prompt.STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r}")

    @property
    def enroll_samples(self) -> int:
        return int(round(self.enroll_len_s * dsp.SAMPLE_RATE))

    @property
    def segment_samples(self) -> int:
        return int(round(self.mixture_seg_s * dsp.SAMPLE_RATE))

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        d = dict(d)
        if "glue" in d and isinstance(d["glue"], dict):
            d["glue"] = GlueSpec(**d["glue"])
        if "model" in d and isinstance(d["model"], dict):
            d["model"] = ModelConfig(**d["model"])
        return cls(**d)


@dataclass
class TrainingExample:
    """One assembled pair plus its provenance."""

    pair: PromptedPair
    record_ref: int
    target_speaker: int
    enroll: Optional[np.ndarray] = None  # fitted enrollment for the baseline variant


def active_enrollment(e_raw: np.ndarray, sad_enabled: bool) -> np.ndarray:
    """SAD-splice an enrollment; falls back to the raw signal when disabled."""
    if not sad_enabled:
        return np.asarray(e_raw, dtype=np.float64)
    segs = dsp.detect_speech(e_raw)
    return dsp.splice_active(e_raw, segs)


def sample_example(rec, cfg: TrainConfig, rng, record_ref: int = -1) -> TrainingExample:
    """Draw one training example from a mixture record.

    Uniformly picks the target speaker, crops an aligned fixed-length
    segment jointly from the mixture and that speaker's reference, picks an
    enrollment from the speaker's pool, applies SAD and length fitting, and
    assembles the prompted pair.
    """
    idx = int(rng.integers(0, len(rec.sources)))
    spk = rec.speaker_ids[idx]
    seg = cfg.segment_samples
    n = rec.mixture.size
    if n < seg:
        raise ValueError(f"mixture ({n} samples) shorter than segment ({seg})")
    offset = int(rng.integers(0, n - seg + 1))
    y = rec.mixture[offset : offset + seg]
    s = rec.sources[idx][offset : offset + seg]

    e_target = cfg.enroll_samples
    if e_target == 0:
        pair = prompt.assemble(np.zeros(0), y, s, cfg.glue, cfg.strategy, enroll_len=0)
        return TrainingExample(pair, record_ref, spk)

    pool = rec.enrollments[spk]
    e_raw = pool[int(rng.integers(0, len(pool)))]
    e_act = active_enrollment(e_raw, cfg.sad_enabled)
    if e_act.size == 0:
        raise dsp.DegenerateSignalError(f"speaker {spk} enrollment is entirely silent")
    if e_act.size > e_target:
        e_act = prompt.fit_enrollment(e_act, e_target, mode="train", rng=rng)

    if cfg.model.variant == "fixed_embed_baseline":
        # No prompt on the input; the enrollment is consumed separately.
        pair = prompt.assemble(
            np.zeros(0), y, s, GlueSpec(length_ms=0.0), "prepend", enroll_len=0
        )
        e_n = e_act / dsp.sample_std(e_act)
        enroll = np.zeros(e_target)
        enroll[e_target - e_n.size :] = e_n
        return TrainingExample(pair, record_ref, spk, enroll=enroll)

    pair = prompt.assemble(e_act, y, s, cfg.glue, cfg.strategy, enroll_len=e_target)
    return TrainingExample(pair, record_ref, spk)


def _example_rng(seed: int, epoch: int, step: int, member: int):
    return np.random.default_rng(np.random.SeedSequence([seed, 7, epoch, step, member]))


def batch_tensors(examples: List[TrainingExample], cfg: TrainConfig, dtype=torch.float32):
    """Stack examples into model input/target tensors (plus baseline enrollments)."""
    b = examples[0].pair.boundaries
    specs, targets, enrolls = [], [], []
    for ex in examples:
        if ex.pair.boundaries != b:
            raise ValueError("examples in a batch must share boundaries")
        spec = dsp.stft(ex.pair.input, cfg.window_ms, cfg.hop_ms)
        specs.append(np.stack([spec.real_part, spec.imag_part], axis=-1))
        targets.append(ex.pair.target)
        if ex.enroll is not None:
            espec = dsp.stft(ex.enroll, cfg.window_ms, cfg.hop_ms)
            enrolls.append(np.stack([espec.real_part, espec.imag_part], axis=-1))
    x = torch.from_numpy(np.stack(specs)).to(dtype)
    t = torch.from_numpy(np.stack(targets)).to(dtype)
    e = torch.from_numpy(np.stack(enrolls)).to(dtype) if enrolls else None
    return x, t, e, b


def _forward_batch(model: SeparatorModel, x, enroll):
    if model.config.variant == "fixed_embed_baseline":
        return model.forward_fixed_embed(x, enroll)
    return model(x)


def train(manifest, cfg: TrainConfig, out_dir, valid_manifest=None, resume_from=None) -> dict:
    """Run the optimization loop; returns a summary with checkpoint paths.

    Saves the best-validation checkpoint (``best.ckpt``), the latest state
    (``last.ckpt``), a line-delimited progress log, and the config snapshot.
    Deterministic given the config seed, up to float reduction order: batch
    composition and augmentation draws derive from (seed, epoch, step), so
    resuming from ``last.ckpt`` replays exactly the run that would have
    continued.
    """
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "train_config.json").write_text(json.dumps(cfg.to_dict(), indent=2) + "\n")

    torch.manual_seed(cfg.seed)
    model = init_model(cfg.model, cfg.seed)
    model.train()
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)

    start_epoch = 0
    best_val = -math.inf
    if resume_from is not None:
        restored, payload = load_checkpoint(resume_from)
        model.load_state_dict(restored.state_dict())
        model.step_count = restored.step_count
        if payload.get("optimizer_state") is not None:
            optimizer.load_state_dict(payload["optimizer_state"])
        start_epoch = payload["metrics"].get("epoch", -1) + 1
        best_val = payload.get("extra", {}).get("best_val", -math.inf)
        model.train()

    n_records = len(manifest)
    steps_per_epoch = cfg.steps_per_epoch or max(1, n_records // cfg.batch_size)
    best_path = out_dir / "best.ckpt"
    last_path = out_dir / "last.ckpt"
    stall = 0
    history = []

    log_f = open(out_dir / "train_log.jsonl", "a" if resume_from else "w")
    try:
        for epoch in range(start_epoch, cfg.max_epochs):
            order = np.random.default_rng(
                np.random.SeedSequence([cfg.seed, 6, epoch])
            ).permutation(n_records)
            model.train()
            t_epoch = time.time()
            epoch_losses = []
            for step in range(steps_per_epoch):
                base = step * cfg.batch_size
                idxs = [int(order[(base + j) % n_records]) for j in range(cfg.batch_size)]
                examples = [
                    sample_example(
                        manifest.load_record(i),
                        cfg,
                        _example_rng(cfg.seed, epoch, step, j),
                        record_ref=i,
                    )
                    for j, i in enumerate(idxs)
                ]
                x, target, enroll, bounds = batch_tensors(examples, cfg)
                est_spec = _forward_batch(model, x, enroll)
                est = torch_istft(est_spec, cfg.window_ms, cfg.hop_ms, bounds.total)
                loss = masked_loss_torch(est, target, bounds)
                if not torch.isfinite(loss):
                    raise TrainDivergedError(
                        f"non-finite loss at epoch {epoch} step {step}: {loss.item()}"
                    )
                optimizer.zero_grad()
                loss.backward()
                if cfg.grad_clip_norm is not None:
                    torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip_norm)
                optimizer.step()
                model.step_count += 1
                epoch_losses.append(loss.item())
                log_f.write(
                    json.dumps(
                        {
                            "epoch": epoch,
                            "step": step,
                            "loss": round(loss.item(), 4),
                            "lr": optimizer.param_groups[0]["lr"],
                        }
                    )
                    + "\n"
                )
            log_f.flush()

            val = None
            if valid_manifest is not None:
                val = validate(model, valid_manifest, cfg)
                if val > best_val:
                    best_val = val
                    stall = 0
                    save_checkpoint(
                        best_path, model, optimizer, cfg.to_dict(),
                        metrics={"val_si_sdri": val, "epoch": epoch},
                    )
                else:
                    stall += 1
                    if cfg.lr_halve_patience and stall >= cfg.lr_halve_patience:
                        for group in optimizer.param_groups:
                            group["lr"] = max(group["lr"] * 0.5, 1e-5)
                        stall = 0
            entry = {
                "epoch": epoch,
                "mean_loss": float(np.mean(epoch_losses)),
                "val_si_sdri": val,
                "seconds": round(time.time() - t_epoch, 1),
            }
            history.append(entry)
            log_f.write(json.dumps(entry) + "\n")
            log_f.flush()
            log.info(
                "epoch %d: loss %.2f val %s (%.0fs)",
                epoch, entry["mean_loss"], f"{val:.2f}" if val is not None else "-",
                entry["seconds"],
            )
            save_checkpoint(
                last_path, model, optimizer, cfg.to_dict(),
                metrics={"val_si_sdri": val, "epoch": epoch},
                extra={"best_val": best_val},
            )
    finally:
        log_f.close()

    if valid_manifest is None:
        save_checkpoint(best_path, model, optimizer, cfg.to_dict(), metrics={})
    return {
        "best_checkpoint": str(best_path),
        "last_checkpoint": str(last_path),
        "best_val_si_sdri": None if best_val == -math.inf else best_val,
        "history": history,
    }


def validate(model: SeparatorModel, manifest, cfg: TrainConfig) -> float:
    """Mean SI-SDRi over the validation split with eval-mode enrollment fitting."""
    from . import evaluate  # local import: evaluate depends on this module

    report = evaluate.evaluate_manifest(
        model, manifest, cfg, limit_rows=cfg.valid_rows
    )
    return report.mean_si_sdri


def overfit_pair(
    model: SeparatorModel,
    pair: PromptedPair,
    cfg: TrainConfig,
    max_steps: int = 2000,
    stop_at_si_sdri: Optional[float] = None,
    mix_si_sdr: Optional[float] = None,
) -> List[float]:
    """Optimize a single fixed pair; returns the SI-SDRi trajectory.

    Sanity oracle for the whole differentiable path: a micro model must be
    able to drive one example far past the mixture baseline.
    """
    spec = dsp.stft(pair.input, cfg.window_ms, cfg.hop_ms)
    x = torch.from_numpy(
        np.stack([spec.real_part, spec.imag_part], axis=-1)
    ).to(torch.float32).unsqueeze(0)
    target = torch.from_numpy(pair.target).to(torch.float32).unsqueeze(0)
    if mix_si_sdr is None:
        mix_si_sdr = si_sdr(
            prompt.strip_prompt(pair.input, pair.boundaries),
            prompt.strip_prompt(pair.target, pair.boundaries),
        )
    optimizer = torch.optim.Adam(model.parameters(), lr=cfg.learning_rate)
    model.train()
    trajectory = []
    for _ in range(max_steps):
        est_spec = model(x)
        est = torch_istft(est_spec, cfg.window_ms, cfg.hop_ms, pair.boundaries.total)
        loss = masked_loss_torch(est, target, pair.boundaries)
        if not torch.isfinite(loss):
            raise TrainDivergedError(f"non-finite overfit loss: {loss.item()}")
        optimizer.zero_grad()
        loss.backward()
        if cfg.grad_clip_norm is not None:
            torch.nn.utils.clip_grad_norm_(model.parameters(), cfg.grad_clip_norm)
        optimizer.step()
        trajectory.append(-loss.item() - mix_si_sdr)
        if stop_at_si_sdri is not None and trajectory[-1] > stop_at_si_sdri:
            break
    return trajectory
