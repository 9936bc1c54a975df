"""Test-time extraction and reporting: SI-SDRi tables, histograms, ablations.

Evaluation follows the run-time protocol: gain-normalize the mixture and
enrollment, fit the enrollment with the eval-mode (first segment) rule,
run the model on the full-length mixture, invert the normalization, and
score the mixture-range estimate against the clean reference.
"""

import csv
import json
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Sequence, Union

import numpy as np

from . import dsp, prompt, model as model_mod
from .model import SeparatorModel, load_checkpoint
from .synthgen import Manifest, MixtureRecord
from .train import TrainConfig, TrainDivergedError, si_sdr, active_enrollment

HISTOGRAM_EDGES = (0.0, 5.0, 10.0, 15.0, 20.0, 25.0)


def _as_model(checkpoint: Union[SeparatorModel, str, Path]) -> SeparatorModel:
    if isinstance(checkpoint, SeparatorModel):
        return checkpoint
    model, _ = load_checkpoint(checkpoint)
    return model


def extract(checkpoint, y: np.ndarray, e_raw: np.ndarray, cfg: TrainConfig) -> np.ndarray:
    """Extract the target speaker from a full-length mixture.

    The output has exactly the mixture's length and the mixture's original
    scale. With a zero enrollment length the prompt degenerates to the glue
    alone (the no-enrollment control).
    """
    model = _as_model(checkpoint)
    y = dsp.validate_waveform(y, "mixture")
    e_target = cfg.enroll_samples

    e_act = np.zeros(0)
    if e_target > 0:
        e_act = active_enrollment(e_raw, cfg.sad_enabled)
        if e_act.size == 0:
            raise dsp.DegenerateSignalError("enrollment entirely silent after SAD")
        if e_act.size > e_target:
            e_act = prompt.fit_enrollment(e_act, e_target, mode="eval")

    if model.config.variant == "fixed_embed_baseline":
        sigma_y = dsp.sample_std(y)
        if sigma_y <= 0:
            raise dsp.DegenerateSignalError("mixture has zero sample variance")
        if e_target == 0:
            raise ValueError("the fixed-embedding baseline needs an enrollment")
        e_n = np.zeros(e_target)
        e_fit = e_act / dsp.sample_std(e_act)
        e_n[e_target - e_fit.size :] = e_fit
        mix_spec = dsp.stft(y / sigma_y, cfg.window_ms, cfg.hop_ms)
        enr_spec = dsp.stft(e_n, cfg.window_ms, cfg.hop_ms)
        out_spec = model_mod.forward_fixed_embed(model, mix_spec, enr_spec)
        return dsp.istft(out_spec, y.size) * sigma_y

    # The assembled target is irrelevant at inference; reuse the mixture.
    pair = prompt.assemble(e_act, y, y, cfg.glue, cfg.strategy, enroll_len=e_target)
    in_spec = dsp.stft(pair.input, cfg.window_ms, cfg.hop_ms)
    out_spec = model_mod.forward(model, in_spec)
    est_aug = dsp.istft(out_spec, pair.boundaries.total)
    est_aug = prompt.denormalize(est_aug, pair.boundaries, pair.scales)
    return prompt.strip_prompt(est_aug, pair.boundaries)


def si_sdri(est: np.ndarray, ref: np.ndarray, mix: np.ndarray) -> float:
    """SI-SDR improvement of the estimate over the unprocessed mixture."""
    return si_sdr(est, ref) - si_sdr(mix, ref)


def histogram(scores: Sequence[float], edges: Sequence[float] = HISTOGRAM_EDGES) -> np.ndarray:
    """Bin counts with open outer bins: (-inf, e0), [e0, e1), ..., [eN, inf).

    The leftmost bin collects the failed cases (scores below 0 dB when the
    first edge is 0).
    """
    edges = list(edges)
    if sorted(edges) != edges:
        raise ValueError("edges must be sorted")
    counts = np.zeros(len(edges) + 1, dtype=int)
    for x in scores:
        counts[np.searchsorted(edges, x, side="right")] += 1
    return counts


def failure_rate(scores: Sequence[float]) -> float:
    """Fraction of scores below 0 dB; 0.0 for an empty list."""
    if len(scores) == 0:
        return 0.0
    return float(np.mean(np.asarray(scores) < 0.0))


@dataclass
class EvalRow:
    record_id: str
    target_speaker: int
    si_sdr_mix: float
    si_sdr_est: float
    si_sdri: float


@dataclass
class EvalReport:
    rows: List[EvalRow]
    config: dict = field(default_factory=dict)

    @property
    def mean_si_sdri(self) -> float:
        return float(np.mean([r.si_sdri for r in self.rows])) if self.rows else float("nan")

    @property
    def failure_rate(self) -> float:
        return failure_rate([r.si_sdri for r in self.rows])

    @property
    def scores(self) -> List[float]:
        return [r.si_sdri for r in self.rows]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as f:
            writer = csv.writer(f)
            writer.writerow(["record_id", "target_speaker", "si_sdr_mix", "si_sdr_est", "si_sdri"])
            for r in self.rows:
                writer.writerow(
                    [r.record_id, r.target_speaker,
                     f"{r.si_sdr_mix:.6f}", f"{r.si_sdr_est:.6f}", f"{r.si_sdri:.6f}"]
                )

    def to_jsonl(self, path) -> None:
        with open(path, "w") as f:
            for r in self.rows:
                f.write(json.dumps(r.__dict__) + "\n")
            f.write(
                json.dumps(
                    {
                        "aggregate": {
                            "mean_si_sdri": self.mean_si_sdri,
                            "failure_rate": self.failure_rate,
                            "rows": len(self.rows),
                        },
                        "config": self.config,
                    }
                )
                + "\n"
            )

    @classmethod
    def from_rows(cls, rows: List[dict], config: dict) -> "EvalReport":
        return cls([EvalRow(**r) for r in rows], config)


def evaluate_manifest(
    checkpoint,
    manifest: Manifest,
    cfg: TrainConfig,
    limit_rows: Optional[int] = None,
    limit_records: Optional[int] = None,
) -> EvalReport:
    """Score every (record, target speaker) row of a split.

    Each speaker in each mixture is taken as the target in turn, with the
    first enrollment of the pool (eval protocol).
    """
    model = _as_model(checkpoint)
    rows: List[EvalRow] = []
    n_records = len(manifest) if limit_records is None else min(limit_records, len(manifest))
    for i in range(n_records):
        rec = manifest.load_record(i)
        for k, spk in enumerate(rec.speaker_ids):
            if limit_rows is not None and len(rows) >= limit_rows:
                return EvalReport(rows, cfg.to_dict())
            e_raw = rec.enrollments[spk][0]
            est = extract(model, rec.mixture, e_raw, cfg)
            ref = rec.sources[k]
            mix_score = si_sdr(rec.mixture, ref)
            est_score = si_sdr(est, ref)
            rows.append(
                EvalRow(
                    record_id=manifest.records[i]["id"],
                    target_speaker=int(spk),
                    si_sdr_mix=mix_score,
                    si_sdr_est=est_score,
                    si_sdri=est_score - mix_score,
                )
            )
    return EvalReport(rows, cfg.to_dict())


ABLATION_AXES = ("enroll_len_s", "strategy", "glue_value", "sad_enabled")


def apply_axis(cfg: TrainConfig, axis: str, value) -> TrainConfig:
    """Derive a cell config from the base config; one axis changes."""
    if axis not in ABLATION_AXES:
        raise ValueError(f"unknown ablation axis {axis!r}; choose from {ABLATION_AXES}")
    d = cfg.to_dict()
    if axis == "glue_value":
        if value in ("absent", None):
            d["glue"] = {"length_ms": 0.0, "value": 0.0}
        else:
            d["glue"] = {"length_ms": 32.0, "value": float(value)}
    elif axis == "enroll_len_s":
        d["enroll_len_s"] = float(value)
    elif axis == "sad_enabled":
        d["sad_enabled"] = bool(value)
    else:
        d["strategy"] = str(value)
    return TrainConfig.from_dict(d)


def run_ablation(
    axis: str,
    values: Sequence,
    base_cfg: TrainConfig,
    dataset_dir,
    out_dir,
    eval_split: str = "test",
    limit_rows: Optional[int] = None,
) -> List[dict]:
    """Train (or reuse cached) one model per axis value and tabulate scores.

    A diverged cell is marked failed and the grid continues. Emits
    ``ablation_<axis>.csv`` sorted by axis value, with wall-clock seconds
    per cell.
    """
    from . import cache

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cells = []
    for value in values:
        cfg = apply_axis(base_cfg, axis, value)
        t0 = time.time()
        cell = {"axis": axis, "value": value, "status": "ok"}
        try:
            ckpt = cache.ensure_trained(cfg, dataset_dir)
            report = cache.ensure_report(ckpt, cfg, dataset_dir, eval_split, limit_rows)
            cell["mean_si_sdri"] = report.mean_si_sdri
            cell["failure_rate"] = report.failure_rate
            cell["rows"] = len(report.rows)
            cell["checkpoint"] = str(ckpt)
        except TrainDivergedError as err:
            cell["status"] = "failed"
            cell["error"] = str(err)
        cell["seconds"] = round(time.time() - t0, 1)
        cells.append(cell)

    def sort_key(c):
        v = c["value"]
        return (0, float(v)) if isinstance(v, (int, float, bool)) else (1, str(v))

    cells = sorted(cells, key=sort_key)
    table_path = out_dir / f"ablation_{axis}.csv"
    with open(table_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(["axis", "value", "mean_si_sdri", "failure_rate", "rows", "status", "seconds"])
        for c in cells:
            writer.writerow(
                [c["axis"], c["value"],
                 f"{c.get('mean_si_sdri', float('nan')):.4f}",
                 f"{c.get('failure_rate', float('nan')):.4f}",
                 c.get("rows", 0), c["status"], c["seconds"]]
            )
    (out_dir / f"ablation_{axis}.json").write_text(json.dumps(cells, indent=2) + "\n")
    return cells


def export_attention(
    checkpoint,
    rec: MixtureRecord,
    cfg: TrainConfig,
    out_dir,
    target_index: int = 0,
) -> List[str]:
    """Write every (block, head) attention map with prompt-range annotations.

    Each map goes to a lossless ``.npz`` and a rendered ``.png``; a summary
    JSON reports the mixture-to-enrollment attention mass per head next to
    the uniform baseline.
    """
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    model = _as_model(checkpoint)
    if model.config.variant != "lext":
        raise ValueError("attention export requires the lext variant")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    spk = rec.speaker_ids[target_index]
    e_act = active_enrollment(rec.enrollments[spk][0], cfg.sad_enabled)
    if e_act.size > cfg.enroll_samples:
        e_act = prompt.fit_enrollment(e_act, cfg.enroll_samples, mode="eval")
    pair = prompt.assemble(
        e_act, rec.mixture, rec.mixture, cfg.glue, cfg.strategy,
        enroll_len=cfg.enroll_samples,
    )
    in_spec = dsp.stft(pair.input, cfg.window_ms, cfg.hop_ms)
    am = model_mod.attention_maps(model, in_spec, pair.boundaries)
    mass = model_mod.mixture_to_enroll_mass(am)
    uniform = model_mod.uniform_enroll_mass(am)

    written = []
    n_blocks, n_heads = am.maps.shape[:2]
    for b in range(n_blocks):
        for h in range(n_heads):
            stem = out_dir / f"attn_block{b}_head{h}"
            np.savez_compressed(
                f"{stem}.npz",
                attention=am.maps[b, h],
                enroll_frames=np.array(am.enroll_frames),
                glue_frames=np.array(am.glue_frames),
                mixture_frames=np.array(am.mixture_frames),
            )
            fig, ax = plt.subplots(figsize=(4.5, 4))
            ax.imshow(am.maps[b, h], origin="lower", aspect="auto", cmap="viridis")
            for a0, a1 in am.enroll_frames:
                ax.axvline(a1 - 0.5, color="w", lw=0.8)
                ax.axhline(a1 - 0.5, color="w", lw=0.8)
            ax.set_title(
                f"block {b} head {h}  enroll mass {mass[b, h]:.3f} (uniform {uniform:.3f})"
            )
            ax.set_xlabel("key frame")
            ax.set_ylabel("query frame")
            fig.tight_layout()
            fig.savefig(f"{stem}.png", dpi=110)
            plt.close(fig)
            written.extend([f"{stem}.npz", f"{stem}.png"])

    summary = {
        "enroll_frames": am.enroll_frames,
        "glue_frames": am.glue_frames,
        "mixture_frames": am.mixture_frames,
        "uniform_enroll_mass": uniform,
        "mixture_to_enroll_mass": mass.tolist(),
        "max_first_block_mass": float(mass[0].max()),
    }
    summary_path = out_dir / "attention_summary.json"
    summary_path.write_text(json.dumps(summary, indent=2) + "\n")
    written.append(str(summary_path))
    return written
