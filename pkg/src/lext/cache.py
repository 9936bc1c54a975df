"""Content-addressed reuse of datasets, checkpoints, and eval reports.

Ablation grids retrain many near-identical models; every artifact here is
keyed by a hash of the exact configuration that produces it (plus the
dataset identity for checkpoints and reports), so rerunning a grid under
fixed seeds is a cache hit. The root directory comes from the
``LEXT_CACHE_DIR`` environment variable, defaulting to ``.lext_cache`` in
the working directory.
"""

import hashlib
import json
import os
from dataclasses import asdict
from pathlib import Path

from . import synthgen
from .train import TrainConfig, train

CACHE_ENV = "LEXT_CACHE_DIR"


def cache_root() -> Path:
    return Path(os.environ.get(CACHE_ENV, ".lext_cache"))


def config_key(payload: dict) -> str:
    canonical = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:16]


def ensure_dataset(gen_cfg: synthgen.GeneratorConfig, seed: int) -> Path:
    """Build a corpus under the cache root, or reuse an existing one."""
    key = config_key({"generator": asdict(gen_cfg), "seed": seed})
    out = cache_root() / "datasets" / key
    if not (out / "dataset.json").exists():
        synthgen.build_dataset(gen_cfg, seed, out)
    return out


def dataset_identity(dataset_dir) -> dict:
    meta = json.loads((Path(dataset_dir) / "dataset.json").read_text())
    return {"config": meta["config"], "seed": meta["seed"]}


def checkpoint_dir(cfg: TrainConfig, dataset_dir) -> Path:
    key = config_key({"train": cfg.to_dict(), "dataset": dataset_identity(dataset_dir)})
    return cache_root() / "checkpoints" / key


def ensure_trained(
    cfg: TrainConfig, dataset_dir, train_split: str = "train", valid_split: str = "valid"
) -> Path:
    """Train a model for (config, dataset), or reuse the cached checkpoint."""
    run_dir = checkpoint_dir(cfg, dataset_dir)
    best = run_dir / "best.ckpt"
    done = run_dir / "done.json"
    if best.exists() and done.exists():
        return best
    dataset_dir = Path(dataset_dir)
    train_manifest = synthgen.Manifest(dataset_dir / f"{train_split}.jsonl")
    valid_manifest = synthgen.Manifest(dataset_dir / f"{valid_split}.jsonl")
    summary = train(train_manifest, cfg, run_dir, valid_manifest)
    done.write_text(json.dumps(summary, indent=2) + "\n")
    return best


def ensure_report(
    checkpoint_path, cfg: TrainConfig, dataset_dir, split: str = "test",
    limit_rows=None,
):
    """Evaluate a checkpoint on a split, reusing a cached report if present."""
    from . import evaluate

    key = config_key(
        {
            "train": cfg.to_dict(),
            "dataset": dataset_identity(dataset_dir),
            "split": split,
            "limit_rows": limit_rows,
        }
    )
    path = cache_root() / "reports" / f"{key}.json"
    if path.exists():
        payload = json.loads(path.read_text())
        return evaluate.EvalReport.from_rows(payload["rows"], payload["config"])
    manifest = synthgen.Manifest(Path(dataset_dir) / f"{split}.jsonl")
    report = evaluate.evaluate_manifest(checkpoint_path, manifest, cfg, limit_rows=limit_rows)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(
        json.dumps({"rows": [r.__dict__ for r in report.rows], "config": report.config})
        + "\n"
    )
    return report
