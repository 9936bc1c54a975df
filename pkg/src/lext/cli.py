"""Single entry-point command suite.

Subcommands: gen-data, train, eval, ablate, export-attn, plot. Every run
writes a reproducibility manifest (config, seed, package version, argv)
beside its outputs. Failures print a machine-readable error record to
stderr; exit codes: 0 success, 2 usage error, 3 config validation error,
1 anything else.
"""

import argparse
import json
import sys
from dataclasses import asdict
from pathlib import Path

from . import __version__, cache, dsp, evaluate, synthgen
from .synthgen import GeneratorConfig, Manifest
from .train import TrainConfig, train


class ConfigError(ValueError):
    pass


def _load_config_dict(path) -> dict:
    if path is None:
        return {}
    try:
        return json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err


def _apply_overrides(config: dict, overrides) -> dict:
    """Apply key=value overrides; keys must already exist (dots nest)."""
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(f"override {item!r} is not key=value")
        key, raw = item.split("=", 1)
        target = config
        parts = key.split(".")
        for part in parts[:-1]:
            if not isinstance(target, dict) or part not in target:
                raise ConfigError(f"override references unknown config key {key!r}")
            target = target[part]
        if not isinstance(target, dict) or parts[-1] not in target:
            raise ConfigError(f"override references unknown config key {key!r}")
        try:
            target[parts[-1]] = json.loads(raw)
        except json.JSONDecodeError:
            target[parts[-1]] = raw
    return config


def _write_run_manifest(out_dir, command: str, config: dict, seed) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    (out_dir / "run_manifest.json").write_text(
        json.dumps(
            {
                "command": command,
                "config": config,
                "seed": seed,
                "version": __version__,
                "argv": sys.argv[1:],
            },
            indent=2,
        )
        + "\n"
    )


def _train_config(args, base: dict = None) -> TrainConfig:
    config = dict(base or {})
    config.update(_load_config_dict(args.config) if getattr(args, "config", None) else {})
    config = _apply_overrides(config, getattr(args, "set", None))
    if getattr(args, "seed", None) is not None:
        config["seed"] = args.seed
    try:
        return TrainConfig.from_dict(config)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err


def cmd_gen_data(args) -> int:
    config = _apply_overrides(_load_config_dict(args.config), args.set)
    try:
        gen_cfg = GeneratorConfig.from_dict(config)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err
    _write_run_manifest(args.out, "gen-data", asdict(gen_cfg), args.seed)
    manifest = synthgen.build_dataset(gen_cfg, args.seed, args.out)
    print(
        f"dataset written to {args.out}: "
        + ", ".join(f"{k}={v['count']}" for k, v in manifest["splits"].items())
    )
    return 0


def cmd_train(args) -> int:
    cfg = _train_config(args)
    data = Path(args.data)
    train_manifest = Manifest(data / "train.jsonl")
    valid_path = data / "valid.jsonl"
    valid_manifest = Manifest(valid_path) if valid_path.exists() else None
    _write_run_manifest(args.out, "train", cfg.to_dict(), cfg.seed)
    summary = train(train_manifest, cfg, args.out, valid_manifest)
    best = summary.get("best_val_si_sdri")
    print(
        f"training done: best val SI-SDRi "
        f"{best:.2f} dB" if best is not None else "training done (no validation split)"
    )
    print(f"checkpoint: {summary['best_checkpoint']}")
    return 0


def _eval_config(args) -> TrainConfig:
    from .model import load_checkpoint

    _, payload = load_checkpoint(args.checkpoint)
    base = payload.get("train_config") or {}
    if args.enroll_len is not None:
        base["enroll_len_s"] = args.enroll_len
    if args.strategy is not None:
        base["strategy"] = args.strategy
    if args.glue_value is not None:
        base["glue"] = (
            {"length_ms": 0.0, "value": 0.0}
            if args.glue_value == "absent"
            else {"length_ms": 32.0, "value": float(args.glue_value)}
        )
    if args.no_sad:
        base["sad_enabled"] = False
    if args.seed is not None:
        base["seed"] = args.seed
    try:
        return TrainConfig.from_dict(base)
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err


def cmd_eval(args) -> int:
    cfg = _eval_config(args)
    manifest = Manifest(args.manifest, resample=args.resample)
    out_dir = Path(args.out_dir)
    _write_run_manifest(out_dir, "eval", cfg.to_dict(), cfg.seed)
    report = evaluate.evaluate_manifest(
        args.checkpoint, manifest, cfg, limit_rows=args.limit_rows
    )
    report.to_csv(out_dir / "report.csv")
    report.to_jsonl(out_dir / "report.jsonl")
    counts = evaluate.histogram(report.scores)
    (out_dir / "histogram.json").write_text(
        json.dumps(
            {
                "edges": list(evaluate.HISTOGRAM_EDGES),
                "counts": counts.tolist(),
                "failure_rate": report.failure_rate,
            },
            indent=2,
        )
        + "\n"
    )
    print(
        f"mean SI-SDRi {report.mean_si_sdri:.2f} dB over {len(report.rows)} rows "
        f"(failure rate {report.failure_rate:.3f})"
    )
    return 0


def cmd_ablate(args) -> int:
    base_cfg = _train_config(args)
    values = []
    for raw in args.values.split(","):
        raw = raw.strip()
        try:
            values.append(json.loads(raw))
        except json.JSONDecodeError:
            values.append(raw)
    out_dir = Path(args.out_dir)
    _write_run_manifest(out_dir, "ablate", base_cfg.to_dict(), base_cfg.seed)
    cells = evaluate.run_ablation(
        args.axis, values, base_cfg, args.data, out_dir, limit_rows=args.limit_rows
    )
    for cell in cells:
        score = cell.get("mean_si_sdri")
        print(
            f"{args.axis}={cell['value']}: "
            + (f"{score:.2f} dB" if score is not None else cell["status"])
        )
    return 0


def cmd_export_attn(args) -> int:
    cfg = _eval_config(args)
    manifest = Manifest(args.manifest)
    index = args.record
    if index < 0 or index >= len(manifest):
        raise ConfigError(f"record index {index} outside manifest (0..{len(manifest) - 1})")
    _write_run_manifest(args.out_dir, "export-attn", cfg.to_dict(), cfg.seed)
    files = evaluate.export_attention(
        args.checkpoint, manifest.load_record(index), cfg, args.out_dir
    )
    print(f"wrote {len(files)} attention files to {args.out_dir}")
    return 0


def cmd_plot(args) -> int:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    import numpy as np

    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    _write_run_manifest(out_dir, "plot", {"report": str(args.report)}, None)
    report_path = Path(args.report)
    written = []
    if report_path.name.startswith("ablation"):
        import csv as _csv

        with open(report_path) as f:
            rows = list(_csv.DictReader(f))
        xs = [r["value"] for r in rows]
        ys = [float(r["mean_si_sdri"]) for r in rows]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        ax.plot(range(len(xs)), ys, "o-")
        ax.set_xticks(range(len(xs)), xs)
        ax.set_xlabel(rows[0]["axis"] if rows else "value")
        ax.set_ylabel("mean SI-SDRi (dB)")
        ax.grid(alpha=0.3)
        target = out_dir / (report_path.stem + ".png")
    else:
        import csv as _csv

        with open(report_path) as f:
            scores = [float(r["si_sdri"]) for r in _csv.DictReader(f)]
        edges = list(evaluate.HISTOGRAM_EDGES)
        counts = evaluate.histogram(scores, edges)
        labels = (
            [f"<{edges[0]:g}"]
            + [f"[{a:g},{b:g})" for a, b in zip(edges[:-1], edges[1:])]
            + [f">={edges[-1]:g}"]
        )
        fig, ax = plt.subplots(figsize=(6, 3.5))
        colors = ["#c44" if i == 0 else "#369" for i in range(len(counts))]
        ax.bar(np.arange(len(counts)), counts, color=colors)
        ax.set_xticks(np.arange(len(counts)), labels, rotation=30)
        ax.set_xlabel("SI-SDRi (dB); leftmost bar = failed cases")
        ax.set_ylabel("mixtures")
        target = out_dir / "histogram.png"
    fig.tight_layout()
    fig.savefig(target, dpi=120)
    plt.close(fig)
    written.append(str(target))
    print(f"wrote {', '.join(written)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lext",
        description="Onset-prompted target speaker extraction: data, training, evaluation.",
    )
    parser.add_argument("--version", action="version", version=f"lext {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="generate a synthetic corpus")
    p.add_argument("--config", help="generator config JSON")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config key (repeatable; dots nest)")
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="train a separator")
    p.add_argument("--config", help="train config JSON")
    p.add_argument("--data", required=True, help="dataset directory (train.jsonl/valid.jsonl)")
    p.add_argument("--out", required=True, help="run output directory")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a manifest")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True, help="split manifest (.jsonl)")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--enroll-len", type=float, default=None, help="enrollment length (s)")
    p.add_argument("--strategy", choices=["prepend", "append", "split"], default=None)
    p.add_argument("--glue-value", default=None, help="glue sample value, or 'absent'")
    p.add_argument("--no-sad", action="store_true", help="disable enrollment SAD")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--limit-rows", type=int, default=None)
    p.add_argument("--resample", action="store_true",
                   help="resample non-8kHz WAVs on load instead of rejecting them")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("ablate", help="train/evaluate one model per axis value")
    p.add_argument("--axis", required=True, choices=list(evaluate.ABLATION_AXES))
    p.add_argument("--values", required=True, help="comma-separated axis values")
    p.add_argument("--config", help="base train config JSON")
    p.add_argument("--data", required=True, help="dataset directory")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--limit-rows", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("export-attn", help="export attention maps for one record")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", required=True)
    p.add_argument("--record", type=int, default=0, help="record index in the manifest")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--enroll-len", type=float, default=None)
    p.add_argument("--strategy", choices=["prepend", "append", "split"], default=None)
    p.add_argument("--glue-value", default=None)
    p.add_argument("--no-sad", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.set_defaults(func=cmd_export_attn)

    p = sub.add_parser("plot", help="render a histogram or ablation curve")
    p.add_argument("--report", required=True, help="report.csv or ablation_*.csv")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_plot)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as err:
        return err.code if err.code is not None else 2
    try:
        return args.func(args)
    except ConfigError as err:
        print(
            json.dumps({"error": {"type": "config", "message": str(err)}, "exit_code": 3}),
            file=sys.stderr,
        )
        return 3
    except Exception as err:  # noqa: BLE001 - CLI boundary
        print(
            json.dumps(
                {"error": {"type": type(err).__name__, "message": str(err)}, "exit_code": 1}
            ),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
