"""Command line interface: gen-data, train, attack, report.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
Every command writes a run_manifest.json sufficient to replay it.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import traceback
from pathlib import Path

from .attacks import Fgsm, Pgd
from .corpus import ManifestEntry, gen_corpus, load_manifest
from .detector import load_model, save_model
from .errors import VddError
from .evaluation import (
    ExperimentResult,
    Scenario,
    SplitSpec,
    evaluate,
    export_report,
    run_attack_experiment,
)
from .run_config import (
    build_attack_grid,
    default_config,
    load_run_config,
    run_dir,
)
from .segmentation import Label
from .training import DetectorConfig, train_detector

USAGE_EXIT = 1
DATA_EXIT = 2
INTERNAL_EXIT = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with 2 on usage errors; this tool's contract is 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(USAGE_EXIT, f"{self.prog}: error: {message}\n")


class UsageError(VddError):
    pass


def _build_parser() -> _Parser:
    parser = _Parser(prog="vdd-robust", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("gen-data", help="synthesize a labeled vowel corpus")
    p.add_argument("--normal", type=int, default=None, help="number of normal files")
    p.add_argument("--pathol", type=int, default=None, help="number of pathological files")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--rate", type=int, default=None, help="sample rate in Hz")
    p.add_argument("--out", required=True, help="output corpus directory")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_gen_data)

    p = sub.add_parser("train", help="split, train and save a detector")
    p.add_argument("--manifest", default=None, help="corpus manifest CSV")
    p.add_argument("--feature", choices=["mel", "mfcc"], default=None)
    p.add_argument("--preset", choices=["mobile", "cnn"], default=None)
    p.add_argument(
        "--classifier", choices=["cnn", "cnn-svm-linear", "cnn-svm-rbf"], default=None
    )
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--learning-rate", type=float, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output root (default: runs/)")
    p.add_argument("--config", default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="run an attack grid against a trained model")
    p.add_argument("--model", required=True, help="train run directory or model file")
    p.add_argument(
        "--attack", default=None, help="comma-separated: fgsm,pgd,tone,pitch"
    )
    p.add_argument(
        "--scenario", choices=[s.value for s in Scenario], default=None
    )
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default=None, help="output root (default: runs/)")
    p.add_argument("--config", default=None)
    p.add_argument("--threads", type=int, default=None)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("report", help="shape metrics CSVs into plot-ready files")
    p.add_argument("--run", required=True, help="attack run directory")
    p.set_defaults(func=cmd_report)

    p = sub.add_parser("config", help="print the default experiment config JSON")
    p.set_defaults(func=cmd_config)
    return parser


def _overrides(pairs: dict) -> dict:
    return {k: v for k, v in pairs.items() if v is not None}


def cmd_config(args) -> int:
    print(json.dumps(default_config(), indent=2, sort_keys=True))
    return 0


def cmd_gen_data(args) -> int:
    config = load_run_config(args.config)
    gen = dict(config["corpus"].get("gen", {}))
    gen.update(
        _overrides(
            {"n_normal": args.normal, "n_pathol": args.pathol, "rate_hz": args.rate}
        )
    )
    seed = args.seed if args.seed is not None else config["seed"]
    out = Path(args.out)
    manifest = gen_corpus(
        int(gen.get("n_normal", 100)),
        int(gen.get("n_pathol", 100)),
        seed=seed,
        out_dir=out,
        rate_hz=int(gen.get("rate_hz", 25000)),
    )
    replay = {
        "command": "gen-data",
        "config": {
            "seed": seed,
            "corpus": {"gen": {**gen, "out_dir": str(out)}},
        },
    }
    with open(out / "run_manifest.json", "w") as fh:
        json.dump({"run": replay}, fh, indent=2, sort_keys=True)
        fh.write("\n")
    n_norm = len(manifest.by_label(Label.NORMAL))
    n_path = len(manifest.by_label(Label.PATHOL))
    print(f"manifest: {out / 'manifest.csv'}")
    print(f"normal: {n_norm}  pathol: {n_path}")
    return 0


def _detector_config(config: dict, seed: int) -> DetectorConfig:
    det = dict(config["detector"])
    det.pop("candidates", None)
    det.pop("kfold_k", None)
    train = dict(det.get("train", {}))
    train.setdefault("seed", seed)
    det["train"] = train
    return DetectorConfig.from_dict(det)


def cmd_train(args) -> int:
    flag_overrides = {
        "detector": _overrides(
            {
                "feature": args.feature,
                "preset": args.preset,
                "classifier": args.classifier,
            }
        )
    }
    train_over = _overrides(
        {
            "epochs": args.epochs,
            "learning_rate": args.learning_rate,
            "batch_size": args.batch_size,
        }
    )
    if train_over:
        flag_overrides["detector"]["train"] = train_over
    if args.seed is not None:
        flag_overrides["seed"] = args.seed
    config = load_run_config(args.config, flag_overrides)
    if args.manifest:
        config["corpus"] = {"manifest": args.manifest}

    manifest_path = config["corpus"].get("manifest")
    if not manifest_path:
        raise UsageError("train needs --manifest (or corpus.manifest in the config)")
    manifest = load_manifest(manifest_path)

    seed = config["seed"]
    det_config = _detector_config(config, seed)
    split = SplitSpec(seed=config["split"].get("seed", seed), **{
        k: v for k, v in config["split"].items()
        if k in ("train_frac", "val_frac", "test_frac", "stratified")
    })

    effective = {
        "command": "train",
        "seed": seed,
        "corpus": {"manifest": str(manifest_path)},
        "detector": det_config.to_dict(),
        "split": {
            "train_frac": split.train_frac,
            "val_frac": split.val_frac,
            "test_frac": split.test_frac,
            "seed": split.seed,
            "stratified": split.stratified,
        },
    }
    out_dir = run_dir(effective, "train", args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    candidates = None
    if config["detector"].get("candidates"):
        candidates = [
            DetectorConfig.from_dict(d) for d in config["detector"]["candidates"]
        ]
    k = int(config["detector"].get("kfold_k", 5))
    result = train_detector(manifest, det_config, split, candidates=candidates, k=k)

    model_path = out_dir / "model.bin"
    save_model(result.detector, model_path)

    split_payload = {}
    by_path = {str(e.path): e for e in manifest.entries}
    for name, paths in result.split_record.items():
        split_payload[name] = [
            {
                "path": p,
                "label": by_path[p].label.value,
                "subject_id": by_path[p].subject_id,
                "duration_s": by_path[p].duration_s,
            }
            for p in paths
        ]
    with open(out_dir / "split.json", "w") as fh:
        json.dump(split_payload, fh, indent=2, sort_keys=True)
        fh.write("\n")

    with open(out_dir / "training_log.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["epoch", "train_loss", "val_loss", "val_acc"])
        for rec in result.history:
            writer.writerow(
                [
                    rec["epoch"],
                    f"{rec['train_loss']:.6f}",
                    f"{rec.get('val_loss', float('nan')):.6f}",
                    f"{rec.get('val_acc', float('nan')):.6f}",
                ]
            )
    if result.kfold_table is not None:
        with open(out_dir / "kfold.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["candidate", "name", "mean_accuracy"])
            for row in result.kfold_table:
                writer.writerow(
                    [row["candidate"], row["name"], f"{row['mean_accuracy']:.6f}"]
                )
    with open(out_dir / "run_manifest.json", "w") as fh:
        json.dump({"run": {"command": "train", "config": effective}}, fh,
                  indent=2, sort_keys=True)
        fh.write("\n")

    print(result.detector.describe())
    if result.val_report is not None:
        print(f"validation file accuracy: {result.val_report.file_accuracy:.3f}")
    print(f"model: {model_path}")
    return 0


def _load_split_entries(model_arg: Path) -> tuple[Path, list[ManifestEntry]]:
    model_path = Path(model_arg)
    if model_path.is_dir():
        model_path = model_path / "model.bin"
    split_path = model_path.parent / "split.json"
    if not split_path.exists():
        raise VddError(f"missing split record next to model: {split_path}")
    with open(split_path) as fh:
        split = json.load(fh)
    entries = [
        ManifestEntry(Path(e["path"]), Label(e["label"]), e["subject_id"], e["duration_s"])
        for e in split["test"]
    ]
    if not entries:
        raise VddError("split record has no test files")
    return model_path, entries


def cmd_attack(args) -> int:
    overrides = {}
    if args.attack:
        overrides["attack"] = {"attacks": [a.strip() for a in args.attack.split(",")]}
    if args.scenario:
        overrides.setdefault("attack", {})["scenario"] = args.scenario
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    config = load_run_config(args.config, overrides)

    scenario = Scenario(config["attack"]["scenario"])
    grid = build_attack_grid(config["attack"])
    white = [g for g in grid if isinstance(g, (Fgsm, Pgd))]
    if scenario is Scenario.WHITE and len(white) != len(grid):
        raise UsageError(
            "tone/pitch attacks manipulate waveforms; use --scenario black-file "
            "or black-snippet"
        )
    if scenario is not Scenario.WHITE and white:
        raise UsageError(
            f"fgsm/pgd need gradients and only run white-box; "
            f"--scenario {scenario.value} cannot apply them"
        )

    model_path, test_entries = _load_split_entries(args.model)
    detector = load_model(model_path)
    threads = int(config.get("threads", 1))

    effective = {
        "command": "attack",
        "seed": config["seed"],
        "detector_name": f"{detector.feature_kind.value}-{detector.preset_name}-"
        f"{detector.classifier_kind}",
        "attack": {
            "scenario": scenario.value,
            "attacks": config["attack"]["attacks"],
            "grids": {
                k: config["attack"]["grids"][k]
                for k in config["attack"]["attacks"]
                if k in config["attack"]["grids"]
            },
        },
    }
    out_dir = run_dir(effective, "attack", args.out)

    clean = evaluate(detector, test_entries, threads=threads)
    outcomes = run_attack_experiment(
        detector, grid, scenario, clean, test_entries,
        seed=config["seed"], threads=threads,
    )
    result = ExperimentResult(
        detector_name=effective["detector_name"],
        feature=detector.feature_kind.value,
        preset=detector.preset_name,
        clean=clean,
        outcomes=outcomes,
    )
    paths = export_report([result], out_dir, {"command": "attack", "config": effective})

    print(f"clean TPR on test normals: {_fmt_tpr(clean.tpr)}")
    print(f"{'attack':<8} {'param1':>8} {'param2':>8} {'TPR':>7}")
    for o in outcomes:
        p = o.params
        vals = list(p.values())
        print(
            f"{o.attack:<8} {vals[0]:>8g} {vals[1] if len(vals) > 1 else '':>8} "
            f"{_fmt_tpr(o.report.tpr):>7}"
        )
    print(f"metrics: {paths['metrics']}")
    return 0


def _fmt_tpr(tpr) -> str:
    return "n/a" if tpr is None else f"{tpr:.3f}"


def _read_metrics(run: Path) -> list[dict]:
    metrics = run / "metrics.csv"
    if not metrics.exists():
        raise VddError(f"no metrics.csv in {run}")
    with open(metrics, newline="") as fh:
        return list(csv.DictReader(fh))


def cmd_report(args) -> int:
    run = Path(args.run)
    rows = _read_metrics(run)
    if not rows:
        raise VddError(f"{run}/metrics.csv has no data rows")

    tone_rows = [r for r in rows if r["attack"] == "tone"]
    if tone_rows:
        freqs = sorted({float(r["param1"]) for r in tone_rows})
        amps = sorted({float(r["param2"]) for r in tone_rows})
        detectors = sorted({r["detector"] for r in tone_rows})
        with open(run / "fig_tone.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["detector", "amplitude"] + [f"freq_{f:g}" for f in freqs])
            for det in detectors:
                for amp in amps:
                    row = [det, f"{amp:g}"]
                    for f in freqs:
                        match = [
                            r["attacked_tpr"]
                            for r in tone_rows
                            if r["detector"] == det
                            and float(r["param1"]) == f
                            and float(r["param2"]) == amp
                        ]
                        row.append(match[0] if match else "")
                    writer.writerow(row)

    pitch_rows = [r for r in rows if r["attack"] == "pitch"]
    if pitch_rows:
        with open(run / "fig_pitch.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["detector", "steps", "attacked_tpr"])
            for r in sorted(pitch_rows, key=lambda r: (r["detector"], float(r["param1"]))):
                writer.writerow([r["detector"], f"{float(r['param1']):g}", r["attacked_tpr"]])

    eps_rows = [r for r in rows if r["attack"] in ("fgsm", "pgd")]
    if eps_rows:
        with open(run / "fig_epsilon.csv", "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["detector", "attack", "epsilon", "attacked_tpr"])
            for r in sorted(
                eps_rows, key=lambda r: (r["detector"], r["attack"], float(r["param1"]))
            ):
                writer.writerow(
                    [r["detector"], r["attack"], f"{float(r['param1']):g}", r["attacked_tpr"]]
                )

    boxplots = run / "boxplots.csv"
    if boxplots.exists():
        (run / "fig_boxplots.csv").write_bytes(boxplots.read_bytes())

    lines = []
    for det in sorted({r["detector"] for r in rows}):
        det_rows = [r for r in rows if r["detector"] == det]
        clean = det_rows[0]["clean_tpr"]
        worst = min(det_rows, key=lambda r: float(r["attacked_tpr"] or 1.0))
        lines.append(
            f"{det}: clean TPR {clean}, min attacked TPR {worst['attacked_tpr']} "
            f"({worst['attack']} param1={worst['param1']} param2={worst['param2']} "
            f"scenario={worst['scenario']})"
        )
    (run / "summary.txt").write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return USAGE_EXIT
    except (VddError, FileNotFoundError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return DATA_EXIT
    except Exception:
        traceback.print_exc()
        return INTERNAL_EXIT


if __name__ == "__main__":
    sys.exit(main())
