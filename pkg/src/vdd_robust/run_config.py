"""Run configuration: JSON config file, defaults, and hashed run directories.

The default attack grids reproduce the study's experiment matrix: tones at
50/75/100/125/150 Hz with amplitudes 0.2/0.3/0.4/0.8/0.9, epsilons 0.001,
0.01 and 0.1 for the gradient attacks, and pitch steps -1..-5.
"""

from __future__ import annotations

import hashlib
import json
import os
from pathlib import Path

from .attacks import AttackConfig, Fgsm, Pgd, PitchShift, Tone
from .errors import VddError

OUTPUT_ROOT_ENV = "VDD_ROBUST_OUT"

DEFAULT_TONE_FREQS = [50.0, 75.0, 100.0, 125.0, 150.0]
DEFAULT_TONE_AMPLITUDES = [0.2, 0.3, 0.4, 0.8, 0.9]
DEFAULT_EPSILONS = [0.001, 0.01, 0.1]
DEFAULT_PITCH_STEPS = [-1, -2, -3, -4, -5]


class ConfigError(VddError):
    """Run configuration is malformed."""


def default_config() -> dict:
    return {
        "seed": 7,
        "threads": 1,
        "output_root": "runs",
        "corpus": {
            "gen": {"n_normal": 100, "n_pathol": 100, "out_dir": "corpus", "rate_hz": 25000}
        },
        "split": {
            "train_frac": 0.70,
            "val_frac": 0.10,
            "test_frac": 0.20,
            "stratified": True,
        },
        "detector": {
            "feature": "mel",
            "preset": "cnn",
            "classifier": "cnn",
            "train": {
                "learning_rate": 0.05,
                "epochs": 8,
                "batch_size": 16,
                "weight_decay": 0.0,
            },
            "svm_c": 1.0,
            "svm_gamma": None,
        },
        "attack": {
            "scenario": "white",
            "attacks": ["fgsm", "pgd"],
            "grids": {
                "fgsm": {"epsilons": DEFAULT_EPSILONS},
                "pgd": {
                    "epsilons": DEFAULT_EPSILONS,
                    "iterations": 10,
                    "random_start": False,
                },
                "tone": {
                    "freqs_hz": DEFAULT_TONE_FREQS,
                    "amplitudes": DEFAULT_TONE_AMPLITUDES,
                    "phase_rad": 0.0,
                },
                "pitch": {"steps": DEFAULT_PITCH_STEPS, "steps_per_octave": 12},
            },
        },
    }


def _deep_merge(base: dict, overlay: dict) -> dict:
    out = dict(base)
    for key, value in overlay.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _deep_merge(out[key], value)
        else:
            out[key] = value
    return out


def load_run_config(path=None, overrides: dict | None = None) -> dict:
    """Defaults, overlaid by the config file, overlaid by CLI flags.

    A run_manifest.json written by a previous command is accepted directly
    (its embedded config is extracted), which makes every run replayable.
    """
    config = default_config()
    if path is not None:
        try:
            with open(path) as fh:
                loaded = json.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
        if "run" in loaded and "config" in loaded.get("run", {}):
            loaded = loaded["run"]["config"]
        config = _deep_merge(config, loaded)
    if overrides:
        config = _deep_merge(config, overrides)
    return config


def config_hash(config: dict) -> str:
    canonical = json.dumps(config, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()[:12]


def run_dir(config: dict, kind: str, output_root=None) -> Path:
    """Timestamp-free output directory named by the config hash."""
    root = output_root or os.environ.get(OUTPUT_ROOT_ENV) or config.get("output_root", "runs")
    return Path(root) / f"{kind}-{config_hash(config)}"


def build_attack_grid(attack_section: dict) -> list[AttackConfig]:
    """Expand the configured grids into a flat list of attack configs."""
    grids = attack_section.get("grids", {})
    selected = attack_section.get("attacks", [])
    configs: list[AttackConfig] = []
    for name in selected:
        if name == "fgsm":
            g = grids.get("fgsm", {"epsilons": DEFAULT_EPSILONS})
            configs.extend(Fgsm(float(e)) for e in g["epsilons"])
        elif name == "pgd":
            g = grids.get("pgd", {"epsilons": DEFAULT_EPSILONS})
            configs.extend(
                Pgd(
                    float(e),
                    iterations=int(g.get("iterations", 10)),
                    random_start=bool(g.get("random_start", False)),
                )
                for e in g["epsilons"]
            )
        elif name == "tone":
            g = grids.get("tone", {})
            freqs = g.get("freqs_hz", DEFAULT_TONE_FREQS)
            amps = g.get("amplitudes", DEFAULT_TONE_AMPLITUDES)
            phase = float(g.get("phase_rad", 0.0))
            configs.extend(
                Tone(float(f), float(a), phase) for f in freqs for a in amps
            )
        elif name == "pitch":
            g = grids.get("pitch", {})
            steps = g.get("steps", DEFAULT_PITCH_STEPS)
            spo = int(g.get("steps_per_octave", 12))
            configs.extend(PitchShift(int(s), spo) for s in steps)
        else:
            raise ConfigError(
                f"unknown attack {name!r}; valid: fgsm, pgd, tone, pitch"
            )
    if not configs:
        raise ConfigError("attack section selects no attacks")
    return configs
