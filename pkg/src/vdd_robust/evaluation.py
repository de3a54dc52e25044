"""Evaluation protocol: splits, clean evaluation, attack experiments, stats.

TPR here is the fraction of normal files still classified normal — the
attacks aim to flip normal voices to pathological, so surviving normal
classifications are the quantity under attack. Attacked sets always consist
of the correctly classified normal files of the clean run.
"""

from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import __version__
from .attacks import AttackConfig, Fgsm, Pgd, PitchShift, Tone, fgsm, pgd, perturbation_linf, pitch_shift, tone_attack
from .corpus import CorpusManifest, ManifestEntry, load_clip
from .detector import CLASS_ORDER, Detector
from .errors import VddError
from .segmentation import Label, majority_vote, segment


class SplitError(VddError):
    """Requested split cannot be populated."""


class ScenarioMismatchError(VddError):
    """Attack type is not defined for the requested scenario."""


class Scenario(str, Enum):
    WHITE = "white"
    BLACK_FILE = "black-file"
    BLACK_SNIPPET = "black-snippet"


@dataclass(frozen=True)
class SplitSpec:
    train_frac: float = 0.70
    val_frac: float = 0.10
    test_frac: float = 0.20
    seed: int = 0
    stratified: bool = True

    def __post_init__(self):
        total = self.train_frac + self.val_frac + self.test_frac
        if abs(total - 1.0) > 1e-9:
            raise ValueError("split fractions must sum to 1")
        if min(self.train_frac, self.val_frac, self.test_frac) < 0:
            raise ValueError("split fractions must be non-negative")


def _quotas(n: int, fracs: tuple[float, ...]) -> list[int]:
    """Largest-remainder apportionment of n items to the given fractions."""
    raw = [n * f for f in fracs]
    base = [int(np.floor(r)) for r in raw]
    short = n - sum(base)
    order = sorted(range(len(fracs)), key=lambda i: raw[i] - base[i], reverse=True)
    for i in order[:short]:
        base[i] += 1
    return base


def split_dataset(
    manifest: CorpusManifest, spec: SplitSpec
) -> tuple[CorpusManifest, CorpusManifest, CorpusManifest]:
    """Stratified, seeded, subject-disjoint 70/10/20 split.

    Subjects are assigned whole to the split with the largest remaining
    file deficit, so exact quotas are met whenever subjects own one file
    each and class sizes divide evenly.
    """
    if not manifest.entries:
        raise SplitError("cannot split an empty manifest")
    rng = np.random.default_rng(spec.seed)
    fracs = (spec.train_frac, spec.val_frac, spec.test_frac)

    # subjects move as a unit; a subject's stratum is its majority label
    subjects: dict[str, list[ManifestEntry]] = {}
    for e in manifest.entries:
        subjects.setdefault(e.subject_id, []).append(e)

    def stratum(files: list[ManifestEntry]) -> Label:
        votes = [e.label for e in files]
        return majority_vote(votes)

    strata: dict[Label, list[str]] = {}
    for sid in subjects:
        strata.setdefault(stratum(subjects[sid]), []).append(sid)
    if not spec.stratified:
        strata = {Label.NORMAL: [sid for group in strata.values() for sid in group]}

    splits: tuple[list[ManifestEntry], ...] = ([], [], [])
    for label in sorted(strata, key=lambda lab: lab.value):
        sids = strata[label]
        n_files = sum(len(subjects[s]) for s in sids)
        quotas = _quotas(n_files, fracs)
        deficits = [float(q) for q in quotas]
        for sid in rng.permutation(np.array(sids, dtype=object)):
            target = int(np.argmax(deficits))
            splits[target].extend(subjects[sid])
            deficits[target] -= len(subjects[sid])

    names = ("train", "val", "test")
    for part, frac, name in zip(splits, fracs, names):
        if frac > 0 and not part:
            raise SplitError(f"{name} split is empty; adjust fractions or data")
        if frac > 0 and spec.stratified:
            labels = {e.label for e in part}
            if labels != {Label.NORMAL, Label.PATHOL}:
                raise SplitError(
                    f"{name} split cannot be filled with both classes "
                    "subject-disjointly"
                )
    order = {id(e): i for i, e in enumerate(manifest.entries)}
    return tuple(
        CorpusManifest(sorted(part, key=lambda e: order[id(e)])) for part in splits
    )


@dataclass
class FileResult:
    path: str
    true_label: Label
    predicted: Label
    vote_fraction: float  # fraction of snippets voted pathological
    mean_score: float


@dataclass
class EvalReport:
    snippet_accuracy: float
    file_accuracy: float
    tpr: float | None  # None when the set has no normal files
    per_file: list[FileResult]
    per_snippet_scores: list[float]
    per_snippet_paths: list[str] = field(default_factory=list)


def _map_ordered(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def _report_from_rows(rows, positive_label: Label = Label.NORMAL) -> EvalReport:
    """rows: (entry, snippet_labels, snippet_scores).

    TPR counts positive_label files kept positive; the attacks target normal
    voices, so normal is the positive class by default (configurable).
    """
    per_file = []
    all_scores: list[float] = []
    all_paths: list[str] = []
    snip_hits = snip_total = 0
    for entry, labels, scores in rows:
        pred = majority_vote(labels)
        vote_frac = sum(1 for lab in labels if lab is Label.PATHOL) / len(labels)
        per_file.append(
            FileResult(str(entry.path), entry.label, pred, vote_frac, float(np.mean(scores)))
        )
        snip_hits += sum(1 for lab in labels if lab is entry.label)
        snip_total += len(labels)
        all_scores.extend(float(s) for s in scores)
        all_paths.extend([str(entry.path)] * len(labels))
    positives = [r for r in per_file if r.true_label is positive_label]
    tpr = None
    if positives:
        tpr = sum(1 for r in positives if r.predicted is positive_label) / len(positives)
    file_acc = sum(1 for r in per_file if r.predicted is r.true_label) / len(per_file)
    return EvalReport(
        snippet_accuracy=snip_hits / snip_total,
        file_accuracy=file_acc,
        tpr=tpr,
        per_file=per_file,
        per_snippet_scores=all_scores,
        per_snippet_paths=all_paths,
    )


def evaluate(
    detector: Detector,
    entries: list[ManifestEntry],
    threads: int = 1,
    positive_label: Label = Label.NORMAL,
) -> EvalReport:
    """Clean snippet- and file-level evaluation with majority voting."""
    if not entries:
        raise ValueError("evaluate() needs at least one file")

    def one(entry: ManifestEntry):
        snippets = segment(load_clip(entry), detector.snippet_spec)
        labels, scores = detector.predict_snippets(snippets)
        return entry, labels, scores

    return _report_from_rows(_map_ordered(one, entries, threads), positive_label)


def attacked_set(clean: EvalReport, entries: list[ManifestEntry]) -> list[ManifestEntry]:
    """Correctly classified normal files — the only files attacks target."""
    good = {
        r.path
        for r in clean.per_file
        if r.true_label is Label.NORMAL and r.predicted is Label.NORMAL
    }
    return [e for e in entries if str(e.path) in good]


@dataclass
class AttackOutcome:
    attack: str
    params: dict
    scenario: Scenario
    report: EvalReport
    mean_linf: float | None = None
    max_linf: float | None = None
    linf_rel_range: float | None = None  # mean linf / clean feature dynamic range


def _attack_params(cfg: AttackConfig) -> tuple[str, dict]:
    if isinstance(cfg, Fgsm):
        return "fgsm", {"epsilon": cfg.epsilon}
    if isinstance(cfg, Pgd):
        return "pgd", {"epsilon": cfg.epsilon, "step_size": cfg.alpha,
                       "iterations": cfg.iterations}
    if isinstance(cfg, Tone):
        return "tone", {"freq_hz": cfg.freq_hz, "amplitude": cfg.amplitude}
    if isinstance(cfg, PitchShift):
        return "pitch", {"steps": cfg.steps, "steps_per_octave": cfg.steps_per_octave}
    raise TypeError(f"unknown attack config {cfg!r}")


def _check_scenario(cfg: AttackConfig, scenario: Scenario) -> None:
    white = isinstance(cfg, (Fgsm, Pgd))
    if white and scenario is not Scenario.WHITE:
        raise ScenarioMismatchError(
            f"{_attack_params(cfg)[0]} is a white-box attack; scenario {scenario.value!r} "
            "operates on waveforms"
        )
    if not white and scenario is Scenario.WHITE:
        raise ScenarioMismatchError(
            f"{_attack_params(cfg)[0]} is a waveform attack; use black-file or black-snippet"
        )


def _perturb_tensor(detector, tensor, cfg, seed):
    if isinstance(cfg, Fgsm):
        return fgsm(detector.cnn, tensor, CLASS_ORDER.index(Label.NORMAL), cfg,
                    detector.value_range())
    return pgd(detector.cnn, tensor, CLASS_ORDER.index(Label.NORMAL), cfg,
               detector.value_range(), seed=seed)


def _attack_waveform(clip, cfg):
    if isinstance(cfg, Tone):
        return tone_attack(clip, cfg)
    return pitch_shift(clip, cfg)


def run_attack_experiment(
    detector: Detector,
    attack_cfgs: list[AttackConfig],
    scenario: Scenario,
    clean: EvalReport,
    entries: list[ManifestEntry],
    seed: int = 0,
    threads: int = 1,
) -> list[AttackOutcome]:
    """One AttackOutcome per grid point, evaluated on the attacked set.

    WHITE perturbs the feature map of every correctly classified snippet;
    BLACK_FILE manipulates the whole waveform before re-segmentation;
    BLACK_SNIPPET manipulates each correctly classified snippet's waveform.
    """
    for cfg in attack_cfgs:
        _check_scenario(cfg, scenario)
    targets = attacked_set(clean, entries)
    if not targets:
        raise VddError("attacked set is empty: no correctly classified normal files")

    outcomes = []
    for cfg in attack_cfgs:
        name, params = _attack_params(cfg)
        linfs: list[float] = []
        ranges: list[float] = []

        def one(entry: ManifestEntry):
            snippets = segment(load_clip(entry), detector.snippet_spec)
            if scenario is Scenario.BLACK_FILE:
                attacked = segment(
                    _attack_waveform(load_clip(entry), cfg), detector.snippet_spec
                )
                labels, scores = detector.predict_snippets(attacked)
                return entry, labels, scores
            labels, scores = detector.predict_snippets(snippets)
            labels = list(labels)
            scores = np.array(scores)
            for i, lab in enumerate(labels):
                if lab is not Label.NORMAL:
                    continue
                if scenario is Scenario.WHITE:
                    clean_t = detector.snippet_tensor(snippets[i])
                    adv = _perturb_tensor(detector, clean_t, cfg, seed)
                    linfs.append(perturbation_linf(adv, clean_t))
                    ranges.append(float(clean_t.max() - clean_t.min()))
                    new_labels, new_scores = detector.predict_tensors(adv[None])
                else:  # BLACK_SNIPPET
                    adv_clip = _attack_waveform(snippets[i], cfg)
                    new_labels, new_scores = detector.predict_snippets([adv_clip])
                labels[i] = new_labels[0]
                scores[i] = new_scores[0]
            return entry, labels, scores

        rows = _map_ordered(one, targets, threads)
        report = _report_from_rows(rows)
        outcome = AttackOutcome(name, params, scenario, report)
        if linfs:
            outcome.mean_linf = float(np.mean(linfs))
            outcome.max_linf = float(np.max(linfs))
            span = float(np.mean(ranges))
            outcome.linf_rel_range = outcome.mean_linf / span if span > 0 else None
        outcomes.append(outcome)
    return outcomes


@dataclass
class BoxplotStats:
    median: float
    q1: float
    q3: float
    whisker_low: float
    whisker_high: float
    outliers: list[float]


def boxplot_stats(scores) -> BoxplotStats:
    """Quartiles by linear interpolation; whiskers at 1.5 IQR; rest outliers."""
    data = np.asarray(list(scores), dtype=np.float64)
    if data.size == 0:
        raise ValueError("boxplot_stats needs at least one score")
    q1, median, q3 = np.percentile(data, [25.0, 50.0, 75.0])
    iqr = q3 - q1
    lo_fence = q1 - 1.5 * iqr
    hi_fence = q3 + 1.5 * iqr
    inside = data[(data >= lo_fence) & (data <= hi_fence)]
    whisker_low = float(inside.min())
    whisker_high = float(inside.max())
    outliers = sorted(
        float(v) for v in data[(data < whisker_low) | (data > whisker_high)]
    )
    return BoxplotStats(float(median), float(q1), float(q3), whisker_low, whisker_high, outliers)


@dataclass
class ExperimentResult:
    """Everything the exporter needs about one detector's run."""

    detector_name: str
    feature: str
    preset: str
    clean: EvalReport
    outcomes: list[AttackOutcome]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, float):
        return f"{x:.6f}"
    return str(x)


def _grid_params(outcome: AttackOutcome) -> tuple[str, str]:
    p = outcome.params
    if outcome.attack == "fgsm":
        return f"{p['epsilon']:g}", ""
    if outcome.attack == "pgd":
        return f"{p['epsilon']:g}", f"{p['step_size']:g}"
    if outcome.attack == "tone":
        return f"{p['freq_hz']:g}", f"{p['amplitude']:g}"
    return f"{p['steps']:g}", f"{p['steps_per_octave']:g}"


def _clean_score_groups(result: ExperimentResult) -> dict[str, list[float]]:
    """Snippet scores of correctly classified files, grouped by true label."""
    correct = {
        r.path for r in result.clean.per_file if r.predicted is r.true_label
    }
    truth = {r.path: r.true_label for r in result.clean.per_file}
    groups: dict[str, list[float]] = {"clean-normal": [], "clean-pathol": []}
    for path, score in zip(result.clean.per_snippet_paths, result.clean.per_snippet_scores):
        if path in correct:
            key = "clean-normal" if truth[path] is Label.NORMAL else "clean-pathol"
            groups[key].append(score)
    return groups


METRICS_COLUMNS = [
    "detector", "feature", "snippet_preset", "attack", "param1", "param2",
    "scenario", "clean_tpr", "attacked_tpr", "snippet_acc", "file_acc",
]

BOXPLOT_COLUMNS = ["group", "median", "q1", "q3", "wlow", "whigh", "n_outliers"]


def export_report(results: list[ExperimentResult], out_dir, run_meta: dict) -> dict:
    """Write metrics.csv, boxplots.csv and run_manifest.json; returns paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    metrics_path = out_dir / "metrics.csv"
    with open(metrics_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for res in results:
            for outcome in res.outcomes:
                p1, p2 = _grid_params(outcome)
                writer.writerow(
                    [
                        res.detector_name,
                        res.feature,
                        res.preset,
                        outcome.attack,
                        p1,
                        p2,
                        outcome.scenario.value,
                        _fmt(res.clean.tpr),
                        _fmt(outcome.report.tpr),
                        _fmt(outcome.report.snippet_accuracy),
                        _fmt(outcome.report.file_accuracy),
                    ]
                )

    box_path = out_dir / "boxplots.csv"
    with open(box_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(BOXPLOT_COLUMNS)

        def write_group(name: str, scores):
            if not scores:
                return
            st = boxplot_stats(scores)
            writer.writerow(
                [name, _fmt(st.median), _fmt(st.q1), _fmt(st.q3),
                 _fmt(st.whisker_low), _fmt(st.whisker_high), len(st.outliers)]
            )

        for res in results:
            for group, scores in _clean_score_groups(res).items():
                write_group(f"{res.detector_name}|{group}", scores)
            for outcome in res.outcomes:
                p1, p2 = _grid_params(outcome)
                tag = f"{outcome.attack}@{p1}" + (f",{p2}" if p2 else "")
                write_group(f"{res.detector_name}|{tag}", outcome.report.per_snippet_scores)

    for res in results:
        per_file_path = out_dir / f"per_file_{res.detector_name}.csv"
        with open(per_file_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["file", "true_label", "predicted", "vote_fraction", "mean_score"])
            for r in res.clean.per_file:
                writer.writerow(
                    [Path(r.path).name, r.true_label.value, r.predicted.value,
                     _fmt(r.vote_fraction), _fmt(r.mean_score)]
                )

    manifest_path = out_dir / "run_manifest.json"
    manifest = {
        "package_version": __version__,
        "numpy_version": np.__version__,
        "conventions": {
            "tpr_positive_label": "normal",
            "vote_tie_label": "pathol",
            "corpus_load_peak": 0.95,
        },
        "run": run_meta,
        "results": [
            {
                "detector": res.detector_name,
                "feature": res.feature,
                "preset": res.preset,
                "clean_tpr": res.clean.tpr,
                "clean_file_accuracy": res.clean.file_accuracy,
                "clean_snippet_accuracy": res.clean.snippet_accuracy,
                "outcomes": [
                    {
                        "attack": o.attack,
                        "params": o.params,
                        "scenario": o.scenario.value,
                        "attacked_tpr": o.report.tpr,
                        "mean_linf": o.mean_linf,
                        "max_linf": o.max_linf,
                        "linf_rel_range": o.linf_rel_range,
                    }
                    for o in res.outcomes
                ],
            }
            for res in results
        ],
    }
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return {"metrics": metrics_path, "boxplots": box_path, "manifest": manifest_path}
