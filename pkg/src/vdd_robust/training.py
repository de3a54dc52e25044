"""Detector training: feature pipelines, protocol runs, k-fold selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .cnn import TrainConfig, embed_batch, train_cnn
from .corpus import CorpusManifest, ManifestEntry, load_clip
from .detector import CLASS_ORDER, Detector
from .evaluation import SplitSpec, evaluate, split_dataset
from .features import FeatureKind, FeatureParams, Standardizer, extract
from .segmentation import Label, preset, segment
from .svm import train_svm_linear, train_svm_rbf

CLASSIFIER_KINDS = ("cnn", "cnn-svm-linear", "cnn-svm-rbf")


@dataclass(frozen=True)
class DetectorConfig:
    feature: str = "mel"  # "mel" | "mfcc"
    preset: str = "cnn"  # snippet preset name
    classifier: str = "cnn"
    feature_params: FeatureParams = field(default_factory=FeatureParams)
    train: TrainConfig = field(default_factory=TrainConfig)
    svm_c: float = 1.0
    svm_gamma: float | None = None
    conv_channels: tuple[int, ...] = (8, 16)
    kernel_size: int = 3
    hidden_units: tuple[int, ...] = (64,)

    def __post_init__(self):
        FeatureKind(self.feature)
        preset(self.preset)
        if self.classifier not in CLASSIFIER_KINDS:
            raise ValueError(
                f"unknown classifier {self.classifier!r}; valid: {CLASSIFIER_KINDS}"
            )

    @property
    def name(self) -> str:
        return f"{self.feature}-{self.preset}-{self.classifier}"

    def to_dict(self) -> dict:
        return {
            "feature": self.feature,
            "preset": self.preset,
            "classifier": self.classifier,
            "feature_params": self.feature_params.to_dict(),
            "train": self.train.to_dict(),
            "svm_c": self.svm_c,
            "svm_gamma": self.svm_gamma,
            "conv_channels": list(self.conv_channels),
            "kernel_size": self.kernel_size,
            "hidden_units": list(self.hidden_units),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "DetectorConfig":
        d = dict(d)
        if "feature_params" in d:
            d["feature_params"] = FeatureParams.from_dict(d["feature_params"])
        if "train" in d:
            d["train"] = TrainConfig.from_dict(d["train"])
        for key in ("conv_channels", "hidden_units"):
            if key in d:
                d[key] = tuple(d[key])
        return cls(**d)


def snippet_features(
    entries: list[ManifestEntry], config: DetectorConfig
) -> tuple[list[np.ndarray], np.ndarray]:
    """Raw (unstandardized) feature matrices for every snippet, plus labels."""
    spec = preset(config.preset)
    kind = FeatureKind(config.feature)
    maps: list[np.ndarray] = []
    labels: list[int] = []
    for entry in entries:
        for snippet in segment(load_clip(entry), spec):
            maps.append(extract(snippet, kind, config.feature_params).values)
            labels.append(CLASS_ORDER.index(entry.label))
    return maps, np.asarray(labels, dtype=np.int64)


def _tensors(maps: list[np.ndarray], standardizer: Standardizer | None) -> np.ndarray:
    if standardizer is not None:
        maps = [standardizer.apply(m) for m in maps]
    return np.stack(maps)[:, None, :, :]


def fit_detector(
    train_entries: list[ManifestEntry],
    config: DetectorConfig,
    val_entries: list[ManifestEntry] | None = None,
    history: list | None = None,
) -> Detector:
    """Train one detector on the given files (optionally with validation)."""
    if not train_entries:
        raise ValueError("no training files")
    kind = FeatureKind(config.feature)
    train_maps, train_y = snippet_features(train_entries, config)

    standardizer = None
    if kind is FeatureKind.MFCC:
        standardizer = Standardizer.fit(train_maps)
    x_train = _tensors(train_maps, standardizer)

    validation = None
    if val_entries:
        val_maps, val_y = snippet_features(val_entries, config)
        validation = (_tensors(val_maps, standardizer), val_y)

    cnn = train_cnn(
        (x_train, train_y),
        config.train,
        validation=validation,
        conv_channels=config.conv_channels,
        kernel_size=config.kernel_size,
        hidden_units=config.hidden_units,
        history=history,
    )

    head = None
    if config.classifier != "cnn":
        emb = embed_batch(cnn, x_train)
        # +1 = pathological, matching the decision >= 0 -> PATHOL convention
        y_pm = np.where(train_y == CLASS_ORDER.index(Label.PATHOL), 1.0, -1.0)
        if config.classifier == "cnn-svm-linear":
            head = train_svm_linear(emb, y_pm, c=config.svm_c, seed=config.train.seed)
        else:
            head = train_svm_rbf(
                emb, y_pm, c=config.svm_c, gamma=config.svm_gamma, seed=config.train.seed
            )

    return Detector(
        cnn=cnn,
        head=head,
        classifier_kind=config.classifier,
        feature_kind=kind,
        feature_params=config.feature_params,
        snippet_spec=preset(config.preset),
        preset_name=config.preset,
        standardizer=standardizer,
        train_config=config.train,
    )


@dataclass
class TrainResult:
    detector: Detector
    history: list
    split_record: dict  # split name -> list of file paths
    val_report: object | None
    kfold_table: list | None = None


def train_detector(
    manifest: CorpusManifest,
    config: DetectorConfig,
    split_spec: SplitSpec | None = None,
    candidates: list[DetectorConfig] | None = None,
    k: int = 5,
) -> TrainResult:
    """Full protocol: split, optionally select among candidates by k-fold
    cross-validation on train+val, then train the final detector."""
    split_spec = split_spec or SplitSpec(seed=config.train.seed)
    train_m, val_m, test_m = split_dataset(manifest, split_spec)
    split_record = {
        name: [str(e.path) for e in part.entries]
        for name, part in zip(("train", "val", "test"), (train_m, val_m, test_m))
    }

    kfold_table = None
    history: list = []
    if candidates:
        selection = CorpusManifest(train_m.entries + val_m.entries)
        if len(candidates) == 1:
            config = candidates[0]
        else:
            config, kfold_table = kfold_select(selection, candidates, k=k)
        detector = fit_detector(selection.entries, config, history=history)
    else:
        detector = fit_detector(train_m.entries, config, val_m.entries, history=history)

    val_report = evaluate(detector, val_m.entries) if val_m.entries else None
    return TrainResult(detector, history, split_record, val_report, kfold_table)


def _stratified_folds(manifest: CorpusManifest, k: int, seed: int) -> list[list[ManifestEntry]]:
    """Disjoint k-way cover, round-robin per class after a seeded shuffle."""
    rng = np.random.default_rng(seed)
    folds: list[list[ManifestEntry]] = [[] for _ in range(k)]
    for label in (Label.NORMAL, Label.PATHOL):
        entries = manifest.by_label(label)
        if len(entries) < k:
            raise ValueError(f"class {label.value!r} has fewer than k={k} files")
        for i, idx in enumerate(rng.permutation(len(entries))):
            folds[i % k].append(entries[idx])
    return folds


def kfold_select(
    manifest: CorpusManifest,
    candidates: list[DetectorConfig],
    k: int = 5,
) -> tuple[DetectorConfig, list]:
    """Rank candidates by mean held-fold file accuracy; first best wins."""
    if not candidates:
        raise ValueError("no candidate configs")
    folds = _stratified_folds(manifest, k, seed=candidates[0].train.seed)
    table = []
    means = []
    for idx, cand in enumerate(candidates):
        accs = []
        for held in range(k):
            train_entries = [e for f, fold in enumerate(folds) if f != held for e in fold]
            detector = fit_detector(train_entries, cand)
            report = evaluate(detector, folds[held])
            accs.append(report.file_accuracy)
        mean_acc = float(np.mean(accs))
        means.append(mean_acc)
        table.append({"candidate": idx, "name": cand.name, "fold_accuracy": accs,
                      "mean_accuracy": mean_acc})
    best = int(np.argmax(means))  # ties resolve to the lower index
    return candidates[best], table


def quick_config(feature: str, preset_name: str, classifier: str = "cnn",
                 epochs: int = 8, seed: int = 0, **kwargs) -> DetectorConfig:
    """Convenience constructor used by tests and the CLI defaults."""
    return DetectorConfig(
        feature=feature,
        preset=preset_name,
        classifier=classifier,
        train=TrainConfig(epochs=epochs, seed=seed),
        **kwargs,
    )
