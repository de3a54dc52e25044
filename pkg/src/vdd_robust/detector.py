"""Detector bundle: CNN (plus optional SVM head) with its feature recipe.

A persisted model embeds everything needed to reproduce inference: feature
kind and parameters, snippet preset, the MFCC standardizer and the training
seed. Snippet scores are oriented so that larger means "more pathological":
softmax probability of the pathological class for the plain CNN, the signed
SVM decision value for hybrid heads.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass

import numpy as np

from .audio import AudioClip
from .cnn import CnnModel, TrainConfig, embed_batch, logits_batch, softmax
from .errors import VddError
from .features import FeatureKind, FeatureMap, FeatureParams, Standardizer, extract
from .segmentation import Label, SnippetSpec
from .svm import SvmModel, svm_decision_batch

_MAGIC = b"VDDM"
_FORMAT_VERSION = 1

CLASS_ORDER = (Label.NORMAL, Label.PATHOL)  # CNN logit index 0 / 1
PATHOL_INDEX = 1


class CorruptModelError(VddError):
    """Model file is truncated or not a model container at all."""


class ModelVersionError(VddError):
    """Model container version is not supported by this build."""


class FeatureKindMismatchError(VddError):
    """Input feature kind differs from the kind the model was trained on."""


@dataclass
class Detector:
    cnn: CnnModel
    head: SvmModel | None
    classifier_kind: str  # "cnn" | "cnn-svm-linear" | "cnn-svm-rbf"
    feature_kind: FeatureKind
    feature_params: FeatureParams
    snippet_spec: SnippetSpec
    preset_name: str
    standardizer: Standardizer | None
    train_config: TrainConfig

    def value_range(self) -> tuple[float, float] | None:
        """Valid box for white-box attacks: [0,1] for mel maps, open for MFCC."""
        return (0.0, 1.0) if self.feature_kind is FeatureKind.MEL_SPEC else None

    def feature_map(self, snippet: AudioClip) -> FeatureMap:
        return extract(snippet, self.feature_kind, self.feature_params)

    def tensor(self, fmap: FeatureMap) -> np.ndarray:
        if fmap.kind is not self.feature_kind:
            raise FeatureKindMismatchError(
                f"model was trained on {self.feature_kind.value!r} features, "
                f"got {fmap.kind.value!r}"
            )
        values = fmap.values
        if self.standardizer is not None:
            values = self.standardizer.apply(values)
        return values[None, :, :]

    def snippet_tensor(self, snippet: AudioClip) -> np.ndarray:
        return self.tensor(self.feature_map(snippet))

    def predict_tensors(self, x: np.ndarray) -> tuple[list[Label], np.ndarray]:
        """Labels and pathological-ness scores for a stack of input maps."""
        if self.head is None:
            probs = softmax(logits_batch(self.cnn, x))
            scores = probs[:, PATHOL_INDEX]
            labels = [
                Label.PATHOL if s >= 0.5 else Label.NORMAL for s in scores
            ]
        else:
            emb = embed_batch(self.cnn, x)
            scores = svm_decision_batch(self.head, emb)
            labels = [Label.PATHOL if s >= 0.0 else Label.NORMAL for s in scores]
        return labels, scores

    def predict_snippets(self, snippets: list[AudioClip]) -> tuple[list[Label], np.ndarray]:
        x = np.concatenate([self.snippet_tensor(s)[None] for s in snippets], axis=0)
        return self.predict_tensors(x)

    def describe(self) -> str:
        conv = " -> ".join(
            f"conv{w.shape[2]}x{w.shape[3]}({w.shape[1]}->{w.shape[0]})"
            for w in self.cnn.conv_weights
        )
        fc = " -> ".join(f"fc({w.shape[1]}->{w.shape[0]})" for w in self.cnn.fc_weights)
        lines = [
            f"classifier: {self.classifier_kind}",
            f"features:   {self.feature_kind.value} "
            f"(window {self.feature_params.window_ms} ms, hop {self.feature_params.hop_ms} ms, "
            f"{self.feature_params.n_mels} mels, {self.feature_params.n_mfcc} mfcc)",
            f"snippets:   preset {self.preset_name} "
            f"({self.snippet_spec.length_ms:.0f} ms / overlap {self.snippet_spec.overlap_ms:.0f} ms "
            f"@ {self.snippet_spec.rate_hz} Hz)",
            f"input:      {self.cnn.input_shape}",
            f"layers:     {conv} -> pool2x2 -> {fc}",
            f"parameters: {self.cnn.n_params()}",
            f"seed:       {self.train_config.seed}",
        ]
        if self.head is not None:
            extra = f"C={self.head.c}"
            if self.head.kind == "rbf":
                extra += f", gamma={self.head.gamma:.6g}, sv={len(self.head.dual_coefs)}"
            lines.insert(1, f"svm head:   {self.head.kind} ({extra})")
        return "\n".join(lines)


def _collect_arrays(det: Detector) -> dict[str, np.ndarray]:
    arrays: dict[str, np.ndarray] = {}
    for i, (w, b) in enumerate(zip(det.cnn.conv_weights, det.cnn.conv_biases)):
        arrays[f"conv{i}_w"] = w
        arrays[f"conv{i}_b"] = b
    for i, (w, b) in enumerate(zip(det.cnn.fc_weights, det.cnn.fc_biases)):
        arrays[f"fc{i}_w"] = w
        arrays[f"fc{i}_b"] = b
    if det.standardizer is not None:
        arrays["std_mean"] = det.standardizer.mean
        arrays["std_std"] = det.standardizer.std
    if det.head is not None:
        if det.head.kind == "linear":
            arrays["svm_w"] = det.head.weights
        else:
            arrays["svm_sv"] = det.head.support_vectors
            arrays["svm_dual"] = det.head.dual_coefs
    return arrays


def save_model(det: Detector, path) -> None:
    """Versioned binary container: magic, version, JSON header, raw float64."""
    arrays = _collect_arrays(det)
    meta = {
        "classifier_kind": det.classifier_kind,
        "feature_kind": det.feature_kind.value,
        "feature_params": det.feature_params.to_dict(),
        "snippet_spec": det.snippet_spec.to_dict(),
        "preset_name": det.preset_name,
        "train_config": det.train_config.to_dict(),
        "input_shape": list(det.cnn.input_shape),
        "n_conv": len(det.cnn.conv_weights),
        "n_fc": len(det.cnn.fc_weights),
        "has_standardizer": det.standardizer is not None,
        "svm": None
        if det.head is None
        else {
            "kind": det.head.kind,
            "c": det.head.c,
            "bias": det.head.bias,
            "gamma": det.head.gamma,
        },
        "arrays": [
            {"name": name, "shape": list(a.shape)} for name, a in arrays.items()
        ],
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<HQ", _FORMAT_VERSION, len(blob)))
        fh.write(blob)
        for a in arrays.values():
            fh.write(np.ascontiguousarray(a, dtype=np.float64).tobytes())


def load_model(path) -> Detector:
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 14 or raw[:4] != _MAGIC:
        raise CorruptModelError(f"{path}: not a detector model file")
    version, blob_len = struct.unpack_from("<HQ", raw, 4)
    if version != _FORMAT_VERSION:
        raise ModelVersionError(
            f"{path}: container version {version}, this build reads {_FORMAT_VERSION}"
        )
    header_end = 14 + blob_len
    if header_end > len(raw):
        raise CorruptModelError(f"{path}: truncated header")
    try:
        meta = json.loads(raw[14:header_end])
    except json.JSONDecodeError as exc:
        raise CorruptModelError(f"{path}: corrupt metadata ({exc})") from None

    arrays: dict[str, np.ndarray] = {}
    offset = header_end
    for spec in meta["arrays"]:
        count = int(np.prod(spec["shape"])) if spec["shape"] else 1
        nbytes = count * 8
        if offset + nbytes > len(raw):
            raise CorruptModelError(f"{path}: truncated array {spec['name']}")
        arrays[spec["name"]] = np.frombuffer(
            raw, dtype="<f8", count=count, offset=offset
        ).reshape(spec["shape"]).copy()
        offset += nbytes
    if offset != len(raw):
        raise CorruptModelError(f"{path}: trailing bytes after arrays")

    cnn = CnnModel(
        conv_weights=[arrays[f"conv{i}_w"] for i in range(meta["n_conv"])],
        conv_biases=[arrays[f"conv{i}_b"] for i in range(meta["n_conv"])],
        fc_weights=[arrays[f"fc{i}_w"] for i in range(meta["n_fc"])],
        fc_biases=[arrays[f"fc{i}_b"] for i in range(meta["n_fc"])],
        input_shape=tuple(meta["input_shape"]),
    )
    standardizer = None
    if meta["has_standardizer"]:
        standardizer = Standardizer(arrays["std_mean"], arrays["std_std"])
    head = None
    if meta["svm"] is not None:
        s = meta["svm"]
        if s["kind"] == "linear":
            head = SvmModel(kind="linear", c=s["c"], weights=arrays["svm_w"], bias=s["bias"])
        else:
            head = SvmModel(
                kind="rbf",
                c=s["c"],
                bias=s["bias"],
                gamma=s["gamma"],
                support_vectors=arrays["svm_sv"],
                dual_coefs=arrays["svm_dual"],
            )
    return Detector(
        cnn=cnn,
        head=head,
        classifier_kind=meta["classifier_kind"],
        feature_kind=FeatureKind(meta["feature_kind"]),
        feature_params=FeatureParams.from_dict(meta["feature_params"]),
        snippet_spec=SnippetSpec.from_dict(meta["snippet_spec"]),
        preset_name=meta["preset_name"],
        standardizer=standardizer,
        train_config=TrainConfig.from_dict(meta["train_config"]),
    )
