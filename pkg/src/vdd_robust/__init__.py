"""Voice disorder detector robustness toolkit.

Builds snippet-level detectors (mel-spectrogram / MFCC front ends, a small
CNN with explicit gradients, optional SVM heads) on a synthetic sustained
vowel corpus, attacks them with FGSM/PGD and with tone/pitch manipulations,
and reports the resulting true-positive-rate degradation.
"""

__version__ = "0.1.0"

from .audio import AudioClip, mix, peak_normalize, read_wav, resample, synth_sine, write_wav  # noqa: E402,F401
from .attacks import Fgsm, Pgd, PitchShift, Tone, fgsm, pgd, perturbation_linf, pitch_shift, tone_attack  # noqa: E402,F401
from .cnn import CnnModel, TrainConfig, cnn_backward, cnn_forward, extract_embedding, train_cnn  # noqa: E402,F401
from .corpus import CorpusManifest, VoiceParams, gen_corpus, load_manifest, synth_voice  # noqa: E402,F401
from .detector import Detector, load_model, save_model  # noqa: E402,F401
from .evaluation import (  # noqa: E402,F401
    BoxplotStats,
    EvalReport,
    Scenario,
    SplitSpec,
    boxplot_stats,
    evaluate,
    export_report,
    run_attack_experiment,
    split_dataset,
)
from .features import FeatureKind, FeatureMap, FeatureParams, mel_spectrogram, mfcc, stft_power  # noqa: E402,F401
from .segmentation import Label, SnippetSpec, majority_vote, preset, segment  # noqa: E402,F401
from .svm import SvmModel, svm_decision, svm_predict, train_svm_linear, train_svm_rbf  # noqa: E402,F401
from .training import DetectorConfig, fit_detector, kfold_select, train_detector  # noqa: E402,F401
