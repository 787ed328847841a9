"""prosokit: prosody/lexical cue isolation and turn-taking evaluation toolkit."""

__version__ = "0.1.0"

from .audio import Waveform, read_wav, write_wav
from .dialog import (
    FutureActivityLabels,
    MidTurnPoint,
    TurnEvent,
    VadTrack,
    WordToken,
    extract_events,
    future_activity_labels,
    sample_midturn,
    words_to_vad,
)
from .evaluate import (
    EvalReport,
    ProbabilityStream,
    ScoredEvent,
    build_report,
    classification_metrics,
    fold_ttest,
    score_event,
    tune_threshold,
    wer,
)
from .manipulate import (
    ConditionSpec,
    MixPlan,
    apply_condition,
    condition_from_name,
    flatten_intensity,
    flatten_pitch,
    make_babble,
    mix_at_snr,
    pink_noise,
    plan_mixed_training,
    prosody_matched_noise,
    snr_grid,
)
from .prosody_model import (
    LogisticModel,
    ProsodyFeatures,
    extract_features,
    predict,
    synth_cue_corpus,
    train_logistic,
)
from .vocoder import (
    AperiodicityFrames,
    F0Track,
    SpectralFrames,
    VocoderConfig,
    VocoderFrames,
    analyze,
    estimate_aperiodicity,
    estimate_envelope,
    estimate_f0,
    synthesize,
)

__all__ = [
    "__version__",
    "Waveform", "read_wav", "write_wav",
    "VocoderConfig", "VocoderFrames", "F0Track", "SpectralFrames",
    "AperiodicityFrames", "analyze", "estimate_f0", "estimate_envelope",
    "estimate_aperiodicity", "synthesize",
    "ConditionSpec", "MixPlan", "condition_from_name", "apply_condition",
    "flatten_pitch", "flatten_intensity", "pink_noise", "prosody_matched_noise",
    "make_babble", "mix_at_snr", "plan_mixed_training", "snr_grid",
    "WordToken", "VadTrack", "TurnEvent", "MidTurnPoint", "FutureActivityLabels",
    "words_to_vad", "extract_events", "sample_midturn", "future_activity_labels",
    "ProbabilityStream", "ScoredEvent", "EvalReport", "score_event",
    "tune_threshold", "classification_metrics", "wer", "fold_ttest", "build_report",
    "ProsodyFeatures", "LogisticModel", "extract_features", "train_logistic",
    "predict", "synth_cue_corpus",
]
