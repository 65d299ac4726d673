"""Circular suprasegmental hidden Markov models for speaker verification.

A library and batch CLI covering the full pipeline: MFCC+delta and prosodic
feature extraction, training of circular acoustic chains of order 1 to 3 with
a prosodic suprasegmental layer on top, log-likelihood-ratio verification
against an imposter background, threshold adaptation, and EER/DET evaluation,
plus synthetic corpus generation and a two-sample significance test.
"""

from .errors import (
    CsphmmError,
    InvalidInputError,
    ManifestError,
    NoValidPathError,
    NumericFailureError,
    TrainingDataEmptyError,
    UnknownSpeakerError,
)
from .features import (
    AudioBuffer,
    FeatureSequence,
    FrameSpec,
    MfccSpec,
    ProsodicVector,
    ProsodyTrack,
    compute_deltas,
    extract_mfcc,
    extract_prosody,
    pitch_track,
    preemphasize,
    read_features,
    read_wav,
    write_features,
    write_wav,
)
from .hmm import (
    Alignment,
    EmissionModel,
    FirstOrderExpansion,
    HmmModel,
    InitialLaws,
    TopologyMask,
    TrainConfig,
    TransitionTensor,
    expand_to_first_order,
    forward_log_likelihood,
    init_model,
    joint_log_prob,
    lift_order,
    normalized_log_likelihood,
    random_model,
    sample_sequence,
    sequence_log_prob,
    train_baum_welch,
    train_order_pipeline,
    viterbi_align,
)
from .serialization import load_model, save_model
from .stats import (
    SampleSummary,
    pooled_sd,
    significance_decision,
    t_statistic,
    ttest_report,
)
from .suprasegmental import (
    FusedScore,
    SegmentMap,
    SuprasegmentalModel,
    SuprasegmentalTopology,
    fused_log_likelihood,
    segment_utterance,
    train_suprasegmental,
)
from .verification import (
    DetCurve,
    ModelPair,
    SpeakerModelSet,
    Threshold,
    ThresholdPolicy,
    Trial,
    TrialScore,
    adapt_threshold,
    background_log_likelihood,
    decide,
    evaluate,
    llr_score,
    run_protocol,
)

__version__ = "0.1.0"
