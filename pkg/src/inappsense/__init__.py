"""In-app activity classification from encrypted Wi-Fi frame metadata.

The pipeline: parse a frame log, keep error-free data frames, cut each
labeled stream into fixed time windows, summarise every window with 48
length/timing statistics, classify with a tanh MLP, and reject inputs
whose top softmax probability falls below a threshold as unknown.
"""
from .dnn import DEFAULT_THRESHOLD, ModelArtifact, ModelConfig, TrainReport, predict_proba, train
from .estimators import ActivityMLPClassifier, OpenSetActivityClassifier
from .evaluation import (
    accuracy_known,
    accuracy_unknown,
    evaluate_open_set,
    leave_one_app_out,
    misclassification_matrix,
)
from .features import (
    FeatureStandardizer,
    FeatureTable,
    SegmentFeaturizer,
    apply_scaler,
    featurize,
    featurize_segments,
    fit_scaler,
    interarrival,
    read_feature_csv,
    stats12,
    write_feature_csv,
)
from .openset import classify, classify_batch, confidence_histogram, sweep_threshold
from .pipeline import extract_features
from .records import (
    ActivityLabel,
    CaptureRecord,
    filter_frames,
    parse_frame_log,
    read_frame_log,
    write_frame_log,
)
from .segment import FlowSegment, segment_by_window, segment_streams
from .synth import ActivityProfile, generate_capture, generate_dataset, paperlike_profiles

__version__ = "0.1.0"
