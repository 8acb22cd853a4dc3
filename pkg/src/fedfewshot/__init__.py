"""Federated few-shot audio classification with prototypical networks."""

from .dsp import AudioClip, MfccConfig, MfccMatrix, extract_mfcc
from .estimators import FederatedPrototypicalClassifier, MfccTransformer, PrototypicalNetworkClassifier
from .federated import Federation, FederationConfig, aggregate
from .fewshot import EpisodeSpec, LabeledPool, LabelSpace, evaluate_novel, run_local_training, sample_episode
from .params import ParameterSet

__version__ = "0.1.0"

__all__ = [
    "AudioClip",
    "EpisodeSpec",
    "FederatedPrototypicalClassifier",
    "Federation",
    "FederationConfig",
    "LabelSpace",
    "LabeledPool",
    "MfccConfig",
    "MfccMatrix",
    "MfccTransformer",
    "ParameterSet",
    "PrototypicalNetworkClassifier",
    "aggregate",
    "evaluate_novel",
    "extract_mfcc",
    "run_local_training",
    "sample_episode",
]
