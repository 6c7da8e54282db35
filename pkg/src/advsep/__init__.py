"""Linear separability of adversarial noises of two-layer ReLU networks."""

from .attack import AttackSpec, NoiseSet, adversarial_examples, generate_noise_set, write_noise_csv
from .estimators import AdversarialNoise, PerceptronCertifier, TwoLayerReLUClassifier
from .exceptions import (ConfigError, DimensionMismatchError, ExperimentError, IngestError, NotSeparableError,
                         TrainingDivergedError)
from .model import LabeledDataset, NetworkParams, forward, init_network, two_cluster_dataset
from .numerics import RNG_ALGORITHM, make_rng
from .separability import (LinearProbe, eval_probe, margins, perceptron_decide, projected_witness,
                           theoretical_witness, train_probe)
from .training import TrainConfig, gd_train, ntk_ball_perturbation

__version__ = "0.1.0"

__all__ = [
    "AdversarialNoise",
    "AttackSpec",
    "ConfigError",
    "DimensionMismatchError",
    "ExperimentError",
    "IngestError",
    "LabeledDataset",
    "LinearProbe",
    "NetworkParams",
    "NoiseSet",
    "NotSeparableError",
    "PerceptronCertifier",
    "RNG_ALGORITHM",
    "TrainConfig",
    "TrainingDivergedError",
    "TwoLayerReLUClassifier",
    "adversarial_examples",
    "eval_probe",
    "forward",
    "gd_train",
    "generate_noise_set",
    "init_network",
    "make_rng",
    "margins",
    "ntk_ball_perturbation",
    "perceptron_decide",
    "projected_witness",
    "theoretical_witness",
    "train_probe",
    "two_cluster_dataset",
    "write_noise_csv",
]
