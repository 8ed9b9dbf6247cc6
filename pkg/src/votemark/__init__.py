"""votemark: fragile fingerprinting and black-box integrity verification for
majority-voting classifier ensembles.

Workflow: train sub-models into an ensemble, mimic realistic attacks on each
sub-model, score a large candidate pool for sensitivity to those attacks,
keep the candidates that react strongly and are uniquely classified, record
the ensemble's labels on them as the fingerprint, and later re-query any
deployment of the ensemble to detect tampering - without ever modifying the
protected model.
"""

from .attacks import AttackSpec, AttackSuite, fine_tune, generate_attack_suite, prune_magnitude, realize_attack
from .candidates import CandidateSet, generate_random_candidates, load_unrelated_candidates
from .config import ExperimentConfig, default_config, load_config
from .data import LabeledDataset, SPLITS, load_idx_dataset, make_blobs
from .ensemble import EnsembleModel, VoteOutcome, ensemble_predict, load_ensemble, save_ensemble
from .models import (
    Architecture,
    SubModel,
    TrainConfig,
    evaluate_accuracy,
    fit,
    load_model,
    loss_and_grad,
    save_model,
    train,
)
from .pipeline import PipelineResult, run_pipeline
from .sensitivity import (
    SelectionConfig,
    SensitivityProfile,
    bit_vector,
    select_sensitive,
    sensitivity_score,
)
from .verify import (
    Fingerprint,
    OracleFailure,
    TieError,
    VerificationReport,
    attack_sweep,
    ensemble_oracle,
    load_fingerprint,
    record_fingerprint,
    save_fingerprint,
    verify_integrity,
)

__version__ = "0.1.0"

__all__ = [
    "Architecture",
    "AttackSpec",
    "AttackSuite",
    "CandidateSet",
    "EnsembleModel",
    "ExperimentConfig",
    "Fingerprint",
    "LabeledDataset",
    "OracleFailure",
    "PipelineResult",
    "SPLITS",
    "SelectionConfig",
    "SensitivityProfile",
    "SubModel",
    "TieError",
    "TrainConfig",
    "VerificationReport",
    "VoteOutcome",
    "attack_sweep",
    "bit_vector",
    "default_config",
    "ensemble_oracle",
    "ensemble_predict",
    "evaluate_accuracy",
    "fine_tune",
    "fit",
    "generate_attack_suite",
    "generate_random_candidates",
    "load_config",
    "load_ensemble",
    "load_fingerprint",
    "load_idx_dataset",
    "load_model",
    "load_unrelated_candidates",
    "loss_and_grad",
    "make_blobs",
    "prune_magnitude",
    "realize_attack",
    "record_fingerprint",
    "run_pipeline",
    "save_ensemble",
    "save_fingerprint",
    "save_model",
    "select_sensitive",
    "sensitivity_score",
    "train",
    "verify_integrity",
]
