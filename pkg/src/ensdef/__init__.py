"""Cross-layer ensemble defense toolkit.

Train small classifiers and denoising autoencoders, craft gradient-sign
adversarial examples, rank ensemble teams by kappa diversity, and run
denoising / verification / cross-layer defense pipelines with the
standard defense metrics.
"""

from .attacks import (
    AdversarialSet,
    AttackResult,
    AttackSpec,
    Distortion,
    attack_batch,
    bim,
    distortion,
    evaluate_attack,
    fgsm,
    select_target_class,
)
from .corruption import NoiseSpec, corrupt, corrupt_batch
from .data import Dataset, generate_synthetic, load_idx, load_prediction_matrix
from .defense import (
    DefenseOutcome,
    DefensePipeline,
    TeamSource,
    defend_many_to_many,
    defend_one_to_many,
    resolve_outcome,
    run_defense_batch,
)
from .denoising import (
    Denoiser,
    DenoisingDecision,
    denoise,
    denoise_batch,
    denoising_ensemble_decide,
    load_denoiser,
    save_denoiser,
    train_denoiser,
)
from .diversity import (
    ContingencyTable,
    KappaRankedList,
    TeamStrategy,
    all_size_eligible_teams,
    build_contingency,
    enumerate_teams,
    kappa,
    pairwise_kappa_matrix,
    select_team,
)
from .estimators import DenoisingAutoencoder, NetworkClassifier
from .metrics import DefenseMetrics, defense_metrics, transferability_matrix
from .nncore import (
    LayerSpec,
    LossSpec,
    Network,
    TrainConfig,
    forward,
    init_network,
    load_network,
    loss_and_input_gradient,
    predict_labels,
    predict_proba,
    save_network,
    train,
)
from .voting import VerifierPool, VotedPrediction, ensemble_boost, majority_vote, soft_vote

__version__ = "0.1.0"
