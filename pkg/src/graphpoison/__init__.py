"""Structure-poisoning attacks and lightweight defenses for GCN node
classification, built around meta-gradients through unrolled training."""

from .graph import (GraphBundle, SplitConfig, SbmConfig, GraphError,
                    load_bundle, save_bundle, largest_connected_component,
                    random_split, jaccard_similarity, jaccard_matrix,
                    normalize_adjacency, generate_sbm)
from .autodiff import Tape, Var, AutodiffError, grad_symmetrize
from .models import (GcnModel, SurrogateModel, TrainConfig, TrainResult,
                     gcn_forward, surrogate_forward, train, predict_labels,
                     accuracy, inner_train_differentiable)
from .clustering import (ClusterConfig, rbf_affinity, spectral_embed, kmeans,
                         calinski_harabasz, pseudo_labels, cluster_features)
from .attacks import (AttackBudget, Constraint, AttackPlan, BbgaConfig, Flip,
                      AttackError, attack_random, attack_dice,
                      attack_mettack_bb, attack_bbga, bbga_partition,
                      bbga_fold_scores, bbga_aggregate, score_sign)
from .defense import (jaccard_preprocess, flip_train, evaluate_poisoned,
                      ExperimentReport)
from .analysis import (LocalPtbReport, local_perturbation_rates,
                       compare_attacks, relative_gap, format_gap)
from .experiment import run_experiment, load_config, ConfigError, PRESETS

__version__ = "0.1.0"
