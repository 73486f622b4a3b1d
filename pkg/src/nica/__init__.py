"""Contrastive-learning nonlinear ICA at desk scale.

Synthetic generators with exactly invertible mixing, a from-scratch MLP
trainer for the additive contrastive regression function, k-NN mutual
information scoring with permutation matching, cross-derivative
identifiability diagnostics, and calculators for the finite-sample bounds.
"""

from .diagnostics import (BoundInputs, BoundReport, GammaReport,
                          alpha_bound, compute_bound_report,
                          cross_derivative_bound, cross_derivative_stencil,
                          gamma_report, gamma_via_inverse,
                          generalization_gap_bound,
                          jacobian_permutation_score, optimal_step,
                          rademacher_bound, rsc_constant)
from .genmodel import (FrameParams, GaussianScores, GenerativeSpec, MixingNet,
                       SampleBatch, invert_mix, make_contrastive_pairs,
                       make_mvcl_spec, make_tcl_spec, mix, sample_mvcl,
                       sample_tcl, variability_matrix)
from .harness import ExperimentConfig, ingest_eeg, run_sweep, render_report
from .metrics import (LinearClassifier, MiReport, classification_error,
                      classify, fit_linear_classifier, hungarian, mi_knn,
                      mi_report)
from .nn import (AdamState, MlpParams, MlpSpec, TrainingDivergedError,
                 adam_step, backward, forward, forward_batch, frobenius_norms,
                 init_adam, init_mlp)
from .train import (GclModel, TrainConfig, TrainResult, extract_features,
                    init_gcl_model, logistic_loss, regress, regress_batch,
                    train)

__version__ = "0.1.0"
