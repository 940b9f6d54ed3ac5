"""Reduced basis greedy sampling strategies for the nine-parameter thermal block."""

__version__ = "0.1.0"

from .fem import (AffineModel, Mesh, TruthSolution, assemble_affine_fom, build_mesh, output_functional,
                  thermal_block, truth_solve, x_inner, x_norm)
from .rb import (ErrorEstimate, RBSolution, RBSpace, RedundantSnapshot, augment_basis, coercivity_lb,
                 error_estimate, lift, rb_output, rb_solve, true_error)
from .greedy import (STRATEGIES, GreedyConfig, GreedyResult, GreedyTrace, TrainingSet, ae_cg,
                     classical_greedy, h_ae_cg, h_tsd_cg, run_strategy, sample_training_set,
                     smm_build_sts, sts_cg, tsd_cg, tsd_partition)
from .bench import ExperimentConfig, ExperimentReport, emit_reports, evaluate_test_error, run_experiment
