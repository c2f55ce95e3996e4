"""manl: two-species annihilating reflected-diffusion simulator and solvers."""

from .geometry import (Box, DomainPair, SpeciesTag, fold_reflect,
                       in_interaction_zone, interface_dist_sq, mirror_point)
from .spectral import (DualVector, EigenMode, Grid, KernelConfig, KernelMode,
                       eigen_eval, h_norm, kernel_eval, kernel_eval_1d,
                       surface_op, weyl_count)
from .annihilation import (AnnihilationKernel, CalibrationResult, calibrate_kappa,
                           ell_eval, minkowski_ratio, pair_kernel_integral,
                           unit_ball_volume)
from .particles import (EnsembleResult, ObservablePair, SimConfig, bg_residual,
                        candidate_pairs, corr_estimate, corr_estimate_two_time,
                        distinct_product_sum, distinct_product_sum_brute,
                        falling_factorial, fluctuation_field, init_system,
                        load_snapshot, martingale_path, observe, run_ensemble,
                        save_snapshot, set_threads, step)
from .solvers import (BACKWARD_DUHAMEL_PREFACTOR, DensityMu, DiracMu, FieldPair,
                      PicardDiagnostics, SolverConfig, act_U, duhamel_path,
                      duhamel_path_backward, effective_horizon, ell_node_matrix,
                      ell_row_matrix, hydro_mass_balance, mart_cov, ou_cov,
                      q_form, solve_Q, solve_QN, solve_fN, solve_hydro)
from .hierarchy import (ExpansionTerms, HierarchyConfig, HierarchySolution,
                        compare_expansion, expansion_terms, solve_hierarchy)

__version__ = "0.1.0"
