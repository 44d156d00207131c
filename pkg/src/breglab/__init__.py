"""breglab: a desk-scale laboratory for one-step diffusion distillation
driven by Bregman density-ratio matching.

The package trains a one-step generator against an analytic Gaussian
teacher by pushing the noisy density ratio toward 1 under a family of
convex weightings, and ships an independent oracle suite (quadrature +
finite differences) that checks every identity the training loop relies
on before any learning happens.
"""
from .analytic import (AffineGenerator, GaussianMixture, RatioField,
                       analytic_ratio, gaussian, gm_marginal, gm_sample,
                       gm_score, two_mode_teacher)
from .bregman import (ConvexFunction, custom_instance, divergence,
                      divergence_to_one, make_instance, mixture_expect,
                      parse_instance)
from .classifier import fit_classifier, init_classifier, ratio_from_classifier
from .config import (ExperimentConfig, RunManifest, build_config, config_hash,
                     load_config)
from .diffusion import Schedule, perturb, sample_time
from .distill import (DistillConfig, MlpGenerator, TrainRecord, distill_init,
                      distill_round, distill_run, generator_gradient,
                      load_generator, save_generator, vsd_gradient)
from .errors import (CoverageError, DegenerateGeneratorError, NumericError,
                     ShapeError)
from .metrics import (SampleSet, as_sample_set, mmd_rbf, mode_coverage,
                      sliced_wasserstein2)
from .quadrature import QuadratureRule, gauss_expect, hermite_rule, tensor_grid
from .scores import (ScoreProvider, affine_score, analytic_score, dsm_loss,
                     fit_score, net_score, score_rms_error)
from .verify import OracleReport, fd_divergence_gradient, run_all

__version__ = "0.1.0"
