"""Decision-dependent, residual-based Wasserstein DRO for two-stage linear recourse.

Typical flow::

    setup = generate_instance(rng)                 # pricing instance + ground truth
    data = sample_dataset(setup.truth, 100, rng)
    model = fit_model("kernel", data)
    sol, state = run_benders(setup.instance, model, x, xi, residuals(model, data).residuals)
"""

from .ambiguity import (DiscreteDistribution, RadiusSpec, empirical_residual_distribution,
                        radius_by_loocv, theoretical_radius, wasserstein_distance)
from .benders import BendersOptions, BendersState, generate_cuts, run_benders
from .core import (AffineMapInZ, Dataset, RiskSpec, SupportSet, TwoStageInstance, augment_cvar,
                   evaluate_affine, project)
from .lp import LinearProgram, LpSolution, LpStatus, solve_lp
from .master import MasterProblem, theta_lower_bounds
from .pricing import GroundTruth, generate_instance, pricing_instance, sample_dataset
from .recourse import RecourseEvaluator, solve_recourse, solve_sp
from .reformulation import build_reformulation
from .regression import (PiecewiseAffineEmbedding, ResidualSet, embed, fit_kernel, fit_model, fit_ols,
                         fit_relu_nn, predict, residuals)

__version__ = "0.1.0"
