"""Non-myopic Bayesian optimisation via multi-step lookahead expected loss.

The acquisition values a candidate by the expected best objective value
over the whole remaining evaluation sequence: future sites are predicted
greedily with local penalisation, and the expected minimum of their joint
GP posterior is marginalised with Expectation Propagation.  Includes the
myopic expected loss, MPI and GP-LCB baselines, a deterministic DIRECT
optimiser, a synthetic benchmark suite and a gap-measure experiment
harness (``bench`` CLI).
"""

from .acquisitions import expected_loss_1, expected_loss_1_grad, gp_lcb, mpi
from .ep_polyhedra import (
    EpOptions,
    EpResult,
    HalfSpace,
    PolyhedralRegion,
    ep_region_moments,
    expected_min,
    expected_min_full,
    truncated_moments_1d,
)
from .glasses_loss import GlassesConfig, RunHistory, glasses_acquisition, run, select_next
from .global_optimizers import BoxDomain, OptimizeReport, direct_minimize, lbfgsb_minimize
from .gp_surrogate import Dataset, GpModel, KernelSpec, Prediction, fit, kernel_eval, predict
from .steps_ahead import (
    PenalizerParams,
    StepsPlan,
    estimate_lipschitz,
    local_penalizer,
    predict_steps,
)
from .test_functions import TestFunction, evaluate, lookup, registry

__version__ = "0.1.0"

__all__ = [
    "BoxDomain",
    "Dataset",
    "EpOptions",
    "EpResult",
    "GlassesConfig",
    "GpModel",
    "HalfSpace",
    "KernelSpec",
    "OptimizeReport",
    "PenalizerParams",
    "PolyhedralRegion",
    "Prediction",
    "RunHistory",
    "StepsPlan",
    "TestFunction",
    "direct_minimize",
    "ep_region_moments",
    "estimate_lipschitz",
    "evaluate",
    "expected_loss_1",
    "expected_loss_1_grad",
    "expected_min",
    "expected_min_full",
    "fit",
    "glasses_acquisition",
    "gp_lcb",
    "kernel_eval",
    "lbfgsb_minimize",
    "local_penalizer",
    "lookup",
    "mpi",
    "predict",
    "predict_steps",
    "registry",
    "run",
    "select_next",
    "truncated_moments_1d",
]
