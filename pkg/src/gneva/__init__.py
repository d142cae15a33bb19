"""Goal-based motion prediction with a variational Normal-Wishart mixture.

The package models the spatial distribution of a target agent's long-term
goal as a mixture of bivariate Gaussians with conjugate Normal-Wishart
posteriors emitted by small attention encoders, samples goals from the
Student-t posterior predictive with non-maximum suppression, and completes
trajectories to the selected goals.
"""

from .autodiff import ParamTape, check_gradients
from .dataio import Scenario, SynthConfig, load_scenario, synth_generate, to_target_frame
from .distributions import (
    Gaussian2,
    NormalWishartParams,
    StudentTParams,
    WishartParams,
    posterior_predictive_params,
)
from .encoders import EncoderConfig, forward_spatial, init_spatial_params, init_trajectory_params
from .metrics import MetricReport, displacement_metrics
from .mixture import MixturePosterior, Responsibilities, elbo, predictive_log_density, z_posterior
from .sampling import NmsConfig, ScoredCandidate, circle_iou, generate_candidates, nms_select
from .trajectory import PredictedTrajectory, complete_trajectory, predict_topk
from .training import TrainConfig, train_spatial, train_trajectory

__version__ = "0.1.0"

__all__ = [
    "EncoderConfig",
    "Gaussian2",
    "MetricReport",
    "MixturePosterior",
    "NmsConfig",
    "NormalWishartParams",
    "ParamTape",
    "PredictedTrajectory",
    "Responsibilities",
    "Scenario",
    "ScoredCandidate",
    "StudentTParams",
    "SynthConfig",
    "TrainConfig",
    "WishartParams",
    "check_gradients",
    "circle_iou",
    "complete_trajectory",
    "displacement_metrics",
    "elbo",
    "forward_spatial",
    "generate_candidates",
    "init_spatial_params",
    "init_trajectory_params",
    "load_scenario",
    "nms_select",
    "posterior_predictive_params",
    "predict_topk",
    "predictive_log_density",
    "synth_generate",
    "to_target_frame",
    "train_spatial",
    "train_trajectory",
    "z_posterior",
]
