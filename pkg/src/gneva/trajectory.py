"""Trajectory completion to sampled goals and top-k prediction assembly."""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import autodiff as ad
from .autodiff import ParamTape, Var
from .dataio import RigidTransform, Scenario, vectorize
from .encoders import EncoderConfig, _mlp, forward_spatial
from .errors import ValidationError
from .sampling import NmsConfig, generate_candidates, nms_select, scene_region


def trajectory_forward(
    context_feature: Var, goal, params, cfg: EncoderConfig, horizon: int
) -> Var:
    """Waypoints from [context; goal] through two MLPs; endpoint pinned to goal."""
    leaves = params.leaves() if isinstance(params, ParamTape) else params
    goal = np.asarray(goal, dtype=float).reshape(2)
    feature = context_feature
    if feature.value.ndim == 1:
        feature = ad.reshape(feature, (1, -1))
    x = ad.concat([feature, Var(goal.reshape(1, 2))], axis=1)
    h = _mlp(leaves, "traj.m1", x)
    out = ad.reshape(_mlp(leaves, "traj.m2", h), (horizon, 2))
    # Hard endpoint constraint: the last waypoint is the conditioning goal.
    return ad.concat([ad.narrow(out, 0, 0, horizon - 1), Var(goal.reshape(1, 2))], axis=0)


def complete_trajectory(
    context_feature: np.ndarray, goal, tape: ParamTape, cfg: EncoderConfig, horizon: int
) -> np.ndarray:
    """Inference-time completion; returns a (T, 2) array in the target frame."""
    node = trajectory_forward(Var(np.asarray(context_feature, dtype=float)), goal, tape, cfg, horizon)
    return node.value.copy()


@dataclass(frozen=True)
class PredictedTrajectory:
    """A completed trajectory and the log density of its conditioning goal."""

    waypoints: np.ndarray  # (T, 2)
    goal_log_prob: float

    def __post_init__(self):
        wp = np.asarray(self.waypoints, dtype=float)
        object.__setattr__(self, "waypoints", wp)
        object.__setattr__(self, "goal_log_prob", float(self.goal_log_prob))

    @property
    def goal(self) -> np.ndarray:
        return self.waypoints[-1]


def predict_topk(
    scenario: Scenario,
    spatial_tape: ParamTape,
    traj_tape: ParamTape,
    nms_cfg: NmsConfig,
    enc_cfg: EncoderConfig,
    spacing: float = 0.5,
) -> list[PredictedTrajectory]:
    """Full pipeline on a target-frame scenario.

    Encoders emit the mixture posterior and proxy weights, a scored grid of
    candidates is suppressed by NMS, the top k goals are completed into
    trajectories, and results come back sorted by goal log density.
    """
    vs = vectorize(scenario, enc_cfg)
    fw = forward_spatial(vs, spatial_tape, enc_cfg)
    mix = fw.mixture()
    weights = fw.weights.value
    region = scene_region(scenario)
    candidates = generate_candidates(mix, weights, region, spacing)
    selected = nms_select(candidates, nms_cfg)[: nms_cfg.k]
    context = fw.context_feature.value
    out = [
        PredictedTrajectory(
            waypoints=complete_trajectory(context, c.location, traj_tape, enc_cfg, scenario.T),
            goal_log_prob=c.log_prob,
        )
        for c in selected
    ]
    out.sort(key=lambda p: -p.goal_log_prob)
    return out


def predictions_to_world(
    predictions: list[PredictedTrajectory], transform: RigidTransform
) -> list[PredictedTrajectory]:
    """Map target-frame predictions back through the stored projection."""
    inverse = transform.inverse()
    return [
        PredictedTrajectory(
            waypoints=inverse.apply_points(p.waypoints), goal_log_prob=p.goal_log_prob
        )
        for p in predictions
    ]


def save_predictions(path, scenario_id: str, predictions: list[PredictedTrajectory]) -> None:
    doc = {
        "scenario_id": scenario_id,
        "predictions": [
            {
                "goal_log_prob": p.goal_log_prob,
                "waypoints": [[float(x), float(y)] for x, y in p.waypoints],
            }
            for p in predictions
        ],
    }
    Path(path).write_text(json.dumps(doc))


def load_predictions(path) -> tuple[str, list[PredictedTrajectory]]:
    try:
        doc = json.loads(Path(path).read_text())
        scenario_id = str(doc["scenario_id"])
        preds = [
            PredictedTrajectory(
                waypoints=np.asarray(p["waypoints"], dtype=float),
                goal_log_prob=float(p["goal_log_prob"]),
            )
            for p in doc["predictions"]
        ]
    except (OSError, json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        raise ValidationError(f"cannot load predictions from {path}: {exc}") from exc
    return scenario_id, preds
