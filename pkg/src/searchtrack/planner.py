"""Entropy-driven action selection with predicted-ideal-measurement rollouts."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .glmb import FilterConfig, MotionModel, SensorModel, predict, truncate, update
from .rfs import (POS, GaussianMixture, GlmbDensity, LmbDensity, ParticleCloud, glmb_to_lmb,
                  map_estimate, regularize_covariance)

CONVENTIONS = ("paper", "shannon")


@dataclass(frozen=True)
class PlannerConfig:
    horizon: int = 40
    sampling_interval: int = 10
    hypervolume_unit: float = 1.0
    action_count: int = 13
    step_length: float = 10.0
    entropy_sign_convention: str = "paper"
    rollout_hypotheses: int = 100   # hypothesis cap inside rollouts only

    def __post_init__(self):
        if self.horizon % self.sampling_interval:
            raise ValueError("horizon must be a multiple of sampling_interval")
        if self.hypervolume_unit <= 0:
            raise ValueError("hypervolume_unit must be positive")
        if self.rollout_hypotheses < 1:
            raise ValueError("rollout_hypotheses must be >= 1")
        if self.entropy_sign_convention not in CONVENTIONS:
            raise ValueError(f"entropy_sign_convention must be one of {CONVENTIONS}")

    @property
    def epochs(self) -> int:
        return self.horizon // self.sampling_interval


@dataclass(frozen=True)
class Workspace:
    lower: tuple = (0.0, 0.0)
    upper: tuple = (1216.0, 1230.0)

    @property
    def area(self) -> float:
        return float(np.prod(np.subtract(self.upper, self.lower)))

    def clamp(self, p) -> np.ndarray:
        return np.clip(p, self.lower, self.upper)

    def contains(self, p) -> bool:
        p = np.asarray(p)
        return bool(np.all(p >= self.lower) and np.all(p <= self.upper))

    def translated(self, offset) -> "Workspace":
        o = np.asarray(offset, float)
        return Workspace(tuple(np.add(self.lower, o)), tuple(np.add(self.upper, o)))


@dataclass(frozen=True, eq=False)
class ActionPlan:
    id: int
    waypoints: np.ndarray
    heading: float | None = None  # degrees, None for the stay plan


@dataclass(frozen=True)
class Models:
    motion: MotionModel = field(default_factory=MotionModel)
    sensor: SensorModel = field(default_factory=SensorModel)
    filter: FilterConfig = field(default_factory=FilterConfig)


def enumerate_actions(agent_pose, cfg: PlannerConfig, workspace: Workspace) -> list[ActionPlan]:
    """Stay plan (id 0) plus straight lines at evenly spaced headings (ids 1..)."""
    pose = np.asarray(agent_pose, float)
    steps = np.arange(1, cfg.horizon + 1)[:, None] * cfg.step_length
    plans = [ActionPlan(0, np.repeat(pose[None], cfg.horizon, axis=0), None)]
    n_dirs = cfg.action_count - 1
    for i in range(n_dirs):
        heading = 360.0 * i / n_dirs
        t = np.deg2rad(heading)
        wp = workspace.clamp(pose + steps * np.array([np.cos(t), np.sin(t)]))
        plans.append(ActionPlan(i + 1, wp, heading))
    return plans


def _xlogx(x: float) -> float:
    return 0.0 if x <= 0.0 else x * np.log(x)


def track_inner_product(r: float, state, K: float = 1.0, convention: str = "paper") -> float:
    """<p, ln(K p)> for one LMB track."""
    if isinstance(state, ParticleCloud):
        w = state.weights
        nz = w > 0
        return float(np.log(K) + np.sum(w[nz] * (np.log(r) + np.log(w[nz]))))
    cov = regularize_covariance(state.covariance()[POS, POS])
    half_logdet = 0.5 * np.linalg.slogdet(2 * np.pi * np.e * cov)[1]
    return float(np.log(K) + (half_logdet if convention == "paper" else -half_logdet))


def lmb_entropy(lmb: LmbDensity, K: float = 1.0, convention: str = "paper") -> float:
    """Differential entropy of an LMB (0 ln 0 := 0)."""
    h = 0.0
    for r, state in lmb.tracks.values():
        term = _xlogx(r) + _xlogx(1.0 - r)
        if r > 0:
            term += r * track_inner_product(r, state, K, convention)
        h -= term
    return float(h)


def belief_entropy(density: GlmbDensity, cfg: PlannerConfig) -> float:
    return lmb_entropy(glmb_to_lmb(density), cfg.hypervolume_unit, cfg.entropy_sign_convention)


def pims(density: GlmbDensity, agent_pose, sensor: SensorModel, gate: float = 0.5) -> np.ndarray:
    """Noise- and clutter-free measurements of the estimated tracks the agent would detect."""
    est = map_estimate(density)
    if not est:
        return np.zeros((0, 2))
    means = np.array([m for m in est.values()])
    pd = sensor.detection_probability(means[:, POS], agent_pose)
    return sensor.measure(means[pd > gate])


def _rollout_rng(seed: int, epoch: int):
    # common random numbers: every action sees the same noise stream per epoch
    return np.random.default_rng([seed, epoch])


def _rollout_caps(models: Models, cfg: PlannerConfig) -> FilterConfig:
    return replace(models.filter, max_hypotheses=min(cfg.rollout_hypotheses,
                                                     models.filter.max_hypotheses))


def _first_prediction(density: GlmbDensity, models: Models, cfg: PlannerConfig, seed: int):
    caps = _rollout_caps(models, cfg)
    density = truncate(density, caps.max_hypotheses, 0.0)
    return predict(density, models.motion, _rollout_rng(seed, 1), steps=cfg.sampling_interval,
                   max_hypotheses=caps.max_hypotheses)


def _rollout(first_predicted: GlmbDensity, action: ActionPlan, models: Models,
             cfg: PlannerConfig, seed: int, baseline: list[float] | None = None) -> float:
    caps = _rollout_caps(models, cfg)
    value = 0.0
    density = first_predicted
    for j in range(1, cfg.epochs + 1):
        if j > 1:
            density = predict(density, models.motion, _rollout_rng(seed, j),
                              steps=cfg.sampling_interval, max_hypotheses=caps.max_hypotheses)
        waypoint = action.waypoints[j * cfg.sampling_interval - 1]
        Z = pims(density, waypoint, models.sensor)
        density = update(density, Z, models.sensor, waypoint, caps)
        density = truncate(density, caps.max_hypotheses, caps.min_existence)
        h = belief_entropy(density, cfg)
        value -= h
        if baseline is not None:
            value += baseline[j - 1]
    return value


def predicted_entropies(density: GlmbDensity, models: Models, cfg: PlannerConfig,
                        seed: int = 0) -> list[float]:
    """Open-loop predicted entropies h(X_j), which do not depend on the action."""
    cap = _rollout_caps(models, cfg).max_hypotheses
    density = _first_prediction(density, models, cfg, seed)
    out = [belief_entropy(density, cfg)]
    for j in range(2, cfg.epochs + 1):
        density = predict(density, models.motion, _rollout_rng(seed, j),
                          steps=cfg.sampling_interval, max_hypotheses=cap)
        out.append(belief_entropy(density, cfg))
    return out


def evaluate_action(density: GlmbDensity, action: ActionPlan, models: Models,
                    cfg: PlannerConfig, seed: int = 0, form: str = "entropy") -> float:
    """Value of committing to ``action``: -sum_j h(X_j | Z_j) over the rollout epochs.

    With ``form="mutual_information"`` the open-loop predicted entropies are
    added back, giving sum_j [h(X_j) - h(X_j | Z_j)].
    """
    first = _first_prediction(density, models, cfg, seed)
    baseline = predicted_entropies(density, models, cfg, seed) if form == "mutual_information" \
        else None
    return _rollout(first, action, models, cfg, seed, baseline)


def action_values(density: GlmbDensity, actions: list[ActionPlan], models: Models,
                  cfg: PlannerConfig, seed: int = 0) -> np.ndarray:
    first = _first_prediction(density, models, cfg, seed)
    return np.array([_rollout(first, a, models, cfg, seed) for a in actions])


def plan(density: GlmbDensity, agent_pose, models: Models, cfg: PlannerConfig,
         workspace: Workspace, seed: int = 0) -> ActionPlan:
    """Best action by rollout value; ties go to the lowest id (stay = 0)."""
    actions = enumerate_actions(agent_pose, cfg, workspace)
    values = action_values(density, actions, models, cfg, seed)
    return actions[int(np.argmax(values))]
