"""Ground-truth simulation: scenarios, target/agent kinematics and the noisy sensor."""
from __future__ import annotations

from dataclasses import dataclass, field, replace
from enum import Enum

import numpy as np
from scipy.optimize import brentq
from scipy.stats import binom

from .belief import Cluster, GaussianSpatial, PopulationPrior
from .glmb import FilterConfig, MotionModel, SensorModel
from .metrics import MetricConfig
from .planner import ActionPlan, PlannerConfig, Workspace


class WaypointExhausted(IndexError):
    pass


class ScenarioKind(str, Enum):
    BASE_CONFIG = "BaseConfig"
    BIMODAL = "Bimodal"
    HIGH_VARIANCE = "HighVariance"
    OVERESTIMATE = "Overestimate"
    UNDERESTIMATE = "Underestimate"
    RANDOM = "Random"


@dataclass(frozen=True, eq=False)
class Scenario:
    workspace: Workspace
    duration: int
    prior: PopulationPrior
    truth_prior: PopulationPrior
    sensor: SensorModel = field(default_factory=SensorModel)
    motion: MotionModel = field(default_factory=MotionModel)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    filter: FilterConfig = field(default_factory=FilterConfig)
    metric: MetricConfig = field(default_factory=MetricConfig)
    seed: int = 0
    name: str = "custom"

    def __post_init__(self):
        if self.workspace.area <= 0:
            raise ValueError("workspace must have positive area")
        if self.duration < 1:
            raise ValueError("duration must be >= 1")


@dataclass(frozen=True, eq=False)
class WorldState:
    target_ids: np.ndarray
    targets: np.ndarray   # (n, 4)
    agent: np.ndarray     # (2,)
    step: int = 0

    def positions(self) -> np.ndarray:
        return self.targets[:, :2]


# --------------------------------------------------------------------------
# scenario suite

PAPER_WORKSPACE = Workspace((0.0, 0.0), (1216.0, 1230.0))

# five Gaussian clusters shared by the characteristic scenarios
_CENTERS = np.array([[260.0, 300.0], [930.0, 260.0], [620.0, 640.0], [250.0, 960.0],
                     [960.0, 990.0]])
_STDS = np.array([[55.0, 40.0], [45.0, 60.0], [64.0, 50.0], [40.0, 45.0], [50.0, 35.0]])
_CORR = np.array([0.3, -0.2, 0.0, 0.4, -0.5])
# per-cluster expected counts; they sum to 5.95
_MEANS = np.array([1.55, 1.40, 1.20, 1.00, 0.80])


def _cov(std, corr) -> np.ndarray:
    sx, sy = std
    return np.array([[sx * sx, corr * sx * sy], [corr * sx * sy, sy * sy]])


def _spatials():
    return [GaussianSpatial(c, _cov(s, r)) for c, s, r in zip(_CENTERS, _STDS, _CORR)]


def _two_point(mean: float) -> list[float]:
    """Tightest pmf on the integers around ``mean``."""
    lo = int(np.floor(mean))
    frac = mean - lo
    pmf = np.zeros(lo + 2)
    pmf[lo] = 1 - frac
    pmf[lo + 1] = frac
    return list(pmf[:lo + 1] if frac == 0 else pmf)


def base_pmfs() -> list[list[float]]:
    return [_two_point(m) for m in _MEANS]


def high_variance_pmfs(n_max: int = 4) -> list[list[float]]:
    return [list(binom.pmf(np.arange(n_max + 1), n_max, m / n_max)) for m in _MEANS]


def bimodal_pmfs(high: int = 3) -> list[list[float]]:
    out = []
    for m in _MEANS:
        pmf = np.zeros(high + 1)
        pmf[high] = m / high
        pmf[0] = 1 - m / high
        out.append(list(pmf))
    return out


def tilt_pmfs(pmfs, target_mean: float) -> list[list[float]]:
    """Exponentially tilt every pmf by a common factor so the total mean hits ``target_mean``."""
    arrays = [np.asarray(p, float) for p in pmfs]

    def tilted(log_theta):
        out = []
        for p in arrays:
            q = p * np.exp(log_theta * np.arange(len(p)))
            out.append(q / q.sum())
        return out

    def total(log_theta):
        return sum(float(np.dot(np.arange(len(q)), q)) for q in tilted(log_theta)) - target_mean

    return [list(q) for q in tilted(brentq(total, -20.0, 20.0, xtol=1e-14))]


def _prior(pmfs, spatials=None) -> PopulationPrior:
    spatials = spatials or _spatials()
    return PopulationPrior(tuple(Cluster(s, tuple(p)) for s, p in zip(spatials, pmfs)))


def random_prior(rng, workspace: Workspace, buffer: float = 100.0, max_clusters: int = 6,
                 max_std: float = 64.0, n_max: int = 3) -> PopulationPrior:
    n = int(rng.integers(1, max_clusters + 1))
    lo = np.add(workspace.lower, buffer)
    hi = np.subtract(workspace.upper, buffer)
    clusters = []
    for _ in range(n):
        center = rng.uniform(lo, hi)
        std = rng.uniform(0.0, max_std, size=2)
        corr = rng.uniform(-1.0, 1.0)
        pmf = rng.uniform(0.0, 1.0, size=n_max + 1)
        clusters.append(Cluster(GaussianSpatial(center, _cov(std, corr)), tuple(pmf / pmf.sum())))
    return PopulationPrior(tuple(clusters))


TRUTH_EXPECTED_COUNT = 5.95
OVERESTIMATE_COUNT = 8.63
UNDERESTIMATE_COUNT = 3.60


def generate_scenario(kind: ScenarioKind | str, seed: int = 0, **overrides) -> Scenario:
    """Fully parameterized paper-scale scenario of the given kind."""
    kind = ScenarioKind(kind)
    workspace = PAPER_WORKSPACE
    if kind is ScenarioKind.BASE_CONFIG:
        prior = truth = _prior(base_pmfs())
    elif kind is ScenarioKind.BIMODAL:
        prior = truth = _prior(bimodal_pmfs())
    elif kind is ScenarioKind.HIGH_VARIANCE:
        prior = truth = _prior(high_variance_pmfs())
    elif kind is ScenarioKind.OVERESTIMATE:
        truth = _prior(high_variance_pmfs())
        prior = _prior(tilt_pmfs(high_variance_pmfs(), OVERESTIMATE_COUNT))
    elif kind is ScenarioKind.UNDERESTIMATE:
        truth = _prior(high_variance_pmfs())
        prior = _prior(tilt_pmfs(high_variance_pmfs(), UNDERESTIMATE_COUNT))
    else:
        prior = truth = random_prior(np.random.default_rng([seed, 0x5CE7]), workspace)
    scenario = Scenario(workspace=workspace, duration=500, prior=prior, truth_prior=truth,
                        seed=seed, name=kind.value)
    return replace(scenario, **overrides) if overrides else scenario


# --------------------------------------------------------------------------
# dynamics and sensing

def _reflect(x: np.ndarray, lo, hi) -> np.ndarray:
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    span = hi - lo
    y = np.mod(x - lo, 2 * span)
    return lo + np.where(y > span, 2 * span - y, y)


def spawn_truth(scenario: Scenario, rng) -> WorldState:
    """Draw target counts and positions from the truth prior and a uniform agent pose."""
    positions = []
    for cluster in scenario.truth_prior.clusters:
        rho = np.asarray(cluster.cardinality)
        count = int(rng.choice(len(rho), p=rho / rho.sum()))
        if count:
            positions.append(cluster.spatial.sample(rng, count))
    ws = scenario.workspace
    pos = np.vstack(positions) if positions else np.zeros((0, 2))
    pos = _reflect(pos, ws.lower, ws.upper)
    targets = np.hstack([pos, np.zeros((len(pos), 2))])
    agent = rng.uniform(ws.lower, ws.upper)
    return WorldState(np.arange(len(targets)), targets, agent, 0)


def step_targets(world: WorldState, motion: MotionModel, rng, workspace: Workspace) -> WorldState:
    """Random-walk every target one step, reflecting at the workspace boundary."""
    Q = np.asarray(motion.process_noise, float)[:2, :2]
    pos = world.positions()
    if len(pos) and np.any(Q):
        vals, vecs = np.linalg.eigh(Q)
        noise = rng.standard_normal(pos.shape) @ (vecs * np.sqrt(np.clip(vals, 0, None))).T
        new = _reflect(pos + noise, workspace.lower, workspace.upper)
    else:
        new = pos.copy()
    targets = np.hstack([new, new - pos])
    return WorldState(world.target_ids, targets, world.agent, world.step + 1)


def step_agent(world: WorldState, action: ActionPlan, index: int) -> WorldState:
    """Move the agent to waypoint ``index`` of the committed plan."""
    if index >= len(action.waypoints):
        raise WaypointExhausted(f"plan {action.id} has {len(action.waypoints)} waypoints")
    return WorldState(world.target_ids, world.targets, np.array(action.waypoints[index], float),
                      world.step)


def sense(world: WorldState, sensor: SensorModel, rng) -> np.ndarray:
    """Detections with Gaussian noise plus Poisson clutter on the FOV disc, shuffled."""
    pos = world.positions()
    pd = sensor.detection_probability(pos, world.agent)
    detected = rng.random(len(pos)) < pd
    R = np.asarray(sensor.noise, float)
    vals, vecs = np.linalg.eigh(R)
    root = vecs * np.sqrt(np.clip(vals, 0, None))
    z = pos[detected] + rng.standard_normal((int(detected.sum()), 2)) @ root.T
    n_clutter = rng.poisson(sensor.clutter_rate)
    rad = sensor.outer_radius * np.sqrt(rng.random(n_clutter))
    ang = rng.uniform(0.0, 2 * np.pi, n_clutter)
    clutter = world.agent + np.column_stack([rad * np.cos(ang), rad * np.sin(ang)])
    Z = np.vstack([z, clutter])
    return Z[rng.permutation(len(Z))]
