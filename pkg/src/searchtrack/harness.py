"""Episode loop (observe, update, plan, act), seeded Monte Carlo batches and summaries."""
from __future__ import annotations

import io
import json
import logging
import zlib
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from . import __version__
from .belief import Cluster, GaussianSpatial, PopulationPrior, UniformSpatial
from .config import canonical_json, scenario_digest, scenario_to_dict
from .glmb import (adaptive_birth, predict, promote_tracks, resample_density, truncate,
                   update_detailed)
from .metrics import OspaResult, ospa2_at
from .planner import ActionPlan, Models, Workspace, belief_entropy, enumerate_actions, plan
from .belief import initial_belief
from .rfs import map_estimate
from .world import Scenario, sense, spawn_truth, step_agent, step_targets

log = logging.getLogger(__name__)

STREAMS = ("truth", "sensor", "filter", "init", "policy")
POLICIES = ("unisat", "random", "lawnmower")
CSV_COLUMNS = ("step", "ospa2_total", "ospa2_loc", "ospa2_card", "entropy", "n_hypotheses",
               "agent_x", "agent_y")


def seed_streams(seed: int) -> dict:
    """Independent generators per purpose, derived from (seed, stream name)."""
    return {name: np.random.default_rng(np.random.SeedSequence([int(seed), zlib.crc32(name.encode())]))
            for name in STREAMS}


# --------------------------------------------------------------------------
# policies

class Lawnmower:
    """Boustrophedon sweep with lane spacing equal to the inner FOV diameter."""

    def __init__(self, workspace: Workspace, spacing: float, start):
        lo, hi = np.asarray(workspace.lower, float), np.asarray(workspace.upper, float)
        half = min(spacing / 2, (hi[1] - lo[1]) / 2)
        ys = np.arange(lo[1] + half, hi[1], spacing)
        pts = []
        for i, y in enumerate(ys):
            xs = (lo[0] + half, hi[0] - half)
            pts.extend([(xs[i % 2], y), (xs[1 - i % 2], y)])
        pts = np.array(pts)
        # begin at the sweep vertex closest to the agent
        first = int(np.argmin(np.linalg.norm(pts - np.asarray(start), axis=1)))
        self.points = np.roll(pts, -first, axis=0)
        self.target = 0

    def next_plan(self, pose, horizon: int, step_length: float) -> ActionPlan:
        pose = np.asarray(pose, float)
        wps = []
        for _ in range(horizon):
            budget = step_length
            while budget > 1e-9:
                goal = self.points[self.target]
                d = np.linalg.norm(goal - pose)
                if d <= budget:
                    pose = goal.copy()
                    budget -= d
                    self.target = (self.target + 1) % len(self.points)
                else:
                    pose = pose + (goal - pose) * budget / d
                    budget = 0.0
            wps.append(pose)
        return ActionPlan(-1, np.array(wps), None)


# --------------------------------------------------------------------------
# episode log

@dataclass
class StepRecord:
    step: int
    agent: np.ndarray
    truth: dict
    estimates: dict
    n_measurements: int
    ospa2: OspaResult
    n_hypotheses: int
    entropy: float
    expected_cardinality: float


@dataclass
class EpisodeLog:
    header: dict
    records: list = field(default_factory=list)
    failure: str | None = None

    @property
    def final_ospa2(self) -> float:
        return self.records[-1].ospa2.total

    def series(self, attr: str = "total") -> np.ndarray:
        return np.array([getattr(r.ospa2, attr) for r in self.records])

    def to_csv(self) -> str:
        buf = io.StringIO()
        for key in ("seed", "scenario_digest", "policy", "code_version"):
            buf.write(f"# {key}: {self.header[key]}\n")
        buf.write(f"# config: {canonical_json(self.header['config'])}\n")
        if self.failure:
            buf.write(f"# failure: {self.failure}\n")
        buf.write(",".join(CSV_COLUMNS) + "\n")
        for r in self.records:
            row = (r.step, r.ospa2.total, r.ospa2.loc, r.ospa2.card, r.entropy, r.n_hypotheses,
                   r.agent[0], r.agent[1])
            buf.write(",".join(repr(float(v)) if isinstance(v, float) or isinstance(v, np.floating)
                               else str(v) for v in row) + "\n")
        return buf.getvalue()

    def trajectories_csv(self, which: str) -> str:
        """Long-format trajectory table (step, track, x, y) for truth or estimates."""
        buf = io.StringIO()
        buf.write("step,track,x,y\n")
        for r in self.records:
            items = r.truth if which == "truth" else r.estimates
            for key, pos in sorted(items.items(), key=lambda kv: repr(kv[0])):
                name = key if isinstance(key, (int, np.integer)) else f"{key[0]}.{key[1]}"
                buf.write(f"{r.step},{name},{float(pos[0])!r},{float(pos[1])!r}\n")
        return buf.getvalue()


# --------------------------------------------------------------------------
# episode

def run_episode(scenario: Scenario, seed: int, policy: str = "unisat",
                on_step: Callable | None = None) -> EpisodeLog:
    """Simulate one episode; deterministic given (scenario, seed, policy)."""
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}")
    header = {"seed": int(seed), "scenario_digest": scenario_digest(scenario), "policy": policy,
              "code_version": __version__, "config": scenario_to_dict(scenario)}
    episode = EpisodeLog(header)
    try:
        _run(scenario, seed, policy, episode, on_step)
    except Exception as exc:  # logged failure record; the batch keeps going
        log.exception("episode seed=%s failed", seed)
        episode.failure = f"{type(exc).__name__}: {exc}"
    return episode


def _run(sc: Scenario, seed: int, policy: str, episode: EpisodeLog, on_step) -> None:
    rngs = seed_streams(seed)
    caps, pcfg, sensor, motion = sc.filter, sc.planner, sc.sensor, sc.motion
    models = Models(motion, sensor, caps)
    world = spawn_truth(sc, rngs["truth"])
    belief = initial_belief(sc.prior, caps.n_particles, rngs["init"], caps.max_hypotheses)
    mower = Lawnmower(sc.workspace, 2 * sensor.inner_radius, world.agent) \
        if policy == "lawnmower" else None
    truth_traj, est_traj = [], []
    current, cursor = None, 0
    for k in range(1, sc.duration + 1):
        if current is None or cursor >= pcfg.sampling_interval or cursor >= len(current.waypoints):
            current = _choose(policy, belief, world.agent, models, sc, rngs, mower)
            cursor = 0
        world = step_agent(world, current, cursor)
        cursor += 1
        world = step_targets(world, motion, rngs["truth"], sc.workspace)
        Z = sense(world, sensor, rngs["sensor"])

        belief = predict(belief, motion, rngs["filter"], 1, caps.max_hypotheses)
        result = update_detailed(belief, Z, sensor, world.agent, caps.k_best, caps.max_hypotheses)
        belief = truncate(result.density, caps.max_hypotheses, caps.min_existence)
        belief = resample_density(belief, caps.n_particles, rngs["filter"])
        belief = promote_tracks(belief, caps.promotion_trace)
        unused = Z[result.association_probability < caps.birth_association_threshold]
        belief = adaptive_birth(belief, unused, sensor, world.agent, caps.birth_probability,
                                step=k, max_hypotheses=caps.max_hypotheses,
                                velocity_var=caps.birth_velocity_var)

        est = {l: m[:2] for l, m in map_estimate(belief).items()}
        truth = {int(i): p for i, p in zip(world.target_ids, world.positions())}
        truth_traj.append(truth)
        est_traj.append(est)
        rec = StepRecord(k, world.agent.copy(), truth, est, len(Z),
                         ospa2_at(truth_traj, est_traj, k - 1, sc.metric), len(belief),
                         belief_entropy(belief, pcfg), belief.expected_cardinality())
        episode.records.append(rec)
        if on_step is not None:
            on_step(rec, belief, world)


def _choose(policy, belief, pose, models, sc: Scenario, rngs, mower) -> ActionPlan:
    if policy == "unisat":
        return plan(belief, pose, models, sc.planner, sc.workspace,
                    seed=int(rngs["policy"].integers(2 ** 31)))
    if policy == "random":
        actions = enumerate_actions(pose, sc.planner, sc.workspace)
        return actions[int(rngs["policy"].integers(len(actions)))]
    return mower.next_plan(pose, sc.planner.horizon, sc.planner.step_length)


# --------------------------------------------------------------------------
# statistics and batches

def summarize(values) -> tuple[float, float]:
    """Mean and 95% margin of error (1.96 * sample std / sqrt(n); 0 for n = 1)."""
    v = np.asarray(values, float)
    if len(v) == 0:
        raise ValueError("need at least one value")
    mean = float(v.mean())
    if len(v) == 1:
        return mean, 0.0
    return mean, float(1.96 * v.std(ddof=1) / np.sqrt(len(v)))


@dataclass
class RunSummary:
    scenario: str
    scenario_digest: str
    policy: str
    base_seed: int
    run_count: int
    failed_count: int
    final_values: list
    mean_final_ospa2: float
    margin_95: float
    step_mean: list
    step_margin: list
    mean_final_loc: float
    mean_final_card: float

    def to_json(self) -> str:
        return json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n"


def _episode_job(args):
    scenario, seed, policy = args
    return run_episode(scenario, seed, policy)


def run_episodes(scenario: Scenario, seeds, policy: str = "unisat", jobs: int = 1) -> list:
    args = [(scenario, int(s), policy) for s in seeds]
    if jobs <= 1:
        return [_episode_job(a) for a in args]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_episode_job, args))


def run_monte_carlo(scenario: Scenario, n_runs: int, base_seed: int = 0, jobs: int = 1,
                    policy: str = "unisat", episodes: list | None = None) -> RunSummary:
    """Episodes with seeds base_seed + i; output does not depend on ``jobs``."""
    if n_runs < 1:
        raise ValueError("n_runs must be >= 1")
    if episodes is None:
        episodes = run_episodes(scenario, range(base_seed, base_seed + n_runs), policy, jobs)
    ok = [e for e in episodes if e.failure is None]
    failed = len(episodes) - len(ok)
    if not ok:
        raise RuntimeError("every episode failed")
    finals = [e.final_ospa2 for e in ok]
    mean, margin = summarize(finals)
    series = np.array([e.series() for e in ok])
    step_stats = [summarize(series[:, t]) for t in range(series.shape[1])]
    return RunSummary(
        scenario=scenario.name, scenario_digest=scenario_digest(scenario), policy=policy,
        base_seed=int(base_seed), run_count=len(ok), failed_count=failed,
        final_values=[float(v) for v in finals], mean_final_ospa2=mean, margin_95=margin,
        step_mean=[m for m, _ in step_stats], step_margin=[s for _, s in step_stats],
        mean_final_loc=float(np.mean([e.records[-1].ospa2.loc for e in ok])),
        mean_final_card=float(np.mean([e.records[-1].ospa2.card for e in ok])),
    )


# --------------------------------------------------------------------------
# desk-scale scenarios

def _scale_spatial(s, f: float):
    if isinstance(s, UniformSpatial):
        return UniformSpatial(np.asarray(s.lower) * f, np.asarray(s.upper) * f)
    return GaussianSpatial(s.means * f, s.covs * f * f, s.weights)


def _scale_prior(p: PopulationPrior, f: float) -> PopulationPrior:
    return PopulationPrior(tuple(Cluster(_scale_spatial(c.spatial, f), c.cardinality)
                                 for c in p.clusters))


def desk_scale(sc: Scenario, size: float = 300.0, duration: int = 120,
               n_particles: int = 300, rollout_hypotheses: int = 50) -> Scenario:
    """Shrink a paper-scale scenario to a ``size`` x ``size`` square for quick runs.

    Geometry (clusters, FOV radii, agent step) is scaled uniformly; noise levels
    and detection/clutter parameters are kept.  Particle count and the rollout
    hypothesis cap are reduced to keep episodes to a few seconds.
    """
    f = size / float(np.max(np.subtract(sc.workspace.upper, sc.workspace.lower)))
    ws = Workspace((0.0, 0.0), (size, size))
    sensor = replace(sc.sensor, inner_radius=sc.sensor.inner_radius * f,
                     outer_radius=sc.sensor.outer_radius * f)
    planner = replace(sc.planner, step_length=sc.planner.step_length * f,
                      rollout_hypotheses=rollout_hypotheses)
    return replace(sc, workspace=ws, duration=duration, prior=_scale_prior(sc.prior, f),
                   truth_prior=_scale_prior(sc.truth_prior, f), sensor=sensor, planner=planner,
                   filter=replace(sc.filter, n_particles=n_particles),
                   name=f"{sc.name}-desk")
