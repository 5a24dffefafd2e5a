"""GLMB recursion with mixed particle / Gaussian-mixture track states.

Prediction, measurement update with negative observations and ranked data
association, truncation, resampling, particle-to-Gaussian promotion and
measurement-driven birth.  Every function returns a new density.
"""
from __future__ import annotations

import heapq
import logging
from dataclasses import dataclass, field

import numpy as np

from .assignment import murty
from .rfs import (POS, AllZeroWeights, GaussianMixture, GlmbDensity, Label, ParticleCloud,
                  TrackState, compact, regularize_covariance)

log = logging.getLogger(__name__)

# log clutter density used when the clutter rate is zero: unassigned
# measurements then cost e^-1e4 relative, i.e. they only survive when no
# hypothesis can explain them
CLUTTER_FREE_LOG_KAPPA = -1.0e4
# detections this far (in log-likelihood) below the best alternative of the
# same track are treated as infeasible
GATE_LOG_RATIO = 60.0


class ZeroClutterDensity(ValueError):
    pass


class NoFeasibleAssociation(RuntimeError):
    pass


RANDOM_WALK = np.diag([1.0, 1.0, 0.0, 0.0])


@dataclass(frozen=True)
class MotionModel:
    process_noise: np.ndarray = field(default_factory=lambda: np.diag([1.0, 1.0, 1.0, 1.0]))
    survival: float = 0.99          # discovered (Gaussian) tracks
    search_survival: float = 1.0    # prior (particle) tracks
    transition: np.ndarray = field(default_factory=lambda: RANDOM_WALK.copy())

    def accumulated_noise(self, steps: int) -> np.ndarray:
        F, Q = self.transition, np.asarray(self.process_noise, float)
        acc, Fi = np.zeros_like(Q), np.eye(len(Q))
        for _ in range(steps):
            acc += Fi @ Q @ Fi.T
            Fi = F @ Fi
        return acc


@dataclass(frozen=True)
class SensorModel:
    pd_plateau: float = 0.8825
    inner_radius: float = 100.0
    outer_radius: float = 150.0
    noise: np.ndarray = field(default_factory=lambda: np.diag([4.0, 4.0]))
    clutter_rate: float = 0.01

    @property
    def fov_area(self) -> float:
        return float(np.pi * self.outer_radius ** 2)

    def detection_probability(self, positions, agent) -> np.ndarray:
        d = np.linalg.norm(np.asarray(positions, float)[..., :2] - np.asarray(agent, float), axis=-1)
        span = self.outer_radius - self.inner_radius
        if span <= 0:
            return np.where(d <= self.inner_radius, self.pd_plateau, 0.0)
        ramp = np.clip((self.outer_radius - d) / span, 0.0, 1.0)
        return self.pd_plateau * np.where(d <= self.inner_radius, 1.0, ramp)

    def clutter_intensity(self, z=None) -> float:
        """Uniform clutter density over the FOV disc (per m^2, per scan)."""
        return self.clutter_rate / self.fov_area

    def measure(self, state) -> np.ndarray:
        return np.asarray(state, float)[..., :2]


@dataclass(frozen=True)
class FilterConfig:
    k_best: int = 50
    max_hypotheses: int = 1000
    min_existence: float = 1e-4
    n_particles: int = 1000
    promotion_trace: float = 25.0
    birth_probability: float = 0.05
    birth_velocity_var: float = 1.0
    birth_association_threshold: float = 0.5


# --------------------------------------------------------------------------
# prediction

def _sqrt_psd(Q: np.ndarray) -> np.ndarray:
    vals, vecs = np.linalg.eigh(Q)
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


def _predict_state(state: TrackState, F: np.ndarray, Q: np.ndarray, rng) -> TrackState:
    if isinstance(state, ParticleCloud):
        x = state.states @ F.T
        if np.any(Q):
            if rng is None:
                raise ValueError("particle prediction with process noise needs an rng")
            x = x + rng.standard_normal(x.shape) @ _sqrt_psd(Q).T
        return ParticleCloud(x, state.weights)
    means = state.means @ F.T
    covs = np.einsum("ij,njk,lk->nil", F, state.covs, F) + Q
    return GaussianMixture(state.weights, means, covs)


def _subset_children(logw: np.ndarray, surv: np.ndarray, budget: int):
    """Best-first enumeration of (parent, flips) ordered by child weight.

    ``surv`` is H x L with NaN where a label is absent.  Each present track
    flips away from its more likely outcome at a cost of |log s - log(1-s)|;
    subsets of flips are enumerated globally in ascending total cost so that
    the ``budget`` heaviest children are produced exactly.  Returns the
    children, the default survival mask and the per-row flip order.
    """
    present = ~np.isnan(surv)
    s = np.where(present, surv, 1.0)
    with np.errstate(divide="ignore"):
        ls, ld = np.log(s), np.log1p(-s)
    survive = (ls >= ld) & present
    base = logw + np.where(present, np.where(survive, ls, ld), 0.0).sum(axis=1)
    flip = np.where(present, np.abs(ls - ld), np.inf)
    order = np.argsort(flip, axis=1, kind="stable")
    costs = np.take_along_axis(flip, order, axis=1)
    n_ok = np.isfinite(costs).sum(axis=1)
    heap = [(-b, h, ()) for h, b in enumerate(base.tolist()) if np.isfinite(b)]
    heapq.heapify(heap)
    out = []
    while heap and len(out) < budget:
        negw, h, subset = heapq.heappop(heap)
        out.append((h, subset, -negw))
        last = subset[-1] if subset else -1
        if last + 1 < n_ok[h]:
            c = costs[h]
            heapq.heappush(heap, (negw + c[last + 1], h, subset + (last + 1,)))
            if subset:
                heapq.heappush(heap, (negw - c[last] + c[last + 1], h,
                                      subset[:-1] + (last + 1,)))
    return out, survive, order


def predict(density: GlmbDensity, model: MotionModel, rng=None, steps: int = 1,
            max_hypotheses: int = 1000) -> GlmbDensity:
    """Chapman-Kolmogorov prediction over ``steps`` time steps."""
    if steps < 1:
        return density
    F = np.linalg.matrix_power(np.asarray(model.transition, float), steps)
    Q = model.accumulated_noise(steps)
    comps = tuple(_predict_state(c, F, Q, rng) for c in density.components)
    surv = np.array([(model.search_survival if isinstance(c, ParticleCloud) else model.survival)
                     for c in density.components]) ** steps
    table = density.table
    if np.all(surv[table[table >= 0]] >= 1.0):
        return GlmbDensity(density.labels, table, density.weights, comps)
    with np.errstate(divide="ignore"):
        logw = np.log(density.weights)
    S = np.where(table >= 0, surv[np.maximum(table, 0)], np.nan)
    children, survive, order = _subset_children(logw, S, 2 * max_hypotheses)
    hs = np.fromiter((c[0] for c in children), np.int64, len(children))
    lw = np.fromiter((c[2] for c in children), float, len(children))
    alive = survive[hs]
    fr = [i for i, c in enumerate(children) for _ in c[1]]
    if fr:
        fc = order[hs[fr], [k for c in children for k in c[1]]]
        alive[fr, fc] = ~alive[fr, fc]
    rows = np.where(alive, table[hs], -1)
    out = compact(density.labels, rows, np.exp(lw - lw.max()), comps)
    return truncate(out, max_hypotheses, 0.0)


# --------------------------------------------------------------------------
# likelihoods

def _lse(a: np.ndarray, axis=None):
    # plain log-sum-exp; scipy's version carries heavy per-call overhead on the hot path
    top = np.max(a, axis=axis, keepdims=True)
    top = np.where(np.isfinite(top), top, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - top), axis=axis, keepdims=True)) + top
    return out.item() if axis is None else np.squeeze(out, axis=axis)


def _log_gauss(diff: np.ndarray, cov: np.ndarray) -> np.ndarray:
    """log N(diff; 0, cov) along the last axis (cov is 2x2)."""
    inv = np.linalg.inv(cov)
    _, logdet = np.linalg.slogdet(cov)
    maha = np.einsum("...i,ij,...j->...", diff, inv, diff)
    return -0.5 * (maha + logdet + diff.shape[-1] * np.log(2 * np.pi))


def _track_terms(state: TrackState, Z: np.ndarray, sensor: SensorModel, agent):
    """Per-term log factors of a track state.

    Returns (log_prior_terms (M,), log_miss (M,), log_det (M, m)) where M is the
    particle or component count and log_det excludes the clutter density.
    """
    with np.errstate(divide="ignore"):
        if isinstance(state, ParticleCloud):
            pos = state.states[:, POS]
            pd = sensor.detection_probability(pos, agent)
            log_miss = np.log1p(-pd)
            if len(Z):
                ln = _log_gauss(Z[None, :, :] - pos[:, None, :], np.asarray(sensor.noise, float))
                log_det = np.log(pd)[:, None] + ln
            else:
                log_det = np.zeros((len(pos), 0))
            return np.log(state.weights), log_miss, log_det
        pd = sensor.detection_probability(state.means[:, POS], agent)
        log_miss = np.log1p(-pd)
        log_det = np.zeros((len(pd), len(Z)))
        for i in range(len(pd)):
            if len(Z):
                S = state.covs[i][POS, POS] + sensor.noise
                log_det[i] = np.log(pd[i]) + _log_gauss(Z - state.means[i, POS], S)
        return np.log(state.weights), log_miss, log_det


def _updated_state(state: TrackState, logw_terms: np.ndarray, z, sensor: SensorModel) -> TrackState:
    """Posterior track state given unnormalized per-term log weights."""
    if not np.isfinite(np.max(logw_terms)):
        return state
    w = np.exp(logw_terms - np.max(logw_terms))
    w /= w.sum()
    if isinstance(state, ParticleCloud):
        return ParticleCloud(state.states, w)
    if z is None:
        return GaussianMixture(w, state.means, state.covs)
    R = np.asarray(sensor.noise, float)
    n = state.means.shape[1]
    H = np.zeros((2, n))
    H[0, 0] = H[1, 1] = 1.0
    means, covs = [], []
    for m, P in zip(state.means, state.covs):
        S = H @ P @ H.T + R
        K = np.linalg.solve(S, H @ P).T
        means.append(m + K @ (z - H @ m))
        A = np.eye(n) - K @ H
        covs.append(regularize_covariance(A @ P @ A.T + K @ R @ K.T))
    return GaussianMixture(w, np.array(means), np.array(covs))


def association_likelihood(track: TrackState, z, sensor: SensorModel, agent) -> float:
    """Single-track likelihood: detection of ``z`` (divided by clutter) or a miss (z=None)."""
    Z = np.zeros((0, 2)) if z is None else np.asarray(z, float).reshape(1, 2)
    lw, log_miss, log_det = _track_terms(track, Z, sensor, agent)
    if z is None:
        return float(np.exp(_lse(lw + log_miss)))
    kappa = sensor.clutter_intensity(z)
    if kappa <= 0:
        raise ZeroClutterDensity("clutter density is zero at the measurement")
    return float(np.exp(_lse(lw + log_det[:, 0]) - np.log(kappa)))


# --------------------------------------------------------------------------
# update

@dataclass(frozen=True)
class UpdateResult:
    density: GlmbDensity
    association_probability: np.ndarray   # per measurement
    assignments: np.ndarray               # per hypothesis/label: -1 absent, 0 miss, j>0 z_j


def update_detailed(density: GlmbDensity, Z, sensor: SensorModel, agent, k_best: int = 50,
                    max_hypotheses: int = 1000) -> UpdateResult:
    Z = np.asarray(Z, float).reshape(-1, 2)
    m = len(Z)
    kappa = sensor.clutter_intensity()
    log_kappa = np.log(kappa) if kappa > 0 else CLUTTER_FREE_LOG_KAPPA

    used = np.unique(density.table[density.table >= 0])
    ncomp = len(density.components)
    log_eta = np.full(ncomp, -np.inf)
    log_psi = np.full((ncomp, m), -np.inf)
    terms = {}
    with np.errstate(divide="ignore", invalid="ignore"):
        for c in used:
            lw, lmiss, ldet = _track_terms(density.components[c], Z, sensor, agent)
            terms[c] = (lw, lmiss, ldet)
            log_eta[c] = _lse(lw + lmiss)
            if m:
                log_psi[c] = _lse(lw[:, None] + ldet, axis=0) - log_kappa
        best_alt = np.maximum(log_eta, np.max(log_psi, axis=1, initial=-np.inf))
        log_psi[log_psi < best_alt[:, None] - GATE_LOG_RATIO] = -np.inf
    gated = np.isfinite(log_psi).any(axis=1)

    table = density.table
    L = len(density.labels)
    present = table >= 0
    with np.errstate(divide="ignore"):
        logw = np.log(density.weights)
    safe = np.where(present, table, 0)
    ungated_present = present & ~gated[safe]
    base = logw + np.where(ungated_present, log_eta[safe], 0.0).sum(axis=1)

    key_table = np.where(present & gated[safe], table, -1)
    gcols = np.flatnonzero((key_table >= 0).any(axis=0))
    keys, inverse = np.unique(key_table[:, gcols], axis=0, return_inverse=True)
    inverse = inverse.reshape(-1)

    child_parent, child_logw, child_codes = [], [], []
    for g, key in enumerate(keys):
        parents = np.flatnonzero(inverse == g)
        rows_cols = gcols[key >= 0]
        rows_comp = key[key >= 0]
        n = len(rows_comp)
        cost = np.full((n, m + n), np.inf)
        for i, c in enumerate(rows_comp):
            cost[i, :m] = -log_psi[c]
            cost[i, m + i] = -log_eta[c]
        sols = murty(cost, k_best)
        if not sols:
            continue
        codes = np.zeros((len(sols), L), np.int64)
        sol_cost = np.empty(len(sols))
        for s, (cols, total) in enumerate(sols):
            codes[s, rows_cols] = np.where(cols < m, cols + 1, 0)
            sol_cost[s] = total
        lw = (base[parents][:, None] - sol_cost[None, :]).ravel()
        child_parent.append(np.repeat(parents, len(sols)))
        child_logw.append(lw)
        child_codes.append(np.tile(codes, (len(parents), 1)))

    if child_parent:
        child_parent = np.concatenate(child_parent)
        child_logw = np.concatenate(child_logw)
        child_codes = np.vstack(child_codes)
    if len(child_parent) == 0 or not np.isfinite(np.max(child_logw)):
        log.warning("no feasible association for %d measurements; keeping predicted density", m)
        return UpdateResult(density, np.zeros(m), np.where(present, 0, -1))

    order = np.argsort(-child_logw, kind="stable")
    order = order[np.isfinite(child_logw[order])][:max_hypotheses]
    parent = child_parent[order]
    codes = np.where(present[parent], child_codes[order], -1)
    weights = np.exp(child_logw[order] - child_logw[order[0]])
    weights /= weights.sum()

    old = table[parent]
    keys_flat = np.where(codes >= 0, old * (m + 1) + codes, -1)
    uniq, new_idx = np.unique(keys_flat[keys_flat >= 0], return_inverse=True)
    new_table = np.full(keys_flat.shape, -1, np.int64)
    new_table[keys_flat >= 0] = new_idx.reshape(-1)
    comps = []
    for k in uniq:
        c, code = divmod(int(k), m + 1)
        lw, lmiss, ldet = terms[c]
        if code == 0:
            comps.append(_updated_state(density.components[c], lw + lmiss, None, sensor))
        else:
            comps.append(_updated_state(density.components[c], lw + ldet[:, code - 1],
                                        Z[code - 1], sensor))

    assoc = np.array([weights[(codes == j + 1).any(axis=1)].sum() for j in range(m)])
    keep = np.flatnonzero((new_table >= 0).any(axis=0))
    out = GlmbDensity(tuple(density.labels[j] for j in keep), new_table[:, keep], weights,
                      tuple(comps))
    return UpdateResult(out, assoc, codes[:, keep])


def update(density: GlmbDensity, Z, sensor: SensorModel, agent, caps: FilterConfig | None = None
           ) -> GlmbDensity:
    caps = caps or FilterConfig()
    return update_detailed(density, Z, sensor, agent, caps.k_best, caps.max_hypotheses).density


# --------------------------------------------------------------------------
# maintenance

def truncate(density: GlmbDensity, max_hypotheses: float, min_existence: float) -> GlmbDensity:
    """Keep the heaviest hypotheses and drop labels with negligible existence."""
    w = density.weights
    if max_hypotheses < len(w):
        keep = np.sort(np.argsort(-w, kind="stable")[:max(int(max_hypotheses), 1)])
    else:
        keep = np.arange(len(w))
    table = density.table[keep]
    w = w[keep]
    if w.sum() <= 0:
        raise AllZeroWeights("truncation left no weight")
    w = w / w.sum()
    r = w @ (table >= 0)
    drop = r < min_existence
    if np.any(drop):
        table = np.where(drop[None, :], -1, table)
    out = compact(density.labels, table, w, density.components, merge=bool(np.any(drop)))
    return out.with_weights(out.weights / out.weights.sum())


def promote_tracks(density: GlmbDensity, trace_threshold: float) -> GlmbDensity:
    """Replace concentrated particle clouds by moment-matched Gaussians."""
    comps = list(density.components)
    changed = False
    for i, c in enumerate(comps):
        if isinstance(c, ParticleCloud):
            cov = c.covariance()
            if np.trace(cov[POS, POS]) < trace_threshold:
                comps[i] = GaussianMixture.single(c.mean(), regularize_covariance(cov))
                changed = True
    if not changed:
        return density
    return GlmbDensity(density.labels, density.table, density.weights, tuple(comps))


def systematic_resample(weights: np.ndarray, count: int, rng) -> np.ndarray:
    positions = (rng.random() + np.arange(count)) / count
    cum = np.cumsum(weights)
    cum[-1] = 1.0
    return np.searchsorted(cum, positions, side="right")


def resample_cloud(cloud: ParticleCloud, target_count: int, rng) -> ParticleCloud:
    """Systematic resampling when the effective sample size drops below half the target."""
    if cloud.ess() >= target_count / 2:
        return cloud
    idx = systematic_resample(cloud.weights, target_count, rng)
    return ParticleCloud.uniform(cloud.states[idx])


def resample_density(density: GlmbDensity, target_count: int, rng) -> GlmbDensity:
    comps = tuple(resample_cloud(c, target_count, rng) if isinstance(c, ParticleCloud) else c
                  for c in density.components)
    return GlmbDensity(density.labels, density.table, density.weights, comps)


def birth_state(z, sensor: SensorModel, velocity_var: float = 1.0) -> GaussianMixture:
    cov = np.zeros((4, 4))
    cov[POS, POS] = 4.0 * np.diag(np.diag(np.asarray(sensor.noise, float)))
    cov[2, 2] = cov[3, 3] = velocity_var
    return GaussianMixture.single(np.array([z[0], z[1], 0.0, 0.0]), cov)


def adaptive_birth(density: GlmbDensity, Z_unused, sensor: SensorModel, agent=None,
                   P_B: float = 0.05, step: int = 0, max_hypotheses: int = 1000,
                   velocity_var: float = 1.0) -> GlmbDensity:
    """Add one Bernoulli track (existence ``P_B``) per unexplained measurement."""
    Z_unused = np.asarray(Z_unused, float).reshape(-1, 2)
    if P_B <= 0 or len(Z_unused) == 0:
        return density
    n = len(Z_unused)
    new_labels = [Label(step, j) for j in range(n)]
    clash = set(new_labels) & set(density.labels)
    if clash:
        raise ValueError(f"birth labels already in use: {sorted(clash)}")
    base = len(density.components)
    comps = density.components + tuple(birth_state(z, sensor, velocity_var) for z in Z_unused)
    subsets = (np.arange(2 ** n)[:, None] >> np.arange(n)[None, :]) & 1
    k = subsets.sum(axis=1)
    with np.errstate(divide="ignore"):
        sub_logw = k * np.log(P_B) + (n - k) * np.log1p(-P_B)
        logw = (np.log(density.weights)[:, None] + sub_logw[None, :]).ravel()
    H = len(density)
    old = np.repeat(density.table, len(subsets), axis=0)
    born = np.where(np.tile(subsets, (H, 1)) == 1, base + np.arange(n)[None, :], -1)
    table = np.hstack([old, born])
    labels = density.labels + tuple(new_labels)
    order = np.argsort(-logw, kind="stable")[:max_hypotheses]
    order = order[np.isfinite(logw[order])]
    w = np.exp(logw[order] - logw[order[0]])
    return compact(labels, table[order], w / w.sum(), comps, merge=False)
