"""Initial belief from a population-count prior (spatial density + cardinality pmf)."""
from __future__ import annotations

import itertools
from dataclasses import dataclass
from math import comb
from typing import Sequence

import numpy as np

from .rfs import GlmbDensity, Label, ParticleCloud, compact, regularize_covariance


class EmptyPmf(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class GaussianSpatial:
    """Gaussian mixture over position (a single Gaussian has one component)."""

    means: np.ndarray
    covs: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        means = np.atleast_2d(np.asarray(self.means, float))
        covs = np.asarray(self.covs, float)
        if covs.ndim == 2:
            covs = covs[None]
        w = np.ones(len(means)) if self.weights is None else np.asarray(self.weights, float)
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "covs", np.array([regularize_covariance(c) for c in covs]))
        object.__setattr__(self, "weights", w / w.sum())

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def sample(self, rng, n: int) -> np.ndarray:
        which = rng.choice(len(self.weights), size=n, p=self.weights) if len(self.weights) > 1 \
            else np.zeros(n, np.int64)
        out = np.empty((n, 2))
        for k in range(len(self.weights)):
            sel = which == k
            vals, vecs = np.linalg.eigh(self.covs[k])
            root = vecs * np.sqrt(np.clip(vals, 0.0, None))
            out[sel] = self.means[k] + rng.standard_normal((int(sel.sum()), 2)) @ root.T
        return out

    def translated(self, offset) -> "GaussianSpatial":
        return GaussianSpatial(self.means + np.asarray(offset, float), self.covs, self.weights)


@dataclass(frozen=True, eq=False)
class UniformSpatial:
    lower: np.ndarray
    upper: np.ndarray

    def mean(self) -> np.ndarray:
        return 0.5 * (np.asarray(self.lower, float) + np.asarray(self.upper, float))

    def sample(self, rng, n: int) -> np.ndarray:
        return rng.uniform(self.lower, self.upper, size=(n, 2))

    def translated(self, offset) -> "UniformSpatial":
        o = np.asarray(offset, float)
        return UniformSpatial(np.asarray(self.lower, float) + o, np.asarray(self.upper, float) + o)


@dataclass(frozen=True, eq=False)
class Cluster:
    spatial: GaussianSpatial | UniformSpatial
    cardinality: tuple

    def __post_init__(self):
        rho = np.asarray(self.cardinality, float)
        if rho.ndim != 1 or len(rho) == 0:
            raise EmptyPmf("cardinality pmf is empty")
        if np.any(rho < 0) or abs(rho.sum() - 1.0) > 1e-9:
            raise ValueError(f"cardinality pmf must be nonnegative and sum to 1, got {rho}")
        object.__setattr__(self, "cardinality", tuple(float(v) for v in rho))

    def expected_count(self) -> float:
        return float(np.dot(np.arange(len(self.cardinality)), self.cardinality))


@dataclass(frozen=True, eq=False)
class PopulationPrior:
    clusters: tuple

    def expected_count(self) -> float:
        return float(sum(c.expected_count() for c in self.clusters))


def max_cardinality(rho: Sequence[float]) -> int:
    """Largest n with rho(n) > 0."""
    rho = np.asarray(rho, float)
    nz = np.flatnonzero(rho > 0)
    if len(nz) == 0:
        raise EmptyPmf("pmf has no positive mass")
    return int(nz[-1])


def sample_track_particles(cluster: Cluster, n_particles: int, rng) -> ParticleCloud:
    """Equal-weight cloud at positions drawn from the cluster, zero velocity."""
    if n_particles < 1:
        raise ValueError("n_particles must be >= 1")
    pos = cluster.spatial.sample(rng, n_particles)
    states = np.hstack([pos, np.zeros((n_particles, 2))])
    return ParticleCloud.uniform(states)


def init_cluster_hypotheses(cluster: Cluster, label_base: int, rng=None,
                            n_particles: int = 1000) -> GlmbDensity:
    """All label subsets of the cluster; each k-subset weighted rho(k)/C(N, k)."""
    rng = np.random.default_rng(0) if rng is None else rng
    rho = cluster.cardinality
    N = max_cardinality(rho)
    labels = [Label(0, label_base + i) for i in range(N)]
    states = {l: sample_track_particles(cluster, n_particles, rng) for l in labels}
    hyps = []
    for k in range(N + 1):
        w = rho[k] / comb(N, k)
        for subset in itertools.combinations(labels, k):
            hyps.append((subset, w))
    if N == 0:
        return GlmbDensity.empty()
    return GlmbDensity.from_label_sets(states, hyps)


def merge_cluster_priors(per_cluster: Sequence[GlmbDensity], cap: int = 1000) -> GlmbDensity:
    """Independent-cluster product, keeping the ``cap`` heaviest joint hypotheses.

    Partial products are truncated to ``cap`` as they are formed; with
    nonnegative weights this keeps exactly the top-``cap`` full products.
    """
    if not per_cluster:
        return GlmbDensity.empty()
    acc = per_cluster[0]
    for d in per_cluster[1:]:
        if set(acc.labels) & set(d.labels):
            raise ValueError("cluster label ranges overlap")
        offset = len(acc.components)
        w = (acc.weights[:, None] * d.weights[None, :]).ravel()
        left = np.repeat(acc.table, len(d), axis=0)
        right = np.tile(np.where(d.table >= 0, d.table + offset, -1), (len(acc), 1))
        table = np.hstack([left, right])
        order = np.argsort(-w, kind="stable")[:cap]
        acc = compact(acc.labels + d.labels, table[order], w[order],
                      acc.components + d.components, merge=False)
    if len(acc) > cap:
        order = np.argsort(-acc.weights, kind="stable")[:cap]
        acc = compact(acc.labels, acc.table[order], acc.weights[order], acc.components, merge=False)
    total = acc.weights.sum()
    return acc.with_weights(acc.weights / total)


def initial_belief(prior: PopulationPrior, n_particles: int, rng, cap: int = 1000) -> GlmbDensity:
    per_cluster = []
    base = 0
    for cluster in prior.clusters:
        d = init_cluster_hypotheses(cluster, base, rng, n_particles)
        base += max_cardinality(cluster.cardinality)
        if len(d.labels):
            per_cluster.append(d)
    return merge_cluster_priors(per_cluster, cap)
