"""Labeled RFS densities: track states, GLMB and LMB containers, conversions.

A GLMB is stored as a hypothesis table.  Row ``h`` of ``table`` lists, for every
label column, the index of the track component used by hypothesis ``h`` or -1
when the label is absent.  Components are per (label, association history), so
two hypotheses that share a component index share the same history for that
label.  All containers are treated as immutable values.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Hashable, Iterable, Mapping, NamedTuple, Sequence

import numpy as np

STATE_DIM = 4
POS = slice(0, 2)


class AllZeroWeights(ValueError):
    """Raised when a density has no hypothesis with positive weight."""


class Label(NamedTuple):
    birth_step: int
    index: int

    def __repr__(self) -> str:
        return f"L{self.birth_step}.{self.index}"


def _frozen(a, dtype=float) -> np.ndarray:
    a = np.array(a, dtype=dtype)
    a.setflags(write=False)
    return a


def regularize_covariance(cov: np.ndarray, max_condition: float = 1e12) -> np.ndarray:
    """Symmetrize ``cov`` and add eps*I when it is (near) singular.

    Accepts a single matrix or a stack of them.
    """
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    d = cov.shape[-1]
    with np.errstate(divide="ignore", invalid="ignore"):
        bad = ~(np.linalg.cond(cov) <= max_condition)
    if np.any(bad):
        eps = np.maximum(1e-8 * np.trace(cov, axis1=-2, axis2=-1) / d, 1e-12)
        cov = cov + np.where(bad, eps, 0.0)[..., None, None] * np.eye(d)
    return cov


@dataclass(frozen=True, eq=False)
class ParticleCloud:
    states: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "states", _frozen(np.atleast_2d(self.states)))
        object.__setattr__(self, "weights", _frozen(self.weights))
        if len(self.weights) < 1 or len(self.weights) != len(self.states):
            raise ValueError("particle cloud needs matching, non-empty states and weights")

    @classmethod
    def uniform(cls, states) -> "ParticleCloud":
        states = np.atleast_2d(states)
        return cls(states, np.full(len(states), 1.0 / len(states)))

    def __len__(self) -> int:
        return len(self.weights)

    def mean(self) -> np.ndarray:
        return self.weights @ self.states

    def covariance(self) -> np.ndarray:
        d = self.states - self.mean()
        return (self.weights[:, None] * d).T @ d

    def ess(self) -> float:
        return 1.0 / float(np.sum(self.weights ** 2))


@dataclass(frozen=True, eq=False)
class GaussianMixture:
    weights: np.ndarray
    means: np.ndarray
    covs: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "weights", _frozen(np.atleast_1d(self.weights)))
        object.__setattr__(self, "means", _frozen(np.atleast_2d(self.means)))
        covs = np.asarray(self.covs, dtype=float)
        if covs.ndim == 2:
            covs = covs[None]
        object.__setattr__(self, "covs", _frozen(covs))

    @classmethod
    def single(cls, mean, cov) -> "GaussianMixture":
        return cls(np.ones(1), np.asarray(mean, float)[None], np.asarray(cov, float)[None])

    def __len__(self) -> int:
        return len(self.weights)

    def mean(self) -> np.ndarray:
        return self.weights @ self.means

    def covariance(self) -> np.ndarray:
        mu = self.mean()
        d = self.means - mu
        spread = (self.weights[:, None] * d).T @ d
        return np.einsum("i,ijk->jk", self.weights, self.covs) + spread


TrackState = ParticleCloud | GaussianMixture


def position_mean(state: TrackState) -> np.ndarray:
    return state.mean()[POS]


def position_covariance(state: TrackState) -> np.ndarray:
    return state.covariance()[POS, POS]


@dataclass(frozen=True)
class Hypothesis:
    labels: frozenset
    weight: float
    history_id: Hashable


@dataclass(frozen=True, eq=False)
class GlmbDensity:
    """Weighted hypotheses over label sets with per-(label, history) track states."""

    labels: tuple
    table: np.ndarray
    weights: np.ndarray
    components: tuple

    def __post_init__(self):
        table = np.asarray(self.table, dtype=np.int64).reshape(len(self.weights), len(self.labels))
        object.__setattr__(self, "table", _frozen(table, np.int64))
        object.__setattr__(self, "weights", _frozen(self.weights))
        object.__setattr__(self, "labels", tuple(self.labels))
        object.__setattr__(self, "components", tuple(self.components))

    # construction -----------------------------------------------------------
    @classmethod
    def empty(cls) -> "GlmbDensity":
        return cls((), np.zeros((1, 0), np.int64), np.ones(1), ())

    @classmethod
    def from_label_sets(cls, states: Mapping[Label, TrackState],
                        hypotheses: Iterable[tuple[Iterable[Label], float]]) -> "GlmbDensity":
        """Build a density where each label has a single history."""
        labels = tuple(sorted(states))
        col = {l: i for i, l in enumerate(labels)}
        rows, weights = [], []
        for label_set, w in hypotheses:
            row = np.full(len(labels), -1, np.int64)
            for l in label_set:
                row[col[l]] = col[l]
            rows.append(row)
            weights.append(w)
        table = np.array(rows, np.int64).reshape(len(rows), len(labels))
        return cls(labels, table, np.array(weights, float), tuple(states[l] for l in labels))

    @classmethod
    def from_hypotheses(cls, hypotheses: Sequence[Hypothesis],
                        tracks: Mapping[tuple[Label, Hashable], TrackState]) -> "GlmbDensity":
        """Build from explicit hypotheses and a (label, history_id) -> state map."""
        labels = tuple(sorted({l for h in hypotheses for l in h.labels}))
        col = {l: i for i, l in enumerate(labels)}
        comp_index: dict = {}
        comps: list = []
        table = np.full((len(hypotheses), len(labels)), -1, np.int64)
        for r, h in enumerate(hypotheses):
            for l in h.labels:
                key = (l, h.history_id)
                if key not in tracks:
                    raise KeyError(f"no track state for {key!r}")
                if key not in comp_index:
                    comp_index[key] = len(comps)
                    comps.append(tracks[key])
                table[r, col[l]] = comp_index[key]
        return cls(labels, table, np.array([h.weight for h in hypotheses], float), tuple(comps))

    # views ------------------------------------------------------------------
    @property
    def present(self) -> np.ndarray:
        return self.table >= 0

    @property
    def hypotheses(self) -> list[Hypothesis]:
        out = []
        for row, w in zip(self.table, self.weights):
            idx = np.flatnonzero(row >= 0)
            out.append(Hypothesis(frozenset(self.labels[i] for i in idx), float(w),
                                  tuple(int(row[i]) for i in idx)))
        return out

    @property
    def tracks(self) -> dict:
        out = {}
        for h, row in zip(self.hypotheses, self.table):
            for i in np.flatnonzero(row >= 0):
                out[(self.labels[i], h.history_id)] = self.components[row[i]]
        return out

    def __len__(self) -> int:
        return len(self.weights)

    def cardinalities(self) -> np.ndarray:
        return self.present.sum(axis=1)

    def cardinality_pmf(self) -> np.ndarray:
        return np.bincount(self.cardinalities(), weights=self.weights,
                           minlength=len(self.labels) + 1)

    def expected_cardinality(self) -> float:
        return float(self.weights @ self.cardinalities())

    def existence(self) -> dict:
        r = self.weights @ self.present
        return {l: float(v) for l, v in zip(self.labels, r)}

    def component_label(self) -> np.ndarray:
        """Column index owning each component (-1 if unused)."""
        owner = np.full(len(self.components), -1, np.int64)
        for j in range(len(self.labels)):
            col = self.table[:, j]
            owner[col[col >= 0]] = j
        return owner

    def with_weights(self, weights) -> "GlmbDensity":
        return GlmbDensity(self.labels, self.table, weights, self.components)


def compact(labels: Sequence[Label], table: np.ndarray, weights: np.ndarray,
            components: Sequence[TrackState], merge: bool = True) -> GlmbDensity:
    """Drop unused labels/components; optionally merge identical rows."""
    table = np.asarray(table, np.int64)
    weights = np.asarray(weights, float)
    if len(weights) == 0:
        raise AllZeroWeights("no hypotheses left")
    if merge and len(weights) > 1:
        uniq, inv = np.unique(table, axis=0, return_inverse=True)
        if len(uniq) < len(table):
            inv = inv.reshape(-1)
            summed = np.bincount(inv, weights=weights, minlength=len(uniq))
            # keep the order of first appearance
            first = np.full(len(uniq), len(inv))
            np.minimum.at(first, inv, np.arange(len(inv)))
            order = np.argsort(first, kind="stable")
            table, weights = uniq[order], summed[order]
    keep_cols = np.flatnonzero((table >= 0).any(axis=0))
    table = table[:, keep_cols]
    labels = [labels[j] for j in keep_cols]
    used = np.unique(table[table >= 0])
    remap = np.full(len(components) + 1, -1, np.int64)
    remap[used] = np.arange(len(used))
    table = np.where(table >= 0, remap[table], -1)
    return GlmbDensity(tuple(labels), table, weights, tuple(components[c] for c in used))


def normalize_hypotheses(density: GlmbDensity) -> GlmbDensity:
    total = float(np.sum(density.weights))
    if not total > 0.0:
        raise AllZeroWeights("total hypothesis weight is zero")
    return density.with_weights(density.weights / total)


def normalize_log_weights(logw: np.ndarray) -> np.ndarray:
    logw = np.asarray(logw, float)
    top = np.max(logw)
    if not np.isfinite(top):
        raise AllZeroWeights("all log weights are -inf")
    w = np.exp(logw - top)
    return w / w.sum()


@dataclass
class LmbDensity:
    tracks: dict = field(default_factory=dict)  # Label -> (existence, TrackState)

    def existence(self) -> dict:
        return {l: r for l, (r, _) in self.tracks.items()}

    def __len__(self) -> int:
        return len(self.tracks)


def gaussian_sigma_points(gm: GaussianMixture) -> ParticleCloud:
    """Equal-weight 2n-point set matching each component's first two moments."""
    c, n = gm.means.shape
    L = np.linalg.cholesky(regularize_covariance(gm.covs)) * np.sqrt(n)
    offsets = np.swapaxes(L, -1, -2)                      # rows are the columns of L
    pts = gm.means[:, None, :] + np.concatenate([offsets, -offsets], axis=1)
    return ParticleCloud(pts.reshape(2 * n * c, n), np.repeat(gm.weights / (2 * n), 2 * n))


def mix_states(states: Sequence[TrackState], weights: Sequence[float]) -> TrackState:
    """Weighted mixture of track states (weights need not be normalized)."""
    weights = np.asarray(weights, float)
    weights = weights / weights.sum()
    if len(states) == 1:
        return states[0]
    if all(isinstance(s, GaussianMixture) for s in states):
        return GaussianMixture(np.concatenate([w * s.weights for s, w in zip(states, weights)]),
                               np.vstack([s.means for s in states]),
                               np.concatenate([s.covs for s in states]))
    clouds = [s if isinstance(s, ParticleCloud) else gaussian_sigma_points(s) for s in states]
    return ParticleCloud(np.vstack([c.states for c in clouds]),
                         np.concatenate([w * c.weights for c, w in zip(clouds, weights)]))


def glmb_to_lmb(density: GlmbDensity) -> LmbDensity:
    """Marginalize a GLMB into the LMB with matching existence and label states."""
    out = {}
    for j, label in enumerate(density.labels):
        col = density.table[:, j]
        mask = col >= 0
        if not mask.any():
            continue
        r = float(density.weights[mask].sum())
        comps, inv = np.unique(col[mask], return_inverse=True)
        per_comp = np.bincount(inv.reshape(-1), weights=density.weights[mask], minlength=len(comps))
        if r <= 0.0:
            state = density.components[comps[0]]
        else:
            state = mix_states([density.components[c] for c in comps], per_comp)
        out[label] = (min(r, 1.0), state)
    return LmbDensity(out)


def map_estimate(density: GlmbDensity) -> dict:
    """MAP-cardinality estimate: best hypothesis of the most probable cardinality.

    Returns a mapping label -> mean state vector.
    """
    if len(density.labels) == 0:
        return {}
    card = density.cardinalities()
    pmf = np.bincount(card, weights=density.weights)
    n_hat = int(np.argmax(pmf))
    candidates = np.flatnonzero(card == n_hat)
    best = candidates[np.argmax(density.weights[candidates])]
    row = density.table[best]
    return {density.labels[j]: density.components[row[j]].mean() for j in np.flatnonzero(row >= 0)}
