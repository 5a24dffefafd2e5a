"""OSPA and windowed trajectory OSPA (OSPA^2) with localization/cardinality split."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, NamedTuple, Sequence

import numpy as np

from .assignment import assignment_solve


@dataclass(frozen=True)
class MetricConfig:
    cutoff: float = 50.0
    order: float = 1.0
    window: int = 10

    def __post_init__(self):
        if self.cutoff <= 0 or self.order < 1 or self.window < 1:
            raise ValueError("need cutoff > 0, order >= 1, window >= 1")


class OspaResult(NamedTuple):
    total: float
    loc: float
    card: float


def _ospa_from_costs(D: np.ndarray, n: int, m: int, c: float, p: float) -> OspaResult:
    """OSPA given an n x m matrix of already cut-off base distances."""
    if n == 0 and m == 0:
        return OspaResult(0.0, 0.0, 0.0)
    big = max(n, m)
    if n and m:
        pairs, _ = assignment_solve(D ** p, lexicographic=False)
        loc_sum = float(sum(D[i, j] ** p for i, j in pairs))
    else:
        loc_sum = 0.0
    card_sum = c ** p * abs(n - m)
    total = ((loc_sum + card_sum) / big) ** (1.0 / p)
    return OspaResult(total, (loc_sum / big) ** (1.0 / p), (card_sum / big) ** (1.0 / p))


def ospa(X, Y, cfg: MetricConfig = MetricConfig()) -> OspaResult:
    """OSPA of order p with cutoff c between two position sets."""
    X = np.asarray(X, float).reshape(-1, 2)
    Y = np.asarray(Y, float).reshape(-1, 2)
    c = cfg.cutoff
    D = np.minimum(np.linalg.norm(X[:, None, :] - Y[None, :, :], axis=-1), c)
    return _ospa_from_costs(D, len(X), len(Y), c, cfg.order)


Trajectory = Sequence[Mapping]   # one {track_id: position} per step


def _track_distance(a: np.ndarray, b: np.ndarray, c: float, p: float) -> float:
    """Time-averaged cut-off distance between two tracks over a window.

    ``a``/``b`` are (w, 2) arrays with NaN rows where the track does not exist.
    Steps where neither exists are ignored.
    """
    ea = ~np.isnan(a[:, 0])
    eb = ~np.isnan(b[:, 0])
    either = ea | eb
    if not either.any():
        return 0.0
    d = np.full(len(a), c)
    both = ea & eb
    d[both] = np.minimum(np.linalg.norm(a[both] - b[both], axis=1), c)
    return float(np.mean(d[either] ** p) ** (1.0 / p))


def _stack(traj: Trajectory, steps: range) -> dict:
    ids = sorted({i for k in steps for i in traj[k]}, key=repr)
    out = {}
    for i in ids:
        arr = np.full((len(steps), 2), np.nan)
        for t, k in enumerate(steps):
            if i in traj[k]:
                arr[t] = np.asarray(traj[k][i], float)[:2]
        out[i] = arr
    return out


def ospa2_window(truth_traj: Trajectory, est_traj: Trajectory,
                 cfg: MetricConfig = MetricConfig()) -> list[OspaResult]:
    """OSPA^2 at every step over the trailing window of ``cfg.window`` steps."""
    if len(truth_traj) != len(est_traj):
        raise ValueError("trajectories must share the same step grid")
    return [ospa2_at(truth_traj, est_traj, k, cfg) for k in range(len(truth_traj))]


def ospa2_at(truth_traj: Trajectory, est_traj: Trajectory, k: int,
             cfg: MetricConfig = MetricConfig()) -> OspaResult:
    steps = range(max(0, k - cfg.window + 1), k + 1)
    X = list(_stack(truth_traj, steps).values())
    Y = list(_stack(est_traj, steps).values())
    c, p = cfg.cutoff, cfg.order
    D = np.array([[_track_distance(x, y, c, p) for y in Y] for x in X]).reshape(len(X), len(Y))
    return _ospa_from_costs(D, len(X), len(Y), c, p)
