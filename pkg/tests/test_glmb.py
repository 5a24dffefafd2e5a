import itertools

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy.stats import multivariate_normal

from searchtrack.glmb import (FilterConfig, MotionModel, SensorModel, ZeroClutterDensity,
                              adaptive_birth, association_likelihood, predict, promote_tracks,
                              resample_cloud, truncate, update, update_detailed)
from searchtrack.rfs import (GaussianMixture, GlmbDensity, Label, ParticleCloud, glmb_to_lmb)

SENSOR = SensorModel()
AGENT = np.array([0.0, 0.0])
L1, L2 = Label(0, 0), Label(0, 1)


def gm(pos, var=25.0, vel_var=1.0):
    return GaussianMixture.single(np.r_[pos, 0.0, 0.0], np.diag([var, var, vel_var, vel_var]))


def cloud(rng, center, spread=5.0, n=200):
    pos = np.asarray(center) + spread * rng.standard_normal((n, 2))
    return ParticleCloud.uniform(np.hstack([pos, np.zeros((n, 2))]))


# ------------------------------------------------------------------ predict

def test_predict_noiseless_identity():
    s = GaussianMixture.single([1.0, 2.0, 3.0, 4.0], np.eye(4))
    d = GlmbDensity.from_label_sets({L1: s}, [((L1,), 1.0)])
    out = predict(d, MotionModel(process_noise=np.zeros((4, 4)), survival=1.0))
    np.testing.assert_allclose(out.components[0].means[0], [1.0, 2.0, 0.0, 0.0])
    np.testing.assert_allclose(out.weights, [1.0])


def test_predict_inflates_covariance():
    s = gm([0.0, 0.0], 4.0)
    d = GlmbDensity.from_label_sets({L1: s}, [((L1,), 1.0)])
    out = predict(d, MotionModel(process_noise=np.eye(4) * 9.0, survival=1.0))
    np.testing.assert_allclose(out.components[0].covs[0][:2, :2], np.eye(2) * 13.0)


def test_predict_survival_split():
    d = GlmbDensity.from_label_sets({L1: gm([0.0, 0.0])}, [((L1,), 1.0)])
    out = predict(d, MotionModel(survival=0.9))
    w = {h.labels: h.weight for h in out.hypotheses}
    assert w == pytest.approx({frozenset({L1}): 0.9, frozenset(): 0.1})


def test_predict_multistep_survival():
    d = GlmbDensity.from_label_sets({L1: gm([0.0, 0.0])}, [((L1,), 1.0)])
    out = predict(d, MotionModel(survival=0.9), steps=3)
    assert out.existence()[L1] == pytest.approx(0.9 ** 3)


def test_predict_deaths_match_enumeration(rng):
    # three tracks with different survival; every subset must be produced
    states = {Label(0, i): gm([10.0 * i, 0.0]) for i in range(3)}
    hyps = [(tuple(states), 0.7), ((Label(0, 0),), 0.3)]
    d = GlmbDensity.from_label_sets(states, hyps)
    out = predict(d, MotionModel(survival=0.8), max_hypotheses=100)
    want = {}
    for labels, w in hyps:
        for alive in itertools.product([0, 1], repeat=len(labels)):
            key = frozenset(l for l, a in zip(labels, alive) if a)
            p = w * np.prod([0.8 if a else 0.2 for a in alive])
            want[key] = want.get(key, 0.0) + p
    got = {h.labels: h.weight for h in out.hypotheses}
    assert got == pytest.approx(want, abs=1e-12)


def test_predict_keeps_heaviest_children():
    states = {Label(0, i): gm([10.0 * i, 0.0]) for i in range(6)}
    d = GlmbDensity.from_label_sets(states, [(tuple(states), 1.0)])
    out = predict(d, MotionModel(survival=0.9), max_hypotheses=7)
    # all six tracks alive (0.9^6) then each single death (0.9^5 * 0.1)
    assert len(out) == 7
    assert max(len(h.labels) for h in out.hypotheses) == 6
    assert sorted(len(h.labels) for h in out.hypotheses) == [5] * 6 + [6]


def test_predict_search_tracks_do_not_die(rng):
    d = GlmbDensity.from_label_sets({L1: cloud(rng, [0, 0])}, [((L1,), 0.6), ((), 0.4)])
    out = predict(d, MotionModel(), rng)
    np.testing.assert_allclose(out.weights, d.weights)
    assert out.expected_cardinality() == pytest.approx(d.expected_cardinality(), abs=1e-12)


def test_particle_predict_needs_rng(rng):
    d = GlmbDensity.from_label_sets({L1: cloud(rng, [0, 0])}, [((L1,), 1.0)])
    with pytest.raises(ValueError):
        predict(d, MotionModel())


# --------------------------------------------------------------- likelihood

def test_miss_outside_fov(rng):
    far = cloud(rng, [1000.0, 1000.0], 1.0)
    assert association_likelihood(far, None, SENSOR, AGENT) == 1.0


def test_miss_inside_plateau(rng):
    near = cloud(rng, [10.0, 10.0], 1.0)
    assert association_likelihood(near, None, SENSOR, AGENT) == pytest.approx(0.1175)


def test_point_mass_detection():
    x0 = np.array([20.0, 30.0])
    track = ParticleCloud.uniform(np.r_[x0, 0.0, 0.0][None])
    kappa = SENSOR.clutter_rate / (np.pi * 150.0 ** 2)
    want = 0.8825 / (2 * np.pi * 4.0 * kappa)
    assert association_likelihood(track, x0, SENSOR, AGENT) == pytest.approx(want, rel=1e-12)


def test_zero_clutter_detection_raises():
    track = ParticleCloud.uniform(np.zeros((1, 4)))
    with pytest.raises(ZeroClutterDensity):
        association_likelihood(track, [0.0, 0.0], SensorModel(clutter_rate=0.0), AGENT)


def test_detection_probability_field():
    pd = SENSOR.detection_probability(np.array([[50.0, 0], [100.0, 0], [125.0, 0], [150.0, 0],
                                                [200.0, 0]]), AGENT)
    np.testing.assert_allclose(pd, [0.8825, 0.8825, 0.8825 / 2, 0.0, 0.0])


# ------------------------------------------------------------------- update

def brute_likelihood(state, z):
    """Independent evaluation of the single-track association factors."""
    kappa = SENSOR.clutter_rate / (np.pi * SENSOR.outer_radius ** 2)
    R = np.asarray(SENSOR.noise)
    if isinstance(state, ParticleCloud):
        pos = state.states[:, :2]
        pd = SENSOR.detection_probability(pos, AGENT)
        if z is None:
            return float(np.sum(state.weights * (1 - pd)))
        g = np.array([multivariate_normal(p, R).pdf(z) for p in pos])
        return float(np.sum(state.weights * pd * g) / kappa)
    total = 0.0
    for w, m, P in zip(state.weights, state.means, state.covs):
        pd = SENSOR.detection_probability(m[:2], AGENT)
        if z is None:
            total += w * (1 - pd)
        else:
            total += w * pd * multivariate_normal(m[:2], P[:2, :2] + R).pdf(z) / kappa
    return total


def brute_update(d, Z):
    """Exhaustive enumeration over every association map of every hypothesis."""
    post = {}
    for h, row in zip(d.hypotheses, d.table):
        present = [j for j in range(len(d.labels)) if row[j] >= 0]
        for gamma in itertools.product(range(len(Z) + 1), repeat=len(present)):
            used = [g for g in gamma if g > 0]
            if len(used) != len(set(used)):
                continue
            w = h.weight
            for j, g in zip(present, gamma):
                w *= brute_likelihood(d.components[row[j]], None if g == 0 else Z[g - 1])
            key = (h.labels, tuple(sorted((d.labels[j], g) for j, g in zip(present, gamma))))
            post[key] = post.get(key, 0.0) + w
    total = sum(post.values())
    return {k: v / total for k, v in post.items()}


def filter_posterior(d, Z):
    res = update_detailed(d, Z, SENSOR, AGENT, k_best=1000, max_hypotheses=10_000)
    out = {}
    labels = res.density.labels
    for h, codes in zip(res.density.hypotheses, res.assignments):
        key = (h.labels, tuple(sorted((labels[j], int(c)) for j, c in enumerate(codes) if c >= 0)))
        out[key] = out.get(key, 0.0) + h.weight
    return out, res


@st.composite
def small_problems(draw):
    rng = np.random.default_rng(draw(st.integers(0, 2 ** 32 - 1)))
    n_tracks = draw(st.integers(1, 2))
    labels = [Label(0, i) for i in range(n_tracks)]
    states = {}
    for l in labels:
        c = rng.uniform(-130, 130, 2)
        if draw(st.booleans()):
            states[l] = cloud(rng, c, spread=rng.uniform(1, 20), n=30)
        else:
            states[l] = gm(c, rng.uniform(1, 40))
    subsets = [s for k in range(n_tracks + 1) for s in itertools.combinations(labels, k)]
    n_h = draw(st.integers(1, min(4, len(subsets))))
    pick = rng.choice(len(subsets), n_h, replace=False)
    w = rng.random(n_h) + 0.05
    d = GlmbDensity.from_label_sets(states, [(subsets[i], wi / w.sum()) for i, wi in zip(pick, w)])
    m = draw(st.integers(0, 2))
    Z = np.array([states[labels[rng.integers(n_tracks)]].mean()[:2] + rng.normal(0, 3, 2)
                  for _ in range(m)]).reshape(m, 2)
    return d, Z


@given(small_problems())
def test_update_matches_bruteforce_bayes(problem):
    d, Z = problem
    got, _ = filter_posterior(d, Z)
    want = brute_update(d, Z)
    # the gate may remove maps whose weight is below e^-60 of the alternative
    want = {k: v for k, v in want.items() if v > 1e-20}
    got = {k: v for k, v in got.items() if v > 1e-20}
    assert set(got) == set(want)
    for k in want:
        assert got[k] == pytest.approx(want[k], rel=1e-9, abs=1e-15)


def test_update_posterior_particle_weights(rng):
    c = cloud(rng, [10.0, 0.0], 3.0, n=50)
    d = GlmbDensity.from_label_sets({L1: c}, [((L1,), 1.0)])
    z = np.array([11.0, 1.0])
    res = update_detailed(d, z[None], SENSOR, AGENT)
    comps = {tuple(a): comp for a, comp in zip(res.assignments[:, 0:1].tolist(),
                                               [res.density.components[r[0]]
                                                for r in res.density.table])}
    det = comps[(1,)]
    pd = SENSOR.detection_probability(c.states[:, :2], AGENT)
    lik = c.weights * pd * np.array([multivariate_normal(p, 4 * np.eye(2)).pdf(z)
                                     for p in c.states[:, :2]])
    np.testing.assert_allclose(det.weights, lik / lik.sum(), rtol=1e-9)


def test_update_gaussian_kalman():
    s = gm([5.0, 0.0], 16.0)
    d = GlmbDensity.from_label_sets({L1: s}, [((L1,), 1.0)])
    z = np.array([7.0, 1.0])
    res = update_detailed(d, z[None], SENSOR, AGENT)
    hit = [res.density.components[row[0]] for row, a in
           zip(res.density.table, res.assignments) if a[0] == 1][0]
    K = 16.0 / 20.0
    np.testing.assert_allclose(hit.means[0][:2], [5.0 + K * 2.0, K * 1.0])
    np.testing.assert_allclose(hit.covs[0][:2, :2], np.eye(2) * 16.0 * (1 - K), rtol=1e-12)


def test_empty_scan_outside_fov_is_identity(rng):
    d = GlmbDensity.from_label_sets({L1: cloud(rng, [900, 900])}, [((L1,), 0.5), ((), 0.5)])
    out = update(d, np.zeros((0, 2)), SENSOR, AGENT)
    assert out.existence()[L1] == pytest.approx(0.5, abs=1e-12)


def test_negative_observation_two_hypotheses(rng):
    d = GlmbDensity.from_label_sets({L1: cloud(rng, [10, 10], 2.0)}, [((L1,), 0.5), ((), 0.5)])
    out = update(d, np.zeros((0, 2)), SENSOR, AGENT)
    assert out.existence()[L1] == pytest.approx(0.5 * 0.1175 / (0.5 + 0.5 * 0.1175), abs=1e-12)


def test_existence_decreases_without_detections(rng):
    d = GlmbDensity.from_label_sets({L1: cloud(rng, [20, 0], 2.0)}, [((L1,), 0.9), ((), 0.1)])
    r = [d.existence()[L1]]
    for _ in range(6):
        d = update(d, np.zeros((0, 2)), SENSOR, AGENT)
        r.append(d.existence()[L1])
    assert np.all(np.diff(r) < 0)


def test_detection_at_mean_raises_existence():
    d = GlmbDensity.from_label_sets({L1: gm([30.0, 0.0], 4.0)}, [((L1,), 0.4), ((), 0.6)])
    out = update(d, np.array([[30.0, 0.0]]), SENSOR, AGENT)
    assert glmb_to_lmb(out).tracks[L1][0] > 0.4


def test_update_keeps_labels(rng):
    states = {L1: cloud(rng, [10, 0]), L2: gm([50.0, 20.0])}
    d = GlmbDensity.from_label_sets(states, [((L1, L2), 0.5), ((L1,), 0.3), ((), 0.2)])
    out = update(d, np.array([[50.0, 21.0], [-80.0, 3.0]]), SENSOR, AGENT)
    assert set(out.labels) <= set(d.labels)
    assert out.weights.sum() == pytest.approx(1.0, abs=1e-9)


def test_stationary_target_confirmed():
    sensor = SensorModel(clutter_rate=0.0)
    target = np.array([40.0, -20.0])
    final_r, traces = [], []
    for seed in range(50):
        rng = np.random.default_rng(seed)
        d = GlmbDensity.from_label_sets({L1: gm(target + rng.normal(0, 3, 2), 25.0)},
                                        [((L1,), 0.5), ((), 0.5)])
        tr = []
        for _ in range(20):
            hit = rng.random() < sensor.detection_probability(target, AGENT)
            Z = (target + rng.normal(0, 2, 2))[None] if hit else np.zeros((0, 2))
            d = update(d, Z, sensor, AGENT)
            lmb = glmb_to_lmb(d)
            tr.append(np.trace(lmb.tracks[L1][1].covariance()[:2, :2]))
        final_r.append(d.existence()[L1])
        traces.append(tr)
    assert min(final_r) > 0.99
    assert np.all(np.diff(np.mean(traces, axis=0)) <= 1e-9)


# -------------------------------------------------------------- maintenance

def _three():
    states = {L1: gm([0.0, 0.0]), L2: gm([9.0, 9.0])}
    return GlmbDensity.from_label_sets(states, [((L1,), 0.5), ((L1, L2), 0.3), ((), 0.2)])


def test_truncate_identity():
    d = _three()
    out = truncate(d, np.inf, 0.0)
    np.testing.assert_allclose(out.weights, d.weights)
    assert np.array_equal(out.table, d.table)


def test_truncate_cap():
    d = GlmbDensity.from_label_sets({L1: gm([0.0, 0.0])}, [((L1,), 0.9), ((), 0.1)])
    out = truncate(d, 1, 0.0)
    assert len(out) == 1 and out.weights[0] == 1.0 and out.existence()[L1] == 1.0


def test_truncate_drops_rare_label_and_merges():
    states = {L1: gm([0.0, 0.0]), L2: gm([9.0, 9.0])}
    d = GlmbDensity.from_label_sets(states, [((L1,), 0.5), ((L1, L2), 1e-6), ((), 0.5 - 1e-6)])
    out = truncate(d, np.inf, 1e-3)
    assert out.labels == (L1,)
    assert {h.labels: h.weight for h in out.hypotheses} == pytest.approx(
        {frozenset({L1}): 0.5 + 1e-6, frozenset(): 0.5 - 1e-6}, abs=1e-12)


@given(st.integers(1, 5), st.floats(0.0, 0.5))
def test_truncate_normalized(cap, thr):
    out = truncate(_three(), cap, thr)
    assert len(out) >= 1
    assert out.weights.sum() == pytest.approx(1.0, abs=1e-9)


def test_promote_moment_matching():
    c = ParticleCloud.uniform(np.array([[0.0, 0, 0, 0], [2.0, 0, 0, 0]]))
    d = GlmbDensity.from_label_sets({L1: c}, [((L1,), 0.7), ((), 0.3)])
    out = promote_tracks(d, 25.0)
    g = out.components[0]
    assert isinstance(g, GaussianMixture)
    np.testing.assert_allclose(g.means[0], [1.0, 0, 0, 0])
    assert g.covs[0][0, 0] == pytest.approx(1.0)
    assert 0 < g.covs[0][1, 1] < 1e-6
    assert out.existence()[L1] == pytest.approx(0.7)


def test_promote_threshold(rng):
    tight = cloud(rng, [0, 0], np.sqrt(5.0), n=4000)     # trace about 10
    wide = cloud(rng, [0, 0], np.sqrt(50.0), n=4000)     # trace about 100
    for c, promoted in [(tight, True), (wide, False)]:
        d = GlmbDensity.from_label_sets({L1: c}, [((L1,), 1.0)])
        out = promote_tracks(d, 25.0).components[0]
        assert isinstance(out, GaussianMixture) is promoted
        if promoted:
            np.testing.assert_allclose(out.means[0], c.mean(), atol=1e-9)
            # the zero velocity spread is regularized with eps*I, positions are exact
            np.testing.assert_allclose(out.covs[0][:2, :2], c.covariance()[:2, :2], atol=1e-9)
            eps = 1e-8 * np.trace(c.covariance()) / 4
            np.testing.assert_allclose(np.diag(out.covs[0])[2:], eps, rtol=1e-9)


def test_birth_cases():
    d = GlmbDensity.from_label_sets({L1: gm([0.0, 0.0])}, [((L1,), 1.0)])
    assert adaptive_birth(d, np.array([[1.0, 1.0]]), SENSOR, P_B=0.0) is d
    out = adaptive_birth(d, np.array([[1.0, 1.0]]), SENSOR, P_B=0.1, step=4)
    assert sorted(out.weights) == pytest.approx([0.1, 0.9])
    assert Label(4, 0) in out.labels
    out = adaptive_birth(GlmbDensity.empty(), np.array([[1.0, 1.0], [5.0, 5.0]]), SENSOR,
                         P_B=0.1, step=2)
    assert sorted(out.weights) == pytest.approx([0.01, 0.09, 0.09, 0.81])
    born = out.components[0]
    np.testing.assert_allclose(born.means[0], [1.0, 1.0, 0, 0])
    np.testing.assert_allclose(born.covs[0][:2, :2], np.eye(2) * 16.0)


@given(st.integers(0, 3), st.floats(0.01, 0.5))
def test_birth_normalized(n, pb):
    out = adaptive_birth(_three(), np.arange(2 * n, dtype=float).reshape(n, 2), SENSOR, P_B=pb,
                         step=9)
    assert out.weights.sum() == pytest.approx(1.0, abs=1e-9)
    assert out.expected_cardinality() == pytest.approx(_three().expected_cardinality() + n * pb,
                                                       abs=1e-9)


def test_resample_rules(rng):
    M = 100
    u = ParticleCloud.uniform(rng.random((M, 4)))
    assert u.ess() == pytest.approx(M) and resample_cloud(u, M, rng) is u
    w = np.zeros(M)
    w[7] = 1.0
    deg = ParticleCloud(rng.random((M, 4)), w)
    assert deg.ess() == pytest.approx(1.0)
    out = resample_cloud(deg, M, rng)
    assert len(out) == M and np.all(out.states == deg.states[7])
    np.testing.assert_allclose(out.weights, 1.0 / M)
    w = np.zeros(M)
    w[:2] = 0.5
    assert ParticleCloud(rng.random((M, 4)), w).ess() == pytest.approx(2.0)


def test_filter_config_defaults():
    cfg = FilterConfig()
    assert (cfg.k_best, cfg.max_hypotheses, cfg.min_existence) == (50, 1000, 1e-4)
    assert cfg.n_particles == 1000
