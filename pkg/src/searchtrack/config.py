"""Scenario configuration files: strict JSON schema, (de)serialization, digest.

Layout (all sections except ``workspace``, ``duration`` and ``clusters`` are
optional and fall back to defaults)::

    {
      "name": "BaseConfig", "seed": 0, "duration": 500,
      "workspace": {"lower": [0, 0], "upper": [1216, 1230]},
      "clusters": [{"spatial": {...}, "cardinality": [0.2, 0.5, 0.3]}, ...],
      "truth_clusters": [...],            # defaults to "clusters"
      "sensor": {"pd_plateau", "inner_radius", "outer_radius", "noise", "clutter_rate"},
      "motion": {"process_noise", "survival", "search_survival"},
      "planner": {"horizon", "sampling_interval", "hypervolume_unit", "action_count",
                  "step_length", "entropy_sign_convention", "rollout_hypotheses"},
      "filter_caps": {"k_best", "max_hypotheses", "min_existence"},
      "filter": {"n_particles", "promotion_trace", "birth_probability",
                 "birth_velocity_var", "birth_association_threshold"},
      "metric": {"cutoff", "order", "window"}
    }

A spatial density is one of ``{"type": "gaussian", "mean", "cov"}``,
``{"type": "mixture", "weights", "means", "covs"}`` or
``{"type": "uniform", "lower", "upper"}``.  Unknown keys are rejected.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict

import jsonschema
import numpy as np

from .belief import Cluster, GaussianSpatial, PopulationPrior, UniformSpatial
from .glmb import FilterConfig, MotionModel, SensorModel
from .metrics import MetricConfig
from .planner import PlannerConfig, Workspace
from .world import Scenario

_num = {"type": "number"}
_int = {"type": "integer", "minimum": 0}
_vec2 = {"type": "array", "items": _num, "minItems": 2, "maxItems": 2}


def _matrix(n):
    row = {"type": "array", "items": _num, "minItems": n, "maxItems": n}
    return {"type": "array", "items": row, "minItems": n, "maxItems": n}


def _obj(props: dict, required=()) -> dict:
    return {"type": "object", "properties": props, "required": list(required),
            "additionalProperties": False}


_spatial = {"oneOf": [
    _obj({"type": {"const": "gaussian"}, "mean": _vec2, "cov": _matrix(2)},
         ["type", "mean", "cov"]),
    _obj({"type": {"const": "mixture"}, "weights": {"type": "array", "items": _num},
          "means": {"type": "array", "items": _vec2},
          "covs": {"type": "array", "items": _matrix(2)}},
         ["type", "weights", "means", "covs"]),
    _obj({"type": {"const": "uniform"}, "lower": _vec2, "upper": _vec2},
         ["type", "lower", "upper"]),
]}
_cluster = _obj({"spatial": _spatial,
                 "cardinality": {"type": "array", "items": {"type": "number", "minimum": 0},
                                 "minItems": 1}},
                ["spatial", "cardinality"])
_clusters = {"type": "array", "items": _cluster}

SCHEMA = _obj({
    "name": {"type": "string"},
    "seed": _int,
    "duration": {"type": "integer", "minimum": 1},
    "workspace": _obj({"lower": _vec2, "upper": _vec2}, ["lower", "upper"]),
    "clusters": _clusters,
    "truth_clusters": _clusters,
    "sensor": _obj({"pd_plateau": {"type": "number", "minimum": 0, "maximum": 1},
                    "inner_radius": _num, "outer_radius": _num, "noise": _matrix(2),
                    "clutter_rate": {"type": "number", "minimum": 0}}),
    "motion": _obj({"process_noise": _matrix(4),
                    "survival": {"type": "number", "minimum": 0, "maximum": 1},
                    "search_survival": {"type": "number", "minimum": 0, "maximum": 1}}),
    "planner": _obj({"horizon": {"type": "integer", "minimum": 1},
                     "sampling_interval": {"type": "integer", "minimum": 1},
                     "hypervolume_unit": {"type": "number", "exclusiveMinimum": 0},
                     "action_count": {"type": "integer", "minimum": 1},
                     "step_length": _num,
                     "entropy_sign_convention": {"enum": ["paper", "shannon"]},
                     "rollout_hypotheses": {"type": "integer", "minimum": 1}}),
    "filter_caps": _obj({"k_best": {"type": "integer", "minimum": 1},
                         "max_hypotheses": {"type": "integer", "minimum": 1},
                         "min_existence": {"type": "number", "minimum": 0}}),
    "filter": _obj({"n_particles": {"type": "integer", "minimum": 1},
                    "promotion_trace": _num, "birth_probability": {"type": "number",
                                                                   "minimum": 0, "maximum": 1},
                    "birth_velocity_var": _num, "birth_association_threshold": _num}),
    "metric": _obj({"cutoff": {"type": "number", "exclusiveMinimum": 0},
                    "order": {"type": "number", "minimum": 1},
                    "window": {"type": "integer", "minimum": 1}}),
}, ["workspace", "duration", "clusters"])

_CAP_FIELDS = ("k_best", "max_hypotheses", "min_existence")


class ConfigError(ValueError):
    pass


def _spatial_to_dict(s) -> dict:
    if isinstance(s, UniformSpatial):
        return {"type": "uniform", "lower": list(map(float, s.lower)),
                "upper": list(map(float, s.upper))}
    if len(s.weights) == 1:
        return {"type": "gaussian", "mean": s.means[0].tolist(), "cov": s.covs[0].tolist()}
    return {"type": "mixture", "weights": s.weights.tolist(), "means": s.means.tolist(),
            "covs": s.covs.tolist()}


def _spatial_from_dict(d: dict):
    if d["type"] == "uniform":
        return UniformSpatial(np.array(d["lower"], float), np.array(d["upper"], float))
    if d["type"] == "gaussian":
        return GaussianSpatial(d["mean"], d["cov"])
    return GaussianSpatial(d["means"], d["covs"], d["weights"])


def _prior_to_list(prior: PopulationPrior) -> list:
    return [{"spatial": _spatial_to_dict(c.spatial), "cardinality": list(c.cardinality)}
            for c in prior.clusters]


def _prior_from_list(items: list) -> PopulationPrior:
    clusters = []
    for c in items:
        rho = np.asarray(c["cardinality"], float)
        total = rho.sum()
        if abs(total - 1.0) > 1e-6:
            raise ConfigError(f"cardinality pmf sums to {total}, expected 1")
        if abs(total - 1.0) > 1e-12:
            rho = rho / total
        clusters.append(Cluster(_spatial_from_dict(c["spatial"]), tuple(rho)))
    return PopulationPrior(tuple(clusters))


def _plain(obj) -> dict:
    out = {}
    for k, v in asdict(obj).items():
        out[k] = v.tolist() if isinstance(v, np.ndarray) else v
    return out


def scenario_to_dict(sc: Scenario) -> dict:
    motion = _plain(sc.motion)
    motion.pop("transition")
    flt = _plain(sc.filter)
    return {
        "name": sc.name,
        "seed": int(sc.seed),
        "duration": int(sc.duration),
        "workspace": {"lower": list(map(float, sc.workspace.lower)),
                      "upper": list(map(float, sc.workspace.upper))},
        "clusters": _prior_to_list(sc.prior),
        "truth_clusters": _prior_to_list(sc.truth_prior),
        "sensor": _plain(sc.sensor),
        "motion": motion,
        "planner": _plain(sc.planner),
        "filter_caps": {k: flt.pop(k) for k in _CAP_FIELDS},
        "filter": flt,
        "metric": _plain(sc.metric),
    }


def scenario_from_dict(d: dict) -> Scenario:
    try:
        jsonschema.validate(d, SCHEMA)
    except jsonschema.ValidationError as exc:
        path = "/".join(map(str, exc.absolute_path)) or "<root>"
        raise ConfigError(f"{path}: {exc.message}") from None
    prior = _prior_from_list(d["clusters"])
    truth = _prior_from_list(d["truth_clusters"]) if "truth_clusters" in d else prior
    sensor = dict(d.get("sensor", {}))
    if "noise" in sensor:
        sensor["noise"] = np.array(sensor["noise"], float)
    motion = dict(d.get("motion", {}))
    if "process_noise" in motion:
        motion["process_noise"] = np.array(motion["process_noise"], float)
    try:
        return Scenario(
            workspace=Workspace(tuple(d["workspace"]["lower"]), tuple(d["workspace"]["upper"])),
            duration=d["duration"],
            prior=prior,
            truth_prior=truth,
            sensor=SensorModel(**sensor),
            motion=MotionModel(**motion),
            planner=PlannerConfig(**d.get("planner", {})),
            filter=FilterConfig(**d.get("filter_caps", {}), **d.get("filter", {})),
            metric=MetricConfig(**d.get("metric", {})),
            seed=d.get("seed", 0),
            name=d.get("name", "custom"),
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from None


def canonical_json(d) -> str:
    return json.dumps(d, sort_keys=True, separators=(",", ":"))


def scenario_digest(sc: Scenario) -> str:
    return hashlib.sha256(canonical_json(scenario_to_dict(sc)).encode()).hexdigest()


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        try:
            d = json.load(fh)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"invalid JSON: {exc}") from None
    return scenario_from_dict(d)


def save_scenario(sc: Scenario, path) -> None:
    with open(path, "w") as fh:
        json.dump(scenario_to_dict(sc), fh, indent=2, sort_keys=True)
        fh.write("\n")

