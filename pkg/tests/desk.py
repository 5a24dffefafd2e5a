"""Shared desk-scale episodes, computed once per test session."""
from functools import lru_cache

from searchtrack.harness import desk_scale, run_episodes
from searchtrack.world import generate_scenario

SEEDS = range(20)


def desk_scenario():
    return desk_scale(generate_scenario("BaseConfig"))


@lru_cache(maxsize=None)
def desk_episodes(policy: str):
    return tuple(run_episodes(desk_scenario(), SEEDS, policy))
