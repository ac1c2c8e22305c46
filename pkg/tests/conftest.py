from __future__ import annotations

import numpy as np
import pytest

from shardalloc.model import EngagementProfile, ProblemInstance, UNIT_WEIGHTS


def equal_score_instance(n: int, eta: float = 10.0, p: float = 0.1,
                         tau: float = 0.001, s_max: int = 10,
                         t_per_shard: float = 2000.0) -> ProblemInstance:
    """All users share one score and one adversarial probability."""
    profiles = tuple(EngagementProfile(i, eta, 0.0, 0.0) for i in range(n))
    return ProblemInstance(profiles=profiles, weights=UNIT_WEIGHTS,
                           p_adv=(p,) * n, tau=tau, s_max=s_max,
                           t_per_shard=t_per_shard)


def random_instance(rng: np.random.Generator, n: int, tau: float = 0.01,
                    s_max: int = 8, p_low: float = 0.02, p_high: float = 0.35,
                    score_low: float = 5.0, score_high: float = 50.0,
                    ) -> ProblemInstance:
    profiles = tuple(EngagementProfile(i, float(v), 0.0, 0.0)
                     for i, v in enumerate(rng.uniform(score_low, score_high, n)))
    return ProblemInstance(profiles=profiles, weights=UNIT_WEIGHTS,
                           p_adv=tuple(rng.uniform(p_low, p_high, n)),
                           tau=tau, s_max=s_max, t_per_shard=2000.0)


@pytest.fixture
def small_instance() -> ProblemInstance:
    return equal_score_instance(4)


@pytest.fixture
def safe_instance() -> ProblemInstance:
    return equal_score_instance(50)
