"""Built-in invariant battery for the ``validate`` CLI subcommand.

Each check exercises one cross-module contract on seeded random data and
returns a verdict; the battery is cheap enough to run after every install.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .baselines import uniform_split
from .bounds import (ShardColumn, attack_bound, is_shard_safe,
                     monte_carlo_attack_probability)
from .lagrangian import check_feasibility, solve_p3
from .model import (EngagementProfile, InstanceGenConfig, ProblemInstance,
                    UNIT_WEIGHTS, compute_engagement, generate_instance,
                    instance_from_dict, instance_to_dict)
from .optimizer import SearchMode, optimize_sharding, solve_budget
from .simulator import remap_seeds, initial_seeds


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


def _random_column(rng: np.random.Generator) -> ShardColumn:
    n = int(rng.integers(2, 30))
    scores = rng.uniform(0.5, 50.0, size=n)
    p = rng.uniform(0.0, 0.49, size=n)
    return ShardColumn(scores=scores, p_adv=p)


def _random_instance(rng: np.random.Generator, n: int | None = None,
                     s_max: int = 8, tau: float = 0.01) -> ProblemInstance:
    n = n or int(rng.integers(5, 40))
    profiles = tuple(EngagementProfile(i, float(v), 0.0, 0.0)
                     for i, v in enumerate(rng.uniform(5.0, 60.0, size=n)))
    return ProblemInstance(profiles=profiles, weights=UNIT_WEIGHTS,
                           p_adv=tuple(rng.uniform(0.02, 0.3, size=n)),
                           tau=tau, s_max=s_max, t_per_shard=2000.0)


def _check_linearity(rng: np.random.Generator) -> CheckResult:
    for _ in range(50):
        d, c, t = rng.uniform(0, 20, size=3)
        k = rng.uniform(0, 5)
        base = compute_engagement(EngagementProfile(0, d, c, t), UNIT_WEIGHTS)
        scaled = compute_engagement(EngagementProfile(0, k * d, k * c, k * t),
                                    UNIT_WEIGHTS)
        if not math.isclose(scaled, k * base, rel_tol=1e-12, abs_tol=1e-12):
            return CheckResult("engagement-linearity", False,
                               f"k={k} broke homogeneity")
    return CheckResult("engagement-linearity", True, "50 random profiles")


def _check_roundtrip(rng: np.random.Generator) -> CheckResult:
    cfg = InstanceGenConfig(n_nodes=17, score_mean=30.0, score_std=4.0,
                            max_difference=25.0, rng_seed=int(rng.integers(1 << 30)))
    inst = generate_instance(cfg)
    again = instance_from_dict(instance_to_dict(inst))
    ok = again == inst
    return CheckResult("serialization-roundtrip", ok,
                       "dict roundtrip equality" if ok else "mismatch")


def _check_equivalence(rng: np.random.Generator) -> CheckResult:
    for _ in range(100):
        col = _random_column(rng)
        tau = float(rng.uniform(1e-6, 0.999))
        rep = is_shard_safe(col, tau)
        if rep.safe != (attack_bound(col) <= tau):
            return CheckResult("safety-bound-equivalence", False,
                               f"disagreement at tau={tau}")
    return CheckResult("safety-bound-equivalence", True, "100 random columns")


def _check_scale_invariance(rng: np.random.Generator) -> CheckResult:
    for _ in range(50):
        col = _random_column(rng)
        c = float(rng.uniform(0.01, 100.0))
        scaled = ShardColumn(scores=col.scores * c, p_adv=col.p_adv)
        if not math.isclose(attack_bound(col), attack_bound(scaled),
                            rel_tol=1e-9):
            return CheckResult("bound-scale-invariance", False, f"c={c}")
    return CheckResult("bound-scale-invariance", True, "50 random columns")


def _check_sigma_invariance(rng: np.random.Generator) -> CheckResult:
    inst = _random_instance(rng)
    base = attack_bound(ShardColumn(scores=inst.eta, p_adv=inst.p_adv_array))
    for sigma in (2, 3, 5, 8):
        alloc = uniform_split(inst, sigma)
        for s in range(sigma):
            b = attack_bound(ShardColumn.from_allocation(alloc, s))
            if not math.isclose(b, base, rel_tol=1e-9):
                return CheckResult("uniform-split-sigma-invariance", False,
                                   f"sigma={sigma}")
    return CheckResult("uniform-split-sigma-invariance", True, "sigma in {2,3,5,8}")


def _check_solver_contracts(rng: np.random.Generator) -> CheckResult:
    for _ in range(5):
        inst = _random_instance(rng)
        sigma = int(rng.integers(2, inst.s_max + 1))
        result = solve_p3(inst, sigma)
        alloc = result.allocation
        if alloc.max_conservation_error() > 1e-9:
            return CheckResult("solver-contracts", False, "conservation breach")
        expected = uniform_split(inst, sigma)
        rel = np.max(np.abs(alloc.table - expected.table) /
                     np.maximum(np.abs(expected.table), 1e-300))
        if rel > 1e-8:
            return CheckResult("solver-contracts", False,
                               f"uniform-split mismatch rel={rel:.2e}")
        if not check_feasibility(alloc).sign_ok:
            return CheckResult("solver-contracts", False, "negative entries")
    return CheckResult("solver-contracts", True,
                       "5 instances: residual, conservation, uniform match")


def _check_optimizer_modes(rng: np.random.Generator) -> CheckResult:
    for _ in range(5):
        tau = float(rng.choice([0.05, 1e-7]))
        inst = _random_instance(rng, s_max=int(rng.integers(4, 12)), tau=tau)
        binary = optimize_sharding(inst, search_mode=SearchMode.BINARY)
        scan = optimize_sharding(inst, search_mode=SearchMode.LINEAR_SCAN)
        if binary.sigma_star != scan.sigma_star:
            return CheckResult("optimizer-mode-agreement", False,
                               f"{binary.sigma_star} != {scan.sigma_star}")
        if binary.solves_performed > solve_budget(inst.s_max):
            return CheckResult("optimizer-mode-agreement", False,
                               "solve budget exceeded")
    return CheckResult("optimizer-mode-agreement", True,
                       "5 instances, budget respected")


def _check_monte_carlo(rng: np.random.Generator) -> CheckResult:
    for _ in range(5):
        col = _random_column(rng)
        mc = monte_carlo_attack_probability(col, 20_000,
                                            seed=int(rng.integers(1 << 30)))
        if mc.frequency > attack_bound(col) + 3.0 * mc.std_error:
            return CheckResult("monte-carlo-vs-bound", False,
                               f"freq {mc.frequency} above bound")
    return CheckResult("monte-carlo-vs-bound", True, "5 columns x 20k trials")


def _check_remap(rng: np.random.Generator) -> CheckResult:
    seeds = initial_seeds(int(rng.integers(1 << 30)), 4)
    beacon = seeds[0]
    for target in (1, 2, 4, 7, 11):
        out = remap_seeds(seeds, target, beacon)
        if len(out) != target:
            return CheckResult("seed-remap-cardinality", False, f"target={target}")
    return CheckResult("seed-remap-cardinality", True, "targets 1..11")


_CHECKS: tuple[Callable[[np.random.Generator], CheckResult], ...] = (
    _check_linearity, _check_roundtrip, _check_equivalence,
    _check_scale_invariance, _check_sigma_invariance, _check_solver_contracts,
    _check_optimizer_modes, _check_monte_carlo, _check_remap)


def run_invariant_suite(seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    return [check(rng) for check in _CHECKS]
