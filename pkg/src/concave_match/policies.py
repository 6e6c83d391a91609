"""Online allocation policies and the relative-loss metric.

Three policies share the greedy price rule from :mod:`concave_match.core`:

* ``ola`` learns prices once, from the first ``ceil(epsilon * n)``
  arrivals, and applies them to everything after the learning window.
* ``dla`` re-learns on a doubling schedule: it re-solves the prefix
  program each time the observed history doubles and prices the next
  segment with the fresh solution.
* ``myopic`` assigns every arrival to its highest bid.

Revenue for the learning policies counts only arrivals they actually
allocated; the skipped learning window earns nothing unless the warm-up
flag is set, in which case it is filled myopically and the run is
labelled as a deviation.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import (
    ArrivalOrder,
    ConfigError,
    Instance,
    UtilitySpec,
    apply_perturbation,
)
from .solver import SolverConfig, solve_concave_program

# Stream tag mixed into the perturbation RNG seed so perturbed runs are
# reproducible from (order.seed, config) alone.
_PERTURB_STREAM = 0x70657274


@dataclass(frozen=True)
class PolicyConfig:
    """Knobs shared by the learning policies."""

    epsilon: float
    warmup_allocation: bool = False
    perturb: Optional[float] = None

    def __post_init__(self) -> None:
        if not (0.0 < self.epsilon < 0.5):
            raise ConfigError("epsilon must lie in (0, 0.5)")
        if self.perturb is not None and not (
            math.isfinite(self.perturb) and self.perturb > 0
        ):
            raise ConfigError(f"perturb must be positive when given, got {self.perturb}")


@dataclass(eq=False)
class RunResult:
    """Full trace of one online run.

    ``decisions[t]`` is the bidder chosen at arrival position ``t`` (-1
    for unallocated), ``u_final`` the accumulated matched value priced
    on the unperturbed bids, and ``resolve_snapshots`` the
    ``(prefix_len, u_hat)`` pairs of every prefix solve. When a
    perturbation was active, ``revenue_perturbed`` additionally prices
    the same decisions on the perturbed bids.
    """

    decisions: np.ndarray
    u_final: np.ndarray
    revenue: float
    resolve_snapshots: list
    policy_id: str
    seed: Optional[int]
    epsilon: Optional[float] = None
    revenue_perturbed: Optional[float] = None


def _ceil_count(value: float) -> int:
    # tolerant ceil: 0.1 * 100 must give 10, not 11
    return int(math.ceil(value * (1.0 - 1e-12)))


def resolve_points(n: int, epsilon: float) -> list[int]:
    """Prefix lengths at which the dynamic learner re-solves.

    Returns ``[ceil(eps*n), ceil(2*eps*n), ceil(4*eps*n), ...]``
    truncated to values strictly below ``n``.
    """
    if n < 2:
        raise ConfigError(f"need at least two arrivals, got n={n}")
    if not (0.0 < epsilon < 0.5):
        raise ConfigError("epsilon must lie in (0, 0.5)")
    if epsilon * n < 1.0 - 1e-9:
        raise ConfigError(f"epsilon too small for n: epsilon*n = {epsilon * n:.3g} < 1")
    points = []
    k = 0
    while True:
        ell = _ceil_count((2.0**k) * epsilon * n)
        if ell >= n:
            break
        points.append(ell)
        k += 1
    return points


def _require_scaled(instance: Instance) -> None:
    if instance.bids.max() > 1.0 + 1e-9:
        raise ValueError("instance must be scaled so the maximum bid is <= 1")


def _check_run_inputs(instance: Instance, order: ArrivalOrder, spec: UtilitySpec) -> None:
    _require_scaled(instance)
    if order.n != instance.n:
        raise ValueError("arrival order length must match the instance")
    if spec.m != instance.m:
        raise ValueError("utility spec size does not match the instance")


def _decision_bids(instance: Instance, cfg: Optional[PolicyConfig], order: ArrivalOrder) -> np.ndarray:
    """Bids the policy reacts to: perturbed when the config asks for it."""
    if cfg is None or cfg.perturb is None:
        return instance.bids
    seed = 0 if order.seed is None else int(order.seed)
    rng = np.random.default_rng([_PERTURB_STREAM, seed])
    return apply_perturbation(instance, cfg.perturb, rng).bids


def _batch_rule(u_hat: np.ndarray, bid_cols: np.ndarray, spec: UtilitySpec) -> np.ndarray:
    """Vectorised greedy price rule over a block of arrival columns."""
    scores = spec.grads(u_hat)[:, None] * bid_cols
    idx = scores.argmax(axis=0).astype(np.int64)
    idx[~(bid_cols > 0).any(axis=0)] = -1
    return idx


def _batch_myopic(bid_cols: np.ndarray) -> np.ndarray:
    idx = bid_cols.argmax(axis=0).astype(np.int64)
    idx[~(bid_cols > 0).any(axis=0)] = -1
    return idx


def _accumulate(decisions: np.ndarray, bids: np.ndarray, order: ArrivalOrder) -> np.ndarray:
    u = np.zeros(bids.shape[0])
    allocated = decisions >= 0
    rows = decisions[allocated]
    cols = order.permutation[allocated]
    np.add.at(u, rows, bids[rows, cols])
    return u


def _solve_prefix(
    decision_bids: np.ndarray,
    order: ArrivalOrder,
    ell: int,
    n: int,
    spec: UtilitySpec,
    scale_factor: float,
    solver_cfg: Optional[SolverConfig],
) -> np.ndarray:
    prefix = Instance.from_bids(
        decision_bids[:, order.permutation[:ell]], scale_factor=scale_factor
    )
    sol = solve_concave_program(prefix, ell, n, spec, solver_cfg, want_x=False)
    return sol.u_hat


def _finish(
    decisions: np.ndarray,
    instance: Instance,
    decision_bids: np.ndarray,
    order: ArrivalOrder,
    spec: UtilitySpec,
    snapshots: list,
    policy_id: str,
    epsilon: Optional[float],
    perturbed: bool,
) -> RunResult:
    u_final = _accumulate(decisions, instance.bids, order)
    revenue = spec.total(u_final)
    revenue_perturbed = None
    if perturbed:
        revenue_perturbed = spec.total(_accumulate(decisions, decision_bids, order))
    return RunResult(
        decisions=decisions,
        u_final=u_final,
        revenue=revenue,
        resolve_snapshots=snapshots,
        policy_id=policy_id,
        seed=order.seed,
        epsilon=epsilon,
        revenue_perturbed=revenue_perturbed,
    )


def run_ola(
    instance: Instance,
    order: ArrivalOrder,
    spec: UtilitySpec,
    cfg: PolicyConfig,
    solver_cfg: Optional[SolverConfig] = None,
) -> RunResult:
    """One-time learner: observe, solve once, then price every later arrival."""
    _check_run_inputs(instance, order, spec)
    n = instance.n
    if n < 2:
        raise ConfigError("need at least two arrivals")
    if cfg.epsilon * n < 1.0 - 1e-9:
        raise ConfigError(f"epsilon too small for n: epsilon*n = {cfg.epsilon * n:.3g} < 1")
    ell = _ceil_count(cfg.epsilon * n)
    decision_bids = _decision_bids(instance, cfg, order)
    perm = order.permutation

    u_hat = _solve_prefix(decision_bids, order, ell, n, spec, instance.scale_factor, solver_cfg)
    decisions = np.full(n, -1, dtype=np.int64)
    decisions[ell:] = _batch_rule(u_hat, decision_bids[:, perm[ell:]], spec)
    policy_id = "ola"
    if cfg.warmup_allocation:
        decisions[:ell] = _batch_myopic(decision_bids[:, perm[:ell]])
        policy_id = "ola+warmup"
    return _finish(
        decisions, instance, decision_bids, order, spec,
        [(ell, u_hat)], policy_id, cfg.epsilon, cfg.perturb is not None,
    )


def run_dla(
    instance: Instance,
    order: ArrivalOrder,
    spec: UtilitySpec,
    cfg: PolicyConfig,
    solver_cfg: Optional[SolverConfig] = None,
) -> RunResult:
    """Dynamic learner: re-solve each time the observed history doubles."""
    _check_run_inputs(instance, order, spec)
    n = instance.n
    points = resolve_points(n, cfg.epsilon)
    decision_bids = _decision_bids(instance, cfg, order)
    perm = order.permutation

    decisions = np.full(n, -1, dtype=np.int64)
    snapshots = []
    for k, ell in enumerate(points):
        seg_end = points[k + 1] if k + 1 < len(points) else n
        u_hat = _solve_prefix(
            decision_bids, order, ell, n, spec, instance.scale_factor, solver_cfg
        )
        snapshots.append((ell, u_hat))
        decisions[ell:seg_end] = _batch_rule(
            u_hat, decision_bids[:, perm[ell:seg_end]], spec
        )
    policy_id = "dla"
    if cfg.warmup_allocation:
        decisions[: points[0]] = _batch_myopic(decision_bids[:, perm[: points[0]]])
        policy_id = "dla+warmup"
    return _finish(
        decisions, instance, decision_bids, order, spec,
        snapshots, policy_id, cfg.epsilon, cfg.perturb is not None,
    )


def run_myopic(instance: Instance, order: ArrivalOrder, spec: UtilitySpec) -> RunResult:
    """Assign every arrival to its highest bid (lowest index on ties)."""
    _check_run_inputs(instance, order, spec)
    decisions = _batch_myopic(instance.bids[:, order.permutation])
    return _finish(
        decisions, instance, instance.bids, order, spec, [], "myopic", None, False
    )


def run_offline(
    instance: Instance, spec: UtilitySpec, solver_cfg: Optional[SolverConfig] = None
) -> float:
    """Optimal value of the full fractional offline program."""
    _require_scaled(instance)
    if spec.m != instance.m:
        raise ValueError("utility spec size does not match the instance")
    sol = solve_concave_program(
        instance, instance.n, instance.n, spec, solver_cfg, want_x=False
    )
    return sol.objective


def relative_loss(actual_revenue: float, opt: float) -> float:
    """1 - actual / opt; warns when negative beyond solver tolerance."""
    if not opt > 0:
        raise ValueError(f"opt must be positive, got {opt}")
    if not actual_revenue >= 0:
        raise ValueError(f"actual_revenue must be non-negative, got {actual_revenue}")
    rl = 1.0 - actual_revenue / opt
    if rl < -1e-6:
        warnings.warn(
            f"relative loss {rl:.3e} is below -1e-06: revenue exceeds the offline "
            "benchmark beyond solver tolerance",
            RuntimeWarning,
            stacklevel=2,
        )
    return rl


def run_record(result: RunResult, opt: float, emit_decisions: bool = False) -> dict:
    """JSON-ready record of one run, keyed per the documented schema."""
    record = {
        "policy": result.policy_id,
        "seed": result.seed,
        "epsilon": result.epsilon,
        "revenue": float(result.revenue),
        "opt": float(opt),
        "rl": float(relative_loss(result.revenue, opt)),
        "resolves": [
            {"l": int(ell), "u_hat": [float(v) for v in u_hat]}
            for ell, u_hat in result.resolve_snapshots
        ],
    }
    if result.revenue_perturbed is not None:
        record["revenue_perturbed"] = float(result.revenue_perturbed)
    if emit_decisions:
        record["decisions"] = [int(d) if d >= 0 else None for d in result.decisions]
    return record
