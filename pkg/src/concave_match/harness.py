"""Monte-Carlo experiment execution and theoretical-condition reports.

Replications are seeded ``base_seed + r`` and are embarrassingly
parallel; aggregation is a deterministic reduce over the replication
index, so worker scheduling cannot change results. The environment
variable ``CONCAVE_MATCH_THREADS`` caps the process pool.
"""

from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .core import (
    ConfigError,
    DegenerateInstanceError,
    Instance,
    Power,
    ScaledPower,
    UtilitySpec,
)
from .datagen import GeneratorConfig, generate, sample_permutation
from .policies import (
    PolicyConfig,
    RunResult,
    run_dla,
    run_myopic,
    run_ola,
    run_offline,
    run_record,
    relative_loss,
)
from .solver import SolverConfig

POLICY_IDS = ("ola", "dla", "myopic", "offline")
RESAMPLE_MODES = ("fresh_instance", "permute_only")

THREADS_ENV = "CONCAVE_MATCH_THREADS"


@dataclass(frozen=True)
class ExperimentConfig:
    """Declarative description of one Monte-Carlo experiment.

    ``resample`` picks whether each replication redraws the bid matrix
    (``fresh_instance``) or only the arrival order (``permute_only``).
    """

    generator: GeneratorConfig
    policies: tuple
    spec: UtilitySpec
    runs: int
    resample: str = "fresh_instance"
    base_seed: int = 0
    solver: SolverConfig = field(default_factory=SolverConfig)
    emit_decisions: bool = False

    def __post_init__(self) -> None:
        object.__setattr__(self, "policies", tuple(tuple(p) for p in self.policies))
        if self.runs < 1:
            raise ConfigError(f"runs must be >= 1, got {self.runs}")
        if self.resample not in RESAMPLE_MODES:
            raise ConfigError(f"resample must be one of {RESAMPLE_MODES}, got {self.resample!r}")
        if self.base_seed < 0:
            raise ConfigError(f"base_seed must be >= 0, got {self.base_seed}")
        if not self.policies:
            raise ConfigError("at least one policy is required")
        for pid, pcfg in self.policies:
            if pid not in POLICY_IDS:
                raise ConfigError(f"unknown policy id {pid!r} (supported: {POLICY_IDS})")
            if pid in ("ola", "dla") and not isinstance(pcfg, PolicyConfig):
                raise ConfigError(f"policy {pid!r} requires a PolicyConfig")
        if self.spec.m != self.generator.m:
            raise ConfigError(
                f"utility spec has {self.spec.m} bidders but the generator draws {self.generator.m}"
            )


@dataclass(frozen=True)
class PolicyAggregate:
    """Mean/deviation summary for one configured policy."""

    policy_id: str
    epsilon: Optional[float]
    mean_rl: float
    std_rl: float
    mean_revenue: float
    mean_opt: float
    runs: int


@dataclass(eq=False)
class SummaryStats:
    """Aggregates per policy (in configuration order) plus wall-clock seconds."""

    per_policy: tuple
    runs: int
    wall_clock: float

    def find(self, policy_id: str, epsilon: Optional[float] = None) -> PolicyAggregate:
        for agg in self.per_policy:
            if agg.policy_id == policy_id and (epsilon is None or agg.epsilon == epsilon):
                return agg
        raise KeyError(f"no aggregate for policy {policy_id!r} (epsilon={epsilon})")


def _worker_count(runs: int) -> int:
    cap = os.environ.get(THREADS_ENV)
    if cap is not None:
        try:
            workers = max(1, int(cap))
        except ValueError:
            raise ConfigError(f"{THREADS_ENV} must be an integer, got {cap!r}") from None
    else:
        workers = os.cpu_count() or 1
    return max(1, min(workers, runs))


def _run_policy(
    pid: str,
    pcfg: Optional[PolicyConfig],
    instance: Instance,
    order,
    spec: UtilitySpec,
    solver_cfg: SolverConfig,
    opt: float,
):
    if pid == "ola":
        result = run_ola(instance, order, spec, pcfg, solver_cfg)
    elif pid == "dla":
        result = run_dla(instance, order, spec, pcfg, solver_cfg)
    elif pid == "myopic":
        result = run_myopic(instance, order, spec)
    elif pid == "offline":
        return None, opt
    else:  # pragma: no cover - guarded by config validation
        raise ConfigError(f"unknown policy id {pid!r}")
    return result, result.revenue


def _replicate(cfg: ExperimentConfig, r: int, shared: Optional[Instance], shared_opt):
    seed = cfg.base_seed + r
    try:
        rng = np.random.default_rng(seed)
        instance = shared if shared is not None else generate(cfg.generator, rng)
        order = sample_permutation(instance.n, rng, seed=seed)
        opt = shared_opt if shared_opt is not None else run_offline(instance, cfg.spec, cfg.solver)
        rows = []
        records = []
        for pid, pcfg in cfg.policies:
            result, revenue = _run_policy(pid, pcfg, instance, order, cfg.spec, cfg.solver, opt)
            rl = relative_loss(revenue, opt)
            rows.append((rl, revenue, opt))
            if result is not None:
                records.append(run_record(result, opt, cfg.emit_decisions))
            else:
                records.append(
                    {"policy": pid, "seed": seed, "epsilon": None,
                     "revenue": float(revenue), "opt": float(opt), "rl": float(rl),
                     "resolves": []}
                )
        return rows, records
    except Exception as exc:
        raise RuntimeError(f"replication {r} (seed {seed}) failed: {exc}") from exc


def monte_carlo(
    cfg: ExperimentConfig,
    *,
    fixed_instance: Optional[Instance] = None,
    record_sink: Optional[Callable[[dict], None]] = None,
) -> SummaryStats:
    """Run the configured replications and aggregate relative losses.

    The offline optimum is solved once per instance and shared by every
    policy of that replication. ``fixed_instance`` pins the bid matrix
    (arrival orders still resample), which forces ``permute_only``
    semantics regardless of the configured mode.
    """
    start = time.perf_counter()
    shared = fixed_instance
    if shared is None and cfg.resample == "permute_only":
        shared = generate(cfg.generator, np.random.default_rng(cfg.base_seed))
    shared_opt = None
    if shared is not None:
        shared_opt = run_offline(shared, cfg.spec, cfg.solver)

    workers = _worker_count(cfg.runs)
    if workers <= 1:
        outputs = [_replicate(cfg, r, shared, shared_opt) for r in range(cfg.runs)]
    else:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outputs = list(
                pool.map(_replicate, [cfg] * cfg.runs, range(cfg.runs),
                         [shared] * cfg.runs, [shared_opt] * cfg.runs)
            )

    if record_sink is not None:
        for _, records in outputs:
            for record in records:
                record_sink(record)

    aggregates = []
    for idx, (pid, pcfg) in enumerate(cfg.policies):
        rls = np.array([rows[idx][0] for rows, _ in outputs])
        revs = np.array([rows[idx][1] for rows, _ in outputs])
        opts = np.array([rows[idx][2] for rows, _ in outputs])
        std = 0.0 if cfg.runs == 1 else float(np.std(rls, ddof=1))
        aggregates.append(
            PolicyAggregate(
                policy_id=pid,
                epsilon=None if pcfg is None else pcfg.epsilon,
                mean_rl=float(rls.mean()),
                std_rl=std,
                mean_revenue=float(revs.mean()),
                mean_opt=float(opts.mean()),
                runs=cfg.runs,
            )
        )
    return SummaryStats(
        per_policy=tuple(aggregates),
        runs=cfg.runs,
        wall_clock=time.perf_counter() - start,
    )


# ---------------------------------------------------------------------------
# input-condition report
# ---------------------------------------------------------------------------


@dataclass(eq=False)
class ConditionReport:
    """Sufficiency diagnostics for the learning guarantees.

    ``C_ola``/``C_dla`` are the accumulator thresholds the analysis wants
    every learned ``u_hat`` to clear; ``n_bound_*`` are the matching
    input-size thresholds. They are sufficient, not necessary: the
    policies routinely do well below them.
    """

    m: int
    n: int
    epsilon: float
    b_bar: float
    eta: float
    F: Optional[float]
    f_note: str
    C_ola: float
    C_dla: float
    n_bound_ola: Optional[float]
    n_bound_dla: Optional[float]
    ola_satisfied: Optional[bool]
    dla_satisfied: Optional[bool]
    observed_min_u_hat: list


def _max_grad_at(spec: UtilitySpec, x: float) -> float:
    return max(d.grad(x) for d in spec.descriptors)


def _min_grad_at(spec: UtilitySpec, x: float) -> float:
    return min(d.grad(x) for d in spec.descriptors)


def condition_constant(spec: UtilitySpec, eta: float, C: float):
    """Constant F with max_i M_i'(eta*F*C) < eta * min_i M_i'(C).

    Homogeneous power families use the closed form
    ``2 / eta**((2-p)/(1-p))``; anything else is bisected on the defining
    inequality. Linear families have constant derivative, so no finite F
    exists and ``None`` is returned.
    """
    if not 0.0 < eta <= 1.0:
        raise ValueError(f"eta must lie in (0, 1], got {eta}")
    if not C > 0:
        raise ValueError(f"C must be positive, got {C}")
    powers = [getattr(d, "p", None) for d in spec.descriptors]
    if any(p == 1.0 for p in powers):
        return None, "undefined for linear return functions (constant derivative)"
    homog = spec._homog  # (a, p) when every bidder shares one power family
    if homog is not None:
        _, p = homog
        return 2.0 / eta ** ((2.0 - p) / (1.0 - p)), "closed-form"

    target = eta * _min_grad_at(spec, C)

    def holds(f_try: float) -> bool:
        return _max_grad_at(spec, eta * f_try * C) < target

    hi = 1.0
    for _ in range(200):
        if holds(hi):
            break
        hi *= 2.0
    else:
        return None, "no finite constant found (derivative does not vanish)"
    lo = hi / 2.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        if holds(mid):
            hi = mid
        else:
            lo = mid
    return hi, "bisection"


def condition_report(
    instance: Instance,
    epsilon: float,
    spec: UtilitySpec,
    run: Optional[RunResult] = None,
) -> ConditionReport:
    """Evaluate the explicit input-size sufficiency conditions.

    ``b_bar`` is the smallest per-arrival average row sum, ``eta`` the
    smallest positive bid relative to the largest. The thresholds use the
    explicit constants 12 (one-time) and 16 (dynamic) for the
    accumulator bounds, and 12/24 with ``4 m C F / (eps b_bar)`` for the
    input-size bounds. When a run is supplied, each learned accumulator
    snapshot is compared against the matching threshold.
    """
    if not (0.0 < epsilon < 0.5):
        raise ConfigError("epsilon must lie in (0, 0.5)")
    if spec.m != instance.m:
        raise ValueError("utility spec size does not match the instance")
    bids = instance.bids
    if bids.max() > 1.0 + 1e-9:
        raise ValueError("instance must be scaled so the maximum bid is <= 1")
    if not bids.any():
        raise DegenerateInstanceError("all bids are zero; eta is undefined")
    m, n = instance.m, instance.n
    b_bar = float(bids.sum(axis=1).min() / n)
    eta = float(bids[bids > 0].min() / bids.max())

    log_term = math.log(m * m * n / epsilon)
    C_ola = 12.0 * m * log_term / epsilon**3
    C_dla = 16.0 * m * log_term / epsilon**2

    F, f_note = condition_constant(spec, eta, C_ola)

    n_bound_ola = n_bound_dla = None
    ola_ok = dla_ok = None
    if F is not None:
        if b_bar > 0:
            tail_ola = 12.0 * math.log(m / epsilon) / (epsilon * b_bar**2)
            tail_dla = 24.0 * math.log(m / epsilon) / (epsilon * b_bar**2)
            n_bound_ola = max(tail_ola, 4.0 * m * C_ola * F / (epsilon * b_bar))
            n_bound_dla = max(tail_dla, 4.0 * m * C_dla * F / (epsilon * b_bar))
        else:
            n_bound_ola = math.inf
            n_bound_dla = math.inf
        ola_ok = n >= n_bound_ola
        dla_ok = n >= n_bound_dla

    observed = []
    if run is not None:
        threshold = C_ola if run.policy_id.startswith("ola") else C_dla
        for ell, u_hat in run.resolve_snapshots:
            low = float(np.min(u_hat))
            observed.append((int(ell), low, bool(low >= threshold)))

    return ConditionReport(
        m=m,
        n=n,
        epsilon=epsilon,
        b_bar=b_bar,
        eta=eta,
        F=F,
        f_note=f_note,
        C_ola=C_ola,
        C_dla=C_dla,
        n_bound_ola=n_bound_ola,
        n_bound_dla=n_bound_dla,
        ola_satisfied=ola_ok,
        dla_satisfied=dla_ok,
        observed_min_u_hat=observed,
    )


# ---------------------------------------------------------------------------
# concentration diagnostics
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ConcentrationRow:
    resolve_index: int
    prefix_len: int
    bidder: int
    u_hat: float
    segment_scaled: float  # (n / prefix_len) * value allocated in the segment
    full_horizon: float  # value if this snapshot priced every arrival
    segment_inside: bool
    full_inside: bool


@dataclass(eq=False)
class ConcentrationDiagnostics:
    rows: list
    segment_violation_fraction: float
    full_violation_fraction: float
    run: RunResult


def concentration_diagnostics(
    instance: Instance,
    order,
    epsilon: float,
    spec: UtilitySpec,
    solver_cfg: Optional[SolverConfig] = None,
) -> ConcentrationDiagnostics:
    """Measure how tightly each resolve's accumulators concentrate.

    For every resolve at prefix length ``ell`` the diagnostic compares,
    per bidder, the scaled segment allocation and the hypothetical
    full-horizon allocation under that snapshot against the envelope
    ``(1 +- epsilon * sqrt(n / ell)) * u_hat``. Violations are reported,
    never asserted; small instances step outside routinely.
    """
    from .policies import _batch_rule  # shared vectorised rule

    run = run_dla(instance, order, spec, PolicyConfig(epsilon=epsilon), solver_cfg)
    n = instance.n
    perm = order.permutation
    bids = instance.bids
    points = [ell for ell, _ in run.resolve_snapshots]

    rows: list[ConcentrationRow] = []
    seg_out = 0
    full_out = 0
    for k, (ell, u_hat) in enumerate(run.resolve_snapshots):
        seg_end = points[k + 1] if k + 1 < len(points) else n
        seg_decisions = run.decisions[ell:seg_end]
        u_bar = np.zeros(instance.m)
        seg_alloc = seg_decisions >= 0
        np.add.at(
            u_bar,
            seg_decisions[seg_alloc],
            bids[seg_decisions[seg_alloc], perm[ell:seg_end][seg_alloc]],
        )
        all_idx = _batch_rule(u_hat, bids[:, perm], spec)
        u_tilde = np.zeros(instance.m)
        alloc = all_idx >= 0
        np.add.at(u_tilde, all_idx[alloc], bids[all_idx[alloc], perm[alloc]])

        width = epsilon * math.sqrt(n / ell)
        scaled_bar = (n / ell) * u_bar
        for i in range(instance.m):
            seg_in = abs(scaled_bar[i] - u_hat[i]) <= width * u_hat[i]
            full_in = abs(u_tilde[i] - u_hat[i]) <= width * u_hat[i]
            seg_out += not seg_in
            full_out += not full_in
            rows.append(
                ConcentrationRow(
                    resolve_index=k,
                    prefix_len=int(ell),
                    bidder=i,
                    u_hat=float(u_hat[i]),
                    segment_scaled=float(scaled_bar[i]),
                    full_horizon=float(u_tilde[i]),
                    segment_inside=bool(seg_in),
                    full_inside=bool(full_in),
                )
            )
    count = max(1, len(rows))
    return ConcentrationDiagnostics(
        rows=rows,
        segment_violation_fraction=seg_out / count,
        full_violation_fraction=full_out / count,
        run=run,
    )
