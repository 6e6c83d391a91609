"""Conditional-gradient solver for prefix-scaled concave allocation programs.

The program solved here maximises ``sum_i M_i(u_i)`` with
``u_i = (horizon / prefix_len) * sum_{j < prefix_len} b_ij x_ij`` over
per-column simplices ``{x_{.j} >= 0, sum_i x_ij <= 1}``. The linear
subproblem over one column is exactly the greedy price rule (assign the
column to the bidder maximising ``b_ij * M_i'(u_i)``), so each iteration
costs one pass over the prefix. With ``prefix_len == horizon`` and unit
scale this is the full offline benchmark program.

The iterate is kept as a convex combination of assignment vertices,
which lets the solver take away steps (shifting weight off the worst
active vertex) when the plain towards-step starts to zigzag near a
face; that keeps convergence fast at tight tolerances. Step sizes come
from an exact line search on the one-dimensional concave restriction
(golden section), so the objective sequence is nondecreasing. The
reported ``gap_certificate`` is the linearisation gap at the returned
iterate; it upper-bounds the distance to the optimum and equals the
slack of the dual-feasible point built by :func:`dual_upper_bound`.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import Instance, UtilitySpec

_INV_GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0

_WEIGHT_FLOOR = 1e-15
_STALL_LIMIT = 100  # consecutive zero-progress steps before giving up


class NumericError(ArithmeticError):
    """The objective or certificate became non-finite during a solve."""


@dataclass(frozen=True)
class SolverConfig:
    rel_tol: float = 1e-6
    max_iters: int = 10_000
    init: str = "uniform"

    def __post_init__(self) -> None:
        if not (math.isfinite(self.rel_tol) and self.rel_tol > 0):
            raise ValueError(f"rel_tol must be positive, got {self.rel_tol}")
        if self.max_iters < 1:
            raise ValueError(f"max_iters must be >= 1, got {self.max_iters}")
        if self.init != "uniform":
            raise ValueError(f"unknown init rule {self.init!r} (supported: 'uniform')")


@dataclass(eq=False)
class PrimalSolution:
    """Feasible point of the prefix program with an optimality certificate.

    ``x`` is the fractional allocation (``None`` when the caller asked to
    skip materialising it), ``u_hat`` the scaled accumulator vector
    implied by ``x``, and ``gap_certificate`` a non-negative bound on the
    distance of ``objective`` from the optimum. ``converged`` is False
    when the iteration cap was hit or no representable ascent step was
    left.
    """

    x: Optional[np.ndarray]
    u_hat: np.ndarray
    objective: float
    gap_certificate: float
    converged: bool
    iterations: int
    trace: Optional[list] = None
    iterates: Optional[list] = None


@dataclass(eq=False)
class DualSolution:
    """Feasible point of the pricing dual; its objective bounds every primal."""

    v: np.ndarray
    y: np.ndarray
    objective: float


def _line_search(total, u, d, f0, hi=1.0, iters: int = 40):
    """Maximise gamma -> total(u + gamma * d) over [0, hi] by golden section.

    Probe points are clamped at zero: away-direction endpoints can dip a
    few ulp below the feasible image, which power utilities reject.
    """
    lo = 0.0
    x1 = hi - _INV_GOLDEN * (hi - lo)
    x2 = lo + _INV_GOLDEN * (hi - lo)
    f1 = total(u + x1 * d)
    f2 = total(u + x2 * d)
    for _ in range(iters):
        if f1 < f2:
            lo = x1
            x1, f1 = x2, f2
            x2 = lo + _INV_GOLDEN * (hi - lo)
            f2 = total(u + x2 * d)
        else:
            hi = x2
            x2, f2 = x1, f1
            x1 = hi - _INV_GOLDEN * (hi - lo)
            f1 = total(u + x1 * d)
    gamma, fg = (x1, f1) if f1 >= f2 else (x2, f2)
    return gamma, fg


def _search_step(total, u, d, f0, hi):
    """Line search plus explicit endpoint checks (0 and hi)."""
    probe = lambda z: total(np.maximum(z, 0.0))
    gamma, fg = _line_search(probe, u, d, f0, hi=hi)
    f_hi = probe(u + hi * d)
    if f_hi >= fg:
        gamma, fg = hi, f_hi
    if f0 >= fg:
        gamma, fg = 0.0, f0
    return gamma, fg


class _ActiveSet:
    """Convex combination of assignment vertices, tracked in accumulator space.

    An assignment maps each prefix column to a bidder (or -1 for the zero
    vertex); its accumulator image is all the solver needs per iteration.
    Assignments themselves are kept only when the caller wants the dense
    allocation back. Storage is preallocated and doubled on demand so the
    per-iteration work stays vectorised even with hundreds of atoms.
    """

    def __init__(self, m: int, keep_assignments: bool, capacity: int = 64):
        self.m = m
        self.count = 0
        self.w = np.zeros((capacity, m))
        self.weights = np.zeros(capacity)
        self.slots: dict[bytes, int] = {}
        self.keys: list[bytes] = []
        self.assignments: Optional[list[np.ndarray]] = [] if keep_assignments else None

    def add(self, key: bytes, w: np.ndarray, assignment: Optional[np.ndarray], weight: float) -> None:
        slot = self.slots.get(key)
        if slot is not None:
            self.weights[slot] += weight
            return
        if self.count == self.w.shape[0]:
            self.w = np.concatenate([self.w, np.zeros_like(self.w)])
            self.weights = np.concatenate([self.weights, np.zeros_like(self.weights)])
        slot = self.count
        self.slots[key] = slot
        self.keys.append(key)
        self.w[slot] = w
        self.weights[slot] = weight
        if self.assignments is not None:
            self.assignments.append(assignment)
        self.count += 1

    def scale(self, factor: float) -> None:
        self.weights[: self.count] *= factor

    def prune(self) -> None:
        lam = self.weights[: self.count]
        keep = lam > _WEIGHT_FLOOR
        if not keep.all():
            kept = int(keep.sum())
            self.w[:kept] = self.w[: self.count][keep]
            self.weights[:kept] = lam[keep]
            self.weights[kept:self.count] = 0.0
            self.keys = [k for k, ok in zip(self.keys, keep) if ok]
            if self.assignments is not None:
                self.assignments = [a for a, ok in zip(self.assignments, keep) if ok]
            self.slots = {key: i for i, key in enumerate(self.keys)}
            self.count = kept
        total = self.weights[: self.count].sum()
        if total > 0 and abs(total - 1.0) > 1e-13:
            self.scale(1.0 / total)

    def accumulator(self) -> np.ndarray:
        return self.weights[: self.count] @ self.w[: self.count]

    def worst_atom(self, g: np.ndarray) -> tuple[int, float]:
        dots = self.w[: self.count] @ g
        slot = int(np.argmin(dots))
        return slot, float(dots[slot])

    def dense_x(self, m: int, ell: int) -> np.ndarray:
        x = np.zeros((m, ell))
        cols = np.arange(ell)
        for lam, assign in zip(self.weights[: self.count], self.assignments):
            live = assign >= 0
            x[assign[live], cols[live]] += lam
        return x


def solve_concave_program(
    instance: Instance,
    prefix_len: int,
    horizon: int,
    spec: UtilitySpec,
    cfg: Optional[SolverConfig] = None,
    *,
    want_x: bool = True,
    collect_trace: bool = False,
    collect_iterates: bool = False,
) -> PrimalSolution:
    """Solve the prefix program to the configured relative gap.

    Stops once the linearisation gap drops below
    ``rel_tol * max(1, objective)`` or the iteration cap is hit (the
    latter is flagged via ``converged``). ``want_x=False`` skips the
    dense allocation bookkeeping, which the online policies do not need.
    """
    cfg = cfg or SolverConfig()
    if spec.m != instance.m:
        raise ValueError("utility spec size does not match the instance")
    ell = int(prefix_len)
    n = int(horizon)
    if ell < 1:
        raise ValueError(f"prefix_len must be >= 1, got {prefix_len}")
    if ell > n:
        raise ValueError(f"prefix_len {ell} must not exceed the horizon {n}")
    if ell > instance.n:
        raise ValueError(f"prefix_len {ell} exceeds the stored {instance.n} arrivals")

    m = instance.m
    scaled = (n / ell) * instance.bids[:, :ell]
    cols = np.arange(ell)
    total = spec.total

    # uniform start x_ij = 1/m as an explicit mixture of one-bidder vertices
    active = _ActiveSet(m, keep_assignments=want_x)
    row_mass = scaled.sum(axis=1)
    for i in range(m):
        assign = np.full(ell, i, dtype=np.int64)
        w = np.zeros(m)
        w[i] = row_mass[i]
        active.add(assign.tobytes(), w, assign if want_x else None, 1.0 / m)
    u = active.accumulator()

    scores = np.empty_like(scaled)
    trace: Optional[list] = [] if collect_trace else None
    iterates: Optional[list] = [] if collect_iterates else None
    converged = False
    steps = 0
    no_progress = 0
    while True:
        g = spec.grads(u)
        np.multiply(scaled, g[:, None], out=scores)
        idx = scores.argmax(axis=0)
        best = scores[idx, cols]
        f = total(u)
        gap = float(best.sum() - g @ u)
        if not (math.isfinite(f) and math.isfinite(gap)):
            raise NumericError("objective or gap became non-finite")
        if iterates is not None:
            iterates.append(u.copy())
        if gap <= cfg.rel_tol * max(1.0, f):
            converged = True
            if trace is not None:
                trace.append((steps, f, gap, 0.0))
            break
        if steps >= cfg.max_iters:
            if trace is not None:
                trace.append((steps, f, gap, 0.0))
            break

        fw_assign = idx.copy()
        fw_assign[best <= 0.0] = -1  # all-zero columns take the zero vertex
        chosen = scaled[idx, cols]
        chosen = np.where(best > 0.0, chosen, 0.0)
        w_fw = np.bincount(idx, weights=chosen, minlength=m)

        # away candidate: the active vertex with the lowest price value
        away_slot, away_dot = (None, 0.0)
        gap_away = -math.inf
        if active.count > 1:
            away_slot, away_dot = active.worst_atom(g)
            gap_away = float(g @ u - away_dot)

        moved = False
        gamma_used = 0.0
        if away_slot is not None and gap_away > gap:
            lam = active.weights[away_slot]
            if lam < 1.0:
                gamma_max = min(lam / (1.0 - lam), 1e9)
                d = u - active.w[away_slot]
                gamma, f_new = _search_step(total, u, d, f, gamma_max)
                if gamma > 0.0 and f_new >= f:
                    active.scale(1.0 + gamma)
                    active.weights[away_slot] -= gamma
                    if active.weights[away_slot] < 0.0:
                        active.weights[away_slot] = 0.0
                    moved = True
                    gamma_used = gamma
                    no_progress = no_progress + 1 if f_new <= f else 0

        if not moved:
            d = w_fw - u
            gamma, f_new = _search_step(total, u, d, f, 1.0)
            if f_new <= f:
                fallback = min(1.0, 2.0 / (steps + 2.0))
                f_fb = total(u + fallback * d)
                if f_fb > max(f_new, f):
                    gamma, f_new = fallback, f_fb
            if gamma > 0.0 and f_new > f:
                if gamma >= 1.0:
                    fresh = _ActiveSet(m, keep_assignments=want_x)
                    fresh.add(fw_assign.tobytes(), w_fw, fw_assign if want_x else None, 1.0)
                    active = fresh
                else:
                    active.scale(1.0 - gamma)
                    active.add(
                        fw_assign.tobytes(), w_fw, fw_assign if want_x else None, gamma
                    )
                moved = True
                gamma_used = gamma
                no_progress = 0

        if not moved:
            # neither direction admits a representable ascent step
            if trace is not None:
                trace.append((steps, f, gap, 0.0))
            break

        active.prune()
        u = active.accumulator()
        if trace is not None:
            trace.append((steps, f, gap, gamma_used))
        steps += 1
        if no_progress > _STALL_LIMIT:
            g = spec.grads(u)
            np.multiply(scaled, g[:, None], out=scores)
            idx = scores.argmax(axis=0)
            f = total(u)
            gap = float(scores[idx, cols].sum() - g @ u)
            if trace is not None:
                trace.append((steps, f, gap, 0.0))
            break

    x = None
    if want_x:
        x = active.dense_x(m, ell)
        colsum = x.sum(axis=0)
        over = colsum > 1.0
        if over.any():
            x[:, over] /= colsum[over]
        u = (scaled * x).sum(axis=1)
        f = total(u)

    return PrimalSolution(
        x=x,
        u_hat=u,
        objective=f,
        gap_certificate=max(gap, 0.0),
        converged=converged,
        iterations=steps,
        trace=trace,
        iterates=iterates,
    )


def make_dual_solution(
    u_hat, instance: Instance, prefix_len: int, horizon: int, spec: UtilitySpec
) -> DualSolution:
    """Build the dual-feasible point priced at ``u_hat``.

    Sets ``v = u_hat`` and ``y_j = max_i (horizon/prefix_len) * b_ij * M_i'(u_hat_i)``,
    which satisfies every dual constraint by construction.
    """
    u_hat = np.asarray(u_hat, dtype=np.float64)
    if u_hat.shape != (instance.m,):
        raise ValueError(f"u_hat must be a length-{instance.m} vector")
    if np.any(u_hat < 0):
        raise ValueError("u_hat must be non-negative")
    ell = int(prefix_len)
    n = int(horizon)
    if ell < 1 or ell > instance.n or ell > n:
        raise ValueError("invalid prefix_len/horizon for this instance")
    scaled = (n / ell) * instance.bids[:, :ell]
    g = spec.grads(u_hat)
    y = (scaled * g[:, None]).max(axis=0)
    objective = float(y.sum() + (spec.values(u_hat) - g * u_hat).sum())
    return DualSolution(v=u_hat.copy(), y=y, objective=objective)


def dual_upper_bound(
    u_hat, instance: Instance, prefix_len: int, horizon: int, spec: UtilitySpec
) -> float:
    """Objective of the dual point priced at ``u_hat``; upper-bounds the optimum."""
    return make_dual_solution(u_hat, instance, prefix_len, horizon, spec).objective


def write_trace_csv(trace, path) -> None:
    """Dump a solve trace as CSV with columns iter, objective, fw_gap, step_size."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["iter", "objective", "fw_gap", "step_size"])
        for row in trace:
            writer.writerow([row[0], repr(float(row[1])), repr(float(row[2])), repr(float(row[3]))])


# ---------------------------------------------------------------------------
# brute-force reference for tiny instances
# ---------------------------------------------------------------------------

_BRUTE_MAX_M = 3
_BRUTE_MAX_N = 5


def _simplex_grid(m: int, step: float) -> np.ndarray:
    """All points of the m-simplex {x >= 0, sum <= 1} on a step lattice."""
    k = int(round(1.0 / step))
    if (k + 1) ** m > 5_000_000:
        raise ValueError(f"grid_step {step} is too fine for m={m}")
    axes = np.meshgrid(*([np.arange(k + 1)] * m), indexing="ij")
    pts = np.stack([a.ravel() for a in axes], axis=1)
    pts = pts[pts.sum(axis=1) <= k]
    return pts / k


def _window_grid(center: np.ndarray, step: float, radius: int = 6) -> np.ndarray:
    """Lattice patch of the simplex around ``center`` at resolution ``step``."""
    axes = []
    for c in center:
        lo = max(0.0, c - radius * step)
        offsets = lo + step * np.arange(2 * radius + 1)
        axes.append(offsets[offsets <= 1.0 + 1e-12])
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([a.ravel() for a in mesh], axis=1)
    pts = np.clip(pts, 0.0, 1.0)
    return pts[pts.sum(axis=1) <= 1.0 + 1e-12]


def _sweep_columns(bids, spec: UtilitySpec, x, u, grids):
    """Cyclic best-response over columns against the given candidate grids."""
    n = bids.shape[1]
    best = spec.total(u)
    for _ in range(200):
        improved = False
        for j in range(n):
            col = bids[:, j]
            if not col.any():
                continue
            u_rest = u - col * x[:, j]
            cand = grids[j] if isinstance(grids, list) else grids
            totals = spec.total_rows(np.maximum(u_rest[None, :] + cand * col[None, :], 0.0))
            pick = int(np.argmax(totals))
            val = float(totals[pick])
            if val > best + 1e-14 * max(1.0, abs(best)):
                x[:, j] = cand[pick]
                u = u_rest + col * x[:, j]
                best = val
                improved = True
        if not improved:
            break
    return best, x, u


def _brute_force_solve(instance: Instance, spec: UtilitySpec, grid_step: float):
    m, n = instance.m, instance.n
    if m > _BRUTE_MAX_M or n > _BRUTE_MAX_N:
        raise ValueError(
            f"brute-force reference is limited to m <= {_BRUTE_MAX_M}, n <= {_BRUTE_MAX_N}"
        )
    if not (0.0 < grid_step <= 0.5):
        raise ValueError(f"grid_step must lie in (0, 0.5], got {grid_step}")
    if spec.m != m:
        raise ValueError("utility spec size does not match the instance")
    bids = instance.bids

    # stage 1: every integer assignment (each column to one bidder or none)
    best_obj = -math.inf
    best_assign = None
    for assign in itertools.product(range(-1, m), repeat=n):
        u = np.zeros(m)
        for j, i in enumerate(assign):
            if i >= 0:
                u[i] += bids[i, j]
        obj = spec.total(u)
        if obj > best_obj:
            best_obj, best_assign = obj, assign

    x = np.zeros((m, n))
    for j, i in enumerate(best_assign):
        if i >= 0:
            x[i, j] = 1.0
    u = (bids * x).sum(axis=1)

    # stage 2: column-wise fractional search at grid_step resolution
    full = _simplex_grid(m, grid_step)
    best_obj, x, u = _sweep_columns(bids, spec, x, u, full)

    # stage 3: local refinement, shrinking the lattice around the incumbent
    step = grid_step / 5.0
    while step >= 1e-8:
        grids = [_window_grid(x[:, j], step) for j in range(n)]
        best_obj, x, u = _sweep_columns(bids, spec, x, u, grids)
        step /= 5.0

    u = (bids * x).sum(axis=1)
    return float(spec.total(u)), x, u


def brute_force_oracle(instance: Instance, spec: UtilitySpec, grid_step: float = 0.01) -> float:
    """Reference optimum for tiny instances (m <= 3, n <= 5).

    Exhausts all integer assignments, then refines the best fractionally
    by cyclic column search on a shrinking lattice. The result is a
    certified lower bound that sits within lattice resolution of the true
    optimum; with the default refinement depth that is ~1e-8.
    """
    objective, _, _ = _brute_force_solve(instance, spec, grid_step)
    return objective
