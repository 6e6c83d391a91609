"""Core domain types: bid matrices, concave return functions, and the
greedy price-based allocation rule shared by every policy.

Bid matrices are dense ``m x n`` float arrays: row ``i`` is a bidder,
column ``j`` an arrival, and zeros encode missing edges. Everything
downstream (solver, policies, harness) expects instances scaled so the
largest bid equals one; :func:`scale_instance` is the supported way to
build them.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np

# Derivative queries are clamped to x >= GRAD_FLOOR so that return
# families with unbounded slope at zero stay finite everywhere.
GRAD_FLOOR = 1e-9

BINARY_MAGIC = b"CMB1"


class DegenerateInstanceError(ValueError):
    """The bid matrix contains no positive entry."""


class ConfigError(ValueError):
    """A run, policy, or experiment configuration is invalid."""


# ---------------------------------------------------------------------------
# concave return families
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Power:
    """M(x) = x**p with 0 < p <= 1 (p = 1 is the linear case)."""

    p: float

    def __post_init__(self) -> None:
        if not (0.0 < self.p <= 1.0):
            raise ValueError(f"power exponent must lie in (0, 1], got {self.p}")

    def value(self, x: float) -> float:
        if self.p == 1.0:
            return float(x)
        return float(x) ** self.p

    def grad(self, x: float) -> float:
        if self.p == 1.0:
            return 1.0
        return self.p * float(x) ** (self.p - 1.0)

    def grad_inverse(self, y: float) -> float:
        if self.p == 1.0:
            raise ValueError("linear returns have a constant derivative; no inverse")
        return (y / self.p) ** (1.0 / (self.p - 1.0))


@dataclass(frozen=True)
class Log:
    """M(x) = log(1 + x)."""

    def value(self, x: float) -> float:
        return math.log1p(x)

    def grad(self, x: float) -> float:
        return 1.0 / (1.0 + float(x))

    def grad_inverse(self, y: float) -> float:
        if not 0.0 < y <= 1.0:
            raise ValueError(f"derivative of log(1+x) takes values in (0, 1], got {y}")
        return 1.0 / y - 1.0


@dataclass(frozen=True)
class ScaledPower:
    """M(x) = a * x**p with a > 0 and 0 < p <= 1."""

    a: float
    p: float

    def __post_init__(self) -> None:
        if not self.a > 0.0:
            raise ValueError(f"scale must be positive, got {self.a}")
        if not (0.0 < self.p <= 1.0):
            raise ValueError(f"power exponent must lie in (0, 1], got {self.p}")

    def value(self, x: float) -> float:
        if self.p == 1.0:
            return self.a * float(x)
        return self.a * float(x) ** self.p

    def grad(self, x: float) -> float:
        if self.p == 1.0:
            return self.a
        return self.a * self.p * float(x) ** (self.p - 1.0)

    def grad_inverse(self, y: float) -> float:
        if self.p == 1.0:
            raise ValueError("linear returns have a constant derivative; no inverse")
        return (y / (self.a * self.p)) ** (1.0 / (self.p - 1.0))


Descriptor = Union[Power, Log, ScaledPower]


@dataclass(frozen=True)
class UtilitySpec:
    """Per-bidder concave return functions.

    Every descriptor satisfies M(0) = 0, M nondecreasing and concave on
    [0, inf). Vectorised evaluation is provided for the solver and the
    policies; derivative evaluation clamps its argument to
    :data:`GRAD_FLOOR` so results stay finite.
    """

    descriptors: tuple[Descriptor, ...]

    def __post_init__(self) -> None:
        descs = tuple(self.descriptors)
        if not descs:
            raise ValueError("need at least one bidder descriptor")
        for d in descs:
            if not isinstance(d, (Power, Log, ScaledPower)):
                raise TypeError(f"unsupported return family: {d!r}")
        object.__setattr__(self, "descriptors", descs)
        log_mask = np.array([isinstance(d, Log) for d in descs], dtype=bool)
        a = np.array([getattr(d, "a", 1.0) for d in descs], dtype=np.float64)
        p = np.array([getattr(d, "p", 1.0) for d in descs], dtype=np.float64)
        object.__setattr__(self, "_log_mask", log_mask)
        object.__setattr__(self, "_a", a)
        object.__setattr__(self, "_p", p)
        homog = None
        if not log_mask.any() and np.all(a == a[0]) and np.all(p == p[0]):
            homog = (float(a[0]), float(p[0]))
        object.__setattr__(self, "_homog", homog)

    @classmethod
    def homogeneous(cls, descriptor: Descriptor, m: int) -> "UtilitySpec":
        if m < 1:
            raise ValueError("m must be >= 1")
        return cls((descriptor,) * m)

    @classmethod
    def power(cls, p: float, m: int) -> "UtilitySpec":
        return cls.homogeneous(Power(p), m)

    @property
    def m(self) -> int:
        return len(self.descriptors)

    @property
    def homogeneous_power(self) -> Optional[float]:
        """Exponent shared by every bidder, or None for mixed families."""
        if self._homog is not None and self._homog[0] == 1.0:
            return self._homog[1]
        return None

    def _check_vector(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape != (self.m,):
            raise ValueError(f"expected a length-{self.m} vector, got shape {x.shape}")
        if np.any(x < 0):
            raise ValueError("accumulator values must be non-negative")
        return x

    def values(self, u: np.ndarray) -> np.ndarray:
        """Elementwise M_i(u_i)."""
        u = self._check_vector(u)
        if self._homog is not None:
            a, p = self._homog
            return a * u if p == 1.0 else a * u**p
        out = np.empty_like(u)
        lm = self._log_mask
        if lm.any():
            out[lm] = np.log1p(u[lm])
        pm = ~lm
        if pm.any():
            out[pm] = self._a[pm] * u[pm] ** self._p[pm]
        return out

    def grads(self, x: np.ndarray) -> np.ndarray:
        """Elementwise M_i'(max(x_i, GRAD_FLOOR))."""
        x = np.maximum(self._check_vector(x), GRAD_FLOOR)
        if self._homog is not None:
            a, p = self._homog
            if p == 1.0:
                return np.full(x.shape, a)
            return (a * p) * x ** (p - 1.0)
        out = np.empty_like(x)
        lm = self._log_mask
        if lm.any():
            out[lm] = 1.0 / (1.0 + x[lm])
        pm = ~lm
        if pm.any():
            out[pm] = self._a[pm] * self._p[pm] * x[pm] ** (self._p[pm] - 1.0)
        return out

    def total(self, u: np.ndarray) -> float:
        """Sum of M_i(u_i); the hot path for the solver's line search."""
        homog = self._homog
        if homog is not None:
            a, p = homog
            s = u.sum() if p == 1.0 else (u**p).sum()
            return float(a * s)
        return float(self.values(u).sum())

    def total_rows(self, u_rows: np.ndarray) -> np.ndarray:
        """Row-wise sum of M_i over a (k, m) batch of accumulators."""
        if self._homog is not None:
            a, p = self._homog
            s = u_rows.sum(axis=1) if p == 1.0 else (u_rows**p).sum(axis=1)
            return a * s
        out = np.empty_like(u_rows)
        lm = self._log_mask
        if lm.any():
            out[:, lm] = np.log1p(u_rows[:, lm])
        pm = ~lm
        if pm.any():
            out[:, pm] = self._a[pm] * u_rows[:, pm] ** self._p[pm]
        return out.sum(axis=1)


def utility_eval(spec: UtilitySpec, i: int, x: float) -> float:
    """Return M_i(x). Exact zero at x = 0."""
    if not 0 <= i < spec.m:
        raise IndexError(f"bidder index {i} out of range for m={spec.m}")
    if not x >= 0:
        raise ValueError(f"x must be non-negative, got {x}")
    return float(spec.descriptors[i].value(float(x)))


def utility_grad(spec: UtilitySpec, i: int, x: float) -> float:
    """Return M_i'(max(x, GRAD_FLOOR)); always finite and positive."""
    if not 0 <= i < spec.m:
        raise IndexError(f"bidder index {i} out of range for m={spec.m}")
    if not x >= 0:
        raise ValueError(f"x must be non-negative, got {x}")
    return float(spec.descriptors[i].grad(max(float(x), GRAD_FLOOR)))


def utility_grad_inverse(spec: UtilitySpec, i: int, y: float) -> float:
    """Return the x with M_i'(x) = y; undefined for linear returns."""
    if not 0 <= i < spec.m:
        raise IndexError(f"bidder index {i} out of range for m={spec.m}")
    if not y > 0:
        raise ValueError(f"derivative values are positive, got {y}")
    return float(spec.descriptors[i].grad_inverse(float(y)))


def allocate_rule(w, q, spec: UtilitySpec) -> Optional[int]:
    """Pick the bidder maximising q_k * M_k'(w_k).

    Ties break toward the lowest index. Returns ``None`` (unallocated)
    exactly when every bid in ``q`` is zero.
    """
    w = np.asarray(w, dtype=np.float64)
    q = np.asarray(q, dtype=np.float64)
    if w.shape != (spec.m,) or q.shape != (spec.m,):
        raise ValueError(f"w and q must be length-{spec.m} vectors")
    if np.any(w < 0) or np.any(q < 0):
        raise ValueError("w and q must be non-negative")
    if not q.any():
        return None
    scores = q * spec.grads(w)
    return int(np.argmax(scores))


# ---------------------------------------------------------------------------
# instances and arrival orders
# ---------------------------------------------------------------------------


def _as_bid_matrix(raw) -> np.ndarray:
    bids = np.array(raw, dtype=np.float64, copy=True)
    if bids.ndim != 2:
        raise ValueError(f"bid matrix must be 2-D, got shape {bids.shape}")
    if bids.shape[0] < 1 or bids.shape[1] < 1:
        raise ValueError("bid matrix must have at least one bidder and one arrival")
    if not np.all(np.isfinite(bids)):
        raise ValueError("bid matrix entries must be finite")
    if np.any(bids < 0):
        raise ValueError("bid matrix entries must be non-negative")
    return bids


@dataclass(frozen=True, eq=False)
class Instance:
    """A dense bid matrix plus the scaling applied at construction.

    ``scale_factor`` records the divisor used by :func:`scale_instance`;
    prefix views built by the policies keep the parent's factor.
    """

    m: int
    n: int
    bids: np.ndarray
    scale_factor: float = 1.0

    def __post_init__(self) -> None:
        bids = _as_bid_matrix(self.bids)
        object.__setattr__(self, "bids", bids)
        if (self.m, self.n) != bids.shape:
            raise ValueError(
                f"declared shape ({self.m}, {self.n}) does not match bids {bids.shape}"
            )
        if not (math.isfinite(self.scale_factor) and self.scale_factor > 0):
            raise ValueError(f"scale_factor must be positive, got {self.scale_factor}")

    @classmethod
    def from_bids(cls, bids, scale_factor: float = 1.0) -> "Instance":
        bids = _as_bid_matrix(bids)
        return cls(bids.shape[0], bids.shape[1], bids, scale_factor)


def scale_instance(raw) -> Instance:
    """Divide every entry by the matrix maximum and record the divisor.

    Idempotent: a matrix whose maximum is already one is returned
    unchanged with ``scale_factor`` one.
    """
    matrix = raw.bids if isinstance(raw, Instance) else _as_bid_matrix(raw)
    top = float(matrix.max())
    if top == 0.0:
        raise DegenerateInstanceError("all bids are zero")
    return Instance(matrix.shape[0], matrix.shape[1], matrix / top, scale_factor=top)


def apply_perturbation(instance: Instance, eta_pert: float, rng: np.random.Generator) -> Instance:
    """Add independent U[0, eta_pert] noise to every bid, then re-scale.

    Noise is drawn as ``eta_pert * rng.random(shape)`` (one 64-bit word
    per entry, row-major), which keeps the draw reproducible from the
    underlying bit stream. With continuous noise the perturbed matrix is
    almost surely free of exact ties.
    """
    if not (math.isfinite(eta_pert) and eta_pert > 0):
        raise ValueError(f"eta_pert must be positive, got {eta_pert}")
    noise = eta_pert * rng.random(instance.bids.shape)
    return scale_instance(instance.bids + noise)


@dataclass(frozen=True, eq=False)
class ArrivalOrder:
    """The column order in which bids are revealed (0-based indices)."""

    permutation: np.ndarray
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        perm = np.asarray(self.permutation, dtype=np.int64)
        object.__setattr__(self, "permutation", perm)
        if perm.ndim != 1 or perm.shape[0] < 1:
            raise ValueError("permutation must be a non-empty 1-D index array")
        if not np.array_equal(np.sort(perm), np.arange(perm.shape[0])):
            raise ValueError("permutation must be a bijection on 0..n-1")

    @property
    def n(self) -> int:
        return int(self.permutation.shape[0])

    @classmethod
    def identity(cls, n: int) -> "ArrivalOrder":
        return cls(np.arange(n, dtype=np.int64), None)


@dataclass(eq=False)
class AllocationState:
    """Mutable accumulator for a single online run.

    ``u[i]`` is the total bid value matched to bidder ``i`` so far and
    ``decisions[t]`` the bidder chosen at arrival position ``t`` (-1 for
    unallocated). Confined to one run; never shared across threads.
    """

    u: np.ndarray
    decisions: np.ndarray

    @classmethod
    def empty(cls, m: int, n: int) -> "AllocationState":
        return cls(np.zeros(m, dtype=np.float64), np.full(n, -1, dtype=np.int64))

    def record(self, position: int, bidder: int, value: float) -> None:
        if self.decisions[position] != -1:
            raise ValueError(f"arrival position {position} already allocated")
        self.decisions[position] = bidder
        self.u[bidder] += value


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def save_instance_csv(instance: Instance, path) -> None:
    """Write the bid matrix as plain CSV, one row per bidder.

    Entries use full round-trip precision so a load reproduces the
    matrix bit for bit.
    """
    np.savetxt(path, instance.bids, fmt="%.17g", delimiter=",")


def load_instance_csv(path) -> Instance:
    """Load a stored bid matrix exactly as written (no rescaling)."""
    matrix = np.loadtxt(path, delimiter=",", ndmin=2, dtype=np.float64)
    return Instance.from_bids(matrix)


def save_instance_binary(instance: Instance, path) -> None:
    """Write magic ``CMB1``, little-endian u32 m and n, then row-major f64."""
    payload = instance.bids.astype("<f8").tobytes(order="C")
    header = BINARY_MAGIC + struct.pack("<II", instance.m, instance.n)
    Path(path).write_bytes(header + payload)


def load_instance_binary(path) -> Instance:
    """Load a stored bid matrix exactly as written (no rescaling)."""
    blob = Path(path).read_bytes()
    if len(blob) < 12 or blob[:4] != BINARY_MAGIC:
        raise ValueError(f"{path}: not a {BINARY_MAGIC.decode()} instance file")
    m, n = struct.unpack("<II", blob[4:12])
    expected = 12 + 8 * m * n
    if len(blob) != expected:
        raise ValueError(f"{path}: expected {expected} bytes for {m}x{n}, got {len(blob)}")
    matrix = np.frombuffer(blob, dtype="<f8", offset=12).reshape(m, n).astype(np.float64)
    return Instance.from_bids(matrix)
