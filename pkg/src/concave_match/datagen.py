"""Synthetic bid-matrix generators and arrival-order sampling.

Each generator is a pure function of ``(config, rng)``: identical seeds
reproduce identical instances. Draw sequences are documented because the
category generator is pinned by a golden file that replays the sequence
from the raw bit stream.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import ArrivalOrder, Instance, scale_instance

GENERATOR_KINDS = ("category", "truncated_normal", "beta", "mixed")
PARAM_SCOPES = ("bidder", "entry")


@dataclass(frozen=True)
class GeneratorConfig:
    """Declarative description of one synthetic bid-matrix family."""

    kind: str
    m: int
    n: int
    k: int = 100
    zero_prob: float = 0.7
    base_range: tuple[float, float] = (0.2, 1.0)
    jitter: tuple[float, float] = (0.9, 1.1)
    param_scope: str = "bidder"
    seed: Optional[int] = None

    def __post_init__(self) -> None:
        if self.kind not in GENERATOR_KINDS:
            raise ValueError(f"kind must be one of {GENERATOR_KINDS}, got {self.kind!r}")
        if self.m < 1 or self.n < 1:
            raise ValueError(f"m and n must be >= 1, got m={self.m}, n={self.n}")
        if self.k < 1:
            raise ValueError(f"k must be >= 1, got {self.k}")
        if not 0.0 <= self.zero_prob <= 1.0:
            raise ValueError(f"zero_prob must lie in [0, 1], got {self.zero_prob}")
        object.__setattr__(self, "base_range", tuple(float(v) for v in self.base_range))
        object.__setattr__(self, "jitter", tuple(float(v) for v in self.jitter))
        lo, hi = self.base_range
        if not (0.0 <= lo <= hi):
            raise ValueError(f"base_range must satisfy 0 <= lo <= hi, got {self.base_range}")
        jlo, jhi = self.jitter
        if not (0.0 < jlo <= jhi):
            raise ValueError(f"jitter must satisfy 0 < lo <= hi, got {self.jitter}")
        if self.param_scope not in PARAM_SCOPES:
            raise ValueError(
                f"param_scope must be one of {PARAM_SCOPES}, got {self.param_scope!r}"
            )


@dataclass(frozen=True, eq=False)
class CategoryModel:
    """Latent per-category valuations and the category mix."""

    base_valuations: np.ndarray  # (m, k)
    category_probs: np.ndarray  # (k,), sums to one

    def __post_init__(self) -> None:
        probs = np.asarray(self.category_probs, dtype=np.float64)
        vals = np.asarray(self.base_valuations, dtype=np.float64)
        object.__setattr__(self, "category_probs", probs)
        object.__setattr__(self, "base_valuations", vals)
        if probs.ndim != 1 or vals.ndim != 2 or vals.shape[1] != probs.shape[0]:
            raise ValueError("base_valuations must be (m, k) with k category probs")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("category_probs must be a probability vector")
        if np.any(vals < 0):
            raise ValueError("base valuations must be non-negative")


def _uniform(rng: np.random.Generator, lo: float, hi: float, shape) -> np.ndarray:
    # explicit affine transform of rng.random so the word stream is replayable
    return lo + (hi - lo) * rng.random(shape)


def draw_category_model(cfg: GeneratorConfig, rng: np.random.Generator) -> CategoryModel:
    """Draw the latent category model.

    Sequence: (1) an (m, k) uniform block deciding which base valuations
    are zero, (2) an (m, k) uniform block of valuations on
    ``base_range``, (3) k uniforms turned into exponentials and
    normalised, which is the flat distribution on the simplex.
    """
    zero_mask = rng.random((cfg.m, cfg.k)) < cfg.zero_prob
    values = _uniform(rng, *cfg.base_range, (cfg.m, cfg.k))
    base = np.where(zero_mask, 0.0, values)
    expo = -np.log(rng.random(cfg.k))
    probs = expo / expo.sum()
    return CategoryModel(base_valuations=base, category_probs=probs)


def _gen_category_parts(cfg: GeneratorConfig, rng: np.random.Generator):
    """Category instance plus its latent parts (model, per-arrival categories)."""
    model = draw_category_model(cfg, rng)
    # inverse-CDF category draw: one uniform per arrival
    cuts = np.cumsum(model.category_probs)
    cats = np.searchsorted(cuts, rng.random(cfg.n), side="right")
    cats = np.minimum(cats, cfg.k - 1)
    jitter = _uniform(rng, *cfg.jitter, cfg.n)
    bids = model.base_valuations[:, cats] * jitter[None, :]
    return model, cats, scale_instance(bids)


def gen_category(cfg: GeneratorConfig, rng: np.random.Generator) -> Instance:
    """Category-structured bids: per-arrival category and jitter.

    Each arrival draws one category from the simplex-distributed mix and
    one jitter factor; every bidder bids its base valuation for that
    category times the arrival's jitter. Keeping the jitter per arrival
    preserves the within-category bidder ranking, which is what makes
    the myopic baseline over-concentrate on these inputs. The result is
    scaled to max bid one.
    """
    if cfg.kind != "category":
        raise ValueError(f"config kind is {cfg.kind!r}, expected 'category'")
    _, _, instance = _gen_category_parts(cfg, rng)
    return instance


def _sample_truncated_normal(
    mu: np.ndarray, sigma: np.ndarray, rng: np.random.Generator, max_rounds: int = 10_000
) -> np.ndarray:
    """Rejection-sample Normal(mu, sigma) conditioned on [0, 1], elementwise."""
    out = np.empty_like(mu)
    pending = np.ones(mu.shape, dtype=bool)
    for _ in range(max_rounds):
        count = int(pending.sum())
        if count == 0:
            break
        draws = mu[pending] + sigma[pending] * rng.standard_normal(count)
        good = (draws >= 0.0) & (draws <= 1.0)
        slots = np.zeros(count, dtype=bool)
        slots[good] = True
        target = np.where(pending)
        accept_idx = tuple(axis[good] for axis in target)
        out[accept_idx] = draws[good]
        still = pending.copy()
        still[accept_idx] = False
        pending = still
    if pending.any():
        # effectively zero acceptance region; fall back to the clipped mean
        out[pending] = np.clip(mu[pending], 0.0, 1.0)
    return out


def gen_truncated_normal(cfg: GeneratorConfig, rng: np.random.Generator) -> Instance:
    """Bids from per-bidder normals conditioned on [0, 1].

    Means and standard deviations are uniform on [0, 1]; truncation is by
    rejection so entries follow the conditional law, not a clipped one.
    ``param_scope='entry'`` draws one (mu, sigma) pair per entry instead.
    """
    if cfg.kind != "truncated_normal":
        raise ValueError(f"config kind is {cfg.kind!r}, expected 'truncated_normal'")
    if cfg.param_scope == "bidder":
        mu = np.broadcast_to(rng.random(cfg.m)[:, None], (cfg.m, cfg.n)).copy()
        sigma = np.broadcast_to(rng.random(cfg.m)[:, None], (cfg.m, cfg.n)).copy()
    else:
        mu = rng.random((cfg.m, cfg.n))
        sigma = rng.random((cfg.m, cfg.n))
    bids = _sample_truncated_normal(mu, sigma, rng)
    return scale_instance(bids)


def _positive_uniform(rng: np.random.Generator, shape) -> np.ndarray:
    """U(0, 1] draws: zeros are redrawn (beta parameters must be positive)."""
    out = rng.random(shape)
    while True:
        zero = out == 0.0
        if not zero.any():
            return out
        out[zero] = rng.random(int(zero.sum()))


def gen_beta(cfg: GeneratorConfig, rng: np.random.Generator) -> Instance:
    """Bids from per-bidder beta distributions with uniform parameters."""
    if cfg.kind != "beta":
        raise ValueError(f"config kind is {cfg.kind!r}, expected 'beta'")
    if cfg.param_scope == "bidder":
        alpha = _positive_uniform(rng, cfg.m)[:, None]
        beta = _positive_uniform(rng, cfg.m)[:, None]
        bids = rng.beta(alpha, beta, size=(cfg.m, cfg.n))
    else:
        alpha = _positive_uniform(rng, (cfg.m, cfg.n))
        beta = _positive_uniform(rng, (cfg.m, cfg.n))
        bids = rng.beta(alpha, beta)
    return scale_instance(bids)


def gen_mixed(cfg: GeneratorConfig, rng: np.random.Generator) -> Instance:
    """Fair per-entry mixture of a [0,1]-truncated Normal(0.5, 0.5) and Beta(0.5, 0.5)."""
    if cfg.kind != "mixed":
        raise ValueError(f"config kind is {cfg.kind!r}, expected 'mixed'")
    shape = (cfg.m, cfg.n)
    coin = rng.random(shape) < 0.5
    normal_part = _sample_truncated_normal(
        np.full(shape, 0.5), np.full(shape, 0.5), rng
    )
    beta_part = rng.beta(0.5, 0.5, size=shape)
    return scale_instance(np.where(coin, normal_part, beta_part))


_DISPATCH = {
    "category": gen_category,
    "truncated_normal": gen_truncated_normal,
    "beta": gen_beta,
    "mixed": gen_mixed,
}


def generate(cfg: GeneratorConfig, rng: np.random.Generator) -> Instance:
    """Dispatch to the generator named by ``cfg.kind``."""
    return _DISPATCH[cfg.kind](cfg, rng)


def sample_permutation(
    n: int, rng: np.random.Generator, seed: Optional[int] = None
) -> ArrivalOrder:
    """Uniform arrival order (numpy's Fisher-Yates shuffle).

    ``seed`` is recorded for provenance only; the draw comes from ``rng``.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return ArrivalOrder(rng.permutation(n), seed=seed)
