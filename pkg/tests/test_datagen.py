import math
from pathlib import Path

import numpy as np
import pytest
from scipy import integrate, stats

import concave_match as cm
from concave_match.datagen import (
    GeneratorConfig,
    _gen_category_parts,
    _positive_uniform,
    draw_category_model,
)

GOLDEN = Path(__file__).parent / "golden"


def test_generator_config_validation():
    with pytest.raises(ValueError):
        GeneratorConfig(kind="zipf", m=2, n=2)
    with pytest.raises(ValueError):
        GeneratorConfig(kind="category", m=0, n=2)
    with pytest.raises(ValueError):
        GeneratorConfig(kind="category", m=2, n=2, zero_prob=1.5)
    with pytest.raises(ValueError):
        GeneratorConfig(kind="category", m=2, n=2, base_range=(0.5, 0.2))
    with pytest.raises(ValueError):
        GeneratorConfig(kind="category", m=2, n=2, jitter=(0.0, 1.0))
    with pytest.raises(ValueError):
        GeneratorConfig(kind="category", m=2, n=2, param_scope="global")


def test_kind_dispatch_guard():
    cfg = GeneratorConfig(kind="beta", m=2, n=2)
    with pytest.raises(ValueError):
        cm.gen_category(cfg, np.random.default_rng(0))


# ---------------------------------------------------------------------------
# category generator
# ---------------------------------------------------------------------------


def test_category_shape_and_entry_range():
    cfg = GeneratorConfig(kind="category", m=8, n=300, k=10)
    inst = cm.gen_category(cfg, np.random.default_rng(12))
    assert inst.bids.shape == (8, 300)
    assert inst.bids.max() == 1.0
    nonzero = inst.bids[inst.bids > 0]
    # pre-scaling entries live in [0.2*0.9, 1*1.1]; ratios survive scaling
    assert nonzero.min() >= (0.2 * 0.9) / (1.0 * 1.1) - 1e-12


def test_category_zero_fraction_near_declared_probability():
    cfg = GeneratorConfig(kind="category", m=20, n=5000, k=100)
    inst = cm.gen_category(cfg, np.random.default_rng(7))
    frac = float((inst.bids == 0).mean())
    assert abs(frac - 0.7) <= 0.02


def test_category_model_simplex():
    cfg = GeneratorConfig(kind="category", m=5, n=10, k=40)
    model = draw_category_model(cfg, np.random.default_rng(3))
    assert model.category_probs.shape == (40,)
    assert abs(model.category_probs.sum() - 1.0) <= 1e-12
    assert np.all(model.category_probs >= 0)
    vals = model.base_valuations
    nz = vals[vals > 0]
    assert np.all((nz >= 0.2) & (nz <= 1.0))


def test_category_same_category_columns_within_jitter_factor():
    cfg = GeneratorConfig(kind="category", m=6, n=400, k=5)
    _, cats, inst = _gen_category_parts(cfg, np.random.default_rng(9))
    lo, hi = 0.9 / 1.1, 1.1 / 0.9
    for c in range(5):
        cols = np.where(cats == c)[0]
        if len(cols) < 2:
            continue
        a, b = inst.bids[:, cols[0]], inst.bids[:, cols[1]]
        mask = (a > 0) & (b > 0)
        if mask.any():
            ratio = a[mask] / b[mask]
            assert np.all((ratio >= lo - 1e-12) & (ratio <= hi + 1e-12))
        # zero pattern is a category property, shared by its columns
        np.testing.assert_array_equal(a == 0, b == 0)


def test_category_golden_file():
    cfg = GeneratorConfig(kind="category", m=5, n=20, k=3, seed=42)
    inst = cm.gen_category(cfg, np.random.default_rng(42))
    golden = cm.load_instance_binary(GOLDEN / "category_m5n20k3_seed42.bin")
    np.testing.assert_array_equal(inst.bids, golden.bids)


def test_category_matches_independent_sequence_replay():
    # re-derive the matrix from raw bit-generator words, replaying the
    # documented draw order with independent arithmetic
    m, n, k = 5, 20, 3
    cfg = GeneratorConfig(kind="category", m=m, n=n, k=k, seed=42)
    inst = cm.gen_category(cfg, np.random.default_rng(42))

    raw = np.random.PCG64(42).random_raw(2 * m * k + k + 2 * n)
    u = (raw >> np.uint64(11)) * (1.0 / (1 << 53))
    pos = 0

    def take(count):
        nonlocal pos
        block = u[pos : pos + count]
        pos += count
        return block

    zero_mask = take(m * k).reshape(m, k) < 0.7
    values = 0.2 + (1.0 - 0.2) * take(m * k).reshape(m, k)
    base = np.where(zero_mask, 0.0, values)
    expo = -np.log(take(k))
    rho = expo / expo.sum()
    cats = np.minimum(np.searchsorted(np.cumsum(rho), take(n), side="right"), k - 1)
    jitter = 0.9 + (1.1 - 0.9) * take(n)
    expect = cm.scale_instance(base[:, cats] * jitter[None, :])
    np.testing.assert_array_equal(inst.bids, expect.bids)


# ---------------------------------------------------------------------------
# truncated normal generator
# ---------------------------------------------------------------------------


def _truncated_normal_mean(mu, sigma):
    if sigma == 0:
        return min(max(mu, 0.0), 1.0)
    density = lambda x: math.exp(-0.5 * ((x - mu) / sigma) ** 2)
    mass, _ = integrate.quad(density, 0.0, 1.0)
    first, _ = integrate.quad(lambda x: x * density(x), 0.0, 1.0)
    return first / mass


def test_truncated_normal_range_and_means():
    m, n = 4, 20_000
    cfg = GeneratorConfig(kind="truncated_normal", m=m, n=n)
    seed = 101
    inst = cm.gen_truncated_normal(cfg, np.random.default_rng(seed))
    assert np.all((inst.bids >= 0) & (inst.bids <= 1))
    # replay the leading parameter draws (they head the stream)
    replay = np.random.default_rng(seed)
    mu = replay.random(m)
    sigma = replay.random(m)
    scale = inst.scale_factor  # max draw, re-applied to undo scaling
    for i in range(m):
        expected = _truncated_normal_mean(mu[i], sigma[i])
        observed = inst.bids[i].mean() * scale
        assert abs(observed - expected) <= 0.02


def test_truncated_normal_entry_scope_and_determinism():
    cfg = GeneratorConfig(kind="truncated_normal", m=3, n=50, param_scope="entry")
    a = cm.gen_truncated_normal(cfg, np.random.default_rng(5))
    b = cm.gen_truncated_normal(cfg, np.random.default_rng(5))
    np.testing.assert_array_equal(a.bids, b.bids)
    assert np.all((a.bids >= 0) & (a.bids <= 1))


# ---------------------------------------------------------------------------
# beta generator
# ---------------------------------------------------------------------------


def test_beta_range_and_moment_identity():
    m, n = 4, 20_000
    cfg = GeneratorConfig(kind="beta", m=m, n=n)
    seed = 202
    inst = cm.gen_beta(cfg, np.random.default_rng(seed))
    assert np.all((inst.bids >= 0) & (inst.bids <= 1))
    replay = np.random.default_rng(seed)
    alpha = _positive_uniform(replay, m)
    beta = _positive_uniform(replay, m)
    scale = inst.scale_factor
    for i in range(m):
        expected = alpha[i] / (alpha[i] + beta[i])
        observed = inst.bids[i].mean() * scale
        assert abs(observed - expected) <= 0.02


def test_beta_symmetric_parameters_mean_half():
    rng = np.random.default_rng(77)
    draws = rng.beta(0.4, 0.4, size=20_000)
    assert abs(draws.mean() - 0.5) <= 0.02


# ---------------------------------------------------------------------------
# mixed generator
# ---------------------------------------------------------------------------


def test_mixed_range_mean_and_determinism():
    cfg = GeneratorConfig(kind="mixed", m=20, n=5000)
    a = cm.gen_mixed(cfg, np.random.default_rng(303))
    b = cm.gen_mixed(cfg, np.random.default_rng(303))
    np.testing.assert_array_equal(a.bids, b.bids)
    assert np.all((a.bids >= 0) & (a.bids <= 1))
    # both mixture components are symmetric about one half
    assert abs(a.bids.mean() * a.scale_factor - 0.5) <= 0.02


# ---------------------------------------------------------------------------
# common generator properties
# ---------------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["category", "truncated_normal", "beta", "mixed"])
def test_generator_outputs_are_scaled_instances(kind):
    cfg = GeneratorConfig(kind=kind, m=4, n=60, k=10)
    inst = cm.generate(cfg, np.random.default_rng(11))
    assert inst.bids.max() == 1.0
    rescaled = cm.scale_instance(inst.bids)
    np.testing.assert_array_equal(inst.bids, rescaled.bids)
    assert rescaled.scale_factor == 1.0


# ---------------------------------------------------------------------------
# permutation sampling
# ---------------------------------------------------------------------------


def test_sample_permutation_basics():
    order = cm.sample_permutation(1, np.random.default_rng(0))
    np.testing.assert_array_equal(order.permutation, [0])
    for seed in range(5):
        order = cm.sample_permutation(17, np.random.default_rng(seed), seed=seed)
        np.testing.assert_array_equal(np.sort(order.permutation), np.arange(17))
        assert order.seed == seed


def test_permutation_position_uniformity_chi_square():
    n, draws = 5, 100_000
    rng = np.random.default_rng(424242)
    counts = np.zeros((n, n), dtype=np.int64)
    for _ in range(draws):
        perm = rng.permutation(n)
        counts[np.arange(n), perm] += 1
    expected = draws / n
    statistic = float(((counts - expected) ** 2 / expected).sum())
    p_value = float(stats.chi2.sf(statistic, (n - 1) ** 2))
    assert p_value > 0.001
