import itertools
import math

import numpy as np
import pytest

import walklab as wl
from walklab.errors import DeficitBudgetError, ValidationError


# ---------------------------------------------------------------------------
# distributions
# ---------------------------------------------------------------------------

def test_distribution_canonical_trimming():
    d = wl.DiscreteDistribution(offset=3, probs=np.array([0.0, 0.5, 0.5, 0.0]))
    assert d.offset == 4
    assert d.end == 5
    assert d.mass() == 1.0


def test_chain_state_validation():
    state = wl.ChainState(x=3, y=0)
    assert (state.x, state.y) == (3, 0)
    with pytest.raises(ValidationError):
        wl.ChainState(x=-1, y=0)
    with pytest.raises(ValidationError):
        wl.ChainState(x=0, y=-2)


def test_distribution_validation():
    with pytest.raises(ValidationError):
        wl.DiscreteDistribution(0, np.array([0.5, -0.1, 0.6]))
    with pytest.raises(ValidationError):
        wl.DiscreteDistribution(0, np.array([0.5, 0.4]))  # mass gap
    with pytest.raises(ValidationError):
        wl.DiscreteDistribution(0, np.array([0.0, 0.0]))


def test_convolve_trims_contiguous_tail_into_deficit():
    a = wl.DiscreteDistribution(1, np.array([0.5, 0.3, 0.15, 0.05]))
    b = a.convolve(a, trunc_tol=0.01)
    assert b.offset == 2
    # support stays contiguous and trimmed mass is accounted exactly
    assert abs(b.mass() + b.deficit - 1.0) < 1e-12
    assert 0.0 < b.deficit <= 0.01
    full = np.convolve(a.probs, a.probs)
    np.testing.assert_allclose(b.probs, full[: b.probs.size], rtol=0, atol=0)


# ---------------------------------------------------------------------------
# sojourn laws
# ---------------------------------------------------------------------------

def test_sojourn_pmf_exact_site(exact_site):
    pmf = wl.sojourn_pmf(exact_site)
    assert pmf.offset == 1
    np.testing.assert_allclose(pmf.probs, [0.5, 0.25, 0.25], atol=0)
    assert pmf.deficit == 0.0


def test_sojourn_pmf_geometric(geometric_env):
    pmf = wl.sojourn_pmf(geometric_env.site(0))
    n = np.arange(1, 8)
    np.testing.assert_allclose(pmf.probs[:7], 0.5**n, rtol=1e-15)


def test_sojourn_tail_identity(geometric_env):
    # P(tau >= n) = omega_{n-1}
    site = geometric_env.site(0)
    pmf = wl.sojourn_pmf(site)
    for n in (1, 2, 5, 10):
        tail = pmf.mass() - pmf.cdf_at(n - 1) + pmf.deficit
        assert tail == pytest.approx(site.values[n - 1], rel=1e-12)


def test_sample_sojourn_examples(geometric_env):
    site = geometric_env.site(0)
    assert wl.sample_sojourn(site, 0.0) == (1, False)
    assert wl.sample_sojourn(site, 0.6) == (2, False)
    n_last = site.last_index
    # boundary uniform 1 - omega_N starts the next half-open interval
    draw = wl.sample_sojourn(site, 1.0 - site.values[n_last])
    assert draw == (n_last + 1, False)
    # deficit region maps to the last representable value with a flag
    draw = wl.sample_sojourn(site, 1.0 - site.deficit / 2)
    assert draw == (n_last + 1, True)
    with pytest.raises(ValidationError):
        wl.sample_sojourn(site, 1.0)


def test_sample_sojourn_matches_pmf(geometric_env):
    site = geometric_env.site(0)
    rng = np.random.default_rng(0)
    u = rng.random(200_000)
    draws = np.array([wl.sample_sojourn(site, v).n for v in u[:1000]])
    # distributional sanity at coarse scale
    assert np.mean(draws == 1) == pytest.approx(0.5, abs=0.05)
    assert np.mean(draws) == pytest.approx(2.0, abs=0.15)


# ---------------------------------------------------------------------------
# hitting-time laws
# ---------------------------------------------------------------------------

def test_hitting_time_x0_is_point_mass(geometric_env):
    d = wl.hitting_time_distribution(geometric_env, 0)
    assert d.offset == 0 and d.probs.size == 1 and d.probs[0] == 1.0


def test_hitting_time_geometric_closed_form(geometric_env):
    # T_x is a sum of x independent dyadic geometrics: P(T_x = k) = C(k-1, x-1) 2^-k
    for x in (2, 5):
        d = wl.hitting_time_distribution(geometric_env, x, trunc_tol=0.0)
        ks = d.support[:40]
        oracle = np.array([math.comb(k - 1, x - 1) * 0.5**k for k in ks])
        np.testing.assert_allclose(d.probs[:40], oracle, rtol=1e-12)
    d2 = wl.hitting_time_distribution(geometric_env, 2, trunc_tol=0.0)
    assert d2.prob_at(2) == pytest.approx(0.25, abs=1e-15)
    assert d2.prob_at(3) == pytest.approx(0.25, abs=1e-15)
    assert d2.prob_at(4) == pytest.approx(3.0 / 16.0, abs=1e-15)


def test_hitting_time_moments_match_diagnostics(geometric_env):
    x = 20
    diag = wl.diagnostics(geometric_env, 3.0)
    d = wl.hitting_time_distribution(geometric_env, x, trunc_tol=1e-14)
    slack = 1e-8 + d.deficit * (d.end + 1)
    assert abs(d.mean() - diag.mu[x]) <= slack
    assert abs(d.variance() - diag.sigma2[x]) <= 1e-6


def test_hitting_time_matches_brute_force_enumeration(geometric_env):
    # sojourns clipped to {1..6}; exhaustive enumeration over tuples
    clipped = wl.TailSequence(geometric_env.site(0).values[:6],
                              deficit=geometric_env.site(0).values[6])
    env = wl.Environment([clipped] * 4)
    x = 3
    pmf = wl.sojourn_pmf(clipped)
    table = {}
    for combo in itertools.product(range(1, 7), repeat=x):
        table[sum(combo)] = table.get(sum(combo), 0.0) + np.prod(
            [pmf.prob_at(v) for v in combo]
        )
    d = wl.hitting_time_distribution(env, x, trunc_tol=0.0, deficit_budget=1.0)
    for k, p in table.items():
        assert abs(d.prob_at(k) - p) < 1e-12


def test_deficit_budget_enforced(geometric_env):
    with pytest.raises(DeficitBudgetError):
        wl.hitting_time_distribution(geometric_env, 40, trunc_tol=1e-4,
                                     deficit_budget=1e-6)


# ---------------------------------------------------------------------------
# position laws
# ---------------------------------------------------------------------------

def test_position_n0_point_mass(geometric_env):
    d = wl.position_distribution(geometric_env, 0)
    assert d.offset == 0 and d.probs.size == 1


def test_position_geometric_n2(geometric_env):
    d = wl.position_distribution(geometric_env, 2, trunc_tol=0.0)
    np.testing.assert_allclose(d.probs, [0.25, 0.5, 0.25], atol=1e-15)


def test_position_small_x_equals_tail(geometric_env):
    # P(X_n = 0) = omega^0_n
    d = wl.position_distribution(geometric_env, 7, trunc_tol=0.0)
    assert d.prob_at(0) == pytest.approx(0.5**7, rel=1e-12)


def test_position_support_and_mass(geometric_env, powerlaw_env):
    for env, n in ((geometric_env, 15), (powerlaw_env, 9)):
        d = wl.position_distribution(env, n, trunc_tol=1e-13)
        assert d.offset >= 0 and d.end <= n
        assert abs(d.mass() + d.deficit - 1.0) < 1e-9


def test_position_two_routes_agree(geometric_env, powerlaw_env, lsv_env):
    for env in (geometric_env, powerlaw_env, lsv_env):
        a = wl.position_distribution(env, 12, trunc_tol=1e-13)
        b = wl.position_distribution_from_hitting_cdf(env, 12, trunc_tol=1e-13)
        lo = min(a.offset, b.offset)
        hi = max(a.end, b.end)
        for k in range(lo, hi + 1):
            assert abs(a.prob_at(k) - b.prob_at(k)) < 1e-11


def test_degenerate_env_walks_deterministically():
    site = wl.TailSequence(np.array([1.0, 1e-15]), deficit=0.0)
    env = wl.Environment([site] * 25)
    cfg = wl.McConfig(paths=200, horizon=20, seed=4)
    sample = wl.simulate_paths(env, cfg, method="sojourn")
    assert np.all(sample.x_final == 20)


# ---------------------------------------------------------------------------
# simulators
# ---------------------------------------------------------------------------

def test_mcconfig_validation():
    with pytest.raises(ValidationError):
        wl.McConfig(paths=0, horizon=5, seed=1)
    with pytest.raises(ValidationError):
        wl.McConfig(paths=1, horizon=5, seed=1, record="everything")


def test_simulators_reproducible(geometric_env):
    cfg = wl.McConfig(paths=5000, horizon=12, seed=11)
    a = wl.simulate_paths(geometric_env, cfg, method="chain")
    b = wl.simulate_paths(geometric_env, cfg, method="chain")
    np.testing.assert_array_equal(a.x_final, b.x_final)
    np.testing.assert_array_equal(a.y_final, b.y_final)
    c = wl.simulate_paths(geometric_env, cfg, method="chain", component="other")
    assert not np.array_equal(a.x_final, c.x_final)


def test_endpoint_matches_exact_law(geometric_env):
    paths = 100_000
    cfg = wl.McConfig(paths=paths, horizon=2, seed=21)
    for method in ("chain", "sojourn"):
        sample = wl.simulate_paths(geometric_env, cfg, method=method)
        freq1 = np.mean(sample.x_final == 1)
        assert abs(freq1 - 0.5) < 3.0 * math.sqrt(0.25 / paths)


def test_chain_and_sojourn_agree_in_distribution(geometric_env):
    paths = 100_000
    n = 20
    cfg = wl.McConfig(paths=paths, horizon=n, seed=31)
    a = wl.simulate_paths(geometric_env, cfg, method="chain")
    b = wl.simulate_paths(geometric_env, cfg, method="sojourn")
    ca, cb = a.endpoint_counts(), b.endpoint_counts()
    size = max(ca.size, cb.size)
    ca = np.pad(ca, (0, size - ca.size)) / paths
    cb = np.pad(cb, (0, size - cb.size)) / paths
    tv = 0.5 * np.abs(ca - cb).sum()
    assert tv <= wl.mc_tv_tolerance(size, paths)
    # levels agree too: both simulators expose (x, y) endpoints
    _, ya, na = a.level_counts()
    _, yb, nb = b.level_counts()
    assert abs(np.average(ya, weights=na) - np.average(yb, weights=nb)) < 0.05


def test_hitting_record_mean(geometric_env):
    paths = 20_000
    x = 12
    cfg = wl.McConfig(paths=paths, horizon=x, seed=41, record="hitting-times")
    sample = wl.simulate_paths(geometric_env, cfg)
    diag = wl.diagnostics(geometric_env, 3.0)
    emp = sample.hitting[:, x].mean()
    se = sample.hitting[:, x].std() / math.sqrt(paths)
    assert abs(emp - diag.mu[x]) <= 3.0 * se


def test_full_path_record(geometric_env):
    cfg = wl.McConfig(paths=50, horizon=10, seed=51, record="full-path")
    sample = wl.simulate_paths(geometric_env, cfg)
    assert sample.full_x.shape == (50, 11)
    # x is non-decreasing along every path and increments by at most 1
    steps = np.diff(sample.full_x, axis=1)
    assert steps.min() >= 0 and steps.max() <= 1
    # y decreases by exactly 1 between steps within a site
    same_site = steps == 0
    dy = np.diff(sample.full_y, axis=1)
    assert np.all(dy[same_site] == -1)


def test_checkpoint_records(geometric_env):
    cfg = wl.McConfig(paths=3000, horizon=40, seed=61)
    times = [10, 20, 40]
    sample = wl.simulate_paths(geometric_env, cfg, method="sojourn", times=times)
    assert sample.x_at_times.shape == (3000, 3)
    assert np.all(np.diff(sample.x_at_times, axis=1) >= 0)
    np.testing.assert_array_equal(sample.x_at_times[:, -1], sample.x_final)


def test_tv_distance_helper():
    d = wl.DiscreteDistribution(0, np.array([0.5, 0.5]))
    counts = np.array([40, 60])
    assert wl.tv_distance(d, counts, 100) == pytest.approx(0.1)


# ---------------------------------------------------------------------------
# randomized properties
# ---------------------------------------------------------------------------

def random_tail(rng):
    length = rng.integers(2, 40)
    drops = rng.uniform(0.05, 1.0, size=length)
    vals = np.concatenate(([1.0], 1.0 * np.cumprod(1.0 - drops * rng.uniform(0.2, 0.9))))
    vals = np.unique(vals)[::-1]
    deficit = float(vals[-1] * rng.uniform(0.0, 1.0))
    return wl.TailSequence(vals, deficit=deficit)


def test_property_mass_conservation_through_convolutions():
    rng = np.random.default_rng(1234)
    for _ in range(25):
        sites = [random_tail(rng) for _ in range(8)]
        env = wl.Environment(sites)
        dist = wl.hitting_time_distribution(env, 4, trunc_tol=1e-9, deficit_budget=1.0)
        assert abs(dist.mass() + dist.deficit - 1.0) < 1e-9
        assert np.all(dist.probs >= 0.0)
        n = int(rng.integers(0, 8))
        pos = wl.position_distribution(env, n, trunc_tol=1e-9, deficit_budget=1.0)
        assert abs(pos.mass() + pos.deficit - 1.0) < 1e-9
        assert pos.end <= n


def test_property_sampler_consistent_with_pmf_intervals():
    rng = np.random.default_rng(99)
    for _ in range(10):
        site = random_tail(rng)
        pmf = wl.sojourn_pmf(site)
        cdf = np.concatenate(([0.0], np.cumsum(pmf.probs)))
        for u in rng.uniform(0.0, 1.0 - site.deficit - 1e-12, size=20):
            n, truncated = wl.sample_sojourn(site, float(u))
            assert not truncated
            assert cdf[n - 1] <= u < cdf[n] + 1e-15
