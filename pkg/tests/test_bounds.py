import itertools
import math

import mpmath
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from strokemem import bounds
from strokemem.bounds import (
    binom_tail_bound,
    binom_tail_exact,
    capacity_exponent_check,
    comb_pow,
    cue_size_tail_exponent,
    cue_weight_tail,
    evaluate,
    exact_recovery_exponent,
    false_positive_envelope,
    good_event_bound_fixed,
    good_event_bound_plugin,
    good_event_bound_sparse,
    good_event_bound_window,
    good_event_terms_plugin,
    margin_threshold,
    overlap_tail_bound,
    overlap_tail_bound_variable,
    overlap_tail_exact,
    q_minus_true,
    retrieval_error_bound_variable,
    simple_overlap_condition,
    spurious_fire_prob,
)
from strokemem.errors import InvalidParameterError, OutOfRegimeError
from strokemem.retrieval import exact


def enumerate_overlap_tail(l_alpha, l_beta, M, t):
    """Fraction of l_beta-subsets of [0, M) meeting {0..l_alpha-1} in more than t points."""
    target = set(range(l_alpha))
    subsets = list(itertools.combinations(range(M), l_beta))
    hit = sum(len(target.intersection(s)) >= t + 1 for s in subsets)
    return hit / len(subsets)


def enumerate_max_overlap_tail(L, M, t, competitors):
    """P(max overlap with independent competitors >= t+1), by enumerating all tuples."""
    target = set(range(L))
    subsets = list(itertools.combinations(range(M), L))
    hits = [len(target.intersection(s)) >= t + 1 for s in subsets]
    total = bad = 0
    for combo in itertools.product(range(len(subsets)), repeat=competitors):
        total += 1
        bad += any(hits[i] for i in combo)
    return bad / total


def mp_binom_tail(n, p, k):
    mpmath.mp.dps = 40
    p = mpmath.mpf(p)
    return float(mpmath.fsum(mpmath.binomial(n, j) * p**j * (1 - p) ** (n - j)
                             for j in range(k, n + 1)))


def test_overlap_tail_bound_examples():
    assert overlap_tail_bound(10, 3, 100, 1) == pytest.approx(0.027)
    assert overlap_tail_bound(7, 4, 4, 3) == pytest.approx(7)
    assert evaluate("overlap", P=7, L=4, M=4, t=3).value == 1.0
    assert overlap_tail_bound(1, 2, 5, 0) == pytest.approx(0.8)
    assert overlap_tail_exact(2, 2, 5, 0) == pytest.approx(0.7)
    assert enumerate_overlap_tail(2, 2, 5, 0) == pytest.approx(0.7)
    with pytest.raises(InvalidParameterError):
        overlap_tail_bound(1, 3, 10, 3)


def test_overlap_variable_examples():
    assert overlap_tail_bound_variable(3, 4, 100, 1) == pytest.approx(3 * (4 / 99) ** 2)
    assert overlap_tail_bound_variable(3, 4, 100, 1) == pytest.approx(0.004897, abs=1e-6)
    assert overlap_tail_bound_variable(2, 2, 5, 0) == pytest.approx(0.8)
    L, M, t = 4, 1000, 1
    ratio = overlap_tail_bound_variable(L, L, M, t) / overlap_tail_bound(1, L, M, t)
    assert 1 <= ratio <= (M / (M - t)) ** (t + 1) + 1e-12
    with pytest.raises(InvalidParameterError):
        overlap_tail_bound_variable(2, 3, 10, 2)


@pytest.mark.parametrize("M", range(2, 13))
def test_overlap_bounds_dominate_enumeration(M):
    for la in range(1, min(5, M) + 1):
        for lb in range(1, min(5, M) + 1):
            for t in range(min(la, lb)):
                ex = enumerate_overlap_tail(la, lb, M, t)
                assert overlap_tail_exact(la, lb, M, t) == pytest.approx(ex, abs=1e-12)
                assert ex <= overlap_tail_bound_variable(la, lb, M, t) + 1e-12
                if la == lb:
                    assert ex <= overlap_tail_bound(1, la, M, t) + 1e-12


@pytest.mark.parametrize("L,M,t,P", [(2, 6, 0, 3), (3, 7, 1, 3), (2, 8, 1, 4), (3, 8, 0, 2)])
def test_overlap_union_bound_dominates_max_enumeration(L, M, t, P):
    ex = enumerate_max_overlap_tail(L, M, t, P - 1)
    assert ex <= overlap_tail_bound(P, L, M, t) + 1e-12


def test_overlap_monotonicity():
    base = overlap_tail_bound(5, 4, 100, 1)
    assert overlap_tail_bound(6, 4, 100, 1) >= base
    assert overlap_tail_bound(5, 5, 100, 1) >= base
    assert overlap_tail_bound(5, 4, 101, 1) <= base
    assert overlap_tail_bound(5, 4, 100, 2) <= base


def test_binomial_spot_values():
    assert binom_tail_bound(10, 0.1, 5) == pytest.approx((math.e / 5) ** 5)
    assert binom_tail_bound(10, 0.1, 5) == pytest.approx(0.047492, abs=1e-6)
    assert binom_tail_exact(10, 0.1, 5) == pytest.approx(0.0016349374, abs=1e-10)
    assert binom_tail_exact(10, 0.1, 5) == pytest.approx(mp_binom_tail(10, 0.1, 5), rel=1e-12)
    assert binom_tail_exact(10, 0.3, 0) == 1.0
    assert binom_tail_exact(10, 0.3, 11) == 0.0
    assert binom_tail_bound(10, 0.0, 1) == 0.0
    assert binom_tail_exact(10, 0.0, 1) == 0.0
    assert binom_tail_exact(8, 0.05, 8) == pytest.approx(0.05**8, rel=1e-12)
    assert binom_tail_bound(8, 0.05, 8) >= 0.05**8
    with pytest.raises(OutOfRegimeError):
        binom_tail_bound(10, 0.5, 5)


@settings(max_examples=80, deadline=None)
@given(st.integers(1, 300), st.floats(0.0, 0.9), st.integers(0, 300))
def test_binom_tail_exact_matches_mpmath(n, p, k):
    k = min(k, n)
    assert binom_tail_exact(n, p, k) == pytest.approx(mp_binom_tail(n, p, k), rel=1e-9, abs=1e-300)


def test_binomial_bound_grid():
    for T in range(5, 201, 5):
        for p in (0.01, 0.02, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3):
            prev = math.inf
            for k in range(math.floor(T * p) + 1, T + 1):
                b = binom_tail_bound(T, p, k)
                assert binom_tail_exact(T, p, k) <= b * (1 + 1e-12)
                assert b <= prev * (1 + 1e-12)
                prev = b


def test_good_event_fixed_examples():
    assert good_event_bound_fixed(5, 0.4, 1, 0.0, 105, 0.0) == 0.0
    assert good_event_bound_fixed(5, 0.4, 1, 0.1, 105, 0.001) == pytest.approx(0.015)
    vals = [good_event_bound_fixed(4, 0.25, rho, 0.0, 50, 0.01) for rho in range(6)]
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_good_event_window_examples():
    fixed = good_event_bound_fixed(5, 0.4, 1, 0.1, 105, 0.001)
    assert good_event_bound_window(5, 5, 0.4, 1, 0.1, 0.001, 105) == pytest.approx(fixed)
    assert good_event_bound_window(2, 7, 0.3, 0, 0.0, 0.0, 50) == 0.0
    l, u, delta, rho, qm, qp, M = 2, 8, 0.3, 1, 0.05, 0.002, 60
    miss = max(math.comb(s, math.floor(delta * s) + 1) * qm ** (math.floor(delta * s) + 1)
               for s in range(l, u + 1))
    spur = max(((M - s) * qp) ** 2 / 2 for s in range(l, u + 1))
    assert good_event_bound_window(l, u, delta, rho, qm, qp, M) == pytest.approx(miss + spur)
    env = {s: 0.01 * s for s in range(l, u + 1)}
    assert good_event_bound_window(l, u, delta, rho, env, lambda s: qp, M) > 0


def test_false_positive_envelope():
    n = 4096
    p = math.log(n) / n
    theta = 0.5 * math.log(n)
    mpmath.mp.dps = 30
    ref = (mpmath.e * 20 * mpmath.log(n) / n / (mpmath.log(n) / 2)) ** (mpmath.log(n) / 2)
    assert false_positive_envelope(20, p, theta) == pytest.approx(float(ref), rel=1e-12)
    assert false_positive_envelope(20, p, theta) == pytest.approx(2.8e-7, rel=0.05)
    assert false_positive_envelope(0, p, theta) == 0.0
    exact_fire = binom_tail_exact(20, p, math.ceil(theta))
    assert exact_fire <= false_positive_envelope(20, p, theta)
    with pytest.raises(OutOfRegimeError):
        false_positive_envelope(1000, 0.01, 5.0)


def test_cue_size_exponent():
    L = 3
    assert cue_size_tail_exponent(math.e**2 * L, L) == pytest.approx(math.e**2 * L)
    assert cue_size_tail_exponent(2 * math.e * L, L) == pytest.approx(2 * math.e * L * math.log(2))
    assert cue_size_tail_exponent(math.e * L * (1 + 1e-9), L) < 1e-7
    with pytest.raises(OutOfRegimeError):
        cue_size_tail_exponent(math.e * L, L)


def test_cue_size_tail_bound_dominates_exact():
    n, L = 4096, 3
    for C in (3 * math.e * L, 2 * math.e * L, math.e**2 * L):
        cap = C * math.log(n)
        assert cue_weight_tail(n, L, math.floor(cap)) <= n ** -cue_size_tail_exponent(C, L)


def test_exact_recovery_exponent():
    assert exact_recovery_exponent(0.5) == pytest.approx(0.125)
    assert exact_recovery_exponent(1.0) == 0.0
    assert exact_recovery_exponent(0.1) == pytest.approx(0.405)
    ks = [i / 20 for i in range(1, 20)]
    vals = [exact_recovery_exponent(k) for k in ks]
    assert all(0 < v < 0.5 for v in vals)
    assert all(b < a for a, b in zip(vals, vals[1:]))


def test_light_stroke_probability_below_exponent_bound():
    for n in (256, 4096, 100_000):
        for kappa in (0.1, 0.35, 0.5, 0.8):
            assert q_minus_true(n, kappa) <= n ** -exact_recovery_exponent(kappa) * (1 + 1e-12)


def mp_good_event_sparse(n, M, L, kappa, rho, C):
    mpmath.mp.dps = 40
    log_n = mpmath.log(n)
    a = (1 - mpmath.mpf(kappa)) ** 2 / 2
    c = C * mpmath.log(C / (mpmath.e * L))
    theta = kappa * log_n
    q = (mpmath.e * C * log_n * (log_n / n) / theta) ** theta
    return float(L * n**-a + n**-c + ((M - L) * q) ** (rho + 1) / mpmath.factorial(rho + 1))


def test_good_event_sparse():
    C = 3 * math.e * 3
    terms = bounds.good_event_terms_sparse(4096, 3, 3, 0.5, 1, C)
    assert terms["false_positives"] == 0.0
    total = good_event_bound_sparse(4096, 1000, 3, 0.5, 1, C)
    assert all(math.isfinite(v) for v in bounds.good_event_terms_sparse(
        4096, 1000, 3, 0.5, 1, C).values())
    assert total == pytest.approx(mp_good_event_sparse(4096, 1000, 3, 0.5, 1, C), rel=1e-10)


def test_good_event_sparse_decreases_in_n_features():
    C = 3 * math.e * 3
    grid = [good_event_bound_sparse(n, 1000, 3, 0.5, 1, C) for n in (1024, 4096, 16384)]
    assert grid[0] > grid[1] > grid[2]
    # at N_f = 256 the cue cap C ln N_f makes T p exceed theta, outside the envelope's regime
    with pytest.raises(OutOfRegimeError):
        good_event_bound_sparse(256, 1000, 3, 0.5, 1, C)


def test_plugin_bound_is_sound_against_its_parts():
    terms = good_event_terms_plugin(4096, 200, 4, 0.5, 0.25, 1)
    assert set(terms) == {"missed_target_strokes", "cue_size_tail", "false_positives"}
    assert all(v >= 0 for v in terms.values())
    assert good_event_bound_plugin(4096, 200, 4, 0.5, 0.25, 1) == pytest.approx(0.041, abs=2e-3)
    fixed_cap = good_event_bound_plugin(4096, 200, 4, 0.5, 0.25, 1, cue_cap=40)
    assert fixed_cap >= good_event_bound_plugin(4096, 200, 4, 0.5, 0.25, 1)
    assert spurious_fire_prob(4096, 0.5, 3) == 0.0


@pytest.mark.parametrize("args,expected", [
    ((5, 5, 0.4, 1, 1, 0), 1),
    ((5, 5, 0.4, 1, 3, 7), 1),
    ((4, 6, 0.25, 1, 1, 0.5), 0),
])
def test_margin_threshold_examples(args, expected):
    assert margin_threshold(*args) == expected


def test_margin_threshold_diverges_with_width():
    vals = [margin_threshold(4, u, 0.25, 1, 1, 0.5) for u in (4, 10, 100, 1000)]
    assert vals == sorted(vals, reverse=True)
    assert vals[-1] < -400


@pytest.mark.parametrize("L", range(1, 13))
def test_margin_is_strict_for_fixed_sizes(L):
    for delta in (0.1, 0.2, 0.25, 0.3, 1 / 3, 0.4, 0.5, 0.75):
        for rho in range(3):
            t = margin_threshold(L, L, delta, rho, 1, 0)
            keep = (1 - exact(delta)) * L
            assert t + rho < keep
            assert t + 1 + rho >= keep


def test_margin_monotonicity():
    base = margin_threshold(5, 8, 0.2, 1, 1, 0.25)
    assert margin_threshold(5, 9, 0.2, 1, 1, 0.25) <= base
    assert margin_threshold(5, 8, 0.2, 2, 1, 0.25) <= base
    assert margin_threshold(5, 8, 0.3, 1, 1, 0.25) <= base
    assert margin_threshold(5, 8, 0.2, 1, 1, 0.5) <= base
    assert margin_threshold(6, 8, 0.2, 1, 1, 0.25) >= base
    assert margin_threshold(5, 8, 0.2, 1, 2, 0.25) >= base


def test_simple_overlap_condition():
    rep = simple_overlap_condition(100, 10, 10_000, 1)
    assert rep.raw == pytest.approx(0.04)
    assert rep.satisfied
    assert simple_overlap_condition(100, 10, 10_000, 2).raw < rep.raw
    assert simple_overlap_condition(7, 10, 200, 3).raw == pytest.approx(7)
    with pytest.raises(OutOfRegimeError):
        simple_overlap_condition(1, 10, 10, 1)


def test_capacity_exponent_check():
    assert capacity_exponent_check(0.6, 1, 1, uniform=False)
    assert not capacity_exponent_check(0.6, 1, 1, uniform=True)
    assert capacity_exponent_check(2.5, 1, 0, uniform=True)


def test_retrieval_error_bound_variable():
    assert retrieval_error_bound_variable(1, 6, 500, 1, 0.0, 0.0) == 0.0
    assert retrieval_error_bound_variable(2, 6, 500, 1, 0.01, 0.01) == pytest.approx(
        0.02 + 15 * (6 / 499) ** 2)
    assert retrieval_error_bound_variable(50, 6, 500, 1, 0, 0) == pytest.approx(0.10626, abs=1e-5)
    with pytest.raises(OutOfRegimeError):
        retrieval_error_bound_variable(50, 6, 500, -1, 0, 0)


def test_comb_pow_large_arguments():
    assert comb_pow(1000, 500, 0.5) == pytest.approx(
        float(mpmath.binomial(1000, 500) * mpmath.mpf(0.5) ** 500), rel=1e-9)
    assert comb_pow(5, 7, 0.5) == 0.0


def test_registry_reports():
    rep = evaluate("binom-tail", trials=10, prob=0.1, k=5)
    assert rep.oracle_value == pytest.approx(0.0016349374, abs=1e-10)
    assert rep.oracle_value <= rep.value
    rep = evaluate("overlap", P=1, L=2, M=5, t=0)
    assert rep.oracle_value == pytest.approx(0.7)
    rep = evaluate("capacity", gamma=0.6, r=1, t=1, uniform=False)
    assert rep.satisfied is True
    with pytest.raises(InvalidParameterError):
        evaluate("nope")
    for name, (_, probability, _, _) in bounds.REGISTRY.items():
        assert isinstance(probability, bool), name


def test_raw_values_nonnegative():
    assert overlap_tail_bound(3, 4, 50, 0) >= 0
    assert good_event_bound_sparse(1024, 200, 4, 0.5, 1, 3 * math.e * 4) >= 0
    assert good_event_bound_plugin(1024, 200, 4, 0.5, 0.25, 0) >= 0
