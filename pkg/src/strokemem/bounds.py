"""Closed-form bounds, exponents and margins, plus exact tail oracles.

Every probability bound is returned raw (possibly above 1).  Use
:func:`evaluate` to get a :class:`BoundReport` that also carries the
clamped value, the inputs and, where one exists, an exact oracle value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

from scipy import stats

from .errors import InvalidParameterError, OutOfRegimeError
from .retrieval import exact


# ---------------------------------------------------------------------------
# reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class BoundReport:
    name: str
    inputs: dict
    raw: float
    value: float
    oracle_value: float | None = None
    satisfied: bool | None = None
    terms: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "name": self.name,
            "inputs": dict(self.inputs),
            "value": self.value,
            "raw": self.raw,
            "oracle_value": self.oracle_value,
            "satisfied": self.satisfied,
            "terms": dict(self.terms),
        }


def make_report(name, raw, inputs, probability=True, oracle=None, satisfied=None, terms=None):
    raw = float(raw)
    value = min(max(raw, 0.0), 1.0) if probability else raw
    return BoundReport(name, dict(inputs), raw, value,
                       None if oracle is None else float(oracle), satisfied, dict(terms or {}))


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def comb_pow(n, k, base):
    """``C(n, k) * base**k`` without overflowing for large ``n``."""
    if k < 0 or k > n:
        return 0.0
    if k == 0:
        return 1.0
    if base == 0:
        return 0.0
    c = math.comb(n, k)
    log_value = math.log(c) + k * math.log(base)
    if c < 2**53 and -700 < log_value < 700:
        return float(c) * base**k
    if log_value > 709:
        return math.inf
    return math.exp(log_value)


def _binom_split(n, p, k):
    """``(P(X < k), P(X >= k))`` for ``X ~ Bin(n, p)``.

    Both sides come from the regularised incomplete beta function, so the
    small side keeps full relative accuracy deep in the tail.
    """
    if k <= 0:
        return 0.0, 1.0
    if k > n:
        return 1.0, 0.0
    return float(stats.binom.cdf(k - 1, n, p)), float(stats.binom.sf(k - 1, n, p))


def _check_prob(p, name="prob"):
    if not 0 <= p <= 1:
        raise InvalidParameterError(f"{name} must lie in [0, 1], got {p}")


# ---------------------------------------------------------------------------
# binomial tails
# ---------------------------------------------------------------------------


def binom_tail_exact(trials, prob, k):
    """``P(X >= k)`` for ``X ~ Bin(trials, prob)``."""
    _check_prob(prob)
    if not 0 <= k <= trials + 1:
        raise InvalidParameterError(f"k must lie in [0, trials + 1], got {k}")
    return _binom_split(int(trials), float(prob), int(k))[1]


def binom_cdf_below(trials, prob, k):
    """``P(X < k)`` for ``X ~ Bin(trials, prob)``."""
    _check_prob(prob)
    return _binom_split(int(trials), float(prob), int(k))[0]


def binom_tail_bound(trials, prob, k):
    """``(e T p / k)^k``, valid for integers ``k > T p``."""
    _check_prob(prob)
    if k < 1 or k <= trials * prob:
        raise OutOfRegimeError(f"binomial tail bound needs k >= 1 and k > T p = {trials * prob}")
    return (math.e * trials * prob / k) ** k


# ---------------------------------------------------------------------------
# concept overlaps
# ---------------------------------------------------------------------------


def overlap_tail_bound(P, L, M, t):
    """``P C(L, t+1) (L/M)^(t+1)``: union bound on ``max overlap >= t+1``.

    With ``P = 1`` this is the single-pair bound.
    """
    if not 0 <= t <= L - 1:
        raise InvalidParameterError(f"t must lie in [0, L-1] = [0, {L - 1}], got {t}")
    if not 1 <= L <= M:
        raise InvalidParameterError(f"need 1 <= L <= M, got L={L}, M={M}")
    return P * comb_pow(L, t + 1, L / M)


def overlap_tail_bound_variable(l_alpha, l_beta, M, t):
    """``C(l_alpha, t+1) (l_beta / (M - t))^(t+1)`` for sizes conditioned on."""
    if t < 0 or t >= min(l_alpha, l_beta):
        raise InvalidParameterError(f"need 0 <= t < min(l_alpha, l_beta), got t={t}")
    if max(l_alpha, l_beta) > M:
        raise InvalidParameterError("concept sizes cannot exceed M")
    return comb_pow(l_alpha, t + 1, l_beta / (M - t))


def overlap_tail_exact(l_alpha, l_beta, M, t):
    """Exact ``P(|S_alpha & S_beta| >= t+1)`` for independent uniform subsets.

    The overlap is hypergeometric; the sum is carried out in integers.
    """
    if max(l_alpha, l_beta) > M or min(l_alpha, l_beta) < 0:
        raise InvalidParameterError("invalid subset sizes")
    total = math.comb(M, l_beta)
    hit = sum(math.comb(l_alpha, j) * math.comb(M - l_alpha, l_beta - j)
              for j in range(max(t + 1, 0), min(l_alpha, l_beta) + 1))
    return hit / total


# ---------------------------------------------------------------------------
# good event
# ---------------------------------------------------------------------------


def _false_positive_term(n, q, rho):
    """``(n q)^(rho+1) / (rho+1)!``, evaluated in log space for large ``rho``."""
    x = n * q
    if x == 0:
        return 0.0
    log_value = (rho + 1) * math.log(x) - math.lgamma(rho + 2)
    return math.inf if log_value > 709 else math.exp(log_value)


def miss_count(delta, size):
    """``m = floor(delta * size) + 1``: the smallest miss count that breaks the good event."""
    return math.floor(exact(delta) * size) + 1


def good_event_bound_fixed(L, delta, rho, q_minus_true, M, q_plus_env):
    """``C(L, m) q_-^m + ((M - L) q_+)^(rho+1) / (rho+1)!`` with ``m = floor(delta L) + 1``."""
    if L > M:
        raise InvalidParameterError("L cannot exceed M")
    _check_prob(q_minus_true, "q_minus_true")
    if q_plus_env < 0:
        raise InvalidParameterError("q_plus_env must be nonnegative")
    m = miss_count(delta, L)
    return comb_pow(L, m, q_minus_true) + _false_positive_term(M - L, q_plus_env, rho)


def _envelope(e):
    if callable(e):
        return e
    if isinstance(e, dict):
        return e.__getitem__
    return lambda _size: e


def good_event_bound_window(l, u, delta, rho, q_minus, q_plus, M):
    """Worst per-size good-event bound over the window ``[l, u]``.

    ``q_minus`` and ``q_plus`` are size-indexed envelopes: a callable, a
    mapping from size to probability, or a constant.  The two terms are
    maximised separately, as in the conditions of the window lemma, so the
    result bounds ``P(G^c | L = size)`` for every size in the window.
    """
    if not 1 <= l <= u <= M:
        raise InvalidParameterError(f"need 1 <= l <= u <= M, got l={l}, u={u}, M={M}")
    qm, qp = _envelope(q_minus), _envelope(q_plus)
    miss = max(comb_pow(s, miss_count(delta, s), qm(s)) for s in range(l, u + 1))
    spur = max(_false_positive_term(M - s, qp(s), rho) for s in range(l, u + 1))
    return miss + spur


def false_positive_envelope(cue_weight, sparsity, threshold):
    """``(e T p / theta)^theta``: bound on one false stroke firing, valid for ``theta > T p``."""
    _check_prob(sparsity, "sparsity")
    if cue_weight < 0:
        raise InvalidParameterError("cue weight must be nonnegative")
    if threshold <= cue_weight * sparsity:
        raise OutOfRegimeError(
            f"false-positive envelope needs theta > T p ({threshold} <= {cue_weight * sparsity})"
        )
    return (math.e * cue_weight * sparsity / threshold) ** threshold


def cue_size_tail_exponent(C, L):
    """``c(C, L) = C ln(C / (e L))``, so that ``P(T > C ln N_f) <= N_f^-c``."""
    if C <= math.e * L:
        raise OutOfRegimeError(f"cue-size bound needs C > e L = {math.e * L}")
    return C * math.log(C / (math.e * L))


def cue_size_tail_bound(C, L, n_features):
    return n_features ** -cue_size_tail_exponent(C, L)


def exact_recovery_exponent(kappa):
    """``a(kappa) = (1 - kappa)^2 / 2``."""
    if not 0 <= kappa <= 1:
        raise InvalidParameterError(f"kappa must lie in [0, 1], got {kappa}")
    return 0.5 * (1.0 - kappa) ** 2


def exact_recovery_failure_bound(n_strokes, n_features, kappa):
    """``M N_f^-a``: union bound on some stroke being lighter than the threshold."""
    return n_strokes * n_features ** -exact_recovery_exponent(kappa)


def exact_recovery_condition(n_strokes, n_features, kappa, eps):
    """Whether ``M <= N_f^(a - eps)``."""
    return n_strokes <= n_features ** (exact_recovery_exponent(kappa) - eps)


def good_event_bound_sparse(n_features, M, L, kappa, rho, C, cue_tail=None):
    """Three-term good-event bound in the sparse stroke model.

    ``L N_f^-a + P(T > C ln N_f) + ((M - L) q_+)^(rho+1) / (rho+1)!`` where
    ``q_+`` is :func:`false_positive_envelope` at ``T = C ln N_f``.  The
    cue-size tail defaults to ``N_f^-c(C, L)``.
    """
    return sum(good_event_terms_sparse(n_features, M, L, kappa, rho, C, cue_tail).values())


def good_event_terms_sparse(n_features, M, L, kappa, rho, C, cue_tail=None):
    if L > M:
        raise InvalidParameterError("L cannot exceed M")
    log_n = math.log(n_features)
    p = log_n / n_features
    if cue_tail is None:
        cue_tail = cue_size_tail_bound(C, L, n_features)
    q_plus = false_positive_envelope(C * log_n, p, kappa * log_n)
    return {
        "light_target_strokes": L * n_features ** -exact_recovery_exponent(kappa),
        "cue_size_tail": float(cue_tail),
        "false_positives": _false_positive_term(M - L, q_plus, rho),
    }


def q_minus_true(n_features, kappa):
    """Exact ``P(|xi|_1 < theta)`` for one stroke."""
    p = math.log(n_features) / n_features
    return binom_cdf_below(n_features, p, math.ceil(kappa * math.log(n_features)))


def cue_weight_tail(n_features, size, cap):
    """Exact ``P(T > cap)`` for the clean-cue weight ``T ~ Bin(N_f, 1 - (1-p)^size)``."""
    p = math.log(n_features) / n_features
    pi = -math.expm1(size * math.log1p(-p))
    return binom_tail_exact(n_features, pi, min(int(cap) + 1, n_features + 1))


def spurious_fire_prob(n_features, kappa, cue_weight):
    """Exact probability that a stroke outside the target reaches the threshold.

    Given the cue weight ``T``, the overlap of an independent stroke is
    Bin(``T``, ``p``); the probability is increasing in ``T``.
    """
    p = math.log(n_features) / n_features
    k = math.ceil(kappa * math.log(n_features))
    return binom_tail_exact(cue_weight, p, k) if k <= cue_weight + 1 else 0.0


def cue_cap_terms(n_features, L, kappa, n_spurious, rho, cue_cap=None):
    """Cue-weight tail and false-positive term for a cap on the clean-cue weight.

    On ``{T <= cap}`` each spurious stroke fires with probability at most
    ``spurious_fire_prob(cap)``, so the false positives contribute at most
    ``P(T > cap) + (n q(cap))^(rho+1) / (rho+1)!``.  Without ``cue_cap``
    the cap minimising this sum is used; the inequality holds for every
    cap, hence also for the minimiser.
    """
    def terms(cap):
        return {
            "cue_size_tail": cue_weight_tail(n_features, L, cap),
            "false_positives": _false_positive_term(
                n_spurious, spurious_fire_prob(n_features, kappa, cap), rho),
        }

    if cue_cap is not None:
        return int(cue_cap), terms(int(cue_cap))
    p = math.log(n_features) / n_features
    mean = n_features * -math.expm1(L * math.log1p(-p))
    hi = min(n_features, int(mean + 12 * math.sqrt(mean + 1) + 20))
    best = None
    for cap in range(max(0, int(mean)), hi + 1):
        cur = terms(cap)
        if best is None or sum(cur.values()) < sum(best[1].values()):
            best = (cap, cur)
    return best


def good_event_terms_plugin(n_features, M, L, kappa, delta, rho, cue_cap=None):
    """Sharpest sound good-event bound available with exact plug-ins.

    Same decomposition as the sparse bound but with exact quantities:
    ``C(L, m) q_-^m + P(T > cap) + ((M - L) q_+(cap))^(rho+1) / (rho+1)!``
    where ``q_-`` is the exact light-stroke probability and ``q_+(cap)``
    the exact firing probability of a false stroke against a cue of weight
    ``cap`` (see :func:`cue_cap_terms`).
    """
    if L > M:
        raise InvalidParameterError("L cannot exceed M")
    miss = comb_pow(L, miss_count(delta, L), q_minus_true(n_features, kappa))
    _, spur = cue_cap_terms(n_features, L, kappa, M - L, rho, cue_cap)
    return {"missed_target_strokes": miss, **spur}


def good_event_bound_plugin(n_features, M, L, kappa, delta, rho, cue_cap=None):
    return sum(good_event_terms_plugin(n_features, M, L, kappa, delta, rho, cue_cap).values())


# ---------------------------------------------------------------------------
# variable sizes
# ---------------------------------------------------------------------------


def margin_threshold(l, u, delta, rho, a, b):
    """Largest integer strictly below ``(1-delta) l - rho - (b/a)(u - l)``.

    Computed in exact rational arithmetic.  The result may be negative.
    """
    if not a > 0 or b < 0:
        raise InvalidParameterError(f"need a > 0 and b >= 0, got a={a}, b={b}")
    if l > u:
        raise InvalidParameterError(f"need l <= u, got l={l}, u={u}")
    margin = (1 - exact(delta)) * l - rho - exact(b) / exact(a) * (u - l)
    return math.ceil(margin) - 1


def simple_overlap_condition(P, u_M, M, t_star):
    """``P (2 u_M^2 / M)^(t_star+1)``; ``satisfied`` means the value is below 1."""
    if u_M >= M:
        raise OutOfRegimeError(f"simple overlap condition needs u_M < M, got u_M={u_M}, M={M}")
    raw = P * (2.0 * u_M**2 / M) ** (t_star + 1)
    return make_report("simple_overlap_condition", raw,
                       {"P": P, "u_M": u_M, "M": M, "t_star": t_star},
                       probability=False, satisfied=raw < 1)


def capacity_exponent_check(gamma, r, t, uniform=False):
    """``gamma > r/(t+1)`` for a fixed target, ``gamma > 2r/(t+1)`` uniformly over concepts."""
    if t < 0 or not r > 0 or not gamma > 0:
        raise InvalidParameterError("need t >= 0, r > 0, gamma > 0")
    return gamma > (2 if uniform else 1) * r / (t + 1)


def retrieval_error_bound_variable(P, u, M, t_lu, good_event_term, size_tail_term):
    """Good-event term + size-tail term + ``(P-1) C(u, t+1) (u/(M-t))^(t+1)``."""
    return sum(retrieval_error_terms_variable(P, u, M, t_lu, good_event_term,
                                              size_tail_term).values())


def retrieval_error_terms_variable(P, u, M, t_lu, good_event_term, size_tail_term):
    if t_lu < 0:
        raise OutOfRegimeError(f"the window theorem assumes t_lu >= 0, got {t_lu}")
    if u > M - t_lu:
        raise InvalidParameterError(f"need u <= M - t_lu, got u={u}, M={M}, t_lu={t_lu}")
    return {
        "good_event": float(good_event_term),
        "size_tail": float(size_tail_term),
        "overlap": (P - 1) * comb_pow(u, t_lu + 1, u / (M - t_lu)),
    }


# ---------------------------------------------------------------------------
# named evaluation
# ---------------------------------------------------------------------------


def _oracle_overlap(P, L, M, t):
    return overlap_tail_exact(L, L, M, t) if P == 1 else None


def _oracle_fp(cue_weight, sparsity, threshold):
    return binom_tail_exact(cue_weight, sparsity, min(math.ceil(threshold), cue_weight + 1))


# name -> (function, probability bound?, oracle or None, parameter names)
REGISTRY = {
    "overlap": (overlap_tail_bound, True, _oracle_overlap, ("P", "L", "M", "t")),
    "overlap-variable": (overlap_tail_bound_variable, True,
                         lambda l_alpha, l_beta, M, t: overlap_tail_exact(l_alpha, l_beta, M, t),
                         ("l_alpha", "l_beta", "M", "t")),
    "binom-tail": (binom_tail_bound, True, binom_tail_exact, ("trials", "prob", "k")),
    "binom-exact": (binom_tail_exact, True, None, ("trials", "prob", "k")),
    "good-event-fixed": (good_event_bound_fixed, True, None,
                         ("L", "delta", "rho", "q_minus_true", "M", "q_plus_env")),
    "good-event-window": (good_event_bound_window, True, None,
                          ("l", "u", "delta", "rho", "q_minus", "q_plus", "M")),
    "false-positive": (false_positive_envelope, True, _oracle_fp,
                       ("cue_weight", "sparsity", "threshold")),
    "cue-size-exponent": (cue_size_tail_exponent, False, None, ("C", "L")),
    "cue-size": (cue_size_tail_bound, True, None, ("C", "L", "n_features")),
    "exact-recovery-exponent": (exact_recovery_exponent, False, None, ("kappa",)),
    "exact-recovery": (exact_recovery_failure_bound, True, None,
                       ("n_strokes", "n_features", "kappa")),
    "good-event-sparse": (good_event_bound_sparse, True, None,
                          ("n_features", "M", "L", "kappa", "rho", "C")),
    "good-event-plugin": (good_event_bound_plugin, True, None,
                          ("n_features", "M", "L", "kappa", "delta", "rho")),
    "margin": (margin_threshold, False, None, ("l", "u", "delta", "rho", "a", "b")),
    "simple-overlap": (simple_overlap_condition, False, None, ("P", "u_M", "M", "t_star")),
    "capacity": (capacity_exponent_check, False, None, ("gamma", "r", "t", "uniform")),
    "retrieval-variable": (retrieval_error_bound_variable, True, None,
                           ("P", "u", "M", "t_lu", "good_event_term", "size_tail_term")),
}


def evaluate(name, **kwargs):
    """Evaluate a registered bound by name and wrap it in a :class:`BoundReport`."""
    if name not in REGISTRY:
        raise InvalidParameterError(f"unknown bound {name!r}; known: {', '.join(sorted(REGISTRY))}")
    fn, probability, oracle, _ = REGISTRY[name]
    out = fn(**kwargs)
    if isinstance(out, BoundReport):
        return out
    if isinstance(out, bool):
        return make_report(name, float(out), kwargs, probability=False, satisfied=out)
    oracle_value = oracle(**kwargs) if oracle is not None else None
    return make_report(name, out, kwargs, probability=probability, oracle=oracle_value)
