"""Seeded Monte Carlo engine: sample instances, retrieve, aggregate, compare with bounds.

Trial ``k`` of a run draws its dictionary, concept book, target and cue
noise from the substreams ``(master_seed, k, stream)``.  Results therefore
do not depend on how trials are scheduled, and a parallel run reproduces a
serial one exactly.
"""

from __future__ import annotations

import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import bounds
from .core_model import (
    STREAM_BOOK,
    STREAM_DICTIONARY,
    STREAM_NOISE,
    STREAM_TARGET,
    ModelParams,
    sample_concept_book,
    sample_stroke_dictionary,
    substream,
)
from .errors import InvalidParameterError
from .retrieval import (
    PLAIN,
    Activation,
    ErrorCounts,
    GoodEventParams,
    ScoreKind,
    certify,
    competitor_overlaps,
    concept_scores,
    error_counts,
    good_event,
    overlaps_from_mask,
    window_members,
)

SCHEMA_VERSION = 1
Z95 = 1.96
BEYOND_CLEAN_CUE = "cue noise enabled: the clean-cue guarantees do not apply"

TARGET_RULES = ("fixed", "uniform", "all")
RESAMPLE_MODES = ("all", "fixed_instance")
EXACT_SCOPES = ("target", "all")


@dataclass(frozen=True)
class TrialConfig:
    """Everything needed to reproduce a Monte Carlo run.

    ``window`` restricts the decoder to concepts with size in ``[l, u]``.
    ``t`` is the overlap level whose tail ``t_* >= t+1`` is tracked; when
    omitted it is the largest margin-admissible value for the decoder.
    ``cue_noise`` is ``(delete_prob, insert_prob)`` and is off by default.
    """

    params: ModelParams
    good_event: GoodEventParams
    n_trials: int
    master_seed: int
    score: ScoreKind = PLAIN
    window: tuple | None = None
    target_rule: str = "fixed"
    target_index: int = 0
    cue_noise: tuple | None = None
    t: int | None = None
    resample: str = "all"
    exact_scope: str = "target"
    used_only: bool = False
    cue_constant: float | None = None

    def __post_init__(self):
        if int(self.n_trials) != self.n_trials or self.n_trials < 1:
            raise InvalidParameterError("n_trials must be a positive integer")
        if not 0 <= int(self.master_seed) < 2**64:
            raise InvalidParameterError("master_seed must be a 64-bit unsigned integer")
        if self.target_rule not in TARGET_RULES:
            raise InvalidParameterError(f"target_rule must be one of {TARGET_RULES}")
        if self.resample not in RESAMPLE_MODES:
            raise InvalidParameterError(f"resample must be one of {RESAMPLE_MODES}")
        if self.exact_scope not in EXACT_SCOPES:
            raise InvalidParameterError(f"exact_scope must be one of {EXACT_SCOPES}")
        if not 0 <= self.target_index < self.params.n_concepts:
            raise InvalidParameterError("target_index out of range")
        if self.window is not None:
            lo, hi = self.window
            if not 1 <= lo <= hi:
                raise InvalidParameterError(f"invalid window {self.window}")
            object.__setattr__(self, "window", (int(lo), int(hi)))
        if self.cue_noise is not None:
            d, i = self.cue_noise
            if not (0 <= d <= 1 and 0 <= i <= 1):
                raise InvalidParameterError("cue noise probabilities must lie in [0, 1]")
            object.__setattr__(self, "cue_noise", (float(d), float(i)))
        if self.t is not None and self.t < 0:
            raise InvalidParameterError("t must be nonnegative")

    @property
    def overlap_level(self):
        """The ``t`` used for the overlap-tail statistics and bounds."""
        if self.t is not None:
            return self.t
        gp = self.good_event
        if self.window is not None:
            lo, hi = self.window
            if self.score.name == "penalised":
                return bounds.margin_threshold(lo, hi, gp.delta, gp.rho, self.score.a, self.score.b)
            return bounds.margin_threshold(lo, lo, gp.delta, gp.rho, 1.0, 0.0)
        L = self.params.fixed_size
        if L is None:
            return None
        return bounds.margin_threshold(L, L, gp.delta, gp.rho, 1.0, 0.0)

    def to_dict(self):
        return {
            "schema": SCHEMA_VERSION,
            "params": self.params.to_dict(),
            "good_event": {"delta": self.good_event.delta, "rho": self.good_event.rho},
            "decoder": {**self.score.to_dict(),
                        "window": None if self.window is None else list(self.window)},
            "target_rule": self.target_rule,
            "target_index": self.target_index,
            "cue_noise": None if self.cue_noise is None else list(self.cue_noise),
            "n_trials": self.n_trials,
            "master_seed": self.master_seed,
            "t": self.t,
            "resample": self.resample,
            "exact_scope": self.exact_scope,
            "used_only": self.used_only,
            "cue_constant": self.cue_constant,
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("schema", SCHEMA_VERSION) != SCHEMA_VERSION:
            raise InvalidParameterError(f"unsupported config schema {d.get('schema')!r}")
        dec = dict(d.get("decoder") or {})
        kind = dec.get("kind", "plain")
        score = ScoreKind(kind, float(dec.get("a", 1.0)), float(dec.get("b", 0.0)))
        ge = d["good_event"]
        window = dec.get("window")
        noise = d.get("cue_noise")
        return cls(
            params=ModelParams.from_dict(d["params"]),
            good_event=GoodEventParams(float(ge["delta"]), int(ge["rho"])),
            n_trials=int(d["n_trials"]),
            master_seed=int(d["master_seed"]),
            score=score,
            window=None if window is None else tuple(window),
            target_rule=d.get("target_rule", "fixed"),
            target_index=int(d.get("target_index", 0)),
            cue_noise=None if noise is None else tuple(noise),
            t=d.get("t"),
            resample=d.get("resample", "all"),
            exact_scope=d.get("exact_scope", "target"),
            used_only=bool(d.get("used_only", False)),
            cue_constant=d.get("cue_constant"),
        )


@dataclass(frozen=True)
class TrialResult:
    target: int
    decoded: int
    correct: bool
    false_negatives: int
    false_positives: int
    good_event_held: bool
    t_star: int
    target_size: int
    target_in_window: bool
    had_duplicate_target: bool
    exact_recovery: bool
    certified: bool
    empty_window: bool
    cue_weight: int

    @property
    def err(self):
        return ErrorCounts(self.false_negatives, self.false_positives, self.target_size)


TRIAL_COLUMNS = tuple(TrialResult.__dataclass_fields__)


# ---------------------------------------------------------------------------
# one trial
# ---------------------------------------------------------------------------


def sample_instance(params, master_seed, index=0):
    """Dictionary and concept book of trial ``index``."""
    d = sample_stroke_dictionary(params, substream(master_seed, index, STREAM_DICTIONARY))
    b = sample_concept_book(params, substream(master_seed, index, STREAM_BOOK))
    return d, b


def _clean_cue_mask(dictionary, book, alpha):
    mask = np.zeros(dictionary.n_features, dtype=bool)
    for mu in book.concept(alpha):
        mask[dictionary.stroke(mu)] = True
    return mask


def corrupt_cue(mask, delete_prob, insert_prob, rng):
    """Drop each active feature with ``delete_prob``, switch on each inactive one with ``insert_prob``."""
    out = mask.copy()
    on = np.flatnonzero(mask)
    off = np.flatnonzero(~mask)
    if delete_prob > 0 and on.size:
        out[on[rng.random(on.size) < delete_prob]] = False
    if insert_prob > 0 and off.size:
        k = rng.binomial(off.size, insert_prob)
        out[rng.choice(off, size=k, replace=False)] = True
    return out


def _decode(cfg, book, act):
    scores = concept_scores(book, act, cfg.score).scores
    if cfg.window is None:
        return int(np.argmax(scores)), False
    eligible = window_members(book, *cfg.window)
    if eligible.size == 0:
        return -1, True
    return int(eligible[np.argmax(scores[eligible])]), False


def _retrieve(cfg, dictionary, book, alpha, noise_rng):
    mask = _clean_cue_mask(dictionary, book, alpha)
    if cfg.cue_noise is not None:
        mask = corrupt_cue(mask, *cfg.cue_noise, noise_rng)
    ov = overlaps_from_mask(dictionary, mask)
    act = Activation(dictionary.n_strokes, np.flatnonzero(ov >= cfg.params.threshold))
    return mask, act


def _checked_strokes(cfg, book):
    if cfg.used_only:
        return np.unique(book.indices)
    return np.arange(book.n_strokes)


def _exact_on(act, book, alpha, checked):
    return bool(np.array_equal(act.mask()[checked], book.membership(alpha)[checked]))


def _single(cfg, dictionary, book, alpha, noise_rng):
    mask, act = _retrieve(cfg, dictionary, book, alpha, noise_rng)
    decoded, empty = _decode(cfg, book, act)
    target = book.concept(alpha)
    err = error_counts(act, target)
    sizes = book.sizes
    size = int(sizes[alpha])
    ov = competitor_overlaps(book, alpha)
    others = np.ones(book.n_concepts, dtype=bool)
    others[alpha] = False
    duplicate = bool(np.any(others & (ov == size) & (sizes == size)))
    in_window = True
    if cfg.window is not None:
        lo, hi = cfg.window
        in_window = lo <= size <= hi
        others &= (sizes >= lo) & (sizes <= hi)
    t_star = int(ov[others].max()) if others.any() else 0
    return TrialResult(
        target=int(alpha),
        decoded=decoded,
        correct=decoded == alpha,
        false_negatives=err.false_negatives,
        false_positives=err.false_positives,
        good_event_held=good_event(err, cfg.good_event),
        t_star=t_star,
        target_size=size,
        target_in_window=in_window,
        had_duplicate_target=duplicate,
        exact_recovery=_exact_on(act, book, alpha, _checked_strokes(cfg, book)),
        certified=certify(book, act, alpha, cfg.good_event, cfg.score, cfg.window),
        empty_window=empty,
        cue_weight=int(mask.sum()),
    )


def run_trial(cfg, trial_index):
    """Sample one instance, retrieve the target and record every per-trial quantity.

    With ``target_rule="all"`` every concept is retrieved from its own cue;
    the trial is correct only if all of them are, and the reported target is
    the first failing concept (or concept 0).
    """
    index = 0 if cfg.resample == "fixed_instance" else trial_index
    dictionary, book = sample_instance(cfg.params, cfg.master_seed, index)
    target_rng = substream(cfg.master_seed, trial_index, STREAM_TARGET)
    noise_rng = substream(cfg.master_seed, trial_index, STREAM_NOISE)
    if cfg.target_rule == "fixed":
        alphas = [cfg.target_index]
    elif cfg.target_rule == "uniform":
        alphas = [int(target_rng.integers(book.n_concepts))]
    else:
        alphas = range(book.n_concepts)
    results = [_single(cfg, dictionary, book, a, noise_rng) for a in alphas]
    if cfg.exact_scope == "all" and len(results) == 1:
        checked = _checked_strokes(cfg, book)
        exact_all = results[0].exact_recovery and all(
            _exact_on(_retrieve(cfg, dictionary, book, b, noise_rng)[1], book, b, checked)
            for b in range(book.n_concepts) if b != results[0].target
        )
        results[0] = replace(results[0], exact_recovery=exact_all)
    if len(results) == 1:
        return results[0]
    failing = [r for r in results if not r.correct]
    head = failing[0] if failing else results[0]
    return replace(
        head,
        correct=not failing,
        good_event_held=all(r.good_event_held for r in results),
        t_star=max(r.t_star for r in results),
        exact_recovery=all(r.exact_recovery for r in results),
        certified=all(r.certified for r in results),
    )


def _run_chunk(cfg, start, stop):
    return [run_trial(cfg, k) for k in range(start, stop)]


def run_trials(cfg, jobs=1):
    """All trials of ``cfg`` in index order; ``jobs > 1`` uses a process pool."""
    n = cfg.n_trials
    if jobs <= 1 or n < 2:
        return _run_chunk(cfg, 0, n)
    n_chunks = min(n, jobs * 4)
    edges = np.linspace(0, n, n_chunks + 1).astype(int)
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        parts = pool.map(_run_chunk, [cfg] * n_chunks, edges[:-1], edges[1:])
        return [r for part in parts for r in part]


# ---------------------------------------------------------------------------
# aggregation
# ---------------------------------------------------------------------------


def half_width(rate, n):
    return Z95 * math.sqrt(rate * (1.0 - rate) / n)


@dataclass
class ExperimentReport:
    config: dict
    n_trials: int
    rates: dict
    half_widths: dict
    bounds: dict
    comparisons: list
    per_size: dict = field(default_factory=dict)
    certificate_violations: int = 0
    notes: list = field(default_factory=list)
    wall_clock_seconds: float = 0.0
    trials: list = field(default_factory=list, repr=False)

    @property
    def passed(self):
        return self.certificate_violations == 0 and all(c["passed"] for c in self.comparisons)

    def comparison(self, rate):
        for c in self.comparisons:
            if c["rate"] == rate:
                return c
        raise KeyError(rate)

    def to_dict(self, timing=True):
        d = {
            "config": self.config,
            "n_trials": self.n_trials,
            "rates": self.rates,
            "half_widths": self.half_widths,
            "bounds": {k: v.to_dict() for k, v in self.bounds.items()},
            "comparisons": self.comparisons,
            "per_size": {str(k): v for k, v in self.per_size.items()},
            "certificate_violations": self.certificate_violations,
            "notes": self.notes,
        }
        if timing:
            d["wall_clock_seconds"] = self.wall_clock_seconds
        return d


def _rates(cfg, results):
    n = len(results)
    t = cfg.overlap_level
    count = {
        "success_rate": sum(r.correct for r in results),
        "good_event_rate": sum(r.good_event_held for r in results),
        "exact_recovery_rate": sum(r.exact_recovery for r in results),
        "in_window_rate": sum(r.target_in_window for r in results),
        "certified_rate": sum(r.certified for r in results),
        "duplicate_target_rate": sum(r.had_duplicate_target for r in results),
        "empty_window_rate": sum(r.empty_window for r in results),
    }
    if t is not None and t >= 0:
        count["overlap_tail_rate"] = sum(r.t_star >= t + 1 for r in results)
    count["failure_rate"] = n - count["success_rate"]
    count["good_event_failure_rate"] = n - count["good_event_rate"]
    count["exact_recovery_failure_rate"] = n - count["exact_recovery_rate"]
    rates = {k: v / n for k, v in count.items()}
    rates = dict(sorted(rates.items()))
    return rates, {k: half_width(v, n) for k, v in rates.items()}


def _per_size(results):
    buckets = {}
    for r in results:
        b = buckets.setdefault(r.target_size, [0, 0])
        b[0] += 1
        b[1] += not r.good_event_held
    return {s: {"trials": c, "good_event_failure_rate": f / c} for s, (c, f) in sorted(buckets.items())}


def compare(rate_name, empirical, bound, n, k_sigma=3.0):
    """Check ``empirical <= bound + k_sigma * sigma`` with ``sigma`` taken at the clamped bound."""
    b = min(max(bound, 0.0), 1.0)
    sigma = math.sqrt(b * (1.0 - b) / n)
    return {
        "rate": rate_name,
        "empirical": empirical,
        "bound": bound,
        "sigma": sigma,
        "k_sigma": k_sigma,
        "passed": bool(empirical <= bound + k_sigma * sigma),
    }


def _cue_constant(cfg, size):
    return cfg.cue_constant if cfg.cue_constant is not None else 3 * math.e * size


def good_event_reports(cfg):
    """Good-event bounds for the configured model: sparse asymptotic form and exact plug-ins."""
    p, gp = cfg.params, cfg.good_event
    out = {}
    if p.fixed_size is not None:
        L = p.fixed_size
        C = _cue_constant(cfg, L)
        inputs = dict(n_features=p.n_features, M=p.n_strokes, L=L, kappa=p.kappa, rho=gp.rho, C=C)
        try:
            terms = bounds.good_event_terms_sparse(**inputs)
            out["good_event_sparse"] = bounds.make_report(
                "good_event_sparse", sum(terms.values()), inputs, terms=terms)
        except (bounds.OutOfRegimeError, InvalidParameterError) as exc:
            out["good_event_sparse_unavailable"] = bounds.make_report(
                "good_event_sparse", math.nan, {**inputs, "reason": str(exc)}, probability=False)
        terms = bounds.good_event_terms_plugin(p.n_features, p.n_strokes, L, p.kappa,
                                               gp.delta, gp.rho)
        out["good_event"] = bounds.make_report(
            "good_event_plugin", sum(terms.values()),
            dict(n_features=p.n_features, M=p.n_strokes, L=L, kappa=p.kappa,
                 delta=gp.delta, rho=gp.rho), terms=terms)
    elif cfg.window is not None:
        lo, hi = cfg.window
        hi = min(hi, p.n_strokes)
        per = {s: bounds.good_event_bound_plugin(p.n_features, p.n_strokes, s, p.kappa,
                                                 gp.delta, gp.rho) for s in range(lo, hi + 1)}
        worst = max(per.values())
        out["good_event"] = bounds.make_report(
            "good_event_window_plugin", worst,
            dict(n_features=p.n_features, M=p.n_strokes, window=[lo, hi], kappa=p.kappa,
                 delta=gp.delta, rho=gp.rho), terms={str(s): v for s, v in per.items()})
    return out


def theory_bounds(cfg):
    """Closed-form counterparts of the retrieval rates for ``cfg``."""
    p = cfg.params
    out = good_event_reports(cfg)
    t = cfg.overlap_level
    factor = p.n_concepts if cfg.target_rule == "all" else 1
    if cfg.window is None and p.fixed_size is not None and cfg.score.name == "plain":
        L = p.fixed_size
        if t is not None and 0 <= t <= L - 1:
            ov = bounds.overlap_tail_bound(p.n_concepts, L, p.n_strokes, t)
            out["overlap_tail"] = bounds.make_report(
                "overlap_tail", ov, dict(P=p.n_concepts, L=L, M=p.n_strokes, t=t))
            ge = out["good_event"].raw
            terms = {"overlap": factor * ov, "good_event": factor * ge}
            out["failure"] = bounds.make_report(
                "retrieval_failure_fixed", sum(terms.values()),
                dict(P=p.n_concepts, L=L, M=p.n_strokes, t=t, uniform=factor > 1), terms=terms)
    elif cfg.window is not None and cfg.score.name == "penalised":
        lo, hi = cfg.window
        if t is not None and t >= 0 and hi <= p.n_strokes - t:
            size_tail = p.size_spec.prob_outside(lo, hi)
            terms = bounds.retrieval_error_terms_variable(
                p.n_concepts, hi, p.n_strokes, t, out["good_event"].raw, size_tail)
            out["overlap_tail"] = bounds.make_report(
                "overlap_tail_window", terms["overlap"],
                dict(P=p.n_concepts, u=hi, M=p.n_strokes, t=t))
            out["size_tail"] = bounds.make_report(
                "size_tail", size_tail, dict(window=[lo, hi], size=p.size_spec.to_dict()))
            out["failure"] = bounds.make_report(
                "retrieval_failure_window", sum(terms.values()),
                dict(P=p.n_concepts, window=[lo, hi], M=p.n_strokes, t=t), terms=terms)
    return out


def exact_recovery_bounds(cfg):
    """Union bounds on exact stroke recovery failing, asymptotic form and exact plug-in form."""
    p = cfg.params
    L = p.fixed_size
    if L is None:
        return {}
    a = bounds.exact_recovery_exponent(p.kappa)
    log_n = math.log(p.n_features)
    C = _cue_constant(cfg, L)
    checked = min(p.n_strokes, p.n_concepts * L) if cfg.used_only else p.n_strokes
    spurious = max(checked - L, 0)
    cue_tail = bounds.cue_size_tail_bound(C, L, p.n_features)
    q_env = bounds.false_positive_envelope(C * log_n, p.sparsity, p.threshold)
    scope = p.n_concepts if cfg.exact_scope == "all" else 1
    light = min(p.n_strokes, p.n_concepts * L) if scope > 1 else L
    terms = {
        "light_strokes": light * p.n_features ** -a,
        "cue_size_tail": scope * cue_tail,
        "false_positives": scope * spurious * q_env,
    }
    inputs = dict(M=p.n_strokes, n_features=p.n_features, kappa=p.kappa, a=a, C=C,
                  used_only=cfg.used_only, scope=cfg.exact_scope)
    out = {"exact_recovery_failure_sparse": bounds.make_report(
        "exact_recovery_failure_sparse", sum(terms.values()), inputs, terms=terms)}
    out["dictionary_light_strokes"] = bounds.make_report(
        "exact_recovery_failure_dictionary",
        bounds.exact_recovery_failure_bound(p.n_strokes, p.n_features, p.kappa),
        dict(M=p.n_strokes, n_features=p.n_features, kappa=p.kappa))
    q_minus = bounds.q_minus_true(p.n_features, p.kappa)
    cap, spur = bounds.cue_cap_terms(p.n_features, L, p.kappa, spurious, 0)
    plug = {
        "light_strokes": -math.expm1(light * math.log1p(-q_minus)) if q_minus < 1 else 1.0,
        "cue_size_tail": scope * spur["cue_size_tail"],
        "false_positives": scope * spur["false_positives"],
    }
    out["exact_recovery_failure"] = bounds.make_report(
        "exact_recovery_failure_plugin", sum(plug.values()),
        {**inputs, "cue_cap": cap}, terms=plug)
    return out


def _finish(cfg, results, bound_map, pairs, started):
    rates, hws = _rates(cfg, results)
    n = len(results)
    comparisons = [compare(rate, rates[rate], bound_map[b].raw, n)
                   for rate, b in pairs if b in bound_map and rate in rates]
    notes = [BEYOND_CLEAN_CUE] if cfg.cue_noise is not None else []
    violations = sum(r.certified and not r.correct for r in results)
    return ExperimentReport(
        config=cfg.to_dict(),
        n_trials=n,
        rates=rates,
        half_widths=hws,
        bounds=bound_map,
        comparisons=comparisons,
        per_size=_per_size(results),
        certificate_violations=violations,
        notes=notes,
        wall_clock_seconds=time.perf_counter() - started,
        trials=results,
    )


def run_experiment(cfg, jobs=1):
    """Run all trials and compare failure, overlap-tail and good-event rates with their bounds."""
    started = time.perf_counter()
    results = run_trials(cfg, jobs)
    bound_map = {} if cfg.cue_noise is not None else theory_bounds(cfg)
    pairs = [("failure_rate", "failure"),
             ("overlap_tail_rate", "overlap_tail"),
             ("good_event_failure_rate", "good_event"),
             ("good_event_failure_rate", "good_event_sparse")]
    if cfg.target_rule == "all":
        pairs = [("failure_rate", "failure")]
    return _finish(cfg, results, bound_map, pairs, started)


def run_exact_recovery_experiment(cfg, used_only=None, jobs=1):
    """Exact stroke recovery rate, over all strokes or only the used ones."""
    if used_only is not None:
        cfg = replace(cfg, used_only=bool(used_only))
    started = time.perf_counter()
    results = run_trials(cfg, jobs)
    bound_map = {} if cfg.cue_noise is not None else exact_recovery_bounds(cfg)
    pairs = [("exact_recovery_failure_rate", "exact_recovery_failure"),
             ("exact_recovery_failure_rate", "exact_recovery_failure_sparse")]
    return _finish(cfg, results, bound_map, pairs, started)


def estimate_good_event(cfg, jobs=1):
    """Frequency of the good event failing, overall and per target size."""
    started = time.perf_counter()
    results = run_trials(cfg, jobs)
    bound_map = {} if cfg.cue_noise is not None else good_event_reports(cfg)
    pairs = [("good_event_failure_rate", "good_event"),
             ("good_event_failure_rate", "good_event_sparse")]
    return _finish(cfg, results, bound_map, pairs, started)


def trial_rows(results):
    """Plain rows for CSV export, in :data:`TRIAL_COLUMNS` order."""
    for r in results:
        d = asdict(r)
        yield [int(d[c]) if isinstance(d[c], (bool, np.bool_)) else d[c] for c in TRIAL_COLUMNS]
