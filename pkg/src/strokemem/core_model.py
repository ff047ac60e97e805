"""Model parameters and random generation of strokes, concepts and clean cues.

Strokes and concepts are stored as sorted support sets in a compressed
row layout (``indptr``/``indices``), the same layout scipy uses for CSR
matrices.  Expected stroke weight is only ``ln N_f``, so dense bit arrays
would waste almost all of their memory.

All randomness goes through :func:`substream`, which derives an independent
generator from ``(master seed, key...)``.  A sampling call is therefore a
pure function of its inputs and the seed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .errors import InvalidParameterError

# substream keys
STREAM_DICTIONARY = 0
STREAM_BOOK = 1
STREAM_TARGET = 2
STREAM_NOISE = 3

_SEED_LIMIT = 2**64


def substream(seed, *key):
    """Return a generator for the substream ``key`` of ``seed``.

    ``seed`` must be a 64-bit unsigned integer.  Distinct keys give
    statistically independent streams (``numpy.random.SeedSequence``
    spawn keys), so trial ``k`` sees the same numbers whether it runs
    alone, first, or in a worker process.
    """
    seed = int(seed)
    if not 0 <= seed < _SEED_LIMIT:
        raise InvalidParameterError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(int(k) for k in key)))


def _as_rng(seed, key):
    if isinstance(seed, np.random.Generator):
        return seed
    return substream(seed, key)


def derive_sparsity(n_features):
    """Stroke sparsity ``p = ln(N_f) / N_f``."""
    if int(n_features) != n_features or n_features < 2:
        raise InvalidParameterError(f"n_features must be an integer >= 2, got {n_features}")
    return math.log(n_features) / n_features


# ---------------------------------------------------------------------------
# size distributions
# ---------------------------------------------------------------------------

_SIZE_KINDS = ("fixed", "poisson", "empirical")


@dataclass(frozen=True)
class SizeDistribution:
    """Law of the concept sizes ``L_alpha`` together with a size window.

    Use the constructors :meth:`fixed`, :meth:`poisson` and
    :meth:`empirical` rather than calling the class directly.
    """

    kind: str
    L: int | None = None
    lam: float | None = None
    weights: tuple = ()
    lower_cut: int | None = None
    upper_cut: int | None = None

    def __post_init__(self):
        if self.kind not in _SIZE_KINDS:
            raise InvalidParameterError(f"unknown size distribution kind {self.kind!r}")
        if self.kind == "fixed":
            if self.L is None or int(self.L) != self.L or self.L < 1:
                raise InvalidParameterError(f"fixed size must be a positive integer, got {self.L}")
            if self.lower_cut not in (None, self.L) or self.upper_cut not in (None, self.L):
                raise InvalidParameterError("fixed size requires lower_cut == upper_cut == L")
            object.__setattr__(self, "lower_cut", int(self.L))
            object.__setattr__(self, "upper_cut", int(self.L))
        elif self.kind == "poisson":
            if self.lam is None or not self.lam > 0:
                raise InvalidParameterError(f"poisson rate must be positive, got {self.lam}")
        else:
            sizes = [s for s, _ in self.weights]
            probs = [w for _, w in self.weights]
            if not sizes:
                raise InvalidParameterError("empirical size distribution needs at least one size")
            if any(int(s) != s or s < 1 for s in sizes):
                raise InvalidParameterError("empirical sizes must be integers >= 1")
            if len(set(sizes)) != len(sizes):
                raise InvalidParameterError("empirical sizes must be distinct")
            if any(w < 0 for w in probs) or abs(math.fsum(probs) - 1.0) > 1e-12:
                raise InvalidParameterError("empirical probabilities must be >= 0 and sum to 1")
            object.__setattr__(
                self, "weights", tuple(sorted((int(s), float(w)) for s, w in self.weights))
            )
        lo, hi = self.lower_cut, self.upper_cut
        if lo is not None and (int(lo) != lo or lo < 1):
            raise InvalidParameterError(f"lower_cut must be a positive integer, got {lo}")
        if hi is not None and (int(hi) != hi or hi < 1):
            raise InvalidParameterError(f"upper_cut must be a positive integer, got {hi}")
        if lo is not None and hi is not None and lo > hi:
            raise InvalidParameterError(f"lower_cut {lo} exceeds upper_cut {hi}")

    @classmethod
    def fixed(cls, L):
        return cls("fixed", L=int(L))

    @classmethod
    def poisson(cls, lam, lower_cut=None, upper_cut=None):
        """Poisson(``lam``) conditioned on ``L >= 1``."""
        return cls("poisson", lam=float(lam), lower_cut=lower_cut, upper_cut=upper_cut)

    @classmethod
    def empirical(cls, weights, lower_cut=None, upper_cut=None):
        return cls("empirical", weights=tuple(weights), lower_cut=lower_cut, upper_cut=upper_cut)

    @property
    def max_size(self):
        """Largest size with positive probability (``inf`` for Poisson)."""
        if self.kind == "fixed":
            return self.L
        if self.kind == "empirical":
            return max(s for s, w in self.weights if w > 0)
        return math.inf

    def pmf(self, size):
        if int(size) != size or size < 1:
            return 0.0
        size = int(size)
        if self.kind == "fixed":
            return 1.0 if size == self.L else 0.0
        if self.kind == "empirical":
            return dict(self.weights).get(size, 0.0)
        return float(stats.poisson.pmf(size, self.lam) / -math.expm1(-self.lam))

    def prob_outside(self, lower, upper):
        """``P(L not in [lower, upper])``."""
        if lower > upper:
            return 1.0
        if self.kind == "poisson":
            norm = -math.expm1(-self.lam)
            below = max(stats.poisson.cdf(lower - 1, self.lam) - math.exp(-self.lam), 0.0)
            above = stats.poisson.sf(upper, self.lam)
            return float(min(1.0, (below + above) / norm))
        inside = math.fsum(self.pmf(s) for s in range(max(1, int(lower)), int(upper) + 1)
                           if s <= self.max_size)
        return max(0.0, 1.0 - inside)

    def sample(self, rng, n):
        """Draw ``n`` i.i.d. sizes."""
        if self.kind == "fixed":
            return np.full(n, self.L, dtype=np.int64)
        if self.kind == "empirical":
            sizes = np.array([s for s, _ in self.weights], dtype=np.int64)
            probs = np.array([w for _, w in self.weights])
            return rng.choice(sizes, size=n, p=probs / probs.sum())
        out = rng.poisson(self.lam, size=n).astype(np.int64)
        zero = out == 0
        while zero.any():
            out[zero] = rng.poisson(self.lam, size=int(zero.sum()))
            zero = out == 0
        return out

    def to_dict(self):
        d = {"kind": self.kind}
        if self.kind == "fixed":
            d["L"] = self.L
        elif self.kind == "poisson":
            d["lam"] = self.lam
        else:
            d["weights"] = [list(w) for w in self.weights]
        if self.kind != "fixed":
            d["lower_cut"] = self.lower_cut
            d["upper_cut"] = self.upper_cut
        return d

    @classmethod
    def from_dict(cls, d):
        kind = d.get("kind")
        if kind == "fixed":
            return cls.fixed(d["L"])
        if kind == "poisson":
            return cls.poisson(d["lam"], d.get("lower_cut"), d.get("upper_cut"))
        if kind == "empirical":
            return cls.empirical([tuple(w) for w in d["weights"]],
                                 d.get("lower_cut"), d.get("upper_cut"))
        raise InvalidParameterError(f"unknown size distribution kind {kind!r}")


# ---------------------------------------------------------------------------
# model parameters
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ModelParams:
    """Sizes of the three layers, the threshold constant and the concept-size law.

    ``sparsity`` and ``threshold`` are derived:  ``p = ln N_f / N_f`` and
    ``theta = kappa ln N_f``.  ``sparsity_override`` exists only for edge-case
    tests (e.g. ``p = 0``) and is never set by the experiment code.
    """

    n_features: int
    n_strokes: int
    n_concepts: int
    kappa: float
    size_spec: SizeDistribution
    sparsity_override: float | None = None

    def __post_init__(self):
        derive_sparsity(self.n_features)
        for name in ("n_strokes", "n_concepts"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise InvalidParameterError(f"{name} must be a positive integer, got {v}")
        if not 0 < self.kappa < 1:
            raise InvalidParameterError(f"kappa must lie in (0, 1), got {self.kappa}")
        if not isinstance(self.size_spec, SizeDistribution):
            raise InvalidParameterError("size_spec must be a SizeDistribution")
        if self.sparsity_override is not None and not 0 <= self.sparsity_override <= 1:
            raise InvalidParameterError("sparsity_override must lie in [0, 1]")

    @property
    def sparsity(self):
        if self.sparsity_override is not None:
            return float(self.sparsity_override)
        return derive_sparsity(self.n_features)

    @property
    def threshold(self):
        return self.kappa * math.log(self.n_features)

    @property
    def fixed_size(self):
        """The common concept size, or ``None`` when sizes are random."""
        return self.size_spec.L if self.size_spec.kind == "fixed" else None

    def to_dict(self):
        d = {
            "n_features": self.n_features,
            "n_strokes": self.n_strokes,
            "n_concepts": self.n_concepts,
            "kappa": self.kappa,
            "size": self.size_spec.to_dict(),
        }
        if self.sparsity_override is not None:
            d["sparsity_override"] = self.sparsity_override
        return d

    @classmethod
    def from_dict(cls, d):
        return cls(
            n_features=int(d["n_features"]),
            n_strokes=int(d["n_strokes"]),
            n_concepts=int(d["n_concepts"]),
            kappa=float(d["kappa"]),
            size_spec=SizeDistribution.from_dict(d["size"]),
            sparsity_override=d.get("sparsity_override"),
        )


# ---------------------------------------------------------------------------
# set families
# ---------------------------------------------------------------------------


def _readonly(a):
    a = np.ascontiguousarray(a, dtype=np.int64)
    a.setflags(write=False)
    return a


def _pack(sets, universe, what):
    indptr = np.zeros(len(sets) + 1, dtype=np.int64)
    chunks = []
    for k, s in enumerate(sets):
        s = np.asarray(s, dtype=np.int64).ravel()
        if s.size:
            if s[0] < 0 or s[-1] >= universe:
                raise InvalidParameterError(f"{what} {k} has an index outside [0, {universe})")
            if np.any(np.diff(s) <= 0):
                raise InvalidParameterError(f"{what} {k} is not strictly increasing")
        indptr[k + 1] = indptr[k] + s.size
        chunks.append(s)
    indices = np.concatenate(chunks) if chunks else np.zeros(0, dtype=np.int64)
    return _readonly(indptr), _readonly(indices)


def _rows(indptr, indices):
    return [indices[indptr[k]:indptr[k + 1]] for k in range(len(indptr) - 1)]


@dataclass(frozen=True, eq=False)
class StrokeDictionary:
    """The ``M`` stroke patterns as sorted support sets over ``[0, N_f)``."""

    n_features: int
    indptr: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)

    @classmethod
    def from_sets(cls, n_features, strokes):
        indptr, indices = _pack(strokes, n_features, "stroke")
        return cls(int(n_features), indptr, indices)

    @property
    def n_strokes(self):
        return len(self.indptr) - 1

    @property
    def weights(self):
        """Stroke weights ``|xi^mu|_1``."""
        return np.diff(self.indptr)

    @property
    def strokes(self):
        return _rows(self.indptr, self.indices)

    def stroke(self, mu):
        return self.indices[self.indptr[mu]:self.indptr[mu + 1]]

    def __len__(self):
        return self.n_strokes

    def __eq__(self, other):
        if not isinstance(other, StrokeDictionary):
            return NotImplemented
        return (self.n_features == other.n_features
                and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))

    def __repr__(self):
        return f"StrokeDictionary(n_features={self.n_features}, n_strokes={self.n_strokes})"


@dataclass(frozen=True, eq=False)
class ConceptBook:
    """The ``P`` concepts, each a sorted set of stroke indices in ``[0, M)``."""

    n_strokes: int
    indptr: np.ndarray = field(repr=False)
    indices: np.ndarray = field(repr=False)

    def __post_init__(self):
        if np.any(np.diff(self.indptr) < 1):
            raise InvalidParameterError("every concept needs at least one stroke")

    @classmethod
    def from_sets(cls, n_strokes, concepts):
        indptr, indices = _pack(concepts, n_strokes, "concept")
        return cls(int(n_strokes), indptr, indices)

    @property
    def n_concepts(self):
        return len(self.indptr) - 1

    @property
    def sizes(self):
        """Concept sizes ``L_alpha``."""
        return np.diff(self.indptr)

    @property
    def concepts(self):
        return _rows(self.indptr, self.indices)

    def concept(self, alpha):
        return self.indices[self.indptr[alpha]:self.indptr[alpha + 1]]

    def membership(self, alpha):
        """Indicator ``eta^alpha`` of concept ``alpha`` in stroke space."""
        out = np.zeros(self.n_strokes, dtype=bool)
        out[self.concept(alpha)] = True
        return out

    def __len__(self):
        return self.n_concepts

    def __eq__(self, other):
        if not isinstance(other, ConceptBook):
            return NotImplemented
        return (self.n_strokes == other.n_strokes
                and np.array_equal(self.indptr, other.indptr)
                and np.array_equal(self.indices, other.indices))

    def __repr__(self):
        return f"ConceptBook(n_strokes={self.n_strokes}, n_concepts={self.n_concepts})"


@dataclass(frozen=True, eq=False)
class Cue:
    """A feature-level input given by its sorted active support."""

    n_features: int
    support: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.support, dtype=np.int64).ravel()
        if s.size and (s[0] < 0 or s[-1] >= self.n_features or np.any(np.diff(s) <= 0)):
            raise InvalidParameterError("cue support must be strictly increasing and in range")
        object.__setattr__(self, "support", _readonly(s))

    @classmethod
    def from_mask(cls, mask):
        mask = np.asarray(mask, dtype=bool)
        return cls(mask.size, np.flatnonzero(mask))

    @property
    def weight(self):
        """``T = ||eta||_1``."""
        return int(self.support.size)

    def mask(self):
        out = np.zeros(self.n_features, dtype=bool)
        out[self.support] = True
        return out

    def __eq__(self, other):
        if not isinstance(other, Cue):
            return NotImplemented
        return self.n_features == other.n_features and np.array_equal(self.support, other.support)

    def __repr__(self):
        return f"Cue(n_features={self.n_features}, support={self.support.tolist()})"


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------


def sample_subsets(rng, n, sizes):
    """Draw independent uniform subsets of ``[0, n)`` with the given sizes.

    Returns ``(indptr, indices)`` with every row sorted.  Rows are drawn as
    i.i.d. uniform tuples; a row containing a repeated value is replaced by
    a fresh ``rng.choice(..., replace=False)`` draw, which keeps every row
    exactly uniform over subsets of its size.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    if sizes.size and (sizes.min() < 0 or sizes.max() > n):
        raise InvalidParameterError(f"cannot draw a subset larger than the universe {n}")
    indptr = np.zeros(sizes.size + 1, dtype=np.int64)
    np.cumsum(sizes, out=indptr[1:])
    rows = np.repeat(np.arange(sizes.size), sizes)
    vals = rng.integers(0, n, size=int(indptr[-1])) if n > 0 else np.zeros(0, np.int64)
    order = np.lexsort((vals, rows))
    vals = vals[order]
    dup = (vals[1:] == vals[:-1]) & (rows[1:] == rows[:-1])
    for r in np.unique(rows[1:][dup]):
        vals[indptr[r]:indptr[r + 1]] = np.sort(rng.choice(n, int(sizes[r]), replace=False))
    return indptr, vals


def sample_stroke_dictionary(params, seed):
    """Sample ``M`` i.i.d. strokes with Bernoulli(``p``) feature bits.

    ``seed`` is a master seed (the dictionary substream is used) or an
    explicit ``numpy.random.Generator``.  A stroke with Bernoulli bits is
    a uniform subset whose size is Bin(``N_f``, ``p``); it is sampled that
    way.
    """
    rng = _as_rng(seed, STREAM_DICTIONARY)
    weights = rng.binomial(params.n_features, params.sparsity, size=params.n_strokes)
    indptr, indices = sample_subsets(rng, params.n_features, weights)
    return StrokeDictionary(params.n_features, _readonly(indptr), _readonly(indices))


def sample_concept_book(params, seed):
    """Sample ``P`` concepts with i.i.d. sizes and uniform stroke subsets."""
    rng = _as_rng(seed, STREAM_BOOK)
    sizes = params.size_spec.sample(rng, params.n_concepts)
    if sizes.max() > params.n_strokes:
        raise InvalidParameterError(
            f"concept size {int(sizes.max())} exceeds the number of strokes {params.n_strokes}"
        )
    indptr, indices = sample_subsets(rng, params.n_strokes, sizes)
    return ConceptBook(params.n_strokes, _readonly(indptr), _readonly(indices))


def compose_cue(dictionary, concept):
    """Clean cue of a concept: the union of its strokes' supports."""
    concept = np.asarray(concept, dtype=np.int64).ravel()
    if concept.size == 0:
        raise InvalidParameterError("a concept must contain at least one stroke")
    if concept.min() < 0 or concept.max() >= dictionary.n_strokes:
        raise InvalidParameterError("concept refers to a stroke outside the dictionary")
    parts = [dictionary.stroke(mu) for mu in concept]
    return Cue(dictionary.n_features, np.unique(np.concatenate(parts)))


def used_strokes(book):
    """The set of strokes that belong to at least one concept."""
    return np.unique(book.indices)
