"""Two-layer retrieval: stroke thresholding, concept scores and decoders.

The stroke layer fires stroke ``mu`` when its overlap with the cue reaches
``theta``.  The concept layer scores every concept against the active set
and a winner-take-all rule picks the best one, optionally restricted to a
size window.  Ties always go to the lowest index.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction

import numpy as np

from .core_model import ConceptBook, Cue, StrokeDictionary
from .errors import ContractError, EmptyWindowError, InvalidParameterError


def exact(x):
    """Exact rational value of ``x``.

    Floats are read through their shortest decimal representation, so
    ``0.3`` becomes ``3/10`` rather than the nearest binary fraction.  This
    keeps comparisons such as ``F <= delta * L`` and the strict floor of an
    integer-valued margin free of rounding artefacts.
    """
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    return Fraction(str(float(x)))


# ---------------------------------------------------------------------------
# value types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ScoreKind:
    name: str = "plain"
    a: float = 1.0
    b: float = 0.0

    def __post_init__(self):
        if self.name not in ("plain", "penalised", "normalised"):
            raise InvalidParameterError(f"unknown score kind {self.name!r}")
        if self.name == "penalised" and not (self.a > 0 and self.b >= 0):
            raise InvalidParameterError(f"penalised score needs a > 0, b >= 0 (a={self.a}, b={self.b})")

    def to_dict(self):
        d = {"kind": self.name}
        if self.name == "penalised":
            d.update(a=self.a, b=self.b)
        return d


PLAIN = ScoreKind("plain")
NORMALISED = ScoreKind("normalised")


def penalised(a, b):
    return ScoreKind("penalised", float(a), float(b))


@dataclass(frozen=True, eq=False)
class Activation:
    """Stroke-layer output, stored as the sorted set of active strokes."""

    n_strokes: int
    active: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.active, dtype=np.int64).ravel()
        if a.size and (a[0] < 0 or a[-1] >= self.n_strokes or np.any(np.diff(a) <= 0)):
            raise InvalidParameterError("activation must be strictly increasing and in range")
        a.setflags(write=False)
        object.__setattr__(self, "active", a)

    @classmethod
    def from_mask(cls, mask):
        mask = np.asarray(mask, dtype=bool)
        return cls(mask.size, np.flatnonzero(mask))

    def mask(self):
        out = np.zeros(self.n_strokes, dtype=bool)
        out[self.active] = True
        return out

    def __eq__(self, other):
        if not isinstance(other, Activation):
            return NotImplemented
        return self.n_strokes == other.n_strokes and np.array_equal(self.active, other.active)

    def __repr__(self):
        return f"Activation(n_strokes={self.n_strokes}, active={self.active.tolist()})"


@dataclass(frozen=True)
class ErrorCounts:
    false_negatives: int
    false_positives: int
    target_size: int

    def __post_init__(self):
        if self.target_size < 1:
            raise InvalidParameterError("target_size must be positive")
        if not 0 <= self.false_negatives <= self.target_size or self.false_positives < 0:
            raise InvalidParameterError(f"inconsistent error counts {self}")


@dataclass(frozen=True, eq=False)
class ScoreTable:
    scores: np.ndarray
    kind: ScoreKind

    def __len__(self):
        return len(self.scores)


@dataclass(frozen=True)
class GoodEventParams:
    """``delta`` bounds the fraction of missed target strokes, ``rho`` the spurious ones."""

    delta: float
    rho: int

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise InvalidParameterError(f"delta must lie in (0, 1), got {self.delta}")
        if int(self.rho) != self.rho or self.rho < 0:
            raise InvalidParameterError(f"rho must be a nonnegative integer, got {self.rho}")


# ---------------------------------------------------------------------------
# stroke layer
# ---------------------------------------------------------------------------


def _segment_counts(indptr, indices, mask):
    """Per-row count of indices hitting ``mask`` (a merge-free intersection count)."""
    hits = np.concatenate(([0], np.cumsum(mask[indices], dtype=np.int64)))
    return hits[indptr[1:]] - hits[indptr[:-1]]


def overlaps_from_mask(dictionary, cue_mask):
    """Overlaps ``O_mu`` for a cue given as a dense boolean feature mask."""
    return _segment_counts(dictionary.indptr, dictionary.indices, cue_mask)


def overlaps(dictionary: StrokeDictionary, cue: Cue):
    """``O_mu = |supp(xi^mu) & supp(cue)|`` for every stroke."""
    if cue.n_features != dictionary.n_features:
        raise InvalidParameterError(
            f"cue has {cue.n_features} features, dictionary has {dictionary.n_features}"
        )
    return overlaps_from_mask(dictionary, cue.mask())


def stroke_layer(overlap_values, threshold):
    """Fire every stroke whose overlap is at least ``threshold``.

    The integer overlap is compared against the real threshold directly;
    the threshold is never rounded.
    """
    if threshold < 0:
        raise InvalidParameterError("threshold must be nonnegative")
    o = np.asarray(overlap_values)
    return Activation(o.size, np.flatnonzero(o >= threshold))


# ---------------------------------------------------------------------------
# concept layer
# ---------------------------------------------------------------------------


def hits(book: ConceptBook, act: Activation):
    """``H_beta = |S_beta & supp(x)|`` for every concept."""
    if book.n_strokes != act.n_strokes:
        raise InvalidParameterError("book and activation disagree on the number of strokes")
    return _segment_counts(book.indptr, book.indices, act.mask())


def _score(h, sizes, kind):
    if kind.name == "plain":
        return h
    if kind.name == "penalised":
        return kind.a * h - kind.b * sizes
    return h / sizes


def concept_scores(book, act, kind=PLAIN):
    """Score table of the given kind: plain, penalised or normalised."""
    return ScoreTable(_score(hits(book, act), book.sizes, kind), kind)


def wta_decode(scores):
    """Index of the maximal score; the lowest index wins ties."""
    s = scores.scores if isinstance(scores, ScoreTable) else np.asarray(scores)
    if s.size == 0:
        raise InvalidParameterError("cannot decode an empty score table")
    return int(np.argmax(s))


def window_members(book, lower, upper):
    """Indices of the concepts whose size lies in ``[lower, upper]``."""
    sizes = book.sizes
    return np.flatnonzero((sizes >= lower) & (sizes <= upper))


def window_decode(book, act, lower, upper, kind=PLAIN):
    """Winner-take-all restricted to concepts with size in ``[lower, upper]``."""
    if lower > upper:
        raise InvalidParameterError(f"empty size window [{lower}, {upper}]")
    eligible = window_members(book, lower, upper)
    if eligible.size == 0:
        raise EmptyWindowError(f"no concept has a size in [{lower}, {upper}]")
    s = concept_scores(book, act, kind).scores
    return int(eligible[np.argmax(s[eligible])])


# ---------------------------------------------------------------------------
# error accounting
# ---------------------------------------------------------------------------


def error_counts(act, target):
    target = np.asarray(target, dtype=np.int64)
    true_pos = int(np.count_nonzero(np.isin(act.active, target, assume_unique=True)))
    return ErrorCounts(
        false_negatives=int(target.size) - true_pos,
        false_positives=int(act.active.size) - true_pos,
        target_size=int(target.size),
    )


def good_event(err, gp):
    """``F_- <= delta L_alpha`` and ``F_+ <= rho``, compared exactly."""
    return (err.false_negatives <= exact(gp.delta) * err.target_size
            and err.false_positives <= gp.rho)


def competitor_overlaps(book, alpha):
    """``|S_beta & S_alpha|`` for every ``beta`` (including ``alpha`` itself)."""
    return _segment_counts(book.indptr, book.indices, book.membership(alpha))


def max_overlap(book, alpha, restrict=None):
    """Largest overlap between concept ``alpha`` and any competitor.

    ``restrict=(lower, upper)`` limits the competitors to the size window.
    An empty competitor set gives 0.
    """
    if not 0 <= alpha < book.n_concepts:
        raise InvalidParameterError(f"concept index {alpha} out of range")
    ov = competitor_overlaps(book, alpha)
    keep = np.ones(book.n_concepts, dtype=bool)
    keep[alpha] = False
    if restrict is not None:
        lo, hi = restrict
        sizes = book.sizes
        keep &= (sizes >= lo) & (sizes <= hi)
    return int(ov[keep].max()) if keep.any() else 0


def check_separation(target_size, competitor_size, overlap, err, gp, kind=PLAIN):
    """Sufficient condition for the decoder to rank the target strictly above one competitor.

    Requires the good event to hold for ``err``; the certificate says
    nothing otherwise.
    """
    if not good_event(err, gp):
        raise ContractError("separation certificates assume the good event holds")
    keep = 1 - exact(gp.delta)
    if kind.name == "plain":
        return overlap + gp.rho < keep * target_size
    if kind.name == "penalised":
        ratio = exact(kind.b) / exact(kind.a)
        return overlap < keep * target_size - gp.rho - ratio * (target_size - competitor_size)
    return overlap + gp.rho < keep * competitor_size


def certify(book, act, alpha, gp, kind=PLAIN, window=None):
    """True when the good event and every competitor's separation condition hold.

    With a window the target must lie inside it and only competitors in
    the window are checked, mirroring the restricted decoder.
    """
    target = book.concept(alpha)
    err = error_counts(act, target)
    if not good_event(err, gp):
        return False
    sizes = book.sizes
    l_alpha = int(sizes[alpha])
    competitors = np.ones(book.n_concepts, dtype=bool)
    competitors[alpha] = False
    if window is not None:
        lo, hi = window
        if not lo <= l_alpha <= hi:
            return False
        competitors &= (sizes >= lo) & (sizes <= hi)
    ov = competitor_overlaps(book, alpha)
    for beta in np.flatnonzero(competitors):
        if not check_separation(l_alpha, int(sizes[beta]), int(ov[beta]), err, gp, kind):
            return False
    return True
