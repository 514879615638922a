"""Credible-interval selection and the two-step screen-and-refit estimator."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import ValidationError
from .gibbs import ChainConfig, Hyperparameters, PosteriorSamples, run_chain
from .model import Dataset
from .rng import RandomStream

LITERAL = "literal"
STRICT_MAX = "strict-max"
EXCLUDE_BAND = "exclude-band"
SCREEN_RULES = (LITERAL, STRICT_MAX, EXCLUDE_BAND)


@dataclass(frozen=True)
class CredibleSummary:
    """Cellwise lower, median and upper posterior quantiles, each ``p x q``."""

    lower: np.ndarray
    median: np.ndarray
    upper: np.ndarray
    levels: tuple = (0.025, 0.5, 0.975)

    def __post_init__(self):
        lo, med, hi = (np.array(a, dtype=float) for a in (self.lower, self.median, self.upper))
        if lo.ndim == 1:
            lo, med, hi = lo[:, None], med[:, None], hi[:, None]
        if not lo.shape == med.shape == hi.shape:
            raise ValidationError("quantile arrays must share one shape")
        if np.any(lo > med) or np.any(med > hi):
            raise ValidationError("quantiles must satisfy lower <= median <= upper cellwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "median", med)
        object.__setattr__(self, "upper", hi)

    @property
    def shape(self):
        return self.median.shape

    def rows(self, rows) -> "CredibleSummary":
        rows = np.asarray(rows, dtype=np.int64)
        return CredibleSummary(self.lower[rows], self.median[rows], self.upper[rows], self.levels)


@dataclass(frozen=True)
class SelectionSets:
    A0: np.ndarray
    An: np.ndarray
    Jn: np.ndarray

    @property
    def Kn(self) -> int:
        return int(self.Jn.size)

    def to_dict(self) -> dict:
        return {"A0": self.A0.tolist(), "An": self.An.tolist(), "Jn": self.Jn.tolist(), "Kn": self.Kn}


@dataclass
class TwoStepEstimate:
    """Zero-padded refit on the screened candidates.

    ``Btilde`` holds step-2 posterior medians on the rows in ``sets.Jn`` and
    exact zeros elsewhere; ``selected`` is step 2's credible-interval
    selection in original predictor positions. ``null_model`` marks the
    case where screening kept nothing.
    """

    Btilde: np.ndarray
    selected: np.ndarray
    sets: SelectionSets
    summary: CredibleSummary
    step1: PosteriorSamples
    step2: Optional[PosteriorSamples] = None
    null_model: bool = False
    meta: dict = field(default_factory=dict)


def select_active(summary: CredibleSummary) -> np.ndarray:
    """Rows with at least one 95% interval excluding zero."""
    hit = (summary.lower > 0) | (summary.upper < 0)
    return np.flatnonzero(hit.any(axis=1))


def screen_candidates(summary: CredibleSummary, gamma: float, rule: str = LITERAL) -> np.ndarray:
    """Candidate rows for the refit.

    ``rule="literal"`` keeps row j when at least one response has
    ``lower > -gamma`` or at least one has ``upper < gamma``, i.e.
    ``max_k lower > -gamma or min_k upper < gamma``. ``rule="strict-max"``
    takes the maximum in both clauses, which drops a row whose effects are
    all negative as soon as one of its intervals reaches above ``gamma``.
    ``rule="exclude-band"`` keeps rows with some interval disjoint from
    ``(-gamma, gamma)``.
    """
    if not gamma > 0:
        raise ValidationError("gamma must be positive")
    if rule == LITERAL:
        keep = (summary.lower.max(axis=1) > -gamma) | (summary.upper.min(axis=1) < gamma)
    elif rule == STRICT_MAX:
        keep = (summary.lower.max(axis=1) > -gamma) | (summary.upper.max(axis=1) < gamma)
    elif rule == EXCLUDE_BAND:
        keep = ((summary.lower >= gamma) | (summary.upper <= -gamma)).any(axis=1)
    else:
        raise ValidationError(f"unknown screening rule {rule!r}; expected one of {SCREEN_RULES}")
    return np.flatnonzero(keep)


def rank_topK(An, summary: CredibleSummary, n: int) -> tuple[np.ndarray, int]:
    """Keep the ``min(n - 1, |An|)`` candidates with largest ``|max_k median|``.

    Ties go to the smaller index. The result is sorted ascending.
    """
    An = np.asarray(An, dtype=np.int64)
    K = int(min(n - 1, An.size))
    if K <= 0:
        return np.empty(0, dtype=np.int64), 0
    score = np.abs(summary.median[An].max(axis=1))
    # lexsort: last key is primary
    order = np.lexsort((An, -score))
    return np.sort(An[order[:K]]), K


def selection_sets(summary: CredibleSummary, gamma: float, n: int, rule: str = LITERAL) -> SelectionSets:
    An = screen_candidates(summary, gamma, rule)
    Jn, _ = rank_topK(An, summary, n)
    return SelectionSets(select_active(summary), An, Jn)


def one_step_fit(d: Dataset, h: Hyperparameters | None = None, cfg: ChainConfig | None = None,
                 stream: RandomStream | None = None):
    """Full-data chain plus credible-interval selection: ``(samples, summary, A0)``."""
    cfg = cfg or ChainConfig()
    s = stream if stream is not None else RandomStream(cfg.seed).child(0)
    samples = run_chain(d, h, cfg, s)
    summary = samples.summary()
    return samples, summary, select_active(summary)


def two_step_fit(d: Dataset, h: Hyperparameters | None = None, cfg: ChainConfig | None = None,
                 gamma: float = 0.02, *, h2: Hyperparameters | None = None,
                 cfg2: ChainConfig | None = None, rule: str = LITERAL,
                 step1: PosteriorSamples | None = None,
                 stream: RandomStream | None = None) -> TwoStepEstimate:
    """Screen with a full-data chain, refit on the survivors, zero-pad the rest.

    Parameters
    ----------
    d : Dataset
    h, cfg : step-1 hyperparameters and chain settings.
    gamma : float
        Screening slack.
    h2, cfg2 : optional step-2 overrides (default to the step-1 values).
    rule : {"literal", "strict-max", "exclude-band"}
    step1 : PosteriorSamples, optional
        Reuse an existing full-data chain instead of running step 1.
    stream : RandomStream, optional
        Base stream; step 1 uses ``child(0)`` and step 2 ``child(1)``.
        Defaults to ``RandomStream(cfg.seed)``.
    """
    cfg = cfg or ChainConfig()
    base = stream if stream is not None else RandomStream(cfg.seed)
    if step1 is None:
        step1 = run_chain(d, h, cfg, base.child(0))
    summary1 = step1.summary()
    sets = selection_sets(summary1, gamma, d.n, rule)
    Btilde = np.zeros((d.p, d.q))
    if sets.Kn == 0:
        return TwoStepEstimate(Btilde, np.empty(0, dtype=np.int64), sets, summary1, step1,
                               null_model=True)
    step2 = run_chain(d.restrict(sets.Jn), h2 if h2 is not None else h, cfg2 or cfg, base.child(1))
    summary2 = step2.summary()
    Btilde[sets.Jn] = summary2.median
    lower = np.zeros((d.p, d.q))
    upper = np.zeros((d.p, d.q))
    lower[sets.Jn] = summary2.lower
    upper[sets.Jn] = summary2.upper
    padded = CredibleSummary(lower, Btilde.copy(), upper, summary2.levels)
    selected = sets.Jn[select_active(summary2)]
    return TwoStepEstimate(Btilde, selected, sets, padded, step1, step2)
