"""Response schema, the (f1, f2, kappa) mappings and dataset validation."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

import numpy as np

from .errors import ContractError, NumericalError, ValidationError

GAUSSIAN = "gaussian"
BERNOULLI = "bernoulli"
BINOMIAL = "binomial"
NEGBINOMIAL = "negbinomial"
KIND_TAGS = (GAUSSIAN, BERNOULLI, BINOMIAL, NEGBINOMIAL)


@dataclass(frozen=True)
class ResponseKind:
    """Type of one response column.

    ``trials`` is the binomial trial count, either a scalar or a per-row
    vector (the latter arises from multinomial expansion). ``r_init``, ``c1``
    and ``c2`` are the negative-binomial starting dispersion and its
    Gamma(c1, c2) prior.
    """

    tag: str
    trials: Union[int, tuple] = 1
    r_init: float = 10.0
    c1: float = 10.0
    c2: float = 1.0

    def __post_init__(self):
        if self.tag not in KIND_TAGS:
            raise ValidationError(f"unknown response kind {self.tag!r}; expected one of {KIND_TAGS}")
        if self.tag == BINOMIAL:
            t = np.asarray(self.trials)
            if t.size == 0 or np.any(t < 0) or np.any(t != np.floor(t)):
                raise ValidationError("binomial trials must be nonnegative integers")
            if t.ndim == 0 and t < 1:
                raise ValidationError("binomial trials M must be >= 1")
            if t.ndim:
                object.__setattr__(self, "trials", tuple(int(v) for v in t))
            else:
                object.__setattr__(self, "trials", int(t))
        if self.tag == NEGBINOMIAL:
            for name in ("r_init", "c1", "c2"):
                if not getattr(self, name) > 0:
                    raise ValidationError(f"negative binomial {name} must be positive")

    @classmethod
    def gaussian(cls):
        return cls(GAUSSIAN)

    @classmethod
    def bernoulli(cls):
        return cls(BERNOULLI)

    @classmethod
    def binomial(cls, trials):
        return cls(BINOMIAL, trials=trials)

    @classmethod
    def negbinomial(cls, r_init=10.0, c1=10.0, c2=1.0):
        return cls(NEGBINOMIAL, r_init=float(r_init), c1=float(c1), c2=float(c2))

    @property
    def is_discrete(self) -> bool:
        return self.tag != GAUSSIAN

    def trials_array(self, n: int) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.trials, dtype=float), (n,)).copy()

    def to_dict(self) -> dict:
        d = {"kind": self.tag}
        if self.tag == BINOMIAL:
            d["trials"] = list(self.trials) if isinstance(self.trials, tuple) else self.trials
        elif self.tag == NEGBINOMIAL:
            d.update(r_init=self.r_init, c1=self.c1, c2=self.c2)
        return d


@dataclass(frozen=True)
class ResponseSchema:
    kinds: tuple

    def __post_init__(self):
        object.__setattr__(self, "kinds", tuple(self.kinds))
        if len(self.kinds) < 1:
            raise ValidationError("a schema needs at least one response column")

    def __len__(self):
        return len(self.kinds)

    @property
    def q(self) -> int:
        return len(self.kinds)

    @property
    def gaussian_mask(self) -> np.ndarray:
        return np.array([k.tag == GAUSSIAN for k in self.kinds])

    @property
    def negbin_columns(self) -> list[int]:
        return [i for i, k in enumerate(self.kinds) if k.tag == NEGBINOMIAL]


@dataclass(frozen=True)
class Dataset:
    """Immutable design matrix, responses and schema.

    ``column_ids`` label the predictors (default ``0..p-1``); the sampler
    keys its random draws on these labels, so fits are equivariant under
    relabelling of X's columns.
    """

    X: np.ndarray
    Y: np.ndarray
    schema: ResponseSchema
    column_ids: np.ndarray = field(default=None)

    def __post_init__(self):
        X = np.array(self.X, dtype=float)
        Y = np.array(self.Y, dtype=float)
        if X.ndim != 2 or Y.ndim != 2:
            raise ValidationError("X and Y must be two-dimensional")
        if X.shape[0] != Y.shape[0]:
            raise ValidationError(f"X has {X.shape[0]} rows but Y has {Y.shape[0]}")
        if Y.shape[1] != self.schema.q:
            raise ValidationError(
                f"schema declares {self.schema.q} columns but Y has {Y.shape[1]}")
        ids = np.arange(X.shape[1]) if self.column_ids is None else np.array(self.column_ids, dtype=np.int64)
        if ids.shape != (X.shape[1],) or len(np.unique(ids)) != ids.size:
            raise ValidationError("column_ids must be distinct, one per column of X")
        for a in (X, Y, ids):
            a.setflags(write=False)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "Y", Y)
        object.__setattr__(self, "column_ids", ids)

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def p(self) -> int:
        return self.X.shape[1]

    @property
    def q(self) -> int:
        return self.Y.shape[1]

    def restrict(self, columns) -> "Dataset":
        """Dataset on a subset of predictor columns (positions), keeping their labels."""
        columns = np.asarray(columns, dtype=np.int64)
        return Dataset(self.X[:, columns], self.Y, self.schema, self.column_ids[columns])


# ---------------------------------------------------------------------------

def f_values(kind: ResponseKind, y, r_current=None, trials=None):
    """Exponent pair (f1, f2) of the discrete density for response value(s) ``y``.

    ``r_current`` is the chain's current dispersion (negative binomial only);
    ``trials`` overrides the kind's trial count for row-varying binomials.
    """
    if kind.tag == GAUSSIAN:
        raise ContractError("continuous responses have no (f1, f2) pair")
    y = np.asarray(y, dtype=float)
    if kind.tag == BERNOULLI:
        f2 = np.ones_like(y)
    elif kind.tag == BINOMIAL:
        f2 = np.broadcast_to(np.asarray(kind.trials if trials is None else trials, dtype=float), y.shape)
    else:
        r = kind.r_init if r_current is None else r_current
        f2 = y + r
    if y.ndim == 0:
        return float(y), float(f2)
    return y.copy(), np.array(f2, dtype=float)


def kappa(f1, f2):
    """Tilt of the augmented likelihood, ``f1 - f2 / 2``.

    From ``e^{f1 theta} / (1 + e^theta)^{f2} = 2^{-f2} e^{kappa theta}
    E[e^{-omega theta^2 / 2}]`` with ``omega ~ PG(f2, 0)``.
    """
    return f1 - f2 / 2.0


def latent_z(kind: ResponseKind, y, omega, f1=None, f2=None):
    """Working response: ``y`` for Gaussian columns, ``kappa(f1, f2) / omega`` otherwise."""
    if kind.tag == GAUSSIAN:
        return y
    omega = np.asarray(omega, dtype=float)
    if np.any(~(omega > 0)):
        raise NumericalError("Polya-Gamma latent omega must be positive")
    if f1 is None or f2 is None:
        f1, f2 = f_values(kind, y)
    z = kappa(f1, f2) / omega
    return float(z) if np.ndim(z) == 0 else z


def expand_multinomial(column, n_classes: int | None = None, trials: int = 1):
    """Stick-breaking re-expression of a multinomial response.

    Parameters
    ----------
    column : array_like
        Either an n-vector of class labels in ``1..L`` (one trial per row) or
        an ``n x L`` matrix of class counts.
    n_classes : int, optional
        L; inferred from the data when omitted.
    trials : int
        M, the per-row trial count. Ignored for label input (M = 1).

    Returns
    -------
    counts : ndarray, shape (n, L-1)
        Count ``y_l`` for pseudo-columns l = 1..L-1.
    kinds : list of ResponseKind
        Binomial kinds with per-row trials ``M - sum_{j<l} y_j``.
    """
    col = np.asarray(column)
    if col.ndim == 1:
        labels = col.astype(np.int64)
        if np.any(labels != col):
            raise ValidationError("class labels must be integers")
        L = int(labels.max()) if n_classes is None else int(n_classes)
        if labels.min() < 1 or labels.max() > L:
            raise ValidationError(f"class labels must lie in 1..{L}")
        counts = np.zeros((labels.size, L), dtype=np.int64)
        counts[np.arange(labels.size), labels - 1] = 1
        M = 1
    else:
        counts = col.astype(np.int64)
        if np.any(counts != col) or np.any(counts < 0):
            raise ValidationError("class counts must be nonnegative integers")
        L = counts.shape[1] if n_classes is None else int(n_classes)
        if counts.shape[1] != L:
            raise ValidationError(f"expected {L} count columns, got {counts.shape[1]}")
        M = int(trials)
    if L < 3:
        raise ValidationError("multinomial expansion needs L >= 3 classes")
    # trials left before class l: M - sum_{j<l} y_j
    remaining = M - np.cumsum(counts, axis=1) + counts
    bad = np.argwhere(counts > remaining)
    if len(bad):
        i, l = bad[0]
        raise ValidationError(f"row {i}: class {l + 1} count exceeds remaining trials")
    trials_l = remaining[:, : L - 1]
    kinds = [ResponseKind.binomial(tuple(trials_l[:, l])) for l in range(L - 1)]
    return counts[:, : L - 1].astype(float), kinds


@dataclass
class Violation:
    row: int | None
    col: int | None
    message: str
    matrix: str = "Y"

    def __str__(self):
        where = self.matrix
        if self.row is not None:
            where += f"[{self.row}"
            where += f", {self.col}]" if self.col is not None else "]"
        elif self.col is not None:
            where += f"[:, {self.col}]"
        return f"{where}: {self.message}"


def validate_dataset(d: Dataset) -> list[Violation]:
    """Every invariant violation of ``d``; an empty list means the dataset is valid."""
    out: list[Violation] = []
    if d.n < 2:
        out.append(Violation(None, None, f"need at least 2 observations, got {d.n}", "X"))
    for r, c in np.argwhere(~np.isfinite(d.X)):
        out.append(Violation(int(r), int(c), "non-finite entry", "X"))
    Yf = np.isfinite(d.Y)
    for r, c in np.argwhere(~Yf):
        out.append(Violation(int(r), int(c), "non-finite entry"))
    for k, kind in enumerate(d.schema.kinds):
        y = d.Y[:, k]
        ok = Yf[:, k]
        if kind.tag == BERNOULLI:
            bad = ok & ~np.isin(y, (0.0, 1.0))
            msg = "Bernoulli response must be 0 or 1"
        elif kind.tag == BINOMIAL:
            M = kind.trials_array(d.n)
            bad = ok & ((y != np.floor(y)) | (y < 0) | (y > M))
            msg = "binomial response must be an integer in [0, M]"
        elif kind.tag == NEGBINOMIAL:
            bad = ok & ((y != np.floor(y)) | (y < 0))
            msg = "negative-binomial response must be a nonnegative integer"
        else:
            continue
        for r in np.flatnonzero(bad):
            out.append(Violation(int(r), k, f"{msg}, got {y[r]:g}"))
    return out


def check_dataset(d: Dataset) -> Dataset:
    report = validate_dataset(d)
    if report:
        shown = "; ".join(str(v) for v in report[:10])
        more = f" (+{len(report) - 10} more)" if len(report) > 10 else ""
        raise ValidationError(f"invalid dataset: {shown}{more}")
    return d


def schema_from_sequence(kinds: Sequence) -> ResponseSchema:
    """Build a schema from kind tags or ``ResponseKind`` objects."""
    return ResponseSchema(tuple(k if isinstance(k, ResponseKind) else ResponseKind(k) for k in kinds))
