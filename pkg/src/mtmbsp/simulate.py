"""Synthetic mixed-response scenarios and the replicate harness."""
from __future__ import annotations

import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.signal import lfilter
from scipy.special import expit

from .errors import MtMBSPError, ValidationError
from .gibbs import ChainConfig, Hyperparameters
from .model import BERNOULLI, GAUSSIAN, NEGBINOMIAL, Dataset, ResponseKind, ResponseSchema
from .rng import RandomStream
from .selection import CredibleSummary, one_step_fit, two_step_fit

SCENARIOS = {
    1: (GAUSSIAN, GAUSSIAN, BERNOULLI, BERNOULLI),
    2: (GAUSSIAN, GAUSSIAN, BERNOULLI, BERNOULLI, NEGBINOMIAL, NEGBINOMIAL),
    3: (NEGBINOMIAL, NEGBINOMIAL, NEGBINOMIAL, GAUSSIAN, GAUSSIAN),
    4: (BERNOULLI,) * 4,
    5: (BERNOULLI, BERNOULLI, BERNOULLI, NEGBINOMIAL, NEGBINOMIAL),
    6: (NEGBINOMIAL,) * 3,
}
METHODS = ("one-step", "two-step", "both")
METRIC_NAMES = ("rmse", "cp", "sens", "spec", "mcc")


def _check_scenario(scenario: int):
    if scenario not in SCENARIOS:
        raise ValidationError(f"unknown scenario {scenario!r}; valid ids are 1-6")


@dataclass(frozen=True)
class ScenarioSpec:
    """Data-generating settings. ``mix`` defaults to the scenario's response kinds."""

    scenario: int = 1
    n: int = 150
    p: int = 500
    s0: int = 10
    ar_corr: float = 0.5
    sigma2: float = 1.0
    rho: float = 0.5
    r_true: float = 50.0
    coef_range_cont: tuple = ((-5.0, -0.5), (0.5, 5.0))
    coef_range_count: tuple = ((-0.6, -0.3), (0.3, 0.6))
    seed: int = 0
    mix: tuple = ()

    def __post_init__(self):
        _check_scenario(self.scenario)
        if not self.mix:
            object.__setattr__(self, "mix", SCENARIOS[self.scenario])
        object.__setattr__(self, "mix", tuple(self.mix))
        object.__setattr__(self, "coef_range_cont", tuple(tuple(map(float, iv)) for iv in self.coef_range_cont))
        object.__setattr__(self, "coef_range_count", tuple(tuple(map(float, iv)) for iv in self.coef_range_count))
        if self.n < 2 or self.p < 1:
            raise ValidationError("n must be >= 2 and p >= 1")
        if not 1 <= self.s0 <= self.p:
            raise ValidationError(f"s0 must lie in 1..p, got {self.s0}")
        if not -1 < self.ar_corr < 1:
            raise ValidationError("ar_corr must lie in (-1, 1)")
        if not self.sigma2 > 0 or not self.r_true > 0:
            raise ValidationError("sigma2 and r_true must be positive")
        q = len(self.mix)
        if q > 1 and not -1.0 / (q - 1) < self.rho < 1:
            raise ValidationError(f"rho must lie in (-1/(q-1), 1) for an SPD covariance, got {self.rho}")
        for ivs in (self.coef_range_cont, self.coef_range_count):
            if not ivs or any(len(iv) != 2 or not iv[0] < iv[1] for iv in ivs):
                raise ValidationError("coefficient ranges must be nonempty lists of (low, high) with low < high")

    @property
    def q(self) -> int:
        return len(self.mix)

    @property
    def sigma_true(self) -> np.ndarray:
        q = self.q
        return self.sigma2 * ((1.0 - self.rho) * np.eye(q) + self.rho * np.ones((q, q)))

    def schema(self, r_init: float = 10.0, c1: float = 10.0, c2: float = 1.0) -> ResponseSchema:
        """Model schema for fitting; count columns start at ``r_init``."""
        kinds = [ResponseKind.negbinomial(r_init, c1, c2) if t == NEGBINOMIAL else ResponseKind(t)
                 for t in self.mix]
        return ResponseSchema(tuple(kinds))


@dataclass
class Metrics:
    rmse: float
    cp: float
    sens: float
    spec: float
    mcc: float
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0


# ---------------------------------------------------------------------------
# generators
# ---------------------------------------------------------------------------

def generate_design(spec: ScenarioSpec, s: RandomStream) -> np.ndarray:
    """Rows i.i.d. N(0, Gamma) with ``Gamma_ij = ar_corr^|i-j|``, via the AR(1) recursion."""
    rho = spec.ar_corr
    e = s.gen.standard_normal((spec.n, spec.p))
    c = math.sqrt(1.0 - rho * rho)
    e[:, 0] /= c
    return lfilter([c], [1.0, -rho], e, axis=1)


def sample_interval_union(intervals, size, s: RandomStream) -> np.ndarray:
    """Uniform draws on a union of disjoint intervals."""
    iv = np.asarray(intervals, dtype=float)
    lengths = iv[:, 1] - iv[:, 0]
    pick = s.gen.choice(len(iv), size=size, p=lengths / lengths.sum())
    return iv[pick, 0] + lengths[pick] * s.gen.random(size)


def generate_coefficients(spec: ScenarioSpec, s: RandomStream):
    """Sparse ``B0`` with ``s0`` nonzero rows at uniformly chosen positions."""
    rows = np.sort(s.gen.choice(spec.p, size=spec.s0, replace=False))
    B0 = np.zeros((spec.p, spec.q))
    for k, tag in enumerate(spec.mix):
        ranges = spec.coef_range_count if tag == NEGBINOMIAL else spec.coef_range_cont
        B0[rows, k] = sample_interval_union(ranges, spec.s0, s)
    return B0, rows


def generate_responses(spec: ScenarioSpec, X, B0, s: RandomStream) -> np.ndarray:
    """Responses from the latent predictor ``X B0 + U`` with ``U`` rows ~ N(0, Sigma_true)."""
    n, q = X.shape[0], spec.q
    U = s.gen.standard_normal((n, q)) @ np.linalg.cholesky(spec.sigma_true).T
    theta = X @ B0 + U
    Y = np.empty((n, q))
    for k, tag in enumerate(spec.mix):
        t = theta[:, k]
        if tag == GAUSSIAN:
            Y[:, k] = t + s.gen.standard_normal(n)
        elif tag == BERNOULLI:
            Y[:, k] = s.gen.random(n) < expit(t)
        else:
            # failures before r successes: mean r e^theta
            Y[:, k] = s.gen.negative_binomial(spec.r_true, np.clip(expit(-t), 1e-12, 1.0))
    return Y


def generate_dataset(spec: ScenarioSpec, s: RandomStream, schema: ResponseSchema | None = None):
    """``(Dataset, B0, S0)`` using independent child streams for X, B0 and Y."""
    X = generate_design(spec, s.child(0))
    B0, S0 = generate_coefficients(spec, s.child(1))
    Y = generate_responses(spec, X, B0, s.child(2))
    return Dataset(X, Y, schema or spec.schema()), B0, S0


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------

def _ratio(a, b):
    return a / b if b else float("nan")


def compute_metrics(Bhat, intervals: CredibleSummary, selected, B0, S0) -> Metrics:
    """rMSE, interval coverage over all cells, and row-level selection metrics.

    MCC is 0 when any confusion margin is empty.
    """
    Bhat = np.asarray(Bhat, dtype=float)
    B0 = np.asarray(B0, dtype=float)
    p, q = B0.shape
    rmse = float(np.linalg.norm(Bhat - B0) / math.sqrt(p * q))
    cp = float(np.mean((intervals.lower <= B0) & (B0 <= intervals.upper)))
    truth = np.zeros(p, dtype=bool)
    truth[np.asarray(S0, dtype=np.int64)] = True
    chosen = np.zeros(p, dtype=bool)
    chosen[np.asarray(selected, dtype=np.int64)] = True
    tp = int(np.sum(truth & chosen))
    fp = int(np.sum(~truth & chosen))
    tn = int(np.sum(~truth & ~chosen))
    fn = int(np.sum(truth & ~chosen))
    denom = float(tp + fp) * (tp + fn) * (tn + fp) * (tn + fn)
    mcc = (tp * tn - fp * fn) / math.sqrt(denom) if denom > 0 else 0.0
    return Metrics(rmse, cp, _ratio(tp, tp + fn), _ratio(tn, tn + fp), float(mcc), tp, fp, tn, fn)


# ---------------------------------------------------------------------------
# replicate harness
# ---------------------------------------------------------------------------

@dataclass
class ReplicateTable:
    """Per-replicate rows and their mean/SD aggregates per method."""

    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    @property
    def methods(self) -> list[str]:
        seen = []
        for r in self.rows:
            if r["method"] not in seen:
                seen.append(r["method"])
        return seen

    def aggregate(self) -> dict:
        out = {}
        for m in self.methods:
            rows = [r for r in self.rows if r["method"] == m]
            out[m] = {}
            for name in METRIC_NAMES:
                v = np.array([r[name] for r in rows], dtype=float)
                sd = float(np.std(v, ddof=1)) if v.size > 1 else 0.0
                out[m][name] = {"mean": float(np.mean(v)), "sd": sd}
            out[m]["replicates"] = len(rows)
        return out

    def to_dict(self) -> dict:
        return {"aggregate": self.aggregate(), "replicates": self.rows,
                "failures": self.failures, "failure_count": len(self.failures)}


def run_replicate(spec: ScenarioSpec, h: Hyperparameters, cfg: ChainConfig, method: str,
                  rep: int, gamma: float = 0.02, rule: str = "literal") -> list[dict]:
    """One replicate: fresh data, then the requested fits. Returns one row per method.

    Data come from ``RandomStream(spec.seed, (rep, 0))`` and the chains from
    ``RandomStream(cfg.seed, (rep, 1))``; with ``method="both"`` the two-step
    estimator reuses the one-step chain as its screening fit.
    """
    d, B0, S0 = generate_dataset(spec, RandomStream(spec.seed, (rep, 0)))
    base = RandomStream(cfg.seed, (rep, 1))
    rows = []
    step1 = None
    if method in ("one-step", "both"):
        t0 = time.perf_counter()
        step1, summary, A0 = one_step_fit(d, h, cfg, base.child(0))
        m = compute_metrics(summary.median, summary, A0, B0, S0)
        rows.append({"replicate": rep, "method": "one-step", **asdict(m),
                     "seconds": time.perf_counter() - t0})
    if method in ("two-step", "both"):
        t0 = time.perf_counter()
        est = two_step_fit(d, h, cfg, gamma, rule=rule, step1=step1, stream=base)
        m = compute_metrics(est.Btilde, est.summary, est.selected, B0, S0)
        rows.append({"replicate": rep, "method": "two-step", **asdict(m),
                     "Kn": est.sets.Kn, "screened_all": bool(np.isin(S0, est.sets.Jn).all()),
                     "null_model": est.null_model, "seconds": time.perf_counter() - t0})
    return rows


def _worker(args):
    spec, h, cfg, method, rep, gamma, rule = args
    try:
        return rep, run_replicate(spec, h, cfg, method, rep, gamma, rule), None
    except MtMBSPError as exc:
        return rep, [], f"{type(exc).__name__}: {exc}"


def worker_count() -> int:
    raw = os.environ.get("MTMBSP_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        raise ValidationError(f"MTMBSP_THREADS must be an integer, got {raw!r}") from None


def run_replicates(spec: ScenarioSpec, h: Hyperparameters | None = None, cfg: ChainConfig | None = None,
                   method: str = "two-step", R: int = 10, gamma: float = 0.02, rule: str = "literal",
                   workers: int | None = None, progress=None) -> ReplicateTable:
    """Run ``R`` independent replicates; failures are recorded, not raised.

    ``workers`` defaults to the ``MTMBSP_THREADS`` environment variable.
    Results do not depend on the worker count.
    """
    if method not in METHODS:
        raise ValidationError(f"unknown method {method!r}; expected one of {METHODS}")
    if R < 1:
        raise ValidationError("R must be at least 1")
    h = h or Hyperparameters()
    cfg = cfg or ChainConfig()
    jobs = [(spec, h, cfg, method, rep, gamma, rule) for rep in range(R)]
    workers = worker_count() if workers is None else workers
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_worker, jobs))
    else:
        results = []
        for job in jobs:
            results.append(_worker(job))
            if progress:
                progress(results[-1])
    table = ReplicateTable()
    for rep, rows, err in sorted(results, key=lambda t: t[0]):
        table.rows.extend(rows)
        if err:
            table.failures.append({"replicate": rep, "error": err})
    return table


def paper_grid(ps=(500, 1000, 2000), scenarios=tuple(SCENARIOS), R: int = 100):
    """Every (scenario, p) cell of the full simulation study, as ScenarioSpecs."""
    return [(ScenarioSpec(scenario=sc, p=p), R) for sc in scenarios for p in ps]
