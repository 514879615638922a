"""Gibbs sampler for the mixed-response multivariate regression model.

Latent model: ``z_i = B^T x_i + u_i + e_i`` with ``u_i ~ N(0, Sigma)`` and
``e_i ~ N(0, diag(omega_i)^{-1})``. Rows of B carry the TPBN scale mixture
``b_j | nu_j ~ N(0, nu_j I)``, ``nu_j | eta_j ~ Gamma(u, eta_j)``,
``eta_j ~ Gamma(a, tau)``; ``Sigma ~ IW(d1, d2 I)``.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy import linalg
from scipy.special import expit

from . import distributions as dist
from .errors import NumericalError, ValidationError
from .model import BERNOULLI, BINOMIAL, GAUSSIAN, NEGBINOMIAL, Dataset
from .rng import RandomStream

CHI_FLOOR = 1e-30
PSI_CLAMP = 1e-12


@dataclass(frozen=True)
class Hyperparameters:
    """Prior settings. ``d1=None`` means ``d1 = q`` (resolved per dataset)."""

    tau: float = 0.001
    u: float = 0.5
    a: float = 0.5
    d1: Optional[float] = None
    d2: float = 10.0
    pg_threshold: int = dist.PG_THRESHOLD

    def resolve(self, q: int) -> "Hyperparameters":
        h = self if self.d1 is not None else replace(self, d1=float(q))
        h.validate(q)
        return h

    def validate(self, q: int | None = None):
        if not self.tau > 0:
            raise ValidationError("tau must be positive")
        if not (self.u > 0 and self.a > 0):
            raise ValidationError("TPBN shapes u and a must be positive")
        if not self.d2 > 0:
            raise ValidationError("d2 must be positive")
        if q is not None and self.d1 is not None and not self.d1 > q - 1:
            raise ValidationError(f"d1 must exceed q - 1 = {q - 1}, got {self.d1}")
        if int(self.pg_threshold) < 1:
            raise ValidationError("pg_threshold must be a positive integer")


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 3000
    burn_in: int = 1000
    thin: int = 1
    seed: int = 0
    keep_sigma: bool = False

    def __post_init__(self):
        if self.iterations < 1 or self.thin < 1:
            raise ValidationError("iterations and thin must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValidationError("burn_in must satisfy 0 <= burn_in < iterations")
        if self.retained < 50:
            raise ValidationError(
                f"only {self.retained} draws would be retained; at least 50 are required")

    @property
    def retained(self) -> int:
        return (self.iterations - self.burn_in) // self.thin


@dataclass
class ChainState:
    B: np.ndarray
    U: np.ndarray
    W: np.ndarray
    nu: np.ndarray
    eta: np.ndarray
    Sigma: np.ndarray
    r: np.ndarray

    def copy(self) -> "ChainState":
        return ChainState(*(np.array(getattr(self, f)) for f in
                            ("B", "U", "W", "nu", "eta", "Sigma", "r")))


class Layout:
    """Per-dataset constants the updates need, in canonical column order.

    Predictors are sorted by their ``column_ids`` so that every random draw
    indexed by predictor is keyed on the label, not on the column position.
    """

    def __init__(self, d: Dataset):
        self.dataset = d
        self.order = np.argsort(d.column_ids, kind="stable")
        self.X = np.ascontiguousarray(d.X[:, self.order])
        self.Y = d.Y
        self.n, self.p = self.X.shape
        self.q = d.q
        kinds = d.schema.kinds
        self.kinds = kinds
        self.gauss = np.array([k.tag == GAUSSIAN for k in kinds])
        self.gauss_cols = np.flatnonzero(self.gauss)
        self.disc_cols = np.flatnonzero(~self.gauss)
        self.nb_cols = np.array([k for k, kind in enumerate(kinds) if kind.tag == NEGBINOMIAL], dtype=int)
        self.f2_fixed = np.zeros((self.n, self.q))
        for k, kind in enumerate(kinds):
            if kind.tag == BERNOULLI:
                self.f2_fixed[:, k] = 1.0
            elif kind.tag == BINOMIAL:
                self.f2_fixed[:, k] = kind.trials_array(self.n)
            elif kind.tag == NEGBINOMIAL:
                self.f2_fixed[:, k] = self.Y[:, k]
        self.c1 = np.array([kinds[k].c1 for k in self.nb_cols])
        self.c2 = np.array([kinds[k].c2 for k in self.nb_cols])
        self.r_init = np.array([kinds[k].r_init for k in self.nb_cols])

    def f2(self, r) -> np.ndarray:
        f2 = self.f2_fixed.copy()
        if self.nb_cols.size:
            f2[:, self.nb_cols] += np.asarray(r)[None, :]
        return f2

    def omega_z(self, r) -> np.ndarray:
        """The product omega * z: y on Gaussian columns and kappa on discrete ones."""
        g = np.empty((self.n, self.q))
        g[:, self.gauss] = self.Y[:, self.gauss]
        disc = ~self.gauss
        g[:, disc] = self.Y[:, disc] - 0.5 * self.f2(r)[:, disc]
        return g

    def latent_z(self, W, r) -> np.ndarray:
        """Working responses Z recomputed from (W, Y, r); zero where omega is 0."""
        g = self.omega_z(r)
        z = g.copy()
        disc = ~self.gauss
        w = W[:, disc]
        z[:, disc] = np.divide(g[:, disc], w, out=np.zeros_like(w), where=w > 0)
        return z


def _layout(d) -> Layout:
    return d if isinstance(d, Layout) else Layout(d)


# ---------------------------------------------------------------------------
# state
# ---------------------------------------------------------------------------

def initialize_state(d, h: Hyperparameters | None = None, s: RandomStream | None = None) -> ChainState:
    """Deterministic start: B = 0, U = 0, nu = eta = 1, Sigma = I, r = r_init.

    W is 1 on Gaussian columns and ``f2 / 4``, the PG(f2, 0) mean, on discrete
    cells. Starting discrete cells at 1 puts a count column's working
    response far off scale and an interpolating first B draw (p > n) can
    lock the chain into a spurious small-r mode.
    """
    lay = _layout(d)
    W = np.ones((lay.n, lay.q))
    W[:, lay.disc_cols] = lay.f2(lay.r_init)[:, lay.disc_cols] / 4.0
    return ChainState(
        B=np.zeros((lay.p, lay.q)),
        U=np.zeros((lay.n, lay.q)),
        W=W,
        nu=np.ones(lay.p),
        eta=np.ones(lay.p),
        Sigma=np.eye(lay.q),
        r=lay.r_init.copy(),
    )


def check_state(state: ChainState, d) -> None:
    """Raise NumericalError if any ChainState invariant fails."""
    lay = _layout(d)
    if not np.all(state.W[:, lay.gauss] == 1.0):
        raise NumericalError("omega on a Gaussian column moved away from 1")
    if np.any(state.W[:, ~lay.gauss] < 0):
        raise NumericalError("negative Polya-Gamma latent")
    for name in ("nu", "eta", "r"):
        v = getattr(state, name)
        if np.any(~(v > 0)):
            raise NumericalError(f"{name} must stay strictly positive")
    if not np.allclose(state.Sigma, state.Sigma.T):
        raise NumericalError("Sigma lost symmetry")
    try:
        np.linalg.cholesky(state.Sigma)
    except np.linalg.LinAlgError as exc:
        raise NumericalError("Sigma is not positive definite") from exc
    for name in ("B", "U", "W"):
        if not np.all(np.isfinite(getattr(state, name))):
            raise NumericalError(f"non-finite entries in {name}")


# ---------------------------------------------------------------------------
# full conditionals
# ---------------------------------------------------------------------------

def update_B(state: ChainState, d, h: Hyperparameters | None, s: RandomStream) -> np.ndarray:
    """Draw each column of B from its Gaussian full conditional.

    Uses the O(n^2 p) sampler when p > n; Gaussian columns (omega = 1) share
    one n x n factorisation.
    """
    lay = _layout(d)
    X, nu = lay.X, state.nu
    g = lay.omega_z(state.r)
    B = np.empty((lay.p, lay.q))
    fast = lay.p > lay.n
    shared = None
    try:
        for k in range(lay.q):
            if lay.gauss[k]:
                Phi = X
                alpha = lay.Y[:, k] - state.U[:, k]
                if fast and shared is None:
                    m = (X * nu) @ X.T
                    m[np.diag_indices(lay.n)] += 1.0
                    shared = linalg.cho_factor(m, lower=True, check_finite=False)
                factor = shared
            else:
                w = state.W[:, k]
                sw = np.sqrt(w)
                Phi = sw[:, None] * X
                alpha = np.divide(g[:, k], sw, out=np.zeros(lay.n), where=sw > 0) - sw * state.U[:, k]
                factor = None
            if fast:
                B[:, k] = dist.fast_gaussian_posterior(Phi, alpha, nu, s, factor)
            else:
                B[:, k] = dist.dense_gaussian_posterior(Phi, alpha, nu, s)
    except (linalg.LinAlgError, ValueError) as exc:
        raise NumericalError(f"B update failed: {exc}") from exc
    return B


def update_U(state: ChainState, d, s: RandomStream) -> np.ndarray:
    """Draw the random effects u_i ~ N(Psi_i^{-1} Omega_i (z_i - B^T x_i), Psi_i^{-1})."""
    lay = _layout(d)
    chol_sigma = dist.safe_cholesky(state.Sigma)
    sigma_inv = linalg.cho_solve((chol_sigma, True), np.eye(lay.q))
    sigma_inv = 0.5 * (sigma_inv + sigma_inv.T)
    psi = np.broadcast_to(sigma_inv, (lay.n, lay.q, lay.q)).copy()
    idx = np.arange(lay.q)
    psi[:, idx, idx] += state.W
    rhs = lay.omega_z(state.r) - state.W * (lay.X @ state.B)
    eps = s.gen.standard_normal((lay.n, lay.q))
    try:
        L = np.linalg.cholesky(psi)
    except np.linalg.LinAlgError:
        L = np.stack([dist.safe_cholesky(m) for m in psi])
    LT = np.swapaxes(L, 1, 2)
    y = np.linalg.solve(L, rhs[..., None])
    return np.linalg.solve(LT, y + eps[..., None])[..., 0]


def update_W(state: ChainState, d, h: Hyperparameters | None, s: RandomStream) -> np.ndarray:
    """Fresh Polya-Gamma latents PG(f2, (XB + U)_ik) on discrete cells; 1 on Gaussian cells."""
    lay = _layout(d)
    threshold = dist.PG_THRESHOLD if h is None else h.pg_threshold
    W = np.ones((lay.n, lay.q))
    if lay.disc_cols.size:
        cols = lay.disc_cols
        theta = lay.X @ state.B[:, cols] + state.U[:, cols]
        f2 = lay.f2(state.r)[:, cols]
        active = f2 > 0
        w = np.zeros_like(f2)
        w[active] = dist.sample_polya_gamma(f2[active], theta[active], s, threshold=threshold)
        W[:, cols] = w
    return W


def update_nu(state: ChainState, h: Hyperparameters, s: RandomStream) -> np.ndarray:
    """nu_j ~ GIG(chi=||b_j||^2, psi=2 eta_j, lam=u - q/2)."""
    q = state.B.shape[1]
    lam = h.u - q / 2.0
    chi = np.einsum("jk,jk->j", state.B, state.B)
    if lam <= 0:
        chi = np.maximum(chi, CHI_FLOOR)
    return dist.sample_gig(chi, 2.0 * state.eta, lam, s)


def update_eta(state: ChainState, h: Hyperparameters, s: RandomStream) -> np.ndarray:
    """eta_j ~ Gamma(u + a, tau + nu_j).

    The shape collects ``a`` from the Gamma(a, tau) prior and ``u`` from the
    eta_j^u normaliser of nu_j's Gamma(u, eta_j) density.
    """
    return dist.sample_gamma(h.u + h.a, h.tau + state.nu, s)


def update_Sigma(state: ChainState, h: Hyperparameters, s: RandomStream) -> np.ndarray:
    """Sigma ~ IW(n + d1, U^T U + d2 I)."""
    n, q = state.U.shape
    d1 = float(q) if h.d1 is None else h.d1
    scale = state.U.T @ state.U + h.d2 * np.eye(q)
    return dist.sample_inverse_wishart(n + d1, scale, s)


def update_r(state: ChainState, d, s: RandomStream) -> np.ndarray:
    """Negative-binomial dispersion via CRT augmentation, one value per NB column."""
    lay = _layout(d)
    r = np.array(state.r, dtype=float)
    for m, k in enumerate(lay.nb_cols):
        y = lay.Y[:, k]
        l_sum = dist.sample_crt(y, r[m], s).sum()
        theta = lay.X @ state.B[:, k] + state.U[:, k]
        psi = np.clip(expit(theta), PSI_CLAMP, 1.0 - PSI_CLAMP)
        rate = lay.c2[m] - np.log1p(-psi).sum()
        r[m] = dist.sample_gamma(lay.c1[m] + l_sum, rate, s)
    return r


# ---------------------------------------------------------------------------
# chain runner
# ---------------------------------------------------------------------------

def gibbs_sweep(state: ChainState, lay: Layout, h: Hyperparameters, s: RandomStream,
                pinned: dict | None = None) -> ChainState:
    """One full sweep, in place.

    Order: B, U, then the (r, W) block, then nu, eta, Sigma. The dispersion
    r is drawn with W integrated out and W is refreshed right after, so the
    pair is always mutually consistent.
    """
    pinned = pinned or {}
    if "B" not in pinned:
        state.B = update_B(state, lay, h, s)
    if "U" not in pinned:
        state.U = update_U(state, lay, s)
    if lay.nb_cols.size and "r" not in pinned:
        state.r = update_r(state, lay, s)
    if "W" not in pinned:
        state.W = update_W(state, lay, h, s)
    if "nu" not in pinned:
        state.nu = update_nu(state, h, s)
    if "eta" not in pinned:
        state.eta = update_eta(state, h, s)
    if "Sigma" not in pinned:
        state.Sigma = update_Sigma(state, h, s)
    return state


def _apply_pins(state: ChainState, lay: Layout, pinned: dict):
    for name, value in pinned.items():
        if not hasattr(state, name):
            raise ValidationError(f"cannot pin unknown state component {name!r}")
        v = np.array(value, dtype=float)
        cur = getattr(state, name)
        if name in ("B", "nu", "eta") and v.shape == cur.shape:
            v = v[lay.order] if v.ndim else v
        setattr(state, name, np.broadcast_to(v, cur.shape).copy())


@dataclass
class PosteriorSamples:
    """Retained draws, stored in the caller's predictor order.

    Quantiles use linear interpolation between order statistics (numpy's
    default ``"linear"`` method).
    """

    B: np.ndarray
    Sigma: Optional[np.ndarray] = None
    r: Optional[np.ndarray] = None
    column_ids: Optional[np.ndarray] = None
    meta: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.B.shape[0]

    @property
    def shape(self) -> tuple[int, int]:
        return self.B.shape[1], self.B.shape[2]

    def quantile(self, j: int, k: int, level: float) -> float:
        return float(np.quantile(self.B[:, j, k], level))

    def median(self, j: int, k: int) -> float:
        return self.quantile(j, k, 0.5)

    def quantiles(self, levels) -> np.ndarray:
        """Array of shape ``(len(levels), p, q)``."""
        return np.quantile(self.B, np.asarray(levels, dtype=float), axis=0)

    def posterior_median(self) -> np.ndarray:
        return np.quantile(self.B, 0.5, axis=0)

    def summary(self, lower: float = 0.025, upper: float = 0.975):
        from .selection import CredibleSummary

        lo, med, hi = self.quantiles([lower, 0.5, upper])
        return CredibleSummary(lo, med, hi, levels=(lower, 0.5, upper))


def run_chain(d: Dataset, h: Hyperparameters | None = None, cfg: ChainConfig | None = None,
              stream: RandomStream | None = None, *, pinned: dict | None = None,
              init: ChainState | None = None, check: bool = False) -> PosteriorSamples:
    """Run the Gibbs sampler and return the retained, thinned draws.

    Parameters
    ----------
    d : Dataset
    h : Hyperparameters, optional
    cfg : ChainConfig, optional
    stream : RandomStream, optional
        Defaults to ``RandomStream(cfg.seed).child(0)``.
    pinned : dict, optional
        State components held fixed at the given values (their updates are
        skipped); meant for diagnostics and oracle tests.
    init : ChainState, optional
        Starting state in canonical (label-sorted) order.
    check : bool
        Verify the state invariants after every sweep.
    """
    h = (h or Hyperparameters()).resolve(d.q)
    cfg = cfg or ChainConfig()
    s = stream if stream is not None else RandomStream(cfg.seed).child(0)
    lay = Layout(d)
    state = init.copy() if init is not None else initialize_state(lay)
    pinned = dict(pinned or {})
    _apply_pins(state, lay, pinned)

    S = cfg.retained
    drawsB = np.empty((S, lay.p, lay.q))
    drawsSigma = np.empty((S, lay.q, lay.q)) if cfg.keep_sigma else None
    drawsR = np.empty((S, lay.nb_cols.size))
    inverse = np.empty_like(lay.order)
    inverse[lay.order] = np.arange(lay.p)

    t0 = time.perf_counter()
    kept = 0
    for it in range(cfg.iterations):
        try:
            gibbs_sweep(state, lay, h, s, pinned)
            if check:
                check_state(state, lay)
        except NumericalError as exc:
            exc.iteration = it
            raise
        if it >= cfg.burn_in and (it - cfg.burn_in + 1) % cfg.thin == 0 and kept < S:
            drawsB[kept] = state.B[inverse]
            if drawsSigma is not None:
                drawsSigma[kept] = state.Sigma
            drawsR[kept] = state.r
            kept += 1
    elapsed = time.perf_counter() - t0
    meta = {
        "iterations": cfg.iterations, "burn_in": cfg.burn_in, "thin": cfg.thin,
        "seed": cfg.seed, "stream_key": list(s.key),
        "seconds": elapsed, "seconds_per_iteration": elapsed / cfg.iterations,
    }
    return PosteriorSamples(drawsB, drawsSigma, drawsR, np.array(d.column_ids), meta)
