"""Trimmed-Spearman generalized correlation and the partial copula test.

Each coordinate function is ``phi_k(u) = c_k (u - m_k) sigma_k(u)`` where
``sigma_k`` is a normalized trapezoid on ``[mu_k, lambda_k]`` with linear
ramps of width ``delta_k``. Every integral involving ``sigma`` or ``phi`` is a
piecewise polynomial of degree <= 4 and is computed exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from numpy.polynomial import Polynomial
from scipy.stats import chi2

from .basis import BasisSpec, expand_matrix
from .cdf import (
    TAU_MAX,
    TAU_MIN,
    ConditionalCdfModel,
    default_grid_size,
    equidistant_grid,
    fit_conditional_cdf,
    pit_residuals,
)
from .dataset import Dataset, to_pseudo_obs
from .errors import DegeneracyError, DomainError, PcitError, ShapeError, StageError
from .qreg import PenaltySchedule, select_penalty

EIGEN_FLOOR = 1e-12
DELTA_FRACTION = 0.01


def _trapezoid_pieces(mu, lam, delta, K):
    """Pieces ``(lo, hi, poly)`` of ``sigma`` with ``poly`` in ``s = u - lo``.

    Local coordinates keep the steep ramps free of cancellation.
    """
    return [
        (mu, mu + delta, Polynomial([0.0, K / delta])),
        (mu + delta, lam - delta, Polynomial([K])),
        (lam - delta, lam, Polynomial([K, -K / delta])),
    ]


def _shift(poly: Polynomial, offset: float) -> Polynomial:
    """Re-express a local polynomial relative to a point ``offset`` further right."""
    return poly(Polynomial([offset, 1.0])) if offset else poly


def _integrate(pieces) -> float:
    total = 0.0
    for lo, hi, poly in pieces:
        if hi > lo:
            total += poly.integ()(hi - lo)
    return float(total)


@dataclass(frozen=True)
class PhiFamily:
    """q trimmed-Spearman coordinate functions.

    ``mu``, ``lam`` and ``delta`` hold the trimming interval and ramp width of
    each coordinate; ``K``, ``m`` and ``c`` are derived in closed form.
    """

    mu: tuple[float, ...]
    lam: tuple[float, ...]
    delta: tuple[float, ...]
    K: tuple[float, ...] = field(init=False)
    m: tuple[float, ...] = field(init=False)
    c: tuple[float, ...] = field(init=False)

    def __post_init__(self):
        if not (len(self.mu) == len(self.lam) == len(self.delta)) or not self.mu:
            raise ShapeError("mu, lam and delta must have the same positive length")
        K, m, c = [], [], []
        for mu, lam, delta in zip(self.mu, self.lam, self.delta):
            if not 0.0 < mu < lam < 1.0:
                raise DomainError(f"trimming interval [{mu}, {lam}] must lie in (0, 1)")
            if not 0.0 < delta < (lam - mu) / 2.0:
                raise DomainError(f"ramp width {delta} must lie in (0, {(lam - mu) / 2})")
            k_ = 1.0 / (lam - mu - delta)
            pieces = _trapezoid_pieces(mu, lam, delta, k_)
            m_ = _integrate([(lo, hi, Polynomial([lo, 1.0]) * p) for lo, hi, p in pieces])
            second = _integrate(
                [(lo, hi, (Polynomial([lo - m_, 1.0]) * p) ** 2) for lo, hi, p in pieces]
            )
            K.append(k_)
            m.append(m_)
            c.append(second ** -0.5)
        object.__setattr__(self, "K", tuple(K))
        object.__setattr__(self, "m", tuple(m))
        object.__setattr__(self, "c", tuple(c))

    @property
    def q(self) -> int:
        return len(self.mu)

    @property
    def tau_min(self) -> float:
        return min(self.mu)

    @property
    def tau_max(self) -> float:
        return max(self.lam)

    def phi_pieces(self, k: int):
        """Pieces of ``phi_k`` on its support, each local to its left end."""
        mu, lam, delta = self.mu[k], self.lam[k], self.delta[k]
        return [
            (lo, hi, Polynomial([lo - self.m[k], 1.0]) * p * self.c[k])
            for lo, hi, p in _trapezoid_pieces(mu, lam, delta, self.K[k])
        ]

    def sigma(self, k: int, u) -> np.ndarray:
        u = np.asarray(u, dtype=float)
        mu, lam, delta = self.mu[k], self.lam[k], self.delta[k]
        f = np.clip(np.minimum((u - mu) / delta, (lam - u) / delta), 0.0, 1.0)
        return self.K[k] * f

    def __call__(self, u) -> np.ndarray:
        """All coordinates at once: returns ``(len(u), q)``."""
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return np.column_stack([eval_phi(self, k, u) for k in range(self.q)])

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "mu": list(self.mu),
            "lambda": list(self.lam),
            "delta": list(self.delta),
            "K": list(self.K),
            "m": list(self.m),
            "c": list(self.c),
        }


def build_trimmed_spearman(
    q: int = 1,
    tau_min: float = TAU_MIN,
    tau_max: float = TAU_MAX,
    delta_fraction: float = DELTA_FRACTION,
) -> PhiFamily:
    """Partition ``[tau_min, tau_max]`` into q equal cells, one trapezoid each.

    The ramp width of each cell is ``delta_fraction`` times its length.
    """
    if q < 1:
        raise DomainError(f"q must be >= 1, got {q}")
    if not 0.0 < tau_min < tau_max < 1.0:
        raise DomainError(f"need 0 < tau_min < tau_max < 1, got {tau_min}, {tau_max}")
    if not 0.0 < delta_fraction < 0.5:
        raise DomainError(f"delta fraction must lie in (0, 0.5), got {delta_fraction}")
    edges = np.linspace(tau_min, tau_max, q + 1)
    mu = tuple(float(e) for e in edges[:-1])
    lam = tuple(float(e) for e in edges[1:])
    delta = tuple(delta_fraction * (b - a) for a, b in zip(mu, lam))
    return PhiFamily(mu, lam, delta)


def eval_phi(family: PhiFamily, k: int, u) -> np.ndarray:
    """``phi_k(u)`` for 0-based coordinate index k; zero off the support."""
    if not 0 <= k < family.q:
        raise IndexError(f"coordinate {k} out of range for q={family.q}")
    u = np.asarray(u, dtype=float)
    return family.c[k] * (u - family.m[k]) * family.sigma(k, u)


def sigma_matrix(family: PhiFamily) -> np.ndarray:
    """``Sigma_ks = int_0^1 phi_k phi_s``, by exact piecewise integration."""
    q = family.q
    pieces = [family.phi_pieces(k) for k in range(q)]
    S = np.empty((q, q))
    for a in range(q):
        for b in range(a, q):
            total = 0.0
            for lo1, hi1, p1 in pieces[a]:
                for lo2, hi2, p2 in pieces[b]:
                    lo, hi = max(lo1, lo2), min(hi1, hi2)
                    if hi > lo:
                        prod = _shift(p1, lo - lo1) * _shift(p2, lo - lo2)
                        total += prod.integ()(hi - lo)
            S[a, b] = S[b, a] = total
    return S


def rho_hat(U1, U2, family: PhiFamily) -> np.ndarray:
    """Empirical generalized correlation ``(1/n) sum_i phi(U1_i) phi(U2_i)'``."""
    U1 = np.asarray(U1, dtype=float).reshape(-1)
    U2 = np.asarray(U2, dtype=float).reshape(-1)
    if len(U1) != len(U2):
        raise ShapeError(f"residual lengths differ: {len(U1)} vs {len(U2)}")
    if len(U1) == 0:
        raise ShapeError("residuals are empty")
    return family(U1).T @ family(U2) / len(U1)


@dataclass(frozen=True)
class TestResult:
    """Outcome of one conditional independence test."""

    __test__ = False  # not a pytest class

    method: str
    statistic: float
    n_t_n: float
    df: int
    p_value: float
    reject: bool
    alpha: float
    rho: np.ndarray
    sigma: np.ndarray
    q: int | None = None
    seed: int | None = None
    n: int | None = None
    config: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "statistic": float(self.statistic),
            "n_t_n": float(self.n_t_n),
            "df": int(self.df),
            "p_value": float(self.p_value),
            "reject": bool(self.reject),
            "alpha": float(self.alpha),
            "q": self.q,
            "seed": self.seed,
            "n": self.n,
            "rho": [float(v) for v in np.ravel(self.rho)],
            "sigma": [float(v) for v in np.ravel(self.sigma)],
            "config": self.config,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def inverse_sqrt(sigma) -> np.ndarray:
    """Symmetric inverse square root; raises on eigenvalues below the floor."""
    sigma = np.asarray(sigma, dtype=float)
    if sigma.ndim != 2 or sigma.shape[0] != sigma.shape[1]:
        raise ShapeError("sigma must be square")
    if not np.allclose(sigma, sigma.T, atol=1e-12):
        raise DegeneracyError("sigma is not symmetric")
    vals, vecs = np.linalg.eigh(sigma)
    if vals.min() < EIGEN_FLOOR:
        raise DegeneracyError(
            f"sigma is not positive definite (smallest eigenvalue {vals.min():.3g}); "
            "the coordinate functions are linearly dependent"
        )
    return (vecs / np.sqrt(vals)) @ vecs.T


def chi_square_statistic(rho, sigma, n: int, alpha: float = 0.05, **meta) -> TestResult:
    """``T_n = ||Sigma^{-1/2} rho Sigma^{-1/2}||_F^2`` and its chi-square test.

    ``n T_n`` is referred to the chi-square law with ``q^2`` degrees of
    freedom; the test rejects when it exceeds the ``1 - alpha`` quantile.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    rho = np.atleast_2d(np.asarray(rho, dtype=float))
    S = inverse_sqrt(sigma)
    if rho.shape != S.shape:
        raise ShapeError(f"rho {rho.shape} and sigma {S.shape} differ in shape")
    whitened = S @ rho @ S
    t_n = float(np.sum(whitened**2))
    n_t_n = n * t_n
    df = rho.shape[0] ** 2
    p = float(chi2.sf(n_t_n, df))
    crit = float(chi2.ppf(1.0 - alpha, df))
    return TestResult(
        method=meta.pop("method", "pc"),
        statistic=t_n,
        n_t_n=n_t_n,
        df=df,
        p_value=min(max(p, 0.0), 1.0),
        reject=bool(n_t_n > crit),
        alpha=alpha,
        rho=rho,
        sigma=np.asarray(sigma, dtype=float),
        q=rho.shape[0],
        n=n,
        **meta,
    )


# ---------------------------------------------------------------------------
# end-to-end test


@dataclass(frozen=True)
class PcConfig:
    """Settings of the partial copula test; defaults are the out-of-the-box recipe.

    ``basis_x``/``basis_y`` default to an additive cubic B-spline with 5
    degrees of freedom per coordinate of z. ``m`` defaults to
    ``ceil(sqrt(n))``. ``penalty`` is ``"auto"`` (simulated schedule) or
    ``"none"``.
    """

    q: int = 1
    alpha: float = 0.05
    basis_x: BasisSpec | None = None
    basis_y: BasisSpec | None = None
    tau_min: float = TAU_MIN
    tau_max: float = TAU_MAX
    m: int | None = None
    delta_fraction: float = DELTA_FRACTION
    penalty: str = "auto"
    penalty_c: float = 1.1
    n_sim: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.q < 1:
            raise DomainError(f"q must be >= 1, got {self.q}")
        if not 0.0 < self.alpha < 1.0:
            raise DomainError(f"alpha must lie in (0, 1), got {self.alpha}")
        if self.penalty not in ("auto", "none"):
            raise DomainError(f"penalty must be 'auto' or 'none', got {self.penalty!r}")

    def resolve(self, n: int, d: int) -> "PcConfig":
        """Fill in data-dependent defaults."""
        default = BasisSpec.bspline(5, d=d) if d else BasisSpec.intercept_only()
        return PcConfig(
            q=self.q, alpha=self.alpha,
            basis_x=self.basis_x or default,
            basis_y=self.basis_y or default,
            tau_min=self.tau_min, tau_max=self.tau_max,
            m=self.m or default_grid_size(n),
            delta_fraction=self.delta_fraction,
            penalty=self.penalty, penalty_c=self.penalty_c,
            n_sim=self.n_sim, seed=self.seed,
        )

    def residual_key(self) -> tuple:
        """Settings that determine the residuals (everything except q, alpha, delta)."""
        return (
            self.basis_x, self.basis_y, self.tau_min, self.tau_max, self.m,
            self.penalty, self.penalty_c, self.n_sim, self.seed,
        )

    def to_dict(self) -> dict:
        return {
            "q": self.q,
            "alpha": self.alpha,
            "basis_x": None if self.basis_x is None else self.basis_x.to_dict(),
            "basis_y": None if self.basis_y is None else self.basis_y.to_dict(),
            "tau_min": self.tau_min,
            "tau_max": self.tau_max,
            "m": self.m,
            "delta_fraction": self.delta_fraction,
            "penalty": self.penalty,
            "penalty_c": self.penalty_c,
            "n_sim": self.n_sim,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "PcConfig":
        kw = dict(obj)
        for key in ("basis_x", "basis_y"):
            if kw.get(key) is not None:
                kw[key] = BasisSpec.from_dict(kw[key])
        return cls(**kw)


def _penalty_for(cfg: PcConfig, basis: BasisSpec, Z, grid) -> PenaltySchedule | None:
    if cfg.penalty == "none":
        return None
    W = expand_matrix(basis, Z)
    return select_penalty(W, grid.taus, c=cfg.penalty_c, n_sim=cfg.n_sim, seed=cfg.seed)


def fit_margins(data: Dataset, config: PcConfig):
    """Fit both conditional CDFs on the full sample.

    Returns ``(U1, U2, model_x, model_y, resolved_config)``.
    """
    if not data.transformed:
        data = to_pseudo_obs(data)
    cfg = config.resolve(data.n, data.d)
    grid = equidistant_grid(cfg.tau_min, cfg.tau_max, cfg.m)
    models = []
    schedules: dict = {}
    for stage, basis, response in (
        ("fit x|z", cfg.basis_x, data.x),
        ("fit y|z", cfg.basis_y, data.y),
    ):
        try:
            if basis not in schedules:
                schedules[basis] = _penalty_for(cfg, basis, data.z, grid)
            models.append(fit_conditional_cdf(response, data.z, basis, grid, schedules[basis]))
        except PcitError as err:
            raise StageError(stage, err) from err
    U1, U2 = pit_residuals(models[0], models[1], data)
    return U1, U2, models[0], models[1], cfg


def test_from_residuals(U1, U2, q: int = 1, alpha: float = 0.05,
                        tau_min: float = TAU_MIN, tau_max: float = TAU_MAX,
                        delta_fraction: float = DELTA_FRACTION, **meta) -> TestResult:
    """Generalized-correlation chi-square test on given residuals."""
    family = build_trimmed_spearman(q, tau_min, tau_max, delta_fraction)
    rho = rho_hat(U1, U2, family)
    try:
        return chi_square_statistic(rho, sigma_matrix(family), len(U1), alpha, **meta)
    except PcitError as err:
        raise StageError("chi-square statistic", err) from err


test_from_residuals.__test__ = False


def pc_test(data: Dataset, config: PcConfig | None = None, **overrides) -> TestResult:
    """Partial copula conditional independence test of x and y given z.

    Untransformed data are mapped to pseudo-observations first. Both
    conditional CDFs are fitted on the full sample; no sample splitting.
    """
    config = config or PcConfig()
    if overrides:
        kw = config.to_dict()
        kw.update({k: v for k, v in overrides.items()})
        for key in ("basis_x", "basis_y"):
            if isinstance(kw.get(key), dict):
                kw[key] = BasisSpec.from_dict(kw[key])
        config = PcConfig(**kw)
    U1, U2, _, _, cfg = fit_margins(data, config)
    return test_from_residuals(
        U1, U2, cfg.q, cfg.alpha, cfg.tau_min, cfg.tau_max, cfg.delta_fraction,
        method="pc", seed=cfg.seed, config=cfg.to_dict(),
    )
