"""Conditional distribution functions from a grid of quantile regressions.

For each z the fitted quantiles ``q_1(z), ..., q_m(z)`` at levels
``tau_1 < ... < tau_m`` are sorted, clamped to [0, 1] and separated, and the
CDF is the piecewise-linear interpolant through ``(0, 0)``,
``(q_k(z), tau_k)`` and ``(1, 1)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .basis import BasisSpec, expand_matrix
from .errors import ConvergenceError, DomainError, ShapeError
from .qreg import PenaltySchedule, QuantileFit, fit_penalized_quantile

MIN_SEPARATION = 1e-9
TAU_MIN = 0.01
TAU_MAX = 0.99


@dataclass(frozen=True)
class QuantileGrid:
    tau_min: float
    tau_max: float
    m: int

    def __post_init__(self):
        if not (0.0 < self.tau_min < self.tau_max < 1.0):
            raise DomainError(
                f"need 0 < tau_min < tau_max < 1, got {self.tau_min}, {self.tau_max}"
            )
        if self.m < 2:
            raise DomainError(f"grid needs m >= 2 points, got {self.m}")

    @property
    def taus(self) -> np.ndarray:
        return np.linspace(self.tau_min, self.tau_max, self.m)

    @property
    def kappa(self) -> float:
        """Coarseness: the largest gap between consecutive levels."""
        return (self.tau_max - self.tau_min) / (self.m - 1)

    @property
    def levels(self) -> np.ndarray:
        """Levels with the fixed boundary levels 0 and 1 attached."""
        return np.concatenate([[0.0], self.taus, [1.0]])

    def to_dict(self) -> dict:
        return {"tau_min": self.tau_min, "tau_max": self.tau_max, "m": self.m}


def equidistant_grid(tau_min: float = TAU_MIN, tau_max: float = TAU_MAX,
                     m: int = 2) -> QuantileGrid:
    return QuantileGrid(float(tau_min), float(tau_max), int(m))


def default_grid_size(n: int) -> int:
    """``ceil(sqrt(n))``, floored at 2."""
    return max(2, math.isqrt(max(n, 1) - 1) + 1)


def rearrange(raw, separation: float = MIN_SEPARATION) -> np.ndarray:
    """Monotone rearrangement of predicted quantiles.

    Sorts along the last axis, clamps to [0, 1], then moves values the least
    amount needed so that consecutive knots, including the fixed boundary
    knots 0 and 1, are at least ``separation`` apart. Already sorted inputs
    with such gaps come back unchanged.
    """
    v = np.sort(np.asarray(raw, dtype=float), axis=-1)
    v = np.clip(v, 0.0, 1.0)
    m = v.shape[-1]
    if (m + 1) * separation >= 1.0:
        raise DomainError("too many knots for the requested separation")
    k = np.arange(1, m + 1) * separation
    shape = v.shape[:-1] + (1,)
    # forward: v_k >= max(0, v_j - j sep for j < k) + k sep, the bound from
    # every predecessor including the boundary knot 0
    prior = np.concatenate([np.zeros(shape), (v - k)[..., :-1]], axis=-1)
    v = np.maximum(v, np.maximum.accumulate(prior, axis=-1) + k)
    # backward: the same from every successor including the boundary knot 1
    kr = k[::-1]
    after = np.concatenate([(v + kr)[..., 1:], np.ones(shape)], axis=-1)
    v = np.minimum(v, np.flip(np.minimum.accumulate(np.flip(after, -1), axis=-1), -1) - kr)
    return v


def interpolate_cdf(knots, levels, t) -> np.ndarray:
    """Evaluate piecewise-linear CDFs row by row.

    Parameters
    ----------
    knots : (n, m + 2) nondecreasing abscissae, first column 0, last 1
    levels : (m + 2,) ordinates, ``levels[0] = 0``, ``levels[-1] = 1``
    t : (n,) evaluation points in [0, 1]

    On ``(q_k, q_{k+1}]`` the value is
    ``tau_k + (tau_{k+1} - tau_k) (t - q_k) / (q_{k+1} - q_k)``; at 0 it is 0.
    """
    knots = np.asarray(knots, dtype=float)
    t = np.asarray(t, dtype=float)
    if np.any(t < 0.0) or np.any(t > 1.0):
        raise DomainError("CDF arguments must lie in [0, 1]")
    n, width = knots.shape
    k = np.clip((knots < t[:, None]).sum(axis=1) - 1, 0, width - 2)
    rows = np.arange(n)
    lo, hi = knots[rows, k], knots[rows, k + 1]
    frac = (t - lo) / (hi - lo)
    out = levels[k] + (levels[k + 1] - levels[k]) * frac
    out = np.where(t <= 0.0, 0.0, out)
    out = np.where(t >= 1.0, 1.0, out)
    return np.clip(out, 0.0, 1.0)


def _with_boundaries(q: np.ndarray) -> np.ndarray:
    n = q.shape[0]
    return np.hstack([np.zeros((n, 1)), q, np.ones((n, 1))])


@dataclass(frozen=True)
class ConditionalCdfModel:
    grid: QuantileGrid
    basis: BasisSpec
    fits: tuple[QuantileFit, ...]
    rearrangement: str = "sort"
    penalty: PenaltySchedule | None = None

    def __post_init__(self):
        if len(self.fits) != self.grid.m:
            raise ShapeError(f"{len(self.fits)} fits for a grid of {self.grid.m} levels")

    @property
    def coefficients(self) -> np.ndarray:
        return np.array([f.beta for f in self.fits])

    def raw_quantiles(self, Z) -> np.ndarray:
        """Unclamped predictions, one row per z and one column per level."""
        return expand_matrix(self.basis, Z) @ self.coefficients.T

    def knots(self, Z) -> np.ndarray:
        """Rearranged knots ``(n, m)`` at each row of Z."""
        return rearrange(self.raw_quantiles(Z))

    def cdf(self, Z, t) -> np.ndarray:
        """Vectorized CDF: ``F(t_i | z_i)`` for paired rows."""
        Z = np.asarray(Z, dtype=float)
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return interpolate_cdf(_with_boundaries(self.knots(Z)), self.grid.levels, t)

    def to_dict(self) -> dict:
        return {
            "grid": self.grid.to_dict(),
            "taus": [float(t) for t in self.grid.taus],
            "basis": self.basis.to_dict(),
            "rearrangement": self.rearrangement,
            "penalty": None if self.penalty is None else self.penalty.to_dict(),
            "coefficients": self.coefficients.tolist(),
            "fits": [f.to_dict() for f in self.fits],
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ConditionalCdfModel":
        g = obj["grid"]
        pen = obj.get("penalty")
        return cls(
            grid=QuantileGrid(float(g["tau_min"]), float(g["tau_max"]), int(g["m"])),
            basis=BasisSpec.from_dict(obj["basis"]),
            fits=tuple(QuantileFit.from_dict(f) for f in obj["fits"]),
            rearrangement=obj.get("rearrangement", "sort"),
            penalty=None if pen is None else PenaltySchedule(
                lambda_base=float(pen["lambda_base"]), c=float(pen["c"]),
                n_sim=int(pen.get("n_sim", 0)), seed=pen.get("seed"),
            ),
        )


@dataclass(frozen=True)
class OracleCdf:
    """Interpolated CDF built from a known conditional quantile function.

    ``quantile_fn(taus, Z)`` returns the ``(n, m)`` matrix of true quantiles;
    no clamping or rearrangement is applied. Used to check the interpolation
    error independently of estimation.
    """

    grid: QuantileGrid
    quantile_fn: Callable[[np.ndarray, np.ndarray], np.ndarray]

    def knots(self, Z) -> np.ndarray:
        return np.asarray(self.quantile_fn(self.grid.taus, np.asarray(Z, dtype=float)))

    def cdf(self, Z, t) -> np.ndarray:
        t = np.atleast_1d(np.asarray(t, dtype=float))
        return interpolate_cdf(_with_boundaries(self.knots(Z)), self.grid.levels, t)


def fit_conditional_cdf(
    response,
    Z,
    basis: BasisSpec,
    grid: QuantileGrid,
    penalty: PenaltySchedule | None = None,
) -> ConditionalCdfModel:
    """Fit one quantile regression per grid level.

    Raises
    ------
    ConvergenceError
        From the solver, with the failing level in ``err.tau``.
    """
    response = np.asarray(response, dtype=float).reshape(-1)
    if np.any(response < 0.0) or np.any(response > 1.0):
        raise DomainError("responses must lie in [0, 1]")
    W = expand_matrix(basis, Z)
    if W.shape[0] != len(response):
        raise ShapeError(f"{W.shape[0]} covariate rows for {len(response)} responses")
    fits = []
    for tau in grid.taus:
        lam = 0.0 if penalty is None else penalty.lambda_for(tau)
        try:
            fits.append(
                fit_penalized_quantile(W, response, float(tau), lam, basis.includes_intercept)
            )
        except ConvergenceError as err:
            wrapped = ConvergenceError(f"tau={tau:.6g}: {err}", best=err.best)
            wrapped.tau = float(tau)
            raise wrapped from err
    return ConditionalCdfModel(grid=grid, basis=basis, fits=tuple(fits), penalty=penalty)


def eval_conditional_cdf(model: ConditionalCdfModel, z, t: float) -> float:
    """``F(t | z)`` at a single point."""
    if not 0.0 <= t <= 1.0:
        raise DomainError(f"t must lie in [0, 1], got {t}")
    z = np.atleast_1d(np.asarray(z, dtype=float)).reshape(1, -1)
    return float(model.cdf(z, [t])[0])


def pit_residuals(model_x, model_y, data) -> tuple[np.ndarray, np.ndarray]:
    """Nonparametric residuals ``F_X|Z(x_i | z_i)`` and ``F_Y|Z(y_i | z_i)``."""
    for name, model in (("x", model_x), ("y", model_y)):
        basis = getattr(model, "basis", None)
        if basis is not None and basis.d != data.d:
            raise ShapeError(f"{name}-model expects d={basis.d}, data has d={data.d}")
    return model_x.cdf(data.z, data.x), model_y.cdf(data.z, data.y)
