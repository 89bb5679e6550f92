"""Reference tests: generalised covariance measure and nonparanormal partial correlation."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import ndtri
from scipy.stats import norm

from .basis import BasisSpec, expand_matrix
from .dataset import Dataset
from .errors import DegeneracyError, DomainError, ShapeError
from .gencorr import TestResult


@dataclass(frozen=True)
class MeanRegressionSpec:
    basis: BasisSpec
    ridge: float = 0.0

    def to_dict(self) -> dict:
        return {"basis": self.basis.to_dict(), "ridge": self.ridge}


def _ls_residuals(W: np.ndarray, target: np.ndarray, ridge: float) -> np.ndarray:
    if ridge > 0:
        p = W.shape[1]
        pen = np.sqrt(ridge) * np.eye(p)
        if p:
            pen[0, 0] = 0.0  # intercept unpenalized
        A = np.vstack([W, pen])
        b = np.concatenate([target, np.zeros(p)])
        coef = np.linalg.lstsq(A, b, rcond=None)[0]
    else:
        coef = np.linalg.lstsq(W, target, rcond=None)[0]
    return target - W @ coef


def gcm_from_residuals(R1, R2, alpha: float = 0.05, **meta) -> TestResult:
    """Normalized covariance of residual products with a two-sided normal p-value."""
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    P = np.asarray(R1, dtype=float) * np.asarray(R2, dtype=float)
    n = len(P)
    mean = P.mean()
    var = np.mean(P**2) - mean**2
    if not var > 0.0:
        raise DegeneracyError("residual products have zero variance")
    T = float(np.sqrt(n) * mean / np.sqrt(var))
    p = float(2.0 * norm.sf(abs(T)))
    return TestResult(
        method="gcm",
        statistic=T,
        n_t_n=T * T,
        df=1,
        p_value=min(p, 1.0),
        reject=bool(p < alpha),
        alpha=alpha,
        rho=np.array([[mean]]),
        sigma=np.array([[var]]),
        n=n,
        **meta,
    )


def gcm_test(
    data: Dataset,
    spec_x: MeanRegressionSpec,
    spec_y: MeanRegressionSpec | None = None,
    alpha: float = 0.05,
    square: bool = False,
) -> TestResult:
    """Generalised covariance measure test from least-squares residuals.

    With ``square=True`` the responses are squared before fitting, which
    targets dependence in conditional variances.
    """
    spec_y = spec_y or spec_x
    x, y = data.x, data.y
    if square:
        x, y = x**2, y**2
    Wx = expand_matrix(spec_x.basis, data.z)
    Wy = expand_matrix(spec_y.basis, data.z)
    if data.n <= max(Wx.shape[1], Wy.shape[1]):
        raise ShapeError(f"need n > p, got n={data.n}")
    R1 = _ls_residuals(Wx, x, spec_x.ridge)
    R2 = _ls_residuals(Wy, y, spec_y.ridge)
    config = {"spec_x": spec_x.to_dict(), "spec_y": spec_y.to_dict(), "square": square}
    return gcm_from_residuals(R1, R2, alpha, config=config)


def partial_correlation(x, y, Z) -> float:
    """Correlation of the residuals of x and y after regressing both on [1, Z]."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(x)
    W = np.hstack([np.ones((n, 1)), np.asarray(Z, dtype=float).reshape(n, -1)])
    if np.linalg.matrix_rank(W) < W.shape[1]:
        raise DegeneracyError("conditioning design is singular")
    rx = _ls_residuals(W, x, 0.0)
    ry = _ls_residuals(W, y, 0.0)
    denom = np.sqrt((rx @ rx) * (ry @ ry))
    if denom == 0.0:
        raise DegeneracyError("a residual vector is identically zero")
    return float(np.clip(rx @ ry / denom, -1.0, 1.0))


def npn_test(data: Dataset, alpha: float = 0.05) -> TestResult:
    """Nonparanormal partial-correlation test on pseudo-observations.

    Coordinates are mapped through the standard normal quantile function, the
    partial correlation r of x and y given z is Fisher transformed and
    ``sqrt(n - d - 3) * atanh(r)`` is referred to a standard normal.
    """
    if not 0.0 < alpha < 1.0:
        raise DomainError(f"alpha must lie in (0, 1), got {alpha}")
    if not data.transformed:
        raise DomainError("npn_test expects pseudo-observations")
    n, d = data.n, data.d
    if n <= d + 3:
        raise ShapeError(f"need n > d + 3, got n={n}, d={d}")
    gx, gy, gz = ndtri(data.x), ndtri(data.y), ndtri(data.z)
    r = partial_correlation(gx, gy, gz)
    zeta = np.arctanh(r) if abs(r) < 1.0 else np.sign(r) * np.inf
    stat = float(np.sqrt(n - d - 3) * zeta)
    p = float(2.0 * norm.sf(abs(stat)))
    return TestResult(
        method="npn",
        statistic=stat,
        n_t_n=stat * stat,
        df=1,
        p_value=min(p, 1.0),
        reject=bool(p < alpha),
        alpha=alpha,
        rho=np.array([[r]]),
        sigma=np.array([[1.0]]),
        n=n,
        config={},
    )
