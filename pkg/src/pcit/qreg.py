"""L1-penalized linear quantile regression.

The fit minimizes ``sum_i L_tau(x_i - W_i' beta) + lambda_tau * ||beta_pen||_1``
where ``L_tau(u) = u (tau - 1{u < 0})`` and the intercept (column 0 when
``intercept=True``) is left unpenalized.

The penalty is folded into the linear program by appending, for every
penalized coefficient j, the pseudo-observations ``(+lambda e_j, 0)`` and
``(-lambda e_j, 0)``; their check losses add up to ``lambda |beta_j|`` for
every tau. The resulting bounded-variable LP is solved by a primal-dual
interior point method of Frisch-Newton type with a Mehrotra corrector. The
duality gap at termination bounds the excess objective of the returned
coefficients.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg

from .basis import BasisSpec, expand, expand_matrix
from .errors import ConvergenceError, DegenerateDesignError, DomainError, ShapeError

MAX_ITER = 10_000
GAP_TOL = 1e-11
ACCEPT_TOL = 1e-7
STEP_SCALE = 0.9995
STALL_LIMIT = 5
STALL_LIMIT_UNACCEPTED = 100


def _check_tau(tau: float) -> None:
    if not 0.0 < tau < 1.0:
        raise DomainError(f"quantile level must lie in (0, 1), got {tau}")


def pinball_loss(u, tau: float):
    """Check function ``u * (tau - 1{u < 0})``; vectorized over ``u``."""
    _check_tau(tau)
    u = np.asarray(u, dtype=float)
    out = u * (tau - (u < 0))
    return float(out) if out.ndim == 0 else out


def penalized_objective(W, x, beta, tau, lambda_tau, intercept=True) -> float:
    resid = np.asarray(x, dtype=float) - np.asarray(W, dtype=float) @ beta
    pen = np.abs(beta[1:] if intercept else beta).sum()
    return float(np.sum(resid * (tau - (resid < 0))) + lambda_tau * pen)


@dataclass(frozen=True)
class QuantileFit:
    tau: float
    beta: np.ndarray
    lambda_: float
    objective: float
    iterations: int = 0
    converged: bool = True
    gap: float = 0.0

    def to_dict(self) -> dict:
        return {
            "tau": self.tau,
            "beta": [float(b) for b in self.beta],
            "lambda": self.lambda_,
            "objective": self.objective,
            "iterations": self.iterations,
            "converged": self.converged,
            "gap": self.gap,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "QuantileFit":
        return cls(
            tau=float(obj["tau"]),
            beta=np.asarray(obj["beta"], dtype=float),
            lambda_=float(obj["lambda"]),
            objective=float(obj["objective"]),
            iterations=int(obj.get("iterations", 0)),
            converged=bool(obj.get("converged", True)),
            gap=float(obj.get("gap", 0.0)),
        )


@dataclass(frozen=True)
class PenaltySchedule:
    """Penalties ``lambda_tau = c * lambda_base * sqrt(tau (1 - tau))``."""

    lambda_base: float
    c: float = 1.1
    taus: tuple[float, ...] = field(default=())
    n_sim: int = 0
    seed: int | None = None

    @classmethod
    def zero(cls) -> "PenaltySchedule":
        return cls(lambda_base=0.0, c=1.0)

    def lambda_for(self, tau: float) -> float:
        _check_tau(tau)
        # 1 - (1 - tau) != tau in floating point; rounding the smaller level
        # makes tau and 1 - tau give bit-identical penalties
        a = round(min(tau, 1.0 - tau), 12)
        return self.c * self.lambda_base * math.sqrt(a * (1.0 - a))

    @property
    def penalties(self) -> np.ndarray:
        return np.array([self.lambda_for(t) for t in self.taus])

    def to_dict(self) -> dict:
        return {
            "c": self.c,
            "lambda_base": self.lambda_base,
            "n_sim": self.n_sim,
            "seed": self.seed,
        }


def select_penalty(
    W,
    taus,
    c: float = 1.1,
    n_sim: int = 1000,
    seed: int = 0,
) -> PenaltySchedule:
    """Simulate the pivotal penalty level for a design matrix.

    ``lambda_base`` is the empirical ``(1 - 1/n)``-quantile over ``n_sim``
    draws of::

        sup_tau || Gamma^{-1} (1/n) sum_i (tau - 1{U_i <= tau}) W_i ||_inf
                / sqrt(tau (1 - tau))

    with ``U_i`` i.i.d. uniform and ``Gamma_kk = mean_i W_ik^2``. The
    supremum runs over ``taus``.
    """
    W = np.asarray(W, dtype=float)
    if W.ndim != 2 or W.shape[1] < 1:
        raise ShapeError("design must be an n x p matrix with p >= 1")
    if n_sim < 100:
        raise DomainError(f"n_sim must be >= 100, got {n_sim}")
    if not np.all(np.isfinite(W)):
        raise DomainError("design contains non-finite entries")
    taus = np.asarray(taus, dtype=float)
    for t in taus:
        _check_tau(t)
    n, p = W.shape
    gamma = np.mean(W**2, axis=0)
    zero = np.flatnonzero(gamma == 0.0)
    if len(zero):
        raise DegenerateDesignError(f"design column {zero[0]} is identically zero", int(zero[0]))

    rng = np.random.default_rng(seed)
    colsum = W.sum(axis=0)
    scale = np.sqrt(taus * (1.0 - taus))
    stats = np.empty(n_sim)
    chunk = max(1, min(n_sim, 4_000_000 // max(1, n * p)))
    for start in range(0, n_sim, chunk):
        stop = min(n_sim, start + chunk)
        U = rng.random((stop - start, n))
        order = np.argsort(U, axis=1)
        Us = np.take_along_axis(U, order, axis=1)
        # cum[s, k] = sum of the k rows of W with the smallest U's
        cum = np.zeros((stop - start, n + 1, p))
        np.cumsum(W[order], axis=1, out=cum[:, 1:, :])
        for s in range(stop - start):
            counts = np.searchsorted(Us[s], taus, side="right")
            sums = taus[:, None] * colsum[None, :] - cum[s, counts, :]
            norms = np.max(np.abs(sums / (n * gamma)), axis=1)
            stats[start + s] = np.max(norms / scale)
    lam = float(np.quantile(stats, 1.0 - 1.0 / n))
    return PenaltySchedule(
        lambda_base=lam, c=c, taus=tuple(float(t) for t in taus), n_sim=n_sim, seed=seed
    )


def _step_bound(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return np.inf
    return float(np.min(-v[neg] / dv[neg]))


def _solve_normal(M: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    try:
        c, low = scipy.linalg.cho_factor(M, check_finite=False)
        return scipy.linalg.cho_solve((c, low), rhs, check_finite=False)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError):
        return np.linalg.lstsq(M, rhs, rcond=None)[0]


def _lp_interior_point(A, c, b, u, x, max_iter, tol, accept):
    """Solve ``min c'x  s.t.  A x = b, 0 <= x <= u`` from a feasible interior x.

    Returns the dual vector y and diagnostics. The dual problem is
    ``max b'y - u'w  s.t.  A'y + z - w = c,  z, w >= 0``.
    """
    N = A.shape[1]
    s = u - x
    y = np.linalg.lstsq(A.T, c, rcond=None)[0]
    r = c - A.T @ y
    r = r + 0.001 * (r == 0)
    z = np.maximum(r, 0.0)
    w = z - r
    gap = c @ x - y @ b + w @ u
    best = (gap, y.copy())
    it = stalled = 0
    limit = STALL_LIMIT_UNACCEPTED
    while it < max_iter and gap > tol(c @ x) and stalled < limit:
        it += 1
        # affine scaling step
        q = 1.0 / (z / x + w / s)
        r = z - w
        AQ = A * q
        M = AQ @ A.T
        dy = _solve_normal(M, AQ @ r)
        dx = q * (A.T @ dy - r)
        ds = -dx
        dz = -z * (dx / x + 1.0)
        dw = -w * (ds / s + 1.0)
        fp = min(STEP_SCALE * min(_step_bound(x, dx), _step_bound(s, ds)), 1.0)
        fd = min(STEP_SCALE * min(_step_bound(w, dw), _step_bound(z, dz)), 1.0)
        if min(fp, fd) < 1.0:
            # centering + second-order correction
            mu = z @ x + w @ s
            g = (z + fd * dz) @ (x + fp * dx) + (w + fd * dw) @ (s + fp * ds)
            mu = mu * (g / mu) ** 3 / (2.0 * N)
            dxdz = dx * dz
            dsdw = ds * dw
            xinv = 1.0 / x
            sinv = 1.0 / s
            xi = mu * (xinv - sinv)
            corr = r - xi + dxdz * xinv - dsdw * sinv
            dy = _solve_normal(M, AQ @ corr)
            dx = q * (A.T @ dy - corr)
            ds = -dx
            dz = mu * xinv - z - xinv * z * dx - dxdz * xinv
            dw = mu * sinv - w - sinv * w * ds - dsdw * sinv
            fp = min(STEP_SCALE * min(_step_bound(x, dx), _step_bound(s, ds)), 1.0)
            fd = min(STEP_SCALE * min(_step_bound(w, dw), _step_bound(z, dz)), 1.0)
        x = x + fp * dx
        s = s + fp * ds
        y = y + fd * dy
        w = w + fd * dw
        z = z + fd * dz
        gap = c @ x - y @ b + w @ u
        if not np.isfinite(gap):
            break
        if gap < best[0]:
            halved = gap < 0.5 * best[0]
            best = (gap, y.copy())
        else:
            halved = False
        # rounding error can stop progress near the optimum; once the gap is
        # acceptable give up after a few iterations without halving it
        stalled = 0 if halved else stalled + 1
        limit = STALL_LIMIT if best[0] <= accept(c @ x) else STALL_LIMIT_UNACCEPTED
    return best[1], it, best[0]


def _independent_columns(W: np.ndarray) -> np.ndarray:
    """Indices of a maximal linearly independent column subset (pivoted QR)."""
    if W.shape[1] == 0:
        return np.arange(0)
    _, R, piv = scipy.linalg.qr(W, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    if diag.size == 0 or diag[0] == 0.0:
        return np.arange(0)
    rank = int(np.sum(diag > diag[0] * max(W.shape) * 1e-12))
    return np.sort(piv[:rank])


def fit_penalized_quantile(
    W,
    x,
    tau: float,
    lambda_tau: float = 0.0,
    intercept: bool = True,
    max_iter: int = MAX_ITER,
) -> QuantileFit:
    """Fit one penalized linear quantile regression.

    Parameters
    ----------
    W : (n, p) design matrix; column 0 is the unpenalized intercept when
        ``intercept`` is true.
    x : (n,) response.
    tau : quantile level in (0, 1).
    lambda_tau : L1 penalty weight, >= 0.

    Raises
    ------
    ConvergenceError
        The interior point iterations stopped with a duality gap above the
        acceptance threshold; ``err.best`` carries the best fit found.
    """
    _check_tau(tau)
    if lambda_tau < 0 or not math.isfinite(lambda_tau):
        raise DomainError(f"penalty must be finite and >= 0, got {lambda_tau}")
    W = np.asarray(W, dtype=float)
    x = np.asarray(x, dtype=float).reshape(-1)
    if W.ndim != 2 or W.shape[0] != len(x):
        raise ShapeError(f"design {W.shape} does not match response of length {len(x)}")
    n, p = W.shape

    penalized = np.ones(p, dtype=bool)
    if intercept and p:
        penalized[0] = False
    if lambda_tau == 0.0:
        penalized[:] = False

    # A coefficient whose penalty exceeds the largest attainable dual
    # correlation is zero at the optimum; drop it exactly.
    bound = max(tau, 1.0 - tau) * np.abs(W).sum(axis=0)
    active = ~(penalized & (lambda_tau >= bound))
    free = active & ~penalized
    if np.any(free):
        # unpenalized columns must be linearly independent for the normal
        # equations; redundant ones are fixed at zero without loss
        idx = np.flatnonzero(free)
        keep = idx[_independent_columns(W[:, idx])]
        free[:] = False
        free[keep] = True
        active = free | (active & penalized)
    cols = np.flatnonzero(active)
    pen_cols = np.flatnonzero(active & penalized)

    beta = np.zeros(p)
    it, gap = 0, 0.0
    if len(cols):
        Wa = W[:, cols]
        k = len(cols)
        pos = np.searchsorted(cols, pen_cols)
        E = np.zeros((k, len(pos)))
        E[pos, np.arange(len(pos))] = 1.0
        A = np.hstack([Wa.T, E, -E])
        cost = np.concatenate([-x, np.zeros(2 * len(pos))])
        upper = np.concatenate([np.ones(n), np.full(2 * len(pos), lambda_tau)])
        start = (1.0 - tau) * upper
        rhs = A @ start
        scale = max(1.0, float(np.sum(np.abs(x))))

        def tol(primal):
            return max(GAP_TOL * (1.0 + abs(primal)), 1e-14 * scale)

        # the check-loss objective equals -(LP value) - (1 - tau) sum(x); the
        # final acceptance test below is relative to it
        offset = (1.0 - tau) * float(np.sum(x))

        def accept(primal):
            return ACCEPT_TOL * (1.0 + abs(primal + offset))

        # iterates may hit the boundary in the last steps; the best gap is kept
        with np.errstate(divide="ignore", over="ignore", invalid="ignore"):
            y, it, gap = _lp_interior_point(A, cost, rhs, upper, start, max_iter, tol, accept)
        beta[cols] = -y

    obj = penalized_objective(W, x, beta, tau, lambda_tau, intercept)
    fit = QuantileFit(
        tau=float(tau), beta=beta, lambda_=float(lambda_tau), objective=obj,
        iterations=it, converged=True, gap=float(gap),
    )
    if not gap <= ACCEPT_TOL * (1.0 + abs(obj)):
        raise ConvergenceError(
            f"quantile fit at tau={tau} stopped with duality gap {gap:.3g}",
            best=QuantileFit(
                tau=float(tau), beta=beta, lambda_=float(lambda_tau), objective=obj,
                iterations=it, converged=False, gap=float(gap),
            ),
        )
    return fit


def predict_quantile(fit: QuantileFit, spec: BasisSpec, z) -> float:
    """``h(z)' beta`` at a single point; no clamping."""
    h = expand(spec, z)
    if len(h) != len(fit.beta):
        raise ShapeError(f"basis has p={len(h)} but fit has {len(fit.beta)} coefficients")
    return float(h @ fit.beta)


def predict_quantiles(fit: QuantileFit, spec: BasisSpec, Z) -> np.ndarray:
    """Vectorized :func:`predict_quantile` over the rows of ``Z``."""
    H = expand_matrix(spec, Z)
    if H.shape[1] != len(fit.beta):
        raise ShapeError(f"basis has p={H.shape[1]} but fit has {len(fit.beta)} coefficients")
    return H @ fit.beta
