"""Additive feature expansions h(z) for the linear quantile models.

A :class:`BasisSpec` is either a single-coordinate expansion (``polynomial``
or ``bspline``) or an ``additive`` stack of them, one per coordinate of z.
An intercept column of ones is prepended when ``includes_intercept``; the
intercept is never penalized downstream.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from .errors import DomainError, ShapeError

KINDS = ("polynomial", "bspline", "additive")


def uniform_knots(df: int, order: int = 4) -> tuple[float, ...]:
    """Clamped knot vector on [0, 1] with equally spaced interior knots."""
    n_interior = df - order
    if n_interior < 0:
        raise DomainError(f"df={df} is smaller than the spline order {order}")
    interior = [(i + 1) / (n_interior + 1) for i in range(n_interior)]
    return tuple([0.0] * order + interior + [1.0] * order)


@dataclass(frozen=True)
class BasisSpec:
    kind: str
    degree: int | None = None
    df: int | None = None
    order: int = 4
    knots: tuple[float, ...] | None = None
    components: tuple["BasisSpec", ...] = field(default=())
    includes_intercept: bool = True

    def __post_init__(self):
        if self.kind not in KINDS:
            raise DomainError(f"unknown basis kind {self.kind!r}")
        if self.kind == "polynomial":
            if self.degree is None or self.degree < 0:
                raise DomainError("polynomial basis needs degree >= 0")
        elif self.kind == "bspline":
            if self.df is None or self.order < 1:
                raise DomainError("bspline basis needs df and order >= 1")
            knots = self.knots if self.knots is not None else uniform_knots(self.df, self.order)
            knots = tuple(float(k) for k in knots)
            if len(knots) != self.df + self.order:
                raise DomainError(
                    f"knot vector of length {len(knots)} does not give df={self.df}"
                )
            if any(b < a for a, b in zip(knots, knots[1:])):
                raise DomainError("knot vector must be nondecreasing")
            if knots[0] != 0.0 or knots[-1] != 1.0:
                raise DomainError("boundary knots must be 0 and 1")
            object.__setattr__(self, "knots", knots)
        else:
            for c in self.components:
                if c.kind == "additive":
                    raise DomainError("additive components must be single-coordinate")
        # a single component may be empty (degree 0), the full expansion not
        if self.kind == "additive" and self.p < 1:
            raise DomainError("basis has no columns")

    # constructors -------------------------------------------------------

    @classmethod
    def polynomial(cls, degree: int, d: int = 1, intercept: bool = True) -> "BasisSpec":
        comp = cls("polynomial", degree=degree, includes_intercept=False)
        return cls("additive", components=(comp,) * d, includes_intercept=intercept)

    @classmethod
    def bspline(cls, df: int = 5, d: int = 1, order: int = 4,
                intercept: bool = True) -> "BasisSpec":
        comp = cls("bspline", df=df, order=order, includes_intercept=False)
        return cls("additive", components=(comp,) * d, includes_intercept=intercept)

    @classmethod
    def intercept_only(cls, d: int = 0) -> "BasisSpec":
        """Constant model; with d > 0 it still expects d covariates and ignores them."""
        if d:
            return cls.polynomial(0, d=d)
        return cls("additive", components=())

    # shape bookkeeping --------------------------------------------------

    @property
    def d(self) -> int:
        return len(self.components) if self.kind == "additive" else 1

    @property
    def width(self) -> int:
        """Number of non-intercept columns."""
        if self.kind == "polynomial":
            return self.degree
        if self.kind == "bspline":
            return self.df
        return sum(c.width for c in self.components)

    @property
    def p(self) -> int:
        return self.width + int(self.includes_intercept)

    # serialization ------------------------------------------------------

    def to_dict(self) -> dict:
        out: dict = {"kind": self.kind, "intercept": self.includes_intercept}
        if self.kind == "polynomial":
            out["degree"] = self.degree
        elif self.kind == "bspline":
            out.update(df=self.df, order=self.order, knots=list(self.knots))
        else:
            out["components"] = [c.to_dict() for c in self.components]
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "BasisSpec":
        kind = obj["kind"]
        intercept = bool(obj.get("intercept", True))
        if kind == "polynomial":
            return cls(kind, degree=int(obj["degree"]), includes_intercept=intercept)
        if kind == "bspline":
            knots = obj.get("knots")
            return cls(
                kind,
                df=int(obj["df"]),
                order=int(obj.get("order", 4)),
                knots=tuple(knots) if knots is not None else None,
                includes_intercept=intercept,
            )
        comps = tuple(cls.from_dict(c) for c in obj.get("components", ()))
        return cls(kind, components=comps, includes_intercept=intercept)


def _expand_column(spec: BasisSpec, t: np.ndarray) -> np.ndarray:
    if spec.kind == "polynomial":
        return t[:, None] ** np.arange(1, spec.degree + 1)
    k = spec.order - 1
    t = np.clip(t, 0.0, 1.0)
    return BSpline.design_matrix(t, np.asarray(spec.knots), k).toarray()


def expand_matrix(spec: BasisSpec, z) -> np.ndarray:
    """Evaluate h at every row of an ``n x d`` matrix; returns ``n x p``."""
    z = np.asarray(z, dtype=float)
    if z.ndim == 1:
        z = z.reshape(-1, 1) if spec.d == 1 else z.reshape(1, -1)
    n = z.shape[0]
    if z.shape[1] != spec.d:
        raise ShapeError(f"basis expects d={spec.d}, got {z.shape[1]} columns")
    if np.any(z < 0.0) or np.any(z > 1.0):
        raise DomainError("basis inputs must lie in [0, 1]")
    blocks = [np.ones((n, 1))] if spec.includes_intercept else []
    comps = spec.components if spec.kind == "additive" else (spec,)
    for j, comp in enumerate(comps):
        blocks.append(_expand_column(comp, z[:, j]))
    if not blocks:
        return np.empty((n, 0))
    return np.hstack(blocks)


def expand(spec: BasisSpec, z) -> np.ndarray:
    """Evaluate h at a single point z in [0, 1]^d; returns a p-vector."""
    z = np.atleast_1d(np.asarray(z, dtype=float))
    if z.ndim != 1 or len(z) != spec.d:
        raise ShapeError(f"basis expects a {spec.d}-vector, got shape {z.shape}")
    return expand_matrix(spec, z.reshape(1, -1))[0]
