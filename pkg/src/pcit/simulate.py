"""Data-generating processes and the Monte-Carlo study harness.

Processes H1-H4 satisfy conditional independence; A1-A4 let the second
response depend on x through ``f_2(z, x)`` and ``g_2(z, x)``. ``LOCAL`` is the
shrinking alternative with a shared Gaussian component of variance
``gamma0_sq / sqrt(n)``.

Replicate r of a study with master seed s draws everything from
``numpy.random.default_rng([s, r])``, so results do not depend on the order or
process in which replicates run.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .baselines import MeanRegressionSpec, gcm_test, npn_test
from .basis import BasisSpec
from .dataset import Dataset, to_pseudo_obs
from .errors import DomainError, PcitError
from .gencorr import PcConfig, fit_margins, test_from_residuals

log = logging.getLogger(__name__)

PROCESSES = ("H1", "H2", "H3", "H4", "A1", "A2", "A3", "A4", "LOCAL")


# -- error distributions -----------------------------------------------------

def gumbel(rng: np.random.Generator, size) -> np.ndarray:
    """Gumbel(0, 1) by inversion."""
    return -np.log(-np.log(rng.random(size)))


def asymmetric_laplace(rng: np.random.Generator, size, kappa: float = 0.8) -> np.ndarray:
    """Asymmetric Laplace with location 0, scale 1 and asymmetry ``kappa``.

    Generated as ``E1 / kappa - kappa * E2`` for standard exponentials; the
    density is ``exp(-kappa u)`` for u > 0 and ``exp(u / kappa)`` for u < 0,
    both times ``kappa / (1 + kappa^2)``.
    """
    e1 = rng.standard_exponential(size)
    e2 = rng.standard_exponential(size)
    return e1 / kappa - kappa * e2


def asymmetric_laplace_cdf(u, kappa: float = 0.8):
    u = np.asarray(u, dtype=float)
    w = 1.0 / (1.0 + kappa**2)
    return np.where(
        u >= 0.0,
        1.0 - w * np.exp(-kappa * np.maximum(u, 0.0)),
        (1.0 - w) * np.exp(np.minimum(u, 0.0) / kappa),
    )


# -- processes ---------------------------------------------------------------

@dataclass(frozen=True)
class DgpSpec:
    process: str
    d: int = 1
    beta: float = 0.0
    gamma0_sq: float = 0.0
    zero_coefficients: bool = False  # test hook: all drawn coefficients are 0

    def __post_init__(self):
        if self.process not in PROCESSES:
            raise DomainError(f"unknown process {self.process!r}")
        if self.process == "LOCAL":
            object.__setattr__(self, "d", 1)
            if self.beta < 0 or self.gamma0_sq < 0:
                raise DomainError("beta and gamma0_sq must be >= 0")
        elif self.d < 1:
            raise DomainError(f"d must be >= 1, got {self.d}")

    @property
    def family(self) -> int:
        return int(self.process[1]) if self.process != "LOCAL" else 0

    @property
    def alternative(self) -> bool:
        return self.process.startswith("A")

    def to_dict(self) -> dict:
        out = {"process": self.process, "d": self.d}
        if self.process == "LOCAL":
            out.update(beta=self.beta, gamma0_sq=self.gamma0_sq)
        if self.zero_coefficients:
            out["zero_coefficients"] = True
        return out

    @classmethod
    def from_dict(cls, obj: dict) -> "DgpSpec":
        return cls(**obj)


def draw_coefficients(spec: DgpSpec, rng: np.random.Generator, size) -> np.ndarray:
    """Coefficients: N(0, 1) under H, +-1 under A1-A3, +-5 under A4."""
    if spec.zero_coefficients:
        return np.zeros(size)
    if not spec.alternative:
        return rng.standard_normal(size)
    magnitude = 5.0 if spec.family == 4 else 1.0
    return magnitude * rng.choice([-1.0, 1.0], size=size)


def _linear(c, W):
    return W @ c


def _quadratic(c1, c2, W):
    return W @ c1 + (W**2) @ c2


def _response(spec, rng, W, eps):
    """One response ``f(W) + g(W) eps`` with freshly drawn coefficients."""
    k = W.shape[1]
    fam = spec.family
    if fam == 1:
        b1, b2, a1, a2 = (draw_coefficients(spec, rng, k) for _ in range(4))
        return _quadratic(b1, b2, W) + np.exp(-np.abs(_quadratic(a1, a2, W))) * eps
    if fam == 2:
        return _linear(draw_coefficients(spec, rng, k), W) + eps
    b1, b2 = draw_coefficients(spec, rng, k), draw_coefficients(spec, rng, k)
    if fam == 3:
        return _quadratic(b1, b2, W) + eps
    return _quadratic(b1, b2, W) * eps


def sample_local_alternative(beta: float, gamma0_sq: float, n: int, seed) -> Dataset:
    """``X = (beta Z^2 + 1) e1 + gamma W``, ``Y = (beta Z^2 + 1) e2 + gamma W``."""
    if beta < 0 or gamma0_sq < 0:
        raise DomainError("beta and gamma0_sq must be >= 0")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    Z = rng.random(n)
    W = rng.standard_normal(n)
    e1 = rng.standard_normal(n)
    e2 = rng.standard_normal(n)
    gamma = np.sqrt(gamma0_sq / np.sqrt(n))
    scale = beta * Z**2 + 1.0
    return Dataset(x=scale * e1 + gamma * W, y=scale * e2 + gamma * W, z=Z.reshape(-1, 1))


def sample_dgp(spec: DgpSpec, n: int, seed) -> Dataset:
    """Draw coefficients, then n raw observations of the process."""
    if n < 1:
        raise DomainError(f"n must be >= 1, got {n}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    if spec.process == "LOCAL":
        return sample_local_alternative(spec.beta, spec.gamma0_sq, n, rng)
    Z = rng.uniform(-1.0, 1.0, size=(n, spec.d))
    if spec.family == 1:
        e1 = asymmetric_laplace(rng, n)
        e2 = gumbel(rng, n)
    else:
        e1 = rng.standard_normal(n)
        e2 = rng.standard_normal(n)
    X = _response(spec, rng, Z, e1)
    W2 = np.column_stack([Z, X]) if spec.alternative else Z
    Y = _response(spec, rng, W2, e2)
    return Dataset(x=X, y=Y, z=Z)


# -- study harness -----------------------------------------------------------

def make_basis(name: str | None, d: int) -> BasisSpec | None:
    """Resolve a short basis name: ``bspline5``, ``poly2``, ``const``; None keeps the default."""
    if name is None:
        return None
    if d == 0 or name == "const":
        return BasisSpec.intercept_only(d)
    if name.startswith("bspline"):
        return BasisSpec.bspline(int(name[7:] or 5), d=d)
    if name.startswith("poly"):
        return BasisSpec.polynomial(int(name[4:] or 1), d=d)
    raise DomainError(f"unknown basis name {name!r}")


@dataclass(frozen=True)
class TestSpec:
    """One test inside a study: ``pc`` (with q), ``gcm`` or ``npn``."""

    __test__ = False

    method: str
    q: int = 1
    basis: str | None = None
    square: bool = False
    penalty: str = "auto"

    def __post_init__(self):
        if self.method not in ("pc", "gcm", "npn"):
            raise DomainError(f"unknown test method {self.method!r}")
        if self.q < 1:
            raise DomainError(f"q must be >= 1, got {self.q}")

    @property
    def label(self) -> str:
        parts = [self.method]
        if self.method == "pc":
            parts.append(f"q={self.q}")
        if self.basis:
            parts.append(f"basis={self.basis}")
        if self.square:
            parts.append("square")
        if self.method == "pc" and self.penalty != "auto":
            parts.append(f"penalty={self.penalty}")
        return ":".join(parts)

    @classmethod
    def parse(cls, text: str) -> "TestSpec":
        """Parse ``pc:q=3:basis=poly2``, ``gcm:square``, ``npn``."""
        method, *opts = text.strip().split(":")
        kw: dict = {}
        for opt in opts:
            key, _, value = opt.partition("=")
            if key == "q":
                kw["q"] = int(value)
            elif key == "basis":
                kw["basis"] = value
            elif key == "square":
                kw["square"] = True
            elif key == "penalty":
                kw["penalty"] = value
            else:
                raise DomainError(f"unknown test option {key!r} in {text!r}")
        return cls(method=method, **kw)

    def to_dict(self) -> dict:
        return {"method": self.method, "q": self.q, "basis": self.basis,
                "square": self.square, "penalty": self.penalty}


def replicate_rng(master_seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([master_seed, index])


def replicate_subseed(master_seed: int, index: int) -> int:
    """Integer seed for solver-side randomness of one replicate."""
    return int(np.random.SeedSequence([master_seed, index, 1]).generate_state(1)[0])


def run_tests(data: Dataset, tests, alpha: float, seed: int) -> dict:
    """Run each test on one dataset; p-value per label, None on failure."""
    if not data.transformed:
        data = to_pseudo_obs(data)
    out: dict = {}
    residuals: dict = {}
    for t in tests:
        try:
            basis = make_basis(t.basis, data.d)
            if t.method == "pc":
                cfg = PcConfig(q=t.q, alpha=alpha, basis_x=basis, basis_y=basis,
                               penalty=t.penalty, seed=seed).resolve(data.n, data.d)
                key = cfg.residual_key()
                if key not in residuals:
                    U1, U2, *_ = fit_margins(data, cfg)
                    residuals[key] = (U1, U2)
                U1, U2 = residuals[key]
                res = test_from_residuals(U1, U2, t.q, alpha, cfg.tau_min, cfg.tau_max,
                                          cfg.delta_fraction)
            elif t.method == "gcm":
                basis = basis or make_basis("bspline5", data.d)
                res = gcm_test(data, MeanRegressionSpec(basis), alpha=alpha, square=t.square)
            else:
                res = npn_test(data, alpha)
            out[t.label] = res.p_value
        except (PcitError, np.linalg.LinAlgError, FloatingPointError) as err:
            log.warning("test %s failed: %s", t.label, err)
            out[t.label] = None
    return out


def _replicate(args) -> dict:
    dgp, n, tests, alpha, master_seed, index = args
    data = sample_dgp(dgp, n, replicate_rng(master_seed, index))
    return run_tests(data, tests, alpha, replicate_subseed(master_seed, index))


def ks_uniform(pvalues) -> float:
    """``sup_t |F_n(t) - t|`` for the empirical CDF of the p-values."""
    p = np.sort(np.asarray(pvalues, dtype=float))
    n = len(p)
    if n == 0:
        return float("nan")
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - p), np.max(p - (i - 1) / n)))


@dataclass
class SimReport:
    dgp: DgpSpec
    n: int
    replicates: int
    alpha: float
    master_seed: int
    tests: list
    p_values: dict
    runtime_seconds: float = field(default=0.0, compare=False)

    @property
    def failures(self) -> dict:
        return {k: sum(v is None for v in vals) for k, vals in self.p_values.items()}

    def valid(self, label: str) -> np.ndarray:
        return np.array([v for v in self.p_values[label] if v is not None], dtype=float)

    def ks(self, label: str) -> float:
        return ks_uniform(self.valid(label))

    def rejection_rate(self, label: str) -> float:
        p = self.valid(label)
        return float(np.mean(p < self.alpha)) if len(p) else float("nan")

    def summary(self) -> dict:
        return {
            label: {
                "ks": self.ks(label),
                "rejection_rate": self.rejection_rate(label),
                "mean_p_value": float(np.mean(self.valid(label))) if len(self.valid(label)) else None,
                "failures": self.failures[label],
            }
            for label in self.p_values
        }

    def to_dict(self) -> dict:
        return {
            "config": {
                "dgp": self.dgp.to_dict(),
                "n": self.n,
                "replicates": self.replicates,
                "alpha": self.alpha,
                "seed": self.master_seed,
                "tests": [t.label for t in self.tests],
            },
            "summary": self.summary(),
            "p_values": self.p_values,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_long_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["replicate", "test", "p_value"])
        for label, vals in self.p_values.items():
            for r, v in enumerate(vals):
                w.writerow([r, label, "" if v is None else repr(float(v))])
        return buf.getvalue()


def run_study(
    dgp: DgpSpec,
    n: int,
    replicates: int,
    tests,
    alpha: float = 0.05,
    master_seed: int = 0,
    workers: int = 1,
) -> SimReport:
    """Simulate ``replicates`` datasets and collect p-values for every test."""
    if replicates < 1:
        raise DomainError(f"replicates must be >= 1, got {replicates}")
    tests = [TestSpec.parse(t) if isinstance(t, str) else t for t in tests]
    jobs = [(dgp, n, tests, alpha, master_seed, r) for r in range(replicates)]
    start = time.perf_counter()
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_replicate, jobs, chunksize=max(1, replicates // (4 * workers))))
    else:
        results = [_replicate(job) for job in jobs]
    p_values = {t.label: [res[t.label] for res in results] for t in tests}
    return SimReport(
        dgp=dgp, n=n, replicates=replicates, alpha=alpha, master_seed=master_seed,
        tests=tests, p_values=p_values, runtime_seconds=time.perf_counter() - start,
    )
