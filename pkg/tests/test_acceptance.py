"""End-to-end acceptance checks; each prints one PASS/FAIL line.

The Monte-Carlo studies run at their full stated scale and take several
minutes in total. All studies use master seed 0.
"""

import json
import time

import numpy as np
from scipy.integrate import quad
from scipy.stats import chi2, kstest, truncnorm

from oracles import lp_vertex_oracle
from pcit.cdf import OracleCdf, equidistant_grid
from pcit.cli import main
from pcit.dataset import Dataset
from pcit.gencorr import (
    build_trimmed_spearman,
    chi_square_statistic,
    eval_phi,
    pc_test,
    rho_hat,
    sigma_matrix,
)
from pcit.qreg import fit_penalized_quantile
from pcit.simulate import DgpSpec, run_study

SEED = 0


def test_oracle_null_calibration(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(SEED)
    n, reps = 1000, 2000
    families = {q: build_trimmed_spearman(q) for q in (1, 3)}
    sigmas = {q: sigma_matrix(f) for q, f in families.items()}
    stats = {1: [], 3: []}
    for _ in range(reps):
        U1, U2 = rng.random(n), rng.random(n)
        for q, fam in families.items():
            stats[q].append(chi_square_statistic(rho_hat(U1, U2, fam), sigmas[q], n).n_t_n)
    ks = {q: kstest(v, chi2(q * q).cdf).statistic for q, v in stats.items()}
    runtime = time.perf_counter() - start
    ok = max(ks.values()) <= 0.05 and runtime < 60
    verdict("oracle null calibration", ok,
            f"KS(q=1)={ks[1]:.4f}, KS(q=3)={ks[3]:.4f} (<= 0.05), runtime {runtime:.1f}s (< 60s)")


def test_level_on_linear_null(verdict):
    tests = ["pc:q=1", "gcm", "npn"]
    report = run_study(DgpSpec("H2", d=3), 500, 300, tests, master_seed=SEED)
    parts, ok = [], True
    for label in tests:
        rate, ks, fails = report.rejection_rate(label), report.ks(label), report.failures[label]
        ok &= 0.02 <= rate <= 0.09 and ks <= 0.10 and fails == 0
        parts.append(f"{label} rate={rate:.3f} KS={ks:.3f} failed={fails}")
    runtime = report.runtime_seconds
    ok &= runtime < 30 * 60
    verdict("end-to-end level on H2", ok,
            "; ".join(parts) + f" (rate in [0.02, 0.09], KS <= 0.10), runtime {runtime:.0f}s")


def test_power_ordering_variance_alternative(verdict):
    tests = ["pc:q=3", "pc:q=1", "gcm"]
    report = run_study(DgpSpec("A4", d=3), 1000, 200, tests, master_seed=SEED)
    r3, r1, rg = (report.rejection_rate(t) for t in tests)
    fails = sum(report.failures.values())
    runtime = report.runtime_seconds
    ok = r3 > r1 > rg and rg <= 0.15 and fails == 0 and runtime < 45 * 60
    verdict("power ordering on A4", ok,
            f"pc(q=3)={r3:.3f} > pc(q=1)={r1:.3f} > gcm={rg:.3f}, gcm <= 0.15, "
            f"failed fits={fails}, runtime {runtime:.0f}s")


def test_local_alternative_superiority(verdict):
    # both tests regress on the same quadratic basis in z
    tests = ["pc:q=1:basis=poly2", "gcm:basis=poly2"]
    alt = run_study(DgpSpec("LOCAL", beta=20.0, gamma0_sq=100.0), 400, 200, tests,
                    master_seed=SEED)
    null = run_study(DgpSpec("LOCAL", beta=20.0, gamma0_sq=0.0), 400, 200, tests,
                     master_seed=SEED)
    pa, ga = (alt.rejection_rate(t) for t in tests)
    p0, g0 = (null.rejection_rate(t) for t in tests)
    runtime = alt.runtime_seconds + null.runtime_seconds
    ok = pa - ga >= 0.15 and p0 <= 0.09 and g0 <= 0.09 and runtime < 20 * 60
    verdict("local alternative superiority", ok,
            f"gamma0^2=100: pc={pa:.3f}, gcm={ga:.3f}, difference {pa - ga:.3f} (>= 0.15); "
            f"gamma0^2=0: pc={p0:.3f}, gcm={g0:.3f} (<= 0.09), runtime {runtime:.0f}s")


def _uniform_location_scale(z):
    lo = 0.1 + 0.3 * z
    return lo, lo + 0.2 + 0.4 * z


def _uniform_cdf(z, t):
    lo, hi = _uniform_location_scale(z)
    return np.clip((t - lo) / (hi - lo), 0.0, 1.0)


def _uniform_quantiles(taus, Z):
    lo, hi = _uniform_location_scale(Z[:, :1])
    return lo + taus[None, :] * (hi - lo)


def _truncnorm(z):
    loc, scale = 0.2 + 0.6 * z, 0.05 + 0.3 * z
    return truncnorm(-loc / scale, (1.0 - loc) / scale, loc=loc, scale=scale)


def _truncnorm_cdf(z, t):
    return _truncnorm(z).cdf(t)


def _truncnorm_quantiles(taus, Z):
    return _truncnorm(Z[:, :1]).ppf(taus[None, :])


def test_interpolation_within_coarseness(verdict):
    zs = np.random.default_rng(SEED).random(20)
    worst_ratio, details = 0.0, []
    for name, cdf, quantiles in (("uniform", _uniform_cdf, _uniform_quantiles),
                                 ("truncated normal", _truncnorm_cdf, _truncnorm_quantiles)):
        for m in (2, 5, 10, 23):
            grid = equidistant_grid(0.01, 0.99, m)
            model = OracleCdf(grid, quantiles)
            err = 0.0
            for z in zs:
                lo, hi = quantiles(np.array([grid.tau_min, grid.tau_max]), np.array([[z]]))[0]
                t = np.linspace(lo, hi, 10_000)
                approx = model.cdf(np.full((len(t), 1), z), t)
                err = max(err, float(np.max(np.abs(cdf(z, t) - approx))))
            worst_ratio = max(worst_ratio, err / grid.kappa)
            details.append(f"{name} m={m}: {err:.2e} vs {grid.kappa:.3f}")
    verdict("interpolation error within coarseness", worst_ratio <= 1.0,
            f"max error/kappa = {worst_ratio:.3f} (<= 1); " + ", ".join(details))


def test_solver_matches_lp_oracle(verdict):
    rng = np.random.default_rng(SEED)
    worst = 0.0
    for i in range(200):
        p = int(rng.integers(1, 4))
        n = int(rng.integers(p, 9))
        lam = (0.0, 0.1, 1.0)[i % 3]
        W = rng.normal(size=(n, p))
        if rng.random() < 0.7:
            W[:, 0] = 1.0
        x = rng.normal(size=n)
        tau = float(rng.uniform(0.05, 0.95))
        fit = fit_penalized_quantile(W, x, tau, lam)
        worst = max(worst, abs(fit.objective - lp_vertex_oracle(W, x, tau, lam)))
    verdict("solver against vertex enumeration", worst <= 1e-6,
            f"max |objective gap| over 200 instances = {worst:.2e} (<= 1e-6)")


def test_phi_normalization(verdict):
    worst = 0.0
    for q in range(1, 6):
        fam = build_trimmed_spearman(q)
        for k in range(q):
            pts = [fam.mu[k], fam.mu[k] + fam.delta[k], fam.lam[k] - fam.delta[k], fam.lam[k]]
            integral = lambda f: sum(quad(f, a, b, epsabs=1e-14, epsrel=1e-13)[0]
                                     for a, b in zip(pts, pts[1:]))
            first = integral(lambda u: eval_phi(fam, k, u))
            second = integral(lambda u: eval_phi(fam, k, u) ** 2)
            worst = max(worst, abs(first), abs(second - 1.0))
        worst = max(worst, float(np.max(np.abs(sigma_matrix(fam) - np.eye(q)))))
    verdict("phi normalization", worst <= 1e-8,
            f"max deviation over q=1..5 (mean, second moment, Sigma vs I) = {worst:.2e} (<= 1e-8)")


def test_monotone_invariance(verdict):
    start = time.perf_counter()
    rng = np.random.default_rng(SEED)
    mismatches = 0
    for _ in range(50):
        z = rng.normal(size=(200, 2))
        x = z[:, 0] + rng.normal(size=200)
        y = z[:, 1] ** 2 + rng.normal(size=200)
        base = pc_test(Dataset(x, y, z), seed=7).p_value
        z2 = z.copy()
        z2[:, 1] = np.exp(z2[:, 1])
        moved = pc_test(Dataset(x**3, y, z2), seed=7).p_value
        mismatches += base != moved
    runtime = time.perf_counter() - start
    ok = mismatches == 0 and runtime < 60
    verdict("monotone invariance", ok,
            f"{mismatches} of 50 p-values changed (0 allowed), runtime {runtime:.1f}s (< 60s)")


def test_cli_determinism(verdict, tmp_path):
    rng = np.random.default_rng(SEED)
    z = rng.random((150, 2))
    Dataset(z[:, 0] + rng.normal(size=150), z[:, 1] + rng.normal(size=150), z,
            z_names=("z1", "z2")).to_csv(tmp_path / "data.csv")
    data = str(tmp_path / "data.csv")
    runs = {
        "test.json": ["test", "--input", data, "--x", "x", "--y", "y", "--z", "z1,z2",
                      "--method", "pc,gcm,npn", "--q", "1", "3", "--seed", "7"],
        "cdf.json": ["fit-cdf", "--input", data, "--x", "y", "--z", "z1,z2"],
        "sim.csv": ["simulate", "--dgp", "A3", "--d", "3", "--n", "100", "--seed", "5"],
        "bench.json": ["benchmark", "--dgp", "H2", "--d", "3", "--n", "100",
                       "--replicates", "16", "--tests", "pc:q=1,gcm,npn", "--seed", "11"],
    }
    same = []
    for name, argv in runs.items():
        first = tmp_path / name
        assert main(argv + ["--output", str(first)]) == 0
        for workers in ("1", "8"):
            again = tmp_path / f"{workers}_{name}"
            assert main(["rerun", "--config", str(first), "--workers", workers,
                         "--output", str(again)]) == 0
            same.append(first.read_bytes() == again.read_bytes())
    direct8 = tmp_path / "bench8.json"
    assert main(runs["bench.json"] + ["--workers", "8", "--output", str(direct8)]) == 0
    same.append(direct8.read_bytes() == (tmp_path / "bench.json").read_bytes())
    report = json.loads((tmp_path / "bench.json").read_text())
    ok = all(same) and len(report["p_values"]["gcm"]) == 16
    verdict("artifact determinism", ok,
            f"{sum(same)} of {len(same)} regenerated artifacts byte-identical "
            "(reruns from embedded config with 1 and 8 workers)")
