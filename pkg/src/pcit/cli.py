"""Command line interface: ``test``, ``fit-cdf``, ``simulate``, ``benchmark``, ``rerun``.

Every artifact embeds the fully resolved configuration of the run that made
it; ``rerun`` replays that configuration and produces the same bytes.
Diagnostics go to stderr. Exit status is 0 on success, 2 on usage errors and
1 on data or numerical errors.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from .basis import BasisSpec, expand_matrix
from .cdf import TAU_MAX, TAU_MIN, default_grid_size, equidistant_grid, fit_conditional_cdf
from .baselines import MeanRegressionSpec, gcm_test, npn_test
from .dataset import load_csv, to_pseudo_obs
from .errors import PcitError
from .gencorr import DELTA_FRACTION, PcConfig, fit_margins, test_from_residuals
from .qreg import select_penalty
from .simulate import DgpSpec, TestSpec, run_study, sample_dgp

log = logging.getLogger("pcit")

METHODS = ("pc", "gcm", "npn")
PROCESSES = ("H1", "H2", "H3", "H4", "A1", "A2", "A3", "A4", "LOCAL")
NO_CORRECTION = "no multiplicity correction applied"


class UsageError(Exception):
    pass


# -- argument types ----------------------------------------------------------

def _q_values(text: str) -> list[int]:
    out = []
    for part in text.split(","):
        try:
            q = int(part)
        except ValueError:
            raise argparse.ArgumentTypeError(f"q must be an integer, got {part!r}") from None
        if q < 1:
            raise argparse.ArgumentTypeError(f"q must be >= 1, got {q}")
        out.append(q)
    return out


def _alpha(text: str) -> float:
    try:
        a = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"alpha must be a number, got {text!r}") from None
    if not 0.0 < a < 1.0:
        raise argparse.ArgumentTypeError(f"alpha must lie in (0, 1), got {a}")
    return a


def _positive_int(name: str):
    def parse(text: str) -> int:
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer, got {text!r}") from None
        if v < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1, got {v}")
        return v
    return parse


def _nonnegative(name: str):
    def parse(text: str) -> float:
        try:
            v = float(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be a number, got {text!r}") from None
        if not v >= 0.0:
            raise argparse.ArgumentTypeError(f"{name} must be >= 0, got {v}")
        return v
    return parse


def _names(text: str) -> list[str]:
    return [s.strip() for s in text.split(",") if s.strip()]


# -- parser ------------------------------------------------------------------

def _add_output(p):
    p.add_argument("--output", help="artifact path (default: stdout)")


def _add_fit_options(p):
    p.add_argument("--basis", choices=("bspline", "polynomial", "const"), default="bspline",
                   help="basis for the conditional models (default: bspline)")
    p.add_argument("--degree", type=_positive_int("degree"), default=3,
                   help="polynomial degree, or spline degree (default: 3)")
    p.add_argument("--df", type=_positive_int("df"), default=5,
                   help="spline functions per z coordinate (default: 5)")
    p.add_argument("--tau-min", type=float, default=TAU_MIN)
    p.add_argument("--tau-max", type=float, default=TAU_MAX)
    p.add_argument("--m", type=_positive_int("m"), default=None,
                   help="number of quantile levels (default: ceil(sqrt(n)))")
    p.add_argument("--penalty", choices=("auto", "none"), default="auto")
    p.add_argument("--seed", type=int, default=0)


def _add_dgp_options(p):
    p.add_argument("--dgp", choices=PROCESSES, required=True)
    p.add_argument("--d", type=_positive_int("d"), default=1)
    p.add_argument("--n", type=_positive_int("n"), required=True)
    p.add_argument("--beta", type=_nonnegative("beta"), default=0.0)
    p.add_argument("--gamma0-sq", type=_nonnegative("gamma0-sq"), default=0.0)
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="pcit", description=__doc__.splitlines()[0])
    parser.add_argument("--verbose", "-v", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True)

    t = sub.add_parser("test", help="run conditional independence tests on a CSV file")
    t.add_argument("--input", required=True)
    t.add_argument("--x", required=True)
    t.add_argument("--y", required=True)
    t.add_argument("--z", type=_names, default=[], help="comma-separated conditioning columns")
    t.add_argument("--method", type=_names, default=["pc"],
                   help="comma-separated subset of pc, gcm, npn (default: pc)")
    t.add_argument("--q", type=_q_values, nargs="+", default=[[1]],
                   help="one or more q values for pc, e.g. '--q 1 3' or '--q 1,3'")
    t.add_argument("--alpha", type=_alpha, default=0.05)
    t.add_argument("--delta-fraction", type=float, default=DELTA_FRACTION)
    _add_fit_options(t)
    _add_output(t)

    f = sub.add_parser("fit-cdf", help="fit a conditional CDF model of one column given others")
    f.add_argument("--input", required=True)
    f.add_argument("--x", required=True, help="response column")
    f.add_argument("--z", type=_names, default=[], help="comma-separated conditioning columns")
    _add_fit_options(f)
    _add_output(f)

    s = sub.add_parser("simulate", help="draw one dataset from a simulation process")
    _add_dgp_options(s)
    _add_output(s)

    b = sub.add_parser("benchmark", help="replicate a simulation study")
    _add_dgp_options(b)
    b.add_argument("--replicates", type=_positive_int("replicates"), required=True)
    b.add_argument("--tests", type=_names, default=["pc:q=1", "gcm", "npn"],
                   help="comma-separated tests, e.g. 'pc:q=1,pc:q=3:basis=poly2,gcm'")
    b.add_argument("--alpha", type=_alpha, default=0.05)
    b.add_argument("--workers", type=_positive_int("workers"), default=1)
    _add_output(b)

    r = sub.add_parser("rerun", help="replay the configuration embedded in an artifact")
    r.add_argument("--config", required=True, help="JSON or CSV artifact written by this tool")
    r.add_argument("--workers", type=_positive_int("workers"), default=1)
    _add_output(r)
    return parser


# -- configuration -----------------------------------------------------------

def _basis(kind: str, degree: int, df: int, d: int) -> BasisSpec:
    if d == 0 or kind == "const":
        return BasisSpec.intercept_only(d)
    if kind == "polynomial":
        return BasisSpec.polynomial(degree, d=d)
    return BasisSpec.bspline(df, d=d, order=degree + 1)


def _fit_config(args) -> dict:
    return {
        "basis": args.basis, "degree": args.degree, "df": args.df,
        "tau_min": args.tau_min, "tau_max": args.tau_max, "m": args.m,
        "penalty": args.penalty, "seed": args.seed,
    }


def config_from_args(args) -> dict:
    """Translate parsed arguments into the JSON-able run configuration."""
    cmd = args.command
    if cmd == "test":
        methods = list(dict.fromkeys(args.method))
        bad = [m for m in methods if m not in METHODS]
        if bad or not methods:
            raise UsageError(f"--method must name pc, gcm or npn, got {args.method}")
        qs = sorted({q for group in args.q for q in group})
        return {"command": cmd, "input": args.input, "x": args.x, "y": args.y,
                "z": list(args.z), "method": methods, "q": qs, "alpha": args.alpha,
                "delta_fraction": args.delta_fraction, **_fit_config(args)}
    if cmd == "fit-cdf":
        return {"command": cmd, "input": args.input, "x": args.x, "z": list(args.z),
                **_fit_config(args)}
    dgp = {"command": cmd, "dgp": args.dgp, "d": 1 if args.dgp == "LOCAL" else args.d,
           "n": args.n, "beta": args.beta, "gamma0_sq": args.gamma0_sq, "seed": args.seed}
    if cmd == "benchmark":
        try:
            tests = [TestSpec.parse(t).label for t in args.tests]
        except (PcitError, ValueError) as err:
            raise UsageError(f"--tests: {err}") from None
        dgp.update(replicates=args.replicates, tests=tests, alpha=args.alpha)
    return dgp


def _check_fit_config(cfg: dict) -> None:
    if not 0.0 < cfg["tau_min"] < cfg["tau_max"] < 1.0:
        raise UsageError(
            f"need 0 < tau-min < tau-max < 1, got {cfg['tau_min']}, {cfg['tau_max']}"
        )
    if cfg["m"] is not None and cfg["m"] < 2:
        raise UsageError(f"m must be >= 2, got {cfg['m']}")


def _check_paths(cfg: dict, output: str | None) -> None:
    if "input" in cfg and not Path(cfg["input"]).is_file():
        raise UsageError(f"input file not found: {cfg['input']}")
    if output is not None and not Path(output).resolve().parent.is_dir():
        raise UsageError(f"output directory does not exist: {Path(output).parent}")


def read_embedded_config(path: str | Path) -> dict:
    """Configuration stored in a JSON artifact or in the comment line of a CSV artifact."""
    text = Path(path).read_text(encoding="utf-8")
    if text.startswith("#"):
        return json.loads(text.splitlines()[0][1:])
    return json.loads(text)["config"]


# -- commands ----------------------------------------------------------------

def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _pc_config(cfg: dict, n: int, d: int, q: int = 1, alpha: float = 0.05) -> PcConfig:
    basis = _basis(cfg["basis"], cfg["degree"], cfg["df"], d)
    return PcConfig(
        q=q, alpha=alpha, basis_x=basis, basis_y=basis,
        tau_min=cfg["tau_min"], tau_max=cfg["tau_max"],
        m=cfg["m"] or default_grid_size(n),
        delta_fraction=cfg.get("delta_fraction", DELTA_FRACTION),
        penalty=cfg["penalty"], seed=cfg["seed"],
    )


def run_test(cfg: dict) -> str:
    raw = load_csv(cfg["input"], cfg["x"], cfg["y"], cfg["z"])
    data = to_pseudo_obs(raw)
    cfg = {**cfg, "m": cfg["m"] or default_grid_size(data.n), "n": data.n}
    results = []
    if "pc" in cfg["method"]:
        pc_cfg = _pc_config(cfg, data.n, data.d, alpha=cfg["alpha"])
        log.info("fitting conditional CDFs with m=%d levels", pc_cfg.m)
        U1, U2, _, _, pc_cfg = fit_margins(data, pc_cfg)
        for q in cfg["q"]:
            res = test_from_residuals(
                U1, U2, q, cfg["alpha"], pc_cfg.tau_min, pc_cfg.tau_max,
                pc_cfg.delta_fraction, method="pc", seed=cfg["seed"],
                config={**pc_cfg.to_dict(), "q": q},
            )
            results.append(res.to_dict())
    if "gcm" in cfg["method"]:
        basis = _basis(cfg["basis"], cfg["degree"], cfg["df"], data.d)
        results.append(gcm_test(data, MeanRegressionSpec(basis), alpha=cfg["alpha"]).to_dict())
    if "npn" in cfg["method"]:
        results.append(npn_test(data, cfg["alpha"]).to_dict())
    return _dumps({"config": cfg, "multiplicity": NO_CORRECTION, "results": results})


def run_fit_cdf(cfg: dict) -> str:
    raw = load_csv(cfg["input"], cfg["x"], cfg["x"], cfg["z"])
    data = to_pseudo_obs(raw)
    cfg = {**cfg, "m": cfg["m"] or default_grid_size(data.n), "n": data.n}
    basis = _basis(cfg["basis"], cfg["degree"], cfg["df"], data.d)
    grid = equidistant_grid(cfg["tau_min"], cfg["tau_max"], cfg["m"])
    penalty = None
    if cfg["penalty"] == "auto":
        penalty = select_penalty(expand_matrix(basis, data.z), grid.taus, seed=cfg["seed"])
    model = fit_conditional_cdf(data.x, data.z, basis, grid, penalty)
    return _dumps({"config": cfg, "model": model.to_dict()})


def _dgp(cfg: dict) -> DgpSpec:
    return DgpSpec(cfg["dgp"], d=cfg["d"], beta=cfg["beta"], gamma0_sq=cfg["gamma0_sq"])


def run_simulate(cfg: dict) -> str:
    data = sample_dgp(_dgp(cfg), cfg["n"], cfg["seed"])
    data = data.replace(z_names=tuple(f"z{j + 1}" for j in range(data.d)))
    return data.to_csv(comment=json.dumps(cfg, sort_keys=True))


def run_benchmark(cfg: dict, workers: int = 1) -> str:
    report = run_study(_dgp(cfg), cfg["n"], cfg["replicates"], cfg["tests"],
                       alpha=cfg["alpha"], master_seed=cfg["seed"], workers=workers)
    log.info("benchmark finished in %.1f s", report.runtime_seconds)
    out = report.to_dict()
    out["config"] = {**out["config"], **cfg}
    return _dumps(out)


def execute(cfg: dict, workers: int = 1) -> str:
    """Run one resolved configuration and return the artifact text."""
    cmd = cfg.get("command")
    if cmd in ("test", "fit-cdf"):
        _check_fit_config(cfg)
    if cmd == "test":
        return run_test(cfg)
    if cmd == "fit-cdf":
        return run_fit_cdf(cfg)
    if cmd == "simulate":
        return run_simulate(cfg)
    if cmd == "benchmark":
        return run_benchmark(cfg, workers)
    raise UsageError(f"unknown command in configuration: {cmd!r}")


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)  # exits with status 2 on malformed arguments
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s: %(message)s", stream=sys.stderr,
    )
    try:
        if args.command == "rerun":
            if not Path(args.config).is_file():
                raise UsageError(f"config file not found: {args.config}")
            try:
                cfg = read_embedded_config(args.config)
            except (ValueError, KeyError) as err:
                raise UsageError(f"{args.config} holds no embedded configuration: {err}") from None
        else:
            cfg = config_from_args(args)
        _check_paths(cfg, args.output)
    except UsageError as err:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {err}", file=sys.stderr)
        return 2
    try:
        text = execute(cfg, getattr(args, "workers", 1))
    except UsageError as err:
        print(f"{parser.prog}: error: {err}", file=sys.stderr)
        return 2
    except (PcitError, OSError, ValueError) as err:
        print(f"{parser.prog}: error: {err}", file=sys.stderr)
        return 1
    if args.output:
        Path(args.output).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)
    return 0


if __name__ == "__main__":
    sys.exit(main())
