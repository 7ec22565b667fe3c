"""Command-line front end: ``simulate``, ``fit``, ``select`` and ``bench``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 no convergence.
Reports are single JSON documents carrying ``schema_version``; they never
contain timings, so output for fixed inputs is byte-identical across runs.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .dataset import SparseDataset, load_csv, save_csv
from .errors import FpcaError, NoModelError
from .initializer import center, estimate_mean, initial_params
from .likelihood import as_batch, make_caches
from .optimizer import FitOptions, FitReport, fit
from .selection import select_model
from .simulation import NOISE_TAGS, SETTINGS, generate, make_setting, run_benchmark
from .splines import build_basis, evaluate_design

SCHEMA_VERSION = 1
EXPORT_GRID = 201

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NO_CONVERGENCE = 0, 1, 2, 3

log = logging.getLogger("fpca_stiefel")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    # argparse exits with status 2 on bad flags; route it to our usage code instead
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _int_list(text: str) -> list[int]:
    try:
        vals = [int(v) for v in text.replace(" ", ",").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _float_list(text: str) -> list[float]:
    try:
        return [float(v) for v in text.replace(" ", ",").split(",") if v]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _clean(obj):
    """JSON-ready copy: arrays to lists, non-finite floats to null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.floating, float)):
        x = float(obj)
        return x if math.isfinite(x) else None
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj


def write_json(doc: dict, path) -> None:
    text = json.dumps(_clean(doc), indent=2, allow_nan=False) + "\n"
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def fit_to_json(report: FitReport, grid_size: int = EXPORT_GRID, mean=None,
                dataset: SparseDataset | None = None) -> dict:
    """Serialize a fit with its eigenfunctions sampled on a uniform grid of [0, 1]."""
    p = report.params
    x = np.linspace(0.0, 1.0, grid_size)
    psi = p.B.values.T @ evaluate_design(build_basis(p.M), x)
    doc = {
        "M": p.M,
        "r": p.r,
        "converged": report.converged,
        "iterations": report.iterations,
        "final_grad_supnorm": report.final_grad_supnorm,
        "neg_loglik": report.neg_loglik,
        "failure_reason": report.failure_reason,
        "eigenvalues": p.eigenvalues,
        "sigma2": p.sigma2,
        "zeta": p.zeta,
        "tau": p.tau,
        "B": p.B.values,
        "grid": x,
        "eigenfunctions": psi,
        "trace": [asdict(t) for t in report.trace],
    }
    if mean is not None:
        doc["mean"] = mean(x)
    if dataset is not None:
        doc["time_rescale"] = list(dataset.time_rescale)
        doc["grid_original"] = dataset.original_times(x)
    return doc


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="fpca-stiefel", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    s = sub.add_parser("simulate", help="draw a sparse dataset from a simulation design")
    s.add_argument("--setting", choices=SETTINGS, default="easy")
    s.add_argument("--n", type=int, default=200)
    s.add_argument("--sigma2", type=float, default=1 / 16)
    s.add_argument("--noise", choices=NOISE_TAGS, default="gaussian")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True, help="CSV path for the data")
    s.add_argument("--truth-out", help="JSON path for the ground truth")

    f = sub.add_parser("fit", help="fit one (M, r) model")
    f.add_argument("--data", required=True)
    f.add_argument("--M", type=int, required=True)
    f.add_argument("--r", type=int, required=True)
    f.add_argument("--tol", type=float, default=FitOptions.tol)
    f.add_argument("--max-iter", type=int, default=FitOptions.max_iter)
    f.add_argument("--out", default="-")

    c = sub.add_parser("select", help="choose (M, r) by approximate leave-one-curve-out CV")
    c.add_argument("--data", required=True)
    c.add_argument("--M-grid", type=_int_list, required=True)
    c.add_argument("--r-grid", type=_int_list, required=True)
    c.add_argument("--fev-kappa", type=_float_list, default=[])
    c.add_argument("--tol", type=float, default=FitOptions.tol)
    c.add_argument("--max-iter", type=int, default=FitOptions.max_iter)
    c.add_argument("--out", default="-")

    b = sub.add_parser("bench", help="seeded multi-replicate simulation benchmark")
    b.add_argument("--setting", choices=SETTINGS, default="easy")
    b.add_argument("--n", type=int, default=200)
    b.add_argument("--sigma2", type=float, default=1 / 16)
    b.add_argument("--noise", choices=NOISE_TAGS, default="gaussian")
    b.add_argument("--replicates", type=int, default=20)
    b.add_argument("--M-grid", type=_int_list, default=[5])
    b.add_argument("--r-grid", type=_int_list, default=[3])
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", default="-")
    return parser


def _options(args) -> FitOptions:
    try:
        return FitOptions(tol=args.tol, max_iter=args.max_iter)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def cmd_simulate(args) -> int:
    if args.n < 1 or not args.sigma2 > 0:
        raise UsageError("--n must be >= 1 and --sigma2 positive")
    spec = make_setting(args.setting, args.sigma2, args.noise)
    data, truth = generate(spec, args.n, args.seed)
    save_csv(data, args.out)
    if args.truth_out:
        write_json({"schema_version": SCHEMA_VERSION, "command": "simulate", **truth.to_json()},
                   args.truth_out)
    return EXIT_OK


def cmd_fit(args) -> int:
    if args.r < 1 or args.r > args.M:
        raise UsageError("need 1 <= r <= M")
    opts = _options(args)
    data = load_csv(args.data)
    mean = estimate_mean(data)
    basis = build_basis(args.M)
    batch = as_batch(make_caches(basis, data.times, center(data, mean)))
    report = fit(batch, args.M, args.r, initial_params(data, basis, args.r, mean=mean), opts)
    doc = {"schema_version": SCHEMA_VERSION, "command": "fit", "n": data.n,
           **fit_to_json(report, mean=mean, dataset=data)}
    write_json(doc, args.out)
    if not report.converged:
        log.error("fit did not converge: %s", report.failure_reason)
        return EXIT_NO_CONVERGENCE
    return EXIT_OK


def cmd_select(args) -> int:
    if min(args.M_grid) < 1 or min(args.r_grid) < 1:
        raise UsageError("grid values must be positive")
    if any(not 0 <= k <= 1 for k in args.fev_kappa):
        raise UsageError("--fev-kappa values must lie in [0, 1]")
    opts = _options(args)
    data = load_csv(args.data)
    mean = estimate_mean(data)
    try:
        result = select_model(data, args.M_grid, args.r_grid, opts, kappas=args.fev_kappa, mean=mean)
    except NoModelError as exc:
        log.error("%s", exc)
        return EXIT_NO_CONVERGENCE
    cells = []
    for cell in result.grid:
        cells.append({
            "M": cell.M, "r": cell.r,
            "converged": bool(cell.report and cell.report.converged),
            "neg_loglik": cell.report.neg_loglik if cell.report else None,
            "cv": cell.cv.to_json() if cell.cv else None,
            "failure": cell.failure,
        })
    doc = {
        "schema_version": SCHEMA_VERSION, "command": "select", "n": data.n,
        "chosen": {"M": result.chosen[0], "r": result.chosen[1]},
        "fev_pruned_r": [{"kappa": k, "r": v} for k, v in result.fev_pruned_r.items()],
        "grid": cells,
        "fit": fit_to_json(result.best.report, mean=mean, dataset=data),
    }
    write_json(doc, args.out)
    return EXIT_OK


def cmd_bench(args) -> int:
    if args.n < 1 or args.replicates < 1:
        raise UsageError("--n and --replicates must be >= 1")
    spec = make_setting(args.setting, args.sigma2, args.noise)
    report = run_benchmark(spec, args.n, args.replicates, args.M_grid, args.r_grid, args.seed)
    doc = report.to_json()
    for rec in doc["records"]:
        rec.pop("seconds", None)
    write_json({"schema_version": SCHEMA_VERSION, "command": "bench", **doc}, args.out)
    return EXIT_OK


COMMANDS = {"simulate": cmd_simulate, "fit": cmd_fit, "select": cmd_select, "bench": cmd_bench}


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        parser.print_usage(sys.stderr)
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FpcaError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run_cli())
