"""Command-line surface.

Subcommands: simulate, fit-alce, fit-poet, scores, grid, study, report.
Exit codes: 0 success, 2 usage, 3 input/parse error, 4 numeric failure.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import __version__
from .exceptions import InputError, NumericError
from .io import (
    DatasetSpec,
    format_value,
    load_fit,
    load_matrix,
    sample_covariance,
    save_fit,
    save_matrix_csv,
    save_study_csv,
    write_header,
)
from .kernels import SymMatrix, spectral_norm
from .poet import cross_validate_C, poet_fit
from .scores import bartlett_scores, ols_factors_v1, ols_factors_v2, thompson_scores
from .simulate import (
    StudyOptions,
    generate_truth,
    get_setting,
    sample_factors_and_noise,
)
from .solver import SolveOptions, default_grid, solve_penalized, threshold_grid, unalce_refit
from .metrics import variability_stats


def _load_sigma(path: str, input_kind: str, has_header: bool, delimiter: str):
    """Return (sigma_n, demeaned data or None, n_obs)."""
    loaded = load_matrix(DatasetSpec(path=path, has_header=has_header,
                                     delimiter=delimiter, demean=False))
    if input_kind == "cov":
        if loaded.n != loaded.p:
            raise InputError("covariance input must be square")
        return SymMatrix(loaded.values), None, loaded.n
    xc = loaded.values - loaded.column_means
    return sample_covariance(xc, "unbiased"), xc, loaded.n


def _add_input_flags(sub):
    sub.add_argument("--input", required=True, help="CSV matrix file")
    sub.add_argument("--input-kind", choices=("data", "cov"), default="data",
                     help="observations-by-variables data or a covariance matrix")
    sub.add_argument("--header", action="store_true", help="skip one header row")
    sub.add_argument("--delimiter", default=",")


def _cmd_simulate(args, command):
    setting = get_setting(args.setting)
    rng = np.random.default_rng(args.seed)
    truth = generate_truth(setting, rng)
    factors, noise = sample_factors_and_noise(truth, args.n or setting.n, rng)
    data = factors @ truth.loadings.T + noise
    os.makedirs(args.out, exist_ok=True)
    save_fit(
        os.path.join(args.out, "truth.fit"),
        "truth",
        truth.low_rank,
        truth.sparse,
        {"setting": setting.name, **{k: v for k, v in truth.info.items()
                                     if isinstance(v, (int, float))}},
        command=command,
        seed=args.seed,
        dense_blocks={"loadings": truth.loadings},
    )
    save_matrix_csv(os.path.join(args.out, "data.csv"), data, command, args.seed)
    save_matrix_csv(os.path.join(args.out, "factors.csv"), factors, command, args.seed)
    print(f"setting {setting.name}: wrote truth.fit, data.csv, factors.csv to {args.out}")
    return 0


def _cmd_fit_alce(args, command):
    sigma_n, _, _ = _load_sigma(args.input, args.input_kind, args.header, args.delimiter)
    opts = SolveOptions(max_iter=args.max_iter, tol=args.tol, accel=not args.no_accel)
    fit = solve_penalized(sigma_n, args.psi, args.rho, opts)
    scalars = {
        "psi": fit.psi, "rho": fit.rho, "iterations": fit.iterations,
        "converged": fit.converged,
    }
    save_fit(f"{args.out}.alce.fit", "alce", fit.low_rank, fit.sparse, scalars,
             command, args.seed,
             dense_blocks={"pre_low_rank": fit.pre_low_rank.values,
                           "pre_sparse": fit.pre_sparse.values})
    if fit.rank == 0:
        print(f"rank-0 fit (psi={args.psi:g} removed the whole spectrum); "
              "no unshrunk refit written")
        return 0
    refit = unalce_refit(fit, args.lift)
    save_fit(f"{args.out}.unalce.fit", "unalce", refit.low_rank, refit.sparse,
             {**scalars, "lift": refit.lift}, command, args.seed)
    print(f"rank {fit.rank}, {fit.iterations} iterations "
          f"(converged={fit.converged}); wrote {args.out}.alce.fit and "
          f"{args.out}.unalce.fit")
    return 0


def _cmd_fit_poet(args, command):
    sigma_n, xc, n_obs = _load_sigma(args.input, args.input_kind, args.header,
                                     args.delimiter)
    if args.input_kind == "cov" and args.n_obs is None:
        raise InputError("--n-obs is required when the input is a covariance")
    n_obs = args.n_obs or n_obs
    if args.cv:
        if xc is None:
            raise InputError("--cv needs raw data input, not a covariance")
        c_grid = np.linspace(args.c_min, args.c_max, args.c_count)
        c = cross_validate_C(xc, args.r, c_grid, folds=args.folds, kind=args.kind)
    elif args.C is None:
        raise InputError("provide --C or select it with --cv")
    else:
        c = args.C
    fit = poet_fit(sigma_n, args.r, c, n_obs=n_obs, kind=args.kind)
    save_fit(f"{args.out}.poet.fit", "poet", fit.low_rank, fit.sparse,
             {"r": fit.r, "C": fit.C, "threshold_kind": fit.threshold_kind,
              "n_obs": n_obs},
             command, args.seed)
    print(f"POET r={fit.r} C={fit.C:g} ({fit.threshold_kind}); wrote {args.out}.poet.fit")
    return 0


def _cmd_scores(args, command):
    loaded = load_matrix(DatasetSpec(path=args.data, has_header=args.header,
                                     delimiter=args.delimiter))
    x = loaded.values
    if args.method in ("bartlett", "thompson", "ols2"):
        if args.fit is None:
            raise InputError(f"--fit is required for method {args.method}")
        fit_file = load_fit(args.fit)
        loadings = fit_file.low_rank.basis * np.sqrt(fit_file.low_rank.eigvals)
        source = fit_file.kind.upper()
        if args.method == "bartlett":
            result = bartlett_scores(loadings, fit_file.sparse, x, source=source)
        elif args.method == "thompson":
            result = thompson_scores(loadings, fit_file.sparse, x, source=source)
        else:
            sigma = SymMatrix(fit_file.low_rank.reconstruct()
                              + fit_file.sparse.matrix.values)
            result = ols_factors_v2(sigma, x, fit_file.low_rank.rank, source=source)
    elif args.method == "ols1":
        if args.r is None:
            raise InputError("--r is required for ols1")
        result = ols_factors_v1(x, args.r)
    else:  # pragma: no cover - argparse restricts choices
        raise InputError(f"unknown method {args.method}")
    save_matrix_csv(f"{args.out}_loadings.csv", result.loadings, command, args.seed)
    save_matrix_csv(f"{args.out}_scores.csv", result.scores, command, args.seed)
    print(f"{result.method} scores ({result.scores.shape[0]} x "
          f"{result.scores.shape[1]}); wrote {args.out}_loadings.csv and "
          f"{args.out}_scores.csv")
    return 0


def _fit_summary(kind, low_rank, sparse, sigma_n=None):
    sigma_hat = low_rank.reconstruct() + sparse.matrix.values
    trace_total = float(np.trace(sigma_hat))
    p = sparse.dim
    iu = np.triu_indices(p, k=1)
    rho_hat = float(np.sum(np.abs(sparse.matrix.values[iu]))
                    / np.sum(np.abs(np.triu(sigma_hat))))
    summary = {
        "kind": kind,
        "r": low_rank.rank,
        "theta": low_rank.trace() / trace_total if trace_total else float("nan"),
        "rho_S": rho_hat,
        "pi_nz": len(sparse.support) / (p * (p - 1) / 2),
    }
    if sigma_n is not None:
        diff = sigma_hat - sigma_n.values
        summary["sample_loss"] = spectral_norm(diff)
        summary["sample_loss_frob_rel"] = float(
            np.linalg.norm(diff, "fro") / np.linalg.norm(sigma_n.values, "fro"))
    return summary


def _cmd_grid(args, command):
    sigma_n, xc, _ = _load_sigma(args.input, args.input_kind, args.header,
                                 args.delimiter)
    psi_grid, rho_grid = default_grid(sigma_n, args.psi_grid, args.rho_grid)
    if args.psi_min and args.psi_max:
        psi_grid = np.geomspace(args.psi_min, args.psi_max, args.psi_grid)
    if args.rho_min and args.rho_max:
        rho_grid = np.geomspace(args.rho_min, args.rho_max, args.rho_grid)
    opts = SolveOptions(max_iter=args.max_iter, tol=args.tol)
    result = threshold_grid(sigma_n, psi_grid, rho_grid, opts=opts)
    with open(f"{args.out}.grid.csv", "w") as handle:
        write_header(handle, command, args.seed)
        handle.write("psi,rho,rank,admissible,criterion,sample_loss_frob_rel,reason\n")
        for cell in result.cells:
            handle.write(",".join([
                format_value(cell.psi), format_value(cell.rho),
                str(cell.fit.rank), str(cell.admissible).lower(),
                format_value(cell.criterion),
                format_value(cell.diagnostics.get("sample_loss_frob_rel", float("nan"))),
                (cell.reason or "").replace(",", ";"),
            ]))
            handle.write("\n")
    best = result.selected_cell
    save_fit(f"{args.out}.unalce.fit", "unalce", best.refit.low_rank,
             best.refit.sparse,
             {"psi": best.psi, "rho": best.rho, "lift": best.refit.lift,
              "iterations": best.fit.iterations, "converged": best.fit.converged},
             command, args.seed)
    summary = _fit_summary("unalce", best.refit.low_rank, best.refit.sparse, sigma_n)
    print(f"grid {len(psi_grid)}x{len(rho_grid)}; selected psi={best.psi:.6g} "
          f"rho={best.rho:.6g}")
    for key, value in summary.items():
        print(f"  {key}: {value:.4f}" if isinstance(value, float) else f"  {key}: {value}")
    print(f"wrote {args.out}.grid.csv and {args.out}.unalce.fit")
    return 0


def _cmd_study(args, command):
    from .simulate import run_replicates

    setting = get_setting(args.setting)
    estimators = tuple(e.strip() for e in args.estimators.split(",") if e.strip())
    opts = StudyOptions()
    result = run_replicates(setting, args.replicates, estimators=estimators,
                            seed=args.seed, jobs=args.jobs, opts=opts)
    rows = result.aggregate()
    save_study_csv(args.out, rows, command, args.seed)
    if result.failures:
        print(f"warning: {len(result.failures)} replicate(s) failed and were excluded",
              file=sys.stderr)
    print(f"setting {setting.name}, {args.replicates} replicates, "
          f"estimators {', '.join(estimators)}; wrote {args.out}")
    return 0


def _bold(text: str) -> str:
    if os.environ.get("NO_COLOR"):
        return text
    return f"\033[1m{text}\033[0m"


def _cmd_report(args, command):
    sigma_n = None
    x = None
    if args.data:
        loaded = load_matrix(DatasetSpec(path=args.data, has_header=args.header,
                                         delimiter=args.delimiter))
        x = loaded.values - loaded.column_means
        sigma_n = sample_covariance(x, "unbiased")
    for path in args.fit:
        fit_file = load_fit(path)
        summary = _fit_summary(fit_file.kind, fit_file.low_rank, fit_file.sparse,
                               sigma_n)
        print(_bold(f"{path} ({fit_file.kind})"))
        labels = {
            "r": "latent rank",
            "theta": "latent variance proportion",
            "rho_S": "residual covariance proportion",
            "pi_nz": "residual nonzero proportion",
            "sample_loss": "sample total loss (spectral)",
            "sample_loss_frob_rel": "sample total loss (rel. Frobenius)",
        }
        for key, label in labels.items():
            if key in summary:
                value = summary[key]
                print(f"  {label}: "
                      + (f"{value:.4f}" if isinstance(value, float) else str(value)))
        if x is not None and args.scores_method:
            loadings = fit_file.low_rank.basis * np.sqrt(fit_file.low_rank.eigvals)
            for method in args.scores_method:
                fn = bartlett_scores if method == "bartlett" else thompson_scores
                sfit = fn(loadings, fit_file.sparse, x, source=fit_file.kind.upper())
                stats = variability_stats(sfit)
                print(f"  {method} variability: "
                      + ", ".join(f"{k}={v:.4f}" for k, v in stats.items()))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="factorcov",
        description="Low-rank plus sparse covariance estimation toolkit",
    )
    parser.add_argument("--version", action="version", version=f"factorcov {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a ground truth and a sample")
    p.add_argument("--setting", required=True, help="registry entry (1..4)")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--n", type=int, default=None, help="override sample size")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(fn=_cmd_simulate)

    p = sub.add_parser("fit-alce", help="penalized fit plus unshrunk refit")
    _add_input_flags(p)
    p.add_argument("--psi", type=float, required=True)
    p.add_argument("--rho", type=float, required=True)
    p.add_argument("--lift", type=float, default=None,
                   help="unshrink amount (default: psi)")
    p.add_argument("--max-iter", type=int, default=5000)
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--no-accel", action="store_true")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output file prefix")
    p.set_defaults(fn=_cmd_fit_alce)

    p = sub.add_parser("fit-poet", help="principal components plus thresholding")
    _add_input_flags(p)
    p.add_argument("-r", type=int, required=True)
    p.add_argument("--C", type=float, default=None)
    p.add_argument("--cv", action="store_true", help="cross-validate C")
    p.add_argument("--c-min", type=float, default=0.0)
    p.add_argument("--c-max", type=float, default=100.0)
    p.add_argument("--c-count", type=int, default=1000)
    p.add_argument("--folds", type=int, default=10)
    p.add_argument("--n-obs", type=int, default=None,
                   help="sample size when the input is a covariance")
    p.add_argument("--kind", choices=("soft", "hard"), default="soft")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_fit_poet)

    p = sub.add_parser("scores", help="factor loadings and scores from a fit")
    p.add_argument("--fit", help="fit file (for ols2/bartlett/thompson)")
    p.add_argument("--data", required=True)
    p.add_argument("--method", choices=("ols1", "ols2", "bartlett", "thompson"),
                   required=True)
    p.add_argument("--r", type=int, default=None, help="factor count for ols1")
    p.add_argument("--header", action="store_true")
    p.add_argument("--delimiter", default=",")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output file prefix")
    p.set_defaults(fn=_cmd_scores)

    p = sub.add_parser("grid", help="threshold grid search with model selection")
    _add_input_flags(p)
    p.add_argument("--psi-grid", type=int, default=20, help="number of psi values")
    p.add_argument("--rho-grid", type=int, default=20, help="number of rho values")
    p.add_argument("--psi-min", type=float, default=None)
    p.add_argument("--psi-max", type=float, default=None)
    p.add_argument("--rho-min", type=float, default=None)
    p.add_argument("--rho-max", type=float, default=None)
    p.add_argument("--max-iter", type=int, default=2000)
    p.add_argument("--tol", type=float, default=1e-5)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True, help="output file prefix")
    p.set_defaults(fn=_cmd_grid)

    p = sub.add_parser("study", help="Monte-Carlo replicate study")
    p.add_argument("--setting", required=True)
    p.add_argument("--replicates", type=int, required=True)
    p.add_argument("--estimators", default="unalce,poet")
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=_cmd_study)

    p = sub.add_parser("report", help="render summaries from stored fits")
    p.add_argument("--fit", action="append", required=True)
    p.add_argument("--data", default=None,
                   help="data file for sample-loss and variability columns")
    p.add_argument("--scores-method", action="append",
                   choices=("bartlett", "thompson"), default=None)
    p.add_argument("--header", action="store_true")
    p.add_argument("--delimiter", default=",")
    p.set_defaults(fn=_cmd_report)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    command = "factorcov " + " ".join(argv if argv is not None else sys.argv[1:])
    try:
        return args.fn(args, command)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
