"""Command-line entry point: ``ptotr {simulate,fit,changepoint,pet,bound,klcheck}``.

Settings come from ``--config`` (key=value file) and are overridden by
flags. Every stochastic command requires ``--seed``; reruns with the same
seed and settings write byte-identical CSV files.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from . import io
from .applications.changepoint import changepoint_scan
from .applications.pet import pet_reconstruct_mlem, pet_reconstruct_ptotr, pet_simulate, rmse
from .applications.radon import RadonOperator
from .diagnostics import BoundInputs, kl_bound_trials, minimax_bound
from .estimator import FitConfig, PtotrProblem, fit
from .exceptions import PtotrError
from .synth import make_changepoint_series, make_pet_truth, make_phantom, make_rng, sample_poisson_tensor
from .tensor import cp_reconstruct, partial_contract, random_cp

__all__ = ["main", "build_parser"]


class CliError(Exception):
    """Reported to stderr with exit status 2."""


# -- argument helpers ---------------------------------------------------------

def _add_common(p: argparse.ArgumentParser, stochastic: bool) -> None:
    p.add_argument("--config", type=Path, help="key=value settings file; flags override it")
    p.add_argument("--out", type=Path, default=Path("."), help="output directory (default: .)")
    p.add_argument("--threads", type=int, default=None,
                   help="worker threads for independent fits (default: available cores)")
    if stochastic:
        p.add_argument("--seed", type=int, required=True, help="master seed (required)")


def _add_fit_flags(p: argparse.ArgumentParser, ranks: bool = False) -> None:
    if ranks:
        p.add_argument("--ranks", type=io._int_list, help="comma-separated CP ranks, e.g. 2,4,6,8")
    p.add_argument("--rank", type=int)
    p.add_argument("--restarts", type=int)
    p.add_argument("--outer-tol", type=float, dest="outer_tol")
    p.add_argument("--inner-tol", type=float, dest="inner_tol")
    p.add_argument("--inner-max-iter", type=int, dest="inner_max_iter")
    p.add_argument("--outer-max-sweeps", type=int, dest="outer_max_sweeps")
    p.add_argument("--param-count", choices=["raw", "constrained"], dest="param_count_convention")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="ptotr", description="Poisson tensor-on-tensor regression tools")
    sub = parser.add_subparsers(dest="command", required=True)

    sim = sub.add_parser("simulate", help="generate a synthetic dataset")
    sim.add_argument("scenario", choices=["changepoint", "regression", "pet"])
    _add_common(sim, True)
    sim.add_argument("--m1", type=int)
    sim.add_argument("--m2", type=int)
    sim.add_argument("--m3", type=int)
    sim.add_argument("--T", type=int)
    sim.add_argument("--tau", type=int)
    sim.add_argument("--a", type=float)
    sim.add_argument("--topic-index", type=int, dest="topic_index")
    sim.add_argument("--covariate-dims", type=io._int_list, dest="covariate_dims")
    sim.add_argument("--response-dims", type=io._int_list, dest="response_dims")
    sim.add_argument("--n-obs", type=int, dest="n_obs")
    sim.add_argument("--rank", type=int)
    sim.add_argument("--image-n1", type=int, dest="image_n1")
    sim.add_argument("--image-n2", type=int, dest="image_n2")
    sim.add_argument("--n-angles", type=int, dest="n_angles")
    sim.add_argument("--radial-bins", type=int, dest="radial_bins")
    sim.add_argument("--binning", choices=["nearest", "linear"])
    sim.add_argument("--intensity", type=float)
    sim.add_argument("--fractions", type=io._float_list)
    sim.add_argument("--binary", action="store_true", help="write binary tensor files")

    f = sub.add_parser("fit", help="fit a PToTR model to dataset files")
    _add_common(f, True)
    f.add_argument("--responses", type=Path, required=True)
    f.add_argument("--covariates", type=Path, required=True)
    _add_fit_flags(f, ranks=True)

    cp = sub.add_parser("changepoint", help="scan candidate change points of a count-tensor series")
    _add_common(cp, True)
    cp.add_argument("--series", type=Path, help="series dataset (time index last); simulated if omitted")
    cp.add_argument("--tau-candidates", type=io._int_list, dest="tau_candidates")
    for name in ("m1", "m2", "m3", "T", "tau", "topic_index"):
        cp.add_argument(f"--{name.replace('_', '-')}", type=int, dest=name)
    cp.add_argument("--a", type=float)
    _add_fit_flags(cp)

    pet = sub.add_parser("pet", help="simulate sinogram data and reconstruct with ML-EM and/or PToTR")
    _add_common(pet, True)
    pet.add_argument("--method", choices=["mlem", "ptotr", "both"])
    pet.add_argument("--iters", type=int, help="ML-EM iterations and PToTR sweep cap")
    pet.add_argument("--fractions", type=io._float_list)
    pet.add_argument("--ranks", type=io._int_list)
    pet.add_argument("--image-n1", type=int, dest="image_n1")
    pet.add_argument("--image-n2", type=int, dest="image_n2")
    pet.add_argument("--n-angles", type=int, dest="n_angles")
    pet.add_argument("--radial-bins", type=int, dest="radial_bins")
    pet.add_argument("--binning", choices=["nearest", "linear"])
    pet.add_argument("--response-dims", type=io._int_list, dest="response_dims")
    pet.add_argument("--intensity", type=float)
    pet.add_argument("--phantom", choices=["shepp_logan_like", "blocks", "uniform"])
    pet.add_argument("--restarts", type=int)
    pet.add_argument("--binary", action="store_true", help="write binary image files")

    b = sub.add_parser("bound", help="evaluate the minimax lower bound")
    _add_common(b, False)
    b.add_argument("--bar-m", type=int, required=True)
    b.add_argument("--bar-n", type=int, required=True)
    b.add_argument("--P", type=int, required=True)
    b.add_argument("--Q", type=int, required=True)
    b.add_argument("--R", type=int, required=True)
    b.add_argument("--alpha", type=float, required=True)
    b.add_argument("--beta", type=float, required=True)
    b.add_argument("--covariates", type=Path, help="dataset of covariates; gives xi and ||X||_2^2")
    b.add_argument("--xi", type=float)
    b.add_argument("--x-norm-sq", type=float, dest="x_norm_sq")

    k = sub.add_parser("klcheck", help="check the KL divergence bound on random small instances")
    _add_common(k, True)
    k.add_argument("--trials", type=int, default=100)
    return parser


def _settings(args: argparse.Namespace) -> dict[str, Any]:
    """Config-file values overridden by explicitly given flags, over schema defaults."""
    merged = {k: v.default for k, v in io.CONFIG_SCHEMA.items()}
    if getattr(args, "config", None) is not None:
        merged.update(io.load_config(args.config))
    for key, val in vars(args).items():
        if key in io.CONFIG_SCHEMA and val is not None:
            merged[key] = val
    return merged


def _fit_config(s: dict, rank: int, seed: int) -> FitConfig:
    return FitConfig(rank=rank, outer_tol=s["outer_tol"], inner_tol=s["inner_tol"],
                     inner_max_iter=s["inner_max_iter"], outer_max_sweeps=s["outer_max_sweeps"],
                     restarts=s["restarts"], seed=seed, param_count_convention=s["param_count_convention"])


def _threads(args) -> int:
    return args.threads if args.threads else (os.cpu_count() or 1)


def _ext(binary: bool) -> str:
    return ".dtnsb" if binary else ".dtns"


# -- commands -------------------------------------------------------------------

def cmd_simulate(args, s, out: Path) -> None:
    if args.scenario == "changepoint":
        rng = make_rng(args.seed, "changepoint")
        series = make_changepoint_series(s["m1"], s["m2"], s["m3"], s["T"], s["tau"], s["a"], rng,
                                         s["topic_index"])
        path = out / ("series" + _ext(args.binary))
        io.write_dataset(path, series, args.binary)
        print(f"wrote {path} ({s['T']} tensors of shape {series.shape[1:]})")
    elif args.scenario == "regression":
        rng = make_rng(args.seed, "regression")
        b = random_cp(s["covariate_dims"], s["response_dims"], s["rank"], rng, weight_scale=10.0)
        x = rng.uniform(0.1, 1.0, (s["n_obs"], *s["covariate_dims"]))
        y = sample_poisson_tensor(np.stack([partial_contract(xi, b) for xi in x]), rng)
        io.write_dataset(out / ("covariates" + _ext(args.binary)), x, args.binary)
        io.write_dataset(out / ("responses" + _ext(args.binary)), y, args.binary)
        io.write_cp(out / "truth.cp", b)
        print(f"wrote {s['n_obs']} observations to {out}")
    else:
        truth = make_pet_truth(s["image_n1"], s["image_n2"], s["response_dims"], s["intensity"])
        op = _radon(s)
        io.write_tensor(out / ("truth" + _ext(args.binary)), truth, args.binary)
        for frac in s["fractions"]:
            pet = pet_simulate(truth, op, frac, make_rng(args.seed, "pet", _frac_tag(frac)))
            io.write_dataset(out / f"covariates_f{frac:g}{_ext(args.binary)}", pet.covariates, args.binary)
            io.write_dataset(out / f"responses_f{frac:g}{_ext(args.binary)}", pet.responses, args.binary)
            io.write_csv(out / f"cells_f{frac:g}.csv", ["cell"], ([int(c) + 1] for c in pet.cells))
        print(f"wrote truth and {len(s['fractions'])} sinogram datasets to {out}")


def cmd_fit(args, s, out: Path) -> None:
    y = io.read_dataset(args.responses)
    x = io.read_dataset(args.covariates)
    problem = PtotrProblem(y, x)
    ranks = s["ranks"] or [s["rank"]]
    summary, traj = [], []
    for r in ranks:
        res = fit(problem, _fit_config(s, r, args.seed), threads=_threads(args))
        io.write_cp(out / f"coefficient_rank{r}.cp", res.coefficient)
        traj += [[r, sweep, ll] for sweep, ll in enumerate(res.loglik_trajectory)]
        dne = ";".join(f"{p}:{','.join(map(str, rows))}" for p, rows in sorted(res.dne_warnings.items()))
        summary.append([r, res.loglik, res.bic, res.param_count, dne])
        print(f"rank {r}: loglik {res.loglik:.6f} BIC {res.bic:.6f}")
    io.write_csv(out / "trajectory.csv", ["rank", "sweep", "loglik"], traj)
    io.write_csv(out / "summary.csv", ["rank", "loglik", "bic", "param_count", "dne_warnings"], summary)


def cmd_changepoint(args, s, out: Path) -> None:
    if args.series is not None:
        series = io.read_dataset(args.series)
    else:
        series = make_changepoint_series(s["m1"], s["m2"], s["m3"], s["T"], s["tau"], s["a"],
                                         make_rng(args.seed, "changepoint"), s["topic_index"])
    res = changepoint_scan(series, _fit_config(s, s["rank"], args.seed), s["tau_candidates"])
    rows = [[t, res.loglik_by_tau[t], res.lambda_by_tau[t]] for t in sorted(res.loglik_by_tau)]
    io.write_csv(out / "loglik_by_tau.csv", ["tau", "loglik", "lambda"], rows)
    print(f"null loglik {res.null_loglik:.6f}")
    print(f"tau_hat = {res.tau_hat}")


def _radon(s) -> RadonOperator:
    return RadonOperator((s["image_n1"], s["image_n2"]), s["n_angles"], s["radial_bins"], s["binning"])


def _frac_tag(frac: float) -> int:
    return int(round(frac * 1_000_000))


def cmd_pet(args, s, out: Path) -> None:
    dims = (s["image_n1"], s["image_n2"])
    truth = make_pet_truth(*dims, s["response_dims"], s["intensity"])
    if s["phantom"] != "shepp_logan_like":
        frames = np.ones(s["response_dims"])
        truth = s["intensity"] * np.multiply.outer(make_phantom(*dims, s["phantom"]), frames)
    op = _radon(s)
    ranks = s["ranks"] or [s["rank"]]
    rows = []
    for frac in s["fractions"]:
        pet = pet_simulate(truth, op, frac, make_rng(args.seed, "pet", _frac_tag(frac)))
        if s["method"] in ("mlem", "both"):
            est, errs = pet_reconstruct_mlem(pet, s["iters"], truth)
            rows += [["mlem", 0, frac, it, e] for it, e in enumerate(errs, 1)]
            io.write_tensor(out / f"recon_mlem_f{frac:g}{_ext(args.binary)}", est, args.binary)
            print(f"mlem fraction {frac:g}: final RMSE {errs[-1]:.6f}")
        if s["method"] in ("ptotr", "both"):
            for r in ranks:
                cfg = FitConfig(rank=r, outer_tol=s["outer_tol"], inner_tol=s["inner_tol"],
                                inner_max_iter=s["inner_max_iter"], outer_max_sweeps=s["iters"],
                                restarts=s["restarts"], seed=args.seed,
                                param_count_convention=s["param_count_convention"])
                res, errs = pet_reconstruct_ptotr(pet, cfg, truth, threads=_threads(args))
                rows += [["ptotr", r, frac, it, e] for it, e in enumerate(errs, 1)]
                est = cp_reconstruct(res.coefficient)
                io.write_tensor(out / f"recon_ptotr_r{r}_f{frac:g}{_ext(args.binary)}", est, args.binary)
                print(f"ptotr rank {r} fraction {frac:g}: final RMSE {rmse(est, truth):.6f}")
    io.write_csv(out / "rmse_trajectory.csv", ["method", "rank", "fraction", "iteration", "rmse"], rows)


def cmd_bound(args, s, out: Path) -> None:
    common = dict(bar_m=args.bar_m, bar_n=args.bar_n, P=args.P, Q=args.Q, R=args.R,
                  alpha=args.alpha, beta=args.beta)
    if args.covariates is not None:
        x = io.read_dataset(args.covariates)
        inp = BoundInputs.from_covariates(x.reshape(len(x), -1, order="F"), **common)
    elif args.xi is not None and args.x_norm_sq is not None:
        inp = BoundInputs(xi=args.xi, x_spec_norm_sq=args.x_norm_sq, **common)
    else:
        raise CliError("bound needs --covariates or both --xi and --x-norm-sq")
    res = minimax_bound(inp)
    print(f"J = {inp.J}")
    print(f"xi = {io.format_float(inp.xi)}")
    print(f"x_spec_norm_sq = {io.format_float(inp.x_spec_norm_sq)}")
    print(f"bound = {io.format_float(res.bound)}")
    print(f"condition_holds = {str(res.condition_holds).lower()}")
    for w in res.warnings:
        print(f"warning: {w}")


def cmd_klcheck(args, s, out: Path) -> None:
    reports = kl_bound_trials(args.trials, make_rng(args.seed, "klcheck"))
    io.write_csv(out / "klcheck.csv", ["trial", "lhs", "rhs", "pass"],
                 ([i, r.lhs, r.rhs, r.passed] for i, r in enumerate(reports, 1)))
    passed = sum(r.passed for r in reports)
    print(f"klcheck: {passed}/{len(reports)} pass")
    if passed != len(reports):
        raise CliError("KL bound violated")


COMMANDS = {
    "simulate": cmd_simulate,
    "fit": cmd_fit,
    "changepoint": cmd_changepoint,
    "pet": cmd_pet,
    "bound": cmd_bound,
    "klcheck": cmd_klcheck,
}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        s = _settings(args)
        out = args.out
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[args.command](args, s, out)
    except (PtotrError, CliError, ValueError, OverflowError) as exc:
        print(f"ptotr {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
