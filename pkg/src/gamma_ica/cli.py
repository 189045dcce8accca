"""Command-line entry point: ``gamma-ica <subcommand> ...``.

Exit codes: 0 on success, 1 on user error (bad flags, unreadable or
malformed input), 2 on numerical failure. Every successful run writes a
JSON manifest (argv, configuration, seeds, versions, timings and SHA-256
digests of the outputs) next to its primary output, or to ``--manifest``.
"""

from __future__ import annotations

import argparse
import logging
import platform
import shutil
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from ._rng import derive_rng
from .diagnostics import consistency_scan
from .errors import GammaICAError, InputError, NumericalError
from .harness import (
    METHODS,
    ImageSpec,
    SimulationSpec,
    SweepResult,
    rescale_to_uint8,
    run_image_pipeline,
    run_replication_sweep,
    sample_image_paths,
)
from .io import (
    file_digest,
    read_json,
    read_matrix_csv,
    write_json,
    write_matrix_csv,
    write_pgm,
    write_table_csv,
)
from .optimizer import ARMIJO, FIRST_IMPROVED, OptimizerConfig, fit_ica, random_rotation
from .prewhiten import prewhiten_fixed_point, whiten
from .selection import DEFAULT_GRID, CvConfig, parse_grid, select_gamma_ica, select_gamma_prewhiten
from .source_models import SUB_GAUSSIAN, SUPER_GAUSSIAN, make_model

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

logger = logging.getLogger("gamma_ica")

EXIT_OK, EXIT_USER, EXIT_NUMERICAL = 0, 1, 2


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for numerical failures
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USER, f"{self.prog}: error: {message}\n")


def _grid(text: str) -> list[float]:
    try:
        grid = parse_grid(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(str(exc)) from exc
    if not grid:
        raise argparse.ArgumentTypeError("empty grid")
    return grid


def _gamma_or_cv(text: str):
    if text == "cv":
        return text
    try:
        value = float(text)
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected a number or 'cv', got {text!r}") from exc
    if value < 0:
        raise argparse.ArgumentTypeError("gamma must be non-negative")
    return value


def _nonneg(text: str) -> float:
    value = float(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be non-negative")
    return value


def _global_flags(parser, suppress: bool) -> None:
    default = (lambda v: argparse.SUPPRESS) if suppress else (lambda v: v)
    parser.add_argument("--seed", type=int, default=default(None), help="master random seed (default 0)")
    parser.add_argument("--threads", type=int, default=default(1), help="worker threads where supported")
    parser.add_argument("--quiet", action="store_true", default=default(False), help="only log warnings")
    parser.add_argument("--manifest", default=default(None), help="run manifest path")


def _model_flags(parser) -> None:
    parser.add_argument("--model", choices=[SUB_GAUSSIAN, SUPER_GAUSSIAN], default=SUPER_GAUSSIAN)
    parser.add_argument("--shape-c", type=float, default=None, help="working-density shape constant")


def _optimizer_flags(parser) -> None:
    parser.add_argument("--step-rule", choices=[FIRST_IMPROVED, ARMIJO], default=FIRST_IMPROVED)
    parser.add_argument("--max-iter", type=int, default=2000)
    parser.add_argument("--grad-tol", type=float, default=None)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="gamma-ica", description="Robust ICA by minimum gamma-divergence.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    _global_flags(parser, suppress=False)
    common = _Parser(add_help=False)
    _global_flags(common, suppress=True)
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    p = sub.add_parser("prewhiten", parents=[common], help="robust location/scatter and whitening")
    p.add_argument("--input", required=True, help="data CSV, one observation per row")
    p.add_argument("--gamma", type=_gamma_or_cv, default=0.2, help="robustness level or 'cv'")
    p.add_argument("--grid", type=_grid, default=list(DEFAULT_GRID), help="CV grid when --gamma cv")
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--tol", type=float, default=1e-8)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--simultaneous", action="store_true", help="update mu and Sigma from the same weights")
    p.add_argument("--out", required=True, help="whitening model JSON")
    p.add_argument("--whitened", help="write whitened data CSV")

    p = sub.add_parser("ica", parents=[common], help="fit the recovering rotation on whitened data")
    p.add_argument("--whitened", required=True, help="whitened data CSV")
    p.add_argument("--gamma", type=_nonneg, default=0.15, help="robustness level; 0 gives MLE-ICA")
    _model_flags(p)
    _optimizer_flags(p)
    p.add_argument("--init", choices=["identity", "random"], default="identity")
    p.add_argument("--out", required=True, help="rotation JSON")
    p.add_argument("--trace", help="iteration trace CSV")
    p.add_argument("--sources-out", help="recovered sources CSV")

    p = sub.add_parser("diagnose", parents=[common], help="lambda_max(Psi) and conditions over a gamma grid")
    p.add_argument("--sources", required=True, help="recovered sources CSV")
    _model_flags(p)
    p.add_argument("--gamma-grid", type=_grid, default=_grid("0.05:0.05:1.0"))
    p.add_argument("--out", required=True)

    p = sub.add_parser("select-gamma", parents=[common], help="K-fold cross-validated gamma")
    p.add_argument("--stage", choices=["prewhiten", "ica"], required=True)
    p.add_argument("--input", required=True, help="raw data (prewhiten) or whitened data (ica)")
    p.add_argument("--grid", type=_grid, default=list(DEFAULT_GRID))
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--gamma0", type=float, default=1.0, help="anchor divergence index")
    p.add_argument("--prewhiten-gamma", type=_nonneg, default=None,
                   help="ica stage: treat --input as raw data and prewhiten it at this gamma first")
    p.add_argument("--screen", action="store_true", help="ica stage: keep only gamma with lambda_max < 0")
    _model_flags(p)
    _optimizer_flags(p)
    p.add_argument("--out", required=True)

    p = sub.add_parser("simulate", parents=[common], help="replication sweep on contaminated mixtures")
    p.add_argument("--spec", required=True, help="flat TOML file with SimulationSpec and sweep fields")
    p.add_argument("--out", required=True, help="per-replication results CSV")
    p.add_argument("--summary", help="per-cell summary CSV")

    p = sub.add_parser("unmix-images", parents=[common], help="mix, contaminate and unmix grayscale images")
    p.add_argument("--sources", nargs="+", help="PGM source images (default: bundled samples)")
    p.add_argument("--filter", action="store_true", help="median-filter the mixtures used for estimation")
    p.add_argument("--shared-noise", action="store_true", help="one noise draw per position for all channels")
    p.add_argument("--contamination", type=float, default=0.3)
    p.add_argument("--noise-mean", type=float, default=20.0)
    p.add_argument("--noise-sd", type=float, default=50.0)
    p.add_argument("--subsample", type=int, default=1000)
    p.add_argument("--gamma-prewhiten", type=_nonneg, default=0.2)
    p.add_argument("--gamma-ica", type=_nonneg, default=0.15)
    p.add_argument("--methods", nargs="+", choices=list(METHODS), default=list(METHODS))
    p.add_argument("--model", choices=[SUB_GAUSSIAN, SUPER_GAUSSIAN], default=SUB_GAUSSIAN)
    p.add_argument("--shape-c", type=float, default=None)
    p.add_argument("--clip-percent", type=float, default=1.0)
    _optimizer_flags(p)
    p.add_argument("--outdir", required=True)

    p = sub.add_parser("sample-data", parents=[common], help="copy the bundled sample images and data")
    p.add_argument("--outdir", required=True)

    p = sub.add_parser("replay", parents=[common], help="re-run the command recorded in a manifest")
    p.add_argument("source_manifest", help="manifest JSON written by a previous run")
    return parser


# -- subcommands ------------------------------------------------------------
# Each returns (primary output path, list of output paths, extra config).


def _data_matrix(path) -> np.ndarray:
    return read_matrix_csv(path).T


def _cmd_prewhiten(args):
    X = _data_matrix(args.input)
    extra = {}
    gamma = args.gamma
    if gamma == "cv":
        cv = select_gamma_prewhiten(X, CvConfig(args.folds, 1.0, tuple(args.grid), args.seed), args.tol, args.max_iter)
        gamma = cv.chosen_gamma
        extra["cv_chosen_gamma"] = gamma
        logger.info("cross-validation chose gamma=%g", gamma)
    model = prewhiten_fixed_point(X, gamma, tol=args.tol, max_iter=args.max_iter, simultaneous=args.simultaneous)
    if not model.converged:
        logger.warning("fixed point did not converge in %d iterations", model.iterations)
    write_json(args.out, model.to_dict())
    outputs = [args.out]
    if args.whitened:
        write_matrix_csv(args.whitened, whiten(X, model).T)
        outputs.append(args.whitened)
    return outputs, extra


def _cmd_ica(args):
    Z = _data_matrix(args.whitened)
    p = Z.shape[0]
    if p < 2:
        raise InputError(f"{args.whitened}: need at least 2 columns, found {p}")
    pm = make_model(args.model, p, args.shape_c)
    config = OptimizerConfig(gamma=args.gamma, step_rule=args.step_rule, max_iter=args.max_iter, grad_tol=args.grad_tol)
    w0 = random_rotation(derive_rng(args.seed, "ica-init"), p) if args.init == "random" else None
    est = fit_ica(Z, pm, config, w0=w0)
    if not est.converged:
        logger.warning("optimizer stopped without meeting the gradient tolerance (%s)", est.stop_reason)
    write_json(args.out, {
        "p": p,
        "gamma": est.gamma,
        "model": args.model,
        "shape_c": args.shape_c,
        "w": est.w.ravel().tolist(),
        "objective": est.objective,
        "iterations": est.iterations,
        "converged": est.converged,
        "stop_reason": est.stop_reason,
    })
    outputs = [args.out]
    if args.trace:
        rows = zip(range(len(est.objective_trace)), est.objective_trace, est.step_trace, est.grad_norm_trace)
        write_table_csv(args.trace, ["iter", "objective", "step", "grad_norm"], rows)
        outputs.append(args.trace)
    if args.sources_out:
        write_matrix_csv(args.sources_out, (est.w.T @ Z).T)
        outputs.append(args.sources_out)
    return outputs, {}


def _cmd_diagnose(args):
    S = _data_matrix(args.sources)
    pm = make_model(args.model, S.shape[0], args.shape_c)
    report = consistency_scan(S, pm, args.gamma_grid)
    rows = [(r.gamma, r.lambda_max, r.cond_a_max_abs_z, r.cond_b_min_z) for r in report.rows]
    write_table_csv(args.out, ["gamma", "lambda_max", "condA_max_abs_z", "condB_min_z"], rows)
    return [args.out], {"admissible": report.admissible()}


def _cmd_select_gamma(args):
    data = _data_matrix(args.input)
    cfg = CvConfig(args.folds, args.gamma0, tuple(args.grid), args.seed)
    if args.stage == "prewhiten":
        result = select_gamma_prewhiten(data, cfg)
    else:
        if args.prewhiten_gamma is not None:
            data = whiten(data, prewhiten_fixed_point(data, args.prewhiten_gamma))
        pm = make_model(args.model, data.shape[0], args.shape_c)
        opt = OptimizerConfig(step_rule=args.step_rule, max_iter=args.max_iter, grad_tol=args.grad_tol)
        result = select_gamma_ica(data, pm, opt, cfg, screen=args.screen)
    rows = [(g, s, nf) for (g, s), nf in zip(result.scores, result.n_failed)]
    write_table_csv(args.out, ["gamma", "score", "n_failed_folds"], rows)
    logger.info("chosen gamma: %g", result.chosen_gamma)
    print(f"chosen_gamma={result.chosen_gamma!r}")
    return [args.out], {"chosen_gamma": result.chosen_gamma}


SPEC_FIELDS = {"source_kind", "n_clean", "n_outliers", "outlier_mean", "outlier_sd", "mixing", "replications", "seed"}
SWEEP_FIELDS = {"gamma_grid", "methods", "model", "shape_c", "prewhiten_gamma", "true_sigma", "step_rule", "max_iter"}


def load_simulation_spec(path, seed: int | None = None):
    """Parse a flat TOML simulation file into ``(SimulationSpec, sweep kwargs)``."""
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except OSError as exc:
        raise InputError(f"{path}: cannot read ({exc.strerror})") from exc
    except tomllib.TOMLDecodeError as exc:
        raise InputError(f"{path}: invalid TOML ({exc})") from exc
    unknown = set(doc) - SPEC_FIELDS - SWEEP_FIELDS
    if unknown:
        raise InputError(f"{path}: unknown field(s) {', '.join(sorted(unknown))}")
    spec_kw = {k: v for k, v in doc.items() if k in SPEC_FIELDS}
    if seed is not None:
        spec_kw["seed"] = seed
    try:
        spec = SimulationSpec(**spec_kw)
    except (TypeError, ValueError) as exc:
        raise InputError(f"{path}: {exc}") from exc
    grid = doc.get("gamma_grid", [0.2])
    if isinstance(grid, str):
        grid = parse_grid(grid)
    opt = OptimizerConfig(step_rule=doc.get("step_rule", FIRST_IMPROVED), max_iter=int(doc.get("max_iter", 2000)))
    sweep = dict(
        gamma_grid=[float(g) for g in grid],
        methods=tuple(doc.get("methods", METHODS)),
        model=doc.get("model"),
        shape_c=doc.get("shape_c"),
        prewhiten_gamma=doc.get("prewhiten_gamma"),
        optimizer=opt,
        true_sigma=bool(doc.get("true_sigma", False)),
    )
    return spec, sweep


def _cmd_simulate(args):
    spec, sweep = load_simulation_spec(args.spec, args.seed if args.seed_given else None)
    result = run_replication_sweep(spec, threads=args.threads, **sweep)
    write_table_csv(args.out, SweepResult.ROW_FIELDS, ([r[k] for k in SweepResult.ROW_FIELDS] for r in result.rows))
    outputs = [args.out]
    if args.summary:
        write_table_csv(args.summary, SweepResult.SUMMARY_FIELDS,
                        ([s[k] for k in SweepResult.SUMMARY_FIELDS] for s in result.summary))
        outputs.append(args.summary)
    for s in result.summary:
        logger.info("%s gamma=%g mean_pi=%.4f (%d ok, %d failed)",
                    s["method"], s["gamma"], s["mean_pi"], s["n_ok"], s["n_failed"])
    return outputs, {"simulation_seed": spec.seed}


def _cmd_unmix_images(args):
    paths = args.sources or sample_image_paths()
    spec = ImageSpec(
        source_paths=paths,
        mixing_seed=args.seed,
        contamination_fraction=args.contamination,
        noise_mean=args.noise_mean,
        noise_sd=args.noise_sd,
        subsample=args.subsample,
        filter=args.filter,
        shared_noise=args.shared_noise,
        model=args.model,
        shape_c=args.shape_c,
        clip_percent=args.clip_percent,
    )
    opt = OptimizerConfig(step_rule=args.step_rule, max_iter=args.max_iter, grad_tol=args.grad_tol)
    result = run_image_pipeline(spec, (args.gamma_prewhiten, args.gamma_ica), args.methods, optimizer=opt)
    outdir = Path(args.outdir)
    outputs = []
    rows = []
    for k, ch in enumerate(result.mixed):
        path = outdir / f"mixed{k + 1}.pgm"
        write_pgm(path, rescale_to_uint8(ch, args.clip_percent).reshape(result.shape))
        outputs.append(path)
    for name, m in result.methods.items():
        for k, img in enumerate(m.images):
            path = outdir / f"{name}_source{k + 1}.pgm"
            write_pgm(path, img)
            outputs.append(path)
            rows.append((name, int(m.order[k]) + 1, k + 1, float(m.correlation[k])))
        logger.info("%s mean best-match correlation %.4f", name, m.mean_correlation)
    report = outdir / "report.csv"
    write_table_csv(report, ["method", "channel", "matched_source", "correlation"], rows)
    write_matrix_csv(outdir / "mixing.csv", result.A)
    return [report, outdir / "mixing.csv", *outputs], {}


def _cmd_sample_data(args):
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    outputs = []
    for src in [*sample_image_paths(), Path(str(resources.files("gamma_ica") / "data" / "sample_mixture.csv"))]:
        dest = outdir / src.name
        shutil.copyfile(src, dest)
        outputs.append(dest)
    return outputs, {}


COMMANDS = {
    "prewhiten": _cmd_prewhiten,
    "ica": _cmd_ica,
    "diagnose": _cmd_diagnose,
    "select-gamma": _cmd_select_gamma,
    "simulate": _cmd_simulate,
    "unmix-images": _cmd_unmix_images,
    "sample-data": _cmd_sample_data,
}


def _versions() -> dict:
    return {"gamma_ica": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _manifest_path(args, outputs) -> Path:
    if args.manifest:
        return Path(args.manifest)
    first = Path(outputs[0])
    return first.with_name(first.name + ".manifest.json")


def _config_snapshot(args) -> dict:
    skip = {"manifest", "quiet", "seed_given"}
    return {k: v for k, v in sorted(vars(args).items()) if k not in skip}


def _run(argv: list[str]) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr, force=True)
    logging.captureWarnings(True)
    if args.command == "replay":
        doc = read_json(args.source_manifest)
        if "argv" not in doc:
            raise InputError(f"{args.source_manifest}: manifest has no 'argv' field")
        return _run(list(doc["argv"]))
    args.seed_given = args.seed is not None
    if args.seed is None:
        args.seed = 0
    if args.threads < 1:
        raise InputError("--threads must be at least 1")
    start = time.perf_counter()
    outputs, extra = COMMANDS[args.command](args)
    elapsed = time.perf_counter() - start
    manifest = {
        "command": args.command,
        "argv": argv,
        "config": _config_snapshot(args),
        "seeds": {"seed": args.seed, **{k: v for k, v in extra.items() if "seed" in k}},
        "results": {k: v for k, v in extra.items() if "seed" not in k},
        "versions": _versions(),
        "wall_clock_seconds": elapsed,
        "outputs": {str(p): file_digest(p) for p in outputs},
    }
    write_json(_manifest_path(args, outputs), manifest)
    return EXIT_OK


def parse_and_dispatch(argv: list[str] | None = None) -> int:
    """Run one CLI invocation and return its exit code."""
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        return _run(argv)
    except SystemExit as exc:
        return int(exc.code or 0) if isinstance(exc.code, int) or exc.code is None else EXIT_USER
    except NumericalError as exc:
        print(f"gamma-ica: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InputError, ValueError, OSError, GammaICAError) as exc:
        print(f"gamma-ica: error: {exc}", file=sys.stderr)
        return EXIT_USER


def main() -> None:
    sys.exit(parse_and_dispatch())


if __name__ == "__main__":
    main()
