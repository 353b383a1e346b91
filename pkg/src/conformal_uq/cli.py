"""``conformal-uq`` command-line tool.

Subcommands: validate, synth, calibrate, predict, evaluate, sweep, compare.
Every command that writes results also writes a JSON manifest next to them
(``<out>.manifest.json``, or ``manifest.json`` inside the ``synth`` output
directory) holding the resolved parameters, seed and input checksums.

Exit codes: 0 success, 2 usage error, 3 data validation error,
4 internal invariant violation.
"""

import argparse
import hashlib
import math
import os
import sys

import numpy as np

from . import __version__
from .conformal import (
    APS,
    RAPS,
    ScoringConfig,
    calibrate,
    coverage_bound,
    load_calibrator,
    predict_sets,
    quantile_rank,
    save_calibrator,
)
from .evaluation import (
    InsufficientPool,
    alpha_sweep,
    calibration_size_sweep,
    compare_methods,
    empirical_coverage,
    histogram,
    set_size_stats,
    stratify_uncertainty,
)
from . import formats
from .scores import DataValidationError, LabeledScores, predicted_labels
from .synth import InvalidConfig, OracleConfig, generate, generate_evidence, generate_mcd_stacks

SEED_ENV = "CONFORMAL_UQ_SEED"

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_INTERNAL = 0, 2, 3, 4


class UsageError(Exception):
    pass


class InvariantViolation(Exception):
    pass


def _check(cond, message):
    if not cond:
        raise InvariantViolation(message)


def _default_seed():
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _floats(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


# -- manifest plumbing --------------------------------------------------------

class Run:
    """Collects what a command read and how it was configured."""

    def __init__(self, command, params, seed=None):
        self.command = command
        self.params = params
        self.seed = seed
        self.inputs = {}
        self.derived = {}

    def read(self, role, path):
        self.inputs[role] = {"path": os.fspath(path), "sha256": formats.sha256_file(path)}
        return path

    @property
    def run_id(self):
        ident = {
            "artifact": "conformal-uq",
            "version": __version__,
            "command": self.command,
            "params": self.params,
            "seed": self.seed,
            "inputs": self.inputs,
        }
        return hashlib.sha256(formats.canonical_json(ident).encode()).hexdigest()

    def manifest(self, outputs):
        return {
            "artifact": "conformal-uq",
            "version": __version__,
            "command": self.command,
            "params": self.params,
            "seed": self.seed,
            "inputs": self.inputs,
            "outputs": [os.fspath(p) for p in outputs],
            "derived": self.derived,
            "manifest_sha256": self.run_id,
        }

    def finish(self, outputs, manifest_path=None):
        """Write result files (``{path: text}``), then the manifest."""
        for path, text in outputs.items():
            formats.atomic_write(path, text)
        if manifest_path is None:
            manifest_path = f"{next(iter(outputs))}.manifest.json"
        formats.atomic_write(manifest_path, formats.format_manifest(self.manifest(list(outputs))))


def _labeled(run, args):
    scores = formats.read_scores(run.read("scores", args.scores))
    labels, k = formats.read_labels(run.read("labels", args.labels))
    if k != scores.shape[1]:
        raise formats.FormatError(f"labels declare k={k}, scores have {scores.shape[1]} classes")
    return LabeledScores(scores, labels)


def _scoring_config(args):
    if args.variant == APS:
        if args.lam is not None or args.k_reg is not None:
            raise UsageError("--lambda/--k-reg only apply to --variant raps")
        return ScoringConfig.aps()
    if args.lam is None or args.k_reg is None:
        raise UsageError("--variant raps requires --lambda and --k-reg")
    try:
        return ScoringConfig.raps(args.lam, args.k_reg)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _config_params(config):
    return {"variant": config.variant, "lambda": config.lam, "k_reg": config.k_reg}


def _add_scoring_flags(p):
    p.add_argument("--variant", choices=(APS, RAPS), default=APS)
    p.add_argument("--lambda", dest="lam", type=float, default=None,
                   help="RAPS penalty per rank beyond --k-reg")
    p.add_argument("--k-reg", "--k_reg", dest="k_reg", type=int, default=None,
                   help="RAPS rank after which the penalty applies")


def _alpha(value):
    a = float(value)
    if not 0 <= a <= 1:
        raise argparse.ArgumentTypeError(f"alpha must lie in [0, 1], got {value}")
    return a


# -- commands -----------------------------------------------------------------

def cmd_validate(args):
    scores = formats.read_scores(args.scores)
    msg = f"ok: {scores.shape[0]} rows, {scores.shape[1]} classes"
    if args.labels:
        labels, k = formats.read_labels(args.labels)
        LabeledScores(scores, labels)
        if k != scores.shape[1]:
            raise formats.FormatError(f"labels declare k={k}, scores have {scores.shape[1]}")
        msg += f", {len(labels)} labels"
    if args.calibrator:
        with open(args.calibrator, encoding="utf-8") as f:
            c = load_calibrator(f.read())
        if c.k_classes != scores.shape[1]:
            raise formats.FormatError("calibrator class count does not match scores")
        msg += f", calibrator {c.config.variant} q_hat={c.q_hat!r}"
    print(msg)


def cmd_synth(args):
    seed = _default_seed() if args.seed is None else args.seed
    cfg = OracleConfig(args.k, args.concentration, args.signal, seed)
    data = generate(cfg, args.n, jobs=args.jobs)
    _check(len(data) == args.n, "generator returned the wrong number of rows")
    os.makedirs(args.out, exist_ok=True)
    run = Run("synth", {"k": args.k, "n": args.n, "concentration": args.concentration,
                        "signal": args.signal}, seed)
    out = {
        os.path.join(args.out, "scores.csv"): formats.format_scores(data.scores),
        os.path.join(args.out, "labels.csv"): formats.format_labels(data.labels, args.k),
    }
    run.finish(out, os.path.join(args.out, "manifest.json"))


def cmd_calibrate(args):
    config = _scoring_config(args)
    run = Run("calibrate", {"alpha": args.alpha, **_config_params(config)})
    data = _labeled(run, args)
    c = calibrate(data, args.alpha, config)
    run.derived = {"quantile_rank": quantile_rank(c.n_calib, c.alpha),
                   "q_hat": "inf" if c.q_hat == math.inf else c.q_hat,
                   "n_calib": c.n_calib}
    run.finish({args.out: save_calibrator(c)})


def cmd_predict(args):
    run = Run("predict", {})
    scores = formats.read_scores(run.read("scores", args.scores))
    with open(run.read("calibrator", args.calibrator), encoding="utf-8") as f:
        c = load_calibrator(f.read())
    sets = predict_sets(scores, c)
    run.finish({args.out: formats.format_predictions(sets, predicted_labels(scores))})


def cmd_evaluate(args):
    run = Run("evaluate", {})
    sets, predicted = formats.read_predictions(run.read("predictions", args.predictions))
    labels, k = formats.read_labels(run.read("labels", args.labels))
    if len(labels) != len(sets):
        raise formats.FormatError(f"{len(sets)} predictions but {len(labels)} labels")
    if sets and sets[0].k_classes != k:
        raise formats.FormatError("predictions and labels declare different class counts")
    cov = empirical_coverage(sets, labels)
    sizes = set_size_stats(sets, predicted, labels)
    empty = np.array([s.is_empty for s in sets])
    strat = stratify_uncertainty([s.uncertainty for s in sets], predicted, labels, empty)
    _check(strat.n_total == len(sets), "stratification lost samples")
    rows = [
        ("n", len(sets)),
        ("coverage", float(cov)),
        ("accuracy", float(np.mean(predicted == labels))),
        ("c_correct", sizes.c_correct),
        ("c_wrong", sizes.c_wrong),
        ("c_average", sizes.c_average),
        ("u_mean_correct", strat.mean_correct),
        ("u_std_correct", strat.std_correct),
        ("u_mean_wrong", strat.mean_wrong),
        ("u_std_wrong", strat.std_wrong),
        ("n_correct", strat.n_correct),
        ("n_wrong", strat.n_wrong),
        ("excluded_empty", strat.excluded_empty),
    ]
    run.finish({args.out: formats.format_table("conformal-uq evaluate", run.run_id,
                                               ("metric", "value"), rows)})


def cmd_sweep(args):
    config = _scoring_config(args)
    seed = _default_seed() if args.seed is None else args.seed
    params = {"mode": args.mode, "grid": args.grid, **_config_params(config)}
    if args.mode == "alpha":
        if args.n_calib is None:
            raise UsageError("--mode alpha requires --n-calib")
        params["n_calib"] = args.n_calib
    else:
        if args.alpha is None:
            raise UsageError("--mode calibsize requires --alpha")
        params.update(alpha=args.alpha, resamples=args.resamples, n_test=args.n_test)
    run = Run("sweep", params, seed)
    pool = _labeled(run, args)

    if args.mode == "alpha":
        if not 1 <= args.n_calib < pool.n:
            raise UsageError(f"--n-calib must lie in [1, {pool.n - 1}]")
        perm = np.random.default_rng(np.random.SeedSequence(seed)).permutation(pool.n)
        cal, test = pool.subset(perm[:args.n_calib]), pool.subset(perm[args.n_calib:])
        try:
            pts = alpha_sweep(cal, test, args.grid, config)
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        for p in pts:
            _check(p.certain + p.uncertain + p.empty == test.n, "alpha sweep counts do not add up")
        cols = ("alpha", "certain", "uncertain", "empty", "coverage")
        rows = [(p.alpha, p.certain, p.uncertain, p.empty, p.coverage) for p in pts]
    else:
        try:
            pts = calibration_size_sweep(pool, args.grid, args.resamples, args.alpha, config,
                                         seed=seed, n_test=args.n_test, jobs=args.jobs)
        except InsufficientPool as exc:
            raise formats.FormatError(str(exc)) from None
        except ValueError as exc:
            raise UsageError(str(exc)) from None
        cols = ("n_calib", "mean_coverage", "std_coverage", "bound_lower", "bound_upper")
        rows = []
        for p in pts:
            b = coverage_bound(args.alpha, p.n_calib)
            rows.append((p.n_calib, p.mean, p.std, b.lower, b.upper))
    run.finish({args.out: formats.format_table(f"conformal-uq sweep {args.mode}", run.run_id,
                                               cols, rows)})


def cmd_compare(args):
    seed = _default_seed() if args.seed is None else args.seed
    params = {"evidence_scale": args.evidence_scale, "bins": args.bins}
    if args.mcd_stacks is None:
        params.update(passes=args.passes, jitter=args.jitter)
    run = Run("compare", params, seed if args.mcd_stacks is None else None)
    data = _labeled(run, args)
    with open(run.read("calibrator", args.calibrator), encoding="utf-8") as f:
        c = load_calibrator(f.read())
    if args.mcd_stacks is not None:
        stacks = formats.read_stacks(run.read("mcd_stacks", args.mcd_stacks))
    else:
        stacks = generate_mcd_stacks(data.scores, args.passes, args.jitter, seed)
    evidence = generate_evidence(data, args.evidence_scale)
    r = compare_methods(data, stacks, evidence, c)

    cols = ("method", "mean_correct", "std_correct", "mean_wrong", "std_wrong",
            "n_correct", "n_wrong", "excluded_empty")
    rows = []
    for name in r.METHODS:
        s = getattr(r, name)
        _check(s.n_total == data.n, f"{name} stratification lost samples")
        rows.append((name, s.mean_correct, s.std_correct, s.mean_wrong, s.std_wrong,
                     s.n_correct, s.n_wrong, s.excluded_empty))

    edges = np.linspace(0.0, 1.0, args.bins + 1)
    hist_cols = ["bin_lo", "bin_hi"]
    counts = []
    for j, name in enumerate(r.METHODS):
        ok = (r.predicted[:, j] == data.labels)
        keep = ~r.empty if name == "cp" else np.ones(data.n, bool)
        for label, mask in (("correct", ok & keep), ("wrong", ~ok & keep)):
            hist_cols.append(f"{name}_{label}")
            counts.append(histogram(r.uncertainties[mask, j], args.bins))
    hist_rows = [(edges[b], edges[b + 1], *(int(c_[b]) for c_ in counts))
                 for b in range(args.bins)]

    sample_cols = ("index", "label", "cp_pred", "cp_u", "cp_empty",
                   "mcd_pred", "mcd_u", "edl_pred", "edl_u")
    sample_rows = [
        (i, int(data.labels[i]), int(r.predicted[i, 0]), float(r.uncertainties[i, 0]),
         int(r.empty[i]), int(r.predicted[i, 1]), float(r.uncertainties[i, 1]),
         int(r.predicted[i, 2]), float(r.uncertainties[i, 2]))
        for i in range(data.n)
    ]
    rid = run.run_id
    run.finish({
        args.out: formats.format_table("conformal-uq compare", rid, cols, rows),
        f"{args.out}.hist.csv": formats.format_table("conformal-uq compare histogram", rid,
                                                     hist_cols, hist_rows),
        f"{args.out}.samples.csv": formats.format_table("conformal-uq compare samples", rid,
                                                        sample_cols, sample_rows),
    })


# -- parser -------------------------------------------------------------------

def build_parser():
    parser = argparse.ArgumentParser(prog="conformal-uq", description=__doc__.split("\n")[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("validate", help="check score, label and calibrator files")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels")
    p.add_argument("--calibrator")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("synth", help="generate synthetic labeled scores")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--concentration", type=float, default=1.0)
    p.add_argument("--signal", type=float, default=1.0)
    p.add_argument("--seed", type=int, default=None, help=f"default: ${SEED_ENV} or 0")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="fit a conformal calibrator")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--alpha", type=_alpha, required=True)
    _add_scoring_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("predict", help="build prediction sets")
    p.add_argument("--scores", required=True)
    p.add_argument("--calibrator", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="coverage, set sizes and stratified uncertainty")
    p.add_argument("--predictions", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("sweep", help="alpha or calibration-size sweep")
    p.add_argument("--mode", choices=("alpha", "calibsize"), required=True)
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--grid", required=True,
                   help="comma-separated alphas (alpha mode) or calibration sizes (calibsize)")
    p.add_argument("--resamples", type=int, default=100)
    p.add_argument("--alpha", type=_alpha, default=None)
    p.add_argument("--n-calib", "--n_calib", dest="n_calib", type=int, default=None)
    p.add_argument("--n-test", "--n_test", dest="n_test", type=int, default=None)
    _add_scoring_flags(p)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="CP vs MC dropout vs evidential uncertainty")
    p.add_argument("--scores", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--calibrator", required=True)
    p.add_argument("--mcd-stacks", "--mcd_stacks", dest="mcd_stacks", default=None,
                   help="stack file; otherwise stacks are simulated from --passes/--jitter")
    p.add_argument("--passes", type=int, default=100)
    p.add_argument("--jitter", type=float, default=0.3)
    p.add_argument("--evidence-scale", "--evidence_scale", dest="evidence_scale",
                   type=float, default=10.0)
    p.add_argument("--bins", type=int, default=10)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_compare)
    return parser


def _parse_grid(args, parser):
    if getattr(args, "command", None) != "sweep":
        return
    try:
        args.grid = _floats(args.grid) if args.mode == "alpha" else _ints(args.grid)
    except argparse.ArgumentTypeError as exc:
        parser.error(str(exc))


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    _parse_grid(args, parser)
    try:
        args.func(args)
    except (UsageError, InvalidConfig) as exc:
        print(f"conformal-uq {args.command}: usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataValidationError, OSError, ValueError) as exc:
        print(f"conformal-uq {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA
    except Exception as exc:  # InvariantViolation, AssertionError or a bug
        print(f"conformal-uq {args.command}: invariant violated: {type(exc).__name__}: {exc}",
              file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
