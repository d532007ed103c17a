"""Command-line interface: simulate | fit | select | score | moments.

Exit codes: 0 success, 1 usage or validation error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import DataError, Dataset, Schema, SchemaError, load_dataset, parse_schema
from .estimator import FitConfig, FitError, fit
from .evaluation import rank_variables_by_kl
from .gmm import MomentVectorLayout, estimate_diag_S, weights_from_S
from .moments import DirichletPrior, compute_stats, lambda_diagonals
from .params import ModelParams
from .selection import sweep_k
from .simulate import contaminate, sample_dataset, spec_from_dict

log = logging.getLogger("meld")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"must be a positive integer, got {text}")
    return value


def _fraction(text: str) -> float:
    value = float(text)
    if not 0.0 <= value <= 1.0:
        raise argparse.ArgumentTypeError(f"must lie in [0, 1], got {text}")
    return value


def _k_list(text: str) -> list[int]:
    ks = []
    for part in text.split(","):
        part = part.strip()
        if "-" in part:
            lo, hi = part.split("-", 1)
            ks.extend(range(int(lo), int(hi) + 1))
        elif part:
            ks.append(int(part))
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError(f"k list must hold positive integers, got {text!r}")
    return ks


def _alpha(text: str) -> list[float]:
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"alpha must be numbers, got {text!r}") from None
    if not values or any(v <= 0 for v in values):
        raise argparse.ArgumentTypeError(f"alpha entries must be positive, got {text!r}")
    return values


def _alpha_for_k(alpha: list[float] | None, k: int) -> tuple[float, ...] | None:
    if alpha is None:
        return None
    if len(alpha) == 1:
        return (alpha[0],) * k
    if len(alpha) != k:
        raise UsageError(f"--alpha has {len(alpha)} entries but --k is {k}")
    return tuple(alpha)


def _read_text(path: str, what: str) -> str:
    try:
        return Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read {what} {path}: {exc.strerror}") from None


def _load_inputs(args) -> tuple[Schema, Dataset]:
    schema = parse_schema(_read_text(args.schema, "schema"))
    dataset = load_dataset(_read_text(args.data, "data"), schema)
    return schema, dataset


def _write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _rows_to_csv(rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    for row in rows:
        writer.writerow(["" if v is None else v for v in row])
    return buf.getvalue()


def cmd_simulate(args) -> int:
    try:
        desc = json.loads(_read_text(args.spec, "spec"))
    except json.JSONDecodeError as exc:
        raise UsageError(f"spec {args.spec} is not valid JSON: {exc}") from None
    if args.param_seed is not None:
        desc["param_seed"] = args.param_seed
    spec = spec_from_dict(desc)
    sim = sample_dataset(spec, args.n, args.seed)
    if args.contaminate:
        seed = args.contaminate_seed if args.contaminate_seed is not None else args.seed + 1
        sim = contaminate(sim, args.contaminate, seed)
    out = Path(args.out_dir)
    _write(out / "data.csv", sim.dataset.to_csv())
    _write(out / "schema.json", sim.dataset.schema.to_json() + "\n")
    truth = sim.truth_dict()
    truth["contamination"] = args.contaminate
    _write(out / "truth.json", _dump_json(truth))
    print(f"wrote {sim.n} samples of {sim.dataset.p} variables to {out}")
    return EXIT_OK


def _fit_config(args, k: int) -> FitConfig:
    return FitConfig(
        k=k,
        order=args.order,
        stages=args.stages,
        tol=args.tol,
        max_sweeps=args.max_sweeps,
        seed=args.seed,
        alpha=_alpha_for_k(args.alpha, k),
        variance_floor=args.variance_floor,
    )


def cmd_fit(args) -> int:
    schema, dataset = _load_inputs(args)
    config = _fit_config(args, args.k)
    report = fit(dataset, config)
    _write(Path(args.out), _dump_json(report.to_dict()))
    if args.tables_dir:
        tables = Path(args.tables_dir)
        for j, spec in enumerate(schema):
            rows = [["level", *[f"component{h + 1}" for h in range(config.k)]]]
            labels = spec.levels if spec.is_categorical else ("mean",)
            for label, values in zip(labels, report.params[j]):
                rows.append([label, *[repr(float(v)) for v in values]])
            _write(tables / f"{spec.name}.csv", _rows_to_csv(rows))
    for stage in report.stages:
        print(f"stage {stage.stage}: Q={stage.objective[-1]:.6g} FI={stage.fi:.6f} "
              f"sweeps={stage.sweeps} converged={stage.converged}")
    return EXIT_OK


def cmd_select(args) -> int:
    _, dataset = _load_inputs(args)
    base_k = min(args.k_list)
    if args.alpha is not None and len(args.alpha) != 1:
        raise UsageError("select takes a single per-component --alpha value")
    config = _fit_config(args, base_k)
    report = sweep_k(dataset, args.k_list, config, criterion_stage=args.criterion_stage,
                     n_jobs=args.jobs)
    _write(Path(args.out), _rows_to_csv(report.to_rows()))
    if report.chosen_k is None:
        print("no k could be fitted", file=sys.stderr)
        return EXIT_RUNTIME
    print(f"chosen k={report.chosen_k}")
    return EXIT_OK


def _load_fit(path: str, schema: Schema) -> ModelParams:
    try:
        desc = json.loads(_read_text(path, "fit file"))
        stage = desc["stages"][-1]
        return ModelParams.from_dict(stage["params"], schema)
    except (json.JSONDecodeError, KeyError, IndexError, TypeError, ValueError) as exc:
        raise UsageError(f"cannot parse fit file {path}: {exc}") from None


def cmd_score(args) -> int:
    schema, dataset = _load_inputs(args)
    params = _load_fit(args.fit, schema)
    ranking = rank_variables_by_kl(params, dataset)
    if not ranking:
        print("warning: no categorical variables to score", file=sys.stderr)
    rows = [["rank", "variable", "ave_kl"]]
    rows += [[r + 1, schema[j].name, repr(score)] for r, (j, score) in enumerate(ranking)]
    _write(Path(args.out), _rows_to_csv(rows))
    top = ", ".join(schema[j].name for j, _ in ranking[: args.top])
    if top:
        print(f"top {min(args.top, len(ranking))}: {top}")
    return EXIT_OK


def cmd_moments(args) -> int:
    schema, dataset = _load_inputs(args)
    alpha = _alpha_for_k(args.alpha or [0.1], args.k)
    prior = DirichletPrior(np.asarray(alpha))
    if schema.p < args.order:
        raise UsageError(f"order-{args.order} moments need at least {args.order} variables, got p={schema.p}")
    stats = compute_stats(dataset, prior, args.order)
    out = stats.to_dict()
    if args.fit:
        params = _load_fit(args.fit, schema)
        layout = MomentVectorLayout.build(schema, args.order)
        diag_s = estimate_diag_S(dataset, params, stats, lambda_diagonals(prior), layout)
        out["diag_S"] = diag_s.tolist()
        out["weights"] = weights_from_S(diag_s, args.variance_floor).values.tolist()
    _write(Path(args.out), _dump_json(out))
    print(f"moment statistics for n={stats.n}, p={stats.p}, order {stats.order} written to {args.out}")
    return EXIT_OK


def _add_data_args(sub):
    sub.add_argument("--data", required=True, help="delimited table with a header row")
    sub.add_argument("--schema", required=True, help="JSON schema descriptor")


def _add_fit_args(sub):
    sub.add_argument("--order", type=int, choices=(2, 3), default=2)
    sub.add_argument("--stages", type=int, choices=(1, 2), default=1)
    sub.add_argument("--alpha", type=_alpha, default=None,
                     help="Dirichlet parameter: one value per component or a single shared value (default 0.1)")
    sub.add_argument("--seed", type=int, default=0)
    sub.add_argument("--tol", type=float, default=FitConfig.tol)
    sub.add_argument("--max-sweeps", type=_positive_int, default=FitConfig.max_sweeps)
    sub.add_argument("--variance-floor", type=float, default=FitConfig.variance_floor)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="meld", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    sim = subs.add_parser("simulate", help="sample a dataset from a generative spec")
    sim.add_argument("--spec", required=True)
    sim.add_argument("--n", type=_positive_int, required=True)
    sim.add_argument("--seed", type=int, default=0)
    sim.add_argument("--param-seed", type=int, default=None,
                     help="override the spec's seed for Dirichlet-drawn component parameters")
    sim.add_argument("--contaminate", type=_fraction, default=0.0,
                     help="fraction of categorical cells redrawn uniformly")
    sim.add_argument("--contaminate-seed", type=int, default=None)
    sim.add_argument("--out-dir", required=True)
    sim.set_defaults(func=cmd_simulate)

    f = subs.add_parser("fit", help="estimate component means for a fixed k")
    _add_data_args(f)
    f.add_argument("--k", type=_positive_int, required=True)
    _add_fit_args(f)
    f.add_argument("--out", required=True)
    f.add_argument("--tables-dir", default=None, help="also write one CSV per variable")
    f.set_defaults(func=cmd_fit)

    s = subs.add_parser("select", help="choose k by the fitness index")
    _add_data_args(s)
    s.add_argument("--k-list", type=_k_list, default=[1, 2, 3, 4, 5], help="e.g. 1-5 or 1,2,4")
    _add_fit_args(s)
    s.add_argument("--criterion-stage", type=int, choices=(1, 2), default=1)
    s.add_argument("--jobs", type=_positive_int, default=1)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_select)

    sc = subs.add_parser("score", help="rank categorical variables by averaged KL")
    _add_data_args(sc)
    sc.add_argument("--fit", required=True)
    sc.add_argument("--top", type=_positive_int, default=8)
    sc.add_argument("--out", required=True)
    sc.set_defaults(func=cmd_score)

    m = subs.add_parser("moments", help="dump empirical moment statistics")
    _add_data_args(m)
    m.add_argument("--k", type=_positive_int, default=3)
    m.add_argument("--alpha", type=_alpha, default=None)
    m.add_argument("--order", type=int, choices=(2, 3), default=2)
    m.add_argument("--fit", default=None, help="also dump diagonal weights at this fit")
    m.add_argument("--variance-floor", type=float, default=FitConfig.variance_floor)
    m.add_argument("--out", required=True)
    m.set_defaults(func=cmd_moments)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    if getattr(args, "criterion_stage", 1) > getattr(args, "stages", 1):
        print(f"{parser.prog}: error: --criterion-stage 2 requires --stages 2", file=sys.stderr)
        return EXIT_USAGE
    try:
        return args.func(args)
    except (UsageError, SchemaError, DataError, ValueError) as exc:
        print(f"{parser.prog} {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (FitError, OSError, FloatingPointError) as exc:
        print(f"{parser.prog} {args.command}: failed: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
