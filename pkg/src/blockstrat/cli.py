"""Command-line entry point.

Exit status: 0 on success, 1 on usage errors, 2 on data errors.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .contexts import ContextSchema, DecisionNetwork, SchemaError, build_network, default_schemas, read_schema_file
from .evaluation import EvalReport, MMSBMSpec, NaiveSpec, SBMSpec, compare, cv_accuracy, grid_select, kfold_split
from .ingest import LogFormatError, dataset_summary, read_log, write_log
from .io import write_json, write_matrix_csv
from .mmsbm import FitConfig, FittedModel
from .mmsbm import fit as fit_mmsbm
from .sbm import AnnealConfig, FittedSBM, anneal_fit
from .strategy import PATTERNS, analyze
from .synth import PlantedSpec, generate

log = logging.getLogger("blockstrat")


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _int_range(text: str) -> list[int]:
    """``"1-10"`` or ``"1,2,4"`` -> list of ints."""
    out: list[int] = []
    for part in text.split(","):
        if "-" in part:
            lo, hi = part.split("-", 1)
            out.extend(range(int(lo), int(hi) + 1))
        elif part.strip():
            out.append(int(part))
    if not out:
        raise argparse.ArgumentTypeError(f"empty range {text!r}")
    return out


def _load_histories(path):
    p = Path(path)
    if not p.exists():
        raise UsageError(f"input file {path} does not exist")
    try:
        histories = read_log(p)
    except LogFormatError as exc:
        raise DataError(f"{path}: {exc}") from None
    if not histories:
        raise DataError(f"{path}: no records")
    return histories


def _schemas(args) -> list[ContextSchema]:
    try:
        if getattr(args, "schema_file", None):
            if not Path(args.schema_file).exists():
                raise UsageError(f"schema file {args.schema_file} does not exist")
            return read_schema_file(args.schema_file)
        if getattr(args, "schema", None):
            return [ContextSchema.parse(args.schema)]
    except SchemaError as exc:
        raise DataError(f"schema: {exc}") from None
    return default_schemas()


def _one_schema(args) -> ContextSchema:
    schemas = _schemas(args)
    if getattr(args, "schema", None) is None and getattr(args, "schema_file", None) is None:
        return ContextSchema.parse("BCE")
    if len(schemas) != 1:
        raise UsageError("this command needs exactly one schema")
    return schemas[0]


def _fit_config(args) -> FitConfig:
    return FitConfig(
        max_iterations=args.max_iter,
        rel_tolerance=args.tol,
        restarts=args.restarts,
        seed=args.seed,
    )


def _anneal_config(args) -> AnnealConfig:
    return AnnealConfig(seed=args.seed)


def _model_spec(args, kind: str | None = None):
    kind = kind or args.model
    if kind == "naive":
        return NaiveSpec()
    if kind == "sbm":
        return SBMSpec(args.K, args.L, _anneal_config(args))
    return MMSBMSpec(args.K, args.L, _fit_config(args))


def _run_config(args) -> dict:
    cfg = {k: v for k, v in sorted(vars(args).items()) if k not in ("func", "verbose")}
    cfg["version"] = __version__
    return cfg


def _out_dir(path) -> Path:
    d = Path(path)
    d.mkdir(parents=True, exist_ok=True)
    return d


def cmd_ingest_check(args) -> str:
    histories = _load_histories(args.input)
    s = dataset_summary(histories)
    expert = "n/a" if s.expert_accuracy is None else f"{s.expert_accuracy:.3f}"
    return (
        f"{s.n_players} players, {s.n_records} records, UP fraction {s.up_fraction:.3f}, "
        f"expert consulted {s.consult_fraction:.3f}, expert accuracy {expert}"
    )


def cmd_synth(args) -> str:
    if not Path(args.spec).exists():
        raise UsageError(f"spec file {args.spec} does not exist")
    try:
        spec = PlantedSpec.load(args.spec)
    except (ValueError, KeyError, TypeError) as exc:
        raise DataError(f"{args.spec}: {exc}") from None
    spec.seed = args.seed
    histories = generate(spec)
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        write_log(histories, fh)
    return f"wrote {len(histories)} players x {spec.n_rounds} rounds to {args.out}"


def cmd_fit(args) -> str:
    histories = _load_histories(args.input)
    schema = _one_schema(args)
    network = build_network(histories, schema)
    if network.n_records == 0:
        raise DataError(f"schema {schema.name} leaves no usable rounds")
    if args.model == "sbm":
        partition, diag = anneal_fit(network, min(args.K, network.n_players), min(args.L, network.n_contexts), _anneal_config(args))
        model = FittedSBM.from_fit(network, partition)
        doc = model.to_json()
        doc.update(schema=schema.name, log_posterior=model.log_posterior, run_config=_run_config(args))
        write_json(args.out, doc)
        return f"SBM K={partition.K} L={partition.L} log posterior {model.log_posterior:.6f} -> {args.out}"
    config = _fit_config(args)
    params, diag = fit_mmsbm(network, args.K, args.L, config)
    model = FittedModel.from_fit(network, params, config)
    doc = model.to_json()
    doc.update(
        schema=schema.name,
        run_config=_run_config(args),
        diagnostics={
            "best_run": diag.best_run,
            "converged": [r.converged for r in diag.runs],
            "iterations": [r.iterations for r in diag.runs],
            "final_log_posterior": [r.final for r in diag.runs],
        },
    )
    write_json(args.out, doc)
    return f"MMSBM K={params.K} L={params.L} log posterior {model.final_log_posterior:.6f} -> {args.out}"


def _load_model(path) -> tuple[FittedModel, ContextSchema]:
    if not Path(path).exists():
        raise UsageError(f"model file {path} does not exist")
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    try:
        model = FittedModel.from_json(doc)
        schema = ContextSchema.parse(doc["schema"]) if "schema" in doc else None
    except (KeyError, ValueError) as exc:
        raise DataError(f"{path}: not an MMSBM model file ({exc})") from None
    if schema is None:
        raise DataError(f"{path}: model file lacks its schema")
    return model, schema


def cmd_predict(args) -> str:
    model, schema = _load_model(args.model)
    histories = _load_histories(args.input)
    network = build_network(histories, schema)
    n_fallback = 0
    correct = 0
    with open(args.out, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["session_id", "player_id", "round", "context", "prediction", "fallback", "guess"])
        for idx, key in enumerate(network.record_keys):
            player = network.players[network.record_player[idx]]
            context = network.contexts[network.record_context[idx]]
            pred, fallback = model.predict(player, context)
            n_fallback += fallback
            actual = "UP" if network.record_up[idx] else "DOWN"
            correct += pred.value == actual
            w.writerow([*key, str(context), pred.value, "true" if fallback else "false", actual])
    n = max(network.n_records, 1)
    return f"{network.n_records} predictions ({n_fallback} fallback), accuracy {correct / n:.4f} -> {args.out}"


def cmd_cv(args) -> str:
    histories = _load_histories(args.input)
    schema = _one_schema(args)
    folds = kfold_split(histories, args.folds, args.seed)
    kinds = args.model.split(",")
    report = EvalReport(schemas=[schema.name], n_folds=args.folds, seed=args.seed, models=[], accuracies={})
    network = build_network(histories, schema)
    parts = []
    for kind in kinds:
        spec = _model_spec(args, kind)
        acc = cv_accuracy(network, None, spec, folds)
        report.models.append(spec.name)
        report.accuracies[spec.name] = {schema.name: acc.tolist()}
        parts.append(f"{spec.name} {np.nanmean(acc):.4f}")
    doc = report.to_json()
    doc["run_config"] = _run_config(args)
    write_json(args.out, doc)
    return f"{schema.name} {args.folds}-fold mean accuracy: " + ", ".join(parts) + f" -> {args.out}"


def cmd_compare_reps(args) -> str:
    histories = _load_histories(args.input)
    schemas = _schemas(args)
    models = [_model_spec(args, k) for k in args.models.split(",")]
    report = compare(histories, schemas, models, args.folds, args.seed, q_model=models[-1].name)
    out = _out_dir(args.out_dir)
    doc = report.to_json()
    doc["run_config"] = _run_config(args)
    write_json(out / "report.json", doc)
    if report.Q is not None:
        write_matrix_csv(out / "Q.csv", report.Q, report.q_names, report.q_names)
    best = max(report.schemas, key=lambda s: report.mean_accuracy(models[-1].name, s))
    return f"{len(schemas)} schemas compared; best {best} ({report.mean_accuracy(models[-1].name, best):.4f}) -> {out}"


def cmd_grid(args) -> str:
    histories = _load_histories(args.input)
    schema = _one_schema(args)
    folds = kfold_split(histories, args.folds, args.seed)
    K, L, grid = grid_select(histories, schema, args.K_range, args.L_range, folds, _fit_config(args), args.tie_tolerance)
    report = EvalReport(schemas=[schema.name], n_folds=args.folds, seed=args.seed, models=["MMSBM"], accuracies={}, grid=grid)
    doc = report.to_json()
    doc["run_config"] = _run_config(args)
    write_json(args.out, doc)
    return f"selected K={K} L={L} -> {args.out}"


def _aligned_network(model: FittedModel, schema: ContextSchema, input_path) -> DecisionNetwork:
    network = build_network(_load_histories(input_path), schema)
    if tuple(map(str, network.players)) != tuple(map(str, model.players)) or tuple(
        map(str, network.contexts)
    ) != tuple(map(str, model.contexts)):
        raise DataError("input data does not match the nodes the model was fit on")
    return network


def cmd_analyze(args) -> str:
    model, schema = _load_model(args.model)
    if not {"B", "C", "E"} <= set(schema.tags):
        raise DataError(f"analysis needs a model fit on a schema containing B, C and E (got {schema.name})")
    network = _aligned_network(model, schema, args.input)
    report = analyze(model, network, (args.low, args.high))
    out = _out_dir(args.out_dir)
    doc = report.to_json()
    doc["run_config"] = _run_config(args)
    write_json(out / "strategy.json", doc)
    groups = [f"k{k + 1}" for k in range(model.params.K)]
    write_matrix_csv(out / "phat.csv", report.phat, groups, [str(c) for c in network.contexts])
    write_matrix_csv(out / "M.csv", report.scores, groups, [p.value for p in PATTERNS])
    write_matrix_csv(
        out / "players.csv",
        np.column_stack([report.entropy, report.D]),
        [str(p) for p in network.players],
        ["entropy", "D"],
    )
    labels = ", ".join(f"k{k + 1}={lab.value}" for k, lab in enumerate(report.labels))
    return f"groups: {labels} -> {out}"


def _add_fit_options(p, need_seed=True):
    p.add_argument("--K", type=int, default=4)
    p.add_argument("--L", type=int, default=8)
    p.add_argument("--restarts", type=int, default=10)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--tol", type=float, default=1e-8)
    if need_seed:
        p.add_argument("--seed", type=int, required=True)


def _add_schema_options(p):
    g = p.add_mutually_exclusive_group()
    g.add_argument("--schema", help="feature tags, e.g. BCE")
    g.add_argument("--schema-file", help="file with one schema per line")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="blockstrat", description="Infer decision strategies with bipartite block models.")
    parser.add_argument("--version", action="version", version=__version__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("ingest-check", help="validate a log and print summary statistics")
    p.add_argument("--input", required=True)
    p.set_defaults(func=cmd_ingest_check)

    p = sub.add_parser("synth", help="generate a synthetic log from a planted spec")
    p.add_argument("--spec", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("fit", help="fit an MMSBM (or SBM) and save it")
    p.add_argument("--input", required=True)
    _add_schema_options(p)
    p.add_argument("--model", choices=("mmsbm", "sbm"), default="mmsbm")
    _add_fit_options(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("predict", help="predict guesses with a saved model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("cv", help="k-fold cross-validated accuracy")
    p.add_argument("--input", required=True)
    _add_schema_options(p)
    p.add_argument("--model", default="naive,sbm,mmsbm", help="comma list of naive, sbm, mmsbm")
    p.add_argument("--folds", type=int, default=5)
    _add_fit_options(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_cv)

    p = sub.add_parser("compare-reps", help="compare context schemas by CV accuracy (Q matrix)")
    p.add_argument("--input", required=True)
    _add_schema_options(p)
    p.add_argument("--models", default="mmsbm", help="comma list; the last one feeds the Q matrix")
    p.add_argument("--folds", type=int, default=5)
    _add_fit_options(p)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_compare_reps)

    p = sub.add_parser("grid", help="select K and L by CV accuracy")
    p.add_argument("--input", required=True)
    _add_schema_options(p)
    p.add_argument("--K-range", type=_int_range, default=_int_range("1-10"))
    p.add_argument("--L-range", type=_int_range, default=_int_range("1-10"))
    p.add_argument("--tie-tolerance", type=float, default=0.005)
    p.add_argument("--folds", type=int, default=5)
    _add_fit_options(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("analyze", help="strategy report of a saved [B,C,E] model")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="the log the model was fit on")
    p.add_argument("--low", type=float, default=0.35, help="LOW/MEDIUM entropy boundary (fraction of log K)")
    p.add_argument("--high", type=float, default=0.7, help="MEDIUM/HIGH entropy boundary (fraction of log K)")
    p.add_argument("--out-dir", required=True)
    p.set_defaults(func=cmd_analyze)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"blockstrat: error: {exc}", file=sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        print(args.func(args))
    except UsageError as exc:
        print(f"blockstrat: error: {exc}", file=sys.stderr)
        return 1
    except (DataError, SchemaError, LogFormatError) as exc:
        print(f"blockstrat: data error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
