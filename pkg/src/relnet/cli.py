"""relnet command line: generate | train | eval | ablate | gradcheck.

Exit codes: 0 success, 2 config error, 3 I/O error, 4 divergence,
5 gradient-check failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .diagnostics import LAYER_CHECKS, run_suite
from .market import DatasetError, TargetScaling, generate_market, load_dataset, save_dataset, temporal_split
from .model import ConfigError, RelNetModel, build_variant
from .nn import CheckpointError
from .nn.checkpoint import atomic_write_text
from .training import evaluate_r2, prepare_split, render_table, run_ablation, train

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_DIVERGED, EXIT_GRADCHECK = 0, 2, 3, 4, 5

log = logging.getLogger("relnet")


class CliError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def _flag(key: str) -> str:
    return "--" + key.replace("_", "-")


def build_parser() -> argparse.ArgumentParser:
    shared = argparse.ArgumentParser(add_help=False)
    shared.add_argument("--config", help="flat 'key = value' config file")
    for key in cfgmod.ALL_KEYS:
        # parsed later so file values and flags go through the same converters
        shared.add_argument(_flag(key), dest=key, default=None, metavar=key.upper())
    parser = argparse.ArgumentParser(prog="relnet", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("generate", parents=[shared], help="write a synthetic market dataset")
    sub.add_parser("train", parents=[shared], help="train one variant and write a checkpoint")
    sub.add_parser("eval", parents=[shared], help="evaluate a checkpoint on the test split")
    sub.add_parser("ablate", parents=[shared], help="train DNN / DNN+MTL / DNN+RN+MTL over seeds")
    sub.add_parser("gradcheck", parents=[shared], help="finite-difference check of all layer types")
    return parser


def resolve_config(args) -> dict:
    try:
        file_values = cfgmod.read_config_file(args.config) if args.config else {}
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read config file: {exc}") from exc
    except cfgmod.ConfigFileError as exc:
        raise CliError(EXIT_CONFIG, str(exc)) from exc
    flags = {}
    for key in cfgmod.ALL_KEYS:
        raw = getattr(args, key, None)
        if raw is not None:
            try:
                flags[key] = cfgmod.parse_value(key, raw)
            except cfgmod.ConfigFileError as exc:
                raise CliError(EXIT_CONFIG, f"{_flag(key)}: {exc}") from exc
    return cfgmod.effective_config(file_values, flags)


def _config_error(exc) -> CliError:
    return CliError(EXIT_CONFIG, f"invalid configuration: {exc}")


def _write_json(path, doc) -> None:
    try:
        atomic_write_text(path, json.dumps(doc, indent=2, sort_keys=True, allow_nan=False) + "\n")
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {path}: {exc}") from exc


def _load_dataset(path):
    try:
        return load_dataset(path)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read dataset {path}: {exc}") from exc
    except DatasetError as exc:
        raise CliError(EXIT_IO, f"invalid dataset {path}: {exc}") from exc


def _split(dataset, run, n_related):
    try:
        temporal_split(dataset, run["split_day"])
        return prepare_split(dataset, n_related, run["split_day"], run["offset_days"])
    except DatasetError as exc:
        raise CliError(EXIT_IO, str(exc)) from exc
    except ValueError as exc:
        raise _config_error(exc) from exc


# -- commands ---------------------------------------------------------------------


def cmd_generate(run: dict) -> int:
    try:
        gen = cfgmod.generator_config(run).validate()
    except (TypeError, ValueError) as exc:
        raise _config_error(exc) from exc
    out = run["out"] or run["dataset"]
    dataset = generate_market(gen)
    try:
        save_dataset(dataset, out)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {out}: {exc}") from exc
    y = np.log([r.view_count for r in dataset.records])
    print(f"wrote {len(dataset)} series to {out} (input_dim {dataset.encoder.input_dim}); "
          f"log view count mean {y.mean():.4f} std {y.std():.4f} min {y.min():.4f} max {y.max():.4f}")
    return EXIT_OK


def cmd_train(run: dict) -> int:
    dataset = _load_dataset(run["dataset"])
    try:
        mcfg = cfgmod.model_config(run, dataset.encoder.input_dim)
        tcfg = cfgmod.train_config(run)
    except (TypeError, ValueError) as exc:
        raise _config_error(exc) from exc
    split = _split(dataset, run, mcfg.n_related)
    model = build_variant(mcfg.replace(**split.scaling.model_overrides()))
    report = train(model, split.train, tcfg)
    ckpt = run["out"] or run["checkpoint"]
    report_path = run["report"] or f"{ckpt}.report.json"
    doc = {"config": run, "train": report.to_dict(), "scaling": split.scaling.to_dict()}
    if report.diverged:
        _write_json(report_path, doc)
        print(f"training diverged at epoch {report.divergence_epoch}", file=sys.stderr)
        return EXIT_DIVERGED
    ev = evaluate_r2(model, split.test, run["offset_days"])
    try:
        model.save(ckpt, extra={"run": run})
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write {ckpt}: {exc}") from exc
    report.checkpoint = str(ckpt)
    doc["train"] = report.to_dict()
    doc["eval"] = ev.to_dict()
    _write_json(report_path, doc)
    print(f"final train loss {report.total[-1]:.6f}")
    print(f"test R^2 {ev.r_squared:.6f} (n={ev.n_samples}, variant {ev.variant})")
    return EXIT_OK


def cmd_eval(run: dict, explicit: set) -> int:
    path = run["checkpoint"]
    try:
        model = RelNetModel.load(path)
        saved_run = json.loads(Path(path).read_text(encoding="utf-8")).get("run", {})
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot read checkpoint {path}: {exc}") from exc
    except (CheckpointError, KeyError, TypeError) as exc:
        raise CliError(EXIT_IO, f"corrupt checkpoint {path}: {exc}") from exc
    except ValueError as exc:
        raise CliError(EXIT_IO, f"corrupt checkpoint {path}: {exc}") from exc
    # split settings default to what the model was trained with
    for key in ("split_day", "offset_days"):
        if key not in explicit and key in saved_run:
            run[key] = saved_run[key]
    dataset = _load_dataset(run["dataset"])
    if dataset.encoder.input_dim != model.config.input_dim:
        raise CliError(EXIT_CONFIG, f"checkpoint input_dim {model.config.input_dim} does not match "
                                    f"dataset input_dim {dataset.encoder.input_dim}")
    split = _split(dataset, run, model.config.n_related)
    ev = evaluate_r2(model, split.test, run["offset_days"])
    out = run["out"] or run["report"] or f"{path}.eval.json"
    _write_json(out, {"config": run, "eval": ev.to_dict()})
    print(f"test R^2 {ev.r_squared:.6f} (n={ev.n_samples}, variant {ev.variant})")
    return EXIT_OK


def cmd_ablate(run: dict) -> int:
    dataset = _load_dataset(run["dataset"])
    try:
        mcfg = cfgmod.model_config(run, dataset.encoder.input_dim)
        tcfg = cfgmod.train_config(run)
        if mcfg.n_related < 1:
            raise ValueError("ablation includes dnn_rn_mtl, which needs n_related >= 1")
        mcfg.replace(variant="dnn_rn_mtl").validate()
        temporal_split(dataset, run["split_day"])
    except (TypeError, ValueError) as exc:
        raise _config_error(exc) from exc
    report = run_ablation(dataset, mcfg, tcfg, run["seeds"], run["split_day"], run["offsets"])
    report.config = run
    out = run["out"] or run["report"] or "ablation.json"
    _write_json(out, report.to_dict())
    table = render_table(report)
    try:
        atomic_write_text(Path(out).with_suffix(".txt"), table)
    except OSError as exc:
        raise CliError(EXIT_IO, f"cannot write table: {exc}") from exc
    print(table, end="")
    return EXIT_OK


def cmd_gradcheck(run: dict) -> int:
    if run["layer"] != "all" and run["layer"] not in LAYER_CHECKS:
        raise CliError(EXIT_CONFIG, f"--layer must be 'all' or one of {', '.join(LAYER_CHECKS)}")
    reports = run_suite(run["layer"], run["step"], run["tolerance"], run["seed"])
    worst_name, worst_err, failed = "", 0.0, False
    for name, rep in reports.items():
        pname, err = rep.worst
        status = "pass" if rep.passed else "FAIL"
        print(f"{status} {name:<18} max relative error {err:.3e} ({pname}){' ' + rep.message if rep.message else ''}")
        failed |= not rep.passed
        if err >= worst_err:
            worst_name, worst_err = pname, err
    if run["out"]:
        _write_json(run["out"], {
            "config": run,
            "checks": {k: {"passed": r.passed, "errors": r.errors, "message": r.message} for k, r in reports.items()},
        })
    print(f"max relative error {worst_err:.3e} ({worst_name}), tolerance {run['tolerance']:g}")
    if failed:
        print(f"gradient check failed: worst parameter {worst_name} error {worst_err:.3e}", file=sys.stderr)
        return EXIT_GRADCHECK
    return EXIT_OK


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        run = resolve_config(args)
        explicit = {k for k in cfgmod.ALL_KEYS if getattr(args, k, None) is not None}
        if args.command == "generate":
            return cmd_generate(run)
        if args.command == "train":
            return cmd_train(run)
        if args.command == "eval":
            return cmd_eval(run, explicit)
        if args.command == "ablate":
            return cmd_ablate(run)
        return cmd_gradcheck(run)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except ConfigError as exc:
        print(f"error: invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
