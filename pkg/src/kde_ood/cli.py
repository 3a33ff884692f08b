"""Command-line entry point.

Verbs: fit, select-k, train-fusion, score, evaluate. Flags mirror the JSON
config file keys and override them. Exit codes are categorized:

    0  success
    1  unexpected failure
    2  configuration problem (bad flags, invalid config, unmet regime needs)
    3  malformed input file (feature or model format, checksum)
    4  inconsistent inputs (layer mismatch, N > M, missing fusion stage)
    5  I/O failure
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from . import pipeline
from .errors import ConfigError, KdeOodError, ModelFormatError, ValidationError
from .features import FeatureFormatError

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_FORMAT = 3
EXIT_VALIDATION = 4
EXIT_IO = 5


def _k_candidate_list(text: str) -> tuple:
    try:
        values = tuple(int(t) for t in text.split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated integers, got {text!r}"
        ) from None
    if not values:
        raise argparse.ArgumentTypeError("empty k candidate list")
    return values


def _add_config_flags(sub, include_model=False, include_features=False):
    sub.add_argument("--config", metavar="PATH",
                     help="JSON config file; flags override its keys")
    sub.add_argument("--in-dist", dest="in_dist", metavar="PATH",
                     help="in-distribution feature file")
    sub.add_argument("--perturbed", metavar="PATH",
                     help="perturbed counterpart feature file")
    sub.add_argument("--ood", action="append", metavar="NAME=PATH",
                     help="OOD feature file (repeatable)")
    sub.add_argument("--n", type=int, metavar="COUNT",
                     help="reference subset size (default 1000)")
    sub.add_argument("--seed", type=int, metavar="U64", help="subsampling seed")
    sub.add_argument("--metric", choices=("l1", "l2"), help="distance metric")
    sub.add_argument("--regime", choices=("adversarial", "held-out-ood"),
                     help="negative-sample regime for fusion training")
    sub.add_argument("--k-candidates", dest="k_candidates",
                     type=_k_candidate_list, metavar="K1,K2,…",
                     help="candidate neighbor counts for k selection")
    sub.add_argument("--select-k-scope", dest="select_k_scope",
                     choices=("reference", "full"),
                     help="rows the k-selection objective sums over")
    sub.add_argument("--target", metavar="NAME",
                     help="OOD dataset excluded from fusion training "
                          "(held-out-ood regime)")
    sub.add_argument("--out", metavar="DIR", help="output directory")
    if include_model:
        sub.add_argument("--model", metavar="PATH", required=True,
                         help="fitted model file")
    if include_features:
        sub.add_argument("--features", metavar="PATH", required=True,
                         help="feature file to score")


def _parse_ood_entries(entries, require_names=True):
    """--ood NAME=PATH pairs into an ordered name -> path dict."""
    ood = {}
    for entry in entries or []:
        if "=" in entry:
            name, path = entry.split("=", 1)
            name = name.strip()
            if not name:
                raise ConfigError(f"empty dataset name in --ood {entry!r}")
        elif require_names:
            raise ConfigError(
                f"--ood expects NAME=PATH, got {entry!r}"
            )
        else:
            name, path = None, entry
        if name in ood:
            raise ConfigError(f"duplicate OOD dataset name {name!r}")
        ood[name] = path
    return ood


def _merged_values(args, require_ood_names=True) -> dict:
    """Config file values overlaid with any flags that were set."""
    file_cfg = {}
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            obj = json.loads(Path(config_path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {config_path}: {exc}") from exc
        if not isinstance(obj, dict):
            raise ConfigError(f"config file {config_path} must hold a JSON object")
        file_cfg = obj
    flag_cfg = {}
    for key in ("in_dist", "perturbed", "n", "seed", "metric", "regime",
                "k_candidates", "select_k_scope", "target", "out"):
        value = getattr(args, key, None)
        if value is not None:
            flag_cfg[key] = value
    if getattr(args, "ood", None):
        flag_cfg["ood"] = _parse_ood_entries(args.ood, require_ood_names)
    merged = dict(file_cfg)
    merged.update(flag_cfg)
    return merged


def _pipeline_config(args) -> pipeline.PipelineConfig:
    return pipeline.PipelineConfig.from_mappings(_merged_values(args))


def _cmd_fit(args) -> int:
    result = pipeline.cmd_fit(_pipeline_config(args))
    print(f"model written: {result['model_path']}")
    print(f"k selection report: {result['k_selection_path']}")
    for lid, k in result["chosen_k"].items():
        print(f"  layer {lid}: k = {k}")
    return EXIT_OK


def _cmd_select_k(args) -> int:
    result = pipeline.cmd_select_k(_pipeline_config(args))
    print(f"k selection report: {result['k_selection_path']}")
    for lid, k in result["chosen_k"].items():
        print(f"  layer {lid}: k = {k}")
    return EXIT_OK


def _cmd_train_fusion(args) -> int:
    result = pipeline.cmd_train_fusion(args.model, _pipeline_config(args))
    fusion = result["fusion"]
    state = "converged" if fusion.converged else "hit max_epochs"
    print(f"fusion trained: accuracy {100.0 * fusion.train_accuracy:.2f}% "
          f"({fusion.epochs_run} epochs, {state})")
    print(f"model updated: {result['model_path']}")
    return EXIT_OK


def _cmd_score(args) -> int:
    values = _merged_values(args)
    out = values.get("out") or "."
    result = pipeline.cmd_score(args.model, args.features, out)
    print(f"scored {len(result['confidence'])} rows of {result['dataset']}")
    print(f"score table: {result['path']}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    values = _merged_values(args, require_ood_names=False)
    test_path = values.get("in_dist")
    if not test_path:
        raise ConfigError("evaluate requires --in-dist (the test feature file)")
    ood = _parse_ood_entries(args.ood, require_names=False)
    if not ood and isinstance(values.get("ood"), dict):
        ood = dict(values["ood"])
    if len(ood) != 1:
        raise ConfigError("evaluate takes exactly one --ood dataset")
    (name, path), = ood.items()
    out = values.get("out") or "."
    result = pipeline.cmd_evaluate(args.model, test_path, path, out,
                                   ood_name=name)
    print(f"{result['ood_name']}: {result['report'].summary_line()}")
    print(f"report: {result['report_path']}")
    print(f"roc curve: {result['csv_path']}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="kde-ood",
        description="Unsupervised OOD detection via per-layer kernel density "
                    "estimates over deep features.",
    )
    subs = parser.add_subparsers(dest="verb", required=True)

    fit = subs.add_parser("fit", help="subsample references, select k, fit KDEs")
    _add_config_flags(fit)
    fit.set_defaults(func=_cmd_fit)

    sel = subs.add_parser("select-k", help="standalone k-selection report")
    _add_config_flags(sel)
    sel.set_defaults(func=_cmd_select_k)

    tf = subs.add_parser("train-fusion",
                         help="train the fusion stage onto a fitted model")
    _add_config_flags(tf, include_model=True)
    tf.set_defaults(func=_cmd_train_fusion)

    score = subs.add_parser("score", help="score a feature file with a model")
    _add_config_flags(score, include_model=True, include_features=True)
    score.set_defaults(func=_cmd_score)

    ev = subs.add_parser("evaluate",
                         help="metrics for in-dist test vs one OOD dataset")
    _add_config_flags(ev, include_model=True)
    ev.set_defaults(func=_cmd_evaluate)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FeatureFormatError, ModelFormatError) as exc:
        print(f"format error: {exc}", file=sys.stderr)
        return EXIT_FORMAT
    except ValidationError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except KdeOodError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_UNEXPECTED


if __name__ == "__main__":
    sys.exit(main())
