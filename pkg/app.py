"""
SpecTf Cloud Screening - Command Line Application

This is the command-line entry point of the cloud screening pipeline. Each
subcommand wires the library modules together and owns only argument
handling and file paths.

Key Features:
- train: fit SpecTf or the ANN on a dataset table
- predict: per-pixel cloud probability and mask for a spectral cube
- eval: the metric report for one or more score sources
- baseline: the band-threshold screen on a cube
- attention: per-wavelength attention spectra for pixels or whole classes
- synth: a labeled synthetic corpus for desk-scale experiments
- info: model file summary

Exit codes: 0 success, 1 usage, 2 data or format error, 3 numeric failure.
"""

import argparse
import json
import logging
import os
import sys
from typing import Dict, List, Optional, Tuple

import numpy as np

from batch_inference import baseline_cube_mask, predict_cube, prepare_cube, score_dataset
from config import get_config
from constants import (
    Architecture, CLASS_NAMES, EMIT_EXCLUSION_WINDOWS, ExitCode, MASK_NO_DATA,
    PACKAGE_NAME, PACKAGE_VERSION, ValueKind
)
from errors import ContractError, SpecTfError
from file_formats import (
    is_model_file, raster_kind, read_cube, read_dataset_table, read_mask, read_probability,
    read_score_table, write_mask, write_probability
)
from interpret import (
    attention_spectrum, emit_attention_overlay, mean_attention_by_class, write_mean_attention
)
from metrics import MetricReport, ScoredSet, build_report, format_report, roc_auc, \
    write_report, write_roc_points
from models import BaseClassifier, LabeledDataset, Spectrum
from reference_models import AnnConfig, BaselineThresholds, ann_build, baseline_scores
from spectf import SpecTfConfig, SpecTfModel, build
from spectra import band_keep_mask, band_mask, split_by_scene
from synthetic import SynthConfig, synth_generate, write_synthetic_corpus
from training import TrainConfig, checkpoint_model, load_classifier, save_classifier, train

logger = logging.getLogger(__name__)

# Get configuration
config = get_config()

DEFAULT_SYNTH_CONFIG = os.path.join(os.path.dirname(os.path.abspath(__file__)),
                                    "configs", "synthetic_default.json")
BASELINE_SOURCE = "l2a-baseline"
SOURCE_LABELS = {Architecture.SPECTF: "SpecTf", Architecture.ANN: "ANN"}


class ArgumentParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1"""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(int(ExitCode.USAGE), f"{self.prog}: error: {message}\n")


def _stem(path: str) -> Tuple[str, str]:
    return os.path.splitext(path)


# =============================================================================
# TRAIN
# =============================================================================

def _validation_source(value: str):
    """A fraction in (0, 1) or a table path."""
    try:
        return float(value)
    except ValueError:
        return value


def _build_model(args, train_set: LabeledDataset) -> BaseClassifier:
    architecture = Architecture(args.arch)
    if architecture is Architecture.ANN:
        input_dim = int(band_keep_mask(train_set.grid, EMIT_EXCLUSION_WINDOWS).sum())
        ann_config = AnnConfig(input_dim=input_dim,
                               dropout=0.2 if args.dropout is None else args.dropout)
        return ann_build(args.seed, ann_config)
    spectf_config = SpecTfConfig(d_model=args.d_model, heads=args.heads,
                                 dropout=0.1 if args.dropout is None else args.dropout)
    return build(spectf_config, args.seed)


def cmd_train(args) -> int:
    dataset = read_dataset_table(args.data)
    validation_source = _validation_source(args.val)
    if isinstance(validation_source, float):
        train_set, validation_set = split_by_scene(dataset, validation_source, args.seed)
    else:
        train_set, validation_set = dataset, read_dataset_table(validation_source)

    model = _build_model(args, train_set)
    train_config = TrainConfig.for_architecture(
        model.architecture, learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs,
        seed=args.seed, weight_decay=args.weight_decay)
    result = train(model, train_set, validation_set, train_config)

    stem, ext = _stem(args.out)
    checksum = save_classifier(result.model, args.out)
    best = checkpoint_model(result.model, result.best)
    save_classifier(best, f"{stem}.best{ext or '.model'}")
    result.history.write(f"{stem}_history.txt")
    logger.info("wrote %s (sha256 %s); best epoch %d with validation AUC %.5f",
                args.out, checksum, result.best.epoch, result.best.val_auc)
    return ExitCode.SUCCESS


# =============================================================================
# PREDICT
# =============================================================================

def _threshold_arg(value: str) -> Optional[float]:
    if value == "auto":
        return None
    try:
        return float(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"threshold must be a number or 'auto', got '{value}'")


def cmd_predict(args) -> int:
    model = load_classifier(args.model)
    cube = read_cube(args.cube)
    result = predict_cube(model, cube, args.threshold, workers=args.workers,
                          chunk_pixels=args.chunk_pixels)
    write_mask(result.mask, args.out_mask, threshold=result.threshold,
               model_checksum=model.checksum)
    if args.out_prob:
        write_probability(result.probability, args.out_prob, model_checksum=model.checksum)
    print(json.dumps(dict(result.counts, threshold=result.threshold)))
    return ExitCode.SUCCESS


# =============================================================================
# EVAL
# =============================================================================

def _scores_for(source: str, dataset: Optional[LabeledDataset],
                labels_path: Optional[str]) -> Tuple[str, ScoredSet, Optional[int]]:
    """(column name, scored set, learned parameter count) of one score source."""
    if source == BASELINE_SOURCE:
        dataset = _require_dataset(dataset, source)
        return "L2A baseline", ScoredSet(baseline_scores(dataset.values, dataset.grid),
                                         dataset.labels), None

    if is_model_file(source):
        dataset = _require_dataset(dataset, source)
        model = load_classifier(source)
        return (SOURCE_LABELS[model.architecture], ScoredSet(score_dataset(model, dataset),
                                                             dataset.labels), model.param_count())

    if raster_kind(source) is ValueKind.CLOUD_PROBABILITY:
        if not labels_path:
            raise ContractError("a probability raster needs --labels with the label raster")
        probability, _ = read_probability(source)
        labels, _ = read_mask(labels_path)
        if labels.shape != probability.shape:
            raise ContractError(f"label raster {labels.shape} does not match probability "
                                f"raster {probability.shape}")
        usable = (labels != MASK_NO_DATA) & np.isfinite(probability)
        return os.path.basename(source), ScoredSet(probability[usable], labels[usable]), None

    dataset = _require_dataset(dataset, source)
    scores = read_score_table(source)
    if scores.size != len(dataset):
        raise ContractError(f"{source} has {scores.size} scores for {len(dataset)} records")
    return os.path.basename(source), ScoredSet(scores, dataset.labels), None


def _require_dataset(dataset: Optional[LabeledDataset], source: str) -> LabeledDataset:
    if dataset is None:
        raise ContractError(f"scoring '{source}' needs --data with a dataset table")
    return dataset


def cmd_eval(args) -> int:
    dataset = read_dataset_table(args.data) if args.data else None
    reports: Dict[str, MetricReport] = {}
    curves = {}
    for source in args.scores:
        name, scored, learned = _scores_for(source, dataset, args.labels)
        if name in reports:
            name = f"{name} ({os.path.basename(source)})"
        reports[name] = build_report(scored, args.threshold, learned)
        curves[name] = roc_auc(scored)

    table = format_report(reports)
    print(table)
    if args.report:
        write_report(reports, args.report, args.report_json)
    if args.roc:
        stem, ext = _stem(args.roc)
        for name, curve in curves.items():
            path = args.roc if len(curves) == 1 else \
                f"{stem}_{name.lower().replace(' ', '_')}{ext or '.csv'}"
            write_roc_points(curve, path)
    return ExitCode.SUCCESS


# =============================================================================
# BASELINE
# =============================================================================

def cmd_baseline(args) -> int:
    thresholds = BaselineThresholds(args.t450, args.t1250, args.t1650, args.t1380)
    mask = baseline_cube_mask(read_cube(args.cube), thresholds)
    write_mask(mask, args.out_mask)
    return ExitCode.SUCCESS


# =============================================================================
# ATTENTION
# =============================================================================

def _pixel_arg(value: str) -> Tuple[int, int]:
    try:
        line, sample = (int(part) for part in value.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"pixel must be 'line,sample', got '{value}'")
    return line, sample


def _attention_model(path: str) -> SpecTfModel:
    model = load_classifier(path)
    if not isinstance(model, SpecTfModel):
        raise ContractError("attention spectra need a SpecTf model")
    return model


def cmd_attention(args) -> int:
    model = _attention_model(args.model)
    stem, ext = _stem(args.out)

    if raster_kind(args.input) is not None:
        if args.pixel is None:
            raise ContractError("a cube input needs --pixel line,sample")
        cube = read_cube(args.input)
        line, sample = args.pixel
        if not (0 <= line < cube.lines and 0 <= sample < cube.samples):
            raise ContractError(f"pixel ({line}, {sample}) outside the "
                                f"{cube.lines} x {cube.samples} cube")
        spectrum = prepare_cube(model, cube).pixel(line, sample)
        emit_attention_overlay(spectrum, attention_spectrum(model, spectrum), args.out)
        return ExitCode.SUCCESS

    dataset, _ = band_mask(read_dataset_table(args.input), windows=model.exclusion_windows)
    if args.mean_by_class:
        for label, attention in mean_attention_by_class(model, dataset).items():
            write_mean_attention(attention, f"{stem}_{CLASS_NAMES[label]}{ext or '.csv'}", label)
        return ExitCode.SUCCESS

    row = args.row or 0
    if not 0 <= row < len(dataset):
        raise ContractError(f"row {row} outside a table of {len(dataset)} records")
    spectrum: Spectrum = dataset.spectrum(row)
    emit_attention_overlay(spectrum, attention_spectrum(model, spectrum), args.out)
    return ExitCode.SUCCESS


# =============================================================================
# SYNTH AND INFO
# =============================================================================

def cmd_synth(args) -> int:
    synth_config = SynthConfig.from_file(args.config)
    scenes = synth_generate(synth_config, args.seed)
    paths = write_synthetic_corpus(scenes, synth_config, args.out_dir, args.seed)
    print(json.dumps(paths, indent=2))
    return ExitCode.SUCCESS


def cmd_info(args) -> int:
    model = load_classifier(args.model)
    summary = dict(model.preprocessing_dict(), architecture=model.architecture.value,
                   config=model.config_dict(), param_count=model.param_count(),
                   checksum=model.checksum)
    print(json.dumps(summary, indent=2))
    return ExitCode.SUCCESS


# =============================================================================
# PARSER
# =============================================================================

def build_parser() -> ArgumentParser:
    parser = ArgumentParser(prog="spectf", description="Pixelwise cloud screening for imaging "
                                                        "spectrometers")
    parser.add_argument("--version", action="version", version=f"{PACKAGE_NAME} {PACKAGE_VERSION}")
    commands = parser.add_subparsers(dest="command", required=True, parser_class=ArgumentParser)

    p = commands.add_parser("train", help="train a classifier on a dataset table")
    p.add_argument("--data", required=True, help="training dataset table")
    p.add_argument("--val", required=True,
                   help="validation table, or a fraction of scenes split off --data")
    p.add_argument("--arch", choices=[a.value for a in Architecture], default="spectf")
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--dropout", type=float, default=None)
    p.add_argument("--d-model", type=int, default=64)
    p.add_argument("--heads", type=int, default=8)
    p.add_argument("--seed", type=int, default=config.DEFAULT_SEED)
    p.add_argument("--out", required=True, help="model file to write")
    p.set_defaults(handler=cmd_train)

    p = commands.add_parser("predict", help="cloud mask for a spectral cube")
    p.add_argument("--model", required=True)
    p.add_argument("--cube", required=True)
    p.add_argument("--threshold", type=_threshold_arg, default=None,
                   help="decision threshold, or 'auto' for the model's stored one")
    p.add_argument("--out-mask", required=True)
    p.add_argument("--out-prob", default=None, help="optional cloud-probability raster")
    p.add_argument("--workers", type=int, default=None)
    p.add_argument("--chunk-pixels", type=int, default=None)
    p.set_defaults(handler=cmd_predict)

    p = commands.add_parser("eval", help="metric report for score sources")
    p.add_argument("--scores", required=True, action="append",
                   help=f"model file, '{BASELINE_SOURCE}', score table or probability "
                        f"raster; repeat to compare")
    p.add_argument("--data", default=None, help="labeled dataset table")
    p.add_argument("--labels", default=None, help="label raster for a probability raster")
    p.add_argument("--threshold", type=float, default=None,
                   help="fixed decision threshold instead of the best-F1 one")
    p.add_argument("--report", default=None)
    p.add_argument("--report-json", default=None)
    p.add_argument("--roc", default=None, help="ROC point table")
    p.set_defaults(handler=cmd_eval)

    p = commands.add_parser("baseline", help="band-threshold screen on a cube")
    p.add_argument("--cube", required=True)
    p.add_argument("--out-mask", required=True)
    defaults = BaselineThresholds()
    p.add_argument("--t450", type=float, default=defaults.t450)
    p.add_argument("--t1250", type=float, default=defaults.t1250)
    p.add_argument("--t1650", type=float, default=defaults.t1650)
    p.add_argument("--t1380", type=float, default=defaults.t1380)
    p.set_defaults(handler=cmd_baseline)

    p = commands.add_parser("attention", help="attention spectra")
    p.add_argument("--model", required=True)
    p.add_argument("--input", required=True, help="dataset table or cube")
    p.add_argument("--pixel", type=_pixel_arg, default=None, help="line,sample of a cube pixel")
    p.add_argument("--row", type=int, default=None, help="table row")
    p.add_argument("--mean-by-class", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(handler=cmd_attention)

    p = commands.add_parser("synth", help="write a labeled synthetic corpus")
    p.add_argument("--config", default=DEFAULT_SYNTH_CONFIG)
    p.add_argument("--seed", type=int, default=config.DEFAULT_SEED)
    p.add_argument("--out-dir", required=True)
    p.set_defaults(handler=cmd_synth)

    p = commands.add_parser("info", help="summarize a model file")
    p.add_argument("--model", required=True)
    p.set_defaults(handler=cmd_info)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    logging.basicConfig(
        level=getattr(logging, config.LOG_LEVEL, logging.INFO),
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s'
    )
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    try:
        return int(args.handler(args))
    except SpecTfError as exc:
        logger.error("%s error: %s", exc.error_type.value, exc)
        return int(exc.exit_code)
    except OSError as exc:
        logger.error("I/O error: %s", exc)
        return int(ExitCode.DATA)


if __name__ == "__main__":
    sys.exit(main())
