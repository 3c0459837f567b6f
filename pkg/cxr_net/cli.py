"""
CXR-Net command line

Subcommands wire the pipeline end to end:

    synth      Synthetic phantom bundle plus manifest (optional PGM export)
    train-seg  Train the lung segmentation network
    segment    Write predicted lung masks for a directory of images
    train-clf  Cross-validated classifier members, CV summary and ensemble
    ensemble   Combine member weight files into one ensemble file
    classify   p_covid / p_noncovid for a directory of images
    gradcam    Class saliency maps for one image
    eval       Metrics and ROC points from prediction and truth CSVs

Usage:
    python main.py synth --n 500 --size 64 --covid-fraction 0.4 --seed 7 --out data/phantoms.cxb
    python main.py train-seg --bundle data/phantoms.cxb --out-dir runs/seg --seed 1
    python main.py train-clf --bundle data/phantoms.cxb --folds 6 --out-dir runs/clf --seed 1
    python main.py classify --ensemble runs/clf/ensemble.cxen --images data/test --out preds.csv
    python main.py eval --predictions preds.csv --truth data/test/labels.csv --out-dir runs/eval

Exit codes: 0 success, 2 usage or configuration error, 3 data or format
error, 4 numerical failure.
"""

import argparse
import dataclasses
import json
import logging
import os
import sys
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np

from .classifier import (
    FUSIONS,
    POOL_MODES,
    ClfConfig,
    build_ensemble,
    build_member,
    classification_input,
    ensemble_forward,
    load_ensemble,
    save_ensemble,
)
from .config import Config, from_dict, load_config_file, resolve_overrides
from .crossval import cv_summary, run_cross_validation, score_samples
from .datapipe.bundle import pack_bundle, unpack_bundle
from .datapipe.folds import plan_folds
from .datapipe.imageio import load_image, save_image
from .datapipe.loader import attach_masks, export_directory, load_directory
from .datapipe.phantoms import synth_phantoms
from .datapipe.preprocess import TARGET_SHAPE, resize_mask
from .datapipe.samples import positive_flags
from .errors import ConfigError, CXRNetError, FormatError, ValidationError
from .fileio import atomic_write, atomic_write_text
from .metrics import evaluate
from .nn.weights import encode_weights, load_weights, save_weights
from .report_generator import (
    ReportConfig,
    ReportGenerator,
    align_predictions,
    read_predictions_csv,
    read_truth_csv,
)
from .saliency import saliency_maps, write_saliency
from .segmentation import SegConfig, build_segnet, evaluate_segmentation, predict_masks, train_seg
from .trainer import TrainConfig
from .wst import get_filterbank, scatter

logger = logging.getLogger(__name__)

LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"
SEG_WEIGHTS = "segnet.cxwt"
ENSEMBLE_FILE = "ensemble.cxen"
MODEL_FILE = "model.json"

# exit code for file-system failures outside the CXRNetError hierarchy
IO_EXIT_CODE = 3


class _HelpFormatter(argparse.ArgumentDefaultsHelpFormatter, argparse.RawDescriptionHelpFormatter):
    pass


def build_parser() -> argparse.ArgumentParser:
    """Parser with one subcommand per pipeline stage."""
    parser = argparse.ArgumentParser(
        prog="cxr-net",
        description="Lung segmentation, scattering + attention COVID-19 classification "
                    "and Grad-CAM saliency for chest radiographs",
        formatter_class=_HelpFormatter,
        epilog="""
Examples:
  python main.py synth --n 500 --size 64 --covid-fraction 0.4 --seed 7 --out data/phantoms.cxb
  python main.py train-clf --bundle data/phantoms.cxb --folds 6 --out-dir runs/clf --seed 1
  python main.py eval --predictions preds.csv --truth labels.csv --out-dir runs/eval
        """,
    )
    parser.add_argument("-v", "--verbose", action="store_true",
                        help="DEBUG logging, including per-batch training lines")

    seeded = argparse.ArgumentParser(add_help=False)
    seeded.add_argument("--seed", type=int, required=True,
                        help="Seed for every random draw of the command")

    configured = argparse.ArgumentParser(add_help=False)
    configured.add_argument("--config", default=None,
                            help="JSON config file with one object per section")
    configured.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE",
                            help="Override one config value (repeatable)")
    configured.add_argument("--epochs", type=int, default=None, help="Override train.epochs")
    configured.add_argument("--no-viz", action="store_true", help="Skip PNG figures")

    pooling = argparse.ArgumentParser(add_help=False)
    pooling.add_argument("--pool-mode", choices=POOL_MODES, default=None,
                         help="Override the pooling region of the classifier")
    pooling.add_argument("--tau", type=float, default=None,
                         help="Intensity threshold of mask_and_threshold pooling")
    pooling.add_argument("--fusion", choices=FUSIONS, default=None,
                         help="Override how ensemble members are fused")

    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    def add(name: str, help_text: str, parents: Sequence[argparse.ArgumentParser] = ()):
        return sub.add_parser(name, help=help_text, description=help_text, parents=list(parents),
                              formatter_class=_HelpFormatter)

    p = add("synth", "Generate a synthetic phantom bundle", [seeded])
    p.add_argument("--n", type=int, default=500, help="Number of images")
    p.add_argument("--size", type=int, default=64, help="Square image size in pixels (>= 32)")
    p.add_argument("--covid-fraction", type=float, default=0.4, help="Fraction of positive images")
    p.add_argument("--out", required=True, help="Output bundle path")
    p.add_argument("--export", default=None,
                   help="Also write <id>.pgm, <id>_mask.pgm and labels.csv into this directory")
    p.set_defaults(func=cmd_synth)

    p = add("train-seg", "Train the lung segmentation network", [seeded, configured])
    p.add_argument("--bundle", required=True, help="Bundle with segmentation truth")
    p.add_argument("--out-dir", required=True, help="Directory for weights and reports")
    p.add_argument("--val-folds", type=int, default=5,
                   help="Hold out one of this many grouped folds for validation (< 2: none)")
    p.set_defaults(func=cmd_train_seg)

    p = add("segment", "Predict lung masks for a directory of PGM images")
    p.add_argument("--weights", required=True, help="Segmentation weights (CXWT)")
    p.add_argument("--model-config", default=None,
                   help="Segmentation config JSON (default: weights path with .json)")
    p.add_argument("--images", required=True, help="Directory of <id>.pgm images")
    p.add_argument("--out", required=True, help="Directory for <id>_mask.pgm outputs")
    p.add_argument("--batch-size", type=int, default=8, help="Images per forward pass")
    p.set_defaults(func=cmd_segment)

    p = add("train-clf", "Cross-validate classifier members and build the ensemble",
            [seeded, configured, pooling])
    p.add_argument("--bundle", required=True, help="Bundle with labels and lung masks")
    p.add_argument("--masks", default=None,
                   help="Directory of <id>_mask.pgm masks replacing the bundle's masks")
    p.add_argument("--folds", type=int, default=6, help="Number of grouped stratified folds")
    p.add_argument("--strict-folds", action="store_true",
                   help="Fail instead of warning when a fold's class ratio is off by more than one")
    p.add_argument("--out-dir", required=True, help="Directory for weights and reports")
    p.add_argument("--workers", type=int, default=1,
                   help="Parallel fold workers (capped by CXRNET_THREADS)")
    p.set_defaults(func=cmd_train_clf)

    p = add("ensemble", "Combine member weight files into one ensemble file")
    p.add_argument("--model", required=True, help=f"{MODEL_FILE} written by train-clf")
    p.add_argument("--members", nargs="*", default=None,
                   help="Member CXWT files (default: the members listed in the model file)")
    p.add_argument("--fusion", choices=FUSIONS, default=None, help="Member fusion mode")
    p.add_argument("--out", required=True, help="Output ensemble path")
    p.set_defaults(func=cmd_ensemble)

    p = add("classify", "Covid+/Covid- probabilities for a directory of images")
    p.add_argument("--ensemble", required=True, help="Ensemble file (CXEN)")
    p.add_argument("--images", required=True, help="Directory of <id>.pgm images")
    p.add_argument("--masks", default=None,
                   help="Directory of <id>_mask.pgm masks (default: next to the images)")
    p.add_argument("--out", required=True, help="Output prediction CSV")
    p.add_argument("--fusion", choices=FUSIONS, default=None, help="Override member fusion")
    p.add_argument("--batch-size", type=int, default=16, help="Images per forward pass")
    p.set_defaults(func=cmd_classify)

    p = add("gradcam", "Grad-CAM saliency maps for one image", [pooling])
    p.add_argument("--ensemble", required=True, help="Ensemble file (CXEN)")
    p.add_argument("--image", required=True, help="Radiograph (PGM)")
    p.add_argument("--mask", required=True, help="Float lung mask (PGM)")
    p.add_argument("--out-prefix", required=True, help="Prefix of the saliency images")
    p.set_defaults(func=cmd_gradcam)

    p = add("eval", "Evaluate a prediction CSV against truth labels")
    p.add_argument("--predictions", required=True, help="CSV with id,p_covid columns")
    p.add_argument("--truth", required=True, help="CSV with id,label columns")
    p.add_argument("--out-dir", required=True, help="Directory for metrics.csv and roc.csv")
    p.add_argument("--threshold", type=float, default=0.5, help="Decision threshold on p_covid")
    p.set_defaults(func=cmd_eval)
    return parser


def parse_arguments(argv: Optional[Sequence[str]] = None) -> argparse.Namespace:
    """Parse command line arguments."""
    return build_parser().parse_args(argv)


def print_header(command: str):
    """Print a formatted header."""
    print("\n" + "=" * 70)
    print(f"   CXR-NET  {command}")
    print("=" * 70)
    print(f"   Started: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    print("=" * 70 + "\n")


def print_section(title: str):
    """Print a section header."""
    print(f"\n{'─' * 70}")
    print(f"  {title}")
    print(f"{'─' * 70}\n")


def print_footer(output: str):
    """Print completion message."""
    print_section("COMPLETE")
    print(f"  Results saved to: {output}")
    print(f"  Completed: {datetime.now().strftime('%Y-%m-%d %H:%M:%S')}")
    print("\n" + "=" * 70 + "\n")


def configure_logging(verbose: bool = False):
    level = logging.DEBUG if verbose else Config.LOG_LEVEL.upper()
    logging.basicConfig(stream=sys.stderr, level=level, format=LOG_FORMAT)


# Configuration

def resolve_sections(defaults: Dict[str, Any], config_path: Optional[str],
                     overrides: Sequence[str]) -> Dict[str, Any]:
    """
    Resolve each config section: defaults < config file < overrides.

    Args:
        defaults: Section name -> dataclass holding built-in defaults
        config_path: JSON file of ``{section: {key: value}}``
        overrides: ``section.key=value`` strings

    Raises:
        ConfigError: On unknown sections or keys
    """
    file_values = load_config_file(config_path)
    unknown = sorted(set(file_values) - set(defaults))
    if unknown:
        raise ConfigError(f"Unknown config section(s) {unknown}; expected {sorted(defaults)}")
    per_section: Dict[str, List[str]] = {name: [] for name in defaults}
    for item in overrides:
        section, _, rest = item.partition(".")
        if section not in defaults or not rest:
            raise ConfigError(f"Override {item!r} must start with one of {sorted(defaults)}")
        per_section[section].append(rest)
    resolved = {}
    for name, cfg in defaults.items():
        section_values = file_values.get(name, {})
        if not isinstance(section_values, dict):
            raise ConfigError(f"Config section {name!r} must be a JSON object")
        resolved[name] = resolve_overrides(cfg, section_values, per_section[name])
    return resolved


def flag_overrides(args: argparse.Namespace, mapping: Dict[str, str]) -> List[str]:
    """``section.key=value`` strings for dedicated flags that were given."""
    out = []
    for attr, key in mapping.items():
        value = getattr(args, attr, None)
        if value is not None:
            out.append(f"{key}={value}")
    return out


def log_resolved(args: argparse.Namespace, sections: Optional[Dict[str, Any]] = None) -> dict:
    """Log arguments and resolved config sections as one JSON object; returns it."""
    resolved = {"arguments": {k: v for k, v in vars(args).items() if k != "func"}}
    for name, cfg in (sections or {}).items():
        resolved[name] = dataclasses.asdict(cfg)
    logger.info("Resolved config: %s", json.dumps(resolved, sort_keys=True, default=str))
    return resolved


def generate_visualizations(output_dir: str, histories=None, reports=None, plan=None,
                            samples=None, scatter_pair=None) -> List[str]:
    """
    Generate figures; skipped with a warning when matplotlib is unavailable.

    ``scatter_pair`` is an optional (filter bank, scattering output) pair
    drawn as the filter-bank and scattering-channel grids.
    """
    print_section("GENERATING VISUALIZATIONS")
    try:
        from .visualizer import Visualizer
    except ImportError as e:
        logger.warning("Could not generate visualizations: %s", e)
        return []
    viz = Visualizer(output_dir=output_dir)
    saved = viz.generate_all_plots(histories or {}, reports)
    if plan is not None:
        saved.append(viz.plot_fold_partition(plan, samples))
    if scatter_pair is not None:
        fb, scattered = scatter_pair
        saved.append(viz.plot_filterbank(fb))
        saved.append(viz.plot_scattering(scattered.coeffs, scattered.path_index))
    print(f"  Generated {len(saved)} visualization(s):")
    for f in saved:
        print(f"    - {f}")
    return saved


# Commands

def cmd_synth(args: argparse.Namespace) -> int:
    log_resolved(args)
    print_section("SYNTHESIZING PHANTOMS")
    bundle = synth_phantoms(args.n, args.size, args.covid_fraction, args.seed)
    path = pack_bundle(bundle, args.out)
    reports = ReportGenerator(ReportConfig(output_dir=str(path.parent)))
    manifest = reports.save_manifest_csv(bundle.samples, f"{path.stem}_manifest.csv")
    n_pos = int(positive_flags(bundle.samples).sum())
    print(f"  Images:    {len(bundle)} ({n_pos} covid_pos, {len(bundle) - n_pos} covid_neg)")
    print(f"  Patients:  {len({s.group for s in bundle.samples})}")
    print(f"  Bundle:    {path}")
    print(f"  Manifest:  {manifest}")
    if args.export:
        print(f"  Exported:  {export_directory(bundle.samples, args.export)}")
    print_footer(str(path))
    return 0


def holdout_split(samples, val_folds: int, seed: int):
    """(train, val) holding out the first of ``val_folds`` grouped folds."""
    if val_folds < 2:
        return list(samples), []
    train_index, val_index = plan_folds(samples, val_folds, seed).fold(0)
    return [samples[i] for i in train_index], [samples[i] for i in val_index]


def cmd_train_seg(args: argparse.Namespace) -> int:
    sections = resolve_sections(
        {"seg": SegConfig(), "train": TrainConfig()}, args.config,
        args.set + flag_overrides(args, {"epochs": "train.epochs", "seed": "train.seed"}),
    )
    resolved = log_resolved(args, sections)
    seg_cfg, train_cfg = sections["seg"], sections["train"]

    print_section("PREPARING DATA")
    bundle = unpack_bundle(args.bundle)
    train, val = holdout_split(bundle.samples, args.val_folds, train_cfg.seed)
    print(f"  Train: {len(train)}  Validation: {len(val)}")

    print_section("TRAINING SEGMENTATION NETWORK")
    graph = build_segnet(seg_cfg, seed=train_cfg.seed)
    counts = graph.count_params()
    print(f"  Trainable parameters: {counts.total:,}")
    history = train_seg(graph, train, val, train_cfg, seg_cfg, args.verbose)
    if history.best is not None:
        print(f"  Best epoch {history.best_epoch}: {history.best}")

    print_section("GENERATING REPORTS")
    os.makedirs(args.out_dir, exist_ok=True)
    weights_path = os.path.join(args.out_dir, SEG_WEIGHTS)
    save_weights(graph, weights_path)
    atomic_write_text(str(Path(weights_path).with_suffix(".json")),
                      json.dumps({"config": dataclasses.asdict(seg_cfg),
                                  "input_shape": list(bundle.shape)}, indent=2, sort_keys=True))
    reports = ReportGenerator(ReportConfig(title="Lung segmentation", output_dir=args.out_dir))
    seg_reports = {"train": evaluate_segmentation(graph, train)}
    if val:
        seg_reports["val"] = evaluate_segmentation(graph, val)
    for name, rep in seg_reports.items():
        print(f"  {name:6} Dice {rep.dice:.4f}  precision {rep.precision:.4f}  recall {rep.recall:.4f}")
    print(f"  History:  {reports.save_history_csv(history)}")
    print(f"  Metrics:  {reports.save_segmentation_csv(seg_reports)}")
    print(f"  Weights:  {weights_path}")
    print(f"  Summary:  {reports.save_markdown({'Parameters': reports.param_table(counts)}, resolved)}")
    if not args.no_viz:
        generate_visualizations(args.out_dir, {"segmentation": history})
    print_footer(args.out_dir)
    return 0


def cmd_segment(args: argparse.Namespace) -> int:
    log_resolved(args)
    config_path = Path(args.model_config or Path(args.weights).with_suffix(".json"))
    if config_path.exists():
        model = read_json(config_path)
        seg_cfg = from_dict(SegConfig, model["config"])
        shape = tuple(model.get("input_shape") or TARGET_SHAPE)
    else:
        logger.warning("No model config at %s; using default segmentation settings", config_path)
        seg_cfg, shape = SegConfig(), TARGET_SHAPE
    graph = build_segnet(seg_cfg)
    load_weights(graph, args.weights)

    print_section("SEGMENTING")
    samples = load_directory(args.images)
    if not samples:
        raise ValidationError(f"{args.images}: no PGM images found")
    print(f"  Working size: {shape[0]}x{shape[1]}")
    masks = predict_masks(graph, [s.image for s in samples], args.batch_size, shape)
    out_dir = Path(args.out)
    for s, mask in zip(samples, masks):
        save_image(mask, out_dir / f"{s.id}_mask.pgm")
    print(f"  Wrote {len(samples)} masks to {out_dir}")
    print_footer(str(out_dir))
    return 0


def cmd_train_clf(args: argparse.Namespace) -> int:
    sections = resolve_sections(
        {"clf": ClfConfig(), "train": TrainConfig()}, args.config,
        args.set + flag_overrides(args, {
            "epochs": "train.epochs", "seed": "train.seed", "pool_mode": "clf.pool_mode",
            "tau": "clf.tau", "fusion": "clf.fusion",
        }),
    )
    resolved = log_resolved(args, sections)
    clf_cfg, train_cfg = sections["clf"], sections["train"]

    print_section("PREPARING DATA")
    bundle = unpack_bundle(args.bundle)
    if args.masks:
        bundle = dataclasses.replace(bundle, samples=attach_masks(bundle.samples, args.masks))
    missing = [s.id for s in bundle.samples if s.float_mask is None]
    if missing:
        raise ValidationError(f"{len(missing)} image(s) have no lung mask, e.g. {missing[:3]}")
    plan = plan_folds(bundle.samples, args.folds, train_cfg.seed, args.strict_folds)
    for fold, (train_index, val_index) in enumerate(plan.folds):
        print(f"  Fold {fold + 1}: {len(train_index)} train / {len(val_index)} validation")

    print_section("TRAINING MEMBERS")
    results = run_cross_validation(bundle, plan, clf_cfg, train_cfg, args.workers, args.verbose)

    print_section("BUILDING ENSEMBLE")
    os.makedirs(args.out_dir, exist_ok=True)
    reports = ReportGenerator(ReportConfig(title="COVID-19 classification", output_dir=args.out_dir))
    reports.save_fold_plan_csv(plan, bundle.samples)
    member_files, members, histories = [], [], {}
    for r in results:
        name = f"member{r.fold + 1}"
        member_files.append(f"{name}.cxwt")
        atomic_write(os.path.join(args.out_dir, member_files[-1]), encode_weights(r.weights))
        reports.save_history_csv(r.history, f"history_{name}.csv")
        histories[name] = r.history
        member = build_member(clf_cfg, name=name)
        member.set_weights(r.weights)
        members.append(member)
    # the ensemble standardizes with the pooled training portions of all folds
    stats = bundle.refit(np.unique(np.concatenate([t for t, _ in plan.folds])))
    input_shape = list(bundle.shape)
    atomic_write_text(os.path.join(args.out_dir, MODEL_FILE), json.dumps(
        {"config": dataclasses.asdict(clf_cfg), "mean": stats.mean, "std": stats.std,
         "input_shape": input_shape, "members": member_files,
         "fold_statistics": [{"mean": r.mean, "std": r.std, "class_weights": r.class_weights}
                             for r in results]},
        indent=2, sort_keys=True))
    em = build_ensemble(members, clf_cfg, stats.mean, stats.std, input_shape=input_shape)
    ensemble_path = os.path.join(args.out_dir, ENSEMBLE_FILE)
    save_ensemble(ensemble_path, em)
    member_counts, ensemble_counts = members[0].count_params(), em.graph.count_params()
    print(f"  {em.n_members} members x {member_counts.total:,} = {ensemble_counts.total:,} parameters")

    print_section("EVALUATING")
    fold_reports = {f"fold{r.fold + 1}": r.report for r in results if r.report is not None}
    summary = cv_summary(results, bundle)
    eval_reports = dict(fold_reports, cv_pooled=summary["pooled"])
    try:
        eval_reports["ensemble_train"] = evaluate(
            score_samples(em, bundle.samples, train_cfg.batch_size), positive_flags(bundle.samples))
    except ValidationError as exc:
        logger.warning("Ensemble not evaluated on the training bundle: %s", exc)
    for name, rep in eval_reports.items():
        print(f"  {name:15} AUC {rep.roc_auc:.4f}  accuracy {rep.accuracy:.4f}  F1 {rep.f1:.4f}")
    reports.save_eval_csv(eval_reports)
    reports.save_roc_csv(eval_reports)
    reports.save_markdown({
        "Folds": [f"- fold {i + 1}: {c['n_val']} validation images, {c['pos_val']} covid_pos"
                  for i, c in enumerate(plan.class_ratio)],
        "Cross-validation, mean (std)": reports.cv_table(summary),
        "Member parameters": reports.param_table(member_counts, depth=2),
        "Ensemble": [f"{em.n_members} members x {member_counts.total:,} = "
                     f"{ensemble_counts.total:,} trainable parameters ({em.fusion})"],
    }, resolved)
    if not args.no_viz:
        generate_visualizations(args.out_dir, histories, fold_reports, plan, bundle.samples,
                                scatter_view(clf_cfg, bundle.samples[0], stats.mean, stats.std))
    print_footer(args.out_dir)
    return 0


def scatter_view(cfg: ClfConfig, sample, mean: float, std: float):
    """Filter bank and scattering stack of one preprocessed sample."""
    image = classification_input(sample, mean, std)
    scatter_cfg = cfg.scatter.with_shape(*image.shape)
    fb = get_filterbank(scatter_cfg)
    return fb, scatter(image, fb, scatter_cfg)


def read_json(path) -> dict:
    try:
        with open(path, encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: {exc}") from exc
    if not isinstance(data, dict) or "config" not in data:
        raise FormatError(f"{path}: expected a JSON object with a 'config' entry")
    return data


def cmd_ensemble(args: argparse.Namespace) -> int:
    log_resolved(args)
    model = read_json(args.model)
    for key in ("mean", "std"):
        if key not in model:
            raise FormatError(f"{args.model}: missing {key!r}")
    cfg = from_dict(ClfConfig, model["config"])
    base = Path(args.model).parent
    files = args.members if args.members else [base / m for m in model.get("members", [])]
    members = []
    for i, path in enumerate(files):
        member = build_member(cfg, name=f"member{i + 1}")
        load_weights(member, str(path))
        members.append(member)
    em = build_ensemble(members, cfg, model["mean"], model["std"], args.fusion,
                        model.get("input_shape"))
    save_ensemble(args.out, em)
    print(f"  {em.n_members} members ({em.fusion}), {em.graph.count_params().total:,} parameters")
    print_footer(args.out)
    return 0


def cmd_classify(args: argparse.Namespace) -> int:
    log_resolved(args)
    em = load_ensemble(args.ensemble, args.fusion)
    samples = load_directory(args.images, require_masks=args.masks is None)
    if not samples:
        raise ValidationError(f"{args.images}: no PGM images found")
    if args.masks:
        samples = attach_masks(samples, args.masks)
    if em.input_shape:
        print(f"  Working size: {em.input_shape[0]}x{em.input_shape[1]}")
    probs = em.predict_proba([s.image for s in samples], [s.float_mask for s in samples],
                             args.batch_size)
    out = Path(args.out)
    reports = ReportGenerator(ReportConfig(output_dir=str(out.parent.resolve())))
    reports.save_predictions_csv([s.id for s in samples], probs, out.name)
    print(f"  Classified {len(samples)} images; {int((probs[:, 0] >= 0.5).sum())} predicted covid_pos")
    print_footer(str(out))
    return 0


def cmd_gradcam(args: argparse.Namespace) -> int:
    log_resolved(args)
    em = load_ensemble(args.ensemble, args.fusion)
    updates = {k: v for k, v in (("pool_mode", args.pool_mode), ("tau", args.tau)) if v is not None}
    if updates:
        em.config = dataclasses.replace(em.config, **updates).validate()
    image = load_image(args.image)
    if image.ndim != 2:
        raise FormatError(f"{args.image}: expected a grayscale image")
    mask = resize_mask(load_image(args.mask), image.shape)
    p_covid, p_noncovid = ensemble_forward(em, image, mask)
    paths = write_saliency(args.out_prefix, saliency_maps(em, image, mask), image)
    print(f"  p_covid {p_covid:.4f}  p_noncovid {p_noncovid:.4f}")
    for path in paths:
        print(f"    - {path}")
    print_footer(args.out_prefix)
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    log_resolved(args)
    scores, labels = align_predictions(read_predictions_csv(args.predictions),
                                       read_truth_csv(args.truth))
    if scores.size == 0:
        raise ValidationError("prediction and truth files share no ids")
    report = evaluate(scores, labels, args.threshold)
    reports = ReportGenerator(ReportConfig(output_dir=args.out_dir))
    reports.save_eval_csv({"eval": report})
    reports.save_roc_csv({"eval": report})
    for name, value in report.as_row().items():
        print(f"  {name:10} {value}")
    print_footer(args.out_dir)
    return 0


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point; returns the process exit code."""
    args = parse_arguments(argv)
    try:
        Config.validate()
        configure_logging(args.verbose)
        print_header(args.command)
        return args.func(args)
    except CXRNetError as exc:
        logger.debug("%s failed", args.command, exc_info=True)
        print(f"cxr-net {args.command}: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"cxr-net {args.command}: {exc}", file=sys.stderr)
        return IO_EXIT_CODE
