"""Command-line entry point: preprocess, train, ablate, infer, evaluate, masks, grid, smoke."""

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from dotenv import load_dotenv

from .checkpoint import load_generator
from .config import AppConfig, load_config
from .data import Domain, image_key, load_image
from .errors import CheckpointError, GatTransferError
from .evaluation import (
    ABLATION_LABELS,
    MetricTable,
    compare_with_published,
    evaluate_testset,
    reproduce_published_tables,
    stylize,
)
from .landmarks import MaskSource, build_mask_bundle, create_detector, sweep_sharpening
from .pipeline import infer_pair, load_prepared, preprocess_dataset, run_smoke, sweep_canvases
from .training import ABLATION_VARIANTS, run_ablation_suite, train_loop
from .visualize import GridRenderer, mask_overlay, save_figure

logger = logging.getLogger(__name__)


class CliParser(argparse.ArgumentParser):
    """argparse with usage errors mapped to exit code 1."""

    def error(self, message: str):
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _banner(title: str):
    print()
    print("=" * 50)
    print(title)
    print("=" * 50)


def cmd_preprocess(app: AppConfig, args: argparse.Namespace) -> int:
    _banner("PREPROCESSING DATASET")
    if args.sweep:
        detector = create_detector(app.landmarks)
        images = sweep_canvases(app)
        best, counts = sweep_sharpening(images, detector, app.landmarks.sweep_values)
        for A, hits in counts.items():
            print(f"  A={A}: {hits}/{len(images)} faces detected")
        print(f"✓ Using A={best}")
        app = app.model_copy(update={"sharpen": app.sharpen.model_copy(update={"A": best})})

    manifest, cache = preprocess_dataset(app)
    counts = manifest.counts

    _banner("SUMMARY")
    print(f"ID photos (X):  train {counts['train_x']}  |  test {counts['test_x']}")
    print(f"Portraits (Y):  train {counts['train_y']}  |  test {counts['test_y']}")
    print(f"Test pairs:     {len(manifest.test_pairs)}")
    print(f"Processed into: {manifest.processed_dir}")
    if manifest.detection_failures:
        print(f"Landmark detection failed for {len(manifest.detection_failures)} image(s):")
        for key in manifest.detection_failures:
            print(f"  - {key}")
    else:
        print("✓ Landmarks detected for every image")
    return 0


def cmd_train(app: AppConfig, args: argparse.Namespace) -> int:
    manifest, cache = load_prepared(app)
    run_dir = Path(app.runs_dir) / args.run_name
    result = train_loop(app, manifest, cache, run_dir, resume=not args.fresh)

    _banner("SUMMARY")
    print(f"Run directory:  {run_dir}")
    print(f"Epochs trained: {len(result.epochs)}")
    if result.epochs:
        print(f"Final G loss:   {result.epochs[-1].losses.generator_total:.4f}")
    for path in result.checkpoints:
        print(f"✓ {path}")
    return 0


def cmd_ablate(app: AppConfig, args: argparse.Namespace) -> int:
    manifest, cache = load_prepared(app)
    out_dir = args.out or Path(app.runs_dir) / "ablation"
    results = run_ablation_suite(app, manifest, cache, out_dir)

    _banner("SUMMARY")
    for label, result in results.items():
        final = result.epochs[-1].losses.generator_total if result.epochs else float("nan")
        print(f"✓ {label:8s} final G loss {final:.4f}  →  {result.run_dir}")
    return 0


def cmd_infer(app: AppConfig, args: argparse.Namespace) -> int:
    out = infer_pair(
        args.checkpoint,
        args.content,
        args.style,
        args.out,
        image_size=app.data.image_size,
        device=app.evaluation.device,
        grid_path=args.grid,
    )
    print(f"✓ Result saved: {out}")
    if args.grid:
        print(f"✓ Side-by-side saved: {args.grid}")
    return 0


def print_table(table: MetricTable):
    family = "SSIM" if table.metric == "ssim" else "PSNR"
    prefix = "S" if table.metric == "ssim" else "P"
    labels = list(table.content.values)
    print(f"{family:>12s}" + "".join(f"{label:>10s}" for label in labels))
    rows = [
        (f"{prefix}_content", table.content.values),
        (f"{prefix}_style", table.style.values),
        ("E_content", table.e_content),
        ("E_style", table.e_style),
        (f"E_{family}", table.e_total),
    ]
    for name, values in rows:
        print(f"{name:>12s}" + "".join(f"{values[label]:>10.3f}" for label in labels))
    print(f"Best balanced variant: {table.best_variant}")


def cmd_evaluate(app: AppConfig, args: argparse.Namespace) -> int:
    if args.published:
        _banner("PUBLISHED TABLE REPRODUCTION")
        for table in reproduce_published_tables().values():
            print()
            print_table(table)
        print()
        for c in compare_with_published():
            if c.difference > 0.01 or c.known_misprint:
                note = " (misprint in the published table)" if c.known_misprint else ""
                print(f"  {c.metric} {c.row} {c.variant}: published {c.published:.3f}, computed {c.computed:.3f}{note}")
        return 0

    manifest, _ = load_prepared(app)
    if args.run:
        models = {args.run.name: args.run}
    else:
        models_dir = args.models or Path(app.runs_dir) / "ablation"
        models = {label: models_dir / label for label in ABLATION_LABELS}
    out_dir = args.out or Path(app.runs_dir) / "evaluation"

    _banner(f"EVALUATING {len(manifest.test_pairs)} TEST PAIRS")
    report = evaluate_testset(models, manifest, out_dir, app.evaluation)
    if not report.variants:
        raise CheckpointError("No model could be loaded for evaluation")

    _banner("SUMMARY")
    for table in report.tables.values():
        print_table(table)
        print()
    if report.skipped:
        print(f"Skipped variants: {', '.join(report.skipped)}")
    print(f"✓ Reports written to {out_dir}")
    return 0


def cmd_masks(app: AppConfig, args: argparse.Namespace) -> int:
    manifest, cache = load_prepared(app)
    out_dir = args.out or Path(app.runs_dir) / "masks"
    tiles = []
    for domain in Domain:
        source = MaskSource.CONTENT_X if domain == Domain.X_PHOTO else MaskSource.STYLE_Y
        for image_id in manifest.ids(args.split, domain)[: args.limit]:
            key = image_key(domain, args.split, image_id)
            pixels = load_image(manifest.processed_path(domain, args.split, image_id), domain).pixels
            landmarks = cache.get(key)
            bundle = build_mask_bundle(landmarks, source, app.landmarks.dilation_px, manifest.image_size)
            overlay = mask_overlay(pixels, bundle, landmarks)
            save_figure(overlay, out_dir / domain.value / f"{image_id}.png")
            tiles.append(overlay)

    if tiles:
        rows = [tiles[i:i + 8] for i in range(0, len(tiles), 8)]
        sheet = save_figure(GridRenderer(tile_size=manifest.image_size).render(rows), out_dir / "overview.png")
        print(f"✓ {len(tiles)} mask overlays written; overview: {sheet}")
    return 0


def cmd_grid(app: AppConfig, args: argparse.Namespace) -> int:
    manifest, _ = load_prepared(app)
    models_dir = args.models or Path(app.runs_dir) / "ablation"
    generators = {}
    for label in ABLATION_VARIANTS:
        try:
            generators[label] = load_generator(models_dir / label, app.evaluation.device)
        except CheckpointError as e:
            logger.warning(f"Skipping variant {label} in grid: {e}")
    if not generators:
        raise CheckpointError(f"No trained variants found under {models_dir}")

    rows = []
    for x_id, y_id in manifest.test_pairs[: args.limit]:
        x = load_image(manifest.processed_path(Domain.X_PHOTO, "test", x_id), Domain.X_PHOTO).pixels
        y = load_image(manifest.processed_path(Domain.Y_PORTRAIT, "test", y_id), Domain.Y_PORTRAIT).pixels
        rows.append([x, y] + [stylize(g, x, y, app.evaluation.device) for g in generators.values()])

    renderer = GridRenderer(tile_size=manifest.image_size)
    out = save_figure(renderer.render(rows, ["content", "style", *generators]), args.out)
    print(f"✓ Comparison grid saved: {out}")
    return 0


def cmd_smoke(app: AppConfig, args: argparse.Namespace) -> int:
    _banner("SMOKE RUN")
    result = run_smoke(app)

    _banner("SUMMARY")
    print(f"Stages passed:  {', '.join(result.stages)}")
    print(f"G loss:         {result.first_epoch_loss:.4f} → {result.final_epoch_loss:.4f} ({result.loss_ratio:.0%})")
    print(f"Checkpoint:     {result.checkpoint}")
    print(f"Inference:      {result.output}")
    print(f"Evaluation:     {result.evaluation_dir}")
    print("✓ Smoke run passed")
    return 0


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "ablate": cmd_ablate,
    "infer": cmd_infer,
    "evaluate": cmd_evaluate,
    "masks": cmd_masks,
    "grid": cmd_grid,
    "smoke": cmd_smoke,
}


def build_parser() -> CliParser:
    parser = CliParser(
        prog="gat-transfer",
        description="Transfer Korean-portrait style (Gat included) onto ID photos",
        formatter_class=argparse.RawDescriptionHelpFormatter,
        epilog="""
Examples:
  %(prog)s preprocess                              Crop, sharpen and detect landmarks
  %(prog)s preprocess --sweep                      Pick the sharpening strength first
  %(prog)s train --set training.epochs=50          Train with an override
  %(prog)s ablate                                  Train the five ablation variants
  %(prog)s evaluate                                Score the ablation variants on the test pairs
  %(prog)s evaluate --published                    Recompute the published balance errors
  %(prog)s infer --checkpoint runs/default --content me.jpg --style portrait.jpg --out me_gat.png
  %(prog)s masks --limit 4                         Render landmark mask overlays
  %(prog)s smoke                                   End-to-end run on synthetic faces

Exit codes: 0 success, 1 usage/config, 2 data, 3 checkpoint, 4 image I/O
""",
    )
    parser.add_argument("-c", "--config", type=Path, help="JSON config file (default: $GAT_TRANSFER_CONFIG or ./config.json)")
    parser.add_argument(
        "--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
        help="Override a config value by dotted key, e.g. sharpen.A=2.0 (repeatable)",
    )
    parser.add_argument("-v", "--verbose", action="store_true", help="Debug logging")

    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND", parser_class=CliParser)

    p = sub.add_parser("preprocess", help="Build the processed dataset, manifest and landmark cache")
    p.add_argument("--sweep", action="store_true", help="Choose sharpen.A by detection rate over landmarks.sweep_values")

    p = sub.add_parser("train", help="Train one model")
    p.add_argument("--run-name", default="default", help="Run directory name under runs_dir (default: default)")
    p.add_argument("--fresh", action="store_true", help="Ignore state.json and start from epoch 0")

    p = sub.add_parser("ablate", help="Train w/o L_c, w/o L_s, w/o L_l, w/o L_h and L_Total")
    p.add_argument("--out", type=Path, help="Output directory (default: <runs_dir>/ablation)")

    p = sub.add_parser("infer", help="Stylize one ID photo with one portrait")
    p.add_argument("--checkpoint", type=Path, required=True, help="Checkpoint file or run directory")
    p.add_argument("--content", type=Path, required=True, help="ID photo")
    p.add_argument("--style", type=Path, required=True, help="Korean portrait")
    p.add_argument("--out", type=Path, required=True, help="Output image path")
    p.add_argument("--grid", type=Path, help="Also write a content | style | result strip here")

    p = sub.add_parser("evaluate", help="PSNR/SSIM and balance errors over the test pairs")
    group = p.add_mutually_exclusive_group()
    group.add_argument("--models", type=Path, help="Directory holding one run per ablation variant")
    group.add_argument("--run", type=Path, help="Evaluate a single run directory or checkpoint")
    group.add_argument("--published", action="store_true", help="Recompute the published tables only")
    p.add_argument("--out", type=Path, help="Report directory (default: <runs_dir>/evaluation)")

    p = sub.add_parser("masks", help="Render eye/nose/lip/head mask overlays")
    p.add_argument("--split", choices=["train", "test"], default="train")
    p.add_argument("--limit", type=int, default=8, help="Images per domain (default: 8)")
    p.add_argument("--out", type=Path, help="Output directory (default: <runs_dir>/masks)")

    p = sub.add_parser("grid", help="Comparison grid of the ablation variants on test pairs")
    p.add_argument("--models", type=Path, help="Directory holding one run per ablation variant")
    p.add_argument("--limit", type=int, default=4, help="Number of test pairs (default: 4)")
    p.add_argument("--out", type=Path, default=Path("grid.png"), help="Output image (default: grid.png)")

    sub.add_parser("smoke", help="Synthetic end-to-end run asserting the acceptance thresholds")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Main entry point."""
    load_dotenv()
    args = build_parser().parse_args(argv)

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
    )

    try:
        app = load_config(args.config, args.overrides)
        return COMMANDS[args.command](app, args)
    except GatTransferError as e:
        print(f"Error: {e}", file=sys.stderr)
        return e.exit_code
    except KeyboardInterrupt:
        print("\n\nInterrupted by user")
        return 130


if __name__ == "__main__":
    sys.exit(main())
