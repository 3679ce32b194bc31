"""Command-line entry point: ``galseg {synth,train,eval,bench,gradcheck}``.

Exit codes: 0 success, 1 check or runtime failure, 2 usage error.
"""
from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from galseg import checks, formats, plotting
from galseg.metrics import STANDARD_FOLD_SIZES, MetricReport, evaluate_fold, kfold_run, make_folds, metrics_from_counts
from galseg.net import CheckpointError, activation_map, load_checkpoint, net_forward, save_checkpoint
from galseg.autodiff import Tensor
from galseg.synth import MODALITIES, samples_from_manifest, synth_generate
from galseg.training import DESK_EPOCHS, FULL_EPOCHS, TrainConfig, model_predictor, net_fit, oracle_fit, train

log = logging.getLogger("galseg")


class CommandError(Exception):
    """Runtime failure reported with exit code 1."""


# ---------------------------------------------------------------- argument types

def positive_int(text: str) -> int:
    try:
        v = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected an integer, got {text!r}")
    if v < 1:
        raise argparse.ArgumentTypeError(f"must be >= 1, got {v}")
    return v


def positive_float(text: str) -> float:
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got {text!r}")
    if not v > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {v}")
    return v


def hw_pair(text: str) -> tuple[int, int]:
    parts = text.lower().split("x")
    if len(parts) != 2 or not all(p.isdigit() for p in parts):
        raise argparse.ArgumentTypeError(f"expected HxW, got {text!r}")
    h, w = map(int, parts)
    if h < 4 or w < 4 or h % 4 or w % 4:
        raise argparse.ArgumentTypeError(f"H and W must be positive multiples of 4, got {text}")
    return h, w


def hwc_triple(text: str) -> tuple[int, int, int]:
    parts = text.lower().split("x")
    if len(parts) != 3 or not all(p.isdigit() for p in parts):
        raise argparse.ArgumentTypeError(f"expected HxWxC, got {text!r}")
    h, w, c = map(int, parts)
    if h < 2 or w < 2:
        raise argparse.ArgumentTypeError(f"H and W must be >= 2, got {text}")
    if c < 2 or c % 2:
        raise argparse.ArgumentTypeError(f"C must be even and >= 2, got {c}")
    return h, w, c


def fold_spec(text: str):
    """``standard`` (the fixed 12-fold split of 53 samples), a fold count, or comma-separated sizes."""
    if text == "standard":
        return list(STANDARD_FOLD_SIZES)
    try:
        if "," in text:
            sizes = [int(p) for p in text.split(",")]
            if any(s < 1 for s in sizes):
                raise ValueError
            return sizes
        return positive_int(text)
    except (ValueError, argparse.ArgumentTypeError):
        raise argparse.ArgumentTypeError(f"expected 'standard', a fold count or comma-separated sizes, got {text!r}")


# ---------------------------------------------------------------- helpers

def _header(args: argparse.Namespace) -> list[str]:
    skip = {"func", "verbose"}
    flags = " ".join(f"{k}={v}" for k, v in sorted(vars(args).items()) if k not in skip)
    return [f"galseg {args.command}", flags]


def _load(manifest):
    try:
        return samples_from_manifest(manifest)
    except (OSError, ValueError) as exc:
        raise CommandError(f"cannot load manifest: {exc}") from exc


def _train_config(args, samples, with_gal: bool | None = None, seed: int | None = None) -> TrainConfig:
    if args.epochs is not None:
        epochs = args.epochs
    elif args.desk:
        epochs = DESK_EPOCHS
    else:
        epochs = FULL_EPOCHS.get(samples[0].modality, DESK_EPOCHS)
    return TrainConfig(epochs=epochs, lr=args.lr, momentum=args.momentum, batch_size=args.batch_size,
                       base_channels=args.base_channels,
                       with_gal=args.with_gal if with_gal is None else with_gal,
                       augment=not args.no_augment, seed=args.seed if seed is None else seed)


def _folds(samples, spec):
    try:
        return make_folds(len(samples), spec)
    except ValueError as exc:
        raise CommandError(str(exc)) from exc


def _outdir(path) -> Path:
    out = Path(path)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise CommandError(f"cannot create output directory {out}: {exc}") from exc
    return out


# ---------------------------------------------------------------- commands

def cmd_synth(args) -> int:
    out = _outdir(args.out)
    h, w = args.hw
    samples = synth_generate(args.modality, args.n, h, w, args.seed, noise=args.noise)
    try:
        (out / "images").mkdir(exist_ok=True)
        (out / "labels").mkdir(exist_ok=True)
        entries = []
        for s in samples:
            img = out / "images" / f"{s.sample_id}.galt"
            lab = out / "labels" / f"{s.sample_id}.pgm"
            formats.save_galt(s.image, img)
            formats.write_pgm(s.label * 255, lab)
            entries.append(formats.ManifestEntry(s.sample_id, s.modality, img, lab))
        formats.write_manifest(entries, out / "manifest.txt")
    except OSError as exc:
        raise CommandError(f"cannot write dataset under {out}: {exc}") from exc
    print(f"wrote {len(samples)} {args.modality} samples ({h}x{w}, seed {args.seed}) to {out / 'manifest.txt'}")
    return 0


def cmd_train(args) -> int:
    samples = _load(args.manifest)
    tc = _train_config(args, samples)
    log.info("training %s on %d samples for %d epochs", "with GAL" if tc.with_gal else "without GAL",
             len(samples), tc.epochs)
    res = train(samples, tc)
    out = _outdir(args.out_checkpoint)
    save_checkpoint(res.params, out)
    lines = [f"# {h}" for h in _header(args)] + ["epoch\tloss"]
    lines += [f"{i + 1}\t{loss:.6f}" for i, loss in enumerate(res.losses)]
    (out / "loss.tsv").write_text("\n".join(lines) + "\n")
    plotting.plot_loss(res.losses, out / "loss.png")
    print(f"checkpoint written to {out} (final loss {res.losses[-1]:.4f})")
    return 0


def _export_activations(samples, params, cfg, out: Path, limit: int = 4) -> None:
    act_dir = out / "activations"
    act_dir.mkdir(exist_ok=True)
    panels = {}
    for s in samples[:limit]:
        feats: dict = {}
        net_forward(Tensor(s.image), params, cfg, features=feats)
        raster = activation_map(feats["fused"])
        formats.write_pgm(raster, act_dir / f"{s.sample_id}.pgm")
        panels[s.sample_id] = raster
        panels[f"{s.sample_id} label"] = s.label * 255
    plotting.plot_activation_maps(panels, out / "activation_maps.png")


def cmd_eval(args) -> int:
    samples = _load(args.manifest)
    folds = _folds(samples, args.folds)
    if args.oracle:
        report = kfold_run(samples, folds, oracle_fit)
    elif args.checkpoint:
        try:
            cfg, params = load_checkpoint(args.checkpoint, in_channels=samples[0].image.shape[2])
        except (CheckpointError, formats.FormatError) as exc:
            raise CommandError(f"incompatible checkpoint: {exc}") from exc
        predictor = model_predictor(params, cfg)
        report = MetricReport()
        for f in folds:
            counts = evaluate_fold(predictor, [samples[i] for i in f])
            report.counts.append(counts)
            report.rows.append(metrics_from_counts(counts))
    else:
        report = kfold_run(samples, folds, net_fit(_train_config(args, samples)))
    text = report.to_text(_header(args))
    sys.stdout.write(text)
    if args.out:
        out = _outdir(args.out)
        (out / "report.tsv").write_text(text)
        plotting.plot_report(report, out / "report.png")
        if args.checkpoint and not args.oracle:
            _export_activations(samples, params, cfg, out)
    return 0


def cmd_bench(args) -> int:
    samples = _load(args.manifest)
    folds = _folds(samples, args.folds)
    seeds = [args.seed + i for i in range(args.seeds)]
    rows = []
    for seed in seeds:
        res = {}
        for with_gal in (True, False):
            tc = _train_config(args, samples, with_gal=with_gal, seed=seed)
            res[with_gal] = kfold_run(samples, folds, net_fit(tc)).means()
        rows.append((seed, res[True], res[False]))
        log.info("seed %d: mIoU %.3f (GAL) vs %.3f", seed, res[True]["mIoU"], res[False]["mIoU"])
    cols = ("seed", "mIoU_gal", "mIoU_base", "dIoU", "mFsc_gal", "mFsc_base", "dFsc")
    lines = [f"# {h}" for h in _header(args)] + ["\t".join(cols)]
    table = []
    for seed, g, b in rows:
        vals = (g["mIoU"], b["mIoU"], g["mIoU"] - b["mIoU"], g["mFsc"], b["mFsc"], g["mFsc"] - b["mFsc"])
        table.append(vals)
        lines.append("\t".join([str(seed)] + [f"{v:.3f}" for v in vals]))
    mean = np.mean(np.array(table), axis=0)
    lines.append("\t".join(["mean"] + [f"{v:.3f}" for v in mean]))
    wins = sum(1 for v in table if v[2] > 0)
    lines.append(f"# GAL wins {wins}/{len(table)} seeds on mIoU")
    text = "\n".join(lines) + "\n"
    sys.stdout.write(text)
    if args.out:
        out = _outdir(args.out)
        (out / "bench.tsv").write_text(text)
        plotting.plot_bench(seeds, [v[0] for v in table], [v[1] for v in table], out / "bench.png")
    return 0


def cmd_gradcheck(args) -> int:
    h, w, c = args.size
    print(f"# galseg gradcheck size={h}x{w}x{c} seed={args.seed} tol={checks.TOLERANCE:g}")
    results = checks.gradcheck_suite(h, w, c, args.seed)
    bad = []
    for name, err in results:
        ok = err <= checks.TOLERANCE
        print(f"{name}\t{err:.3e}\t{'ok' if ok else 'FAIL'}")
        if not ok:
            bad.append(name)
    if bad:
        print(f"FAILED: {', '.join(bad)}", file=sys.stderr)
        return 1
    print("all gradients within tolerance")
    return 0


# ---------------------------------------------------------------- parser

def _training_flags(p: argparse.ArgumentParser, require_gal: bool = False) -> None:
    g = p.add_mutually_exclusive_group(required=require_gal)
    g.add_argument("--with-gal", dest="with_gal", action="store_true", default=True)
    g.add_argument("--no-gal", dest="with_gal", action="store_false")
    p.add_argument("--epochs", type=positive_int, default=None,
                   help="default: 150 for rgb, 100 for disp/tdisp, or 30 with --desk")
    p.add_argument("--desk", action="store_true", help=f"use the desk-scale budget of {DESK_EPOCHS} epochs")
    p.add_argument("--lr", type=positive_float, default=0.01)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--batch-size", type=positive_int, default=4)
    p.add_argument("--base-channels", type=positive_int, default=16)
    p.add_argument("--no-augment", action="store_true")
    p.add_argument("--seed", type=int, default=0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="galseg", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic dataset and manifest")
    p.add_argument("--modality", choices=MODALITIES, required=True)
    p.add_argument("--n", type=positive_int, required=True)
    p.add_argument("--hw", type=hw_pair, default=(32, 32))
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--noise", type=float, default=0.02)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("train", help="train one network on a manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--out-checkpoint", required=True)
    _training_flags(p, require_gal=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="per-fold metrics for a checkpoint, the oracle, or full cross-validation")
    p.add_argument("--manifest", required=True)
    src = p.add_mutually_exclusive_group()
    src.add_argument("--checkpoint")
    src.add_argument("--oracle", action="store_true", help="echo the labels (harness self-test)")
    p.add_argument("--folds", type=fold_spec, default=1)
    p.add_argument("--out")
    _training_flags(p)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("bench", help="paired with/without-GAL cross-validation over several seeds")
    p.add_argument("--manifest", required=True)
    p.add_argument("--seeds", type=positive_int, default=5)
    p.add_argument("--folds", type=fold_spec, default=4)
    p.add_argument("--out")
    _training_flags(p)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("gradcheck", help="finite-difference check of every op and the GAL layer")
    p.add_argument("--size", type=hwc_triple, default=(4, 5, 6))
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        return args.func(args)
    except CommandError as exc:
        print(f"galseg {args.command}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
