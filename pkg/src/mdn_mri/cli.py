"""Command-line interface: ``mdn <command> [options]``.

Commands: genmask, phantom, train, reconstruct, eval, ablate. Every command
that writes files also writes a JSON run manifest next to its output.
"""

import argparse
import csv
import os
import sys
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, checkpoint, data, kspace, metrics, training
from .core.optim import OptimizerConfig
from .model import ConfigError, ModelConfig, build_model, make_variant, normalize_variant

DESK_ITERS = 2000
DESK_SIZE = 64


class UsageError(Exception):
    pass


def _seed(value):
    if value is not None:
        return value
    env = os.environ.get("MDN_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise UsageError(f"MDN_SEED must be an integer, got {env!r}") from None


def _size(text):
    try:
        h, w = (int(v) for v in text.lower().split("x"))
    except ValueError:
        raise argparse.ArgumentTypeError(f"size must look like HxW, got {text!r}") from None
    if h < 1 or w < 1:
        raise argparse.ArgumentTypeError("size must be positive")
    return h, w


def _angles(text):
    if not text:
        return ()
    try:
        return tuple(int(a) for a in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"angles must be comma-separated integers: {text!r}") \
            from None


def _manifest_path(out):
    out = Path(out)
    return out / "manifest.json" if out.is_dir() else out.with_name(out.name + ".manifest.json")


def _write_manifest(out, argv, config, seeds, dataset_hash="", extra=None, status="ok",
                    manifest=None):
    manifest = manifest or training.RunManifest(command=list(argv), config=config, seeds=seeds,
                                                dataset_hash=dataset_hash)
    manifest.config, manifest.seeds = config, seeds
    manifest.dataset_hash = dataset_hash
    manifest.extra.update(extra or {})
    manifest.finish(status).write(_manifest_path(out))
    return manifest


# --- shared option groups ---------------------------------------------------

def _add_corpus(p, required=True):
    g = p.add_mutually_exclusive_group(required=required)
    g.add_argument("--data", metavar="DIR", help="directory of .pgm/.cimg images")
    g.add_argument("--phantoms", type=int, metavar="N",
                   help="use N synthetic phantoms instead of --data")
    p.add_argument("--pattern", default="*", help="glob filter inside --data (default: *)")
    p.add_argument("--size", type=int, default=DESK_SIZE,
                   help=f"phantom side length (desk default {DESK_SIZE}; full-scale data 378)")
    p.add_argument("--phantom-seed", type=int, default=0, help="phantom corpus seed")


def _add_task(p):
    p.add_argument("--task", default="csmri", choices=["csmri", "csmri-noisy", "superres"])
    p.add_argument("--mask", metavar="FILE", help="sampling mask file (csmri tasks)")
    p.add_argument("--scale", type=int, choices=[2, 3, 4], help="superres scale factor")
    p.add_argument("--noise", type=float, metavar="V",
                   help="complex Gaussian noise std (csmri-noisy; full-scale settings 0.01-0.03)")
    p.add_argument("--noise-domain", default="kspace", choices=["kspace", "image"],
                   help="where noise is injected (default: kspace)")


def _add_optimizer(p):
    d = OptimizerConfig()
    p.add_argument("--lr", type=float, default=d.base_lr,
                   help=f"base learning rate (default {d.base_lr}, the full-scale setting)")
    p.add_argument("--weight-decay", type=float, default=d.weight_decay,
                   help=f"L2 weight decay added to gradients (default {d.weight_decay})")
    p.add_argument("--lr-step", type=int, default=d.lr_step,
                   help=f"iterations between learning-rate drops (default {d.lr_step})")
    p.add_argument("--lr-gamma", type=float, default=d.lr_gamma,
                   help=f"learning-rate drop factor (default {d.lr_gamma})")
    p.add_argument("--beta1", type=float, default=d.beta1,
                   help=f"Adam first-moment decay (default {d.beta1})")
    p.add_argument("--iters", type=int, default=DESK_ITERS,
                   help=f"training iterations (desk default {DESK_ITERS}; "
                        f"full-scale setting {d.max_iterations})")
    p.add_argument("--batch", type=int, default=4, help="images per iteration (default 4)")
    p.add_argument("--crop", type=int, default=0, help="random square crop size (0 = whole image)")
    p.add_argument("--fresh-mask", action="store_true",
                   help="draw a new mask per sample instead of one fixed mask")
    p.add_argument("--log-every", type=int, default=100,
                   help="iterations between loss log lines (default 100)")


def _add_model(p):
    p.add_argument("--variant", default="full",
                   help="full, no-grl, no-lrls, no-residual, non-dilated or no-concat")
    p.add_argument("--blocks", type=int, default=2, help="cascaded blocks (default 2)")


def _load_corpus(args):
    if args.data:
        return data.load_dataset(args.data, args.pattern)
    if args.phantoms < 1:
        raise UsageError("--phantoms must be positive")
    return data.phantom_dataset(args.phantoms, args.size, seed=args.phantom_seed)


def _task(args, shape):
    kind = args.task.replace("-", "_")
    if kind == "superres":
        if args.mask or args.noise is not None:
            raise UsageError("--task superres takes --scale, not --mask or --noise")
        if args.scale is None:
            raise UsageError("--task superres needs --scale")
        return training.TaskSpec("superres", scale=args.scale)
    if args.scale is not None:
        raise UsageError(f"--scale is incompatible with --task {args.task}")
    if not args.mask:
        raise UsageError(f"--task {args.task} needs --mask")
    if kind == "csmri" and args.noise is not None:
        raise UsageError("--noise requires --task csmri-noisy")
    if kind == "csmri_noisy" and args.noise is None:
        raise UsageError("--task csmri-noisy needs --noise")
    mask = kspace.load_mask(args.mask)
    if shape is not None and mask.shape != tuple(shape):
        raise UsageError(f"mask {mask.shape} does not match image dimensions {tuple(shape)}")
    return training.TaskSpec(kind, mask=mask, noise_v=args.noise,
                             noise_domain=args.noise_domain)


def _optimizer(args):
    return OptimizerConfig(base_lr=args.lr, weight_decay=args.weight_decay,
                           lr_step=args.lr_step, lr_gamma=args.lr_gamma, beta1=args.beta1)


# --- commands ---------------------------------------------------------------

def cmd_genmask(args, argv):
    seed = _seed(args.seed)
    h, w = args.size
    mask = kspace.gen_mask(args.family.replace("-", "_"), h, w, args.rate, seed)
    kspace.save_mask(mask, args.out)
    _write_manifest(args.out, argv, {"family": mask.family, "size": [h, w],
                                     "rate": args.rate}, {"mask": seed},
                    extra={"achieved_rate": mask.achieved_rate})
    print(f"achieved rate {mask.achieved_rate:.6f}")
    return 0


def cmd_phantom(args, argv):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    ds = data.phantom_dataset(args.count, args.size, seed=args.seed)
    for i, img in enumerate(ds.items):
        data.write_pgm(out / f"phantom_{i:03d}.pgm", img, bits=args.bits)
    _write_manifest(out, argv, {"count": args.count, "size": args.size, "bits": args.bits},
                    {"phantom": args.seed}, dataset_hash=ds.digest())
    print(f"wrote {args.count} phantoms to {out}")
    return 0


def _train_setup(args):
    ds = _load_corpus(args)
    ds = data.augment_rotations(ds, args.rotate)
    task = _task(args, ds.shape)
    variant = normalize_variant(args.variant)
    channels = 2 if ds.is_complex else 1
    config = make_variant(ModelConfig(num_blocks=args.blocks, input_channels=channels), variant)
    return ds, task, config


def cmd_train(args, argv):
    seed = _seed(args.seed)
    ds, task, config = _train_setup(args)
    tconf = training.TrainConfig(optimizer=_optimizer(args), batch_size=args.batch,
                                 max_iterations=args.iters, seed=seed,
                                 log_every=args.log_every, crop=args.crop,
                                 fresh_mask=args.fresh_mask,
                                 checkpoint_every=args.checkpoint_every)
    test_pairs = None
    if args.test_data:
        test_ds = data.load_dataset(args.test_data)
        test_pairs = [training.make_pair(img, task, seed) for img in test_ds.items]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    model = build_model(config, seed=seed)
    manifest = training.RunManifest(command=list(argv), config={}, seeds={})

    def snapshot(m, it):
        checkpoint.save_checkpoint(m, out.with_name(f"{out.stem}.iter{it}{out.suffix}"),
                                   meta={"iteration": it})

    log = None if args.quiet else training.default_log()
    result = training.train(model, ds, task, tconf, test_pairs=test_pairs, log=log,
                            checkpoint_fn=snapshot)
    checkpoint.save_checkpoint(model, out, meta={"iteration": result.iterations,
                                                 "task": task.describe()})
    loss_csv = out.with_name(out.stem + ".loss.csv")
    training.write_loss_csv(loss_csv, result.curve)
    _write_manifest(out, argv, {"model": config.to_dict(), "train": tconf.to_dict(),
                                "task": task.describe(), "rotations": list(args.rotate),
                                "data": args.data or f"phantoms:{args.phantoms}"},
                    {"train": seed, "phantom": args.phantom_seed}, ds.digest(),
                    extra={"loss_csv": str(loss_csv)}, manifest=manifest)
    if result.curve:
        print(f"final loss {result.curve[-1].train_loss:.6e}")
    return 0


def _read_image(path):
    path = Path(path)
    if path.suffix.lower() == ".cimg":
        img = kspace.load_cimg(path)
        return img if np.any(img.imag) else img.real
    raw, maxval = data.read_pgm(path)
    return raw.astype(np.float64) / raw.max() if raw.max() > 0 else raw.astype(np.float64)


def _write_image(path, img):
    path = Path(path)
    if path.suffix.lower() == ".cimg":
        kspace.save_cimg(img, path)
    elif path.suffix.lower() == ".pgm":
        data.write_pgm(path, np.abs(img), bits=16)
    else:
        raise UsageError(f"output must end in .pgm or .cimg: {path}")


def cmd_reconstruct(args, argv):
    ckpt = checkpoint.load_checkpoint(args.ckpt)
    model = ckpt.to_model()
    truth = _read_image(args.input)
    complex_data = np.iscomplexobj(truth)
    if model.config.input_channels != (2 if complex_data else 1):
        raise UsageError(f"checkpoint expects {model.config.input_channels}-channel input, "
                         f"image is {'complex' if complex_data else 'real'}")
    if args.scale is not None:
        if args.mask or args.dc_lambda is not None:
            raise UsageError("--scale is incompatible with --mask/--dc-lambda")
        task = training.TaskSpec("superres", scale=args.scale)
    else:
        if not args.mask:
            raise UsageError("reconstruct needs --mask or --scale")
        mask = kspace.load_mask(args.mask)
        if mask.shape != truth.shape:
            raise UsageError(f"mask {mask.shape} does not match image {truth.shape}")
        if args.noise:
            task = training.TaskSpec("csmri_noisy", mask=mask, noise_v=args.noise)
        else:
            task = training.TaskSpec("csmri", mask=mask)
    seed = _seed(args.seed)
    inp, target = training.make_pair(truth, task, seed)
    out = training.predict(model, inp)
    recon = training.from_tensor(out, complex_data)
    if args.dc_lambda is not None:
        y = kspace.undersample(truth, task.mask)
        if task.noise_v:
            y = kspace.add_measurement_noise(y, task.noise_v, seed, task.mask)
        recon = kspace.data_consistency(recon, y, task.mask, args.dc_lambda)
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    _write_image(out_path, recon)
    base = training.from_tensor(inp, complex_data)
    ref = training.from_tensor(target, complex_data)
    p_in, p_out = metrics.psnr(base, ref), metrics.psnr(recon, ref)
    emap = metrics.error_map(np.abs(recon) if not complex_data and np.iscomplexobj(recon)
                             else recon, ref)
    emap_path = out_path.with_name(out_path.stem + ".error.pgm")
    scale = metrics.write_error_map(emap_path, emap)
    _write_manifest(out_path, argv, {"ckpt": str(args.ckpt), "task": task.describe(),
                                     "dc_lambda": args.dc_lambda}, {"noise": seed},
                    extra={"input_psnr_db": p_in, "output_psnr_db": p_out,
                           "error_map": str(emap_path), "error_scale": scale})
    print(f"input psnr {p_in:.3f} dB  output psnr {p_out:.3f} dB")
    return 0


def _score_recon_dir(args):
    ref = data.load_dataset(args.data, args.pattern)
    rec = data.load_dataset(args.recon, args.pattern)
    if len(ref) != len(rec):
        raise UsageError(f"{len(rec)} reconstructions for {len(ref)} references")
    report = metrics.QualityReport()
    for path, r, x in zip(ref.paths, ref.items, rec.items):
        report.add(Path(path).stem, x, r)
    return report, ref


def cmd_eval(args, argv):
    seed = _seed(args.seed)
    if args.recon:
        if not args.data:
            raise UsageError("--recon needs --data")
        report, ds = _score_recon_dir(args)
        config = {"recon": args.recon}
    else:
        if not args.ckpt:
            raise UsageError("eval needs --ckpt or --recon")
        ds = _load_corpus(args)
        task = _task(args, ds.shape)
        ckpt = checkpoint.load_checkpoint(args.ckpt)
        model = ckpt.to_model()
        pairs = [training.make_pair(img, task, seed) for img in ds.items]
        ids = [Path(p).stem if args.data else p for p in ds.paths]
        if args.baseline:
            report = training.baseline_report(pairs, ids, complex_data=ds.is_complex)
        else:
            report = training.evaluate(model, pairs, ids, complex_data=ds.is_complex)
        report.variant = ckpt.config.variant
        report.mask = task.mask.family if task.mask is not None else f"superres_x{task.scale}"
        report.rate = task.mask.requested_rate if task.mask is not None else float("nan")
        config = {"ckpt": str(args.ckpt), "task": task.describe(), "baseline": args.baseline}
    report.seed = seed
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(out)
    _write_manifest(out, argv, config, {"eval": seed}, ds.digest(),
                    extra={"mean_psnr_db": report.mean_psnr, "mean_ssim": report.mean_ssim})
    print(f"mean psnr {report.mean_psnr:.3f} dB  mean ssim {report.mean_ssim:.4f}  "
          f"psnr std {report.psnr_std:.3f} dB  excluded {report.excluded}")
    return 0


# --- ablation ---------------------------------------------------------------

def parse_grid(path):
    """Read ``variant family rate lr [seed]`` lines; '#' starts a comment.

    Returns ``(cells, problems)``, where problems are ``(line_no, text, reason)``.
    """
    cells, problems = [], []
    for no, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.split("#", 1)[0].strip()
        if not text:
            continue
        parts = text.split()
        try:
            if len(parts) not in (4, 5):
                raise ValueError("expected: variant family rate lr [seed]")
            cell = {"variant": normalize_variant(parts[0]),
                    "family": parts[1].replace("-", "_"),
                    "rate": float(parts[2]), "lr": float(parts[3]),
                    "seed": int(parts[4]) if len(parts) == 5 else None}
            if cell["family"] not in kspace.FAMILIES:
                raise ValueError(f"unknown mask family {parts[1]!r}")
        except (ValueError, ConfigError) as exc:
            problems.append((no, text, str(exc)))
            continue
        cells.append(cell)
    return cells, problems


def _cell_name(cell):
    return f"{cell['variant']}_{cell['family']}_{cell['rate']:g}_lr{cell['lr']:g}_s{cell['seed']}"


def run_cell(cell, opts):
    """Train and score one grid cell; returns a summary row (never raises)."""
    name = _cell_name(cell)
    cell_dir = Path(opts["out"]) / name
    cell_dir.mkdir(parents=True, exist_ok=True)
    row = dict(cell, cell=name, zero_filled_psnr_db="", psnr_db="", ssim="", status="ok")
    manifest = training.RunManifest(command=opts["argv"], config={}, seeds={})
    try:
        ds = data.load_dataset(opts["data"], opts["pattern"]) if opts["data"] else \
            data.phantom_dataset(opts["phantoms"], opts["size"], seed=opts["phantom_seed"])
        ds = data.augment_rotations(ds, opts["rotate"])
        h, w = ds.shape
        mask = kspace.gen_mask(cell["family"], h, w, cell["rate"], cell["seed"])
        task = training.TaskSpec("csmri", mask=mask)
        config = make_variant(ModelConfig(num_blocks=opts["blocks"],
                                          input_channels=2 if ds.is_complex else 1),
                              cell["variant"])
        optc = replace(opts["optimizer"], base_lr=cell["lr"])
        tconf = training.TrainConfig(optimizer=optc, batch_size=opts["batch"],
                                     max_iterations=opts["iters"], seed=cell["seed"],
                                     log_every=opts["log_every"], crop=opts["crop"])
        model = build_model(config, seed=cell["seed"])
        result = training.train(model, ds, task, tconf)
        pairs = [training.make_pair(img, task, cell["seed"]) for img in ds.items]
        ids = [Path(p).stem for p in ds.paths]
        report = training.evaluate(model, pairs, ids, complex_data=ds.is_complex)
        report.variant, report.mask, report.rate, report.seed = \
            cell["variant"], cell["family"], cell["rate"], cell["seed"]
        base = training.baseline_report(pairs, ids, complex_data=ds.is_complex)
        report.write_csv(cell_dir / "report.csv")
        training.write_loss_csv(cell_dir / "loss.csv", result.curve)
        checkpoint.save_checkpoint(model, cell_dir / "model.mdnc")
        row.update(zero_filled_psnr_db=base.mean_psnr, psnr_db=report.mean_psnr,
                   ssim=report.mean_ssim)
        _write_manifest(cell_dir, opts["argv"], {
            "cell": cell, "model": config.to_dict(), "train": tconf.to_dict(),
            "task": task.describe()}, {"cell": cell["seed"]}, ds.digest(),
            extra={"psnr_db": report.mean_psnr, "zero_filled_psnr_db": base.mean_psnr},
            manifest=manifest)
    except Exception as exc:  # a failed cell must not stop the grid
        row["status"] = f"failed: {type(exc).__name__}: {exc}"
        (cell_dir / "error.txt").write_text(traceback.format_exc())
        _write_manifest(cell_dir, opts["argv"], {"cell": cell}, {"cell": cell["seed"]},
                        extra={"error": str(exc)}, status="failed", manifest=manifest)
    return row


SUMMARY_FIELDS = ["cell", "variant", "family", "rate", "lr", "seed",
                  "zero_filled_psnr_db", "psnr_db", "ssim", "status"]


def cmd_ablate(args, argv):
    seed = _seed(args.seed)
    cells, problems = parse_grid(args.grid)
    for cell in cells:
        if cell["seed"] is None:
            cell["seed"] = seed
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    opts = {"out": str(out), "argv": list(argv), "data": args.data, "pattern": args.pattern,
            "phantoms": args.phantoms, "size": args.size, "phantom_seed": args.phantom_seed,
            "rotate": args.rotate, "blocks": args.blocks, "optimizer": _optimizer(args),
            "batch": args.batch, "iters": args.iters, "log_every": args.log_every,
            "crop": args.crop}
    if args.workers > 1 and len(cells) > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            rows = list(pool.map(run_cell, cells, [opts] * len(cells)))
    else:
        rows = []
        for cell in cells:
            rows.append(run_cell(cell, opts))
            if not args.quiet:
                r = rows[-1]
                print(f"{r['cell']}: {r['status']} psnr {r['psnr_db']}", file=sys.stderr)
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=SUMMARY_FIELDS, extrasaction="ignore")
        w.writeheader()
        w.writerows(rows)
    failed = [r for r in rows if r["status"] != "ok"]
    for r in rows:
        psnr = f"{r['psnr_db']:.3f}" if r["status"] == "ok" else "-"
        print(f"{r['cell']:<48} {psnr:>8}  {r['status']}")
    for no, text, reason in problems:
        print(f"grid line {no} skipped ({reason}): {text}")
    done = len(rows) - len(failed)
    print(f"{done}/{len(rows) + len(problems)} cells completed")
    _write_manifest(out, argv, {"grid": str(args.grid), "cells": cells}, {"default": seed},
                    extra={"completed": done, "failed": len(failed),
                           "skipped_lines": len(problems)},
                    status="ok" if not failed and not problems else "partial")
    return 0 if not failed and not problems else 1


# --- parser -----------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(
        prog="mdn", description="Multi-scale dilated residual network for CS-MRI: "
        "mask generation, training, reconstruction, evaluation and ablation sweeps. "
        "Seeds default to $MDN_SEED, then 0.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    p.subcommands = sub.choices

    g = sub.add_parser("genmask", help="generate a k-space sampling mask")
    g.add_argument("--family", required=True,
                   choices=["cartesian", "radial", "variable_density", "variable-density"])
    g.add_argument("--size", type=_size, required=True, metavar="HxW",
                   help="grid size, e.g. 64x64 (full-scale data 378x378)")
    g.add_argument("--rate", type=float, required=True, help="sampling rate in (0, 1]")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True, metavar="FILE")
    g.set_defaults(func=cmd_genmask)

    g = sub.add_parser("phantom", help="write synthetic phantom images as PGM files")
    g.add_argument("--count", type=int, default=4)
    g.add_argument("--size", type=int, default=DESK_SIZE)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--bits", type=int, default=16, choices=[8, 16])
    g.add_argument("--out", required=True, metavar="DIR")
    g.set_defaults(func=cmd_phantom)

    g = sub.add_parser("train", help="train an MDN variant")
    _add_corpus(g)
    _add_task(g)
    _add_model(g)
    _add_optimizer(g)
    g.add_argument("--rotate", type=_angles, default=(), metavar="A,B",
                   help="augment with rotations, e.g. 90,180,270")
    g.add_argument("--test-data", metavar="DIR", help="held-out images scored once per epoch")
    g.add_argument("--checkpoint-every", type=int, default=0,
                   help="also save a checkpoint every N iterations")
    g.add_argument("--seed", type=int)
    g.add_argument("--quiet", action="store_true")
    g.add_argument("--out", required=True, metavar="CKPT")
    g.set_defaults(func=cmd_train)

    g = sub.add_parser("reconstruct", help="degrade an image and reconstruct it")
    g.add_argument("--ckpt", required=True)
    g.add_argument("--input", required=True, metavar="IMAGE",
                   help="fully sampled .pgm or .cimg image (also the error-map reference)")
    g.add_argument("--mask", metavar="FILE")
    g.add_argument("--scale", type=int, choices=[2, 3, 4], help="superres instead of a mask")
    g.add_argument("--noise", type=float, default=0.0, metavar="V")
    g.add_argument("--dc-lambda", type=float, metavar="L",
                   help="apply k-space data consistency with weight L (0 = replace)")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True, metavar="IMAGE", help=".pgm or .cimg")
    g.set_defaults(func=cmd_reconstruct)

    g = sub.add_parser("eval", help="write a per-image PSNR/SSIM report")
    g.add_argument("--ckpt")
    _add_corpus(g, required=False)
    _add_task(g)
    g.add_argument("--recon", metavar="DIR",
                   help="score existing reconstructions in DIR against --data instead")
    g.add_argument("--baseline", action="store_true",
                   help="score the degraded inputs (zero-filled or bicubic) instead")
    g.add_argument("--seed", type=int)
    g.add_argument("--out", required=True, metavar="CSV")
    g.set_defaults(func=cmd_eval)

    g = sub.add_parser("ablate", help="run a grid of variant x mask x rate x lr cells")
    _add_corpus(g)
    _add_optimizer(g)
    g.add_argument("--blocks", type=int, default=2)
    g.add_argument("--rotate", type=_angles, default=(), metavar="A,B")
    g.add_argument("--grid", required=True, metavar="FILE",
                   help="one cell per line: variant family rate lr [seed]")
    g.add_argument("--workers", type=int, default=1, help="parallel worker processes")
    g.add_argument("--seed", type=int)
    g.add_argument("--quiet", action="store_true")
    g.add_argument("--out", required=True, metavar="DIR")
    g.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args, ["mdn"] + argv)
    except UsageError as exc:
        parser.subcommands[args.command].print_usage(sys.stderr)
        print(f"mdn {args.command}: error: {exc}", file=sys.stderr)
        return 2
    except (OSError, ValueError, checkpoint.CheckpointError, training.TrainingError) as exc:
        print(f"mdn {args.command}: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
