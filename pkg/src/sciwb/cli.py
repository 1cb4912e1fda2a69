"""The sciwb command line.

Subcommands: simulate, reconstruct, train, analyze, metrics,
export-png. Exit codes: 0 success, 2 usage error, 3 data error
(unreadable/malformed/mismatched inputs), 4 numerical failure.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import analysis, config as cfgmod, gap, pngio, report, scenes, training
from .autograd import Tensor, no_grad
from .dataio import load_array, save_array, save_json, write_csv
from .exceptions import (ContractError, DataError, DimensionError,
                         NumericalError, UsageError)
from .forward_model import MaskSet, SensingOp, generate_mask, init_input, measure
from .metrics import evaluate, psnr, ssim
from .srn import SrnConfig, SrnModel

# rng purposes, combined with the seed as [seed, TAG, ...]
_TAG_MASK, _TAG_SCENE, _TAG_NOISE, _TAG_WEIGHTS = 0, 1, 2, 3


def _rng(seed: int, *tags: int) -> np.random.Generator:
    return np.random.default_rng([int(seed), *[int(t) for t in tags]])


def _load_config(path: str | None) -> cfgmod.ExperimentConfig:
    if path is None:
        return cfgmod.parse({})
    return cfgmod.load(path)


def _make_masks(cfg: cfgmod.ExperimentConfig, seed: int) -> MaskSet:
    g = cfg.geometry
    rng = _rng(seed, _TAG_MASK)
    kw = dict(kind=cfg.mask.kind, p=cfg.mask.p,
              gray_range=(cfg.mask.gray_low, cfg.mask.gray_high))
    if cfg.kind == "cassi":
        base = generate_mask(rng, (g.height, g.width), **kw)
        return MaskSet.cassi(base, g.channels, g.shift_step)
    stack = generate_mask(rng, (g.height, g.width, g.channels), **kw)
    return MaskSet.cacti(stack)


def _make_scene(cfg: cfgmod.ExperimentConfig, seed: int, *tags: int) -> np.ndarray:
    g = cfg.geometry
    return scenes.make_scene(cfg.scene.kind, _rng(seed, _TAG_SCENE, *tags),
                             g.height, g.width, g.channels,
                             num_disks=cfg.scene.num_disks,
                             tile=cfg.scene.tile, path=cfg.scene.path)


def _srn_config(cfg: cfgmod.ExperimentConfig) -> SrnConfig:
    s = cfg.srn
    return SrnConfig(in_channels=cfg.geometry.channels, width=s.width,
                     num_rbs=s.num_rbs, kernel_size=s.kernel_size,
                     use_cae=s.use_cae, cae_reduction=s.cae_reduction,
                     variant=s.variant, rescale_scale=s.rescale_scale,
                     inner_rbs=s.inner_rbs)


# -- simulate -------------------------------------------------------------------


def cmd_simulate(args) -> int:
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    out = Path(args.out)
    masks = _make_masks(cfg, seed)
    cube = _make_scene(cfg, seed)
    meas = measure(cube, masks, cfg.noise.std, _rng(seed, _TAG_NOISE))
    save_array(out / "truth.npy", cube)
    save_array(out / "measurement.npy", meas.data)
    if masks.kind == "cassi":
        save_array(out / "mask.npy", masks.base)
    else:
        save_array(out / "masks.npy", masks.per_channel)
    descriptor = {
        "kind": masks.kind,
        "height": masks.height,
        "width": masks.width,
        "channels": masks.channels,
        "shift_step": masks.shift_step,
        "noise_std": meas.noise_std,
        "seed": int(seed),
        "channel_labels": [f"c{c:02d}" for c in range(masks.channels)],
    }
    save_json(out / "descriptor.json", descriptor)
    cfgmod.save(out / "config.json", cfg)
    print(f"simulated {masks.kind} snapshot {meas.data.shape} from cube "
          f"{cube.shape} -> {out}")
    return 0


def _load_sim(input_dir: str | Path):
    input_dir = Path(input_dir)
    from .dataio import load_json
    desc = load_json(input_dir / "descriptor.json")
    kind = desc.get("kind")
    if kind == "cassi":
        base = load_array(input_dir / "mask.npy")
        masks = MaskSet.cassi(base, int(desc["channels"]), int(desc["shift_step"]))
    elif kind == "cacti":
        masks = MaskSet.cacti(load_array(input_dir / "masks.npy"))
    else:
        raise DataError(f"descriptor in {input_dir} has unknown kind {kind!r}")
    y = load_array(input_dir / "measurement.npy")
    if y.shape != (masks.height, masks.width_ext):
        raise DataError(
            f"measurement shape {y.shape} does not match descriptor geometry "
            f"({masks.height}, {masks.width_ext})")
    return masks, y, desc


# -- reconstruct ------------------------------------------------------------------


def _reconstruct_cube(method: str, y: np.ndarray, masks: MaskSet,
                      cfg: cfgmod.ExperimentConfig, weights: str | None):
    """Returns (cube, state-or-None)."""
    op = SensingOp(masks)
    if method == "backprojection":
        return init_input(y, masks), None
    if method == "gap-tv":
        return gap.gap_tv_reconstruct(
            y, op, tv_weight=cfg.gap.tv_weight, iters=cfg.gap.iters,
            tv_iters=cfg.gap.tv_iters)
    if method in ("srn", "cae-srn", "gap-srn"):
        if weights is None:
            raise UsageError(f"method {method!r} requires --weights")
        if method in ("srn", "cae-srn"):
            model = training.load_model(weights)
            fy = init_input(y, masks).transpose(2, 0, 1)[None]
            with no_grad():
                pred = model(Tensor(fy.astype(model.dtype)))
            return np.asarray(pred.data[0].transpose(1, 2, 0), dtype=np.float64), None
        models = training.load_stage_models(weights)
        with no_grad():
            state = gap.gap_srn_forward(y, op, models, dtype=models[0].dtype)
        cube = state.stage_outputs[-1].data.astype(np.float64)
        return cube, state
    raise UsageError(f"unknown method {method!r}")


def cmd_reconstruct(args) -> int:
    cfg = _load_config(args.config)
    masks, y, desc = _load_sim(args.input)
    method = args.method or cfg.method
    out = Path(args.out)
    cube, state = _reconstruct_cube(method, y, masks, cfg, args.weights)
    save_array(out / "recon.npy", cube)
    save_json(out / "descriptor.json", {
        "kind": desc.get("kind"), "method": method,
        "height": masks.height, "width": masks.width,
        "channels": masks.channels, "shift_step": masks.shift_step,
        "source": Path(args.input).name,
    })
    truth_path = Path(args.truth) if args.truth else Path(args.input) / "truth.npy"
    truth = load_array(truth_path) if truth_path.is_file() else None
    if state is not None:
        stage_rows = []
        for i, res in enumerate(state.residuals):
            row = [i + 1, res]
            if truth is not None and state.stage_outputs[i] is not None:
                stage_cube = state.stage_outputs[i]
                stage_cube = stage_cube.data if isinstance(stage_cube, Tensor) else stage_cube
                row.append(psnr(stage_cube.astype(np.float64), truth).mean_psnr)
            else:
                row.append("")
            stage_rows.append(row)
        write_csv(out / "stages.csv", ["stage", "residual", "mean_psnr"], stage_rows)
        psnrs = [r[2] for r in stage_rows if r[2] != ""]
        report.save_stage_trace(state.residuals, out / "trace.png",
                                psnrs=psnrs or None)
    if truth is not None:
        rep = evaluate(cube, truth)
        rows = [[f"c{i:02d}", v] for i, v in enumerate(rep.channel_psnr)]
        rows.append(["mean_psnr", rep.mean_psnr])
        rows.append(["mean_ssim", rep.mean_ssim])
        write_csv(out / "metrics.csv", ["name", "value"], rows)
        report.save_psnr_bars(rep.channel_psnr, out / "metrics.png",
                              mean_psnr=rep.mean_psnr)
        print(f"{method}: mean PSNR {rep.mean_psnr:.2f} dB, "
              f"mean SSIM {rep.mean_ssim:.4f} -> {out}")
    else:
        print(f"{method}: wrote reconstruction {cube.shape} -> {out}")
    return 0


# -- train -----------------------------------------------------------------------


def _training_cubes(cfg: cfgmod.ExperimentConfig, seed: int,
                    data_dir: str | None) -> list[np.ndarray]:
    if data_dir is not None:
        paths = sorted(Path(data_dir).glob("*.npy"))
        if not paths:
            raise DataError(f"no .npy cubes found in {data_dir}")
        cubes = []
        g = cfg.geometry
        for p in paths:
            cube = load_array(p).astype(np.float64)
            if cube.shape != (g.height, g.width, g.channels):
                raise DataError(
                    f"cube {p} has shape {cube.shape}, configuration expects "
                    f"{(g.height, g.width, g.channels)}")
            cubes.append(cube)
        return cubes
    return [_make_scene(cfg, seed, i) for i in range(cfg.train.num_samples)]


def cmd_train(args) -> int:
    cfg = _load_config(args.config)
    seed = args.seed if args.seed is not None else cfg.seed
    out = Path(args.out)
    method = args.method or cfg.method
    if method not in ("srn", "cae-srn", "gap-srn"):
        raise UsageError(
            f"method {method!r} is not trainable; use srn, cae-srn or gap-srn")
    masks = _make_masks(cfg, seed)
    cubes = _training_cubes(cfg, seed, args.data)
    t = cfg.train
    eff_batch = min(t.batch, len(cubes))
    steps_per_epoch = max(1, -(-len(cubes) // eff_batch))
    steps = t.steps if t.steps is not None else t.epochs * steps_per_epoch
    ckpt_dir = out / "checkpoints"

    if method in ("srn", "cae-srn"):
        srn_cfg = _srn_config(cfg)
        if method == "cae-srn":
            srn_cfg = replace(srn_cfg, use_cae=True)
        if args.resume:
            models, arrays, start = training.load_checkpoint(args.resume)
            model = models[0]
            opt = training.attach_optimizer([model], arrays, start, t.lr)
        else:
            model = SrnModel(srn_cfg, rng=_rng(seed, _TAG_WEIGHTS))
            opt, start = None, 0
        history = training.train_srn(
            model, cubes, masks, steps=steps, lr=t.lr, batch=t.batch,
            halve_every=t.halve_every, seed=seed,
            augment_noise=t.augment_noise, noise_low=t.noise_low,
            noise_high=t.noise_high, start_step=start, opt=opt,
            checkpoint_dir=ckpt_dir, checkpoint_every=t.checkpoint_every)
        training.save_model(model, out / "weights")
    else:
        op = SensingOp(masks)
        samples = []
        for i, cube in enumerate(cubes):
            meas = measure(cube, masks, cfg.noise.std, _rng(seed, _TAG_NOISE, i))
            samples.append((meas.data.reshape(-1), cube))
        if args.resume:
            stage_models, arrays, start = training.load_checkpoint(args.resume)
            opt = training.attach_optimizer(stage_models, arrays, start, t.lr)
        else:
            stage_models = [SrnModel(_srn_config(cfg), rng=_rng(seed, _TAG_WEIGHTS, s))
                            for s in range(cfg.gap.stages)]
            opt, start = None, 0
        history = gap.train_gap_srn(
            samples, op, stage_models, steps=steps, lr=t.lr, batch=t.batch,
            seed=seed, weights=tuple(cfg.gap.loss_weights), start_step=start,
            opt=opt, checkpoint_dir=ckpt_dir, checkpoint_every=t.checkpoint_every)
        history.setdefault("lr", [t.lr] * len(history["loss"]))
        training.save_stage_models(stage_models, out / "weights")

    rows = [[i + 1, loss, lr] for i, (loss, lr)
            in enumerate(zip(history["loss"], history["lr"]))]
    write_csv(out / "loss.csv", ["step", "loss", "lr"], rows)
    report.save_loss_curve(history["loss"], out / "loss.png",
                           title=f"{method} training loss")
    cfgmod.save(out / "config.json", cfg)
    final = history["loss"][-1] if history["loss"] else float("nan")
    print(f"trained {method} for {len(history['loss'])} step(s), "
          f"final loss {final:.6g} -> {out}")
    return 0


# -- analyze ---------------------------------------------------------------------


def cmd_analyze(args) -> int:
    out = Path(args.out)
    profiles = analysis.standard_variant_profiles(
        in_channels=args.channels, height=args.height, width=args.width)
    if args.config:
        cfg = _load_config(args.config)
        profiles.append(analysis.build_profile(
            _srn_config(cfg), cfg.geometry.height, cfg.geometry.width,
            label="configured"))
    header, rows = analysis.profile_table(profiles)
    write_csv(out / "profiles.csv", header, rows)
    bheader: list[str] = []
    brows: list[list] = []
    for p in profiles:
        bheader, chunk = analysis.breakdown_rows(p)
        brows.extend(chunk)
    write_csv(out / "breakdown.csv", bheader, brows)
    report.save_profile_chart(profiles, out / "profile.png")
    widths = [max(len(str(r[i])) for r in [header] + rows) for i in range(len(header))]
    for r in [header] + rows:
        print("  ".join(str(v).ljust(widths[i]) for i, v in enumerate(r)))
    print(f"wrote {out / 'profiles.csv'}")
    return 0


# -- metrics ----------------------------------------------------------------------


def cmd_metrics(args) -> int:
    pred = load_array(args.pred).astype(np.float64)
    truth = load_array(args.truth).astype(np.float64)
    rep = evaluate(pred, truth)
    for i, v in enumerate(rep.channel_psnr):
        print(f"channel {i:02d}: PSNR {v:.4f} dB")
    print(f"mean PSNR: {rep.mean_psnr:.4f} dB")
    print(f"mean SSIM: {rep.mean_ssim:.6f}")
    if args.out:
        out = Path(args.out)
        rows = [[f"c{i:02d}", v] for i, v in enumerate(rep.channel_psnr)]
        rows.append(["mean_psnr", rep.mean_psnr])
        rows.append(["mean_ssim", rep.mean_ssim])
        write_csv(out / "metrics.csv", ["name", "value"], rows)
        report.save_psnr_bars(rep.channel_psnr, out / "metrics.png",
                              mean_psnr=rep.mean_psnr)
        print(f"wrote {out / 'metrics.csv'}")
    return 0


# -- export-png ----------------------------------------------------------------------


def cmd_export_png(args) -> int:
    cube = load_array(args.cube)
    if cube.ndim == 2:
        cube = cube[:, :, None]
    if cube.ndim != 3:
        raise DataError(f"expected a cube or plane, got shape {cube.shape}")
    paths = pngio.export_cube_pngs(cube, args.out, prefix=args.prefix)
    print(f"wrote {len(paths)} PNG file(s) -> {args.out}")
    return 0


# -- parser -------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sciwb",
        description="snapshot compressive imaging workbench")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthesize a scene and its snapshot")
    p.add_argument("--config", help="experiment configuration JSON")
    p.add_argument("--seed", type=int, help="override the configured seed")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("reconstruct", help="recover a cube from a snapshot")
    p.add_argument("--input", required=True,
                   help="simulate output directory (measurement + masks)")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="experiment configuration JSON")
    p.add_argument("--method", choices=cfgmod.METHODS,
                   help="override the configured method")
    p.add_argument("--weights", help="trained weights directory (srn / gap-srn)")
    p.add_argument("--truth", help="ground-truth cube NPY (defaults to the "
                                   "input directory's truth.npy when present)")
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("train", help="fit reconstruction weights")
    p.add_argument("--config", help="experiment configuration JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--data", help="directory of (H, W, C) cube NPY files; "
                                  "scenes are synthesized when omitted")
    p.add_argument("--seed", type=int)
    p.add_argument("--method", choices=("srn", "cae-srn", "gap-srn"))
    p.add_argument("--resume", help="checkpoint directory to continue from")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("analyze", help="parameter/FLOP/receptive-field table")
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="add a row for the configured model")
    p.add_argument("--channels", type=int, default=28)
    p.add_argument("--height", type=int, default=256)
    p.add_argument("--width", type=int, default=256)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("metrics", help="compare a reconstruction to ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--truth", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("export-png", help="render cube channels to PNG files")
    p.add_argument("--cube", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--prefix", default="channel")
    p.set_defaults(func=cmd_export_png)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 2
    except (DataError, ContractError, DimensionError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
