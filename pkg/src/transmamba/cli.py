"""Command-line surface: gen-data, train, derain, eval, gradcheck,
band-swap, describe.

Exit codes: 0 ok, 1 runtime failure, 2 usage error, 3 gradcheck failure.
"""

from __future__ import annotations

import argparse
import sys
import time

import numpy as np


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="transmamba",
                                     description="Dual-branch spectral deraining toolkit")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic paired dataset")
    p.add_argument("--out", required=True, help="dataset root (gets rain/ and clean/)")
    p.add_argument("--count", type=int, required=True)
    p.add_argument("--recipe", help="recipe file (flat key = value)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, default=64, help="square image size in px")

    p = sub.add_parser("train", help="train from a run config file")
    p.add_argument("--config", help="run config file; desk preset if omitted")
    p.add_argument("--seed", type=int, help="override the config seed")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config key (repeatable)")
    p.add_argument("--quiet", action="store_true")

    p = sub.add_parser("derain", help="run a checkpoint on one image")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--in", dest="input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--dump-attn", help="save first-block attention maps as .npz")

    p = sub.add_parser("eval", help="evaluate a checkpoint on a paired folder")
    p.add_argument("--ckpt", required=True)
    p.add_argument("--data", required=True, help="dataset root with rain/ and clean/")
    p.add_argument("--report", required=True, help="text report path (+ .jsonl twin)")

    from .gradcheck import COMPONENTS

    p = sub.add_parser("gradcheck", help="finite-difference gradient verification")
    p.add_argument("--component", required=True, choices=list(COMPONENTS) + ["all"])
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--coords", type=int, default=20)

    p = sub.add_parser("band-swap", help="swap low-frequency bands between two images")
    p.add_argument("--rainy", required=True)
    p.add_argument("--clean", required=True)
    p.add_argument("--bands", type=int, required=True, help="number of low bands to replace")
    p.add_argument("--total-bands", type=int, default=2)
    p.add_argument("--out", required=True)

    p = sub.add_parser("describe", help="print the per-level architecture table")
    p.add_argument("--config", help="run config file")
    p.add_argument("--preset", default=None, help="desk, desk-progressive or paper-full")

    return parser


def _load_run_config(args):
    from .config import apply_settings, load_run_config, preset

    cfg = load_run_config(args.config) if args.config else preset("desk")
    overrides = {}
    for item in getattr(args, "set", []):
        if "=" not in item:
            raise ValueError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if overrides:
        cfg = apply_settings(cfg, overrides)
    if getattr(args, "seed", None) is not None:
        cfg = apply_settings(cfg, {"seed": str(args.seed)})
    return cfg


def _cmd_gen_data(args) -> int:
    from .config import load_recipe
    from .data import RainRecipe, generate_dataset

    recipe = load_recipe(args.recipe) if args.recipe else RainRecipe()
    pairs = generate_dataset(args.out, args.count, recipe, seed=args.seed, size=args.size)
    print(f"wrote {len(pairs)} pairs under {args.out}")
    return 0


def _cmd_train(args) -> int:
    from .train import train

    cfg = _load_run_config(args)
    every = max(1, cfg.total_iters // 20)

    def log(t, value, lr, kind="loss"):
        if not args.quiet and (t % every == 0 or t == 1 or kind == "eval"):
            label = "psnr" if kind == "eval" else "loss"
            print(f"iter {t:>6}  {label} {value:.5f}  lr {lr:.2e}")

    result = train(cfg, log_fn=log)
    print(f"final loss {result.history[-1][1]:.5f}; checkpoint at {cfg.checkpoint_path}")
    if result.val_pairs:
        from .train import evaluate

        report = evaluate(result.model, result.val_pairs)
        print(f"holdout: psnr {report['mean_psnr']:.3f} dB (input {report['mean_input_psnr']:.3f}), "
              f"ssim {report['mean_ssim']:.4f}")
    return 0


def _cmd_derain(args) -> int:
    from .imageio import read_image, write_image
    from .network import load_checkpoint

    model = load_checkpoint(args.ckpt)
    img = read_image(args.input)
    maps = []
    if args.dump_attn:
        first = model.enc_levels[0].sdtbs[0].attn
        first.attn_hook = maps.append
    out = model.derain(img)
    write_image(args.out, out)
    if args.dump_attn:
        np.savez(args.dump_attn, *maps)
        print(f"saved {len(maps)} attention maps to {args.dump_attn}")
    print(f"derained {args.input} -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    from .data import load_dataset
    from .network import load_checkpoint
    from .train import evaluate, write_report

    model = load_checkpoint(args.ckpt)
    pairs = load_dataset(args.data)
    report = evaluate(model, pairs)
    jsonl = write_report(report, args.report)
    print(f"mean psnr {report['mean_psnr']:.3f} dB, mean ssim {report['mean_ssim']:.4f} "
          f"over {len(pairs)} pairs; reports: {args.report}, {jsonl}")
    return 0


def _cmd_gradcheck(args) -> int:
    from .gradcheck import COMPONENTS, run_all

    names = COMPONENTS if args.component == "all" else (args.component,)
    started = time.time()
    reports = run_all(names, n_coords=args.coords, seed=args.seed)
    failed = False
    for rep in reports:
        status = "ok" if rep["passed"] else "FAIL"
        print(f"{rep['component']:<8} max rel err {rep['max_rel_err']:.3e} "
              f"(tol {rep['tolerance']:.0e}, {rep['coords']} coords)  {status}")
        failed |= not rep["passed"]
    print(f"total {time.time() - started:.1f}s")
    return 3 if failed else 0


def _cmd_band_swap(args) -> int:
    from .imageio import read_image, write_image
    from .spectral import band_swap, build_mesh_index

    rainy = read_image(args.rainy)
    clean = read_image(args.clean)
    _, H, W = rainy.shape
    mesh = build_mesh_index(H, W, args.total_bands)
    out = band_swap(rainy, clean, mesh, args.bands)
    write_image(args.out, out)
    print(f"swapped {args.bands}/{args.total_bands} low bands -> {args.out}")
    return 0


def _cmd_describe(args) -> int:
    from .config import preset
    from .network import describe

    if args.config:
        cfg = _load_run_config(args).model
    else:
        cfg = preset(args.preset or "desk").model
    info = describe(cfg)
    print(f"{'level':<6} {'channels':>8} {'scale':>6} {'sdtbs':>6} {'cbsms':>6} {'heads':>6}")
    for row in info["levels"]:
        print(f"{row['level']:<6} {row['channels']:>8} 1/{row['spatial_scale']:<4} "
              f"{row['sdtbs']:>6} {row['cbsms']:>6} {row['heads']:>6}")
    print(f"parameters: {info['parameter_count']:,}")
    return 0


_HANDLERS = {
    "gen-data": _cmd_gen_data,
    "train": _cmd_train,
    "derain": _cmd_derain,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
    "band-swap": _cmd_band_swap,
    "describe": _cmd_describe,
}


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return _HANDLERS[args.command](args)
    except (ValueError, RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
