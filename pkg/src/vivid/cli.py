"""Command line: ``vivid make-data | train | infer | eval``.

Exit codes: 0 success, 2 config error, 3 data error, 4 runtime/numerical error.
Relative output paths are resolved under ``$VIVID_RUN_DIR`` when it is set.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from .config import RunConfig
from .datapipe import Dataset, _read_landmarks, _read_png, load_dataset, save_dataset, synth_pair, write_png
from .errors import ConfigError, DataError, VividError
from .evaluator import BicubicPredictor, IdentityStub, ModelPredictor, evaluate
from .trainer import Trainer, load_checkpoint

log = logging.getLogger("vivid")

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_RUNTIME = 0, 2, 3, 4


def output_path(path) -> Path:
    path = Path(path)
    root = os.environ.get("VIVID_RUN_DIR")
    if root and not path.is_absolute():
        return Path(root) / path
    return path


# -- make-data -------------------------------------------------------------------


def _source_items(src: Path):
    manifest = src / "manifest.json"
    if manifest.exists():
        try:
            items = json.loads(manifest.read_text())["items"]
        except (ValueError, KeyError) as exc:
            raise DataError(f"{manifest}: malformed manifest ({exc})") from None
        return [(str(it["id"]), float(it.get("pose_tag", 0.0))) for it in items]
    if not (src / "hr").is_dir():
        raise DataError(f"{src}: expected an hr/ directory of 128x128 PNGs")
    return [(p.stem, 0.0) for p in sorted((src / "hr").glob("*.png"))]


def cmd_make_data(args) -> int:
    cfg = RunConfig.load(args.config)
    overrides = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.scale is not None:
        overrides["scale"] = args.scale
    if overrides:
        cfg.update("data", overrides)
    deg = cfg.degradation()
    pairs = []
    if args.toy:
        from .toyfaces import make_faces

        for i, (hr, lm, side, yaw) in enumerate(make_faces(args.toy, deg.seed)):
            rng = np.random.default_rng([deg.seed, i])
            pairs.append(synth_pair(hr, lm, deg, rng, source=side, pose_tag=yaw, id=f"{i:04d}"))
    else:
        if args.src is None:
            raise ConfigError("make-data needs --src DIR or --toy N")
        src = Path(args.src)
        for i, (pid, pose) in enumerate(_source_items(src)):
            hr = _read_png(src / "hr" / f"{pid}.png", 128)
            lm = _read_landmarks(src / "landmarks" / f"{pid}.txt")
            side_path = src / "source" / f"{pid}.png"
            side = _read_png(side_path, 128) if side_path.exists() else None
            rng = np.random.default_rng([deg.seed, i])
            try:
                pairs.append(synth_pair(hr, lm, deg, rng, source=side, pose_tag=pose, id=pid))
            except ValueError as exc:
                raise DataError(f"{src / 'hr' / (pid + '.png')}: {exc}") from None
    out = output_path(args.out)
    save_dataset(out, pairs)
    cfg.echo(out)
    lr_side = 128 // deg.scale
    print(f"wrote {len(pairs)} pairs ({lr_side}x{lr_side} LR, 128x128 HR) to {out}")
    return EXIT_OK


# -- train -------------------------------------------------------------------------


def cmd_train(args) -> int:
    from .plotting import plot_losses

    cfg = RunConfig.load(args.config)
    if args.steps is not None:
        cfg.update("train", {f"steps_stage{args.stage}": args.steps})
    tcfg = cfg.train(args.stage)
    mcfg = cfg.model()
    run_dir = output_path(args.run_dir)
    init = None
    if args.resume:
        init = load_checkpoint(args.resume)
    elif args.stage > 1:
        prev = run_dir / f"stage{args.stage - 1}" / "checkpoint.pt"
        if prev.exists():
            init = load_checkpoint(prev)
            log.info("initializing from %s", prev)
    data = load_dataset(args.data)
    trainer = Trainer(tcfg, data, init=init, model_cfg=mcfg)
    stage_dir = run_dir / f"stage{args.stage}"
    cfg.echo(stage_dir)
    _, report = trainer.run(stage_dir)
    plot_losses(report, stage_dir / "losses.png")
    last = report.rows[-1] if report.rows else {}
    print(f"stage {args.stage}: {len(report.rows)} steps, final L_G={last.get('L_G', float('nan')):.5g}; "
          f"outputs in {stage_dir}")
    return EXIT_OK


# -- infer -------------------------------------------------------------------------


def cmd_infer(args) -> int:
    ckpt = load_checkpoint(args.checkpoint)
    predictor = ModelPredictor(ckpt.build_model(), use_mean_landmarks=True)
    src = Path(args.input)
    inputs = sorted(src.glob("*.png")) if src.is_dir() else [src]
    if not inputs:
        raise DataError(f"{src}: no PNG inputs found")
    out = output_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for path in inputs:
        try:
            lr = _read_png(path, 16)
        except DataError as exc:
            raise DataError(f"{exc} (inference expects 16x16 RGB inputs)") from None
        result = predictor.run(lr)
        for kind in ("coarse", "prior", "fine"):
            write_png(out / f"{path.stem}_{kind}.png", result[kind])
    print(f"wrote coarse/prior/fine outputs for {len(inputs)} input(s) to {out}")
    return EXIT_OK


# -- eval --------------------------------------------------------------------------


def cmd_eval(args) -> int:
    cfg = RunConfig.load(args.config)
    ecfg = cfg["eval"]
    if args.stub == "identity":
        predictor, emb = IdentityStub(), cfg.model().make_embedder()
    elif args.stub == "bicubic":
        predictor, emb = BicubicPredictor(), cfg.model().make_embedder()
    elif args.checkpoint:
        ckpt = load_checkpoint(args.checkpoint)
        model = ckpt.build_model()
        predictor, emb = ModelPredictor(model, ecfg["use_mean_landmarks"]), model.cfg.make_embedder()
    else:
        raise ConfigError("eval needs --checkpoint PATH or --stub {identity,bicubic}")
    data = load_dataset(args.data)
    out = output_path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    cfg.echo(out)
    if len(data) == 0:
        log.warning("dataset %s is empty; writing an empty report", args.data)
    report = evaluate(predictor, data, emb, baseline=ecfg["bicubic_baseline"] and len(data) > 0)
    report.to_csv(out / "report.csv")
    report.to_json(out / "report.json")
    if ecfg["figures"] and len(data):
        from .plotting import plot_metrics

        plot_metrics(report, out)
    agg = report.aggregate
    print(f"evaluated {agg['n']} images: mean PSNR {_num(agg['mean_psnr_db'])} dB, "
          f"mean SSIM {_num(agg['mean_ssim'])}; report in {out}")
    return EXIT_OK


def _num(v) -> str:
    return "n/a" if v is None else f"{v:.4g}"


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="vivid", description="Coarse-to-fine face hallucination and frontalization")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="synthesize a paired LR/HR dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--src", help="directory with hr/, landmarks/ and optional source/ + manifest.json")
    p.add_argument("--toy", type=int, default=0, help="generate N procedural faces instead of reading --src")
    p.add_argument("--seed", type=int)
    p.add_argument("--scale", type=int)
    p.add_argument("--config")
    p.set_defaults(func=cmd_make_data)

    p = sub.add_parser("train", help="run one training stage")
    p.add_argument("--stage", type=int, choices=(1, 2, 3), required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--resume")
    p.add_argument("--run-dir", default="run")
    p.add_argument("--steps", type=int, help="override the configured step count for this stage")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="hallucinate 16x16 inputs")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("eval", help="PSNR/SSIM/identity report over a dataset")
    p.add_argument("--checkpoint")
    p.add_argument("--stub", choices=("identity", "bicubic"))
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--config")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except VividError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    except (RuntimeError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
