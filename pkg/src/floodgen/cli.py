"""Command-line entry points.

  floodgen train        --config cfg.json --data ROOT --out DIR [--resume CKPT]
  floodgen train-height --config cfg.json --data ROOT --out DIR [--resume CKPT]
  floodgen flood        --image PATH [--level-m X | --fraction F]
                        [--style-seed N] --ckpt CKPT --out PATH [--emit-mask]
  floodgen flood-batch  --in DIR --out DIR --ckpt CKPT [...]
  floodgen serve        --ckpt CKPT [--port N]
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

from . import inference, sim_dataset, service, trainer
from .sim_dataset import Image, IndexConfig


def _add_train_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="JSON file of TrainConfig keys")
    p.add_argument("--data", required=True, help="dataset root directory")
    p.add_argument("--out", required=True, help="output directory for checkpoints/metrics")
    p.add_argument("--resume", default=None, help="checkpoint to resume from")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="floodgen", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    _add_train_args(sub.add_parser("train", help="train the translation model"))
    _add_train_args(sub.add_parser("train-height", help="train the height estimator"))

    p = sub.add_parser("flood", help="flood a single photograph")
    p.add_argument("--image", required=True)
    p.add_argument("--level-m", type=float, default=None)
    p.add_argument("--fraction", type=float, default=None)
    p.add_argument("--style-seed", type=int, default=None)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--emit-mask", action="store_true")

    p = sub.add_parser("flood-batch", help="flood every image in a directory")
    p.add_argument("--in", dest="dir_in", required=True)
    p.add_argument("--out", dest="dir_out", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--level-m", type=float, default=None)
    p.add_argument("--fraction", type=float, default=None)
    p.add_argument("--style-seed", type=int, default=None)
    p.add_argument("--no-masks", action="store_true")

    p = sub.add_parser("serve", help="run the HTTP service")
    p.add_argument("--ckpt", default=None, help="checkpoint path (or FLOODGEN_CKPT)")
    p.add_argument("--port", type=int, default=None)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--static-dir", default=None, help="built web client to serve at /")

    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)

    if args.command in ("train", "train-height"):
        config = trainer.TrainConfig.from_file(args.config)
        require_real = args.command == "train" and config.sim_fraction < 1.0
        index = sim_dataset.build_index(
            args.data, IndexConfig(require_real=require_real, require_sim=config.sim_fraction > 0)
        )
        run = trainer.train if args.command == "train" else trainer.train_height
        final = run(config, index, args.out, resume=args.resume)
        print(f"final checkpoint: {final}")
        return 0

    if args.command == "flood":
        model = inference.load_flood_model(args.ckpt)
        request = inference.FloodRequest(
            image=Image.from_file(args.image),
            flood_level_m=args.level_m,
            flood_fraction=args.fraction,
            style_seed=args.style_seed,
        )
        result = inference.flood(request, model)
        out = Path(args.out)
        result.flooded.save(out)
        if args.emit_mask:
            result.mask.save_png(out.with_name(out.stem + "_mask.png"))
        print(json.dumps(result.diagnostics))
        return 0

    if args.command == "flood-batch":
        model = inference.load_flood_model(args.ckpt)
        summary = inference.flood_batch(
            args.dir_in,
            args.dir_out,
            model,
            flood_level_m=args.level_m,
            flood_fraction=args.fraction,
            style_seed=args.style_seed,
            emit_masks=not args.no_masks,
        )
        print(json.dumps(summary))
        return 0 if summary["failed"] == 0 else 1

    if args.command == "serve":
        ckpt = args.ckpt or os.environ.get("FLOODGEN_CKPT")
        if not ckpt:
            print("serve: provide --ckpt or set FLOODGEN_CKPT", file=sys.stderr)
            return 2
        service.serve(ckpt, port=args.port, host=args.host, static_dir=args.static_dir)
        return 0

    return 2


if __name__ == "__main__":
    sys.exit(main())
