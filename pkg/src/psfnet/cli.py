"""Command line entry point: ``psfnet {train,infer,eval,ablate}``.

Exit codes: 0 success, 1 usage error, 2 data or configuration error.
The compute device is taken from ``PSFNET_DEVICE`` (default ``cpu``).
"""
import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import torch

from . import __version__
from .config import load_config
from .data import build_network_input, load_scene
from .errors import ConfigurationError, ParseError, PsfnetError
from .hdrio import write_hdr, write_preview
from .metrics import evaluate, image_metrics
from .model import load_checkpoint
from .tiling import TileSpec, tiled_forward
from .tonemap import mu_law
from .trainer import DataConfig, PRESETS, run_ablation, train

log = logging.getLogger("psfnet")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


def device():
    return torch.device(os.environ.get("PSFNET_DEVICE", "cpu"))


def parse_size(text):
    if text is None or text.lower() in ("none", "native"):
        return None
    return DataConfig(resize=text).resize_to


def preview_bytes(hdr, params=None):
    """8-bit mu-law preview: ``round(255 * mu_law(hdr))``."""
    return np.round(255.0 * mu_law(np.clip(hdr, 0.0, 1.0), params)).astype(np.uint8)


def infer_scene(scene, ckpt, out_dir, tile_spec=None, resize_to=None, params=None):
    """Reconstruct one scene; writes ``<scene>.hdr`` and ``<scene>_preview.png``.

    Returns ``(hdr, metrics)``; ``metrics`` is None when the scene has no
    ground truth.
    """
    model, _ = load_checkpoint(ckpt)
    model.to(device())
    sample = load_scene(scene, resize_to=resize_to)
    xs = build_network_input(sample.bracket).to_tensors(device())
    hdr = tiled_forward(model, xs, tile_spec)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_hdr(out_dir / f"{sample.scene_id}.hdr", hdr)
    write_preview(out_dir / f"{sample.scene_id}_preview.png", preview_bytes(hdr, params))
    metrics = None
    if sample.ground_truth is not None:
        metrics = image_metrics(hdr, sample.ground_truth, params)
    return hdr, metrics


def load_matrix(path, base):
    """Parse an ablation matrix JSON file into ``[(name, ModelConfig)]``.

    Either ``{"preset": "fusion" | "components" | "blocks"}`` or
    ``{"variants": [{"name": ..., "model": {overrides}}, ...]}``.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"matrix file not found: {path}")
    try:
        spec = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: {exc}") from None
    if not isinstance(spec, dict):
        raise ParseError(f"{path}: expected a JSON object")
    if "preset" in spec:
        if spec["preset"] not in PRESETS:
            raise ConfigurationError(f"unknown preset {spec['preset']!r}; choose from {sorted(PRESETS)}")
        return PRESETS[spec["preset"]](base)
    variants = []
    for entry in spec.get("variants", []):
        try:
            variants.append((str(entry["name"]), base.replace(**entry.get("model", {}))))
        except (KeyError, TypeError) as exc:
            raise ConfigurationError(f"{path}: bad variant {entry!r} ({exc})") from None
    return variants


def cmd_train(args):
    run = load_config(args.config)
    result = train(args.data, run.model, run.train, args.out, run.data, run.tonemap,
                   resume=args.resume)
    print(f"final checkpoint: {result.checkpoint}")


def cmd_infer(args):
    run = load_config(args.config)
    tile = TileSpec(args.tile if args.tile is not None else run.infer.tile_size,
                    args.overlap if args.overlap is not None else run.infer.overlap)
    _, metrics = infer_scene(args.scene, args.ckpt, args.out, tile, parse_size(args.resize),
                             run.tonemap)
    if metrics is not None:
        print(json.dumps({k: round(v, 4) for k, v in metrics.items()}))


def cmd_eval(args):
    run = load_config(args.config)
    report = evaluate(args.ckpt, args.data, run.tonemap, run.infer, parse_size(args.resize),
                      device())
    path = Path(args.report)
    path.parent.mkdir(parents=True, exist_ok=True)
    report.write_csv(path.with_suffix(".csv"))
    report.write_json(path.with_suffix(".json"))
    for sid, vals in report.rows():
        print(sid, *(f"{vals[k]:.4f}" for k in vals))


def cmd_ablate(args):
    run = load_config(args.config)
    variants = load_matrix(args.matrix, run.model)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    report = run_ablation(variants, run.train, args.data, args.test_data, out, run.data,
                          run.tonemap, run.infer)
    report.write_csv(out / "ablation.csv")
    print(f"{len(report.rows)} variants written to {out / 'ablation.csv'}")


def build_parser():
    p = _Parser(prog="psfnet", description="Multi-exposure HDR reconstruction.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    t = sub.add_parser("train", help="train a model on a dataset root")
    t.add_argument("--data", required=True)
    t.add_argument("--config")
    t.add_argument("--out", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.set_defaults(func=cmd_train)

    i = sub.add_parser("infer", help="reconstruct one scene")
    i.add_argument("--scene", required=True)
    i.add_argument("--ckpt", required=True)
    i.add_argument("--out", required=True)
    i.add_argument("--tile", type=int)
    i.add_argument("--overlap", type=int)
    i.add_argument("--config")
    i.add_argument("--resize", help="HxW to resample inputs to (default: native)")
    i.set_defaults(func=cmd_infer)

    e = sub.add_parser("eval", help="evaluate a checkpoint on a test root")
    e.add_argument("--data", required=True)
    e.add_argument("--ckpt", required=True)
    e.add_argument("--report", required=True)
    e.add_argument("--config")
    e.add_argument("--resize")
    e.set_defaults(func=cmd_eval)

    a = sub.add_parser("ablate", help="train and evaluate an ablation matrix")
    a.add_argument("--data", required=True)
    a.add_argument("--matrix", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--config")
    a.add_argument("--test-data", help="evaluation root (default: --data)")
    a.set_defaults(func=cmd_ablate)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except (PsfnetError, OSError) as exc:
        print(f"psfnet {args.command}: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
