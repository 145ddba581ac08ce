"""Full-resolution inference in overlapping tiles blended with linear ramps."""
from dataclasses import dataclass

import numpy as np
import torch

from . import kernels
from .errors import InvalidArgumentError


@dataclass(frozen=True)
class TileSpec:
    tile_size: int = 512
    overlap: int = 64

    def __post_init__(self):
        if self.tile_size <= 0:
            raise InvalidArgumentError("tile_size must be positive")
        if not 0 <= self.overlap < self.tile_size:
            raise InvalidArgumentError("overlap must be in [0, tile_size)")


def tile_starts(length, tile, overlap):
    if length <= tile:
        return [0]
    step = tile - overlap
    starts = list(range(0, length - tile + 1, step))
    if starts[-1] + tile < length:
        starts.append(length - tile)
    return starts


def ramp(starts, index, size):
    """Un-normalized 1-D blend weight of tile ``index`` along one axis.

    Linear ramps span exactly the overlap with each neighbour, so two
    neighbouring ramps add up to one across their shared pixels.
    """
    i = np.arange(size, dtype=np.float64)
    w = np.ones(size)
    if index > 0:
        left = starts[index - 1] + size - starts[index]
        w = np.minimum(w, (i + 1) / (left + 1))
    if index < len(starts) - 1:
        right = starts[index] + size - starts[index + 1]
        w = np.minimum(w, (size - i) / (right + 1))
    return w


def tile_plan(shape, spec):
    """List of ``(row, col, weight)`` tiles covering an image of ``shape``."""
    h, w = shape
    th, tw = min(spec.tile_size, h), min(spec.tile_size, w)
    rows = tile_starts(h, spec.tile_size, spec.overlap)
    cols = tile_starts(w, spec.tile_size, spec.overlap)
    plan = []
    for ri, r in enumerate(rows):
        wr = ramp(rows, ri, th)
        for ci, c in enumerate(cols):
            plan.append((r, c, np.outer(wr, ramp(cols, ci, tw))))
    return plan


def blend_weight_sum(shape, spec):
    """Accumulated raw weights; the blend divides by this map."""
    wsum = np.zeros(shape, dtype=np.float64)
    for r, c, wt in tile_plan(shape, spec):
        wsum[r:r + wt.shape[0], c:c + wt.shape[1]] += wt
    return wsum


@torch.no_grad()
def run_single(model, xs):
    """One forward pass over 1×6×H×W tensors; returns H×W×3 float32."""
    out = model(*xs)
    return out[0].permute(1, 2, 0).cpu().numpy()


@torch.no_grad()
def tiled_forward(model, xs, spec=None, *, backend=None):
    """Run ``model`` tile by tile and blend into an H×W×3 float32 image.

    ``xs`` are the three 1×6×H×W input tensors. When one tile covers the whole
    image this is a single forward pass.
    """
    spec = spec or TileSpec()
    h, w = xs[0].shape[-2:]
    if spec.tile_size >= h and spec.tile_size >= w:
        return run_single(model, xs)
    out = np.zeros((h, w, 3), dtype=np.float64)
    wsum = np.zeros((h, w), dtype=np.float64)
    for r, c, wt in tile_plan((h, w), spec):
        th, tw = wt.shape
        crops = [x[..., r:r + th, c:c + tw] for x in xs]
        pred = run_single(model, crops)
        kernels.accumulate_tile(out, wsum, pred, wt, r, c, backend=backend)
    return (out / wsum[..., None]).astype(np.float32)
