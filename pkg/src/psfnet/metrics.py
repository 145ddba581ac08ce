"""PSNR / SSIM in the linear and mu-law domains, and per-scene reports."""
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import kernels
from .data import build_network_input, list_scenes, load_scene
from .errors import InvalidArgumentError
from .model import load_checkpoint
from .tiling import tiled_forward
from .tonemap import TonemapParams, mu_law

log = logging.getLogger(__name__)

METRIC_KEYS = ("psnr_mu", "psnr_l", "ssim_mu", "ssim_l")
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _pair(pred, target):
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise InvalidArgumentError(f"shape mismatch {pred.shape} vs {target.shape}")
    return pred, target


def psnr(pred, target):
    """Peak-1.0 PSNR in dB; ``inf`` for identical images."""
    pred, target = _pair(pred, target)
    mse = np.mean((pred - target) ** 2)
    if mse == 0:
        return math.inf
    return float(10.0 * np.log10(1.0 / mse))


def gaussian_taps(size=SSIM_WINDOW, sigma=SSIM_SIGMA):
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2
    g = np.exp(-(x ** 2) / (2 * sigma ** 2))
    return g / g.sum()


def ssim(pred, target, *, backend=None):
    """Gaussian-window SSIM (11 taps, sigma 1.5, peak 1.0) over valid windows.

    Accepts H×W or H×W×C arrays; the map is averaged over channels and positions.
    """
    pred, target = _pair(pred, target)
    if pred.ndim == 2:
        pred, target = pred[..., None], target[..., None]
    if pred.shape[0] < SSIM_WINDOW or pred.shape[1] < SSIM_WINDOW:
        raise InvalidArgumentError(f"images smaller than the {SSIM_WINDOW}×{SSIM_WINDOW} SSIM window")
    taps = gaussian_taps()
    c1 = SSIM_K1 ** 2
    c2 = SSIM_K2 ** 2
    maps = []
    for ch in range(pred.shape[2]):
        x = pred[..., ch]
        y = target[..., ch]
        filt = lambda a: kernels.filter_valid(a, taps, backend=backend)  # noqa: E731
        mx, my = filt(x), filt(y)
        sxx = filt(x * x) - mx * mx
        syy = filt(y * y) - my * my
        sxy = filt(x * y) - mx * my
        num = (2 * mx * my + c1) * (2 * sxy + c2)
        den = (mx * mx + my * my + c1) * (sxx + syy + c2)
        maps.append(num / den)
    return float(np.mean(maps))


def image_metrics(pred, target, params=None):
    """All four metrics for one H×W×3 prediction against its ground truth."""
    pred = np.clip(np.asarray(pred, dtype=np.float64), 0.0, 1.0)
    target = np.clip(np.asarray(target, dtype=np.float64), 0.0, 1.0)
    pm, tm = mu_law(pred, params), mu_law(target, params)
    return {
        "psnr_mu": psnr(pm, tm),
        "psnr_l": psnr(pred, target),
        "ssim_mu": ssim(pm, tm),
        "ssim_l": ssim(pred, target),
    }


def _fmt(v):
    return "inf" if math.isinf(v) else f"{v:.4f}"


@dataclass
class MetricsReport:
    per_scene: dict = field(default_factory=dict)

    def add(self, scene_id, values):
        self.per_scene[scene_id] = {k: float(values[k]) for k in METRIC_KEYS}

    @property
    def averages(self):
        if not self.per_scene:
            return {}
        rows = [self.per_scene[k] for k in sorted(self.per_scene)]
        return {k: float(np.mean([r[k] for r in rows])) for k in METRIC_KEYS}

    def rows(self):
        out = [(sid, self.per_scene[sid]) for sid in sorted(self.per_scene)]
        if self.per_scene:
            out.append(("average", self.averages))
        return out

    def write_csv(self, path, label="scene"):
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow([label, *METRIC_KEYS])
            for sid, vals in self.rows():
                writer.writerow([sid, *(_fmt(vals[k]) for k in METRIC_KEYS)])

    def to_json(self):
        def enc(v):
            return "inf" if math.isinf(v) else round(v, 4)

        return {
            "per_scene": {sid: {k: enc(v[k]) for k in METRIC_KEYS}
                          for sid, v in sorted(self.per_scene.items())},
            "average": {k: enc(v) for k, v in self.averages.items()},
        }

    def write_json(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2, sort_keys=True) + "\n")


def evaluate(model, test_root, params=None, tile_spec=None, resize_to=None, device=None):
    """Run full-resolution inference on every scene under ``test_root``.

    ``model`` may be a module or a checkpoint path. Scenes without ground
    truth are skipped with a warning.
    """
    if not hasattr(model, "forward"):
        model, _ = load_checkpoint(model)
    model.eval()
    params = params or TonemapParams()
    report = MetricsReport()
    for scene_dir in list_scenes(test_root):
        sample = load_scene(scene_dir, resize_to=resize_to)
        if sample.ground_truth is None:
            log.warning("scene %s has no ground truth; skipped", sample.scene_id)
            continue
        xs = build_network_input(sample.bracket).to_tensors(device)
        pred = tiled_forward(model, xs, tile_spec)
        report.add(sample.scene_id, image_metrics(pred, sample.ground_truth, params))
    return report
