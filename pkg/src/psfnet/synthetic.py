"""Synthetic exposure brackets for desk-scale runs and tests.

A smooth random radiance map is rendered at three exposures through the
inverse of the gamma mapping, with a small horizontal shift on the
non-reference frames to mimic camera motion.
"""
from pathlib import Path

import numpy as np

from .data import EXPOSURE_FILE, GAMMA, GT_FILE, LdrBracket, SceneSample
from .hdrio import write_hdr, write_ldr


def radiance_map(h, w, rng):
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    img = np.zeros((h, w, 3))
    for c in range(3):
        for _ in range(4):
            fy, fx = rng.uniform(0.5, 4.0, 2) * 2 * np.pi / np.array([h, w])
            phase = rng.uniform(0, 2 * np.pi)
            img[..., c] += np.sin(fy * yy + fx * xx + phase)
    img = (img - img.min()) / (np.ptp(img) + 1e-12)
    # bright highlights over a dim base, roughly like indoor/outdoor HDR scenes
    return np.clip(0.02 + 0.9 * img ** 3, 0.0, 1.0)


def render_ldr(hdr, exposure_time, gamma=GAMMA):
    return np.clip(hdr * exposure_time, 0.0, 1.0) ** (1.0 / gamma)


def make_scene(h=64, w=64, seed=0, biases=(-2, 0, 2), shift=2, scene_id=None):
    rng = np.random.default_rng(seed)
    gt = radiance_map(h, w, rng).astype(np.float32)
    times = [2.0 ** b for b in biases]
    images = []
    for i, t in enumerate(times):
        ldr = render_ldr(gt, t)
        if i != 1 and shift:
            ldr = np.roll(ldr, shift if i == 0 else -shift, axis=1)
        # 16-bit quantization, as in the stored TIFFs
        images.append((np.round(ldr * 65535) / 65535).astype(np.float32))
    return SceneSample(LdrBracket(images, times), gt, scene_id or f"scene{seed:03d}")


def write_scene(root, sample, with_ground_truth=True):
    """Store a sample in the on-disk scene layout; returns the directory."""
    d = Path(root) / sample.scene_id
    d.mkdir(parents=True, exist_ok=True)
    for i, img in enumerate(sample.bracket.images):
        write_ldr(d / f"input_{i + 1}.tif", img, bitdepth=16)
    biases = [np.log2(t) for t in sample.bracket.exposure_times]
    (d / EXPOSURE_FILE).write_text("".join(f"{b:g}\n" for b in biases))
    if with_ground_truth and sample.ground_truth is not None:
        write_hdr(d / GT_FILE, sample.ground_truth)
    return d


def make_dataset(root, n_scenes, h=64, w=64, seed=0, with_ground_truth=True):
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    return [write_scene(root, make_scene(h, w, seed + i), with_ground_truth)
            for i in range(n_scenes)]
