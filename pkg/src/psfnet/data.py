"""Scene loading, gamma-domain preprocessing and training patches.

A scene directory holds three exposure-ordered LDR TIFFs, ``exposure.txt``
with one stop bias per line, and optionally a ``HDRImg.hdr`` ground truth.
"""
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import cv2
import numpy as np
import torch

from .errors import DecodeError, InvalidArgumentError, InvalidDataError, ParseError
from .hdrio import read_hdr, read_ldr

GAMMA = 2.2
DEFAULT_SIZE = (1000, 1500)
EXPOSURE_FILE = "exposure.txt"
GT_FILE = "HDRImg.hdr"

AUGMENTATIONS = ("rotate90", "rotate180", "rotate270", "flip-horizontal", "flip-vertical")


@dataclass
class LdrBracket:
    images: Sequence[np.ndarray]
    exposure_times: Sequence[float]
    reference_index: int = 1

    def __post_init__(self):
        self.images = [np.asarray(im, dtype=np.float32) for im in self.images]
        self.exposure_times = tuple(float(t) for t in self.exposure_times)
        if len(self.images) != 3 or len(self.exposure_times) != 3:
            raise InvalidDataError("a bracket holds exactly three images and exposure times")
        shape = self.images[0].shape
        if len(shape) != 3 or shape[2] != 3:
            raise InvalidDataError(f"LDR images must be H×W×3, got {shape}")
        if any(im.shape != shape for im in self.images):
            raise InvalidDataError("bracket images differ in shape: "
                                   + ", ".join(str(im.shape) for im in self.images))
        t = self.exposure_times
        if not (0 < t[0] < t[1] < t[2]):
            raise InvalidDataError(f"exposure times must be positive and increasing, got {t}")
        for im in self.images:
            _check_unit_range(im, "LDR image")
        if self.reference_index != 1:
            raise InvalidDataError("the reference image is always the middle exposure")

    @property
    def shape(self):
        return self.images[0].shape[:2]


@dataclass
class SceneSample:
    bracket: LdrBracket
    ground_truth: Optional[np.ndarray] = None
    scene_id: str = ""

    def __post_init__(self):
        if self.ground_truth is not None:
            gt = np.asarray(self.ground_truth, dtype=np.float32)
            if gt.shape != self.bracket.images[0].shape:
                raise InvalidDataError(
                    f"ground truth shape {gt.shape} does not match bracket {self.bracket.images[0].shape}")
            _check_unit_range(gt, "ground truth")
            self.ground_truth = gt


@dataclass
class NetworkInput:
    """Three 6×H×W arrays ``[L_i, H_i]``."""

    channels: Sequence[np.ndarray]

    def to_tensors(self, device=None):
        """One 1×6×H×W float32 tensor per exposure."""
        return [torch.from_numpy(np.ascontiguousarray(x, dtype=np.float32))[None].to(device)
                for x in self.channels]


@dataclass
class PatchSpec:
    patch_size: int = 256
    stride: int = 128
    augmentations: frozenset = field(default_factory=lambda: frozenset(AUGMENTATIONS))

    def __post_init__(self):
        if self.patch_size <= 0:
            raise InvalidArgumentError("patch_size must be positive")
        if not 0 < self.stride <= self.patch_size:
            raise InvalidArgumentError("stride must be in (0, patch_size]")
        self.augmentations = frozenset(self.augmentations)
        unknown = self.augmentations - set(AUGMENTATIONS)
        if unknown:
            raise InvalidArgumentError(f"unknown augmentations {sorted(unknown)}")


def _check_unit_range(arr, what):
    if np.isnan(arr).any():
        raise InvalidDataError(f"{what} contains NaN")
    if arr.size and (arr.min() < 0 or arr.max() > 1):
        raise InvalidDataError(f"{what} values outside [0, 1]")


def gamma_correct(ldr, exposure_time, gamma=GAMMA):
    """Lift LDR intensities to linear radiance: ``ldr**gamma / exposure_time``."""
    if not exposure_time > 0:
        raise InvalidArgumentError(f"exposure_time must be positive, got {exposure_time}")
    ldr = np.asarray(ldr)
    if np.isnan(ldr).any():
        raise InvalidDataError("LDR input contains NaN")
    return np.power(ldr, gamma) / exposure_time


def build_network_input(bracket, gamma=GAMMA):
    shapes = {im.shape for im in bracket.images}
    if len(shapes) != 1:
        raise InvalidDataError(f"bracket images differ in shape: {sorted(shapes)}")
    channels = []
    for ldr, t in zip(bracket.images, bracket.exposure_times):
        hdr = gamma_correct(ldr, t, gamma).astype(np.float32)
        x = np.concatenate([ldr, hdr], axis=2).transpose(2, 0, 1)
        channels.append(np.ascontiguousarray(x))
    return NetworkInput(channels)


def read_exposure_times(path):
    """Stop biases from ``exposure.txt`` converted to relative times ``2**bias``."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"missing exposure file {path}")
    lines = [ln.strip() for ln in path.read_text().splitlines() if ln.strip()]
    if len(lines) != 3:
        raise ParseError(f"{path}: expected 3 exposure lines, found {len(lines)}")
    try:
        biases = [float(ln) for ln in lines]
    except ValueError as exc:
        raise ParseError(f"{path}: {exc}") from None
    return tuple(2.0 ** b for b in biases)


def _resize(img, size):
    if size is None or img.shape[:2] == tuple(size):
        return img
    h, w = size
    return cv2.resize(img, (w, h), interpolation=cv2.INTER_LINEAR)


def load_scene(path, resize_to=DEFAULT_SIZE):
    """Load one scene directory as a :class:`SceneSample`.

    ``resize_to`` is ``(H, W)``; images of any other size are resampled
    bilinearly. Pass ``None`` to keep the native resolution.
    """
    path = Path(path)
    if not path.is_dir():
        raise FileNotFoundError(f"scene directory not found: {path}")
    tifs = sorted(p for p in path.iterdir() if p.suffix.lower() in (".tif", ".tiff"))
    if len(tifs) != 3:
        raise FileNotFoundError(f"{path}: expected 3 .tif LDR images, found {len(tifs)}")
    times = read_exposure_times(path / EXPOSURE_FILE)
    images = [np.clip(_resize(read_ldr(p), resize_to), 0.0, 1.0) for p in tifs]
    gt = None
    gt_path = path / GT_FILE
    if gt_path.is_file():
        gt = np.clip(_resize(read_hdr(gt_path), resize_to), 0.0, 1.0)
    try:
        bracket = LdrBracket(images, times)
    except InvalidDataError as exc:
        raise DecodeError(f"{path}: {exc}") from None
    return SceneSample(bracket, gt, scene_id=path.name)


def list_scenes(root):
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root not found: {root}")
    return sorted(p for p in root.iterdir() if p.is_dir())


# ---------------------------------------------------------------------------
# patches


def window_starts(length, size, stride):
    """Top-left offsets of sliding windows along one axis.

    The last window is shifted back so it ends exactly at the border.
    """
    if length < size:
        raise InvalidArgumentError(f"image extent {length} smaller than patch size {size}")
    starts = list(range(0, length - size + 1, stride))
    if starts[-1] + size < length:
        starts.append(length - size)
    return starts


def patch_windows(shape, spec):
    h, w = shape
    return [(r, c) for r in window_starts(h, spec.patch_size, spec.stride)
            for c in window_starts(w, spec.patch_size, spec.stride)]


def apply_augmentation(img, name):
    """Apply a lossless spatial transform to an H×W×C array."""
    if name == "identity":
        out = img
    elif name == "rotate90":
        out = np.rot90(img, 1, axes=(0, 1))
    elif name == "rotate180":
        out = np.rot90(img, 2, axes=(0, 1))
    elif name == "rotate270":
        out = np.rot90(img, 3, axes=(0, 1))
    elif name == "flip-horizontal":
        out = img[:, ::-1]
    elif name == "flip-vertical":
        out = img[::-1]
    else:
        raise InvalidArgumentError(f"unknown augmentation {name!r}")
    return np.ascontiguousarray(out)


def patch_rng(seed, scene_id, patch_index, epoch=0):
    key = zlib.crc32(scene_id.encode("utf-8"))
    return np.random.default_rng([seed, key, patch_index, epoch])


def choose_augmentation(spec, seed, scene_id, patch_index, epoch=0):
    choices = ("identity",) + tuple(a for a in AUGMENTATIONS if a in spec.augmentations)
    rng = patch_rng(seed, scene_id, patch_index, epoch)
    return choices[int(rng.integers(len(choices)))]


def crop_patch(sample, window, size, augmentation="identity", patch_index=0):
    r, c = window
    imgs = [apply_augmentation(im[r:r + size, c:c + size], augmentation)
            for im in sample.bracket.images]
    gt = sample.ground_truth
    if gt is not None:
        gt = apply_augmentation(gt[r:r + size, c:c + size], augmentation)
    bracket = LdrBracket(imgs, sample.bracket.exposure_times)
    return SceneSample(bracket, gt, scene_id=f"{sample.scene_id}#{patch_index}")


def extract_patches(sample, spec, augment=False, seed=0, epoch=0):
    """Cut a training sample into sliding-window patches.

    With ``augment`` each patch gets one transform drawn uniformly from identity
    plus ``spec.augmentations``, keyed on ``(seed, scene_id, patch_index, epoch)``.
    """
    if sample.ground_truth is None:
        raise InvalidArgumentError(f"scene {sample.scene_id!r} has no ground truth")
    windows = patch_windows(sample.bracket.shape, spec)
    patches = []
    for idx, win in enumerate(windows):
        aug = choose_augmentation(spec, seed, sample.scene_id, idx, epoch) if augment else "identity"
        patches.append(crop_patch(sample, win, spec.patch_size, aug, idx))
    return patches


class PatchDataset(torch.utils.data.Dataset):
    """All training patches of a list of scenes, materialized lazily per item.

    Items are ``(x1, x2, x3, target)`` float32 tensors. Call :meth:`set_epoch`
    before iterating to re-draw augmentations.
    """

    def __init__(self, samples, spec, augment=True, seed=0, gamma=GAMMA):
        self.samples = [s for s in samples if s.ground_truth is not None]
        self.spec = spec
        self.augment = augment
        self.seed = seed
        self.gamma = gamma
        self.epoch = 0
        self.index = [(si, pi, win)
                      for si, s in enumerate(self.samples)
                      for pi, win in enumerate(patch_windows(s.bracket.shape, spec))]

    def set_epoch(self, epoch):
        self.epoch = epoch

    def __len__(self):
        return len(self.index)

    def __getitem__(self, i):
        si, pi, win = self.index[i]
        sample = self.samples[si]
        aug = "identity"
        if self.augment:
            aug = choose_augmentation(self.spec, self.seed, sample.scene_id, pi, self.epoch)
        patch = crop_patch(sample, win, self.spec.patch_size, aug, pi)
        xs = build_network_input(patch.bracket, self.gamma).channels
        target = patch.ground_truth.transpose(2, 0, 1)
        return tuple(torch.from_numpy(np.ascontiguousarray(a)) for a in (*xs, target))
