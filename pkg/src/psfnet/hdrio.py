"""Image file I/O: Radiance RGBE (.hdr), 8/16-bit TIFF LDRs, PNG previews."""
from pathlib import Path

import cv2
import numpy as np

from . import kernels
from .errors import DecodeError

_MAGIC = (b"#?RADIANCE", b"#?RGBE")


def read_hdr(path, *, backend=None):
    """Read a Radiance RGBE file into a float32 H×W×3 RGB array."""
    path = Path(path)
    data = path.read_bytes()
    if not data.startswith(_MAGIC):
        raise DecodeError(f"{path}: missing Radiance header")
    end = data.find(b"\n\n")
    if end < 0:
        raise DecodeError(f"{path}: unterminated header")
    for line in data[:end].split(b"\n")[1:]:
        if line.startswith(b"FORMAT=") and line.strip() != b"FORMAT=32-bit_rle_rgbe":
            raise DecodeError(f"{path}: unsupported pixel format {line.decode(errors='replace')}")
    res_end = data.find(b"\n", end + 2)
    if res_end < 0:
        raise DecodeError(f"{path}: missing resolution line")
    parts = data[end + 2:res_end].split()
    if len(parts) != 4 or parts[0] != b"-Y" or parts[2] != b"+X":
        raise DecodeError(f"{path}: unsupported orientation {data[end + 2:res_end]!r}")
    try:
        height, width = int(parts[1]), int(parts[3])
    except ValueError:
        raise DecodeError(f"{path}: bad resolution line") from None

    buf = np.frombuffer(data, dtype=np.uint8)
    rgbe, pos = kernels.rgbe_decode_scanlines(buf, res_end + 1, height, width, backend=backend)
    if pos < 0:
        kind = "truncated" if pos == -1 else "malformed"
        raise DecodeError(f"{path}: {kind} scanline data")
    return rgbe_to_float(rgbe)


def rgbe_to_float(rgbe):
    exp = rgbe[..., 3].astype(np.int32)
    scale = np.where(exp > 0, np.ldexp(1.0, exp - (128 + 8)), 0.0)
    return (rgbe[..., :3].astype(np.float64) * scale[..., None]).astype(np.float32)


def write_hdr(path, rgb, *, backend=None):
    """Write float H×W×3 RGB radiance as flat (uncompressed) RGBE scanlines."""
    rgb = np.asarray(rgb)
    if rgb.ndim != 3 or rgb.shape[2] != 3:
        raise ValueError(f"expected H×W×3 image, got shape {rgb.shape}")
    if not np.all(np.isfinite(rgb)) or (rgb < 0).any():
        raise ValueError("HDR pixel values must be finite and non-negative")
    h, w, _ = rgb.shape
    header = f"#?RADIANCE\nFORMAT=32-bit_rle_rgbe\n\n-Y {h} +X {w}\n".encode("ascii")
    body = kernels.rgbe_encode(rgb, backend=backend)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(body.tobytes())


def read_ldr(path):
    """Read an 8- or 16-bit LDR image as float32 RGB in [0, 1].

    Integer images are divided by ``2**bitdepth - 1``.
    """
    img = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if img is None:
        raise DecodeError(f"{path}: unreadable image")
    if img.ndim == 2:
        img = np.repeat(img[..., None], 3, axis=2)
    if img.shape[2] == 4:
        img = img[..., :3]
    if img.dtype == np.uint8:
        scale = 255.0
    elif img.dtype == np.uint16:
        scale = 65535.0
    else:
        raise DecodeError(f"{path}: unsupported sample type {img.dtype}")
    return (img[..., ::-1].astype(np.float32) / scale).copy()


def write_ldr(path, rgb, bitdepth=16):
    """Quantize float RGB in [0, 1] and write it (TIFF/PNG by extension)."""
    dtype = {8: np.uint8, 16: np.uint16}[bitdepth]
    peak = 2**bitdepth - 1
    q = np.round(np.clip(rgb, 0.0, 1.0) * peak).astype(dtype)
    if not cv2.imwrite(str(path), q[..., ::-1]):
        raise OSError(f"could not write {path}")


def write_preview(path, rgb_u8):
    if not cv2.imwrite(str(path), np.ascontiguousarray(rgb_u8[..., ::-1])):
        raise OSError(f"could not write {path}")
