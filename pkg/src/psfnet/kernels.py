"""Hot inner loops with a numba path and a pure-numpy path.

Every public function takes ``backend=None`` (use the import-time default from
:mod:`psfnet._accel`), ``"numba"`` or ``"numpy"``. Both paths produce the same
result; ``benchmarks/bench_kernels.py`` times them against each other.
"""
import math

import numpy as np

from ._accel import njit, resolve_backend

# ---------------------------------------------------------------------------
# separable "valid" filtering (SSIM local statistics)


@njit(cache=True)
def _filter_valid_nb(img, taps):
    h, w = img.shape
    k = taps.shape[0]
    oh = h - k + 1
    ow = w - k + 1
    tmp = np.empty((h, ow), dtype=np.float64)
    for i in range(h):
        for j in range(ow):
            acc = 0.0
            for t in range(k):
                acc += taps[t] * img[i, j + t]
            tmp[i, j] = acc
    out = np.empty((oh, ow), dtype=np.float64)
    for i in range(oh):
        for j in range(ow):
            acc = 0.0
            for t in range(k):
                acc += taps[t] * tmp[i + t, j]
            out[i, j] = acc
    return out


def _filter_valid_np(img, taps):
    k = taps.shape[0]
    h, w = img.shape
    ow = w - k + 1
    oh = h - k + 1
    tmp = np.zeros((h, ow), dtype=np.float64)
    for t in range(k):
        tmp += taps[t] * img[:, t:t + ow]
    out = np.zeros((oh, ow), dtype=np.float64)
    for t in range(k):
        out += taps[t] * tmp[t:t + oh, :]
    return out


def filter_valid(img, taps, *, backend=None):
    """Correlate a 2-D image with ``outer(taps, taps)``, keeping only full windows."""
    img = np.ascontiguousarray(img, dtype=np.float64)
    taps = np.ascontiguousarray(taps, dtype=np.float64)
    if img.ndim != 2 or taps.ndim != 1:
        raise ValueError("filter_valid expects a 2-D image and 1-D taps")
    if img.shape[0] < taps.size or img.shape[1] < taps.size:
        raise ValueError("image smaller than filter window")
    if resolve_backend(backend) == "numba":
        return _filter_valid_nb(img, taps)
    return _filter_valid_np(img, taps)


# ---------------------------------------------------------------------------
# Radiance RGBE encode / decode


@njit(cache=True)
def _rgbe_encode_nb(rgb):
    h, w, _ = rgb.shape
    out = np.zeros((h, w, 4), dtype=np.uint8)
    for i in range(h):
        for j in range(w):
            r = rgb[i, j, 0]
            g = rgb[i, j, 1]
            b = rgb[i, j, 2]
            v = max(r, max(g, b))
            if v < 1e-32:
                continue
            m, e = math.frexp(v)
            scale = m * 256.0 / v
            out[i, j, 0] = np.uint8(r * scale)
            out[i, j, 1] = np.uint8(g * scale)
            out[i, j, 2] = np.uint8(b * scale)
            out[i, j, 3] = np.uint8(e + 128)
    return out


def _rgbe_encode_np(rgb):
    v = rgb.max(axis=2)
    m, e = np.frexp(v)
    nz = v >= 1e-32
    scale = np.where(nz, m * 256.0 / np.where(nz, v, 1.0), 0.0)
    out = np.zeros(rgb.shape[:2] + (4,), dtype=np.uint8)
    out[..., :3] = (rgb * scale[..., None]).astype(np.uint8)
    out[..., 3] = np.where(nz, e + 128, 0).astype(np.uint8)
    return out


def rgbe_encode(rgb, *, backend=None):
    """Float H×W×3 radiance (non-negative, below 2^127) to H×W×4 RGBE bytes."""
    rgb = np.ascontiguousarray(rgb, dtype=np.float64)
    if resolve_backend(backend) == "numba":
        return _rgbe_encode_nb(rgb)
    return _rgbe_encode_np(rgb)


@njit(cache=True)
def _rgbe_scanlines_nb(buf, pos, height, width, out):
    n = buf.shape[0]
    for y in range(height):
        if pos + 4 > n:
            return -1
        rle = (width >= 8 and width < 32768 and buf[pos] == 2 and buf[pos + 1] == 2
               and (buf[pos + 2] & 0x80) == 0)
        if not rle:
            if pos + 4 * width > n:
                return -1
            for x in range(width):
                for c in range(4):
                    out[y, x, c] = buf[pos + 4 * x + c]
            pos += 4 * width
            continue
        if (np.int64(buf[pos + 2]) << 8 | np.int64(buf[pos + 3])) != width:
            return -2
        pos += 4
        for c in range(4):
            x = 0
            while x < width:
                if pos >= n:
                    return -1
                count = np.int64(buf[pos])
                pos += 1
                if count > 128:
                    count -= 128
                    if count > width - x:
                        return -2
                    if pos >= n:
                        return -1
                    val = buf[pos]
                    pos += 1
                    for _ in range(count):
                        out[y, x, c] = val
                        x += 1
                else:
                    if count == 0 or count > width - x:
                        return -2
                    if pos + count > n:
                        return -1
                    for k in range(count):
                        out[y, x, c] = buf[pos + k]
                        x += 1
                    pos += count
    return pos


def _rgbe_scanlines_np(buf, pos, height, width, out):
    n = buf.shape[0]
    for y in range(height):
        if pos + 4 > n:
            return -1
        head = buf[pos:pos + 4]
        if not (8 <= width < 32768 and head[0] == 2 and head[1] == 2 and head[2] & 0x80 == 0):
            if pos + 4 * width > n:
                return -1
            out[y] = buf[pos:pos + 4 * width].reshape(width, 4)
            pos += 4 * width
            continue
        if (int(head[2]) << 8 | int(head[3])) != width:
            return -2
        pos += 4
        for c in range(4):
            x = 0
            while x < width:
                if pos >= n:
                    return -1
                count = int(buf[pos])
                pos += 1
                if count > 128:
                    count -= 128
                    if count > width - x:
                        return -2
                    if pos >= n:
                        return -1
                    out[y, x:x + count, c] = buf[pos]
                    pos += 1
                else:
                    if count == 0 or count > width - x:
                        return -2
                    if pos + count > n:
                        return -1
                    out[y, x:x + count, c] = buf[pos:pos + count]
                    pos += count
                x += count
    return pos


def rgbe_decode_scanlines(buf, pos, height, width, *, backend=None):
    """Decode flat or run-length RGBE scanlines starting at byte ``pos``.

    Returns ``(rgbe, end)`` where ``end`` is negative when the stream is
    truncated (-1) or malformed (-2).
    """
    buf = np.ascontiguousarray(buf, dtype=np.uint8)
    out = np.zeros((height, width, 4), dtype=np.uint8)
    if resolve_backend(backend) == "numba":
        end = _rgbe_scanlines_nb(buf, pos, height, width, out)
    else:
        end = _rgbe_scanlines_np(buf, pos, height, width, out)
    return out, int(end)


# ---------------------------------------------------------------------------
# weighted tile accumulation (tiled inference)


@njit(cache=True)
def _accumulate_nb(out, wsum, tile, weight, r0, c0):
    th, tw, ch = tile.shape
    for i in range(th):
        for j in range(tw):
            wt = weight[i, j]
            wsum[r0 + i, c0 + j] += wt
            for c in range(ch):
                out[r0 + i, c0 + j, c] += wt * tile[i, j, c]


def _accumulate_np(out, wsum, tile, weight, r0, c0):
    th, tw = weight.shape
    out[r0:r0 + th, c0:c0 + tw] += tile * weight[..., None]
    wsum[r0:r0 + th, c0:c0 + tw] += weight


def accumulate_tile(out, wsum, tile, weight, r0, c0, *, backend=None):
    """In-place ``out[window] += weight * tile`` and ``wsum[window] += weight``."""
    tile = np.ascontiguousarray(tile, dtype=out.dtype)
    weight = np.ascontiguousarray(weight, dtype=wsum.dtype)
    if resolve_backend(backend) == "numba":
        _accumulate_nb(out, wsum, tile, weight, int(r0), int(c0))
    else:
        _accumulate_np(out, wsum, tile, weight, int(r0), int(c0))
