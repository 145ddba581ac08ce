"""Time the numba and pure-numpy paths of each hot kernel.

    python benchmarks/bench_kernels.py [--repeat 5] [--size 1000x1500]

The numba timings exclude the first (compiling) call.
"""
import argparse
import tempfile
import time
from pathlib import Path

import cv2
import numpy as np

from psfnet import _accel, kernels
from psfnet.metrics import gaussian_taps, ssim
from psfnet.tiling import TileSpec, tile_plan


def best_of(fn, repeat):
    fn()  # warm-up (JIT compile)
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def cases(h, w, rng):
    img = rng.random((h, w))
    taps = gaussian_taps()
    rgb = rng.random((h, w, 3)).astype(np.float32) * 4
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "x.hdr"
        cv2.imwrite(str(path), rgb[..., ::-1].copy())  # run-length encoded
        data = path.read_bytes()
    pos = data.index(f"+X {w}\n".encode()) + len(f"+X {w}\n")
    buf = np.frombuffer(data, np.uint8)
    plan = tile_plan((h, w), TileSpec(512, 64))
    tile = rng.random((512, 512, 3))

    def accumulate(backend):
        out, wsum = np.zeros((h, w, 3)), np.zeros((h, w))
        for r, c, wt in plan:
            kernels.accumulate_tile(out, wsum, tile[:wt.shape[0], :wt.shape[1]], wt, r, c,
                                    backend=backend)

    return {
        "filter_valid": lambda b: kernels.filter_valid(img, taps, backend=b),
        "ssim (3 channels)": lambda b: ssim(rgb / 4, rgb[::-1] / 4, backend=b),
        "rgbe_encode": lambda b: kernels.rgbe_encode(rgb, backend=b),
        "rgbe_decode (RLE)": lambda b: kernels.rgbe_decode_scanlines(buf, pos, h, w, backend=b),
        "accumulate_tile (12 tiles)": accumulate,
    }


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--size", default="1000x1500")
    args = p.parse_args()
    h, w = (int(v) for v in args.size.split("x"))
    backends = ["numpy"] + (["numba"] if _accel.HAS_NUMBA else [])
    print(f"image {h}x{w}, best of {args.repeat}")
    print(f"{'kernel':28s}" + "".join(f"{b:>12s}" for b in backends) + "   speedup")
    for name, fn in cases(h, w, np.random.default_rng(0)).items():
        t = {b: best_of(lambda: fn(b), args.repeat) for b in backends}
        row = f"{name:28s}" + "".join(f"{t[b] * 1e3:10.1f}ms" for b in backends)
        if "numba" in t:
            row += f"   {t['numpy'] / t['numba']:6.2f}x"
        print(row)


if __name__ == "__main__":
    main()
