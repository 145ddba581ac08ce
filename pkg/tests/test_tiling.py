import numpy as np
import pytest
import torch
from hypothesis import given, settings, strategies as st

from psfnet.errors import InvalidArgumentError
from psfnet.tiling import TileSpec, blend_weight_sum, tile_plan, tile_starts, tiled_forward


class Passthrough(torch.nn.Module):
    """Returns the reference LDR: blending it must reproduce the input."""

    def forward(self, x1, x2, x3):
        return x2[:, :3]


def brute_weight_sum(h, w, tile, overlap):
    # enumerate tile rectangles independently of tile_plan
    def starts(n):
        if n <= tile:
            return [0]
        s, out = 0, []
        while s + tile <= n:
            out.append(s)
            s += tile - overlap
        if out[-1] + tile < n:
            out.append(n - tile)
        return out

    def weights(ss, n):
        size = min(tile, n)
        ws = []
        for k, s in enumerate(ss):
            wk = np.ones(size)
            for i in range(size):
                if k > 0:
                    ov = ss[k - 1] + size - s
                    wk[i] = min(wk[i], (i + 1) / (ov + 1))
                if k < len(ss) - 1:
                    ov = s + size - ss[k + 1]
                    wk[i] = min(wk[i], (size - i) / (ov + 1))
            ws.append(wk)
        return ws

    rs, cs = starts(h), starts(w)
    wr, wc = weights(rs, h), weights(cs, w)
    total = np.zeros((h, w))
    for r, a in zip(rs, wr):
        for c, b in zip(cs, wc):
            for i in range(len(a)):
                for j in range(len(b)):
                    total[r + i, c + j] += a[i] * b[j]
    return total


def test_spec_validation():
    with pytest.raises(InvalidArgumentError):
        TileSpec(64, 64)
    with pytest.raises(InvalidArgumentError):
        TileSpec(0, 0)


def test_full_resolution_grid():
    assert tile_starts(1000, 512, 64) == [0, 448, 488]
    assert tile_starts(1500, 512, 64) == [0, 448, 896, 988]
    plan = tile_plan((1000, 1500), TileSpec(512, 64))
    assert len(plan) == 12
    wsum = blend_weight_sum((1000, 1500), TileSpec(512, 64))
    assert wsum.min() > 0


def test_pairwise_overlaps_sum_to_one():
    # starts 0, 24, 48: each pixel is covered by at most two tiles
    wsum = blend_weight_sum((80, 80), TileSpec(32, 8))
    np.testing.assert_allclose(wsum, 1.0, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(h=st.integers(8, 60), w=st.integers(8, 60), tile=st.integers(4, 24), frac=st.floats(0, 0.9))
def test_weight_sum_matches_brute_force(h, w, tile, frac):
    overlap = min(int(tile * frac), tile - 1)
    got = blend_weight_sum((h, w), TileSpec(tile, overlap))
    ref = brute_weight_sum(h, w, tile, overlap)
    np.testing.assert_allclose(got, ref, atol=1e-12)
    assert got.min() > 0
    # normalised weights form a partition of unity
    norm = np.zeros((h, w))
    for r, c, wt in tile_plan((h, w), TileSpec(tile, overlap)):
        norm[r:r + wt.shape[0], c:c + wt.shape[1]] += wt / got[r:r + wt.shape[0], c:c + wt.shape[1]]
    np.testing.assert_allclose(norm, 1.0, atol=1e-6)


@pytest.mark.parametrize("backend", ["numpy", "numba"])
@pytest.mark.parametrize("shape,spec", [((50, 70), TileSpec(16, 4)), ((33, 20), TileSpec(12, 5))])
def test_passthrough_reconstructs_input(rng, backend, shape, spec):
    x = torch.from_numpy(rng.random((1, 6) + shape).astype(np.float32))
    out = tiled_forward(Passthrough(), [x, x, x], spec, backend=backend)
    np.testing.assert_allclose(out, x[0, :3].permute(1, 2, 0).numpy(), atol=1e-6)


def test_single_tile_is_plain_forward(tiny_config):
    from psfnet.model import PSFNet

    model = PSFNet(tiny_config).eval()
    xs = [torch.rand(1, 6, 24, 24) for _ in range(3)]
    out = tiled_forward(model, xs, TileSpec(32, 8))
    with torch.no_grad():
        ref = model(*xs)[0].permute(1, 2, 0).numpy()
    np.testing.assert_array_equal(out, ref)
