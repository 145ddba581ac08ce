"""The progressive/selective fusion network and its checkpoint format.

All modules take batched ``B×C×H×W`` tensors. The three exposures are passed
as separate tensors ``x1, x2, x3`` (short, middle/reference, long).
"""
import dataclasses
from dataclasses import dataclass
from pathlib import Path

import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import ConfigurationError

FUSION_MODES = ("sffb", "summation", "concatenation")
LEAKY_SLOPE = 0.01
CHECKPOINT_FORMAT = "psfnet-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ModelConfig:
    channels: int = 64
    num_psfb: int = 6
    fusion_mode: str = "sffb"
    num_rdab: int = 4
    enable_psfb_stack: bool = True
    enable_dab: bool = True
    enable_local_skip: bool = True
    enable_global_skip: bool = True
    sffb_reduction: int = 8
    dab_reduction: int = 8
    spatial_kernel: int = 7
    share_branch_convs: bool = True
    # "extracted": Z0 ends with F_2 from the shared extraction conv;
    # "stacked": with the reference branch after the PSFB stack.
    z0_reference: str = "extracted"
    in_channels: int = 6

    def __post_init__(self):
        if self.channels <= 0:
            raise ConfigurationError("channels must be positive")
        if self.num_psfb < 0 or self.num_rdab < 0:
            raise ConfigurationError("block counts must be non-negative")
        if self.sffb_reduction <= 0 or self.channels % self.sffb_reduction:
            raise ConfigurationError(
                f"sffb_reduction={self.sffb_reduction} must divide channels={self.channels}")
        if self.dab_reduction <= 0:
            raise ConfigurationError("dab_reduction must be positive")
        if self.fusion_mode not in FUSION_MODES:
            raise ConfigurationError(f"fusion_mode must be one of {FUSION_MODES}")
        if self.z0_reference not in ("extracted", "stacked"):
            raise ConfigurationError("z0_reference must be 'extracted' or 'stacked'")
        if self.spatial_kernel % 2 == 0:
            raise ConfigurationError("spatial_kernel must be odd")

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ConfigurationError(f"unknown model config keys {sorted(unknown)}")
        return cls(**d)

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)


def conv3x3(cin, cout):
    return nn.Conv2d(cin, cout, kernel_size=3, padding=1)


def _act(x):
    return F.leaky_relu(x, LEAKY_SLOPE)


class SFFB(nn.Module):
    """Selective fusion of three same-shape branches.

    Fuse: sum, global average pool, FC bottleneck, FC to three logit vectors.
    Select: softmax across branches per channel, weighted sum of branches.
    """

    def __init__(self, channels, reduction=8, branches=3):
        super().__init__()
        self.branches = branches
        self.fc1 = nn.Linear(channels, channels // reduction)
        self.fc2 = nn.Linear(channels // reduction, channels * branches)

    def attention(self, feats):
        u = torch.stack(feats, 0).sum(0)
        s = u.mean(dim=(2, 3))
        z = _act(self.fc1(s))
        logits = self.fc2(z).view(s.shape[0], self.branches, s.shape[1])
        return torch.softmax(logits, dim=1)

    def forward(self, feats, return_attention=False):
        if len(feats) != self.branches or len({f.shape for f in feats}) != 1:
            raise ValueError("SFFB expects three feature maps of equal shape")
        a = self.attention(feats)
        out = sum(a[:, i, :, None, None] * f for i, f in enumerate(feats))
        if return_attention:
            return out, a
        return out


class SumFusion(nn.Module):
    def forward(self, feats):
        return torch.stack(feats, 0).sum(0)


class ConcatFusion(nn.Module):
    def __init__(self, channels, branches=3):
        super().__init__()
        self.proj = nn.Conv2d(channels * branches, channels, kernel_size=1)

    def forward(self, feats):
        return self.proj(torch.cat(feats, 1))


def make_fusion(config):
    if config.fusion_mode == "sffb":
        return SFFB(config.channels, config.sffb_reduction)
    if config.fusion_mode == "summation":
        return SumFusion()
    return ConcatFusion(config.channels)


class PSFB(nn.Module):
    """One progressive fusion step; output shapes equal input shapes."""

    def __init__(self, config):
        super().__init__()
        n = config.channels
        self.shared = config.share_branch_convs
        copies = 1 if self.shared else 3
        self.conv1 = nn.ModuleList(conv3x3(n, n) for _ in range(copies))
        self.conv2 = nn.ModuleList(conv3x3(2 * n, n) for _ in range(copies))
        self.fuse = make_fusion(config)

    def _conv(self, convs, i, x):
        return convs[0 if self.shared else i](x)

    def forward(self, feats):
        f1 = [_act(self._conv(self.conv1, i, f)) for i, f in enumerate(feats)]
        f2 = self.fuse(f1)
        return [self._conv(self.conv2, i, torch.cat([f2, f], 1)) + f0
                for i, (f, f0) in enumerate(zip(f1, feats))]


class FusionNetwork(nn.Module):
    def __init__(self, config):
        super().__init__()
        self.config = config
        self.extract = conv3x3(config.in_channels, config.channels)
        blocks = config.num_psfb if config.enable_psfb_stack else 0
        self.blocks = nn.ModuleList(PSFB(config) for _ in range(blocks))

    def extract_features(self, xs):
        for x in xs:
            if x.shape[1] != self.config.in_channels:
                raise ConfigurationError(
                    f"input has {x.shape[1]} channels, network expects {self.config.in_channels}")
        return [_act(self.extract(x)) for x in xs]

    def forward(self, x1, x2, x3):
        """Return ``(z0, reference_feature)``."""
        feats = self.extract_features([x1, x2, x3])
        ref = feats[1]
        out = feats
        for block in self.blocks:
            out = block(out)
        tail = ref if self.config.z0_reference == "extracted" else out[1]
        return torch.cat([*out, tail], 1), ref


class ChannelAttention(nn.Module):
    def __init__(self, channels, reduction):
        super().__init__()
        hidden = max(1, channels // reduction)
        self.fc1 = nn.Conv2d(channels, hidden, kernel_size=1)
        self.fc2 = nn.Conv2d(hidden, channels, kernel_size=1)

    def forward(self, x):
        s = x.mean(dim=(2, 3), keepdim=True)
        return torch.sigmoid(self.fc2(_act(self.fc1(s))))


class SpatialAttention(nn.Module):
    def __init__(self, kernel_size=7):
        super().__init__()
        self.conv = nn.Conv2d(2, 1, kernel_size, padding=kernel_size // 2)

    def forward(self, x):
        pooled = torch.cat([x.mean(1, keepdim=True), x.amax(1, keepdim=True)], 1)
        return torch.sigmoid(self.conv(pooled))


class DAB(nn.Module):
    """Dual attention: channel- and spatially-gated trunk, merged by a 1×1 conv."""

    def __init__(self, channels, reduction=8, spatial_kernel=7):
        super().__init__()
        self.conv1 = conv3x3(channels, channels)
        self.conv2 = conv3x3(channels, channels)
        self.ca = ChannelAttention(channels, reduction)
        self.sa = SpatialAttention(spatial_kernel)
        self.merge = nn.Conv2d(2 * channels, channels, kernel_size=1)

    def trunk(self, x):
        return self.conv2(_act(self.conv1(x)))

    def gates(self, x):
        t = self.trunk(x)
        return t, self.ca(t), self.sa(t)

    def forward(self, x):
        t, ca, sa = self.gates(x)
        return self.merge(torch.cat([t * sa, t * ca], 1))


class TrunkOnly(nn.Module):
    """DAB with the attention branches removed (the "w/o DAB" ablation)."""

    def __init__(self, channels):
        super().__init__()
        self.conv1 = conv3x3(channels, channels)
        self.conv2 = conv3x3(channels, channels)

    def forward(self, x):
        return self.conv2(_act(self.conv1(x)))


class RDAB(nn.Module):
    def __init__(self, channels, reduction=8, spatial_kernel=7, use_attention=True):
        super().__init__()
        if use_attention:
            self.body = DAB(channels, reduction, spatial_kernel)
        else:
            self.body = TrunkOnly(channels)

    def forward(self, x):
        return x + self.body(x)


class ReconstructionNetwork(nn.Module):
    def __init__(self, config):
        super().__init__()
        n = config.channels
        self.config = config
        self.head = conv3x3(4 * n, n)
        self.blocks = nn.ModuleList(
            RDAB(n, config.dab_reduction, config.spatial_kernel, config.enable_dab)
            for _ in range(config.num_rdab))
        self.tail1 = conv3x3(n, n)
        self.tail2 = conv3x3(n, n)
        self.out = conv3x3(n, 3)

    def forward(self, z0, reference):
        r0 = _act(self.head(z0))
        r = r0
        for block in self.blocks:
            r = block(r)
        if self.config.enable_local_skip:
            r = r + r0
        if self.config.enable_global_skip:
            r = r + reference
        r = _act(self.tail1(r))
        r = _act(self.tail2(r))
        return torch.sigmoid(self.out(r))


class PSFNet(nn.Module):
    def __init__(self, config=None):
        super().__init__()
        self.config = config or ModelConfig()
        self.fusion = FusionNetwork(self.config)
        self.reconstruction = ReconstructionNetwork(self.config)
        with torch.no_grad():
            self.reconstruction.out.weight.mul_(0.1)

    def forward(self, x1, x2, x3):
        z0, ref = self.fusion(x1, x2, x3)
        return self.reconstruction(z0, ref)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model, **extra):
    """Write config + parameters (+ optional training state) to ``path``."""
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "model_config": model.config.to_dict(),
        "state_dict": {k: v.detach().cpu() for k, v in model.state_dict().items()},
    }
    payload.update(extra)
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    torch.save(payload, tmp)
    tmp.replace(path)


def read_checkpoint(path):
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    try:
        payload = torch.load(path, map_location="cpu", weights_only=True)
    except Exception as exc:
        raise ConfigurationError(f"{path}: not a readable checkpoint ({exc})") from None
    if not isinstance(payload, dict) or payload.get("format") != CHECKPOINT_FORMAT:
        raise ConfigurationError(f"{path}: not a PSFNet checkpoint")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ConfigurationError(f"{path}: unsupported checkpoint version {payload.get('version')}")
    return payload


def load_checkpoint(path, expected_config=None):
    """Rebuild the model stored at ``path``.

    Raises :class:`ConfigurationError` if ``expected_config`` differs from the
    stored one or the tensors do not fit the stored architecture.
    """
    payload = read_checkpoint(path)
    config = ModelConfig.from_dict(payload["model_config"])
    if expected_config is not None and expected_config != config:
        diff = {k: (v, getattr(config, k)) for k, v in expected_config.to_dict().items()
                if getattr(config, k) != v}
        raise ConfigurationError(f"{path}: config mismatch (expected, stored): {diff}")
    model = PSFNet(config)
    try:
        model.load_state_dict(payload["state_dict"], strict=True)
    except RuntimeError as exc:
        raise ConfigurationError(f"{path}: parameters do not match config: {exc}") from None
    model.eval()
    return model, payload
