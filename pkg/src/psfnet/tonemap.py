"""Mu-law range compression and the tone-mapped L1 objective."""
from dataclasses import dataclass

import numpy as np
import torch

from .errors import InvalidArgumentError, InvalidDataError

MU = 5000.0


@dataclass(frozen=True)
class TonemapParams:
    mu: float = MU

    def __post_init__(self):
        if not self.mu > 0:
            raise InvalidArgumentError(f"mu must be positive, got {self.mu}")


def mu_law(h, params=None):
    """``log(1 + mu*h) / log(1 + mu)`` for numpy arrays or torch tensors.

    Values above 1 are clamped to 1 first; negative values are rejected.
    """
    mu = (params or TonemapParams()).mu
    if isinstance(h, torch.Tensor):
        if (h < 0).any():
            raise InvalidDataError("mu_law input has negative values")
        return torch.log1p(mu * h.clamp(max=1.0)) / np.log1p(mu)
    h = np.asarray(h)
    if (h < 0).any():
        raise InvalidDataError("mu_law input has negative values")
    if not np.issubdtype(h.dtype, np.floating):
        h = h.astype(np.float64)
    return np.log1p(mu * np.minimum(h, 1.0)) / np.log1p(mu)


def tonemapped_l1(pred, target, params=None):
    """Mean absolute difference between mu-law mapped prediction and target."""
    if tuple(pred.shape) != tuple(target.shape):
        raise InvalidArgumentError(f"shape mismatch {tuple(pred.shape)} vs {tuple(target.shape)}")
    diff = mu_law(pred, params) - mu_law(target, params)
    if isinstance(diff, torch.Tensor):
        return diff.abs().mean()
    return float(np.abs(diff).mean())


class TonemappedL1Loss(torch.nn.Module):
    def __init__(self, mu=MU):
        super().__init__()
        self.params = TonemapParams(mu)

    def forward(self, pred, target):
        return tonemapped_l1(pred, target, self.params)
