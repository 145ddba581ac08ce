"""Multi-exposure HDR reconstruction with progressive and selective feature fusion."""

__version__ = "0.1.0"

from .data import LdrBracket, NetworkInput, PatchSpec, SceneSample  # noqa: E402
from .model import ModelConfig, PSFNet  # noqa: E402
from .tonemap import TonemapParams, mu_law, tonemapped_l1  # noqa: E402
