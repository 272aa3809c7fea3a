"""Synthetic phantoms: a clean image, a smooth coil-like gain, Rician noise."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DataError
from .lattice import LatticeDims

DEFAULT_GAIN = (0.3, 1.0)
DEFAULT_NOISE_FRACTION = 0.05


@dataclass(frozen=True)
class BiasParams:
    center: tuple[float, float]
    sigma: float
    gain_max: float = DEFAULT_GAIN[1]
    gain_min: float = DEFAULT_GAIN[0]

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma > 0):
            raise ConfigError(f"bias sigma must be > 0, got {self.sigma}")
        if not self.gain_max > 0:
            raise ConfigError(f"gain_max must be > 0, got {self.gain_max}")
        if not (0 < self.gain_min <= self.gain_max):
            raise ConfigError(
                f"gain_min must lie in (0, gain_max={self.gain_max}], got {self.gain_min}"
            )

    @classmethod
    def coil_below(cls, dims: LatticeDims, **kwargs) -> "BiasParams":
        """Gain peaking at the bottom-centre pixel, decaying over half the height."""
        kwargs.setdefault("center", ((dims.width - 1) / 2.0, dims.height - 1.0))
        kwargs.setdefault("sigma", dims.height / 2.0)
        return cls(**kwargs)


@dataclass(frozen=True)
class NoiseParams:
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if not (np.isfinite(self.sigma) and self.sigma >= 0):
            raise ConfigError(f"noise sigma must be >= 0, got {self.sigma}")


def gaussian_bias_field(dims: LatticeDims, p: BiasParams) -> np.ndarray:
    """``gain_min + (gain_max - gain_min) * exp(-d^2 / 2 sigma^2)`` around ``p.center``."""
    yy, xx = np.mgrid[0 : dims.height, 0 : dims.width].astype(float)
    cx, cy = p.center
    d2 = (xx - cx) ** 2 + (yy - cy) ** 2
    return p.gain_min + (p.gain_max - p.gain_min) * np.exp(-d2 / (2.0 * p.sigma**2))


def _pixel_normals(n: int, seed: int):
    # Philox is counter-based: pixel i always consumes raw words 2i and 2i+1,
    # so its draws depend only on (seed, i).
    bitgen = np.random.Philox(key=int(seed) & 0xFFFFFFFFFFFFFFFF)
    raw = bitgen.random_raw(2 * n).reshape(n, 2)
    u1 = ((raw[:, 0] >> np.uint64(11)).astype(float) + 1.0) * 2.0**-53
    u2 = (raw[:, 1] >> np.uint64(11)).astype(float) * 2.0**-53
    r = np.sqrt(-2.0 * np.log(u1))
    return r * np.cos(2.0 * np.pi * u2), r * np.sin(2.0 * np.pi * u2)


def apply_rician_noise(img, n: NoiseParams) -> np.ndarray:
    """Magnitude of the image plus complex Gaussian noise of scale ``n.sigma``."""
    img = np.asarray(img, dtype=float)
    if not np.all(np.isfinite(img)):
        raise DataError("image contains non-finite values")
    if np.any(img < 0):
        raise DataError("image contains negative intensities")
    if n.sigma == 0:
        return img.copy()
    g1, g2 = _pixel_normals(img.size, n.seed)
    re = img.ravel() + n.sigma * g1
    im = n.sigma * g2
    return np.sqrt(re * re + im * im).reshape(img.shape)


def make_synthetic_phantom(clean, bp: BiasParams, noise: NoiseParams):
    """Corrupt ``clean`` with a Gaussian-decay gain and Rician noise.

    Returns ``(observed, truth, true_bias)``.  ``true_bias`` is rescaled to
    mean one and ``truth`` absorbs the factor, so ``truth * true_bias``
    is the noise-free observation.
    """
    clean = np.asarray(clean, dtype=float)
    dims = LatticeDims.of(clean)
    if not np.all(np.isfinite(clean)) or np.any(clean < 0):
        raise DataError("clean image must be finite and nonnegative")
    bias = gaussian_bias_field(dims, bp)
    observed = apply_rician_noise(clean * bias, noise)
    scale = float(np.mean(bias))
    return observed, clean * scale, bias / scale


@dataclass(frozen=True)
class ProstateCard:
    """Procedural prostate-like section: two nested ellipses over tissue."""

    background: float = 0.3
    gland: float = 1.0
    central: float = 0.6

    def render(self, dims: LatticeDims) -> np.ndarray:
        h, w = dims.shape
        yy, xx = np.mgrid[0:h, 0:w].astype(float)
        cx, cy = (w - 1) / 2.0, 0.45 * (h - 1)
        img = np.full((h, w), self.background)
        outer = ((xx - cx) / (0.36 * w)) ** 2 + ((yy - cy) / (0.28 * h)) ** 2 <= 1.0
        inner = ((xx - cx) / (0.18 * w)) ** 2 + ((yy - cy) / (0.13 * h)) ** 2 <= 1.0
        img[outer] = self.gland
        img[inner] = self.central
        return img

    def rois(self, dims: LatticeDims) -> dict[str, tuple[int, int, int, int]]:
        """ROIs as ``name -> (x, y, w, h)`` lying inside uniform regions.

        ``signal`` sits in the outer ring below the central ellipse,
        ``background`` in the top-left tissue, ``homogeneous`` inside the
        central ellipse.
        """
        h, w = dims.shape
        cx, cy = (w - 1) / 2.0, 0.45 * (h - 1)

        def box(x0, x1, y0, y1):
            xa, ya = int(np.ceil(x0)), int(np.ceil(y0))
            return (xa, ya, max(int(np.floor(x1)) - xa, 1), max(int(np.floor(y1)) - ya, 1))

        return {
            "signal": box(cx - 0.1 * w, cx + 0.1 * w, cy + 0.16 * h, cy + 0.24 * h),
            "background": box(0.06 * w, 0.22 * w, 0.04 * h, 0.14 * h),
            "homogeneous": box(cx - 0.08 * w, cx + 0.08 * w, cy - 0.06 * h, cy + 0.06 * h),
        }


def render_test_card(dims: LatticeDims) -> np.ndarray:
    return ProstateCard().render(dims)


def default_noise_sigma(clean) -> float:
    """Five percent of the clean image's peak intensity."""
    return DEFAULT_NOISE_FRACTION * float(np.max(clean))
