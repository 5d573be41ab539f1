"""Seeded in-place augmentations for echo profiles and model windows.

Every function accepts either an :class:`EchoProfile` or an array whose last
two axes are (pixels, columns), and returns the same kind. Randomness comes
only from ``cfg.seed``, so repeated calls give bit-identical results.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .echo import EchoProfile
from .errors import ParameterError


@dataclass(frozen=True)
class AugmentConfig:
    pixel_noise_range: float = 0.05
    pixel_noise_prob: float = 0.8
    vshift_max: int = 3
    hshift_frac: float = 0.13
    hshift_prob: float = 0.8
    seed: int = 0

    def __post_init__(self):
        for name in ("pixel_noise_prob", "hshift_prob"):
            if not 0 <= getattr(self, name) <= 1:
                raise ParameterError(f"{name} must lie in [0, 1]")
        if self.pixel_noise_range < 0 or self.vshift_max < 0 or self.hshift_frac < 0:
            raise ParameterError("augmentation ranges must be >= 0")

    def for_item(self, index: int) -> "AugmentConfig":
        """Config with a seed derived for the ``index``-th item of a batch."""
        seed = int(np.random.SeedSequence([self.seed, index]).generate_state(1, np.uint64)[0])
        return replace(self, seed=seed)


def _unpack(p):
    if isinstance(p, EchoProfile):
        return np.stack([p.original, p.differential])
    return np.asarray(p, dtype=np.float64)


def _repack(template, arr):
    if isinstance(template, EchoProfile):
        return EchoProfile(arr[0], arr[1], template.frame_period, template.start_frame_index, template.start_time)
    return arr


def shift_axis(arr: np.ndarray, s: int, axis: int) -> np.ndarray:
    """Shift by ``s`` along ``axis`` towards higher indices, zero-filling."""
    out = np.zeros_like(arr)
    n = arr.shape[axis]
    if abs(s) >= n:
        return out
    src = [slice(None)] * arr.ndim
    dst = [slice(None)] * arr.ndim
    if s >= 0:
        src[axis], dst[axis] = slice(0, n - s), slice(s, n)
    else:
        src[axis], dst[axis] = slice(-s, n), slice(0, n + s)
    out[tuple(dst)] = arr[tuple(src)]
    return out


def pixel_noise(p, cfg: AugmentConfig = AugmentConfig()):
    """Scale each pixel by (1 + u), u ~ U[-r, r], independently with probability ``pixel_noise_prob``."""
    arr = _unpack(p)
    rng = np.random.default_rng(cfg.seed)
    hit = rng.random(arr.shape) < cfg.pixel_noise_prob
    u = rng.uniform(-cfg.pixel_noise_range, cfg.pixel_noise_range, arr.shape)
    return _repack(p, np.where(hit, arr * (1.0 + u), arr))


def draw_vshift(cfg: AugmentConfig) -> int:
    rng = np.random.default_rng(cfg.seed)
    return int(rng.integers(-cfg.vshift_max, cfg.vshift_max + 1))


def vertical_shift(p, cfg: AugmentConfig = AugmentConfig(), shift: int | None = None):
    """Shift all channels along the range axis by one shared random integer."""
    arr = _unpack(p)
    s = draw_vshift(cfg) if shift is None else int(shift)
    return _repack(p, shift_axis(arr, s, axis=-2))


def max_hshift(width: int, cfg: AugmentConfig = AugmentConfig()) -> int:
    return int(round(cfg.hshift_frac * width))


def draw_hshift(width: int, cfg: AugmentConfig) -> int:
    rng = np.random.default_rng(cfg.seed)
    if rng.random() >= cfg.hshift_prob:
        return 0
    m = max_hshift(width, cfg)
    return int(rng.integers(-m, m + 1))


def horizontal_shift(p, cfg: AugmentConfig = AugmentConfig(), shift: int | None = None):
    """Shift along time (columns); meant for classification windows."""
    arr = _unpack(p)
    s = draw_hshift(arr.shape[-1], cfg) if shift is None else int(shift)
    return _repack(p, shift_axis(arr, s, axis=-1))


def augment(p, cfg: AugmentConfig = AugmentConfig(), classification: bool = False):
    """Pixel noise then vertical shift, plus horizontal shift for classification."""
    sub = np.random.SeedSequence(cfg.seed).generate_state(3, np.uint64)
    out = pixel_noise(p, replace(cfg, seed=int(sub[0])))
    out = vertical_shift(out, replace(cfg, seed=int(sub[1])))
    if classification:
        out = horizontal_shift(out, replace(cfg, seed=int(sub[2])))
    return out
