"""Weak and strong stochastic augmentation.

Image samples (``h x w`` grids) get reflect-pad-and-crop plus horizontal
flips; flat feature vectors get additive Gaussian noise. The strong policy
adds multiplicative intensity jitter and a cutout patch filled with the
dataset mean. It stands in for RandAugment + Cutout at toy scale.
"""

from dataclasses import dataclass, replace

import numpy as np

from .errors import ConfigError


@dataclass(frozen=True)
class AugmentPolicy:
    kind: str = "weak"
    noise_sigma: float = 0.0
    shift_max: int = 0
    flip_prob: float = 0.0
    cutout_frac: float = 0.0
    jitter_scale: float = 0.0
    # dataset statistics used by the strong stage
    fill_value: float = 0.0
    value_range: tuple = None

    def __post_init__(self):
        if self.kind not in ("weak", "strong"):
            raise ConfigError(f"unknown augmentation kind {self.kind!r}", key="kind")
        for name in ("flip_prob", "cutout_frac"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1], got {v}", key=name)
        for name in ("noise_sigma", "jitter_scale"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name} must be nonnegative", key=name)
        if self.shift_max < 0:
            raise ConfigError("shift_max must be nonnegative", key="shift_max")
        if self.kind == "weak" and (self.cutout_frac or self.jitter_scale):
            raise ConfigError("weak policy must have cutout_frac == 0 and jitter_scale == 0")

    def weak(self):
        return replace(self, kind="weak", cutout_frac=0.0, jitter_scale=0.0)


def default_policies(samples, shift_max=2, flip_prob=0.5, noise_scale=0.05,
                     jitter_scale=0.3, cutout_frac=0.25):
    """Build the (weak, strong) pair from a dataset's statistics.

    Noise sigma is ``noise_scale`` times the mean per-feature standard deviation.
    """
    samples = np.asarray(samples, dtype=np.float64)
    flat = samples.reshape(len(samples), -1)
    sigma = float(noise_scale * flat.std(axis=0).mean()) if len(flat) else 0.0
    stats = dict(fill_value=float(flat.mean()) if flat.size else 0.0,
                 value_range=(float(flat.min()), float(flat.max())) if flat.size else None)
    weak = AugmentPolicy("weak", noise_sigma=sigma, shift_max=shift_max,
                         flip_prob=flip_prob, **stats)
    strong = AugmentPolicy("strong", noise_sigma=sigma, shift_max=shift_max,
                           flip_prob=flip_prob, cutout_frac=cutout_frac,
                           jitter_scale=jitter_scale, **stats)
    return weak, strong


def _pad_crop(images, shifts, pad):
    """Reflect-pad every image by ``pad`` and crop it back at offset ``shifts[i]``."""
    n, h, w = images.shape
    padded = np.pad(images, ((0, 0), (pad, pad), (pad, pad)), mode="reflect")
    rows = pad + shifts[:, 0, None] + np.arange(h)
    cols = pad + shifts[:, 1, None] + np.arange(w)
    return padded[np.arange(n)[:, None, None], rows[:, :, None], cols[:, None, :]]


def _weak_batch(x, rng, policy):
    n = x.shape[0]
    if x.ndim == 3:
        flips = rng.random(n) < policy.flip_prob if policy.flip_prob > 0 else np.zeros(n, bool)
        out = x.copy()
        s = policy.shift_max
        if s > 0:
            # reflect padding needs pad < side length
            pad = min(s, x.shape[1] - 1, x.shape[2] - 1)
            shifts = rng.integers(-pad, pad + 1, size=(n, 2))
            out = _pad_crop(x, shifts, pad)
        out[flips] = out[flips, :, ::-1]
        return out
    out = x.copy()
    if policy.noise_sigma > 0:
        out = out + rng.normal(0.0, policy.noise_sigma, size=out.shape)
    return out


def _cutout_batch(x, rng, frac, fill):
    n = x.shape[0]
    if x.ndim == 3:
        h, w = x.shape[1:]
        side = int(round(np.sqrt(frac) * min(h, w)))
        if side == 0:
            return x
        tops = rng.integers(0, h - side + 1, size=n)[:, None, None]
        lefts = rng.integers(0, w - side + 1, size=n)[:, None, None]
        yy, xx = np.arange(h)[None, :, None], np.arange(w)[None, None, :]
        patch = (yy >= tops) & (yy < tops + side) & (xx >= lefts) & (xx < lefts + side)
        x[patch] = fill
        return x
    d = x.shape[1]
    # a segment shorter than one feature is dropped rather than rounded up
    length = int(np.floor(frac * d + 1e-9))
    if length == 0:
        return x
    starts = rng.integers(0, d - length + 1, size=n)[:, None]
    cols = np.arange(d)[None, :]
    x[(cols >= starts) & (cols < starts + length)] = fill
    return x


def augment_batch(x, rng, policy):
    """Augment a stack of samples ([n x d] vectors or [n x h x w] images)."""
    x = np.asarray(x, dtype=np.float64)
    out = _weak_batch(x, rng, policy)
    if policy.kind == "weak":
        return out
    if policy.jitter_scale > 0:
        u = rng.uniform(-policy.jitter_scale, policy.jitter_scale,
                        size=(out.shape[0],) + (1,) * (out.ndim - 1))
        out = out * (1.0 + u)
        if policy.value_range is not None:
            out = np.clip(out, *policy.value_range)
    if policy.cutout_frac > 0:
        out = _cutout_batch(out, rng, policy.cutout_frac, policy.fill_value)
    return out


def weak_augment(x, rng, policy):
    return augment_batch(np.asarray(x)[None], rng, policy.weak())[0]


def strong_augment(x, rng, policy):
    if policy.kind != "strong":
        policy = replace(policy, kind="strong")
    return augment_batch(np.asarray(x)[None], rng, policy)[0]
