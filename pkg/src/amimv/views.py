"""View construction for pretraining batches.

Every image contributes two views: a deterministic z-score-normalized
view, and a stochastically augmented view (color jitter, random resized
crop, horizontal flip, Gaussian blur). Batches pair each anchor with a
distinct counterpart image through a random derangement.

All randomness flows through counter-based substreams keyed by
(epoch, batch, item, transform), so results are independent of
evaluation order.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .tensor import Tensor

LUMA_WEIGHTS = np.array([0.299, 0.587, 0.114])


@dataclass
class AugmentConfig:
    """Augmentation recipe; defaults follow the pretraining setup."""

    jitter_brightness: float = 0.1
    jitter_contrast: float = 0.1
    jitter_saturation: float = 0.1
    jitter_hue: float = 0.01
    jitter_probability: float = 0.8
    crop_output: int = 64
    crop_scale: tuple[float, float] = (0.2, 1.0)
    crop_aspect: tuple[float, float] = (3 / 4, 4 / 3)
    flip_probability: float = 0.5
    blur_kernel: int = 3
    blur_sigma: tuple[float, float] = (0.1, 1.0)
    blur_probability: float = 1.0
    standardize_augmented: bool = True

    def __post_init__(self):
        for p in (self.jitter_probability, self.flip_probability, self.blur_probability):
            if not 0.0 <= p <= 1.0:
                raise ValidationError(f"probability {p} outside [0,1]")
        for lo, hi in (self.crop_scale, self.crop_aspect, self.blur_sigma):
            if lo > hi:
                raise ValidationError(f"range ({lo}, {hi}) is not ordered")
        if self.crop_output < 1:
            raise ValidationError("crop_output must be >= 1")
        if self.blur_kernel % 2 == 0:
            raise ValidationError(f"blur kernel must be odd, got {self.blur_kernel}")


@dataclass
class AMIMVBatch:
    """Four view tensors plus the anchor-to-counterpart permutation."""

    v1n: Tensor
    v1a: Tensor
    v2n: Tensor
    v2a: Tensor
    pairing: np.ndarray


class RngStream:
    """Counter-based substreams: same key, same draws, any order."""

    def __init__(self, seed: int):
        self.seed = int(seed)

    def generator(self, *key: int) -> np.random.Generator:
        payload = struct.pack(f"<{len(key) + 1}q", self.seed, *[int(k) for k in key])
        digest = hashlib.blake2b(payload, digest_size=16).digest()
        words = struct.unpack("<2Q", digest)
        return np.random.Generator(np.random.Philox(key=words))


# ---------------------------------------------------------------------------
# primitive image transforms (float arrays in [0,1], shape [H,W,C])


def bilinear_resize(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Half-pixel-center bilinear resampling; identity at equal sizes."""
    h, w, _ = img.shape
    if (h, w) == (out_h, out_w):
        return img
    ys = (np.arange(out_h) + 0.5) * h / out_h - 0.5
    xs = (np.arange(out_w) + 0.5) * w / out_w - 0.5
    y0 = np.clip(np.floor(ys).astype(int), 0, h - 1)
    x0 = np.clip(np.floor(xs).astype(int), 0, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = np.clip(ys - y0, 0.0, 1.0)[:, None, None]
    wx = np.clip(xs - x0, 0.0, 1.0)[None, :, None]
    top = img[y0][:, x0] * (1 - wx) + img[y0][:, x1] * wx
    bot = img[y1][:, x0] * (1 - wx) + img[y1][:, x1] * wx
    return top * (1 - wy) + bot * wy


def gaussian_kernel(sigma: float, k: int) -> np.ndarray:
    """Normalized k x k Gaussian weights over integer offsets."""
    if k % 2 == 0:
        raise ValidationError(f"kernel size must be odd, got {k}")
    if sigma <= 0:
        raise ValidationError(f"sigma must be positive, got {sigma}")
    r = k // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    one_d = np.exp(-(ax**2) / (2.0 * sigma**2))
    kern = np.outer(one_d, one_d)
    return kern / kern.sum()


def gaussian_blur(img: np.ndarray, sigma: float, k: int) -> np.ndarray:
    """Separable Gaussian blur with reflect padding."""
    r = k // 2
    ax = np.arange(-r, r + 1, dtype=np.float64)
    w1 = np.exp(-(ax**2) / (2.0 * sigma**2))
    w1 = w1 / w1.sum()
    padded = np.pad(img, ((r, r), (0, 0), (0, 0)), mode="reflect")
    out = sum(w1[i] * padded[i : i + img.shape[0]] for i in range(k))
    padded = np.pad(out, ((0, 0), (r, r), (0, 0)), mode="reflect")
    return sum(w1[i] * padded[:, i : i + img.shape[1]] for i in range(k))


def _rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    mx = rgb.max(axis=-1)
    mn = rgb.min(axis=-1)
    diff = mx - mn
    safe = np.where(diff > 0, diff, 1.0)
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    h = np.zeros_like(mx)
    h = np.where(mx == r, ((g - b) / safe) % 6.0, h)
    h = np.where(mx == g, (b - r) / safe + 2.0, h)
    h = np.where(mx == b, (r - g) / safe + 4.0, h)
    h = np.where(diff > 0, h / 6.0, 0.0)
    s = np.where(mx > 0, diff / np.where(mx > 0, mx, 1.0), 0.0)
    return np.stack([h, s, mx], axis=-1)


def _hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0] % 1.0, hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0).astype(int) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1 - s)
    q = v * (1 - f * s)
    t = v * (1 - (1 - f) * s)
    choices = np.stack(
        [
            np.stack([v, t, p], -1), np.stack([q, v, p], -1), np.stack([p, v, t], -1),
            np.stack([p, q, v], -1), np.stack([t, p, v], -1), np.stack([v, p, q], -1),
        ],
        axis=0,
    )
    return np.take_along_axis(choices, i[None, ..., None], axis=0)[0]


def adjust_brightness(img: np.ndarray, factor: float) -> np.ndarray:
    return np.clip(img * factor, 0.0, 1.0)


def adjust_contrast(img: np.ndarray, factor: float) -> np.ndarray:
    if img.shape[-1] == 3:
        mean = float((img @ LUMA_WEIGHTS).mean())
    else:
        mean = float(img.mean())
    return np.clip(mean + factor * (img - mean), 0.0, 1.0)


def adjust_saturation(img: np.ndarray, factor: float) -> np.ndarray:
    if img.shape[-1] != 3:
        return img
    gray = (img @ LUMA_WEIGHTS)[..., None]
    return np.clip(gray + factor * (img - gray), 0.0, 1.0)


def adjust_hue(img: np.ndarray, delta_turns: float) -> np.ndarray:
    if img.shape[-1] != 3:
        return img
    hsv = _rgb_to_hsv(img)
    hsv[..., 0] = (hsv[..., 0] + delta_turns) % 1.0
    return np.clip(_hsv_to_rgb(hsv), 0.0, 1.0)


# ---------------------------------------------------------------------------
# view pipelines


def _to_float_hwc(image: np.ndarray) -> np.ndarray:
    x = image.astype(np.float64) / 255.0
    if x.ndim == 2:
        x = x[..., None]
    return x


def _standardize_chw(x_hwc: np.ndarray, stats) -> np.ndarray:
    mean, std = stats
    out = (x_hwc - np.asarray(mean)) / np.asarray(std)
    return out.transpose(2, 0, 1)


def normalize_view(image: np.ndarray, stats, output_size: int) -> Tensor:
    """Rescale to [0,1], resize, and z-score with train statistics."""
    x = _to_float_hwc(image)
    x = bilinear_resize(x, output_size, output_size)
    return Tensor(_standardize_chw(x, stats), dtype=np.float32)


def _sample_crop(rng: np.random.Generator, h: int, w: int, config: AugmentConfig):
    area = h * w
    for _ in range(10):
        frac = rng.uniform(*config.crop_scale)
        log_lo, log_hi = np.log(config.crop_aspect[0]), np.log(config.crop_aspect[1])
        aspect = np.exp(rng.uniform(log_lo, log_hi))
        target = frac * area
        cw = int(round(np.sqrt(target * aspect)))
        ch = int(round(np.sqrt(target / aspect)))
        if 0 < cw <= w and 0 < ch <= h:
            top = int(rng.integers(0, h - ch + 1))
            left = int(rng.integers(0, w - cw + 1))
            return top, left, ch, cw
    # fallback: center crop of the largest in-range square
    side = min(h, w)
    return (h - side) // 2, (w - side) // 2, side, side


def augment_view(image: np.ndarray, stats, config: AugmentConfig, rng: np.random.Generator) -> Tensor:
    """Apply jitter, random resized crop, flip, and blur, then standardize.

    Draws happen in a fixed order regardless of which transforms fire, so
    one substream yields reproducible output.
    """
    x = _to_float_hwc(image)

    # 1. color jitter (all four sub-transforms, random order, gated by p)
    apply_jitter = rng.uniform() < config.jitter_probability
    fb = rng.uniform(1 - config.jitter_brightness, 1 + config.jitter_brightness)
    fc = rng.uniform(1 - config.jitter_contrast, 1 + config.jitter_contrast)
    fs = rng.uniform(1 - config.jitter_saturation, 1 + config.jitter_saturation)
    fh = rng.uniform(-config.jitter_hue, config.jitter_hue)
    order = rng.permutation(4)
    if apply_jitter:
        steps = [
            lambda im: adjust_brightness(im, fb),
            lambda im: adjust_contrast(im, fc),
            lambda im: adjust_saturation(im, fs),
            lambda im: adjust_hue(im, fh),
        ]
        for idx in order:
            x = steps[idx](x)

    # 2. random resized crop
    top, left, ch, cw = _sample_crop(rng, x.shape[0], x.shape[1], config)
    x = bilinear_resize(x[top : top + ch, left : left + cw], config.crop_output, config.crop_output)

    # 3. horizontal flip
    if rng.uniform() < config.flip_probability:
        x = x[:, ::-1]

    # 4. Gaussian blur
    sigma = rng.uniform(*config.blur_sigma)
    if rng.uniform() < config.blur_probability:
        x = gaussian_blur(np.ascontiguousarray(x), sigma, config.blur_kernel)

    if config.standardize_augmented:
        chw = _standardize_chw(x, stats)
    else:
        chw = np.ascontiguousarray(x).transpose(2, 0, 1)
    return Tensor(chw, dtype=np.float32)


def random_derangement(n: int, rng: np.random.Generator) -> np.ndarray:
    """Uniform random fixed-point-free permutation, by rejection."""
    if n < 2:
        raise ValidationError(f"derangement needs n >= 2, got {n}")
    while True:
        perm = rng.permutation(n)
        if not np.any(perm == np.arange(n)):
            return perm


def build_amimv_batch(
    images: np.ndarray,
    stats,
    config: AugmentConfig,
    rng: RngStream,
    epoch: int = 0,
    batch: int = 0,
) -> AMIMVBatch:
    """Emit the four per-image view tensors and the pairing permutation."""
    n = images.shape[0]
    if n < 2:
        raise ValidationError(f"an AMIMV batch needs >= 2 images, got {n}")
    pairing = random_derangement(n, rng.generator(epoch, batch, -1, 0))
    size = config.crop_output

    v1n = [normalize_view(images[i], stats, size) for i in range(n)]
    v1a = [augment_view(images[i], stats, config, rng.generator(epoch, batch, i, 1)) for i in range(n)]
    v2n = [normalize_view(images[pairing[i]], stats, size) for i in range(n)]
    v2a = [
        augment_view(images[pairing[i]], stats, config, rng.generator(epoch, batch, i, 2))
        for i in range(n)
    ]

    def stack(tensors):
        return Tensor(np.stack([t.data for t in tensors]), dtype=np.float32)

    return AMIMVBatch(v1n=stack(v1n), v1a=stack(v1a), v2n=stack(v2n), v2a=stack(v2a), pairing=pairing)
